"""The jerk family  x''' = -x' + eps^(N-1) P + eps^N Q + eps^(N+1) R.

In the coordinates (x, x', x'') = G(r, z, theta) = (sqrt(r) sin(theta) - z,
sqrt(r) cos(theta), -sqrt(r) sin(theta)) and with theta as the independent
variable, the equation is a 2*pi-periodic standard-form system in (r, z)
whose only non-zero fields sit at orders N-1 and N.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .averaging import check_H1, jerk_callable
from .expr import JERK_VARIABLES, parse_expr, substitute, to_string
from .ode import SectionSpec
from .sysdef import PlanarField, SystemDef, emit_config

DEFAULT_P = "-xd^3"
Q_H2 = (
    "xdd*(-x - xdd + (xd^2 + xdd^2 - 2)*(1 - (x + xdd)^2 - (xd^2 + xdd^2 - 2)^2))"
    " + 2*xdd^2*(xd^2 + xdd^2 - 2)"
)
DEFAULT_DOMAIN = ((0.5, 4.0), (-2.0, 2.0))
H1_GATE_TOL = 1e-6
R_VARIABLES = JERK_VARIABLES | {"eps"}

Expr = Union[str, Callable]


class H1Error(ValueError):
    pass


class DegeneratePointError(ValueError):
    pass


def P_cubic(x, xd, xdd):
    return -(xd**3)


def Q_h2(x, xd, xdd):
    w = xd * xd + xdd * xdd - 2.0
    s = x + xdd
    return xdd * (-x - xdd + w * (1.0 - s * s - w * w)) + 2.0 * xdd * xdd * w


@dataclass(frozen=True)
class JerkSpec:
    P: Expr = DEFAULT_P
    Q: Optional[Expr] = None  # None -> the closed form required by H2
    R: Optional[Expr] = None  # expression in x, xd, xdd, eps; None -> 0
    order: int = 5
    eps: float = 0.2
    _P: Callable = field(init=False, repr=False, compare=False)
    _Q: Callable = field(init=False, repr=False, compare=False)
    _R: Optional[Callable] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.order < 3:
            raise ValueError("the jerk family needs order N >= 3")
        if not self.eps >= 0:
            raise ValueError("eps must be non-negative")
        P = P_cubic if self.P == DEFAULT_P else jerk_callable(self.P)
        Q = Q_h2 if self.Q is None else jerk_callable(self.Q)
        object.__setattr__(self, "_P", P)
        object.__setattr__(self, "_Q", Q)
        object.__setattr__(self, "_R", None if self.R is None else _r_callable(self.R))

    def P_at(self, x, xd, xdd):
        return self._P(x, xd, xdd)

    def Q_at(self, x, xd, xdd):
        return self._Q(x, xd, xdd)

    def R_at(self, x, xd, xdd, eps):
        if self._R is None:
            return 0.0 * x
        return self._R(x, xd, xdd, eps)

    def with_eps(self, eps: float) -> "JerkSpec":
        return JerkSpec(self.P, self.Q, self.R, self.order, eps)


def _r_callable(R):
    if callable(R):
        return R
    from .expr import compile_expr

    func = compile_expr(parse_expr(R, R_VARIABLES))
    return lambda x, xd, xdd, eps: func({"x": x, "xd": xd, "xdd": xdd, "eps": eps})


def jerk_field(spec: JerkSpec) -> Callable:
    """(x, x', x'') -> (x', x'', -x' + eps^(N-1) P + eps^N Q + eps^(N+1) R), vectorised."""
    eps, N = spec.eps, spec.order
    a, b, c = eps ** (N - 1), eps**N, eps ** (N + 1)

    def f(t, s):
        s = np.asarray(s, dtype=float)
        x, xd, xdd = s[..., 0], s[..., 1], s[..., 2]
        jerk = -xd
        if a:
            jerk = jerk + a * spec.P_at(x, xd, xdd) + b * spec.Q_at(x, xd, xdd)
        if c and spec._R is not None:
            jerk = jerk + c * spec.R_at(x, xd, xdd, eps)
        return np.stack([xd, xdd, jerk], axis=-1)

    return f


# --------------------------------------------------------------------------
# coordinate change


def G(r, z, theta):
    sr = np.sqrt(r)
    return np.stack([sr * np.sin(theta) - z, sr * np.cos(theta), -sr * np.sin(theta)], axis=-1)


def G_inverse(s) -> tuple:
    """(x, x', x'') -> (r, z, theta)."""
    s = np.asarray(s, dtype=float)
    x, xd, xdd = s[..., 0], s[..., 1], s[..., 2]
    return xd * xd + xdd * xdd, -x - xdd, np.arctan2(-xdd, xd)


def _P_of_G(P, theta, x):
    r, z = x[..., 0], x[..., 1]
    sr = np.sqrt(r)
    st, ct = np.sin(theta), np.cos(theta)
    return sr, st, ct, P(sr * st - z, sr * ct, -sr * st)


def _check_r(x):
    if np.any(np.asarray(x)[..., 0] <= 0):
        raise DegeneratePointError("standard form requires r > 0")


def h1_gate(spec: JerkSpec, domain=DEFAULT_DOMAIN):
    """Run check_H1 over the amplitude range sqrt(r) of the domain."""
    (r0, r1), (z0, z1) = domain
    amps = np.sqrt(np.linspace(r0, r1, 5))
    return check_H1(spec.P_at, amps, np.linspace(z0, z1, 5))


def jerk_standard_form(spec: JerkSpec, domain=DEFAULT_DOMAIN, check_h1: bool = True) -> SystemDef:
    """The 2*pi-periodic system in (r, z) with theta as time.

    The remainder is the exact correction from dividing by d(theta)/dt, so
    ``full_field(eps)`` reproduces the jerk flow without truncation.
    """
    if check_h1:
        report = h1_gate(spec, domain)
        if report.max_violation > H1_GATE_TOL:
            raise H1Error(f"P violates H1 (max violation {report.max_violation:.3e})")
    N = spec.order

    def F_low(theta, x):
        _check_r(x)
        sr, st, _, p = _P_of_G(spec.P_at, theta, x)
        return np.stack([-2.0 * sr * p * st, -p + 0.0 * sr], axis=-1)

    def F_top(theta, x):
        _check_r(x)
        sr, st, _, q = _P_of_G(spec.Q_at, theta, x)
        return np.stack([-2.0 * sr * q * st, -q + 0.0 * sr], axis=-1)

    def remainder(theta, x, eps):
        _check_r(x)
        r, z = x[..., 0], x[..., 1]
        sr = np.sqrt(r)
        st, ct = np.sin(theta), np.cos(theta)
        args = (sr * st - z, sr * ct, -sr * st)
        W = spec.P_at(*args) + eps * spec.Q_at(*args) + eps**2 * spec.R_at(*args, eps)
        E = eps ** (N - 1) * W
        c = ct / sr
        extra = spec.R_at(*args, eps) + eps ** (N - 3) * c * W * W / (1.0 - c * E)
        return np.stack([-2.0 * sr * st * extra, -extra], axis=-1)

    fields = [None] * N
    fields[N - 2] = F_low
    fields[N - 1] = F_top
    return SystemDef(
        period=2 * np.pi,
        order=N,
        fields=tuple(fields),
        remainder=remainder,
        domain=tuple(domain),
        label=f"jerk standard form N={N}",
    )


def _expr_text(e, default: str) -> str:
    if e is None:
        return default
    if callable(e):
        raise TypeError("only expression strings can be emitted to a config document")
    return e


def emit_jerk_config(spec: JerkSpec, domain=DEFAULT_DOMAIN) -> str:
    """Config document for the standard form, fields written as expressions in t, x1, x2."""
    sub = {
        "x": parse_expr("sqrt(x1)*sin(t) - x2"),
        "xd": parse_expr("sqrt(x1)*cos(t)"),
        "xdd": parse_expr("-sqrt(x1)*sin(t)"),
    }

    def components(text):
        inner = to_string(substitute(parse_expr(text, JERK_VARIABLES), sub))
        return (f"-2*sqrt(x1)*({inner})*sin(t)", f"-({inner})")

    P_text = _expr_text(spec.P, DEFAULT_P)
    Q_text = _expr_text(spec.Q, Q_H2)
    N = spec.order
    fields = {N - 1: components(P_text), N: components(Q_text)}
    return emit_config("2*pi", N, fields, domain=domain, label=f"jerk standard form N={N}")


# --------------------------------------------------------------------------
# closed forms and the limiting torus


def fN_closed_form(r, z) -> np.ndarray:
    """The top averaged function 2*pi*(r(6 + z(1+2z) - r(11 + (r-6)r + z^2)), r(2-r))."""
    r = np.asarray(r, dtype=float)
    z = np.asarray(z, dtype=float)
    return 2 * np.pi * np.stack(
        [r * (6 + z * (1 + 2 * z) - r * (11 + (-6 + r) * r + z * z)), r * (2 - r)], axis=-1
    )


def guiding_closed_form() -> PlanarField:
    """f_N / (2*pi) with its analytic Jacobian."""

    def func(x):
        x = np.asarray(x, dtype=float)
        return fN_closed_form(x[..., 0], x[..., 1]) / (2 * np.pi)

    def jac(x):
        r, z = float(x[0]), float(x[1])
        return np.array(
            [
                [6 + z + 2 * z * z - 22 * r + 18 * r * r - 4 * r**3 - 2 * r * z * z, r * (1 + 4 * z) - 2 * r * r * z],
                [2 - 2 * r, 0.0],
            ]
        )

    return PlanarField(func, label="jerk guiding system", jacobian=jac)


def translated_guiding() -> PlanarField:
    """The guiding system divided by r and shifted by r = rho + 2."""

    def func(x):
        x = np.asarray(x, dtype=float)
        rho, z = x[..., 0], x[..., 1]
        return np.stack([rho + z - rho**3 - rho * z * z, -rho], axis=-1)

    def jac(x):
        rho, z = float(x[0]), float(x[1])
        return np.array([[1 - 3 * rho * rho - z * z, 1 - 2 * rho * z], [-1.0, 0.0]])

    return PlanarField(func, label="translated jerk guiding system", jacobian=jac)


def limiting_torus_point(a, theta) -> np.ndarray:
    """G(r, z, theta) with (r, z) = (2 + cos a, sin a)."""
    a = np.asarray(a, dtype=float)
    return G(2 + np.cos(a), np.sin(a), theta)


def limiting_torus_distance(point) -> np.ndarray:
    """| |(r - 2, z)| - 1 | with (r, z) = (x'^2 + x''^2, -x - x''): distance in the averaged plane."""
    s = np.asarray(point, dtype=float)
    if np.any((s[..., 1] == 0) & (s[..., 2] == 0)):
        raise DegeneratePointError("x' = x'' = 0 has no angle in the averaged plane")
    r, z, _ = G_inverse(s)
    out = np.abs(np.hypot(r - 2, z) - 1)
    return float(out) if out.ndim == 0 else out


# --------------------------------------------------------------------------
# sections of constant theta


def jerk_section(theta0: float = 0.0) -> SectionSpec:
    """The half-plane theta = theta0, crossed with theta increasing.

    For theta0 = 0 this is {x'' = 0, x' > 0} with in-section coordinates (x, x').
    """
    s, c = np.sin(theta0), np.cos(theta0)
    return SectionSpec(normal=(0.0, s, c), anchor=(0.0, 0.0, 0.0), direction=-1, branch=(0.0, c, -s))


def limiting_curve_section(section: SectionSpec, theta0: float = 0.0, n: int = 512) -> np.ndarray:
    """In-section polygon of the slice theta = theta0 of the limiting torus."""
    a = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
    return section.to_section(limiting_torus_point(a, theta0))


def equilibrium_seed(section: SectionSpec, theta0: float = 0.0) -> np.ndarray:
    """In-section image of the guiding equilibrium (r, z) = (2, 0)."""
    return section.to_section(G(2.0, 0.0, theta0))
