"""Adaptive Runge-Kutta integration with dense output, monodromy and section events.

The integrator is the Dormand-Prince 5(4) pair with Hairer's PI step-size
controller and the standard fourth-order continuous extension.  Right-hand
sides are callables ``fun(t, x)`` returning an array shaped like ``x``.
Fields passed to :func:`integrate_variational` without an analytic Jacobian
must accept a stack of states, ``x`` of shape ``(k, n)``, so finite-difference
stencils can be evaluated in one call.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional

import numpy as np

# Dormand-Prince 5(4) tableau
C2, C3, C4, C5 = 1 / 5, 3 / 10, 4 / 5, 8 / 9
A21 = 1 / 5
A31, A32 = 3 / 40, 9 / 40
A41, A42, A43 = 44 / 45, -56 / 15, 32 / 9
A51, A52, A53, A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
A61, A62, A63, A64, A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
A71, A73, A74, A75, A76 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
E1, E3, E4, E5, E6, E7 = (
    71 / 57600,
    -71 / 16695,
    71 / 1920,
    -17253 / 339200,
    22 / 525,
    -1 / 40,
)
D1, D3, D4, D5, D6, D7 = (
    -12715105075 / 11282082432,
    87487479700 / 32700410799,
    -10690763975 / 1880347072,
    701980252875 / 199316789632,
    -1453857185 / 822651844,
    69997945 / 29380423,
)

SAFETY = 0.9
FAC_MIN, FAC_MAX = 0.2, 10.0
BETA = 0.04
EXPO1 = 0.2 - 0.75 * BETA

SECTION_TOL = 1e-12
ARM_TOL = 1e-10


class IntegrationError(RuntimeError):
    pass


class StepLimitError(IntegrationError):
    pass


class EscapeError(IntegrationError):
    pass


class StepSizeError(IntegrationError):
    pass


class NoCrossingError(IntegrationError):
    pass


@dataclass(frozen=True)
class IntegratorConfig:
    rtol: float = 1e-10
    atol: float = 1e-12
    first_step: Optional[float] = None
    max_step: float = math.inf
    max_steps: int = 1_000_000
    escape_radius: float = 1e6

    def __post_init__(self):
        for name in ("rtol", "atol"):
            value = getattr(self, name)
            if not 0 < value <= 1e-2:
                raise ValueError(f"{name} must lie in (0, 1e-2], got {value}")
        if self.max_steps <= 0:
            raise ValueError("max_steps must be positive")
        if self.max_step <= 0:
            raise ValueError("max_step must be positive")

    def scaled(self, factor: float) -> "IntegratorConfig":
        """Same config with both tolerances multiplied by ``factor``."""
        return IntegratorConfig(
            rtol=self.rtol * factor,
            atol=self.atol * factor,
            first_step=self.first_step,
            max_step=self.max_step,
            max_steps=self.max_steps,
            escape_radius=self.escape_radius,
        )


DEFAULT_CONFIG = IntegratorConfig()


def _rms(v):
    return math.sqrt(float(np.dot(v, v)) / v.size)


class DormandPrince:
    """Single-trajectory stepper; call :meth:`step` until ``t == t_bound``."""

    def __init__(self, fun, t0: float, y0, t_bound: float, cfg: IntegratorConfig = DEFAULT_CONFIG):
        self.fun = fun
        self.cfg = cfg
        self.t = float(t0)
        self.y = np.array(y0, dtype=float).ravel()
        self.t_bound = float(t_bound)
        self.direction = 1.0 if t_bound >= t0 else -1.0
        self.f = self._eval(self.t, self.y)
        self.h_abs = cfg.first_step if cfg.first_step else self._initial_step()
        self.fac_old = 1e-4
        self.rejected = False
        self.n_steps = 0
        self.t_old = self.t
        self.y_old = self.y
        self.rcont = None

    def _eval(self, t, y):
        return np.asarray(self.fun(t, y), dtype=float).ravel()

    def _scale(self, y, y_new=None):
        a = np.abs(y) if y_new is None else np.maximum(np.abs(y), np.abs(y_new))
        return self.cfg.atol + self.cfg.rtol * a

    def _initial_step(self) -> float:
        sk = self._scale(self.y)
        d0 = _rms(self.y / sk)
        d1 = _rms(self.f / sk)
        h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
        h0 = min(h0, abs(self.t_bound - self.t)) or 1e-6
        y1 = self.y + self.direction * h0 * self.f
        f1 = self._eval(self.t + self.direction * h0, y1)
        d2 = _rms((f1 - self.f) / sk) / h0
        if max(d1, d2) <= 1e-15:
            h1 = max(1e-6, h0 * 1e-3)
        else:
            h1 = (0.01 / max(d1, d2)) ** 0.2
        return min(100 * h0, h1, self.cfg.max_step)

    @property
    def finished(self) -> bool:
        return self.direction * (self.t_bound - self.t) <= 0

    def step(self) -> None:
        """Advance one accepted step, updating t, y, t_old, y_old and rcont."""
        cfg = self.cfg
        t, y, f = self.t, self.y, self.f
        fun = self._eval
        while True:
            if self.n_steps >= cfg.max_steps:
                raise StepLimitError(f"step budget of {cfg.max_steps} exhausted at t={t:.6g}")
            h_abs = min(self.h_abs, cfg.max_step)
            if h_abs < 10 * np.spacing(max(abs(t), 1.0)):
                raise StepSizeError(f"step size underflow at t={t:.6g}")
            h = self.direction * h_abs
            t_new = t + h
            if self.direction * (t_new - self.t_bound) > 0:
                t_new = self.t_bound
                h = t_new - t
                h_abs = abs(h)
            k1 = f
            k2 = fun(t + C2 * h, y + h * (A21 * k1))
            k3 = fun(t + C3 * h, y + h * (A31 * k1 + A32 * k2))
            k4 = fun(t + C4 * h, y + h * (A41 * k1 + A42 * k2 + A43 * k3))
            k5 = fun(t + C5 * h, y + h * (A51 * k1 + A52 * k2 + A53 * k3 + A54 * k4))
            k6 = fun(t_new, y + h * (A61 * k1 + A62 * k2 + A63 * k3 + A64 * k4 + A65 * k5))
            y_new = y + h * (A71 * k1 + A73 * k3 + A74 * k4 + A75 * k5 + A76 * k6)
            k7 = fun(t_new, y_new)
            self.n_steps += 1
            err_vec = h * (E1 * k1 + E3 * k3 + E4 * k4 + E5 * k5 + E6 * k6 + E7 * k7)
            err = _rms(err_vec / self._scale(y, y_new))
            if not math.isfinite(err):
                self.h_abs = h_abs * 0.1
                self.rejected = True
                continue
            fac11 = err**EXPO1
            if err <= 1.0:
                fac = fac11 / self.fac_old**BETA
                fac = min(1 / FAC_MIN, max(1 / FAC_MAX, fac / SAFETY))
                h_next = h_abs / fac
                if self.rejected:
                    h_next = min(h_next, h_abs)
                self.fac_old = max(err, 1e-4)
                self.rejected = False
                break
            self.h_abs = h_abs / min(1 / FAC_MIN, fac11 / SAFETY)
            self.rejected = True

        ydiff = y_new - y
        bspl = h * k1 - ydiff
        self.rcont = np.stack(
            [
                y,
                ydiff,
                bspl,
                ydiff - h * k7 - bspl,
                h * (D1 * k1 + D3 * k3 + D4 * k4 + D5 * k5 + D6 * k6 + D7 * k7),
            ]
        )
        self.t_old, self.y_old = t, y
        self.t, self.y, self.f = t_new, y_new, k7
        self.h_abs = h_next
        if not np.all(np.isfinite(y_new)) or np.max(np.abs(y_new)) > cfg.escape_radius:
            raise EscapeError(f"state left the escape radius {cfg.escape_radius:g} at t={t_new:.6g}")

    def dense(self, t) -> np.ndarray:
        """Evaluate the continuous extension of the last step at ``t``."""
        return _contd5(self.rcont, (t - self.t_old) / (self.t - self.t_old))


def _contd5(rc, s):
    s1 = 1.0 - s
    return rc[0] + s * (rc[1] + s1 * (rc[2] + s * (rc[3] + s1 * rc[4])))


class Trajectory:
    """Accepted nodes of an integration together with per-step dense output.

    ``traj(t)`` evaluates the interpolant at a scalar or array of times inside
    the integration interval.  ``ts`` is strictly monotone (decreasing for
    backward integration).
    """

    def __init__(self, ts, xs, coeffs):
        self.ts = np.asarray(ts, dtype=float)
        self.xs = np.asarray(xs, dtype=float)
        self.coeffs = np.asarray(coeffs, dtype=float)
        self._increasing = len(self.ts) < 2 or self.ts[-1] > self.ts[0]

    @property
    def t0(self) -> float:
        return float(self.ts[0])

    @property
    def t1(self) -> float:
        return float(self.ts[-1])

    @property
    def x_end(self) -> np.ndarray:
        return self.xs[-1]

    def __len__(self):
        return len(self.ts)

    def __call__(self, t):
        t_arr = np.asarray(t, dtype=float)
        flat = np.atleast_1d(t_arr)
        key = self.ts if self._increasing else -self.ts
        q = flat if self._increasing else -flat
        idx = np.clip(np.searchsorted(key, q, side="right") - 1, 0, len(self.ts) - 2)
        t_lo, t_hi = self.ts[idx], self.ts[idx + 1]
        s = ((flat - t_lo) / (t_hi - t_lo))[:, None]
        rc = self.coeffs[idx]
        out = _contd5(np.moveaxis(rc, 1, 0), s)
        return out[0] if t_arr.ndim == 0 else out

    def select(self, components) -> "Trajectory":
        """Trajectory of a subset of state components."""
        return Trajectory(self.ts, self.xs[:, components], self.coeffs[:, :, components])

    def to_csv(self, path, names=None) -> None:
        n = self.xs.shape[1]
        names = names or [f"x{i + 1}" for i in range(n)]
        write_csv(path, ["t", *names], np.column_stack([self.ts, self.xs]))


def write_csv(path, header, rows) -> None:
    """CSV with a header row and 17-significant-digit floats."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in np.asarray(rows, dtype=float).reshape(-1, len(header)):
            writer.writerow([format(float(v), ".17g") for v in row])


def integrate(fun, x0, t0: float, t1: float, cfg: IntegratorConfig = DEFAULT_CONFIG) -> Trajectory:
    """Integrate ``x' = fun(t, x)`` from ``t0`` to ``t1`` (either direction)."""
    if t1 == t0:
        raise ValueError("t1 must differ from t0")
    stepper = DormandPrince(fun, t0, x0, t1, cfg)
    ts, xs, coeffs = [stepper.t], [stepper.y], []
    while not stepper.finished:
        stepper.step()
        ts.append(stepper.t)
        xs.append(stepper.y)
        coeffs.append(stepper.rcont)
    return Trajectory(ts, xs, coeffs)


def rk4(fun, x0, t0: float, t1: float, n_steps: int) -> np.ndarray:
    """Fixed-step classical Runge-Kutta; returns the end state.  Cross-check oracle."""
    h = (t1 - t0) / n_steps
    x = np.array(x0, dtype=float)
    t = t0
    for i in range(n_steps):
        t = t0 + i * h
        k1 = np.asarray(fun(t, x))
        k2 = np.asarray(fun(t + h / 2, x + h / 2 * k1))
        k3 = np.asarray(fun(t + h / 2, x + h / 2 * k2))
        k4 = np.asarray(fun(t + h, x + h * k3))
        x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


# --------------------------------------------------------------------------
# variational equations


def fd_jacobian(fun, t: float, x) -> np.ndarray:
    """Fourth-order central-difference Jacobian, step 1e-5*max(1,|x_j|)."""
    x = np.asarray(x, dtype=float)
    n = x.size
    h = 1e-5 * np.maximum(1.0, np.abs(x))
    offsets = np.array([2.0, 1.0, -1.0, -2.0])
    pts = np.repeat(x[None, None, :], 4, axis=0).repeat(n, axis=1)  # (4, n, n)
    for j in range(n):
        pts[:, j, j] += offsets * h[j]
    vals = np.asarray(fun(t, pts.reshape(4 * n, n)), dtype=float).reshape(4, n, n)
    cols = (-vals[0] + 8 * vals[1] - 8 * vals[2] + vals[3]) / (12 * h[:, None])
    return cols.T


@dataclass(frozen=True)
class Monodromy:
    """State-transition matrix over an interval plus the Liouville integral.

    ``log_det_liouville`` is the integral of the trace of the Jacobian along
    the trajectory; Liouville's formula says ``det(matrix) = exp`` of it.
    """

    matrix: np.ndarray
    log_det_liouville: float = 0.0

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.matrix))

    @property
    def liouville_gap(self) -> float:
        ref = math.exp(self.log_det_liouville)
        return abs(self.det - ref) / abs(ref)

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvals(self.matrix)


def integrate_variational(
    fun, x0, t0: float, t1: float, cfg: IntegratorConfig = DEFAULT_CONFIG, jac=None
) -> tuple[Trajectory, Monodromy]:
    """Integrate the state jointly with ``Psi' = Df(x) Psi``, ``Psi(t0) = I``."""
    x0 = np.array(x0, dtype=float).ravel()
    n = x0.size
    jacobian = jac if jac is not None else (lambda t, x: fd_jacobian(fun, t, x))

    def aug(t, y):
        x = y[:n]
        J = np.asarray(jacobian(t, x), dtype=float)
        psi = y[n : n + n * n].reshape(n, n)
        return np.concatenate([np.asarray(fun(t, x), dtype=float).ravel(), (J @ psi).ravel(), [np.trace(J)]])

    y0 = np.concatenate([x0, np.eye(n).ravel(), [0.0]])
    traj = integrate(aug, y0, t0, t1, cfg)
    end = traj.x_end
    mono = Monodromy(end[n : n + n * n].reshape(n, n).copy(), float(end[-1]))
    return traj.select(slice(0, n)), mono


# --------------------------------------------------------------------------
# sections


@dataclass(frozen=True)
class SectionSpec:
    """Hyperplane ``<n, x - p0> = 0`` crossed in a given direction.

    ``direction`` is the required sign of ``d/dt <n, x(t)>`` at the crossing
    (+1, -1, or 0 for both).  ``branch``, if given, restricts crossings to the
    half-space ``<branch, x - p0> > 0`` (e.g. the ``x1 > 0`` half of a line).
    ``basis`` spans the hyperplane and defines in-section coordinates; by
    default it is obtained by Gram-Schmidt on the coordinate axes.
    """

    normal: tuple
    anchor: tuple
    direction: int = 1
    branch: Optional[tuple] = None
    basis: Optional[tuple] = field(default=None)

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        norm = np.linalg.norm(n)
        if norm == 0:
            raise ValueError("section normal must be non-zero")
        if len(self.anchor) != len(n):
            raise ValueError("anchor and normal dimensions differ")
        if self.direction not in (-1, 0, 1):
            raise ValueError("direction must be -1, 0 or +1")
        object.__setattr__(self, "normal", tuple(n / norm))
        object.__setattr__(self, "anchor", tuple(float(a) for a in self.anchor))
        if self.basis is None:
            object.__setattr__(self, "basis", _complement_basis(n / norm))

    @property
    def n(self) -> np.ndarray:
        return np.asarray(self.normal)

    @property
    def p0(self) -> np.ndarray:
        return np.asarray(self.anchor)

    def value(self, x):
        """Signed distance along the normal; a float for one state, an array for a stack."""
        v = (np.asarray(x, dtype=float) - self.p0) @ self.n
        return float(v) if v.ndim == 0 else v

    def on_branch(self, x) -> bool:
        return self.branch is None or float(np.dot(self.branch, np.asarray(x) - self.p0)) > 0

    def to_section(self, x) -> np.ndarray:
        """In-section coordinates of a state (or stack of states)."""
        return (np.asarray(x) - self.p0) @ np.asarray(self.basis).T

    def from_section(self, u) -> np.ndarray:
        return self.p0 + np.asarray(u) @ np.asarray(self.basis)


def _complement_basis(n: np.ndarray) -> tuple:
    vecs = []
    for k in range(n.size):
        e = np.zeros(n.size)
        e[k] = 1.0
        v = e - np.dot(e, n) * n
        for b in vecs:
            v -= np.dot(v, b) * b
        if np.linalg.norm(v) > 1e-8:
            vecs.append(v / np.linalg.norm(v))
        if len(vecs) == n.size - 1:
            break
    return tuple(tuple(v) for v in vecs)


def _locate(stepper: DormandPrince, section: SectionSpec, fun) -> tuple[float, np.ndarray]:
    """Bisection on the step's dense output, then one Newton step."""
    n, p0 = section.n, section.p0
    a, b = stepper.t_old, stepper.t
    ga = float(np.dot(n, stepper.y_old - p0))
    t_mid = b
    for _ in range(200):
        t_mid = 0.5 * (a + b)
        g = float(np.dot(n, stepper.dense(t_mid) - p0))
        if abs(g) <= SECTION_TOL or t_mid in (a, b):
            break
        if (g > 0) == (ga > 0):
            a, ga = t_mid, g
        else:
            b = t_mid
    x = stepper.dense(t_mid)
    g = float(np.dot(n, x - p0))
    slope = float(np.dot(n, np.asarray(fun(t_mid, x), dtype=float)))
    if slope != 0.0:
        t_new = t_mid - g / slope
        lo, hi = min(stepper.t_old, stepper.t), max(stepper.t_old, stepper.t)
        if lo <= t_new <= hi:
            x_new = stepper.dense(t_new)
            if abs(np.dot(n, x_new - p0)) <= abs(g):
                t_mid, x = t_new, x_new
    x = x - np.dot(n, x - p0) * n
    return t_mid, x


def iter_crossings(
    fun,
    x0,
    section: SectionSpec,
    cfg: IntegratorConfig = DEFAULT_CONFIG,
    t0: float = 0.0,
    t_max: float = math.inf,
) -> Iterator[tuple[float, np.ndarray]]:
    """Yield successive ``(t, x)`` crossings of ``section`` along one trajectory.

    A crossing only counts once the trajectory has been strictly on the
    approach side, so a start point lying on the section is not reported.
    """
    stepper = DormandPrince(fun, t0, x0, t_max if math.isfinite(t_max) else t0 + 1e300, cfg)
    n, p0 = section.n, section.p0
    want = section.direction

    def side_of(g):
        return 0 if abs(g) <= ARM_TOL else (1 if g > 0 else -1)

    side = side_of(float(np.dot(n, stepper.y - p0)))
    while not stepper.finished:
        stepper.step()
        g_new = float(np.dot(n, stepper.y - p0))
        if side != 0 and g_new * side <= 0 and (want == 0 or side == -want):
            t_c, x_c = _locate(stepper, section, fun)
            if section.on_branch(x_c):
                yield t_c, x_c
        new_side = side_of(g_new)
        if new_side != 0:
            side = new_side
        elif g_new * side <= 0:
            side = 0


def section_crossing(
    fun,
    x0,
    section: SectionSpec,
    cfg: IntegratorConfig = DEFAULT_CONFIG,
    t0: float = 0.0,
    t_max: float = math.inf,
) -> tuple[float, np.ndarray]:
    """First crossing of ``section`` from ``x0``; raises if none is found."""
    try:
        return next(iter_crossings(fun, x0, section, cfg, t0, t_max))
    except StopIteration:
        raise NoCrossingError("no section crossing before t_max") from None
    except StepLimitError as exc:
        raise NoCrossingError(f"no section crossing: {exc}") from exc
