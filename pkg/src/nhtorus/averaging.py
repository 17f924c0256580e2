"""Higher-order averaged (Melnikov) functions of a standard-form system.

For a system x' = sum eps^i F_i(t, x) the functions y_i(t, z) solve

    y_1' = F_1(s, z)
    y_i' = i! F_i(s, z) + sum_{j=1}^{i-1} sum_{m=1}^{j} (i!/j!) D^m F_{i-j}(s, z)[B_{j,m}(y_1, ..., y_{j-m+1})]

with y_i(0, z) = 0, and f_i(z) = y_i(T, z) / i!.  A Bell monomial
``c * prod y_k^{b_k}`` contributes ``c`` times the symmetric m-linear
derivative applied to the multiset holding y_k repeated b_k times.  All
orders up to i are integrated together as one ODE in s, batched over the
points z.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from math import factorial
from typing import Callable, Optional, Sequence

import numpy as np

from .bell import bell_monomials
from .expr import JERK_VARIABLES, compile_expr, parse_expr
from .ode import IntegratorConfig, integrate
from .sysdef import PlanarField, SystemDef

AVERAGING_CONFIG = IntegratorConfig(rtol=1e-11, atol=1e-13)
MAX_DERIVATIVE_ORDER = 4


# --------------------------------------------------------------------------
# finite-difference derivative tensors


@lru_cache(maxsize=None)
def central_weights(deriv: int, accuracy: int = 4) -> tuple:
    """Exact central-difference weights (offsets, weights) for a derivative order."""
    half = (deriv - 1) // 2 + accuracy // 2
    offsets = list(range(-half, half + 1))
    size = len(offsets)
    # Vandermonde system sum_k w_k k^i = i! delta_{i,deriv}
    rows = [[Fraction(o) ** i for o in offsets] + [Fraction(factorial(i) if i == deriv else 0)] for i in range(size)]
    for col in range(size):
        piv = next(r for r in range(col, size) if rows[r][col] != 0)
        rows[col], rows[piv] = rows[piv], rows[col]
        pivot = rows[col][col]
        rows[col] = [v / pivot for v in rows[col]]
        for r in range(size):
            if r != col and rows[r][col] != 0:
                factor = rows[r][col]
                rows[r] = [a - factor * b for a, b in zip(rows[r], rows[col])]
    weights = tuple(rows[r][-1] for r in range(size))
    keep = [(o, w) for o, w in zip(offsets, weights) if w != 0]
    return tuple(o for o, _ in keep), tuple(w for _, w in keep)


def fd_step(m: int, z) -> np.ndarray:
    """Per-component step: 1e-4*max(1,|z|) for m <= 2, 5e-3*max(1,|z|) beyond."""
    base = 1e-4 if m <= 2 else 5e-3
    return base * np.maximum(1.0, np.abs(np.asarray(z, dtype=float)))


@dataclass(frozen=True)
class DerivativeTensor:
    """All m-th order mixed partials of a planar field at (t, z).

    ``partials[a]`` is d^m F / dx1^a dx2^(m-a), shape ``z.shape``.
    """

    order: int
    partials: np.ndarray  # (m+1, ..., 2)
    t: float
    z: np.ndarray

    def apply(self, vectors) -> np.ndarray:
        """Contract with m vectors: D^m F[v_1, ..., v_m]."""
        vectors = np.asarray(vectors, dtype=float)
        if vectors.shape[0] != self.order:
            raise ValueError(f"expected {self.order} vectors, got {vectors.shape[0]}")
        # coefficient of X^a in prod_l (v_l1 X + v_l2) sums the component patterns
        coeffs = [np.ones(vectors.shape[1:-1])]
        for v in vectors:
            nxt = [None] * (len(coeffs) + 1)
            for a, c in enumerate(coeffs):
                hi, lo = c * v[..., 0], c * v[..., 1]
                nxt[a + 1] = hi if nxt[a + 1] is None else nxt[a + 1] + hi
                nxt[a] = lo if nxt[a] is None else nxt[a] + lo
            coeffs = nxt
        out = 0.0
        for a, c in enumerate(coeffs):
            out = out + c[..., None] * self.partials[a]
        return out


def derivative_tensor(F: Callable, m: int, t: float, z, h=None) -> DerivativeTensor:
    """Mixed partials of order m by tensor-product fourth-order central stencils."""
    if not 1 <= m <= MAX_DERIVATIVE_ORDER:
        raise ValueError(f"derivative order must be in 1..{MAX_DERIVATIVE_ORDER}, got {m}")
    z = np.asarray(z, dtype=float)
    h = fd_step(m, z) if h is None else np.broadcast_to(np.asarray(h, dtype=float), z.shape)
    stencils = []
    for a in range(m + 1):
        o1, w1 = central_weights(a) if a else ((0,), (Fraction(1),))
        o2, w2 = central_weights(m - a) if m - a else ((0,), (Fraction(1),))
        for i, wi in zip(o1, w1):
            for j, wj in zip(o2, w2):
                stencils.append((a, i, j, float(wi * wj)))
    off = np.array([[i, j] for _, i, j, _ in stencils], dtype=float)
    pts = z[None, ...] + off.reshape((len(stencils),) + (1,) * (z.ndim - 1) + (2,)) * h[None, ...]
    vals = np.asarray(F(t, pts), dtype=float)
    partials = np.zeros((m + 1,) + z.shape)
    for (a, _, _, w), v in zip(stencils, vals):
        partials[a] += w * v
    for a in range(m + 1):
        partials[a] /= (h[..., 0:1] ** a) * (h[..., 1:2] ** (m - a))
    return DerivativeTensor(m, partials, t, z)


def dmF_apply(F: Callable, m: int, t: float, z, vectors, h=None) -> np.ndarray:
    """D^m F(t, z)[v_1, ..., v_m] as a symmetric m-linear map."""
    return derivative_tensor(F, m, t, z, h).apply(vectors)


# --------------------------------------------------------------------------
# Melnikov recursion


def _terms(system: SystemDef, order: int) -> list:
    """(k, field index, m, factor, multiset of y-indices) for the recursion up to ``order``."""
    terms = []
    for k in range(2, order + 1):
        for j in range(1, k):
            if system.F(k - j) is None:
                continue
            for m in range(1, j + 1):
                for mono in bell_monomials(j, m):
                    multiset = tuple(
                        idx for idx, b in enumerate(mono.multiplicities, start=1) for _ in range(b)
                    )
                    factor = factorial(k) // factorial(j) * mono.coefficient
                    terms.append((k, k - j, m, factor, multiset))
    return terms


class AveragingWorkspace:
    """Evaluates y_i and f_i for one system, caching y_i(T, z) per point.

    A workspace mutates its cache and is not meant to be shared between
    threads; independent workspaces over one SystemDef are fine.
    """

    def __init__(
        self,
        system: SystemDef,
        i_max: Optional[int] = None,
        cfg: IntegratorConfig = AVERAGING_CONFIG,
        fd_h: Optional[float] = None,
    ):
        self.system = system
        self.i_max = system.order if i_max is None else i_max
        if not 1 <= self.i_max <= system.order:
            raise ValueError(f"i_max must be in 1..{system.order}")
        if self.i_max > MAX_DERIVATIVE_ORDER + 1:
            raise ValueError(f"orders above {MAX_DERIVATIVE_ORDER + 1} need derivatives beyond order 4")
        self.cfg = cfg
        self.fd_h = fd_h
        self.cache: dict = {}
        self._terms = {i: _terms(system, i) for i in range(1, self.i_max + 1)}

    def clear_cache(self) -> None:
        self.cache.clear()

    def _check_order(self, i: int) -> None:
        if not 1 <= i <= self.i_max:
            raise ValueError(f"order must be in 1..{self.i_max}, got {i}")

    def _rhs(self, order: int, Z: np.ndarray):
        system = self.system
        terms = self._terms[order]
        shape = (order,) + Z.shape
        fact = [factorial(k) for k in range(order + 1)]

        def rhs(s, y):
            Y = y.reshape(shape)
            out = np.zeros(shape)
            for k in range(1, order + 1):
                f = system.F(k)
                if f is not None:
                    out[k - 1] = fact[k] * np.asarray(f(s, Z), dtype=float)
            nonzero = [bool(np.any(Y[i])) for i in range(order)]
            tensors = {}
            for k, fi, m, factor, multiset in terms:
                if not all(nonzero[idx - 1] for idx in multiset):
                    continue
                key = (fi, m)
                if key not in tensors:
                    tensors[key] = derivative_tensor(system.F(fi), m, s, Z, self.fd_h)
                vecs = np.stack([Y[idx - 1] for idx in multiset])
                out[k - 1] += factor * tensors[key].apply(vecs)
            return out.ravel()

        return rhs

    def y_stack(self, order: int, t: float, Z) -> np.ndarray:
        """y_1..y_order at time t for a batch of points; shape (order, B, 2)."""
        self._check_order(order)
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        if t == 0:
            return np.zeros((order,) + Z.shape)
        y0 = np.zeros(order * Z.size)
        end = integrate(self._rhs(order, Z), y0, 0.0, t, self.cfg).x_end
        return end.reshape((order,) + Z.shape)

    def y_at_period(self, order: int, Z) -> np.ndarray:
        """Cached y_1..y_order at t = T; shape (order, B, 2)."""
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        keys = [tuple(z) for z in Z]
        missing = [n for n, key in enumerate(keys) if (order, key) not in self.cache]
        if missing:
            stack = self.y_stack(order, self.system.period, Z[missing])
            for col, n in enumerate(missing):
                for k in range(1, order + 1):
                    self.cache.setdefault((k, keys[n]), stack[k - 1, col].copy())
                self.cache[(order, keys[n])] = stack[order - 1, col].copy()
        return np.stack(
            [np.stack([self.cache[(k, key)] for key in keys]) for k in range(1, order + 1)]
        )


def melnikov_y(ws: AveragingWorkspace, i: int, t: float, z) -> np.ndarray:
    """y_i(t, z); z may be a single point or a batch."""
    z_arr = np.asarray(z, dtype=float)
    out = ws.y_stack(i, t, z_arr)[i - 1]
    return out[0] if z_arr.ndim == 1 else out


def averaged_f(ws: AveragingWorkspace, i: int, z) -> np.ndarray:
    """f_i(z) = y_i(T, z) / i!; z may be a single point or a batch."""
    ws._check_order(i)
    z_arr = np.asarray(z, dtype=float)
    out = ws.y_at_period(i, z_arr)[i - 1] / factorial(i)
    return out[0] if z_arr.ndim == 1 else out


@dataclass(frozen=True)
class OrderCertificate:
    order: int  # first non-vanishing order, or N+1 if none
    max_norms: dict  # order -> max over the grid of |f_i|
    tol: float


def first_nonvanishing_order(ws: AveragingWorkspace, grid, tol: Optional[float] = None) -> OrderCertificate:
    """Smallest i with max_z |f_i(z)| > tol on ``grid``.

    The default ``tol`` is 1e-7 times the largest grid max over all orders, the
    floor set by finite-difference noise.
    """
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    if grid.size == 0:
        raise ValueError("grid must be non-empty")
    N = ws.i_max
    stack = ws.y_at_period(N, grid)
    norms = {
        i: float(np.max(np.linalg.norm(stack[i - 1], axis=-1))) / factorial(i) for i in range(1, N + 1)
    }
    if tol is None:
        tol = 1e-7 * max(norms.values())
    order = next((i for i in range(1, N + 1) if norms[i] > tol), N + 1)
    return OrderCertificate(order, norms, tol)


def guiding_field(ws: AveragingWorkspace, order: int) -> PlanarField:
    """z' = f_order(z) / T."""
    ws._check_order(order)
    T = ws.system.period

    def func(z):
        return averaged_f(ws, order, z) / T

    return PlanarField(func, label=f"guiding field f_{order}/T")


def tabulate(field: PlanarField, bounds, shape=(25, 25), degree: int = 5) -> PlanarField:
    """Spline surrogate of a planar field sampled once on a regular grid.

    Used when each evaluation is expensive (guiding fields); degree-5 splines
    reproduce polynomial fields of degree <= 5 exactly.
    """
    from scipy.interpolate import RectBivariateSpline

    (a0, a1), (b0, b1) = bounds
    xs = np.linspace(a0, a1, shape[0])
    ys = np.linspace(b0, b1, shape[1])
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    vals = field(np.stack([X.ravel(), Y.ravel()], axis=-1)).reshape(shape + (2,))
    splines = [RectBivariateSpline(xs, ys, vals[..., c], kx=degree, ky=degree) for c in range(2)]

    def func(z):
        z = np.asarray(z, dtype=float)
        out = np.stack([s.ev(z[..., 0], z[..., 1]) for s in splines], axis=-1)
        return out

    def jac(z):
        z = np.asarray(z, dtype=float)
        return np.array(
            [[float(s.ev(z[0], z[1], dx=1)), float(s.ev(z[0], z[1], dy=1))] for s in splines]
        )

    return PlanarField(func, label=f"tabulated {field.label}".strip(), jacobian=jac)


# --------------------------------------------------------------------------
# hypothesis H1 for the jerk family


@dataclass(frozen=True)
class H1Report:
    passed: bool
    max_violation: float
    violations: np.ndarray  # (len(r_grid), len(z_grid), 2): |<P>|, |<P sin>|
    r_grid: np.ndarray
    z_grid: np.ndarray
    tol: float


def jerk_callable(P, variables=JERK_VARIABLES) -> Callable:
    """Accept a callable (x, xd, xdd) or an expression string in x, xd, xdd."""
    if callable(P):
        return P
    func = compile_expr(parse_expr(P, variables))
    return lambda x, xd, xdd: func({"x": x, "xd": xd, "xdd": xdd})


def check_H1(P, r_grid: Sequence[float], z_grid: Sequence[float], n_theta: int = 256, tol: float = 1e-9) -> H1Report:
    """theta-averages of P(r sin - z, r cos, -r sin) and of P * sin, trapezoid rule."""
    P = jerk_callable(P)
    r = np.asarray(r_grid, dtype=float)
    z = np.asarray(z_grid, dtype=float)
    if r.size == 0 or z.size == 0:
        raise ValueError("grids must be non-empty")
    if np.any(r <= 0):
        raise ValueError("r must be positive")
    theta = 2 * np.pi * np.arange(n_theta) / n_theta
    R, Zg, TH = np.meshgrid(r, z, theta, indexing="ij")
    vals = np.broadcast_to(P(R * np.sin(TH) - Zg, R * np.cos(TH), -R * np.sin(TH)), R.shape)
    # periodic trapezoid rule = plain mean over equispaced nodes
    avg = np.mean(vals, axis=-1)
    avg_sin = np.mean(vals * np.sin(TH), axis=-1)
    violations = np.stack([np.abs(avg), np.abs(avg_sin)], axis=-1)
    worst = float(violations.max())
    return H1Report(worst < tol, worst, violations, r, z, tol)
