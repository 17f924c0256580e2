"""Invariant closed curves of section maps: sampling, fitting and quality checks.

A torus of a three-dimensional flow shows up as an invariant circle of the
first-return map to a transverse plane.  The circle is fitted as a Fourier
series for the radius about the sample centroid, then checked by mapping
points of the fitted curve once more (invariance) and by launching pairs of
normally offset points (contraction).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from sklearn.base import BaseEstimator

from .ode import (
    IntegrationError,
    IntegratorConfig,
    SectionSpec,
    iter_crossings,
    section_crossing,
)

TORUS_CONFIG = IntegratorConfig(rtol=1e-10, atol=1e-12)
FIXED_POINT_CONFIG = IntegratorConfig(rtol=1e-12, atol=1e-14)
N_INVARIANCE = 64
N_CONTRACTION = 32
DELTA_REL = 1e-3
NH_MARGIN = 1e-3
DENSE_CURVE = 4096
N_REFINE = 3
FRAME_HARMONICS = 8


class TorusError(RuntimeError):
    pass


class NonWindingError(TorusError):
    pass


class OffsetEscapeError(TorusError):
    pass


class FixedPointError(TorusError):
    pass


# --------------------------------------------------------------------------
# section maps and sampling


class SectionMap:
    """First-return map of a flow to a section, in in-section coordinates."""

    def __init__(self, field3d: Callable, section: SectionSpec, cfg: IntegratorConfig = TORUS_CONFIG):
        self.field3d = field3d
        self.section = section
        self.cfg = cfg
        self.last_time = math.nan

    def state(self, u) -> np.ndarray:
        return self.section.from_section(np.asarray(u, dtype=float))

    def __call__(self, u) -> np.ndarray:
        t, x = section_crossing(self.field3d, self.state(u), self.section, self.cfg)
        self.last_time = t
        return self.section.to_section(x)


def section_map(field3d, section: SectionSpec, point, cfg: IntegratorConfig = TORUS_CONFIG) -> np.ndarray:
    return SectionMap(field3d, section, cfg)(point)


@dataclass(frozen=True)
class SectionMapSample:
    points: np.ndarray  # (n, 2) in-section coordinates
    times: np.ndarray  # (n,) time since the previous return
    states: np.ndarray  # (n, d) full states

    def __len__(self):
        return len(self.points)


def sample_attractor(
    field3d,
    section: SectionSpec,
    x0,
    burn: int = 200,
    keep: int = 1000,
    cfg: IntegratorConfig = TORUS_CONFIG,
) -> SectionMapSample:
    """Follow one trajectory through ``burn + keep`` returns and record the last ``keep``."""
    if burn < 0 or keep < 0:
        raise ValueError("burn and keep must be non-negative")
    x0 = np.asarray(x0, dtype=float)
    dim = x0.size
    times, states = [], []
    t_prev = 0.0
    crossings = iter_crossings(field3d, x0, section, cfg)
    for k in range(burn + keep):
        try:
            t, x = next(crossings)
        except StopIteration:  # pragma: no cover - t_max is infinite
            raise IntegrationError("trajectory stopped returning to the section") from None
        if k >= burn:
            times.append(t - t_prev)
            states.append(x)
        t_prev = t
    states = np.array(states, dtype=float).reshape(-1, dim)
    points = section.to_section(states) if len(states) else np.empty((0, dim - 1))
    return SectionMapSample(np.asarray(points).reshape(-1, dim - 1), np.array(times), states)


# --------------------------------------------------------------------------
# curve model


def winding_angles(points, centre) -> np.ndarray:
    """Unwrapped polar angles of consecutive points about ``centre``."""
    d = np.asarray(points, dtype=float) - np.asarray(centre, dtype=float)
    return np.unwrap(np.arctan2(d[:, 1], d[:, 0]))


def check_winding(points, centre) -> float:
    """Total signed sweep; raises unless the angle is strictly monotone and sweeps a full turn."""
    psi = winding_angles(points, centre)
    steps = np.diff(psi)
    if steps.size == 0:
        raise NonWindingError("need at least two points")
    sign = np.sign(np.median(steps))
    if sign == 0 or np.any(steps * sign <= 0):
        raise NonWindingError("sample does not wind monotonically about its centroid")
    sweep = float(psi[-1] - psi[0])
    if abs(sweep) < 2 * np.pi:
        raise NonWindingError(f"sample sweeps {abs(sweep):.3f} rad about its centroid, less than a full turn")
    return sweep


def _design(psi, K: int) -> np.ndarray:
    psi = np.asarray(psi, dtype=float)
    k = np.arange(1, K + 1)
    return np.concatenate([np.ones(psi.shape + (1,)), np.cos(psi[..., None] * k), np.sin(psi[..., None] * k)], axis=-1)


def _whitening(cov) -> np.ndarray:
    w, V = np.linalg.eigh(cov)
    if not w[0] > 1e-14 * max(w[1], 1e-300):
        raise NonWindingError("sample is degenerate (collinear)")
    return V / np.sqrt(w)


def polygon_moments(poly) -> tuple[np.ndarray, np.ndarray]:
    """Area centroid and central second-moment matrix of a closed polygon."""
    x, y = np.asarray(poly, dtype=float).T
    x1, y1 = np.roll(x, -1), np.roll(y, -1)
    cross = x * y1 - x1 * y
    area = cross.sum() / 2
    cx = np.sum((x + x1) * cross) / (6 * area)
    cy = np.sum((y + y1) * cross) / (6 * area)
    ixx = np.sum((x * x + x * x1 + x1 * x1) * cross) / (12 * area) - cx * cx
    iyy = np.sum((y * y + y * y1 + y1 * y1) * cross) / (12 * area) - cy * cy
    ixy = np.sum((x * y1 + 2 * x * y + 2 * x1 * y1 + x1 * y) * cross) / (24 * area) - cx * cy
    return np.array([cx, cy]), np.array([[ixx, ixy], [ixy, iyy]])


class FourierCurve(BaseEstimator):
    """Star-shaped closed curve ``c + A^-1 rho(psi) (cos psi, sin psi)``.

    ``rho`` is a Fourier series with ``n_harmonics`` harmonics fitted by least
    squares to an ordered sample that winds around the centre ``c``, taken
    as the area centroid of the fitted curve.  With
    ``whiten`` the fit is done after mapping the sample by ``A``, the inverse
    square root of its covariance, so elongated curves need few harmonics.
    """

    def __init__(self, n_harmonics: int = 8, whiten: bool = True, check_winding: bool = True):
        self.n_harmonics = n_harmonics
        self.whiten = whiten
        self.check_winding = check_winding

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=float)
        K = self.n_harmonics
        if K < 1:
            raise ValueError("n_harmonics must be at least 1")
        if X.ndim != 2 or X.shape[1] != 2:
            raise ValueError("expected points of shape (n, 2)")
        if len(X) < 8 * K + 16:
            raise ValueError(f"{len(X)} points are too few for {K} harmonics (need {8 * K + 16})")
        centre, A = X.mean(axis=0), np.eye(2)
        if self.whiten:
            A = _whitening(np.cov((X - centre).T))
        # The sample centroid and covariance depend on how the points are
        # spread along the curve; re-anchor on the area moments of the fit.
        K_frame = max(K, min(FRAME_HARMONICS, (len(X) - 16) // 8))
        for _ in range(N_REFINE):
            self._fit_frame(X, centre, A, K_frame)
            centre, cov = polygon_moments(self.polyline(1024))
            if self.whiten:
                A = _whitening(cov)
        self._fit_frame(X, centre, A, K)
        self.n_samples_ = len(X)
        self.mean_radius_ = float(np.mean(np.linalg.norm(self.polyline() - centre, axis=-1)))
        return self

    def _fit_frame(self, X, centre, A, K):
        self.centroid_ = centre
        self.transform_ = A
        self.inverse_ = np.linalg.inv(A)
        d = (X - centre) @ A
        if self.check_winding:
            check_winding(d, np.zeros(2))
        psi = np.arctan2(d[:, 1], d[:, 0])
        rho = np.hypot(d[:, 0], d[:, 1])
        D = _design(psi, K)
        self.coef_, *_ = np.linalg.lstsq(D, rho, rcond=None)
        self.fit_residual_ = float(np.sqrt(np.mean((D @ self.coef_ - rho) ** 2)) / self.coef_[0])

    def radius(self, psi):
        """Radius in the fitting (whitened) frame."""
        return _design(psi, (len(self.coef_) - 1) // 2) @ self.coef_

    predict = radius

    def dradius(self, psi):
        psi = np.asarray(psi, dtype=float)
        K = (len(self.coef_) - 1) // 2
        k = np.arange(1, K + 1)
        a, b = self.coef_[1 : K + 1], self.coef_[K + 1 :]
        return (-np.sin(psi[..., None] * k) * k) @ a + (np.cos(psi[..., None] * k) * k) @ b

    def points(self, psi) -> np.ndarray:
        psi = np.asarray(psi, dtype=float)
        rho = self.radius(psi)
        return self.centroid_ + np.stack([rho * np.cos(psi), rho * np.sin(psi)], axis=-1) @ self.inverse_

    def normal(self, psi) -> np.ndarray:
        """Unit outward normal."""
        psi = np.asarray(psi, dtype=float)
        rho, drho = self.radius(psi), self.dradius(psi)
        c, s = np.cos(psi), np.sin(psi)
        tangent = np.stack([drho * c - rho * s, drho * s + rho * c], axis=-1) @ self.inverse_
        n = np.stack([tangent[..., 1], -tangent[..., 0]], axis=-1)
        if np.linalg.det(self.inverse_) < 0:
            n = -n
        return n / np.linalg.norm(n, axis=-1, keepdims=True)

    def angle_of(self, points) -> np.ndarray:
        d = (np.asarray(points, dtype=float) - self.centroid_) @ self.transform_
        return np.arctan2(d[..., 1], d[..., 0])

    def polyline(self, n: int = DENSE_CURVE) -> np.ndarray:
        return self.points(np.linspace(0.0, 2 * np.pi, n, endpoint=False))

    def _derivatives(self, psi):
        """Curve point and its first two derivatives in psi."""
        K = (len(self.coef_) - 1) // 2
        k = np.arange(1, K + 1)
        a, b = self.coef_[1 : K + 1], self.coef_[K + 1 :]
        ck, sk = np.cos(psi[..., None] * k), np.sin(psi[..., None] * k)
        rho = self.coef_[0] + ck @ a + sk @ b
        d1 = (-sk * k) @ a + (ck * k) @ b
        d2 = (-ck * k * k) @ a + (-sk * k * k) @ b
        u = np.stack([np.cos(psi), np.sin(psi)], axis=-1)
        up = np.stack([-np.sin(psi), np.cos(psi)], axis=-1)
        P = self.centroid_ + (rho[..., None] * u) @ self.inverse_
        P1 = (d1[..., None] * u + rho[..., None] * up) @ self.inverse_
        P2 = ((d2 - rho)[..., None] * u + 2 * d1[..., None] * up) @ self.inverse_
        return P, P1, P2

    def distance(self, points, n: int = DENSE_CURVE) -> np.ndarray:
        """Euclidean distance to the curve.

        The nearest vertex of a dense polygon gives the starting parameter
        for a few Newton steps on the foot-point condition.
        """
        P = np.atleast_2d(np.asarray(points, dtype=float))
        grid = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
        poly = self.points(grid)
        k = np.argmin(np.linalg.norm(P[:, None, :] - poly[None, :, :], axis=-1), axis=1)
        psi = grid[k]
        h = 2 * np.pi / n
        for _ in range(6):
            C, C1, C2 = self._derivatives(psi)
            r = C - P
            g = np.sum(r * C1, axis=-1)
            dg = np.sum(C1 * C1, axis=-1) + np.sum(r * C2, axis=-1)
            psi = np.clip(psi - g / dg, grid[k] - h, grid[k] + h)
        d = np.linalg.norm(self.points(psi) - P, axis=-1)
        return d if np.ndim(points) > 1 else d[0]

    def winding_number(self, point, n: int = DENSE_CURVE) -> int:
        return winding_number(self.polyline(n), point)


def winding_number(polygon, point) -> int:
    """Winding number of a closed polygon about a point."""
    d = np.asarray(polygon, dtype=float) - np.asarray(point, dtype=float)
    ang = np.arctan2(d[:, 1], d[:, 0])
    steps = np.diff(np.concatenate([ang, ang[:1]]))
    steps = (steps + np.pi) % (2 * np.pi) - np.pi
    return int(round(steps.sum() / (2 * np.pi)))


def fit_invariant_curve(sample: SectionMapSample, n_harmonics: int = 8) -> FourierCurve:
    return FourierCurve(n_harmonics).fit(sample.points)


# --------------------------------------------------------------------------
# quality checks


def invariance_residual(return_map: Callable, curve: FourierCurve, n_points: int = N_INVARIANCE) -> float:
    """Largest distance of a mapped curve point from the curve, over the mean radius."""
    psi = np.linspace(0.0, 2 * np.pi, n_points, endpoint=False)
    images = np.array([return_map(p) for p in curve.points(psi)])
    return float(np.max(curve.distance(images)) / curve.mean_radius_)


def contraction_ratios(
    return_map: Callable,
    curve: FourierCurve,
    n_points: int = N_CONTRACTION,
    delta_rel: float = DELTA_REL,
) -> np.ndarray:
    """Normal separation after one return of two points offset by +-delta normally."""
    delta = delta_rel * curve.mean_radius_
    psi = np.linspace(0.0, 2 * np.pi, n_points, endpoint=False)
    base, normal = curve.points(psi), curve.normal(psi)
    ratios = np.empty(n_points)
    for k in range(n_points):
        hi = return_map(base[k] + delta * normal[k])
        lo = return_map(base[k] - delta * normal[k])
        mid = 0.5 * (hi + lo)
        n_img = curve.normal(curve.angle_of(mid))
        sep = abs(float(np.dot(hi - lo, n_img)))
        if np.linalg.norm(hi - lo) > 0.5 * curve.mean_radius_:
            raise OffsetEscapeError("offset points separated beyond the tube after one return")
        ratios[k] = sep / (2 * delta)
    return ratios


def contraction_estimate(
    return_map: Callable,
    curve: FourierCurve,
    n_points: int = N_CONTRACTION,
    delta_rel: float = DELTA_REL,
) -> float:
    """Geometric mean of one-return normal contraction ratios (nu hat)."""
    ratios = contraction_ratios(return_map, curve, n_points, delta_rel)
    if np.any(ratios <= 0):
        raise OffsetEscapeError("offset pair collapsed onto the curve")
    return float(np.exp(np.mean(np.log(ratios))))


def interior_fixed_point(
    return_map: Callable,
    seed,
    h: float = 1e-4,
    tol: float = 1e-10,
    max_iter: int = 30,
) -> tuple[np.ndarray, np.ndarray]:
    """Newton on ``return_map(u) - u`` with a central-difference Jacobian.

    Convergence is judged on the Newton step, not on the residual: near
    eps = 0 the map is almost the identity and the residual is tiny far from
    the fixed point.  Returns the fixed point and the eigenvalues of the
    map's derivative there.
    """
    u = np.asarray(seed, dtype=float).copy()
    n = u.size
    J = None
    for _ in range(max_iter):
        g = return_map(u) - u
        J = np.empty((n, n))
        for j in range(n):
            e = np.zeros(n)
            e[j] = h
            J[:, j] = (return_map(u + e) - return_map(u - e)) / (2 * h) - e / h
        try:
            step = np.linalg.solve(J, -g)
        except np.linalg.LinAlgError:
            raise FixedPointError("singular Jacobian in the fixed-point Newton iteration") from None
        if not np.all(np.isfinite(step)) or np.linalg.cond(J) > 1e12:
            raise FixedPointError("singular Jacobian in the fixed-point Newton iteration")
        u = u + step
        if np.linalg.norm(step) < tol * max(1.0, np.linalg.norm(u)):
            break
    else:
        raise FixedPointError(f"fixed-point Newton did not converge in {max_iter} iterations")
    return u, np.linalg.eigvals(J + np.eye(n))


# --------------------------------------------------------------------------
# pipeline


@dataclass
class TorusEstimate:
    curve: FourierCurve
    fit_residual: float
    invariance_residual: float
    nu_hat: float
    sup_distance: float
    n_samples: int
    eps: float
    curve_source: str = "sample"  # or "reference" when the sample did not wind
    winding_error: Optional[str] = None
    fixed_point: Optional[np.ndarray] = None
    multipliers: Optional[np.ndarray] = None
    sandwich_winding: Optional[int] = None
    sample: Optional[SectionMapSample] = field(default=None, repr=False)

    @property
    def normally_hyperbolic(self) -> bool:
        return bool(0 < self.nu_hat < 1 - NH_MARGIN)

    @property
    def accepted(self) -> bool:
        return self.curve_source == "sample" and self.normally_hyperbolic

    def certificate(self) -> dict:
        mult = None
        if self.multipliers is not None:
            mult = [{"re": float(np.real(m)), "im": float(np.imag(m)), "abs": float(abs(m))} for m in self.multipliers]
        return {
            "eps": float(self.eps),
            "curve_source": self.curve_source,
            "winding_error": self.winding_error,
            "n_harmonics": int(self.curve.n_harmonics),
            "whiten": bool(self.curve.whiten),
            "n_samples": int(self.n_samples),
            "mean_radius": float(self.curve.mean_radius_),
            "centroid": [float(v) for v in self.curve.centroid_],
            "residuals": {"fit": float(self.fit_residual), "invariance": float(self.invariance_residual)},
            "nu_hat": float(self.nu_hat),
            "normally_hyperbolic": self.normally_hyperbolic,
            "sup_distance": float(self.sup_distance),
            "fixed_point": None if self.fixed_point is None else [float(v) for v in self.fixed_point],
            "multipliers": mult,
            "sandwich_winding": self.sandwich_winding,
        }


def detect_torus(
    field3d,
    section: SectionSpec,
    x0,
    eps: float,
    burn: int = 200,
    keep: int = 1000,
    n_harmonics: int = 8,
    cfg: IntegratorConfig = TORUS_CONFIG,
    reference: Optional[np.ndarray] = None,
    distance: Optional[Callable] = None,
    seed=None,
    fixed_point_cfg: IntegratorConfig = FIXED_POINT_CONFIG,
) -> TorusEstimate:
    """Sample, fit, and check an invariant circle of the section map.

    ``reference`` is an ordered closed polygon (in-section) used in place of
    the fit when the sample does not wind, so contraction can still be
    measured; such an estimate is never accepted.  ``distance`` maps full
    states to a distance from a known limiting set.  The interior fixed point
    is sought from ``seed`` only when the curve is normally hyperbolic.
    """
    sample = sample_attractor(field3d, section, x0, burn, keep, cfg)
    source, why = "sample", None
    try:
        curve = FourierCurve(n_harmonics).fit(sample.points)
    except (NonWindingError, ValueError) as exc:
        if reference is None:
            raise
        source, why = "reference", str(exc)
        curve = FourierCurve(n_harmonics, check_winding=False).fit(reference)
    smap = SectionMap(field3d, section, cfg)
    inv = invariance_residual(smap, curve)
    nu = contraction_estimate(smap, curve)
    sup = float(np.max(distance(sample.states))) if distance is not None and len(sample) else math.nan
    est = TorusEstimate(
        curve=curve,
        fit_residual=curve.fit_residual_,
        invariance_residual=inv,
        nu_hat=nu,
        sup_distance=sup,
        n_samples=len(sample),
        eps=eps,
        curve_source=source,
        winding_error=why,
        sample=sample,
    )
    if seed is not None and est.normally_hyperbolic:
        fp, mult = interior_fixed_point(SectionMap(field3d, section, fixed_point_cfg), seed)
        est.fixed_point, est.multipliers = fp, mult
        est.sandwich_winding = abs(curve.winding_number(fp))
    return est
