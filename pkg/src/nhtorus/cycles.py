"""Limit cycles of planar fields: shooting, Floquet multipliers, moving frame."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ode import (
    IntegratorConfig,
    SectionSpec,
    Trajectory,
    fd_jacobian,
    integrate_variational,
    section_crossing,
)
from .sysdef import PlanarField

CYCLE_CONFIG = IntegratorConfig(rtol=1e-12, atol=1e-14)
N_SAMPLES = 1024
RETURN_TOL = 1e-10
MAX_NEWTON = 50
HYPERBOLIC_MARGIN = 1e-6
NONHYPERBOLIC_TOL = 1e-10
GAUSS_NODES = 8


class CycleError(RuntimeError):
    pass


class NewtonDivergenceError(CycleError):
    pass


class NonHyperbolicError(CycleError):
    pass


class TangentDegeneracyError(CycleError):
    pass


class OutsideTubeError(ValueError):
    pass


@dataclass(frozen=True)
class LimitCycle:
    field: PlanarField
    anchor: np.ndarray
    period: float
    trajectory: Trajectory  # one period from the anchor, dense
    samples: np.ndarray  # (K, 2), uniform in time
    multiplier: float  # nontrivial monodromy eigenvalue
    multiplier_liouville: float
    return_map_derivative: float
    section: SectionSpec

    @property
    def stable(self) -> bool:
        return abs(self.multiplier) < 1

    @property
    def hyperbolic_attracting(self) -> bool:
        return abs(self.multiplier) < 1 - HYPERBOLIC_MARGIN

    def __call__(self, t):
        """Orbit point at time t (taken modulo the period)."""
        return self.trajectory(np.mod(t, self.period))

    def certificate(self) -> dict:
        return {
            "period": float(self.period),
            "multiplier_monodromy": float(self.multiplier),
            "multiplier_liouville": float(self.multiplier_liouville),
            "return_map_derivative": float(self.return_map_derivative),
            "stable": bool(self.stable),
            "anchor": [float(v) for v in self.anchor],
        }


def _autonomous(field: PlanarField):
    return lambda t, x: field(x)


def _jacobian(field: PlanarField):
    if field.jacobian is not None:
        return lambda t, x: field.jacobian(x)
    f = _autonomous(field)
    return lambda t, x: fd_jacobian(f, t, x)


def divergence(field: PlanarField, x) -> float:
    return float(np.trace(_jacobian(field)(0.0, np.asarray(x, dtype=float))))


def find_limit_cycle(
    field: PlanarField,
    seed,
    section: SectionSpec,
    cfg: IntegratorConfig = CYCLE_CONFIG,
    n_samples: int = N_SAMPLES,
) -> LimitCycle:
    """Newton iteration on the first-return displacement along a section line."""
    fun = _autonomous(field)
    p0 = section.p0
    d = np.asarray(section.basis[0])

    def point(s):
        return p0 + s * d

    def return_map(s):
        t_ret, x_ret = section_crossing(fun, point(s), section, cfg)
        return float(np.dot(d, x_ret - p0)), t_ret

    s = float(np.dot(d, np.asarray(seed, dtype=float) - p0))
    for _ in range(MAX_NEWTON):
        P, t_ret = return_map(s)
        delta = 1e-6 * max(1.0, abs(s))
        dP = (return_map(s + delta)[0] - return_map(s - delta)[0]) / (2 * delta)
        if abs(P - s) < RETURN_TOL:
            break
        s = s - (P - s) / (dP - 1.0)
        if not math.isfinite(s):
            raise NewtonDivergenceError("shooting iterate is not finite")
    else:
        raise NewtonDivergenceError(f"shooting did not converge in {MAX_NEWTON} iterations")

    anchor = point(s)
    period = t_ret
    traj, mono = integrate_variational(fun, anchor, 0.0, period, cfg, jac=_jacobian(field))
    multiplier = _nontrivial_eigenvalue(mono.matrix, field(anchor))
    # the finite-difference slope is only good to ~1e-6; the monodromy is not
    if abs(multiplier - 1.0) < NONHYPERBOLIC_TOL:
        raise NonHyperbolicError(f"Floquet multiplier {multiplier!r} is 1: cycle is not hyperbolic")
    samples = traj(np.linspace(0.0, period, n_samples, endpoint=False))
    cycle = LimitCycle(
        field=field,
        anchor=anchor,
        period=period,
        trajectory=traj,
        samples=samples,
        multiplier=multiplier,
        multiplier_liouville=math.nan,
        return_map_derivative=dP,
        section=section,
    )
    lam = floquet_liouville(field, cycle)
    return LimitCycle(**{**cycle.__dict__, "multiplier_liouville": lam})


def _nontrivial_eigenvalue(M: np.ndarray, flow_dir: np.ndarray) -> float:
    """Eigenvalue whose eigenvector is least aligned with the flow direction."""
    vals, vecs = np.linalg.eig(M)
    u = flow_dir / np.linalg.norm(flow_dir)
    align = [abs(np.dot(u, np.real(vecs[:, k])) / np.linalg.norm(np.real(vecs[:, k]))) for k in range(2)]
    return float(np.real(vals[int(np.argmin(align))]))


def floquet_liouville(field: PlanarField, cycle: LimitCycle) -> float:
    """exp of the divergence integrated over one period of the sampled orbit.

    The dense output is a different polynomial on every step, so the integral
    is a sum of Gauss-Legendre rules, one per accepted step.
    """
    jac = _jacobian(field)
    nodes, weights = np.polynomial.legendre.leggauss(GAUSS_NODES)
    ts = cycle.trajectory.ts
    a, b = ts[:-1, None], ts[1:, None]
    tq = 0.5 * (a + b) + 0.5 * (b - a) * nodes
    xq = cycle.trajectory(tq.ravel())
    div = np.array([np.trace(jac(0.0, x)) for x in xq]).reshape(tq.shape)
    integral = float(np.sum(0.5 * (b - a) * div * weights))
    return math.exp(integral)


# --------------------------------------------------------------------------
# moving orthonormal frame z = phi(sigma) + Z(sigma) rho


@dataclass(frozen=True)
class MovingFrame:
    """Orthonormal frame along a cycle reparameterised to sigma in [0, 2*pi).

    ``v`` is the unit tangent, ``Z = (-v2, v1)`` the unit normal; ``r0`` is a
    tube radius inside which (rho, sigma) coordinates are single valued.
    """

    cycle: LimitCycle
    sigma: np.ndarray
    phi_samples: np.ndarray
    v_samples: np.ndarray
    r0: float

    @property
    def speed_factor(self) -> float:
        return self.cycle.period / (2 * np.pi)

    def phi(self, sigma):
        return self.cycle(np.asarray(sigma, dtype=float) * self.speed_factor)

    def dphi(self, sigma):
        return self.speed_factor * self.cycle.field(self.phi(sigma))

    def v(self, sigma):
        d = self.dphi(sigma)
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def Z(self, sigma):
        v = self.v(sigma)
        return np.stack([-v[..., 1], v[..., 0]], axis=-1)


def moving_frame(cycle: LimitCycle, n_samples: int = N_SAMPLES) -> MovingFrame:
    sigma = np.linspace(0.0, 2 * np.pi, n_samples, endpoint=False)
    phi = cycle(sigma * cycle.period / (2 * np.pi))
    f = cycle.field(phi)
    speed = np.linalg.norm(f, axis=-1)
    if np.min(speed) < 1e-12:
        raise TangentDegeneracyError("the field vanishes on the cycle")
    v = f / speed[:, None]
    return MovingFrame(cycle, sigma, phi, v, _tube_radius(cycle, phi, f))


def _tube_radius(cycle: LimitCycle, phi: np.ndarray, f: np.ndarray) -> float:
    """Half the estimated distance from the cycle to its medial axis."""
    jac = _jacobian(cycle.field)
    acc = np.array([jac(0.0, p) @ fp for p, fp in zip(phi, f)])
    speed = np.linalg.norm(f, axis=-1)
    curvature = np.abs(f[:, 0] * acc[:, 1] - f[:, 1] * acc[:, 0]) / speed**3
    rho_min = 1.0 / max(np.max(curvature), 1e-300)
    # bottleneck: closest pair of points that are far apart along the curve
    seg = np.linalg.norm(np.diff(np.vstack([phi, phi[:1]]), axis=0), axis=-1)
    arc = np.concatenate([[0.0], np.cumsum(seg)[:-1]])
    length = seg.sum()
    sep = np.abs(arc[:, None] - arc[None, :])
    sep = np.minimum(sep, length - sep)
    dist = np.linalg.norm(phi[:, None, :] - phi[None, :, :], axis=-1)
    far = sep > np.pi * rho_min
    bottleneck = 0.5 * dist[far].min() if np.any(far) else math.inf
    return 0.5 * min(rho_min, bottleneck)


def frame_to_cartesian(frame: MovingFrame, rho, sigma) -> np.ndarray:
    rho = np.asarray(rho, dtype=float)
    return frame.phi(sigma) + frame.Z(sigma) * rho[..., None]


def cartesian_to_frame(frame: MovingFrame, z) -> tuple[float, float]:
    """Nearest-point projection: Newton on <z - phi(sigma), phi'(sigma)> = 0."""
    z = np.asarray(z, dtype=float)
    k = int(np.argmin(np.linalg.norm(frame.phi_samples - z, axis=-1)))
    sigma = float(frame.sigma[k])
    c = frame.speed_factor
    jac = _jacobian(frame.cycle.field)
    for _ in range(50):
        p = frame.phi(sigma)
        fp = frame.cycle.field(p)
        d1 = c * fp
        d2 = c * c * (jac(0.0, p) @ fp)
        h = float(np.dot(z - p, d1))
        dh = -float(np.dot(d1, d1)) + float(np.dot(z - p, d2))
        step = h / dh
        sigma -= step
        if abs(step) < 1e-15 * max(1.0, abs(sigma)):
            break
    sigma = float(np.mod(sigma, 2 * np.pi))
    if sigma >= 2 * np.pi:
        sigma = 0.0
    rho = float(np.dot(z - frame.phi(sigma), frame.Z(sigma)))
    if abs(rho) > frame.r0:
        raise OutsideTubeError(f"|rho| = {abs(rho):.3g} exceeds the tube radius {frame.r0:.3g}")
    return rho, sigma
