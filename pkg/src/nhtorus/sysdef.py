"""Standard-form systems and planar fields, built from code or from a config document.

A standard-form system is

    x' = sum_{i=1..N} eps^i F_i(t, x) + eps^(N+1) Fr(t, x, eps),   x in R^2,

with every ``F_i`` T-periodic in ``t``.  Fields are vectorised: they take a
scalar ``t`` and ``x`` of shape ``(..., 2)`` and return the same shape.  A
field that is identically zero is stored as ``None`` so that downstream code
can skip it.

Config documents are TOML::

    period = "2*pi"            # number or constant expression
    order = 2
    F1 = ["cos(t)", "sin(t)"]  # one expression per component, variables t, x1, x2
    F2 = ["0", "x1*x2"]
    remainder = ["0", "0"]     # optional, may also use eps
    domain = [[-1, 1], [-1, 1]]  # optional bounds for sampling checks
    label = "my system"        # optional
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .expr import (
    DEFAULT_VARIABLES,
    ExprError,
    compile_expr,
    is_zero,
    parse_expr,
    to_string,
)

Field = Callable[[float, np.ndarray], np.ndarray]

PERIODICITY_TOL = 1e-9
DEFAULT_DOMAIN = ((-1.0, 1.0), (-1.0, 1.0))


class ConfigError(ValueError):
    """A config document is malformed or incomplete."""


class PeriodicityError(ValueError):
    def __init__(self, index: int, violation: float):
        super().__init__(
            f"F{index} is not periodic in t: max |F(t+T,x) - F(t,x)| = {violation:.3e}"
        )
        self.index = index
        self.violation = violation


@dataclass(frozen=True)
class SystemDef:
    period: float
    order: int
    fields: tuple  # F_1..F_N, None for identically zero fields
    remainder: Optional[Callable] = None  # (t, x, eps) -> R^2
    domain: tuple = DEFAULT_DOMAIN
    label: str = ""
    expressions: Optional[dict] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if not self.period > 0:
            raise ValueError("period must be positive")
        if self.order < 1:
            raise ValueError("order must be >= 1")
        if len(self.fields) != self.order:
            raise ValueError(f"expected {self.order} fields, got {len(self.fields)}")

    def F(self, i: int) -> Optional[Field]:
        """The i-th field (1-based), or None if it vanishes."""
        return self.fields[i - 1]

    def evaluate(self, i: int, t, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        f = self.F(i)
        if f is None:
            return np.zeros_like(x)
        return np.asarray(f(t, x), dtype=float)

    def full_field(self, eps: float) -> Field:
        """The right-hand side at a given eps, remainder included."""
        N = self.order

        def rhs(t, x):
            x = np.asarray(x, dtype=float)
            out = np.zeros_like(x)
            for i, f in enumerate(self.fields, start=1):
                if f is not None:
                    out = out + eps**i * np.asarray(f(t, x))
            if self.remainder is not None:
                out = out + eps ** (N + 1) * np.asarray(self.remainder(t, x, eps))
            return out

        return rhs


@dataclass(frozen=True)
class PlanarField:
    """Autonomous planar vector field ``z -> f(z)``, vectorised over leading axes.

    ``jacobian`` (optional) maps z of shape (2,) to a 2x2 matrix; without it,
    callers fall back to finite differences.
    """

    func: Callable[[np.ndarray], np.ndarray]
    label: str = ""
    jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __call__(self, z) -> np.ndarray:
        return np.asarray(self.func(np.asarray(z, dtype=float)), dtype=float)

    def rhs(self, t, z):
        return self(z)


def check_periodicity(
    f: Field, period: float, domain=DEFAULT_DOMAIN, n: int = 16, seed: int = 0
) -> float:
    """Max |f(t+T, x) - f(t, x)| over a 16-point t-grid and sampled x in ``domain``."""
    rng = np.random.default_rng(seed)
    lo = np.array([d[0] for d in domain], dtype=float)
    hi = np.array([d[1] for d in domain], dtype=float)
    xs = lo + (hi - lo) * rng.random((n, 2))
    worst = 0.0
    for t, x in zip(np.linspace(0.0, period, n, endpoint=False), xs):
        a = np.asarray(f(t, x), dtype=float)
        b = np.asarray(f(t + period, x), dtype=float)
        worst = max(worst, float(np.max(np.abs(b - a))))
    return worst


# --------------------------------------------------------------------------
# fields from expressions


def expr_field(exprs: Sequence[str], variables=DEFAULT_VARIABLES) -> Optional[Field]:
    """Compile a pair of expressions in (t, x1, x2) into a vectorised field.

    Returns None when both components are the literal constant 0.
    """
    nodes = [parse_expr(e, variables) for e in exprs]
    if all(is_zero(n) for n in nodes):
        return None
    funcs = [compile_expr(n) for n in nodes]

    def F(t, x):
        x = np.asarray(x, dtype=float)
        env = {"t": t, "x1": x[..., 0], "x2": x[..., 1]}
        return np.stack([np.broadcast_to(f(env), x.shape[:-1]) for f in funcs], axis=-1)

    return F


def expr_remainder(exprs: Sequence[str]) -> Optional[Callable]:
    nodes = [parse_expr(e, {"t", "x1", "x2", "eps"}) for e in exprs]
    if all(is_zero(n) for n in nodes):
        return None
    funcs = [compile_expr(n) for n in nodes]

    def Fr(t, x, eps):
        x = np.asarray(x, dtype=float)
        env = {"t": t, "x1": x[..., 0], "x2": x[..., 1], "eps": eps}
        return np.stack([np.broadcast_to(f(env), x.shape[:-1]) for f in funcs], axis=-1)

    return Fr


def expr_planar_field(exprs: Sequence[str], label: str = "") -> PlanarField:
    """Autonomous planar field from two expressions in (x1, x2)."""
    F = expr_field(exprs, {"x1", "x2"})
    if F is None:
        return PlanarField(lambda z: np.zeros_like(z), label=label)
    return PlanarField(lambda z: F(0.0, z), label=label)


# --------------------------------------------------------------------------
# config documents

_FIELD_KEY = re.compile(r"^F([1-9][0-9]*)$")
SYSTEM_KEYS = {"period", "order", "remainder", "domain", "label"}


def _constant(value, key: str) -> float:
    if isinstance(value, bool):
        raise ConfigError(f"{key} must be a number")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        try:
            return float(compile_expr(parse_expr(value, ()))({}))
        except ExprError as exc:
            raise ConfigError(f"{key}: {exc}") from exc
    raise ConfigError(f"{key} must be a number or a constant expression")


def _pair(value, key: str) -> list:
    if (
        not isinstance(value, (list, tuple))
        or len(value) != 2
        or not all(isinstance(v, str) for v in value)
    ):
        raise ConfigError(f"{key} must be a list of two expression strings")
    return list(value)


def build_system(config: dict, check: bool = True) -> SystemDef:
    """Build a SystemDef from a parsed config document (a dict)."""
    extra = [
        k for k in config if k not in SYSTEM_KEYS and not _FIELD_KEY.match(k)
    ]
    if extra:
        raise ConfigError(f"unknown key(s): {', '.join(sorted(extra))}")
    for key in ("period", "order"):
        if key not in config:
            raise ConfigError(f"missing required key {key!r}")
    period = _constant(config["period"], "period")
    order = config["order"]
    if isinstance(order, bool) or not isinstance(order, int) or order < 1:
        raise ConfigError("order must be an integer >= 1")
    if period <= 0:
        raise ConfigError("period must be positive")
    present = {int(_FIELD_KEY.match(k).group(1)) for k in config if _FIELD_KEY.match(k)}
    missing = [i for i in range(1, order + 1) if i not in present]
    if missing:
        raise ConfigError(f"missing field(s): {', '.join(f'F{i}' for i in missing)}")
    beyond = sorted(i for i in present if i > order)
    if beyond:
        raise ConfigError(f"field F{beyond[0]} exceeds order {order}")

    domain = DEFAULT_DOMAIN
    if "domain" in config:
        try:
            domain = tuple((float(lo), float(hi)) for lo, hi in config["domain"])
        except (TypeError, ValueError) as exc:
            raise ConfigError("domain must be [[lo, hi], [lo, hi]]") from exc
        if len(domain) != 2 or any(lo >= hi for lo, hi in domain):
            raise ConfigError("domain must be [[lo, hi], [lo, hi]] with lo < hi")

    expressions = {}
    fields = []
    try:
        for i in range(1, order + 1):
            exprs = _pair(config[f"F{i}"], f"F{i}")
            expressions[f"F{i}"] = exprs
            fields.append(expr_field(exprs))
        remainder = None
        if "remainder" in config:
            exprs = _pair(config["remainder"], "remainder")
            expressions["remainder"] = exprs
            remainder = expr_remainder(exprs)
    except ExprError as exc:
        raise ConfigError(str(exc)) from exc

    system = SystemDef(
        period=period,
        order=order,
        fields=tuple(fields),
        remainder=remainder,
        domain=domain,
        label=str(config.get("label", "")),
        expressions=expressions,
    )
    if check:
        for i, f in enumerate(system.fields, start=1):
            if f is None:
                continue
            violation = check_periodicity(f, period, domain)
            if violation > PERIODICITY_TOL:
                raise PeriodicityError(i, violation)
    return system


def load_config(path) -> dict:
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib

    with open(path, "rb") as fh:
        try:
            return tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc


def emit_config(
    period_expr: str,
    order: int,
    fields: dict,
    remainder: Optional[Sequence[str]] = None,
    domain=None,
    label: str = "",
) -> str:
    """Serialise expression strings into a config document.

    ``fields`` maps 1-based order to a pair of expression strings; missing
    orders are written as zero fields.
    """
    import tomli_w

    doc: dict = {"period": period_expr, "order": order}
    if label:
        doc["label"] = label
    if domain is not None:
        doc["domain"] = [list(map(float, d)) for d in domain]
    for i in range(1, order + 1):
        doc[f"F{i}"] = list(fields.get(i, ("0", "0")))
    if remainder is not None:
        doc["remainder"] = list(remainder)
    return tomli_w.dumps(doc)


def normalise_expression(text: str, variables=DEFAULT_VARIABLES) -> str:
    return to_string(parse_expr(text, variables))
