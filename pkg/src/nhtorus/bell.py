"""Partial Bell polynomials B_{p,q} by exact enumeration of multiplicity vectors.

    B_{p,q}(x_1, ..., x_{p-q+1}) = sum  p! / (b_1! ... b_k! * prod_j (j!)^{b_j})  prod_j x_j^{b_j}

over tuples of non-negative integers with sum_j b_j = q and sum_j j*b_j = p
(k = p - q + 1).  Coefficients are exact Python integers.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import factorial, prod

MAX_P = 20


@dataclass(frozen=True)
class BellMonomial:
    coefficient: int
    multiplicities: tuple  # (b_1, ..., b_{p-q+1})

    @property
    def degree(self) -> int:
        return sum(self.multiplicities)

    @property
    def weight(self) -> int:
        return sum(j * b for j, b in enumerate(self.multiplicities, start=1))


def _check(p: int, q: int) -> None:
    if not (isinstance(p, int) and isinstance(q, int)):
        raise TypeError("p and q must be integers")
    if not 1 <= q <= p <= MAX_P:
        raise ValueError(f"need 1 <= q <= p <= {MAX_P}, got p={p}, q={q}")


def _tuples(p: int, q: int):
    """Multiplicity vectors in lexicographic order, by pruned depth-first search."""
    k = p - q + 1
    b = [0] * k

    def dfs(j: int, parts_left: int, weight_left: int):
        # j is 1-based position; positions j..k can still absorb weight
        if j == k:
            # last slot is forced by the part count
            if parts_left * k == weight_left:
                b[k - 1] = parts_left
                yield tuple(b)
                b[k - 1] = 0
            return
        for bj in range(0, min(parts_left, weight_left // j) + 1):
            rest_parts = parts_left - bj
            rest_weight = weight_left - j * bj
            # remaining slots have sizes j+1..k
            if rest_parts * (j + 1) > rest_weight or rest_parts * k < rest_weight:
                continue
            b[j - 1] = bj
            yield from dfs(j + 1, rest_parts, rest_weight)
            b[j - 1] = 0

    yield from dfs(1, q, p)


def _coefficient(p: int, mult: tuple) -> int:
    denom = prod(factorial(b) * factorial(j) ** b for j, b in enumerate(mult, start=1))
    num = factorial(p)
    assert num % denom == 0
    return num // denom


@lru_cache(maxsize=None)
def bell_monomials(p: int, q: int) -> tuple:
    """All monomials of B_{p,q}, lexicographic in the multiplicity vector."""
    _check(p, q)
    return tuple(BellMonomial(_coefficient(p, m), m) for m in _tuples(p, q))


def bell_eval(p: int, q: int, args) -> float:
    """Evaluate B_{p,q} at scalar arguments x_1..x_{p-q+1}."""
    _check(p, q)
    args = list(args)
    if len(args) != p - q + 1:
        raise ValueError(f"B_{{{p},{q}}} takes {p - q + 1} arguments, got {len(args)}")
    total = 0
    for mono in bell_monomials(p, q):
        term = mono.coefficient
        for x, b in zip(args, mono.multiplicities):
            if b:
                term = term * x**b
        total = total + term
    return total
