"""Golden-section search for unimodal 1-D maximization."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

INVPHI = (math.sqrt(5.0) - 1.0) / 2.0  # 1/phi


@dataclass(frozen=True)
class SearchResult:
    x: float
    fx: float
    iterations: int
    converged: bool


def golden_section_max(f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-10,
                       max_iter: int = 500) -> SearchResult:
    """Maximize ``f`` on ``[lo, hi]``.

    Stops when the bracket is narrower than ``tol * max(1, |a|, |b|)``. The bracket
    endpoints are evaluated as well, so a monotone ``f`` returns the best
    endpoint instead of a point just inside it.
    """
    if not hi > lo:
        raise ValueError("need lo < hi")
    if not tol > 0:
        raise ValueError("tol must be positive")
    a, b = float(lo), float(hi)
    c = b - INVPHI * (b - a)
    d = a + INVPHI * (b - a)
    fc, fd = f(c), f(d)
    it = 0
    while b - a > tol * max(1.0, abs(a), abs(b)) and it < max_iter:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INVPHI * (b - a)
            fd = f(d)
        it += 1
    x, fx = (c, fc) if fc >= fd else (d, fd)
    converged = it < max_iter
    for edge in (float(lo), float(hi)):
        fe = f(edge)
        if fe > fx:
            x, fx = edge, fe
    return SearchResult(x, fx, it, converged)
