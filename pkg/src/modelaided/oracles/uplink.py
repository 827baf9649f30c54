"""Global energy efficiency (GEE) of the multi-user uplink and its maximizers.

Rates are treated in bit/s/Hz internally and multiplied by the bandwidth
on output, so every GEE returned here is in bit/J.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from ..netsim import UplinkScenario

LN2 = math.log(2.0)

CONVERGED = "converged"
MAX_OUTER = "max_outer_reached"


class InfeasiblePowerError(ValueError):
    pass


def _check_power(scenario: UplinkScenario, p) -> np.ndarray:
    p = np.asarray(p, dtype=float).reshape(-1)
    if p.size != scenario.n_users:
        raise InfeasiblePowerError(f"expected {scenario.n_users} powers, got {p.size}")
    # tolerate round-off from log-domain solvers
    slack = 1e-12 * scenario.pmax
    if not np.all(np.isfinite(p)) or np.any(p < -slack) or np.any(p > scenario.pmax + slack):
        raise InfeasiblePowerError("powers must lie in [0, pmax]")
    return np.clip(p, 0.0, scenario.pmax)


def sinr(scenario: UplinkScenario, p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    rx = p * scenario.gains
    return rx / (scenario.noise_power + rx.sum(axis=-1, keepdims=True) - rx)


def _spectral_rate(scenario, p) -> np.ndarray:
    """Sum rate in bit/s/Hz; broadcasts over leading axes of ``p``."""
    rx = np.asarray(p, dtype=float) * (scenario.gains / scenario.noise_power)
    total = 1.0 + rx.sum(axis=-1, keepdims=True)
    # log2(1 + rx_k / (total - rx_k)) = log2(total) - log2(total - rx_k)
    return (np.log2(total) - np.log2(total - rx)).sum(axis=-1)


def _consumed(scenario, p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return scenario.amp_inefficiency * p.sum(axis=-1) + scenario.n_users * scenario.circuit_power


def sum_rate(scenario: UplinkScenario, p) -> float:
    p = _check_power(scenario, p)
    return float(scenario.bandwidth * _spectral_rate(scenario, p))


def consumed_power(scenario: UplinkScenario, p) -> float:
    p = _check_power(scenario, p)
    return float(_consumed(scenario, p))


def gee(scenario: UplinkScenario, p) -> float:
    """Sum rate over total consumed power, in bit/J."""
    p = _check_power(scenario, p)
    den = _consumed(scenario, p)
    if den <= 0:
        raise InfeasiblePowerError("zero circuit power with all-zero transmit powers gives 0/0")
    return float(scenario.bandwidth * _spectral_rate(scenario, p) / den)


def full_power(scenario: UplinkScenario) -> np.ndarray:
    return np.full(scenario.n_users, float(scenario.pmax))


def brute_force_max_gee(scenario: UplinkScenario, grid_points_per_user: int = 200) -> np.ndarray:
    """Exhaustive maximizer over a uniform power grid (endpoints 0 and pmax included).

    Cost grows as ``grid_points_per_user ** n_users``; limited to three users.
    """
    n = scenario.n_users
    if n > 3:
        raise ValueError("brute force is limited to n_users <= 3")
    if grid_points_per_user < 2:
        raise ValueError("need at least 2 grid points (0 and pmax)")
    levels = np.linspace(0.0, scenario.pmax, grid_points_per_user)
    best_p, best_val = None, -np.inf
    # sweep the first user's level in an outer loop to bound memory
    rest = np.array(list(itertools.product(levels, repeat=n - 1))).reshape(-1, n - 1)
    for p0 in levels:
        cand = np.column_stack([np.full(rest.shape[0], p0), rest])
        den = _consumed(scenario, cand)
        with np.errstate(divide="ignore", invalid="ignore"):
            val = np.where(den > 0, _spectral_rate(scenario, cand) / den, 0.0)
        i = int(np.argmax(val))
        if val[i] > best_val:
            best_val, best_p = val[i], cand[i].copy()
    return best_p


@dataclass
class PowerControlResult:
    p: np.ndarray
    gee: float
    status: str
    lambdas: list = field(default_factory=list)
    outer_iterations: int = 0
    sca_iterations: int = 0
    gap: float = math.nan

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED


class _Problem:
    """Normalized problem data: ``x_k = c_k p_k`` is the received SNR of user k."""

    def __init__(self, scenario: UplinkScenario, floor: float):
        self.c = scenario.gains / scenario.noise_power
        self.mu = scenario.amp_inefficiency
        self.pc_total = scenario.n_users * scenario.circuit_power
        self.qmin = math.log(scenario.pmax * floor)
        self.qmax = math.log(scenario.pmax)
        self.n = scenario.n_users

    def rate(self, p):
        x = self.c * p
        t = 1.0 + x.sum()
        return float(np.sum(np.log2(t) - np.log2(t - x)))

    def power(self, p):
        return float(self.mu * p.sum() + self.pc_total)

    def sinr(self, p):
        x = self.c * p
        return x / (1.0 + x.sum() - x)

    def surrogate(self, q, a, b, lam):
        """Concave minorant of rate - lam * power in log-power variables (value, gradient)."""
        e = np.exp(q)
        x = self.c * e
        d = 1.0 + x.sum() - x  # interference-plus-noise seen by each user
        log_sinr = np.log(x) - np.log(d)
        val = float(np.dot(a, log_sinr) / LN2 + b.sum() - lam * (self.mu * e.sum() + self.pc_total))
        grad = (a - x * (np.sum(a / d) - a / d)) / LN2 - lam * self.mu * e
        return val, grad


def _sca_inner(prob: _Problem, lam: float, p0: np.ndarray, tol: float, max_iter: int):
    """Maximize rate(p) - lam * power(p) by successive concave approximation.

    Each step replaces log2(1+g) by a*log2(g) + b, tight at the current SINR,
    and maximizes the resulting concave surrogate over the log-power box.
    Every step can only increase the true objective.
    """
    q = np.clip(np.log(np.maximum(p0, 1e-300)), prob.qmin, prob.qmax)
    p = np.exp(q)
    f = prob.rate(p) - lam * prob.power(p)
    bounds = [(prob.qmin, prob.qmax)] * prob.n
    it = 0
    for it in range(1, max_iter + 1):
        g = prob.sinr(p)
        a = g / (1.0 + g)
        b = np.log2(1.0 + g) - a * np.log2(g)
        res = minimize(lambda z: tuple(-v for v in prob.surrogate(z, a, b, lam)), q, jac=True,
                       method="L-BFGS-B", bounds=bounds,
                       options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 500})
        q_new = np.clip(res.x, prob.qmin, prob.qmax)
        p_new = np.exp(q_new)
        f_new = prob.rate(p_new) - lam * prob.power(p_new)
        if f_new < f:
            # surrogate solve was inexact; keep the monotone iterate
            break
        improvement = f_new - f
        q, p, f = q_new, p_new, f_new
        if improvement <= tol * max(1.0, abs(f)):
            break
    return p, f, it


def dinkelbach_max_gee(scenario: UplinkScenario, tol: float = 1e-9, max_outer: int = 50,
                       n_random_starts: int = 2, rng_seed: int = 0, sca_tol: float = 1e-12,
                       max_sca: int = 100, power_floor: float = 1e-10) -> PowerControlResult:
    """Maximize GEE with Dinkelbach's method.

    For a parameter ``lam`` the subproblem ``max rate(p) - lam * power(p)`` is
    solved by successive concave approximation, warm-started at the previous
    solution. Then ``lam <- rate(p*) / power(p*)``; the run stops once the
    subproblem optimum is below ``tol * power(p*)``. The whole iteration is
    repeated from full power, from full power on the strongest user with the rest near zero
    and from ``n_random_starts`` random points, and
    the best result is kept. Powers below ``power_floor * pmax`` are reported
    as 0.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    prob = _Problem(scenario, power_floor)
    rng = np.random.default_rng(rng_seed)
    starts = [full_power(scenario)]
    if scenario.n_users > 1:
        # asymmetric start: equal gains make full power a symmetric saddle
        lone = np.full(scenario.n_users, 1e-3 * scenario.pmax)
        lone[int(np.argmax(scenario.gains))] = scenario.pmax
        starts.append(lone)
    for _ in range(n_random_starts):
        starts.append(scenario.pmax * np.exp(rng.uniform(math.log(1e-4), 0.0, scenario.n_users)))

    best = None
    for p_start in starts:
        p = p_start
        lam = prob.rate(p) / prob.power(p)
        lambdas = [lam]
        status, sca_total, gap, outer = MAX_OUTER, 0, math.nan, 0
        for outer in range(1, max_outer + 1):
            p_new, f_new, n_sca = _sca_inner(prob, lam, p, sca_tol, max_sca)
            sca_total += n_sca
            den = prob.power(p_new)
            gap = f_new / den
            if f_new >= 0:
                p = p_new
                lam = prob.rate(p) / den
                lambdas.append(lam)
            if gap < tol:
                status = CONVERGED
                break
        cand = PowerControlResult(p, lam, status, lambdas, outer, sca_total, gap)
        if best is None or cand.gee > best.gee or (cand.gee == best.gee and cand.converged and not best.converged):
            best = cand

    p = np.where(best.p <= scenario.pmax * power_floor * (1 + 1e-9), 0.0, best.p)
    p = np.minimum(p, scenario.pmax)
    best.p = p
    best.lambdas = [lam * scenario.bandwidth for lam in best.lambdas]
    best.gee = gee(scenario, p)
    return best
