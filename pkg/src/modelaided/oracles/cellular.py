"""Area energy efficiency of a cellular downlink and its optimal BS density.

The analytic model assumes a Poisson deployment: load-dependent activity
probability, nearest-active-BS association, Rayleigh fading and a path loss
``K r^-alpha``. The Monte-Carlo oracle evaluates the same efficiency
expression with coverage estimated on simulated square-grid (or Poisson)
deployments and is the stand-in for measured data.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy import integrate

from .. import netsim
from ..seeding import derive_seed
from .search import golden_section_max

QUAD_EPSABS = 1e-9
QUAD_EPSREL = 1e-10

# 38.45 dB free-space loss at 1 m for a 2 GHz carrier
DEFAULT_PATH_GAIN = 10.0 ** (-3.845)
DEFAULT_BRACKET = (1e-7, 1e-4)  # 0.1 .. 100 BS/km^2


class MonteCarloPrecisionWarning(UserWarning):
    pass


@dataclass(frozen=True)
class CellularParams:
    """Parameters of the cellular energy-efficiency model (SI units, densities per m^2)."""

    path_loss_exponent: float = 4.0
    tx_power: float = 10.0
    user_density: float = 1e-4
    static_power: float = 10.0
    idle_power: float = 5.0
    amp_inefficiency: float = 1.0 / 0.35
    noise_power: float = float(netsim.dbm_to_watt(-104.0))
    sinr_threshold: float = 1.0
    bandwidth: float = 180e3
    path_gain: float = DEFAULT_PATH_GAIN

    def __post_init__(self):
        if not self.path_loss_exponent > 2:
            raise ValueError("path_loss_exponent must exceed 2")
        for name in ("tx_power", "static_power", "idle_power", "noise_power"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0")
        if not self.user_density > 0:
            raise ValueError("user_density must be positive")
        if not self.sinr_threshold > 0:
            raise ValueError("sinr_threshold must be positive")
        if not self.amp_inefficiency >= 1:
            raise ValueError("amp_inefficiency must be >= 1")
        if not self.bandwidth > 0 or not self.path_gain > 0:
            raise ValueError("bandwidth and path_gain must be positive")

    def with_(self, **changes) -> "CellularParams":
        return replace(self, **changes)


@dataclass(frozen=True)
class DensitySolution:
    lambda_star: float
    ee_star: float
    at_boundary: bool = False
    evaluations: int = 0
    max_standard_error: float = math.nan


def activity_prob(lambda_b, lambda_u):
    """Probability that a BS has at least one user (3.5-parameter load model)."""
    lambda_b = np.asarray(lambda_b, dtype=float)
    return 1.0 - (1.0 + lambda_u / (3.5 * lambda_b)) ** -3.5


@lru_cache(maxsize=256)
def interference_factor(theta: float, alpha: float) -> float:
    """``theta^(2/alpha) * int_{theta^(-2/alpha)}^inf du / (1 + u^(alpha/2))``."""
    if not alpha > 2:
        raise ValueError("path_loss_exponent must exceed 2")
    lower = theta ** (-2.0 / alpha)
    val, _ = integrate.quad(lambda u: 1.0 / (1.0 + u ** (alpha / 2.0)), lower, np.inf,
                            epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, limit=200)
    return theta ** (2.0 / alpha) * val


def coverage_prob(lambda_b: float, params: CellularParams) -> float:
    """P(SINR > theta) for the typical user of a thinned Poisson network.

    ``pi la int_0^inf exp(-pi la v (1 + rho) - theta s2 v^(alpha/2) / (K P)) dv``
    with ``la = p_a * lambda_b``, integrated in ``x = pi la v`` by adaptive
    quadrature (absolute tolerance ``QUAD_EPSABS``).
    """
    alpha = params.path_loss_exponent
    rho = interference_factor(params.sinr_threshold, alpha)
    la = float(activity_prob(lambda_b, params.user_density)) * lambda_b
    if params.tx_power == 0:
        return 0.0 if params.noise_power > 0 else 1.0 / (1.0 + rho)
    c = params.sinr_threshold * params.noise_power / (params.path_gain * params.tx_power)
    c /= (math.pi * la) ** (alpha / 2.0)
    if c == 0.0:
        return 1.0 / (1.0 + rho)
    val, _ = integrate.quad(lambda x: math.exp(-x * (1.0 + rho) - c * x ** (alpha / 2.0)), 0.0, np.inf,
                            epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, limit=200)
    return min(max(val, 0.0), 1.0)


def ee_from_coverage(lambda_b, pcov, params: CellularParams):
    """Efficiency expression shared by the analytic and Monte-Carlo oracles (bit/J)."""
    pa = activity_prob(lambda_b, params.user_density)
    rate = params.bandwidth * math.log2(1.0 + params.sinr_threshold)
    active = params.amp_inefficiency * params.tx_power + params.static_power
    return pa * rate * pcov / (pa * active + (1.0 - pa) * params.idle_power)


def area_ee(lambda_b: float, params: CellularParams) -> float:
    """``la * B log2(1+theta) * Pcov / (lambda_b * (p_a (P/eta + Pc) + (1 - p_a) Pidle))``."""
    return float(ee_from_coverage(lambda_b, coverage_prob(lambda_b, params), params))


def optimal_density_analytic(params: CellularParams, bracket=DEFAULT_BRACKET, tol: float = 1e-9) -> DensitySolution:
    """Golden-section maximization of ``area_ee`` over ``log10(lambda_b)``.

    ``tol`` is relative to the log10 bracket width. ``at_boundary`` is set
    when the maximizer is within ``tol`` of an endpoint.
    """
    lo, hi = math.log10(bracket[0]), math.log10(bracket[1])
    n_eval = 0

    def f(t):
        nonlocal n_eval
        n_eval += 1
        return area_ee(10.0 ** t, params)

    res = golden_section_max(f, lo, hi, tol=tol * (hi - lo) / max(1.0, abs(lo), abs(hi)))
    edge = tol * (hi - lo) * 10
    at_boundary = res.x - lo <= edge or hi - res.x <= edge
    return DensitySolution(10.0 ** res.x, res.fx, at_boundary, n_eval)


def optimal_density_dense_grid(params: CellularParams, bracket=DEFAULT_BRACKET, n_points: int = 2000) -> DensitySolution:
    """Maximizer of ``area_ee`` over a log-spaced grid; used to check the golden-section search."""
    lams = np.logspace(math.log10(bracket[0]), math.log10(bracket[1]), n_points)
    vals = np.array([area_ee(l, params) for l in lams])
    i = int(np.argmax(vals))
    return DensitySolution(float(lams[i]), float(vals[i]), i in (0, n_points - 1), n_points)


# --- Monte-Carlo coverage on simulated deployments ---------------------------

class CoverageTable:
    """Coverage ingredients for a log-spaced density grid, reusable across powers.

    Deployments are drawn once at unit density; a deployment of density
    ``lam`` is the same pattern scaled by ``1/sqrt(lam)``. Given the geometry
    of one realization (BS distances sorted as d_1 < d_2 < ...), the activity
    marks and the Rayleigh fading are averaged out exactly: the k-th closest
    BS serves with probability ``p_a (1 - p_a)^(k-1)``, the closer ones are
    idle, and each farther one interferes independently with probability
    ``p_a``. Only the geometry is sampled, which keeps the estimate smooth in
    the density. Serving candidates beyond ``max_rank`` carry negligible
    weight (``(1 - p_a)^max_rank``) and are dropped.
    """

    def __init__(self, kind: str, lambdas: np.ndarray, user_density: float, alpha: float, theta: float,
                 n_mc: int, rng_seed: int, radius: float = 12.0, max_rank: int = 16):
        if kind not in netsim.DEPLOYMENT_KINDS:
            raise ValueError(f"unknown deployment kind {kind!r}")
        if n_mc < 2:
            raise ValueError("n_mc must be >= 2")
        if not alpha > 2:
            raise ValueError("path_loss_exponent must exceed 2")
        self.kind = kind
        self.lambdas = np.asarray(lambdas, dtype=float)
        self.alpha = alpha
        self.theta = theta
        self.n_mc = n_mc
        window = 2.0 * radius + 2.0
        sorted_d = []
        for m in range(n_mc):
            dep = netsim.sample_deployment(kind, 1.0, window, derive_seed(rng_seed, "coverage-table", kind, m))
            d = np.sort(np.linalg.norm(dep.points - window / 2.0, axis=1))
            sorted_d.append(d[d <= radius])
        width = max(d.size for d in sorted_d)
        if min(d.size for d in sorted_d) <= max_rank:
            raise RuntimeError("too few BSs inside the simulation disk; enlarge radius")
        dist = np.full((n_mc, width), np.inf)
        for m, d in enumerate(sorted_d):
            dist[m, :d.size] = d
        K = max_rank
        self.serving = dist[:, :K].copy()  # (n_mc, K)
        # success probability factor theta*r/(1+theta*r) for every (serving k, farther j)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = theta * (self.serving[:, :, None] / dist[:, None, :]) ** alpha
            frac = np.where(np.isfinite(dist)[:, None, :], r / (1.0 + r), 0.0)
        frac *= np.arange(width)[None, None, :] > np.arange(K)[None, :, None]
        pa = activity_prob(self.lambdas, user_density)
        self.weights = pa[:, None] * (1.0 - pa[:, None]) ** np.arange(K)[None, :]  # (n_lam, K)
        self.log_interf = np.empty((self.lambdas.size, n_mc, K))
        for i, p in enumerate(pa):
            self.log_interf[i] = np.log1p(-p * frac).sum(axis=2)

    def coverage(self, params: CellularParams) -> tuple[np.ndarray, np.ndarray]:
        """Per-density coverage estimate and its Monte-Carlo standard error."""
        scale = params.sinr_threshold * params.noise_power / (params.path_gain * params.tx_power)
        r = self.serving[None, :, :] / np.sqrt(self.lambdas)[:, None, None]
        cond = np.exp(self.log_interf - scale * r ** self.alpha)
        per_real = np.einsum("lmk,lk->lm", cond, self.weights)
        return per_real.mean(axis=1), per_real.std(axis=1, ddof=1) / math.sqrt(self.n_mc)


_TABLES: dict = {}


def coverage_table(kind: str, bracket, n_grid: int, params: CellularParams, n_mc: int, rng_seed: int) -> CoverageTable:
    key = (kind, float(bracket[0]), float(bracket[1]), int(n_grid), params.user_density,
           params.path_loss_exponent, params.sinr_threshold, int(n_mc), int(rng_seed))
    table = _TABLES.get(key)
    if table is None:
        lams = np.logspace(math.log10(bracket[0]), math.log10(bracket[1]), n_grid)
        table = CoverageTable(kind, lams, params.user_density, params.path_loss_exponent,
                              params.sinr_threshold, n_mc, rng_seed)
        if len(_TABLES) > 8:
            _TABLES.pop(next(iter(_TABLES)))
        _TABLES[key] = table
    return table


def optimal_density_grid_mc(params: CellularParams, bracket=DEFAULT_BRACKET, n_mc: int = 1000,
                            rng_seed: int = 0, kind: str = netsim.GRID, n_grid: int = 401) -> DensitySolution:
    """Exhaustive search of the Monte-Carlo efficiency over a log-spaced density grid.

    Coverage comes from simulated deployments (nearest active BS serves,
    all other active BSs interfere, Rayleigh fading). The random geometry is
    fixed by ``rng_seed``, so the returned density is a deterministic
    function of the parameters.
    """
    table = coverage_table(kind, bracket, n_grid, params, n_mc, rng_seed)
    pcov, se = table.coverage(params)
    ee = ee_from_coverage(table.lambdas, pcov, params)
    ee_se = ee_from_coverage(table.lambdas, se, params)
    i = int(np.argmax(ee))
    spread = float(ee.max() - ee.min())
    max_se = float(ee_se.max())
    if max_se > 0.05 * spread:
        warnings.warn(f"Monte-Carlo standard error {max_se:.3g} exceeds 5% of the efficiency spread {spread:.3g}",
                      MonteCarloPrecisionWarning, stacklevel=2)
    return DensitySolution(float(table.lambdas[i]), float(ee[i]), i in (0, n_grid - 1), n_grid, max_se)


# --- power-consumption laws --------------------------------------------------

UNIFORM = "uniform"
GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class ConsumptionLaws:
    """Distributions of static and idle BS power consumption (W).

    The uniform law is the approximate model; the Gaussian law (truncated at
    0) stands for the true hardware.
    """

    static_uniform: tuple = (5.0, 15.0)
    idle_uniform: tuple = (2.5, 7.5)
    static_gaussian: tuple = (11.0, 1.0)  # mean, std
    idle_gaussian: tuple = (5.5, 0.5)
    tx_power_dbm: tuple = (30.0, 46.0)

    def __post_init__(self):
        for name in ("static_uniform", "idle_uniform", "tx_power_dbm"):
            lo, hi = getattr(self, name)
            if hi < lo:
                raise ValueError(f"{name}: upper bound below lower bound")
        for name in ("static_uniform", "idle_uniform"):
            if getattr(self, name)[0] < 0:
                raise ValueError(f"{name}: support must be non-negative")
        for name in ("static_gaussian", "idle_gaussian"):
            if getattr(self, name)[1] < 0:
                raise ValueError(f"{name}: std must be >= 0")


def _truncated_normal(rng: np.random.Generator, mean: float, std: float) -> float:
    if std == 0:
        return max(mean, 0.0)
    for _ in range(10_000):
        v = rng.normal(mean, std)
        if v >= 0:
            return float(v)
    raise ValueError("truncated normal rejection failed; mean too far below 0")


def draw_consumption(law: str, rng: np.random.Generator, laws: ConsumptionLaws = ConsumptionLaws()):
    """Transmit power (log-uniform over the dBm range), static and idle power."""
    lo, hi = laws.tx_power_dbm
    p = float(netsim.dbm_to_watt(rng.uniform(lo, hi)))
    if law == UNIFORM:
        pc = float(rng.uniform(*laws.static_uniform))
        pidle = float(rng.uniform(*laws.idle_uniform))
    elif law == GAUSSIAN:
        pc = _truncated_normal(rng, *laws.static_gaussian)
        pidle = _truncated_normal(rng, *laws.idle_gaussian)
    else:
        raise ValueError(f"unknown consumption law {law!r}")
    return p, pc, pidle


def consumption_model_oracle(params: CellularParams, consumption_draw: str, rng_seed: int,
                             laws: ConsumptionLaws = ConsumptionLaws(), bracket=DEFAULT_BRACKET, tol: float = 1e-9):
    """One labeled sample ``((P, Pc, Pidle), lambda*)`` with consumption drawn from the given law."""
    rng = np.random.default_rng(rng_seed)
    p, pc, pidle = draw_consumption(consumption_draw, rng, laws)
    sol = optimal_density_analytic(params.with_(tx_power=p, static_power=pc, idle_power=pidle), bracket, tol)
    return (p, pc, pidle), sol
