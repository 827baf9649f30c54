import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from modelaided import netsim
from modelaided.oracles import uplink
from modelaided.oracles.search import golden_section_max


def scenario(gains, pmax=1.0, noise=1.0, pc=1.0, mu=1.0, bandwidth=1.0):
    gains = np.asarray(gains, dtype=float)
    return netsim.UplinkScenario(np.zeros((gains.size, 2)), gains, noise, pmax, pc, mu, bandwidth)


def test_single_user_closed_form():
    sc = scenario([1.0])
    # log2(1 + 1) / (1 * 1 + 1)
    assert uplink.gee(sc, [1.0]) == pytest.approx(0.5, abs=1e-15)
    assert uplink.gee(sc, [0.0]) == 0.0
    assert uplink.sum_rate(sc, [3.0 / 4.0 * 4.0 / 3.0]) == pytest.approx(1.0)


def test_sinr_two_users_by_hand():
    sc = scenario([2.0, 3.0], pmax=2.0, noise=0.5)
    np.testing.assert_allclose(uplink.sinr(sc, np.array([1.0, 2.0])), [2.0 / 6.5, 6.0 / 2.5])


def test_zero_power_without_circuit_power_is_undefined():
    with pytest.raises(uplink.InfeasiblePowerError):
        uplink.gee(scenario([1.0], pc=0.0), [0.0])


@pytest.mark.parametrize("p", [[-0.1], [1.5], [np.nan], [0.5, 0.5]])
def test_infeasible_powers(p):
    with pytest.raises(uplink.InfeasiblePowerError):
        uplink.gee(scenario([1.0]), p)


@pytest.mark.parametrize("g", [0.5, 0.05, 0.01, 0.001])
def test_equal_gains_reach_brute_force(g):
    # full power is a symmetric stationary point here; the optimum need not be symmetric
    sc = scenario([g, g], pmax=10.0, noise=1.0, pc=1.0)
    res = uplink.dinkelbach_max_gee(sc)
    assert res.converged
    assert res.gee >= 0.999 * uplink.gee(sc, uplink.brute_force_max_gee(sc, 400))
    assert uplink.gee(sc, res.p[::-1]) == pytest.approx(res.gee, rel=1e-12)


def random_scenarios(n_users, count, seed):
    scen, _ = netsim.sample_uplink_batch(count, n_users, 500.0, float(netsim.dbm_to_watt(-5.0)), master_seed=seed)
    return scen


@pytest.mark.parametrize("sc", random_scenarios(5, 6, 1) + random_scenarios(1, 3, 2))
def test_dominates_full_power_and_lambda_monotone(sc):
    res = uplink.dinkelbach_max_gee(sc)
    assert res.converged
    assert res.gee >= uplink.gee(sc, uplink.full_power(sc)) * (1 - 1e-12)
    lam = np.array(res.lambdas)
    assert np.all(np.diff(lam) >= -1e-9 * lam[1:])
    assert np.all((res.p >= 0) & (res.p <= sc.pmax))


@pytest.mark.parametrize("sc", random_scenarios(2, 4, 3) + random_scenarios(3, 2, 4))
def test_matches_brute_force(sc):
    res = uplink.dinkelbach_max_gee(sc)
    bf = uplink.gee(sc, uplink.brute_force_max_gee(sc, 200))
    assert res.gee / bf >= 0.999


@given(st.floats(-20.0, 10.0), st.floats(-140.0, -80.0))
def test_single_user_matches_golden_section(pmax_dbm, gain_db):
    sc = netsim.UplinkScenario(np.zeros((1, 2)), np.array([10 ** (gain_db / 10)]),
                               float(netsim.dbm_to_watt(-104.0)), float(netsim.dbm_to_watt(pmax_dbm)))
    ref = golden_section_max(lambda p: uplink.gee(sc, [p]), 0.0, sc.pmax, tol=1e-14)
    res = uplink.dinkelbach_max_gee(sc)
    assert res.converged
    assert abs(res.gee - ref.fx) <= 1e-6 * ref.fx
    assert abs(res.p[0] - ref.x) <= 1e-6 * sc.pmax + 1e-3 * ref.x


def test_deterministic_per_seed():
    sc = random_scenarios(4, 1, 9)[0]
    a = uplink.dinkelbach_max_gee(sc, rng_seed=3)
    b = uplink.dinkelbach_max_gee(sc, rng_seed=3)
    np.testing.assert_array_equal(a.p, b.p)


def test_max_outer_is_reported():
    sc = random_scenarios(5, 1, 10)[0]
    res = uplink.dinkelbach_max_gee(sc, max_outer=1, n_random_starts=0)
    assert res.outer_iterations == 1
    assert res.status in (uplink.CONVERGED, uplink.MAX_OUTER)


def test_brute_force_limited():
    with pytest.raises(ValueError):
        uplink.brute_force_max_gee(random_scenarios(4, 1, 0)[0])
