import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from modelaided import netsim
from modelaided.oracles import cellular as C
from modelaided.pipeline import datasets as D

PARAMS = C.CellularParams()
RANGE = (10.0, 46.0)


def toy(n=20, provenance=D.MODEL, seed=0, transforms=(D.LOG10, D.IDENTITY)):
    r = np.random.default_rng(seed)
    X = np.column_stack([10 ** r.uniform(0, 2, n), r.normal(5, 2, n)])
    Y = 10 ** r.uniform(-5, -4, (n, 1))
    emp = n if provenance == D.EMPIRICAL else 0
    return D.Dataset(X, Y, provenance, emp, n - emp, transforms, (D.LOG10,), row_seeds=range(n))


def test_normalize_zero_mean_unit_std_and_round_trip():
    ds = toy(50)
    z = D.normalize(ds)
    np.testing.assert_allclose(z.features.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(z.features.std(axis=0), 1.0, atol=1e-12)
    np.testing.assert_allclose(z.targets.mean(axis=0), 0.0, atol=1e-12)
    back = D.denormalize(z)
    np.testing.assert_allclose(back.features, ds.features, rtol=1e-12)
    np.testing.assert_allclose(back.targets, ds.targets, rtol=1e-12)


@given(arrays(np.float64, (12, 2), elements=st.floats(-1e3, 1e3)))
def test_round_trip_property(X):
    ds = D.Dataset(X, np.ones((12, 1)), D.MODEL, 0, 12, (D.IDENTITY, D.IDENTITY), (D.IDENTITY,))
    back = D.denormalize(D.normalize(ds))
    np.testing.assert_allclose(back.features, X, rtol=1e-9, atol=1e-9 * (1 + np.abs(X).max()))


def test_external_statistics_are_applied_unchanged():
    ref = toy(40, seed=1)
    other = toy(10, seed=2)
    stats = D.compute_stats(ref)
    z = D.normalize(other, stats)
    assert z.stats == stats
    assert z.stats != D.compute_stats(other)
    np.testing.assert_allclose(z.features, stats.encode_features(other.features))


def test_constant_column_only_centred():
    ds = D.Dataset(np.column_stack([np.full(5, 3.0), np.arange(5.0)]), np.ones((5, 1)), D.MODEL, 0, 5,
                   (D.IDENTITY, D.IDENTITY), (D.IDENTITY,))
    z = D.normalize(ds)
    np.testing.assert_array_equal(z.features[:, 0], 0.0)
    assert z.stats.target_std == (1.0,)


def test_stats_dict_round_trip():
    s = D.compute_stats(toy())
    assert D.NormStats.from_dict(s.to_dict()) == s


def test_decoder_matches_decode_targets():
    s = D.compute_stats(toy())
    z = np.linspace(-2, 2, 7).reshape(-1, 1)
    np.testing.assert_allclose(s.decoder().decode(z), s.decode_targets(z), rtol=1e-14)


def test_mix_counts_and_layout():
    m, e = toy(10), toy(3, D.EMPIRICAL, seed=4)
    mixed = D.mix(m, e)
    assert (len(mixed), mixed.n_model, mixed.n_empirical, mixed.provenance) == (13, 10, 3, D.MIXED)
    np.testing.assert_array_equal(mixed.features[10:], e.features)
    with pytest.raises(ValueError):
        mixed.head(2)
    with pytest.raises(ValueError):
        D.mix(D.normalize(m), e)
    with pytest.raises(ValueError):
        D.mix(m, toy(3, D.EMPIRICAL, transforms=(D.IDENTITY, D.IDENTITY)))


def test_mix_with_empty_empirical_set():
    empty = toy(10, D.EMPIRICAL).head(0)
    mixed = D.mix(toy(5), empty)
    assert len(mixed) == 5 and mixed.n_empirical == 0


def test_shuffle_is_permutation():
    ds = toy(15)
    sh = D.shuffled(ds, 3)
    order = np.argsort(sh.row_seeds)
    np.testing.assert_array_equal(sh.features[order], ds.features)


def test_dataset_validation():
    with pytest.raises(ValueError):
        D.Dataset(np.ones((3, 1)), np.ones((2, 1)), D.MODEL, 0, 3, (D.IDENTITY,), (D.IDENTITY,))
    with pytest.raises(ValueError):
        D.Dataset(np.ones((3, 1)), np.ones((3, 1)), D.MODEL, 1, 1, (D.IDENTITY,), (D.IDENTITY,))
    with pytest.raises(ValueError):
        D.Dataset(np.ones((3, 1)), np.ones((3, 1)), "synthetic", 0, 3, (D.IDENTITY,), (D.IDENTITY,))


def test_case1_rows_are_normalized_powers():
    ds = D.build_case1_dataset(12, (-20.0, 0.0), 5, n_users=3)
    assert ds.features.shape == (12, 4) and ds.targets.shape == (12, 3)
    assert np.all((ds.targets >= 0) & (ds.targets <= 1))
    assert np.all(np.diff(ds.features[:, :3], axis=1) <= 0)
    assert np.all((ds.features[:, 3] >= -20) & (ds.features[:, 3] <= 0))
    assert ds.meta["excluded_unconverged"] == 0


def test_case1_prefix_property_and_worker_independence():
    a = D.build_case1_dataset(6, (-20.0, 0.0), 11, n_users=2)
    b = D.build_case1_dataset(3, (-20.0, 0.0), 11, n_users=2)
    c = D.build_case1_dataset(6, (-20.0, 0.0), 11, n_users=2, workers=2)
    np.testing.assert_array_equal(a.head(3).features, b.features)
    np.testing.assert_array_equal(a.targets, c.targets)
    assert a.row_seeds == c.row_seeds


def test_case1_powers_undo_sort():
    sc = netsim.sample_uplink_scenario(4, 500.0, 0.5, 3)
    x, order = D.case1_features(sc)
    np.testing.assert_array_equal(D.case1_powers(sc, np.ones(4) * 0.5, order), np.full(4, 0.25))
    p = D.case1_powers(sc, np.array([1.0, 0.5, 0.25, 2.0]), order)
    assert p[order[0]] == 0.5 and p[order[3]] == 0.5


def test_case2_model_prefix_and_provenance():
    a = D.build_case2_model_dataset(8, RANGE, 3, PARAMS)
    b = D.build_case2_model_dataset(4, RANGE, 3, PARAMS)
    np.testing.assert_array_equal(a.head(4).targets, b.targets)
    assert (a.provenance, a.n_model, a.n_empirical) == (D.MODEL, 8, 0)
    assert a.feature_transforms == (D.LOG10,) and a.target_transforms == (D.LOG10,)


def test_case2_empirical_differs_from_model_labels():
    kw = dict(n_mc=64, params=PARAMS, n_grid=101, oracle_seed=1)
    emp = D.build_case2_empirical_dataset(6, RANGE, seed=4, **kw)
    assert (emp.provenance, emp.n_empirical) == (D.EMPIRICAL, 6)
    ana = np.array([C.optimal_density_analytic(PARAMS.with_(tx_power=p)).lambda_star for p in emp.features[:, 0]])
    gap = np.abs(np.log(emp.targets[:, 0] / ana))
    assert np.median(gap) > 0.1
    empty = D.build_case2_empirical_dataset(0, RANGE, seed=4, **kw)
    assert len(empty) == 0 and empty.features.shape == (0, 1)


def test_case3_moment_shift_between_laws():
    uni, gau = D.build_case3_datasets(300, 300, 2, PARAMS)
    assert uni.provenance == D.MODEL and gau.provenance == D.EMPIRICAL
    np.testing.assert_allclose(uni.features[:, 1:].mean(axis=0), [10.0, 5.0], atol=0.4)
    np.testing.assert_allclose(gau.features[:, 1:].mean(axis=0), [11.0, 5.5], atol=0.15)
    assert uni.features[:, 1].std() > 2.5 * gau.features[:, 1].std()


def test_case3_degenerate_law():
    laws = C.ConsumptionLaws(static_gaussian=(11.0, 0.0), idle_gaussian=(5.5, 0.0))
    ds = D.build_case3_set(5, C.GAUSSIAN, 1, PARAMS, laws)
    np.testing.assert_array_equal(ds.features[:, 1:], np.tile([11.0, 5.5], (5, 1)))
    z = D.normalize(ds)
    assert np.all(np.isfinite(z.features))
