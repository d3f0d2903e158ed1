from functools import partial

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import matern3_bruteforce, pair_count_in_shell, sample_matern3_oracle, torus_distances

from susphom.errors import ConfigError, InsufficientSamplesError, OverDenseError, SeparationError
from susphom.geometry import (
    CAPACITY_CONSTANT,
    PeriodicConfiguration,
    PointConfiguration,
    bernoulli_delete,
    bernoulli_keep_mask,
    default_offset_grid,
    dilate,
    estimate_intensity_j,
    estimate_pair_correlation,
    matern3_retain,
    min_torus_distance,
    periodize,
    sample_example26,
    sample_hardcore_poisson,
    sample_poisson,
)


def _pairwise(points, L):
    D = torus_distances(points, L)
    return D[np.triu_indices(len(points), k=1)]


# -- hardcore sampler --------------------------------------------------------------------


def test_zero_intensity_gives_empty_configuration():
    cfg = sample_hardcore_poisson(0.0, 6.0, 100.0, seed=3)
    assert len(cfg) == 0 and cfg.points.shape == (0, 3)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**64 - 1), st.integers(0, 1000))
def test_hardcore_invariant(seed, stream):
    cfg = sample_hardcore_poisson(1e-3, 6.0, 100.0, seed, stream=stream)
    assert np.all(_pairwise(cfg.points, cfg.L) >= 12.0)
    assert np.all((cfg.points >= -50.0) & (cfg.points < 50.0))
    cfg.validate()


def test_retention_matches_fixed_point_oracle_on_identical_proposals():
    rng = np.random.default_rng(11)
    for _ in range(30):
        L = 20.0
        n = rng.poisson(400)
        pts = rng.uniform(-L / 2, L / 2, size=(n, 3))
        marks = rng.random(n)
        np.testing.assert_array_equal(
            matern3_retain(pts, marks, L, 1.2), matern3_bruteforce(pts, marks, L, 1.2)
        )


def test_mean_count_matches_independent_sampler():
    counts = np.array([len(sample_hardcore_poisson(1e-3, 6.0, 100.0, 5, stream=s)) for s in range(200)])
    rng = np.random.default_rng(2024)
    oracle = np.array([len(sample_matern3_oracle(1e-3, 6.0, 100.0, rng)) for _ in range(200)])
    se = np.hypot(counts.std(ddof=1), oracle.std(ddof=1)) / np.sqrt(200)
    assert abs(counts.mean() - oracle.mean()) < 3 * se


def test_sampler_argument_checks():
    with pytest.raises(OverDenseError):
        sample_hardcore_poisson(10.0, 1.0, 20.0, 0)
    with pytest.raises(ConfigError):
        sample_hardcore_poisson(1e-3, 6.0, 24.0, 0)
    with pytest.raises(ConfigError):
        sample_hardcore_poisson(-1.0, 1.0, 20.0, 0)
    with pytest.raises(ConfigError):
        sample_hardcore_poisson(1e-3, 1.0, 20.0, -1)


def test_sampler_is_deterministic_per_seed_and_stream():
    a = sample_hardcore_poisson(2e-3, 1.1, 40.0, 123, stream=4)
    b = sample_hardcore_poisson(2e-3, 1.1, 40.0, 123, stream=4)
    c = sample_hardcore_poisson(2e-3, 1.1, 40.0, 123, stream=5)
    assert a.points.tobytes() == b.points.tobytes()
    assert a.points.tobytes() != c.points.tobytes()


def test_configuration_json_round_trip():
    cfg = sample_example26(4e-4, 0.5, 60.0, 9, conditional=True)
    back = PointConfiguration.from_json(cfg.to_json())
    assert back.points.tobytes() == cfg.points.tobytes()
    np.testing.assert_array_equal(back.weights, cfg.weights)
    doc = cfg.to_dict()
    assert {"version", "d", "L", "r_hc", "seed", "points"} <= set(doc)


def test_weights_must_be_probabilities():
    with pytest.raises(ConfigError):
        PointConfiguration(d=3, L=10.0, points=np.zeros((2, 3)), weights=[0.5, 1.5])
    cfg = PointConfiguration(d=3, L=10.0, points=np.zeros((2, 3)), weights=[0.5, 0.25])
    assert cfg.intensity == pytest.approx(0.75 / 1000)


# -- parent-satellite process ------------------------------------------------------------


def test_example26_satellites_sit_in_annulus():
    for seed in range(5):
        cfg = sample_example26(4e-4, 0.0, 120.0, seed)
        sats = np.nonzero(cfg.parents >= 0)[0]
        assert len(sats) == int(np.sum(cfg.parents == -1))  # beta = 0: every parent has one
        diff = cfg.points[sats] - cfg.points[cfg.parents[sats]]
        diff -= cfg.L * np.round(diff / cfg.L)
        r = np.linalg.norm(diff, axis=1)
        assert np.all((r >= 3.0 - 1e-12) & (r <= 4.0 + 1e-12))
        assert min_torus_distance(cfg.points, cfg.L) >= 3.0 - 1e-12


def test_example26_without_satellites_equals_parent_process():
    cfg = sample_example26(1e-12, 1.0, 2000.0, 4)
    parents = sample_hardcore_poisson(1e-12, 6.0, 2000.0, 4)
    assert np.all(cfg.parents == -1)
    np.testing.assert_array_equal(cfg.points, parents.points)
    cfg = sample_example26(4e-4, 1.0, 200.0, 4)
    parents = sample_hardcore_poisson(4e-4, 6.0, 200.0, 4)
    assert len(cfg) == len(parents) + int(np.sum(cfg.parents >= 0))
    np.testing.assert_array_equal(cfg.points[: len(parents)], parents.points)


def test_example26_conditional_sample_carries_weights():
    lam, beta = 4e-4, 0.5
    cfg = sample_example26(lam, beta, 120.0, 1, conditional=True)
    n = int(np.sum(cfg.parents == -1))
    np.testing.assert_allclose(cfg.weights[n:], lam**beta)
    assert len(cfg) == 2 * n
    with pytest.raises(ConfigError):
        periodize(cfg, 1.0, cfg.L, 0.1)


def test_example26_argument_checks():
    with pytest.raises(ConfigError):
        sample_example26(1e-4, 1.5, 100.0, 0)
    with pytest.raises(OverDenseError):
        sample_example26(1e-3, 0.5, 100.0, 0)


def test_conditional_and_plain_pair_intensities_agree():
    lam, beta, L = 4e-4, 0.5, 150.0
    ests = [
        estimate_intensity_j(partial(sample_example26, lam, beta, L, conditional=c), 2,
                             n_samples=60, seed=3, symmetrize=True)
        for c in (False, True)
    ]
    se = np.hypot(ests[0].stderr, ests[1].stderr)
    assert abs(ests[0].estimate - ests[1].estimate) < 3 * se
    assert ests[1].stderr < ests[0].stderr


def test_intensity_monotonicity_on_example26():
    f = partial(sample_example26, 4e-4, 0.5, 150.0, conditional=True)
    l1 = estimate_intensity_j(f, 1, n_samples=20, seed=1).estimate
    l2 = estimate_intensity_j(f, 2, n_samples=20, seed=1, symmetrize=True).estimate
    l3 = estimate_intensity_j(f, 3, n_samples=5, seed=1, max_rel_se=np.inf).estimate
    assert 0 < l2 <= CAPACITY_CONSTANT * l1
    assert 0 <= l3 <= CAPACITY_CONSTANT * l2


# -- dilation, deletion, periodization ---------------------------------------------------


def test_dilation_identity_and_similarity():
    cfg = sample_hardcore_poisson(5e-3, 1.0, 30.0, 2)
    assert dilate(cfg, 1.0) is cfg
    big = dilate(cfg, 2.0)
    assert big.L == 60.0 and big.r_hc == 2.0
    np.testing.assert_allclose(_pairwise(big.points, big.L), 2 * _pairwise(cfg.points, cfg.L), rtol=1e-14)
    with pytest.raises(ConfigError):
        dilate(cfg, 0.5)


def test_dilation_scales_first_intensity():
    base = partial(sample_hardcore_poisson, 5e-3, 1.0, 30.0)
    a = estimate_intensity_j(base, 1, n_samples=50, seed=8)
    b = estimate_intensity_j(lambda s: dilate(base(s), 3.0), 1, n_samples=50, seed=8)
    assert abs(b.estimate - a.estimate / 27) < 3 * (b.stderr + a.stderr / 27)


def test_bernoulli_delete_endpoints_and_determinism():
    cfg = sample_hardcore_poisson(5e-3, 1.0, 30.0, 2)
    np.testing.assert_array_equal(bernoulli_delete(cfg, 1.0, 7).points, cfg.points)
    assert len(bernoulli_delete(cfg, 0.0, 7)) == 0
    a, b = bernoulli_delete(cfg, 0.4, 7), bernoulli_delete(cfg, 0.4, 7)
    assert a.points.tobytes() == b.points.tobytes()
    with pytest.raises(ConfigError):
        bernoulli_delete(cfg, 1.2, 7)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**64 - 1), st.integers(0, 300), st.floats(0.0, 1.0))
def test_keep_mask_depends_only_on_seed_and_index(seed, n, p):
    long = bernoulli_keep_mask(n + 17, p, seed)
    np.testing.assert_array_equal(bernoulli_keep_mask(n, p, seed), long[:n])


def test_deletion_scales_intensities():
    base = partial(sample_hardcore_poisson, 0.05, 0.5, 10.0)
    p = 0.6

    def thinned(s):
        return bernoulli_delete(base(s), p, s)

    for j in (1, 2):
        kw = {"symmetrize": True} if j == 2 else {}
        full = estimate_intensity_j(base, j, n_samples=500, seed=21, **kw)
        kept = estimate_intensity_j(thinned, j, n_samples=500, seed=21, **kw)
        full_cells = full.cell_means[kept.argmax]
        full_se = full.cell_stderr[kept.argmax]
        assert abs(kept.estimate - p**j * full_cells) < 3 * (kept.stderr + p**j * full_se)


def test_periodize_window_and_separation():
    L, delta = 20.0, 0.1
    out = periodize(np.array([[L / 2 - 1, 0.0, 0.0], [0.0, 0.0, 0.0]]), 1.0, L, delta)
    assert len(out) == 1
    ok = periodize(np.array([[0.0, 0.0, 0.0], [2 + 2 * delta + 1e-6, 0.0, 0.0]]), 1.0, L, delta)
    assert len(ok) == 2
    with pytest.raises(SeparationError):
        periodize(np.array([[0.0, 0.0, 0.0], [2 + 2 * delta - 1e-6, 0.0, 0.0]]), 1.0, L, delta)
    with pytest.raises(ConfigError, match="unit ball"):
        periodize(np.zeros((1, 3)), 1.5, L, delta)
    with pytest.raises(ConfigError):
        periodize(np.zeros((1, 3)), 1.0, L, 0.0)


def test_separation_uses_nearest_torus_image():
    L = 10.0
    with pytest.raises(SeparationError):
        PeriodicConfiguration.from_spheres([[-4.0, 0, 0], [4.0, 0, 0]], 1.0, L, 0.1, check_window=False)


def test_periodic_configuration_translation_and_subset():
    cfg = periodize(sample_hardcore_poisson(2e-3, 1.1, 40.0, 3), 1.0, 40.0, 0.05)
    moved = cfg.translated(np.array([3.0, -7.0, 11.0]))
    assert len(moved) == len(cfg)
    assert np.all((moved.centers >= -20.0) & (moved.centers < 20.0))
    sub = cfg.subset([0, 2])
    np.testing.assert_array_equal(sub.centers, cfg.centers[[0, 2]])


# -- estimators --------------------------------------------------------------------------


def test_first_intensity_of_poisson():
    est = estimate_intensity_j(partial(sample_poisson, 0.02, 20.0), 1, n_samples=100, seed=4)
    assert abs(est.estimate - 0.02) < 3 * est.stderr


def test_pair_intensity_vanishes_inside_hardcore_zone():
    grid = np.array([[[0.0, 0.0, 0.0], [0.5, 0.0, 0.0]]])
    est = estimate_intensity_j(partial(sample_hardcore_poisson, 0.05, 1.1, 12.0), 2,
                               offset_grid=grid, n_samples=20, seed=5)
    assert est.estimate == 0.0


def test_pair_intensity_of_poisson_is_squared_intensity():
    grid = np.array([[[0.0, 0.0, 0.0], [3.0, 0.0, 0.0]]])
    est = estimate_intensity_j(partial(sample_poisson, 0.2, 10.0), 2, offset_grid=grid,
                               n_samples=200, seed=6)
    assert abs(est.estimate - 0.04) < 3 * est.stderr


def test_default_offset_grid_shape():
    g = default_offset_grid(2, 1.5)
    assert g.shape == (1 + 3 * 3, 2, 3)  # 2 r_hc coincides with 3
    assert np.all(g[:, 0] == 0)
    assert default_offset_grid(3, 1.5).shape[0] == 10**2
    assert default_offset_grid(2, 1.1).shape[0] == 13


def test_estimator_reports_insufficient_samples():
    with pytest.raises(InsufficientSamplesError):
        estimate_intensity_j(partial(sample_poisson, 1e-3, 10.0), 1, n_samples=3, seed=0)
    with pytest.raises(ConfigError):
        estimate_intensity_j(partial(sample_poisson, 1e-3, 10.0), 0, n_samples=3, seed=0)


def test_estimators_are_deterministic():
    f = partial(sample_hardcore_poisson, 0.05, 0.5, 10.0)
    a = estimate_intensity_j(f, 2, n_samples=10, seed=3, max_rel_se=np.inf)
    b = estimate_intensity_j(f, 2, n_samples=10, seed=3, max_rel_se=np.inf, workers=3)
    np.testing.assert_array_equal(a.cell_means, b.cell_means)


def test_stationarity_of_first_intensity():
    samples = [sample_hardcore_poisson(0.01, 1.0, 30.0, 12, stream=s) for s in range(200)]
    means, ses = [], []
    for shift in (np.zeros(3), np.array([7.0, -3.0, 11.0]), np.array([-14.0, 14.0, 2.5])):
        counts = []
        for cfg in samples:
            rel = cfg.points - shift
            rel -= cfg.L * np.round(rel / cfg.L)
            counts.append(np.sum(np.all(np.abs(rel) < 5.0, axis=1)) / 1000.0)
        means.append(np.mean(counts))
        ses.append(np.std(counts, ddof=1) / np.sqrt(len(counts)))
    for m, s in zip(means[1:], ses[1:]):
        assert abs(m - means[0]) < 3 * np.hypot(s, ses[0])


def test_pair_correlation_exclusion_bins():
    table = estimate_pair_correlation(partial(sample_hardcore_poisson, 0.05, 1.0, 14.0),
                                      [0.0, 0.5, 1.0, 1.5, 2.5, 3.5], n_samples=30, seed=2)
    np.testing.assert_array_equal(table.f2[:3], 0.0)
    np.testing.assert_allclose(table.h2[:3], -table.intensity**2)
    assert np.all(table.f2 >= 0)


def test_pair_correlation_of_poisson_is_flat():
    table = estimate_pair_correlation(partial(sample_poisson, 0.1, 12.0), np.linspace(0.5, 5.5, 11),
                                      n_samples=200, seed=3)
    assert np.all(np.abs(table.h2) < 3 * table.h2_stderr)
    assert np.all(np.abs(table.f2 - 0.01) < 3 * table.f2_stderr + 1e-12)


def test_pair_correlation_matches_direct_counts_and_sees_satellites():
    L = 80.0
    f = partial(sample_example26, 4e-4, 0.0, L)
    edges = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
    table = estimate_pair_correlation(f, edges, n_samples=10, seed=17)
    from susphom.streams import derive_seed

    shell = 4 * np.pi / 3 * (4.0**3 - 3.0**3)
    direct = [2 * pair_count_in_shell(f(derive_seed(17, "pair-correlation", i)).points, L, 3.0, 4.0) / (L**3 * shell)
              for i in range(10)]
    assert table.f2[2] == pytest.approx(np.mean(direct), rel=1e-12)
    assert table.h2[2] > 3 * table.h2_stderr[2]


def test_pair_correlation_rejects_bad_bins():
    f = partial(sample_poisson, 0.1, 12.0)
    with pytest.raises(ConfigError):
        estimate_pair_correlation(f, [1.0, 0.5], n_samples=5)
    with pytest.raises(ConfigError):
        estimate_pair_correlation(f, [1.0, 7.0], n_samples=5)
