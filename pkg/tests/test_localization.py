import math

import numpy as np
import pytest

from xychain import exact_oracle as eo
from xychain import freefermion as ff
from xychain import localization as loc
from xychain.model import (
    CapacityError, ChainSpec, DisorderSpec, EnsembleConfig, ObservablePair, UniformInterval,
)

from conftest import strong_disorder


def test_lr_constant_values():
    assert loc.lr_constant(1.0, math.log(2.0)) == pytest.approx(384.0, rel=1e-14)
    assert loc.lr_constant(1.0, 50.0) == pytest.approx(96.0, rel=1e-14)
    # 192 / (1 - e^-1)^2, evaluated with mpmath at 30 digits
    assert loc.lr_constant(2.0, 1.0) == pytest.approx(480.5088578068068, rel=1e-13)
    for eta in (0.0, -0.1):
        with pytest.raises(loc.NotLocalizedError):
            loc.lr_constant(1.0, eta)


def test_clustering_rhs_reference():
    # [1 + (1/pi)(2 - ln(0.1 / sqrt(10 pi)))] e^-10, evaluated with mpmath
    assert loc.clustering_rhs(1.0, 1.0, 10, 0.1) == pytest.approx(1.3248664664181926e-4, rel=1e-12)
    alpha, lam = loc.clustering_parameters(0.1, 1.0, 10)
    assert alpha == pytest.approx(0.01 / 40)
    assert lam == pytest.approx(0.5 * math.sqrt(math.pi / alpha))


def test_clustering_rhs_monotone():
    base = loc.clustering_rhs(1.0, 0.5, 6, 0.3)
    assert loc.clustering_rhs(2.0, 0.5, 6, 0.3) > base
    assert loc.clustering_rhs(1.0, 0.5, 7, 0.3) < base


def test_fit_decay_recovers_rate():
    d = np.arange(1, 30)
    fit = loc.fit_decay(d, 3.0 * np.exp(-0.4 * d), (5, 25))
    assert fit.eta == pytest.approx(0.4)
    assert fit.C == pytest.approx(3.0)
    assert fit.r2 == pytest.approx(1.0)
    assert fit.window == (5, 25) and fit.points == 21
    assert fit.exponential(0.95)


def test_fit_decay_flags_power_law():
    d = np.arange(1, 60)
    fit = loc.fit_decay(d, d**-1.5, (5, 50))
    assert fit.power_r2 > fit.r2
    assert not fit.exponential(0.95)


def test_fit_decay_needs_three_points():
    with pytest.raises(loc.FitError):
        loc.fit_decay([1, 2, 3], [1.0, 0.5, 0.2], (2, 3))


def test_single_site_correlator():
    cfg = EnsembleConfig(ChainSpec(1, (), (), 0.0), DisorderSpec(UniformInterval(0, 1), 1.0, 0, 3),
                         t_max=5, t_step=0.5, d_min=1, d_max=0)
    rep = loc.dynloc_correlator(cfg, fit=False)
    np.testing.assert_allclose(rep.grid_sup_mean, [1.0])
    np.testing.assert_allclose(rep.eigencorr_mean, [1.0])
    with pytest.raises(loc.FitError):
        loc.dynloc_correlator(cfg)


def test_zero_disorder_not_localized():
    cfg = EnsembleConfig(ChainSpec.uniform(60), DisorderSpec(UniformInterval(0, 1), 0.0, 0, 1),
                         t_max=50, t_step=0.1, d_min=5, d_max=40)
    rep = loc.dynloc_correlator(cfg)
    assert not rep.localized
    assert rep.summary()["localized"] is False


def test_grid_sup_below_eigencorrelator():
    for gamma in (0.0, 0.4):
        cfg = EnsembleConfig(ChainSpec.uniform(20, gamma=gamma), DisorderSpec(UniformInterval(0, 1), 4.0, 1, 6),
                             t_max=40, t_step=0.1, d_min=2, d_max=12)
        rep = loc.dynloc_correlator(cfg)
        assert rep.max_order_violation <= 1e-12
        assert np.all(rep.grid_sup_mean <= rep.eigencorr_mean + 1e-12)
        assert np.all(rep.grid_sup_mean >= 0)


def test_c_prime_recomputes_exactly():
    cfg = strong_disorder(30, 10, seed=4, t_max=20, t_step=0.2, d_min=2, d_max=15)
    rep = loc.dynloc_correlator(cfg)
    assert loc.lr_constant_from_fit(rep) == rep.summary()["C_prime"]
    assert loc.lr_constant_from_fit(rep) == 96 * rep.envelope_C / (-math.expm1(-rep.envelope_eta)) ** 2
    # the envelope really bounds every table entry
    assert np.all(rep.eigencorr_mean <= rep.envelope_C * np.exp(-rep.envelope_eta * rep.distance) * (1 + 1e-12))


def test_correlator_pairs_sources():
    cfg = strong_disorder(100, 1, margin=10, max_sources=8, d_min=5, d_max=40)
    pairs = loc.correlator_pairs(cfg)
    assert len(pairs) == 8
    assert pairs[0][0] == 11 and pairs[-1][0] == 50
    assert all(c[0] == j and c[-1] == j + 40 for j, c in pairs)


def _oracle_correlator(chain, times):
    """Grid-sup correlator rebuilt from oracle-evolved c-operators."""
    n = chain.n
    ctx = eo.build_hamiltonian(chain)
    cs = [eo.jordan_wigner_c(k, n).matrix for k in range(1, n + 1)]
    norm = 2 ** (n - 1)
    upper = np.zeros((times.size, n, n))
    lower = np.zeros((times.size, n, n))
    for a, t in enumerate(times):
        for j in range(n):
            cj = eo.heisenberg_evolve(ctx, eo.ManyBodyOperator(n, cs[j]), t / 2).matrix
            for k in range(n):
                upper[a, j, k] = abs(np.trace(cs[k].conj().T @ cj)) / norm
                lower[a, j, k] = abs(np.trace(cs[k] @ cj)) / norm
    return upper.max(axis=0) + lower.max(axis=0)


@pytest.mark.parametrize("gamma", [0.0, 0.5])
def test_engines_agree_on_correlator(gamma):
    cfg = EnsembleConfig(ChainSpec.uniform(5, gamma=gamma), DisorderSpec(UniformInterval(0, 1), 3.0, 9, 2),
                         t_max=3, t_step=0.5, d_min=1, d_max=4)
    rep = loc.dynloc_correlator(cfg, fit=False)
    times = cfg.time_grid()
    ref = np.mean([_oracle_correlator(cfg.realization(i), times) for i in range(2)], axis=0)
    np.testing.assert_allclose(rep.grid_sup_mean, ref[rep.j - 1, rep.k - 1], atol=1e-8)


def test_sweep_at_time_zero_is_static():
    cfg = strong_disorder(5, 2, t_max=1, t_step=1, d_min=1, d_max=4, oracle_cap=6)
    pair = ObservablePair.single("a", 1, "sigma_x", 2)
    sw = loc.spin_commutator_sweep(cfg, pair, times=[0.0])
    np.testing.assert_array_equal(sw.mean[:, 0], 0.0)
    # same-site static commutator through the oracle table
    ctx = eo.build_hamiltonian(cfg.realization(0))
    A, B = eo.pauli(3, "x", 5), eo.pauli(3, "y", 5)
    assert eo.commutator_norm_table(ctx, A, [B], [0.0])[0, 0] == pytest.approx(2.0)


def test_sweep_capacity_guard():
    cfg = strong_disorder(12, 1, d_min=1, d_max=5, oracle_cap=10)
    with pytest.raises(CapacityError):
        loc.spin_commutator_sweep(cfg, ObservablePair.single("a", 1, "sigma_z", 3))


def test_small_time_profile_shape():
    cfg = strong_disorder(6, 4, seed=3, t_max=20, t_step=0.25, d_min=1, d_max=5, oracle_cap=6)
    pair = ObservablePair.single("sigma_z", 1, "sigma_z", 4)
    prof = loc.small_time_profile(cfg, pair, sites=[4], step=0.1)
    sw = prof.sweep
    mid = sw.times.size // 2
    assert sw.times[mid] == 0.0 and sw.mean[0, mid] == 0.0
    # real symmetric H, A, B: profile even in t
    np.testing.assert_allclose(sw.mean[0], sw.mean[0, ::-1], atol=1e-12)
    assert np.isfinite(prof.slope[0]) and prof.slope[0] > 0
    assert np.all(sw.mean[0] <= prof.envelope_slope[0] * np.abs(sw.times) + 1e-15)


def test_wegner_report_properties():
    cfg = EnsembleConfig(ChainSpec.uniform(30), DisorderSpec(UniformInterval(0, 1), 4.0, 2, 200), d_min=1)
    eps = np.array([0.0, 0.001, 0.01, 0.05, 100.0])
    rep = loc.wegner_gap_stats(cfg, eps)
    assert rep.empirical_prob[0] == 0.0
    assert rep.empirical_prob[-1] == 1.0
    assert np.all(np.diff(rep.empirical_prob) >= 0)
    assert rep.gap_hist_counts.sum() == 200
    np.testing.assert_allclose(
        rep.distances,
        [np.min(np.abs(np.linalg.eigvalsh(ff.build_block_hamiltonian(cfg.realization(i)).A))) for i in range(200)],
        atol=1e-12,
    )


def test_clustering_rows_self_consistent():
    cfg = strong_disorder(6, 4, seed=5, t_max=10, t_step=0.25, d_min=1, d_max=5, oracle_cap=6)
    pair = ObservablePair.single("sigma_z", 1, "sigma_z", 5)
    rows = loc.clustering_check(cfg, pair, eta=0.5)
    assert len(rows) == 4
    for r in rows:
        assert r.skipped is None
        assert r.gamma == pytest.approx(r.oracle_gap, abs=1e-8)
        assert r.rhs == pytest.approx(loc.clustering_rhs(r.C_JK, 0.5, 4, r.gamma))
        ctx = eo.build_hamiltonian(cfg.realization(r.index))
        ref = abs(eo.ground_correlation(ctx, eo.pauli(1, "z", 6), eo.pauli(5, "z", 6)))
        assert r.lhs == pytest.approx(ref, abs=1e-12)


def test_clustering_needs_positive_eta():
    cfg = strong_disorder(6, 1, d_min=1, d_max=5, oracle_cap=6)
    with pytest.raises(loc.NotLocalizedError):
        loc.clustering_check(cfg, ObservablePair.single("sigma_z", 1, "sigma_z", 5), eta=0.0)


def test_strong_field_correlations_vanish():
    cfg = EnsembleConfig(ChainSpec.uniform(8), DisorderSpec(UniformInterval(2.5, 3.0), 1.0, 0, 3),
                         d_min=1, d_max=7, oracle_cap=8)
    rep = loc.correlation_decay_sweep(cfg)
    assert np.all(rep.oracle_zz_mean < 1e-12)
    off = rep.distance > 0
    assert np.all(rep.two_point_mean[off] < 1e-12)


def test_zero_disorder_correlations_not_exponential():
    cfg = EnsembleConfig(ChainSpec.uniform(200), DisorderSpec(UniformInterval(0, 1), 0.0, 0, 1),
                         d_min=5, d_max=50, margin=10, max_sources=8)
    rep = loc.correlation_decay_sweep(cfg)
    assert not rep.exponential
