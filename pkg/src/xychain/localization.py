"""Disorder-averaged localization estimators and bound checks.

All quantities here are ensemble statistics over realizations drawn from an
:class:`~xychain.model.EnsembleConfig`. Decay rates are fitted by ordinary
least squares of ``log(mean)`` against distance, and the averaged
Lieb-Robinson, small-time and clustering bounds are then evaluated with
the fitted constants.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import partial

import numpy as np
from scipy import stats
from scipy.linalg import eigvalsh_tridiagonal

from . import exact_oracle as eo
from . import freefermion as ff
from .ensemble import EnsembleResult, run_ensemble
from .model import ChainSpec, ConfigError, EnsembleConfig, Observable, ObservablePair


class FitError(ValueError):
    """Not enough usable distances to fit a decay rate."""


class NotLocalizedError(ValueError):
    """A decay rate is required but the fit gave eta <= 0."""


# entries of ground-state projections below this are rounding noise
NOISE_FLOOR = 1e-13


@dataclass(frozen=True)
class DecayFit:
    """``mean(d) ~ C exp(-eta d)`` over ``window``; ``power_r2`` is the log-log r^2."""

    C: float
    eta: float
    r2: float
    power_r2: float
    window: tuple[int, int]
    points: int

    def exponential(self, r2_min: float) -> bool:
        return self.eta > 0 and self.r2 >= r2_min and self.r2 > self.power_r2


def fit_decay(distances, values, window: tuple[int, int], floor: float = 0.0) -> DecayFit:
    d = np.asarray(distances, dtype=float)
    v = np.asarray(values, dtype=float)
    keep = (d >= window[0]) & (d <= window[1]) & np.isfinite(v) & (v > floor)
    if np.count_nonzero(keep) < 3:
        raise FitError(f"need at least 3 distances with data in window {window}")
    d, logv = d[keep], np.log(v[keep])
    lin = stats.linregress(d, logv)
    r2 = float(lin.rvalue**2)
    power = stats.linregress(np.log(d), logv)
    return DecayFit(
        C=float(np.exp(lin.intercept)),
        eta=float(-lin.slope),
        r2=r2,
        power_r2=float(power.rvalue**2),
        window=(int(window[0]), int(window[1])),
        points=int(d.size),
    )


def distance_profile(distance: np.ndarray, values: np.ndarray):
    """Average table entries sharing a distance; returns (distances, means)."""
    ds = np.unique(distance)
    return ds, np.array([values[distance == d].mean() for d in ds])


def correlator_pairs(config: EnsembleConfig) -> list[tuple[int, np.ndarray]]:
    """Left sites and their right partners (1-based, k >= j).

    With ``max_sources = 0`` every pair inside the margins is used. Otherwise
    up to ``max_sources`` evenly spaced left sites, each paired with
    distances ``0..d_max``.
    """
    n, m = config.n, config.margin
    if config.max_sources == 0:
        lo, hi = 1 + m, n - m
        if lo > hi:
            raise ConfigError("margin leaves no sites")
        return [(j, np.arange(j, hi + 1)) for j in range(lo, hi + 1)]
    lo, hi = 1 + m, n - m - config.d_max
    if lo > hi:
        raise ConfigError("margin and d_max leave no source sites")
    src = np.unique(np.round(np.linspace(lo, hi, config.max_sources)).astype(int))
    return [(int(j), np.arange(j, j + config.d_max + 1)) for j in src]


# --------------------------------------------------------------------------
# dynamical-localization correlator


@dataclass(frozen=True)
class LocalizationReport:
    """Ensemble table of propagator correlators and their decay fits.

    ``fit`` is the grid-maximum decay fit. ``envelope_C`` and
    ``envelope_eta`` bound the eigencorrelator means for every pair:
    ``eigencorr_mean <= envelope_C * exp(-envelope_eta * d)``.
    """

    j: np.ndarray
    k: np.ndarray
    distance: np.ndarray
    grid_sup_mean: np.ndarray
    grid_sup_stderr: np.ndarray
    eigencorr_mean: np.ndarray
    eigencorr_stderr: np.ndarray
    fit: DecayFit | None
    eigen_fit: DecayFit | None
    envelope_C: float | None
    envelope_eta: float | None
    realizations: int
    seed: int
    r2_min: float
    max_order_violation: float
    method_tag: str = "grid_sup+eigencorrelator"

    @property
    def fit_C(self) -> float:
        return self.fit.C

    @property
    def fit_eta(self) -> float:
        return self.fit.eta

    @property
    def fit_r2(self) -> float:
        return self.fit.r2

    @property
    def localized(self) -> bool:
        return self.fit is not None and self.fit.exponential(self.r2_min)

    def summary(self) -> dict:
        out = {
            "C": None, "eta": None, "r2": None, "C_prime": None,
            "window": None, "realizations": self.realizations, "seed": self.seed,
            "localized": self.localized, "envelope_C": self.envelope_C,
            "envelope_eta": self.envelope_eta,
        }
        if self.fit is not None:
            out.update(C=self.fit.C, eta=self.fit.eta, r2=self.fit.r2, window=list(self.fit.window),
                       power_law_r2=self.fit.power_r2)
        if self.envelope_eta is not None and self.envelope_eta > 0:
            out["C_prime"] = lr_constant(self.envelope_C, self.envelope_eta)
        return out


def _phase_tables(diag: ff.FermionDiagonalization, times: np.ndarray):
    freqs = diag.lam if diag.path == ff.ISOTROPIC else diag.spectrum()
    arg = np.outer(times, freqs)
    return np.cos(arg), np.sin(arg)


def _propagator_moduli(diag: ff.FermionDiagonalization, j: int, cols: np.ndarray, tables):
    """``|exp(-iMt)_{j,k}|`` and ``|exp(-iMt)_{j,n+k}|`` over the grid (0-based j, cols)."""
    n = diag.n
    cos, sin = tables
    if diag.path == ff.ISOTROPIC:
        U = diag.U
        w = U[:, j]
        re = (cos * w) @ U[:, cols]
        im = (sin * w) @ U[:, cols]
        return np.hypot(re, im), np.zeros((cos.shape[0], cols.size))
    W = diag.W
    w = W[:, j]
    both = np.concatenate([cols, cols + n])
    re = (cos * w) @ W[:, both]
    im = (sin * w) @ W[:, both]
    mod = np.hypot(re, im)
    return mod[:, : cols.size], mod[:, cols.size:]


def _dynloc_task(pairs, times, index, chain):
    diag = ff.diagonalize_chain(chain)
    n = diag.n
    ec = ff.eigencorrelator(diag)
    tables = _phase_tables(diag, times)
    grid, eig = [], []
    for j, cols in pairs:
        j0, c0 = j - 1, cols - 1
        upper, lower = _propagator_moduli(diag, j0, c0, tables)
        grid.append(upper.max(axis=0) + lower.max(axis=0))
        eig.append(ec[j0, c0] + ec[j0, c0 + n])
    grid, eig = np.concatenate(grid), np.concatenate(eig)
    return {"grid": grid, "eig": eig}, float(np.max(grid - eig))


def dynloc_correlator(config: EnsembleConfig, workers: int | None = None, fit: bool = True) -> LocalizationReport:
    """Ensemble mean of ``sup_t |M_jk(t)| + sup_t |M_j,n+k(t)|`` and of its eigenvector bound.

    The supremum is a maximum over ``config.time_grid()`` (a lower bound of
    the true supremum); the eigencorrelator ``sum_l |W_lj| |W_lk|`` (plus the
    ``n + k`` column) bounds it for all t.
    """
    pairs = correlator_pairs(config)
    times = config.time_grid()
    res = run_ensemble(config, partial(_dynloc_task, pairs, times), workers)
    j = np.concatenate([np.full(c.size, jj) for jj, c in pairs])
    k = np.concatenate([c for _, c in pairs])
    d = k - j
    grid, eig = res.mean("grid"), res.mean("eig")
    window = (config.d_min, config.d_max)
    grid_fit = eig_fit = env_C = env_eta = None
    if fit:
        grid_fit = fit_decay(*distance_profile(d, grid), window)
        eig_fit = fit_decay(*distance_profile(d, eig), window)
        if eig_fit.eta > 0:
            env_eta = eig_fit.eta
            env_C = float(np.max(eig * np.exp(env_eta * d)))
    return LocalizationReport(
        j=j, k=k, distance=d,
        grid_sup_mean=grid, grid_sup_stderr=res.stderr("grid"),
        eigencorr_mean=eig, eigencorr_stderr=res.stderr("eig"),
        fit=grid_fit, eigen_fit=eig_fit, envelope_C=env_C, envelope_eta=env_eta,
        realizations=res.count, seed=config.disorder.base_seed, r2_min=config.r2_min,
        max_order_violation=max(res.records),
    )


def lr_constant(C: float, eta: float) -> float:
    """Averaged Lieb-Robinson prefactor ``96 C / (1 - exp(-eta))^2``."""
    if not eta > 0:
        raise NotLocalizedError(f"decay rate must be positive, got eta={eta}")
    return 96.0 * C / (-np.expm1(-eta)) ** 2


def lr_constant_from_fit(report: LocalizationReport, envelope: bool = True) -> float:
    if envelope:
        if report.envelope_eta is None:
            raise NotLocalizedError("eigencorrelator envelope has no positive decay rate")
        return lr_constant(report.envelope_C, report.envelope_eta)
    if report.fit is None:
        raise NotLocalizedError("no fit available")
    return lr_constant(report.fit.C, report.fit.eta)


# --------------------------------------------------------------------------
# many-body commutator sweeps (exact oracle)


def _left_operator(pair: ObservablePair, n: int) -> eo.ManyBodyOperator:
    ops = [eo.local_operator(o, n) for o in pair.left]
    out = ops[0]
    for op in ops[1:]:
        out = out @ op
    return out


def _right_sites(pair: ObservablePair, n: int, sites) -> list[int]:
    if sites is None:
        return list(range(pair.right.site, n + 1))
    sites = [int(s) for s in sites]
    if min(sites) <= max(o.site for o in pair.left) or max(sites) > n:
        raise ConfigError("right sites must lie right of the left support and inside the chain")
    return sites


def _sweep_task(pair, sites, times, cap, index, chain):
    ctx = eo.build_hamiltonian(chain, cap)
    n = chain.n
    A = _left_operator(pair, n)
    Bs = [eo.local_operator(Observable(pair.right.kind, s, pair.right.unit), n) for s in sites]
    table = eo.commutator_norm_table(ctx, A, Bs, times)
    return {"norm": table, "sup": table.max(axis=1)}, None


@dataclass(frozen=True)
class CommutatorSweep:
    """Ensemble means of ``||[tau_t(A), B_k]||`` for right sites ``sites`` and times ``times``."""

    sites: np.ndarray
    distance: np.ndarray
    times: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    sup_mean: np.ndarray
    sup_stderr: np.ndarray
    norm_A: float
    norm_B: float
    realizations: int


def spin_commutator_sweep(config: EnsembleConfig, pair: ObservablePair, sites=None,
                          times=None, workers: int | None = None) -> CommutatorSweep:
    """Disorder average of commutator norms and of their time-grid maxima."""
    config.require_oracle()
    n = config.n
    sites = _right_sites(pair, n, sites)
    times = config.time_grid() if times is None else np.asarray(times, dtype=float)
    res = run_ensemble(config, partial(_sweep_task, pair, sites, times, config.oracle_cap), workers)
    nA = _left_operator(pair, n).norm()
    nB = eo.local_operator(Observable(pair.right.kind, sites[0], pair.right.unit), n).norm()
    return CommutatorSweep(
        sites=np.array(sites), distance=np.array(sites) - min(o.site for o in pair.left),
        times=times, mean=res.mean("norm"), stderr=res.stderr("norm"),
        sup_mean=res.mean("sup"), sup_stderr=res.stderr("sup"),
        norm_A=nA, norm_B=nB, realizations=res.count,
    )


@dataclass(frozen=True)
class SmallTimeProfile:
    """Commutator means on ``|t| <= 1`` with linear fits through the origin.

    ``slope`` is the least-squares coefficient, ``envelope_slope`` the
    smallest c with ``mean <= c |t|`` on the grid, and ``predicted_c`` the
    constant predicted from the fitted localization constants.
    """

    sweep: CommutatorSweep
    slope: np.ndarray
    envelope_slope: np.ndarray
    normalized_slope: np.ndarray
    predicted_c: float | None
    eta: float | None

    def predicted_bound(self) -> np.ndarray:
        """``c |t| ||A|| ||B|| exp(-eta d)`` on the sweep grid, per site."""
        s = self.sweep
        return (self.predicted_c * np.abs(s.times)[None, :] * s.norm_A * s.norm_B
                * np.exp(-self.eta * s.distance)[:, None])


def smalltime_constant(C_prime: float, eta: float, chain_bounds: tuple[float, float]) -> float:
    """Small-time constant ``c`` from the averaged Lieb-Robinson constant.

    ``chain_bounds = (max |mu_j| (1 + |gamma_j|), max |nu_j|)``; the sum over
    the terms of H touching J is folded into the exponential factor exactly
    by summing the geometric series over sites of J.
    """
    c_hop, c_field = chain_bounds
    return (4 * c_hop * C_prime * (1 + np.exp(eta)) + 2 * c_field * C_prime) / (-np.expm1(-eta))


def small_time_profile(config: EnsembleConfig, pair: ObservablePair, sites=None, step: float = 0.05,
                       envelope: LocalizationReport | None = None, workers: int | None = None) -> SmallTimeProfile:
    """Commutator growth near ``t = 0`` on a symmetric grid in ``[-1, 1]``."""
    m = int(round(1.0 / step))
    times = step * np.arange(-m, m + 1)
    sweep = spin_commutator_sweep(config, pair, sites, times, workers)
    t = np.abs(times)
    nz = t > 0
    slope = (sweep.mean[:, nz] @ t[nz]) / (t[nz] @ t[nz])
    env = np.max(sweep.mean[:, nz] / t[nz], axis=1)
    scale = sweep.norm_A * sweep.norm_B
    c = eta = None
    norm_slope = np.full(slope.shape, np.nan)
    if envelope is not None and envelope.envelope_eta is not None:
        eta = envelope.envelope_eta
        Cp = lr_constant(envelope.envelope_C, eta)
        tmpl = config.chain_template
        c_hop = max((abs(m_) * (1 + abs(g)) for m_, g in zip(tmpl.mu, tmpl.gamma)), default=0.0)
        c_field = max(abs(x) for x in config.disorder.bounds())
        c = smalltime_constant(Cp, eta, (c_hop, c_field))
        norm_slope = slope / (scale * np.exp(-eta * sweep.distance))
    return SmallTimeProfile(sweep, slope, env, norm_slope, c, eta)


@dataclass(frozen=True)
class LRBoundReport:
    """Measured averaged commutators against ``C' exp(-eta d)``."""

    C: float
    eta: float
    C_prime: float
    sweep: CommutatorSweep
    bound: np.ndarray
    smalltime: SmallTimeProfile | None = None
    clustering_rows: list = field(default_factory=list)

    @property
    def satisfied(self) -> np.ndarray:
        return self.sweep.sup_mean <= self.bound


def lr_bound_check(config: EnsembleConfig, pair: ObservablePair, envelope: LocalizationReport,
                   sites=None, workers: int | None = None) -> LRBoundReport:
    """Compare ``E sup_t ||[tau_t(A), B]||`` with ``C' ||A|| ||B|| exp(-eta d)`` from the envelope constants."""
    Cp = lr_constant_from_fit(envelope)
    sweep = spin_commutator_sweep(config, pair, sites, workers=workers)
    eta = envelope.envelope_eta
    bound = Cp * sweep.norm_A * sweep.norm_B * np.exp(-eta * sweep.distance)
    return LRBoundReport(envelope.envelope_C, eta, Cp, sweep, bound)


# --------------------------------------------------------------------------
# gap statistics


@dataclass(frozen=True)
class WegnerReport:
    n: int
    epsilon_grid: np.ndarray
    empirical_prob: np.ndarray
    slope_estimate: float
    distances: np.ndarray
    gap_hist_counts: np.ndarray
    gap_hist_edges: np.ndarray


def _distance_task(index, chain):
    n = chain.n
    if n == 1:
        ev = np.array(chain.nu)
    else:
        ev = eigvalsh_tridiagonal(np.array(chain.nu), -np.array(chain.mu))
    return None, float(np.min(np.abs(ev)))


def wegner_gap_stats(config: EnsembleConfig, epsilon_grid, bins: int = 50,
                     workers: int | None = None) -> WegnerReport:
    """Empirical ``P(dist(0, sigma(A)) < eps)`` and its slope against ``eps * n``."""
    if not config.chain_template.isotropic():
        raise ConfigError("gap statistics need an isotropic chain")
    eps = np.asarray(epsilon_grid, dtype=float)
    res = run_ensemble(config, _distance_task, workers)
    dist = np.array(res.records)
    prob = (dist[None, :] < eps[:, None]).mean(axis=1)
    x = eps * config.n
    slope = float(x @ prob / (x @ x)) if np.any(x > 0) else float("nan")
    counts, edges = np.histogram(2 * dist, bins=bins)
    return WegnerReport(config.n, eps, prob, slope, dist, counts, edges)


# --------------------------------------------------------------------------
# clustering inequality


def clustering_rhs(C_JK: float, eta: float, d: int, gap: float, norm_A: float = 1.0, norm_B: float = 1.0) -> float:
    """Right side of the clustering bound
    ``[1 + C/pi (2 - ln(gap / sqrt(pi eta d)))] ||A|| ||B|| exp(-eta d)``."""
    return (1.0 + C_JK / np.pi * (2.0 - np.log(gap / np.sqrt(np.pi * eta * d)))) * norm_A * norm_B * np.exp(-eta * d)


def clustering_parameters(gap: float, eta: float, d: int) -> tuple[float, float]:
    """``alpha = gap^2 / (4 eta d)`` and ``lambda = sqrt(pi / alpha) / 2``."""
    alpha = gap**2 / (4.0 * eta * d)
    return alpha, 0.5 * np.sqrt(np.pi / alpha)


@dataclass(frozen=True)
class ClusteringRow:
    index: int
    gamma: float
    oracle_gap: float
    d: int
    C_JK: float
    alpha: float
    lam: float
    lhs: float
    rhs: float
    eta: float
    skipped: str | None = None

    @property
    def satisfied(self) -> bool:
        return self.skipped is None and self.lhs <= self.rhs

    @property
    def within_tolerance(self) -> bool:
        return self.skipped is None and self.lhs <= 1.05 * self.rhs

    @property
    def flagged(self) -> bool:
        """lhs exceeds rhs but stays inside the 5% grid-maximum slack."""
        return self.skipped is None and self.rhs < self.lhs <= 1.05 * self.rhs


def _clustering_task(pair, times, cap, eta, gap_tol, index, chain):
    n = chain.n
    d = pair.distance
    diag = ff.diagonalize_chain(chain)
    gamma = ff.ground_state_data(diag).gap
    ctx = eo.build_hamiltonian(chain, cap)
    if not gamma > gap_tol:
        return None, ClusteringRow(index, gamma, ctx.gap, d, *([np.nan] * 5), eta=eta, skipped="degenerate ground state")
    A = _left_operator(pair, n)
    B = eo.local_operator(pair.right, n)
    nA, nB = A.norm(), B.norm()
    live = times[times > 0]
    norms = eo.commutator_norm_series(ctx, A, B, live)
    C_JK = float(np.max(norms * np.exp(eta * d) / (np.minimum(live, 1.0) * nA * nB)))
    alpha, lam = clustering_parameters(gamma, eta, d)
    rhs = clustering_rhs(C_JK, eta, d, gamma, nA, nB)
    B_trunc = B - eo.identity(n).scale(eo.expectation(ctx, B))
    psi = ctx.ground_vector
    lhs = abs(np.vdot(psi, A.matrix @ (B_trunc.matrix @ psi)))
    return None, ClusteringRow(index, gamma, ctx.gap, d, C_JK, alpha, lam, float(lhs), float(rhs), eta)


def clustering_check(config: EnsembleConfig, pair: ObservablePair, eta: float,
                     gap_tol: float = 1e-12, workers: int | None = None) -> list[ClusteringRow]:
    """Per-realization check of the gap-logarithm clustering bound.

    ``C(J,K)`` is the smallest constant making the zero-velocity bound hold
    over the time grid at decay rate ``eta``.
    """
    if not eta > 0:
        raise NotLocalizedError("clustering check needs eta > 0")
    if not config.chain_template.isotropic():
        raise ConfigError("clustering check is implemented for isotropic chains")
    config.require_oracle()
    pair.validate_for(config.n)
    times = config.time_grid()
    res = run_ensemble(config, partial(_clustering_task, pair, times, config.oracle_cap, eta, gap_tol), workers)
    return list(res.records)


# --------------------------------------------------------------------------
# ground-state correlation decay


@dataclass(frozen=True)
class CorrelationDecayReport:
    j: np.ndarray
    k: np.ndarray
    distance: np.ndarray
    two_point_mean: np.ndarray
    two_point_stderr: np.ndarray
    fit: DecayFit | None
    r2_min: float
    skipped: int
    realizations: int
    oracle_sites: np.ndarray | None = None
    oracle_zz_mean: np.ndarray | None = None
    oracle_fit: DecayFit | None = None

    @property
    def exponential(self) -> bool:
        return self.fit is not None and self.fit.exponential(self.r2_min)


def _correlation_task(pairs, oracle_ref, cap, gap_tol, index, chain):
    diag = ff.diagonalize_chain(chain, ff.ISOTROPIC)
    gs = ff.ground_state_data(diag)
    if not gs.gap > gap_tol:
        return None, index
    P = gs.projection_minus
    vals = np.concatenate([np.abs(P[j - 1, cols - 1]) for j, cols in pairs])
    out = {"two_point": vals}
    if oracle_ref is not None:
        n = chain.n
        ctx = eo.build_hamiltonian(chain, cap)
        zj = eo.pauli(oracle_ref, "z", n)
        row = [abs(eo.ground_correlation(ctx, zj, eo.pauli(k, "z", n))) for k in range(oracle_ref + 1, n + 1)]
        out["zz"] = np.array(row)
    return out, None


def correlation_decay_sweep(config: EnsembleConfig, r2_min: float = 0.9, oracle_ref: int | None = None,
                            gap_tol: float = 1e-12, workers: int | None = None) -> CorrelationDecayReport:
    """Disorder mean of ``|<c_j^* c_k>|`` by distance, and optionally of truncated zz correlations.

    The oracle part runs only when ``n <= oracle_cap``; it correlates
    ``sigma^z`` at ``oracle_ref`` (default site 1) with every site to its right.
    """
    if not config.chain_template.isotropic():
        raise ConfigError("correlation decay sweep needs an isotropic chain")
    pairs = correlator_pairs(config)
    use_oracle = config.n <= config.oracle_cap and config.n >= 2
    ref = (oracle_ref or 1) if use_oracle else None
    res = run_ensemble(config, partial(_correlation_task, pairs, ref, config.oracle_cap, gap_tol), workers)
    j = np.concatenate([np.full(c.size, jj) for jj, c in pairs])
    k = np.concatenate([c for _, c in pairs])
    d = k - j
    window = (config.d_min, config.d_max)
    mean = res.mean("two_point") if "two_point" in res.stats else np.full(d.size, np.nan)
    try:
        fit = fit_decay(*distance_profile(d, mean), window, floor=NOISE_FLOOR)
    except FitError:
        fit = None
    osites = ozz = ofit = None
    if ref is not None and "zz" in res.stats:
        osites = np.arange(ref + 1, config.n + 1)
        ozz = res.mean("zz")
        try:
            ofit = fit_decay(osites - ref, ozz, window, floor=NOISE_FLOOR)
        except FitError:
            ofit = None
    skipped = sum(1 for r in res.records if r is not None)
    return CorrelationDecayReport(
        j=j, k=k, distance=d, two_point_mean=mean,
        two_point_stderr=res.stderr("two_point") if "two_point" in res.stats else np.full(d.size, np.nan),
        fit=fit, r2_min=r2_min, skipped=skipped, realizations=config.disorder.realizations,
        oracle_sites=osites, oracle_zz_mean=ozz, oracle_fit=ofit,
    )
