"""Cross-engine invariant checks.

Each check compares the free-fermion engine against the exact oracle or
against an algebraic identity and returns a :class:`CheckResult` carrying
the worst residual seen.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace

import numpy as np

from . import exact_oracle as eo
from . import freefermion as ff
from .model import ChainSpec, EnsembleConfig


@dataclass(frozen=True)
class CheckResult:
    name: str
    residual: float
    tolerance: float
    realization: int | None = None
    seed: int | None = None

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.residual) and self.residual <= self.tolerance)

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        where = "" if self.realization is None else f" seed={self.seed} realization={self.realization}"
        return f"{tag} {self.name}: residual={self.residual:.3e} tol={self.tolerance:.1e}{where}"


def truncate_chain(spec: ChainSpec, n: int) -> ChainSpec:
    """First ``n`` sites of ``spec``."""
    if n >= spec.n:
        return spec
    return ChainSpec(n, spec.mu[: n - 1], spec.gamma[: n - 1], spec.nu[:n])


def car_residual(n: int) -> float:
    """Worst ``||{c_j, c_k^*} - delta_jk|| `` or ``||{c_j, c_k}||`` over all pairs."""
    cs = [eo.jordan_wigner_c(j, n).matrix for j in range(1, n + 1)]
    eye = np.eye(2**n)
    worst = 0.0
    for j, k in itertools.product(range(n), repeat=2):
        cj, ck = cs[j], cs[k]
        mixed = cj @ ck.conj().T + ck.conj().T @ cj - (eye if j == k else 0.0)
        same = cj @ ck + ck @ cj
        worst = max(worst, np.abs(mixed).max(), np.abs(same).max())
    return float(worst)


def orthogonality_residual(diag: ff.FermionDiagonalization) -> float:
    W = diag.W
    return float(np.abs(W @ W.T - np.eye(W.shape[0])).max())


def diagonalization_residual(bh: ff.BlockHamiltonian, diag: ff.FermionDiagonalization) -> float:
    """``||W M W^t - diag(lam, -lam)||_max / ||M||``."""
    W = diag.W
    res = np.abs(W @ bh.M @ W.T - np.diag(diag.spectrum())).max()
    return float(res / max(np.linalg.norm(bh.M, 2), 1e-300))


def unitarity_residual(diag: ff.FermionDiagonalization, times=(0.1, 1.0, 10.0)) -> float:
    worst = 0.0
    for t in times:
        P = ff.propagator_entries(diag, t)
        worst = max(worst, np.abs(np.linalg.norm(P, axis=0) - 1.0).max())
    return float(worst)


def evolution_residual(spec: ChainSpec, times=(0.1, 1.0, 10.0), ctx=None) -> float:
    """Oracle ``tau_t(c_j)`` against ``sum_k P_jk(2t) c_k + P_j,n+k(2t) c_k^*``."""
    n = spec.n
    ctx = eo.build_hamiltonian(spec) if ctx is None else ctx
    diag = ff.diagonalize_chain(spec, ff.ANISOTROPIC)
    cs = [eo.jordan_wigner_c(j, n).matrix for j in range(1, n + 1)]
    ops = np.stack(cs + [c.conj().T for c in cs])
    worst = 0.0
    for t in times:
        P = ff.propagator_entries(diag, 2.0 * t)
        for j in range(n):
            lhs = eo.heisenberg_evolve(ctx, eo.ManyBodyOperator(n, cs[j]), t).matrix
            rhs = np.tensordot(P[j], ops, axes=1)
            worst = max(worst, np.abs(lhs - rhs).max())
    return float(worst)


def free_fermion_levels(lam: np.ndarray) -> np.ndarray:
    """All ``sum_j s_j |lam_j|`` with ``s_j = +-1``, sorted."""
    a = np.abs(lam)
    signs = np.array(list(itertools.product((-1.0, 1.0), repeat=a.size)))
    return np.sort(signs @ a)


def spectrum_residual(spec: ChainSpec, ctx=None) -> float:
    ctx = eo.build_hamiltonian(spec) if ctx is None else ctx
    diag = ff.diagonalize_chain(spec, ff.ANISOTROPIC)
    return float(np.abs(ctx.energies - free_fermion_levels(diag.lam)).max())


def gap_residual(spec: ChainSpec, ctx=None) -> float:
    ctx = eo.build_hamiltonian(spec) if ctx is None else ctx
    gs = ff.ground_state_data(ff.diagonalize_chain(spec, ff.ISOTROPIC))
    return float(abs(ctx.gap - gs.gap))


GAUSSIAN_GRID = tuple(itertools.product((0.5, 1.0, 2.0), (0.5, 1.0), (0.1, 0.01)))


def gaussian_identity_residual(grid=GAUSSIAN_GRID) -> float:
    return float(max(
        abs(eo.gaussian_kernel_time(E, a, e) - eo.gaussian_kernel_frequency(E, a, e)) for E, a, e in grid
    ))


def corrupt_column(diag: ff.FermionDiagonalization, column: int = 0) -> ff.FermionDiagonalization:
    """Flip the sign of one column of ``W`` (negative control)."""
    W = diag.W.copy()
    W[:, column] *= -1.0
    return replace(diag, W=W)


def run_suite(config: EnsembleConfig, realizations: int | None = None, oracle_n: int | None = None,
              corrupt: bool = False) -> list[CheckResult]:
    """All cross-engine checks on the first ``realizations`` draws of ``config``.

    Free-fermion checks use the full chain; oracle checks use its first
    ``oracle_n`` sites (default ``min(n, oracle_cap, 8)``).
    """
    R = config.disorder.realizations if realizations is None else min(realizations, config.disorder.realizations)
    m = min(config.n, config.oracle_cap, 8) if oracle_n is None else oracle_n
    seed = config.disorder.base_seed
    worst: dict[str, tuple[float, float, int | None]] = {}

    def record(name, value, tol, index=None):
        if name not in worst or value > worst[name][0] or not np.isfinite(value):
            worst[name] = (value, tol, index)

    record("car", car_residual(min(m, 8)), 1e-12)
    for i in range(R):
        chain = config.realization(i)
        bh = ff.build_block_hamiltonian(chain)
        diag = ff.diagonalize(bh, ff.ANISOTROPIC)
        if corrupt:
            diag = corrupt_column(diag)
        record("orthogonality", orthogonality_residual(diag), 1e-10, i)
        record("diagonalization", diagonalization_residual(bh, diag), 1e-8, i)
        record("unitarity", unitarity_residual(diag), 1e-10, i)
        small = truncate_chain(chain, m)
        ctx = eo.build_hamiltonian(small, config.oracle_cap)
        record("propagator_expansion", evolution_residual(small, ctx=ctx), 1e-8, i)
        record("spectrum", spectrum_residual(small, ctx), 1e-8, i)
        if small.isotropic():
            record("gap", gap_residual(small, ctx), 1e-8, i)
    record("gaussian_identity", gaussian_identity_residual(), 1e-8)
    return [CheckResult(name, v, tol, idx, seed if idx is not None else None) for name, (v, tol, idx) in worst.items()]
