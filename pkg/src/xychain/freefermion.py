"""Free-fermion reduction of the XY chain.

The chain Hamiltonian is ``C^* M C`` with ``C = (c_1..c_n, c_1^*..c_n^*)``
and the real symmetric 2n x 2n matrix ``M = [[A, B], [-B, -A]]``.
Everything here is polynomial in n and works on dense numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ChainSpec, DegeneracyError, NumericalError

ANISOTROPIC = "anisotropic_svd"
ISOTROPIC = "isotropic_eigen"


@dataclass(frozen=True)
class BlockHamiltonian:
    n: int
    A: np.ndarray
    B: np.ndarray
    M: np.ndarray

    @property
    def is_block_diagonal(self) -> bool:
        return not np.any(self.B)


@dataclass(frozen=True)
class FermionDiagonalization:
    """Orthogonal ``W`` with ``W M W^t = diag(lam, -lam)``.

    ``U`` and ``V`` hold the left/right factors as rows
    (``U S V^t = diag(lam)``); on the isotropic path ``U = V``
    diagonalizes ``A`` and ``lam`` may be negative.
    """

    W: np.ndarray
    lam: np.ndarray
    U: np.ndarray
    V: np.ndarray
    path: str

    @property
    def n(self) -> int:
        return self.lam.size

    @property
    def energy_offset(self) -> float:
        """Sum of lam; the chain Hamiltonian is ``2 sum lam_j b_j^* b_j - offset``."""
        return float(np.sum(self.lam))

    def spectrum(self) -> np.ndarray:
        """Eigenvalues of ``M`` in the order of the rows of ``W``."""
        return np.concatenate([self.lam, -self.lam])


@dataclass(frozen=True)
class GroundStateData:
    E0: float
    gap: float
    occupation: np.ndarray
    projection_minus: np.ndarray

    @property
    def degenerate(self) -> bool:
        return self.gap == 0.0


def build_block_hamiltonian(spec: ChainSpec) -> BlockHamiltonian:
    n = spec.n
    mu = np.asarray(spec.mu)
    mg = mu * np.asarray(spec.gamma)
    A = np.diag(np.asarray(spec.nu)) - np.diag(mu, 1) - np.diag(mu, -1)
    B = -np.diag(mg, 1) + np.diag(mg, -1)
    M = np.block([[A, B], [-B, -A]])
    return BlockHamiltonian(n, A, B, M)


def tight_binding_permutation(n: int) -> np.ndarray:
    """Index order (1, n+1, 2, n+2, ...) as 0-based positions."""
    return np.arange(2 * n).reshape(2, n).T.ravel()


def reorder_tight_binding(bh: BlockHamiltonian) -> np.ndarray:
    """``M`` in the interleaved basis: 2x2 blocks ``nu_j J`` and ``-mu_j S(gamma_j)``."""
    p = tight_binding_permutation(bh.n)
    return bh.M[np.ix_(p, p)]


def _fix_signs(rows: np.ndarray) -> np.ndarray:
    # largest-magnitude entry of each row made positive; first index wins ties
    idx = np.argmax(np.abs(rows), axis=1)
    signs = np.sign(rows[np.arange(rows.shape[0]), idx])
    signs[signs == 0] = 1.0
    return signs


def diagonalize(bh: BlockHamiltonian, path: str = ANISOTROPIC) -> FermionDiagonalization:
    """Diagonalize ``M`` through ``A + B`` (SVD) or through ``A`` alone.

    The isotropic path requires ``B = 0`` and keeps the signed
    eigenvalues of ``A``.
    """
    n = bh.n
    try:
        if path == ANISOTROPIC:
            P, s, Qt = np.linalg.svd(bh.A + bh.B)
            order = np.argsort(s, kind="stable")
            lam = s[order]
            U = P.T[order]
            V = Qt[order]
            signs = _fix_signs(U)
            U = U * signs[:, None]
            V = V * signs[:, None]
        elif path == ISOTROPIC:
            if not bh.is_block_diagonal:
                raise ValueError("isotropic path requires B = 0")
            lam, Q = np.linalg.eigh(bh.A)
            U = Q.T * _fix_signs(Q.T)[:, None]
            V = U
        else:
            raise ValueError(f"unknown path {path!r}")
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"diagonalization did not converge: {exc}") from exc
    W = np.empty((2 * n, 2 * n))
    W[:n, :n] = W[n:, n:] = 0.5 * (V + U)
    W[:n, n:] = W[n:, :n] = 0.5 * (V - U)
    return FermionDiagonalization(W, lam, U, V, path)


def diagonalize_chain(spec: ChainSpec, path: str | None = None) -> FermionDiagonalization:
    """Shortcut picking the isotropic path whenever ``B`` vanishes."""
    bh = build_block_hamiltonian(spec)
    if path is None:
        path = ISOTROPIC if bh.is_block_diagonal else ANISOTROPIC
    return diagonalize(bh, path)


def propagator_entries(diag: FermionDiagonalization, t: float) -> np.ndarray:
    """``exp(-i M t)`` assembled from the diagonalization."""
    phases = np.exp(-1j * t * diag.spectrum())
    return diag.W.T @ (phases[:, None] * diag.W)


def propagator_rows(diag: FermionDiagonalization, rows, cols, times) -> np.ndarray:
    """Entries ``exp(-i M t)[rows, cols]`` for every t; shape (len(times), len(rows), len(cols))."""
    times = np.asarray(times, dtype=float)
    W = diag.W
    rows = np.asarray(rows)
    cols = np.asarray(cols)
    phases = np.exp(-1j * np.outer(times, diag.spectrum()))
    left = phases[:, :, None] * W[:, rows][None, :, :]
    return np.einsum("tlr,lc->trc", left, W[:, cols], optimize=True)


def eigencorrelator(diag: FermionDiagonalization) -> np.ndarray:
    """``sum_l |W_lj| |W_lk|`` for all 2n x 2n index pairs.

    Bounds ``|exp(-iMt)_{jk}|`` uniformly in t.
    """
    absW = np.abs(diag.W)
    return absW.T @ absW


def ground_state_data(diag: FermionDiagonalization) -> GroundStateData:
    if diag.path != ISOTROPIC:
        raise ValueError("ground-state occupation needs the isotropic (signed) path")
    lam = diag.lam
    occupation = (lam < 0).astype(np.int8)
    U = diag.U
    projection = U.T @ (occupation[:, None] * U)
    return GroundStateData(
        E0=-float(np.sum(np.abs(lam))),
        gap=2.0 * float(np.min(np.abs(lam))),
        occupation=occupation,
        projection_minus=projection,
    )


def two_point_function(gs: GroundStateData, j: int, k: int) -> float:
    """``<psi_0, c_j^* c_k psi_0>`` for 1-based sites ``j, k``."""
    if gs.degenerate:
        raise DegeneracyError("ground state is degenerate (gap = 0)")
    return float(gs.projection_minus[j - 1, k - 1])
