"""Dense many-body simulator for short chains.

Basis convention: site 1 is the leftmost tensor factor and each site uses
(|up>, |down>) with ``sigma^z = diag(1, -1)``, so ``a = (sigma^x - i sigma^y)/2``
maps up to down.

The Hamiltonian always conserves the parity of the number of up spins, and
the total number when all anisotropies vanish. Eigenvectors are computed
sector by sector, and sweeps over many times work on sector blocks. That
keeps n = 10 sweeps affordable on a single core.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy import integrate

from .model import ORACLE_HARD_CAP, CapacityError, ChainSpec, DegeneracyError, NumericalError, Observable

_SX = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
_SY = np.array([[0.0, -1j], [1j, 0.0]])
_SZ = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
_LOWER = np.array([[0.0, 0.0], [1.0, 0.0]], dtype=complex)
_PAULI = {"x": _SX, "y": _SY, "z": _SZ}

DEFAULT_EPSILON = 1e-8


@dataclass(frozen=True)
class ManyBodyOperator:
    """Dense operator on (C^2)^{tensor n}; ``support`` is a 1-based closed interval."""

    n: int
    matrix: np.ndarray
    support: tuple[int, int] | None = None

    def __post_init__(self):
        if self.matrix.shape != (2**self.n, 2**self.n):
            raise ValueError(f"matrix must be {2**self.n} x {2**self.n}")

    @property
    def dim(self) -> int:
        return 2**self.n

    def __matmul__(self, other: ManyBodyOperator) -> ManyBodyOperator:
        return ManyBodyOperator(self.n, self.matrix @ other.matrix, _hull(self.support, other.support))

    def __add__(self, other: ManyBodyOperator) -> ManyBodyOperator:
        return ManyBodyOperator(self.n, self.matrix + other.matrix, _hull(self.support, other.support))

    def __sub__(self, other: ManyBodyOperator) -> ManyBodyOperator:
        return ManyBodyOperator(self.n, self.matrix - other.matrix, _hull(self.support, other.support))

    def scale(self, z: complex) -> ManyBodyOperator:
        return ManyBodyOperator(self.n, z * self.matrix, self.support)

    def dagger(self) -> ManyBodyOperator:
        return ManyBodyOperator(self.n, self.matrix.conj().T, self.support)

    def norm(self) -> float:
        return float(np.linalg.norm(self.matrix, 2))


def _hull(s1, s2):
    if s1 is None or s2 is None:
        return None
    return (min(s1[0], s2[0]), max(s1[1], s2[1]))


def _check_site(j: int, n: int) -> None:
    if not 1 <= j <= n:
        raise ValueError(f"site {j} outside [1, {n}]")


def _embed(local: dict[int, np.ndarray], n: int) -> np.ndarray:
    """Tensor product with ``local[j]`` at site j and identity elsewhere."""
    out = sp.identity(1, dtype=complex, format="csr")
    for site in range(1, n + 1):
        out = sp.kron(out, sp.csr_matrix(local.get(site, np.eye(2))), format="csr")
    return out.toarray()


def identity(n: int) -> ManyBodyOperator:
    return ManyBodyOperator(n, np.eye(2**n, dtype=complex), None)


def pauli(j: int, axis: str, n: int) -> ManyBodyOperator:
    _check_site(j, n)
    return ManyBodyOperator(n, _embed({j: _PAULI[axis]}, n), (j, j))


def lowering(j: int, n: int) -> ManyBodyOperator:
    """``a_j``."""
    _check_site(j, n)
    return ManyBodyOperator(n, _embed({j: _LOWER}, n), (j, j))


def jordan_wigner_c(j: int, n: int) -> ManyBodyOperator:
    """``c_j = sigma^z_1 ... sigma^z_{j-1} a_j``."""
    _check_site(j, n)
    factors = {i: _SZ for i in range(1, j)}
    factors[j] = _LOWER
    return ManyBodyOperator(n, _embed(factors, n), (1, j))


def local_operator(obs: Observable, n: int) -> ManyBodyOperator:
    j = obs.site
    _check_site(j, n)
    kind = obs.kind
    if kind == "c":
        return jordan_wigner_c(j, n)
    if kind == "c_dagger":
        return jordan_wigner_c(j, n).dagger()
    if kind == "matrix_unit":
        r, s = obs.unit
        m = np.zeros((2, 2), dtype=complex)
        m[r - 1, s - 1] = 1.0
    elif kind.startswith("sigma_"):
        m = _PAULI[kind[-1]]
    else:
        m = {
            "a": _LOWER,
            "a_dagger": _LOWER.T,
            "a_dagger_a": _LOWER.T @ _LOWER,
            "a_a_dagger": _LOWER @ _LOWER.T,
        }[kind]
    return ManyBodyOperator(n, _embed({j: m}, n), (j, j))


def up_counts(n: int) -> np.ndarray:
    """Number of up spins in each computational basis state."""
    states = np.arange(2**n)
    bits = (states[:, None] >> np.arange(n)[None, :]) & 1
    # bit value 0 encodes |up> (first basis vector of each site)
    return n - bits.sum(axis=1)


def hamiltonian_matrix(spec: ChainSpec) -> np.ndarray:
    """The XY Hamiltonian with free boundary conditions, as a dense real matrix."""
    n = spec.n
    dim = 2**n
    H = sp.csr_matrix((dim, dim), dtype=complex)
    for j in range(1, n):
        mu, g = spec.mu[j - 1], spec.gamma[j - 1]
        xx = _sparse_embed({j: _SX, j + 1: _SX}, n)
        yy = _sparse_embed({j: _SY, j + 1: _SY}, n)
        H = H + mu * ((1 + g) * xx + (1 - g) * yy)
    for j in range(1, n + 1):
        H = H + spec.nu[j - 1] * _sparse_embed({j: _SZ}, n)
    dense = H.toarray()
    return dense.real.copy()


def _sparse_embed(local, n):
    out = sp.identity(1, dtype=complex, format="csr")
    for site in range(1, n + 1):
        out = sp.kron(out, sp.csr_matrix(local.get(site, np.eye(2))), format="csr")
    return out


@dataclass(frozen=True)
class _Sector:
    label: int
    states: np.ndarray
    energies: np.ndarray
    vectors: np.ndarray


@dataclass(frozen=True)
class EvolutionContext:
    """Hamiltonian, its eigendecomposition (by sector) and ground-state data."""

    hamiltonian: ManyBodyOperator
    energies: np.ndarray
    sectors: tuple[_Sector, ...]
    ground_vector: np.ndarray
    ground_energy: float
    first_excited: float
    conserves_number: bool

    @property
    def n(self) -> int:
        return self.hamiltonian.n

    @property
    def gap(self) -> float:
        return self.first_excited - self.ground_energy

    @cached_property
    def vectors(self) -> np.ndarray:
        """Full eigenvector matrix, columns ordered like ``energies``."""
        dim = 2**self.n
        cols = []
        for sec in self.sectors:
            full = np.zeros((dim, sec.vectors.shape[1]))
            full[sec.states] = sec.vectors
            cols.append((sec.energies, full))
        E = np.concatenate([c[0] for c in cols])
        V = np.hstack([c[1] for c in cols])
        return V[:, np.argsort(E, kind="stable")]

    def to_eigenbasis(self, op: ManyBodyOperator | np.ndarray) -> dict[tuple[int, int], np.ndarray]:
        """Nonzero sector blocks ``V_p^* A V_q`` keyed by sector positions."""
        mat = op.matrix if isinstance(op, ManyBodyOperator) else op
        blocks = {}
        for p, sp_ in enumerate(self.sectors):
            for q, sq in enumerate(self.sectors):
                sub = mat[np.ix_(sp_.states, sq.states)]
                if not np.any(sub):
                    continue
                blocks[(p, q)] = sp_.vectors.T @ sub @ sq.vectors
        return blocks


def build_hamiltonian(spec: ChainSpec, oracle_cap: int = ORACLE_HARD_CAP) -> EvolutionContext:
    if spec.n > min(oracle_cap, ORACLE_HARD_CAP):
        raise CapacityError(f"n={spec.n} exceeds oracle cap {min(oracle_cap, ORACLE_HARD_CAP)}")
    H = hamiltonian_matrix(spec)
    counts = up_counts(spec.n)
    conserves = all(g == 0.0 for g in spec.gamma)
    labels = counts if conserves else counts % 2
    sectors = []
    try:
        for lab in np.unique(labels):
            states = np.flatnonzero(labels == lab)
            e, v = np.linalg.eigh(H[np.ix_(states, states)])
            sectors.append(_Sector(int(lab), states, e, v))
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"exact diagonalization failed: {exc}") from exc
    energies = np.sort(np.concatenate([s.energies for s in sectors]), kind="stable")
    # ground vector from the sector holding the minimum
    best = min(sectors, key=lambda s: s.energies[0])
    psi = np.zeros(2**spec.n)
    psi[best.states] = best.vectors[:, 0]
    e1 = energies[1] if energies.size > 1 else energies[0]
    return EvolutionContext(
        hamiltonian=ManyBodyOperator(spec.n, H.astype(complex), (1, spec.n)),
        energies=energies,
        sectors=tuple(sectors),
        ground_vector=psi.astype(complex),
        ground_energy=float(energies[0]),
        first_excited=float(e1),
        conserves_number=conserves,
    )


def heisenberg_evolve(ctx: EvolutionContext, A: ManyBodyOperator, t: float) -> ManyBodyOperator:
    """``exp(iHt) A exp(-iHt)``."""
    if A.n != ctx.n:
        raise ValueError("operator and Hamiltonian act on different chains")
    if t == 0:
        return A
    V = ctx.vectors
    E = ctx.energies
    phase = np.exp(1j * E * t)
    At = V.T @ A.matrix @ V
    At = phase[:, None] * At * phase.conj()[None, :]
    return ManyBodyOperator(A.n, V @ At @ V.T, None)


def commutator(A: ManyBodyOperator, B: ManyBodyOperator) -> ManyBodyOperator:
    return A @ B - B @ A


def commutator_norm(A: ManyBodyOperator | np.ndarray, B: ManyBodyOperator | np.ndarray) -> float:
    """Operator norm (largest singular value) of ``AB - BA``."""
    a = A.matrix if isinstance(A, ManyBodyOperator) else A
    b = B.matrix if isinstance(B, ManyBodyOperator) else B
    x = a @ b - b @ a
    if not np.any(x):
        return 0.0
    return float(np.linalg.norm(x, 2))


def _components(pairs):
    """Connected components of the bipartite row/column graph of block keys."""
    parent = {}

    def find(x):
        while parent.setdefault(x, x) != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for p, q in pairs:
        parent[find(("r", p))] = find(("c", q))
    groups = {}
    for p, q in pairs:
        groups.setdefault(find(("r", p)), []).append((p, q))
    return list(groups.values())


def _is_diagonal(mat: np.ndarray) -> bool:
    return not np.any(mat - np.diag(np.diag(mat)))


def commutator_norm_series(
    ctx: EvolutionContext,
    A: ManyBodyOperator,
    B: ManyBodyOperator,
    times,
    chunk: int = 32,
) -> np.ndarray:
    """``||[tau_t(A), B]||`` for every t in ``times``."""
    return commutator_norm_table(ctx, A, [B], times, chunk)[0]


def commutator_norm_table(
    ctx: EvolutionContext,
    A: ManyBodyOperator,
    Bs,
    times,
    chunk: int = 32,
) -> np.ndarray:
    """``||[tau_t(A), B]||`` for each B in ``Bs`` and each t; shape (len(Bs), len(times)).

    Works on sector blocks of the eigenbasis of H. When B is diagonal in
    the computational basis the commutator only keeps the entries of
    ``tau_t(A)`` joining states with different B-values, and the norm is
    taken over those sub-blocks. At ``t = 0`` the static commutator is
    evaluated in the computational basis, so disjoint supports give an
    exact zero.
    """
    times = np.asarray(times, dtype=float)
    out = np.empty((len(Bs), times.size))
    zero = times == 0
    for i, B in enumerate(Bs):
        if np.any(zero):
            out[i, zero] = commutator_norm(A, B)
    live = np.flatnonzero(~zero)
    if live.size == 0:
        return out
    diag_rows = [i for i, B in enumerate(Bs) if _is_diagonal(B.matrix)]
    other = [i for i in range(len(Bs)) if i not in diag_rows]
    if diag_rows:
        out[np.ix_(diag_rows, live)] = _diagonal_table(
            ctx, A, [np.diag(Bs[i].matrix).real for i in diag_rows], times[live], chunk
        )
    for i in other:
        if _is_diagonal(A.matrix):
            # ||[tau_t(A), B]|| = ||[A, tau_{-t}(B)]||
            out[i, live] = _diagonal_table(ctx, Bs[i], [np.diag(A.matrix).real], -times[live], chunk)[0]
        else:
            out[i, live] = _general_series(ctx, A, Bs[i], times[live], chunk)
    return out


def _evolved_blocks(ctx, blocks, ts):
    """``tau_t(A)`` per nonzero sector block, in the computational basis of each sector."""
    secs = ctx.sectors
    ph = [np.exp(1j * np.outer(ts, s.energies)) for s in secs]
    out = {}
    for (p, q), a in blocks.items():
        at = ph[p][:, :, None] * a[None] * ph[q].conj()[:, None, :]
        out[(p, q)] = secs[p].vectors @ at @ secs[q].vectors.T
    return out


def _diagonal_table(ctx, A, diagonals, ts, chunk):
    secs = ctx.sectors
    blocks = ctx.to_eigenbasis(A)
    comps = _components(sorted(blocks))
    hermitian = np.array_equal(A.matrix, A.matrix.conj().T)
    if len(diagonals) == 1 and np.unique(diagonals[0]).size == 2 and all(len(c) == 1 for c in comps):
        return _two_valued_series(ctx, blocks, diagonals[0], ts, chunk, hermitian)[None, :]
    res = np.zeros((len(diagonals), ts.size))
    for start in range(0, ts.size, chunk):
        sl = slice(start, start + chunk)
        C = _evolved_blocks(ctx, blocks, ts[sl])
        for i, b in enumerate(diagonals):
            best = np.zeros(ts[sl].size)
            for comp in comps:
                if len(comp) == 1:
                    (p, q), = comp
                    norm = _masked_block_norm(C[(p, q)], b[secs[p].states], b[secs[q].states], hermitian and p == q)
                else:
                    norm = _masked_component_norm(C, comp, secs, b)
                best = np.maximum(best, norm)
            res[i, sl] = best
    return res


def _two_valued_series(ctx, blocks, b, ts, chunk, hermitian):
    # only the sub-blocks of tau_t(A) joining b = hi rows to b = lo columns (and
    # the reverse) survive in the commutator; build just those
    secs = ctx.sectors
    lo, hi = np.unique(b)
    out = np.zeros(ts.size)
    for start in range(0, ts.size, chunk):
        sl = slice(start, start + chunk)
        t = ts[sl]
        best = np.zeros(t.size)
        for (p, q), a in blocks.items():
            bp, bq = b[secs[p].states], b[secs[q].states]
            pairs = [(bp == hi, bq == lo)]
            if not (hermitian and p == q):
                pairs.append((bp == lo, bq == hi))
            php = np.exp(1j * np.outer(t, secs[p].energies))
            phq = np.exp(-1j * np.outer(t, secs[q].energies))
            for r, c in pairs:
                if not (r.any() and c.any()):
                    continue
                left = secs[p].vectors[r][None] * php[:, None, :]
                right = secs[q].vectors[c][None] * phq[:, None, :]
                sub = (left @ a) @ np.swapaxes(right, 1, 2)
                best = np.maximum(best, np.linalg.svd(sub, compute_uv=False)[:, 0])
        out[sl] = (hi - lo) * best
    return out


def _masked_block_norm(Cb, brow, bcol, hermitian):
    vals = np.unique(np.concatenate([brow, bcol]))
    if vals.size == 1:
        return np.zeros(Cb.shape[0])
    if vals.size == 2:
        lo, hi = vals
        r_lo, r_hi = brow == lo, brow == hi
        c_lo, c_hi = bcol == lo, bcol == hi
        best = np.zeros(Cb.shape[0])
        pairs = [(r_hi, c_lo)] if hermitian else [(r_hi, c_lo), (r_lo, c_hi)]
        for r, c in pairs:
            if r.any() and c.any():
                sub = Cb[:, r][:, :, c]
                best = np.maximum(best, np.linalg.svd(sub, compute_uv=False)[:, 0])
        return (hi - lo) * best
    X = Cb * (bcol[None, None, :] - brow[None, :, None])
    return np.linalg.svd(X, compute_uv=False)[:, 0]


def _masked_component_norm(C, comp, secs, b):
    rows = sorted({p for p, _ in comp})
    cols = sorted({q for _, q in comp})
    T = next(iter(C.values())).shape[0]
    X = np.block([
        [C[(p, q)] if (p, q) in C else np.zeros((T, secs[p].states.size, secs[q].states.size)) for q in cols]
        for p in rows
    ])
    brow = np.concatenate([b[secs[p].states] for p in rows])
    bcol = np.concatenate([b[secs[q].states] for q in cols])
    X = X * (bcol[None, None, :] - brow[None, :, None])
    return np.linalg.svd(X, compute_uv=False)[:, 0]


def _general_series(ctx, A, B, ts, chunk):
    At = ctx.to_eigenbasis(A)
    Bt = ctx.to_eigenbasis(B)
    energies = [s.energies for s in ctx.sectors]
    keys = set()
    for (p, r) in At:
        for (r2, q) in Bt:
            if r2 == r:
                keys.add((p, q))
    for (p, r) in Bt:
        for (r2, q) in At:
            if r2 == r:
                keys.add((p, q))
    comps = _components(sorted(keys))
    out = np.zeros(ts.size)
    for start in range(0, ts.size, chunk):
        sl = slice(start, start + chunk)
        ph = [np.exp(1j * np.outer(ts[sl], e)) for e in energies]
        evolved = {(p, r): ph[p][:, :, None] * a[None] * ph[r].conj()[:, None, :] for (p, r), a in At.items()}
        best = np.zeros(ts[sl].size)
        for comp in comps:
            blocks = {}
            for (p, q) in comp:
                x = 0
                for (p1, r), a in evolved.items():
                    if p1 == p and (r, q) in Bt:
                        x = x + a @ Bt[(r, q)]
                for (p1, r), b in Bt.items():
                    if p1 == p and (r, q) in evolved:
                        x = x - b @ evolved[(r, q)]
                blocks[(p, q)] = x
            rows = sorted({p for p, _ in blocks})
            cols = sorted({q for _, q in blocks})
            T = ts[sl].size
            X = np.block([
                [blocks.get((p, q), np.zeros((T, ctx.sectors[p].states.size, ctx.sectors[q].states.size)))
                 for q in cols]
                for p in rows
            ])
            best = np.maximum(best, np.linalg.svd(X, compute_uv=False)[:, 0])
        out[sl] = best
    return out


def expectation(ctx: EvolutionContext, A: ManyBodyOperator) -> complex:
    psi = ctx.ground_vector
    return complex(np.vdot(psi, A.matrix @ psi))


def ground_correlation(ctx: EvolutionContext, A: ManyBodyOperator, B: ManyBodyOperator, gap_tol: float = 1e-10) -> complex:
    """Truncated ground-state correlation ``<AB> - <A><B>``."""
    if not ctx.gap > gap_tol:
        raise DegeneracyError(f"ground state is degenerate (gap={ctx.gap:.3e})")
    psi = ctx.ground_vector
    ab = np.vdot(psi, A.matrix @ (B.matrix @ psi))
    return complex(ab - expectation(ctx, A) * expectation(ctx, B))


def _t_cut(alpha: float) -> float:
    # exp(-alpha t^2) < 1e-14 beyond the cut
    return float(np.sqrt(14.0 * np.log(10.0) / alpha)) * 1.05


def gaussian_kernel_time(E: float, alpha: float, epsilon: float) -> float:
    """``(1/2 pi i) int exp(iEt - alpha t^2) / (t - i eps) dt`` by quadrature over t.

    Folding t -> -t leaves a real integral: a sine part that is smooth at
    the origin and a Lorentzian part whose singular piece is integrated
    in closed form (``arctan``).
    """
    T = _t_cut(alpha)
    opts = dict(epsabs=1e-15, epsrel=1e-13, limit=2000)
    pts = [p for p in (epsilon, 10 * epsilon) if p < T]

    def sine_part(t):
        return np.sin(E * t) * np.exp(-alpha * t * t) * t / (t * t + epsilon * epsilon)

    def lorentz_part(t):
        return epsilon * (np.cos(E * t) * np.exp(-alpha * t * t) - 1.0) / (t * t + epsilon * epsilon)

    s, _ = integrate.quad(sine_part, 0.0, T, points=pts, **opts)
    l_, _ = integrate.quad(lorentz_part, 0.0, T, points=pts, **opts)
    l_ += np.arctan(T / epsilon)
    return float((s + l_) / np.pi)


def gaussian_kernel_frequency(E: float, alpha: float, epsilon: float) -> float:
    """``(1 / 2 sqrt(pi alpha)) int_0^inf exp(-eps w - (w - E)^2 / 4 alpha) dw`` by quadrature over w."""
    width = 2.0 * np.sqrt(alpha) * 6.0
    hi = max(E, 0.0) + width
    f = lambda w: np.exp(-epsilon * w - (w - E) ** 2 / (4.0 * alpha))
    pts = [E] if 0.0 < E < hi else None
    val, _ = integrate.quad(f, 0.0, hi, points=pts, epsabs=1e-15, epsrel=1e-13, limit=500)
    tail, _ = integrate.quad(f, hi, np.inf, epsabs=1e-16, epsrel=1e-13, limit=200)
    return float((val + tail) / (2.0 * np.sqrt(np.pi * alpha)))


def quasilocal_approx(
    ctx: EvolutionContext,
    B: ManyBodyOperator,
    alpha: float,
    epsilon: float = DEFAULT_EPSILON,
    check: bool = True,
) -> ManyBodyOperator:
    """Gaussian-smeared time average ``B(alpha, epsilon)``.

    In the eigenbasis of H the time integral acts entrywise through the
    scalar kernel at frequency ``E_a - E_b``; that kernel is integrated
    numerically for each distinct frequency. With ``check`` the result is
    recomputed at ``epsilon / 2`` and the two must agree.
    """
    if not (alpha > 0 and epsilon > 0):
        raise ValueError("alpha and epsilon must be positive")
    E = ctx.energies
    V = ctx.vectors
    Bt = V.T @ B.matrix @ V
    diffs = np.round(E[:, None] - E[None, :], 12)

    def kernel(eps):
        uniq, inv = np.unique(diffs, return_inverse=True)
        vals = np.array([gaussian_kernel_time(w, alpha, eps) for w in uniq])
        return vals[inv].reshape(diffs.shape)

    K = kernel(epsilon)
    if check:
        drift = np.max(np.abs(K - kernel(epsilon / 2)))
        if drift > 1e-6:
            raise NumericalError(f"quasi-local approximation not converged in epsilon (drift {drift:.2e})")
    return ManyBodyOperator(B.n, V @ (K * Bt) @ V.T, None)
