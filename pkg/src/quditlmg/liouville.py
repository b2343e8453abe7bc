"""Exact finite-N Liouvillian in the permutation-invariant operator basis.

Operators on N identical d-level particles that commute with particle
permutations are spanned by

    B_n = sum over distinct arrangements of  |a_1><b_1| x ... x |a_N><b_N|,

labelled by occupation vectors ``n`` over the d**2 transition labels
``q = a*d + b`` (level indices ascending in m).  A one-body superoperator
``sum_i S^(i)`` maps ``B_n`` to ``S[q,q] n_q B_n + sum_{q'!=q} S[q',q] n'_{q'} B_{n'}``
with ``n' = n - e_q + e_q'``.  Collective terms are products of one-body
superoperators, so the full Liouvillian is assembled from a handful of
sparse matrices.

The two Z2 symmetries split the space into four real blocks, see
:func:`build_sectors`.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import gammaln

from .errors import CapacityError, ConvergenceError, NonUniqueSteadyState, SymmetryViolationError
from .spin_core import ModelParams, jump_operator, single_particle_matrices

log = logging.getLogger(__name__)

__all__ = [
    "SECTORS", "PIBasis", "SectorMap", "SectorOperator", "SpectralResult",
    "SymmetrizedDensityMatrix", "basis_dimension", "enumerate_basis", "build_sectors",
    "sector_dimensions", "one_body", "full_liouvillian", "assemble_liouvillian",
    "leading_eigenvalues", "gaps", "steady_state", "kronecker_liouvillian",
    "kronecker_steady_state", "write_matrix", "write_spectral_csv",
]

SECTORS = ((1, 1), (1, -1), (-1, 1), (-1, -1))
DEFAULT_LIMIT = 2_000_000
DENSE_LIMIT = 4000


def basis_dimension(N: int, d: int) -> int:
    return math.comb(N + d * d - 1, N)


# ---------------------------------------------------------------------------
# basis

class PIBasis:
    """Lexicographically ordered occupation vectors with O(D) ranking.

    Attributes
    ----------
    occ : (M, d*d) int array
        Occupation vectors in ascending lexicographic order.
    transpose : (M,) int array
        Index of ``T(n)``, the vector with every label (a, b) swapped.
    weight : (M,) int array
        ``w(n) = sum (a - b) n_(a,b)``.
    """

    def __init__(self, N: int, d: int, occ: np.ndarray):
        self.N, self.d = N, d
        self.D = d * d
        self.occ = occ
        self._cum = self._rank_table(N, self.D)
        a, b = np.divmod(np.arange(self.D), d)
        self.label_a, self.label_b = a, b
        self.label_swap = b * d + a
        self.weight = occ @ (a - b)
        self.transpose = self.rank(occ[:, self.label_swap])
        self.diagonal_labels = a == b

    @property
    def dim(self) -> int:
        return self.occ.shape[0]

    def __len__(self):
        return self.dim

    @staticmethod
    def _rank_table(N, D):
        # cum[k, R, v]: compositions of R into D-k parts whose first part is < v
        cum = np.zeros((D, N + 1, N + 2), dtype=np.int64)
        for k in range(D - 1):
            parts = D - k - 1
            for R in range(N + 1):
                counts = [math.comb(R - u + parts - 1, parts - 1) for u in range(R + 1)]
                cum[k, R, 1:R + 2] = np.cumsum(counts)
        return cum

    def rank(self, occ: np.ndarray) -> np.ndarray:
        occ = np.atleast_2d(occ)
        remaining = self.N - np.cumsum(occ, axis=1) + occ
        k = np.arange(self.D)
        return self._cum[k, remaining, occ].sum(axis=1)

    def multinomial(self) -> np.ndarray:
        """``N! / prod(n_q!)`` per basis element (float)."""
        return np.exp(gammaln(self.N + 1) - gammaln(self.occ + 1).sum(axis=1))

    def trace_weights(self) -> np.ndarray:
        """``Tr(B_n)``: the multinomial if all occupied labels are diagonal, else 0."""
        offdiag = self.occ[:, ~self.diagonal_labels].sum(axis=1) > 0
        t = self.multinomial()
        t[offdiag] = 0.0
        return t

    def index_of(self, occupation) -> int:
        occupation = np.asarray(occupation, dtype=np.int64)
        if occupation.shape != (self.D,) or occupation.sum() != self.N or occupation.min() < 0:
            raise ValueError("not an occupation vector of this basis")
        return int(self.rank(occupation)[0])


def enumerate_basis(N: int, d: int, limit: int = DEFAULT_LIMIT) -> PIBasis:
    """All occupation vectors of N particles over d**2 labels, lexicographic order."""
    if N < 1:
        raise ValueError("N must be positive")
    D = d * d
    dim = basis_dimension(N, d)
    if dim > limit:
        raise CapacityError(f"basis dimension {dim} exceeds the limit {limit}", dim, limit)
    bars = np.fromiter(itertools.combinations(range(N + D - 1), D - 1),
                       dtype=np.dtype((np.int64, D - 1)), count=dim)
    edges = np.hstack([np.full((dim, 1), -1), bars, np.full((dim, 1), N + D - 1)])
    return PIBasis(N, d, np.diff(edges, axis=1) - 1)


# ---------------------------------------------------------------------------
# symmetry sectors

@dataclass
class SectorMap:
    """Real Hermitian-adapted directions of each symmetry sector.

    For a sector, direction ``k`` is ``sum_c vals[k, c] B_{cols[k, c]}``
    (two entries; self-transpose directions repeat the index with zero weight).
    """

    basis: PIBasis
    cols: dict
    vals: dict
    dims: dict = field(init=False)

    def __post_init__(self):
        self.dims = {s: int(self.cols[s].shape[0]) for s in SECTORS}

    def embedding(self, sector) -> sp.csc_matrix:
        """Sparse (M x dim_sector) complex matrix whose columns are the directions."""
        c, v = self.cols[sector], self.vals[sector]
        n = c.shape[0]
        return sp.csc_matrix((v.ravel(), (c.ravel(), np.repeat(np.arange(n), 2))),
                             shape=(self.basis.dim, n))

    def norms2(self, sector) -> np.ndarray:
        v = self.vals[sector]
        # duplicate index (self-transpose) carries weight 1 in slot 0 and 0 in slot 1
        return (np.abs(v) ** 2).sum(axis=1)


def _sector_layout(basis: PIBasis):
    """Per-sector representative indices and direction kinds, without coefficients."""
    idx = np.arange(basis.dim)
    t = basis.transpose
    w = basis.weight
    self_t = t == idx
    lower = idx < t
    out = {}
    even = (w % 2 == 0)
    w4 = w % 4
    out["self"] = idx[self_t]
    out["even0"] = idx[lower & even & (w4 == 0)]
    out["even2"] = idx[lower & even & (w4 == 2)]
    odd = lower & ~even
    # representative with w = 1 (mod 4)
    rep = np.where(w4[idx] == 1, idx, t)
    out["odd"] = rep[odd]
    return out


def sector_dimensions(N: int, d: int, limit: int = DEFAULT_LIMIT) -> dict:
    """Dimensions of the four symmetry blocks (counting only)."""
    lay = _sector_layout(enumerate_basis(N, d, limit))
    n_self, n0, n2, n_odd = (len(lay[k]) for k in ("self", "even0", "even2", "odd"))
    return {(1, 1): n_self + n0 + n2, (1, -1): n0 + n2, (-1, 1): n_odd, (-1, -1): n_odd}


def build_sectors(basis: PIBasis) -> SectorMap:
    """Assign the Hermitian-adapted directions to ``(p1, p2)`` sectors.

    With ``X = (B_n + B_T(n))/2`` and ``Y = (B_n - B_T(n))/(2i)``:
    ``w = 0 mod 4``: X -> (+,+), Y -> (+,-); ``w = 2 mod 4``: X -> (+,-),
    Y -> (+,+); odd ``w`` (representative ``w = 1 mod 4``):
    ``(X + Y)/sqrt2`` -> (-,+), ``(X - Y)/sqrt2`` -> (-,-).  Self-transpose
    vectors have ``w = 0`` and contribute only X.  Within a sector directions
    are ordered by the lower basis index of their orbit.

    ``p1`` is the parity under ``A -> exp(i pi J_z) A exp(-i pi J_z)`` and
    ``p2`` under ``A -> exp(-i pi J_z/2) A^* exp(i pi J_z/2)``, the antiunitary
    map that exchanges <J_x> and <J_y> (so for V > 0 the symmetry-broken
    pair, which has X = Y, is mapped onto itself).
    """
    lay = _sector_layout(basis)
    t = basis.transpose
    X = np.array([0.5, 0.5], dtype=complex)
    Y = np.array([-0.5j, 0.5j])
    r2 = math.sqrt(2)
    XmY, XpY = (X - Y) / r2, (X + Y) / r2

    def pairs(rep, coeff):
        cols = np.stack([rep, t[rep]], axis=1)
        return cols, np.tile(coeff, (len(rep), 1))

    s = lay["self"]
    parts = {sec: [] for sec in SECTORS}
    parts[(1, 1)].append((np.stack([s, s], 1), np.tile([1.0 + 0j, 0j], (len(s), 1))))
    parts[(1, 1)].append(pairs(lay["even0"], X))
    parts[(1, -1)].append(pairs(lay["even0"], Y))
    parts[(1, -1)].append(pairs(lay["even2"], X))
    parts[(1, 1)].append(pairs(lay["even2"], Y))
    parts[(-1, 1)].append(pairs(lay["odd"], XpY))
    parts[(-1, -1)].append(pairs(lay["odd"], XmY))
    cols, vals = {}, {}
    for sec, chunks in parts.items():
        c = np.concatenate([ch[0] for ch in chunks]).astype(np.int64)
        v = np.concatenate([ch[1] for ch in chunks])
        order = np.lexsort((c[:, 1] != c[:, 0], c.min(axis=1)))
        cols[sec], vals[sec] = c[order], v[order]
    return SectorMap(basis, cols, vals)


# ---------------------------------------------------------------------------
# assembly

def one_body(basis: PIBasis, S: np.ndarray) -> sp.csr_matrix:
    """Sparse matrix of ``sum_i S^(i)`` for a single-particle superoperator ``S[q', q]``."""
    S = np.asarray(S, dtype=complex)
    occ = basis.occ
    idx = np.arange(basis.dim)
    rows = [idx]
    cols = [idx]
    vals = [occ @ np.diag(S)]
    for qn, q in zip(*np.nonzero(S)):
        if qn == q:
            continue
        src = idx[occ[:, q] > 0]
        new = occ[src].copy()
        new[:, q] -= 1
        new[:, qn] += 1
        rows.append(basis.rank(new))
        cols.append(src)
        vals.append(S[qn, q] * new[:, qn])
    M = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(basis.dim, basis.dim))
    return M.tocsr()


def _left(A):
    return np.kron(A, np.eye(A.shape[0]))


def _right(A):
    return np.kron(np.eye(A.shape[0]), A.T)


def _sandwich(L):
    return np.kron(L, L.conj())


def _capacity_check(basis: PIBasis, memory_budget: float):
    # crude upper bound on the sparse assembly: ~ (2d)^2 entries per column, 40 B each
    estimate = 40.0 * basis.dim * (2 * basis.d) ** 2 * 4
    if estimate > memory_budget:
        raise CapacityError(f"assembly would need about {estimate / 1e9:.1f} GB",
                            basis.dim, memory_budget)


def full_liouvillian(params: ModelParams, basis: PIBasis,
                     memory_budget: float = 8e9) -> sp.csr_matrix:
    """Complex Liouvillian acting on occupation-vector coefficients."""
    _capacity_check(basis, memory_budget)
    N, j = basis.N, params.j
    mats = single_particle_matrices(params.spin)
    jp, jm = mats["jp"], mats["jm"]
    L = jump_operator(params.dissipator)
    Ld = L.conj().T
    total = sp.csr_matrix((basis.dim, basis.dim), dtype=complex)
    if params.V != 0:
        Lp, Lm = one_body(basis, _left(jp)), one_body(basis, _left(jm))
        Rp, Rm = one_body(basis, _right(jp)), one_body(basis, _right(jm))
        total = total - 1j * params.V / (2 * N * j) * (Lp @ Lp + Lm @ Lm - Rp @ Rp - Rm @ Rm)
    if params.gammaI != 0:
        LdL = Ld @ L
        S = _sandwich(L) - 0.5 * _left(LdL) - 0.5 * _right(LdL)
        total = total + params.gammaI / j * one_body(basis, S)
    if params.gammaC != 0:
        LC, LCd = one_body(basis, _left(L)), one_body(basis, _left(Ld))
        RC, RCd = one_body(basis, _right(L)), one_body(basis, _right(Ld))
        total = total + params.gammaC / (N * j) * (LC @ RCd - 0.5 * LCd @ LC - 0.5 * RC @ RCd)
    total.sum_duplicates()
    total.eliminate_zeros()
    return total


@dataclass
class SectorOperator:
    sector: tuple
    matrix: sp.csr_matrix
    params: ModelParams
    N: int
    trace_row: np.ndarray | None = None   # left null vector (trace functional), (+,+) only

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


def assemble_liouvillian(params: ModelParams, basis: PIBasis, sectors: SectorMap | None = None,
                         memory_budget: float = 8e9) -> dict:
    """Real block matrices of the Liouvillian, keyed by sector label.

    Raises :class:`SymmetryViolationError` if any coupling between sectors
    exceeds 1e-10 (relative to the largest entry), which happens for complex
    jump amplitudes.
    """
    sectors = sectors or build_sectors(basis)
    M = full_liouvillian(params, basis, memory_budget)
    scale = max(abs(M).max() if M.nnz else 0.0, 1.0)
    emb = [sectors.embedding(s) for s in SECTORS]
    inv = [sp.diags(1.0 / sectors.norms2(s)) for s in SECTORS]
    V_all = sp.hstack(emb).tocsc()
    P_all = sp.vstack([inv[k] @ emb[k].conj().T for k in range(4)]).tocsr()
    R = (P_all @ (M @ V_all)).tocsr()
    R.eliminate_zeros()
    offsets = np.cumsum([0] + [sectors.dims[s] for s in SECTORS])
    owner = np.repeat(np.arange(4), np.diff(offsets))
    Rc = R.tocoo()
    cross = owner[Rc.row] != owner[Rc.col]
    if np.any(cross):
        worst = np.abs(Rc.data[cross]).max()
        if worst > 1e-10 * scale:
            raise SymmetryViolationError(
                f"coupling {worst:.3e} between symmetry sectors (complex jump amplitudes?)")
    imag = np.abs(Rc.data.imag).max() if Rc.nnz else 0.0
    if imag > 1e-12 * scale:
        raise SymmetryViolationError(f"sector matrix has imaginary residue {imag:.3e}")
    out = {}
    for k, s in enumerate(SECTORS):
        block = R[offsets[k]:offsets[k + 1], :][:, offsets[k]:offsets[k + 1]]
        block = sp.csr_matrix(block.real)
        block.eliminate_zeros()
        trace_row = None
        if s == (1, 1):
            trace_row = np.real(emb[k].T @ basis.trace_weights())
        out[s] = SectorOperator(s, block, params, basis.N, trace_row)
    return out


# ---------------------------------------------------------------------------
# spectra

def _sort_by_decay(ev):
    return ev[np.lexsort((np.abs(ev.imag), np.abs(ev.real)))]


DENSE_LU_LIMIT = 8000


def _factorize(B, norm):
    """Return a solver for ``B x = b``.

    The sector blocks fill in badly under sparse LU, so up to moderate
    sizes a dense factorisation is both faster and more robust.
    """
    m = B.shape[0]
    reg = 1e-12 * norm
    if m <= DENSE_LU_LIMIT:
        Bd = B.toarray()
        lu = sla.lu_factor(Bd, check_finite=False)
        if np.min(np.abs(np.diag(lu[0]))) < 1e-14 * norm:
            lu = sla.lu_factor(Bd + reg * np.eye(m), check_finite=False)
        return lambda b: sla.lu_solve(lu, b, check_finite=False)
    try:
        lu = spla.splu(B.tocsc(), permc_spec="MMD_AT_PLUS_A")
    except RuntimeError:
        lu = spla.splu((B + reg * sp.identity(m)).tocsc(), permc_spec="MMD_AT_PLUS_A")
    return lu.solve


def leading_eigenvalues(op: SectorOperator, k: int = 6, method: str = "auto") -> np.ndarray:
    """``k`` eigenvalues of smallest ``|Re|`` (sorted that way).

    ``method`` is ``'dense'`` (full Schur), ``'sparse'`` or ``'auto'`` (dense
    up to dimension 4000).  The sparse path runs Arnoldi on the inverse
    (shift 0), i.e. it finds the eigenvalues of smallest modulus and re-sorts
    them; at least 12 are requested so that slow modes with large imaginary
    parts are not missed.  For the (+,+) block the trace functional is a
    left null vector, so the problem is first restricted to traceless
    operators; this removes the zero mode exactly and the returned list then
    starts with 0.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    A = op.matrix
    n = op.dim
    if n == 0:
        return np.array([], dtype=complex)
    if method == "auto":
        method = "dense" if n <= DENSE_LIMIT else "sparse"
    if method == "dense" or n <= k + 2:
        return _sort_by_decay(sla.eigvals(A.toarray()))[:k]
    norm = spla.norm(A, 1)
    A = A.tocsc()
    # the (+,+) block: restrict to traceless operators, which removes the
    # exact zero mode and leaves every other eigenvalue unchanged
    deflated = False
    t = op.trace_row
    if t is not None and np.abs(t @ A).max() <= 1e-12 * max(norm, 1.0) * np.abs(t).max():
        p = int(np.argmax(np.abs(t)))
        keep = np.delete(np.arange(n), p)
        B = A[keep][:, keep].tocsc()
        u = A[keep, p].toarray().ravel()
        v = t[keep] / t[p]
        deflated = True
    else:
        B, u, v = A, None, None
    m = B.shape[0]
    solve = _factorize(B, norm)
    if deflated:
        w = solve(u)
        denom = 1.0 - v @ w

        def inv(x):
            z = solve(np.asarray(x, dtype=float).ravel())
            return z + w * (v @ z) / denom

        def apply(x):
            return B @ x - u * (v @ x)
    else:
        def inv(x):
            return solve(np.asarray(x, dtype=float).ravel())

        def apply(x):
            return B @ x
    Inv = spla.LinearOperator((m, m), matvec=inv, dtype=float)
    nev = min(max(2 * k, 12), m - 2)
    resid = np.inf
    for attempt in range(3):
        try:
            mu, vecs = spla.eigs(Inv, k=nev, which="LM", ncv=min(m - 1, 2 * nev + 1 + 10 * attempt),
                                 tol=1e-12, maxiter=20 * m)
        except spla.ArpackNoConvergence as exc:
            mu, vecs = exc.eigenvalues, exc.eigenvectors
        if len(mu):
            vals = 1.0 / mu
            resid = max(np.linalg.norm(apply(vecs[:, i]) - vals[i] * vecs[:, i])
                        / np.linalg.norm(vecs[:, i]) for i in range(len(vals)))
            if resid <= 1e-8 * norm and len(vals) >= min(k, m - 2):
                break
        nev = min(nev * 2, m - 2)
    else:
        raise ConvergenceError(f"Arnoldi did not converge (residual {resid:.3e})", resid)
    vals = np.concatenate([vals, vals.conj()])
    if deflated:
        vals = np.concatenate([[0.0], vals])
    keep = []
    for x in _sort_by_decay(vals):
        if all(abs(x - y) > 1e-9 * max(norm, 1.0) for y in keep):
            keep.append(x)
    return np.array(keep[:k], dtype=complex)


@dataclass
class SpectralResult:
    params: ModelParams
    N: int
    eigenvalues: dict
    gaps: dict
    errors: dict = field(default_factory=dict)


def gaps(params: ModelParams, N: int, k: int = 6, method: str = "auto",
         limit: int = DEFAULT_LIMIT) -> SpectralResult:
    """Slowest decay rate of each symmetry sector.

    For (+,+) the first eigenvalue is the steady state and the gap is taken
    from the second.  A sector whose eigen-solve fails gets ``nan`` and its
    error message in ``errors``; the others are unaffected.
    """
    basis = enumerate_basis(N, params.d, limit)
    ops = assemble_liouvillian(params, basis)
    eig, gap, err = {}, {}, {}
    for s, op in ops.items():
        try:
            ev = leading_eigenvalues(op, k, method)
            eig[s] = ev
            pos = 1 if s == (1, 1) else 0
            gap[s] = float(-ev[pos].real) if len(ev) > pos else float("nan")
        except ConvergenceError as exc:
            eig[s], gap[s], err[s] = np.array([]), float("nan"), str(exc)
    return SpectralResult(params, N, eig, gap, err)


# ---------------------------------------------------------------------------
# steady state

@dataclass
class SymmetrizedDensityMatrix:
    """Permutation-invariant density matrix ``sum_n c_n B_n``."""

    basis: PIBasis
    coeffs: np.ndarray

    @property
    def N(self):
        return self.basis.N

    @property
    def d(self):
        return self.basis.d

    def trace(self) -> complex:
        return complex(self.basis.trace_weights() @ self.coeffs)


def steady_state(params: ModelParams, N: int, basis: PIBasis | None = None,
                 ops: dict | None = None) -> SymmetrizedDensityMatrix:
    """Unique null vector of the fully symmetric block, normalised to unit trace."""
    basis = basis or enumerate_basis(N, params.d)
    sectors = build_sectors(basis)
    ops = ops or assemble_liouvillian(params, basis, sectors)
    A = ops[(1, 1)].matrix
    E = sectors.embedding((1, 1))
    t = np.real(E.T @ basis.trace_weights())
    n = A.shape[0]
    if n <= DENSE_LIMIT:
        _, sv, vh = sla.svd(A.toarray())
        if n > 1 and sv[-2] <= 1e-9 * sv[0]:
            raise NonUniqueSteadyState(
                f"null space of dimension > 1 (second singular value {sv[-2]:.3e})")
        r = vh[-1]
    else:
        # trace preservation makes row `pivot` redundant; replace it by the normalisation
        pivot = int(np.argmax(np.abs(t)))
        B = A.tolil()
        B[pivot, :] = t
        rhs = np.zeros(n)
        rhs[pivot] = 1.0
        with np.errstate(all="ignore"):
            r = _factorize(B.tocsr(), spla.norm(A, 1))(rhs)
        if not np.all(np.isfinite(r)) or np.linalg.norm(A @ r) > 1e-8 * spla.norm(A, 1) * np.linalg.norm(r):
            raise NonUniqueSteadyState("bordered system is singular: no unique steady state")
    tr = t @ r
    if abs(tr) < 1e-300:
        raise NonUniqueSteadyState("null vector has zero trace")
    r = np.real_if_close(r / tr)
    return SymmetrizedDensityMatrix(basis, np.asarray(E @ r).ravel())


# ---------------------------------------------------------------------------
# brute-force reference in the full Hilbert space

def _embed_one(op, i, N, d):
    out = np.eye(1)
    for k in range(N):
        out = np.kron(out, op if k == i else np.eye(d))
    return out


def kronecker_liouvillian(params: ModelParams, N: int) -> np.ndarray:
    """Dense d**(2N) Liouvillian for row-major vectorisation ``vec(rho) = rho.ravel()``."""
    d, j = params.d, params.j
    if d ** (2 * N) > 5000:
        raise CapacityError("Kronecker reference limited to d**(2N) <= 5000", d ** (2 * N), 5000)
    mats = single_particle_matrices(params.spin)
    L1 = jump_operator(params.dissipator)
    Jp = sum(_embed_one(mats["jp"], i, N, d) for i in range(N))
    Jm = Jp.conj().T
    H = params.V / (2 * N * j) * (Jp @ Jp + Jm @ Jm)
    eye = np.eye(d ** N)

    def lind(Lop, rate):
        LdL = Lop.conj().T @ Lop
        return rate * (np.kron(Lop, Lop.conj()) - 0.5 * np.kron(LdL, eye) - 0.5 * np.kron(eye, LdL.T))

    sup = -1j * (np.kron(H, eye) - np.kron(eye, H.T))
    Ls = [_embed_one(L1, i, N, d) for i in range(N)]
    for Li in Ls:
        sup = sup + lind(Li, params.gammaI / j)
    sup = sup + lind(sum(Ls), params.gammaC / (N * j))
    return sup


def kronecker_steady_state(params: ModelParams, N: int) -> np.ndarray:
    sup = kronecker_liouvillian(params, N)
    _, _, vh = sla.svd(sup)
    rho = vh[-1].conj().reshape(params.d ** N, params.d ** N)
    return rho / np.trace(rho)


# ---------------------------------------------------------------------------
# output

def write_matrix(path, ops: dict, params: ModelParams, N: int):
    """Text dump: ``#`` header lines, then ``p1 p2 row col value`` triplets."""
    with open(path, "w") as fh:
        fh.write(f"# N={N} d={params.d} dissipator={params.dissipator.kind.value}\n")
        fh.write(f"# V={params.V!r} gammaI={params.gammaI!r} gammaC={params.gammaC!r}\n")
        fh.write("# sectors " + " ".join(f"{s[0]:+d},{s[1]:+d}:{ops[s].dim}" for s in SECTORS) + "\n")
        for s in SECTORS:
            m = ops[s].matrix.tocoo()
            order = np.lexsort((m.col, m.row))
            for r, c, v in zip(m.row[order], m.col[order], m.data[order]):
                fh.write(f"{s[0]:+d} {s[1]:+d} {r} {c} {v:.17g}\n")


def write_spectral_csv(path, results):
    import csv
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["gammaI/|V|", "gammaC/|V|", "N", "sector", "lambda_re", "lambda_im", "gap"])
        for res in results:
            Vabs = abs(res.params.V)
            for s in SECTORS:
                for ev in res.eigenvalues.get(s, []):
                    w.writerow([f"{res.params.gammaI / Vabs:.12g}", f"{res.params.gammaC / Vabs:.12g}",
                                res.N, f"{s[0]:+d}{s[1]:+d}", f"{ev.real:.12g}", f"{ev.imag:.12g}",
                                f"{res.gaps.get(s, float('nan')):.12g}"])
