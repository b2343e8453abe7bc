"""Steady-state observables from a permutation-invariant density matrix."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import CapacityError, ConvergenceError
from .liouville import PIBasis, SymmetrizedDensityMatrix, _left, one_body
from .meanfield import SpinExpectations
from .spin_core import SpinQuantum, single_particle_matrices

__all__ = [
    "NegativityResult", "spin_expectations", "purity", "expand_full", "symmetrize",
    "negativity", "partial_transpose", "symmetric_subspace_restriction",
    "write_observables_csv",
]

FULL_LIMIT = 4096


def spin_expectations(rho: SymmetrizedDensityMatrix) -> SpinExpectations:
    """``<J_alpha> / (N j)`` evaluated directly on the coefficients."""
    basis = rho.basis
    spin = SpinQuantum(basis.d)
    mats = single_particle_matrices(spin)
    t = basis.trace_weights()
    scale = basis.N * spin.j
    vals = [np.real(t @ (one_body(basis, _left(mats[k])) @ rho.coeffs)) / scale
            for k in ("jx", "jy", "jz")]
    return SpinExpectations(*(float(v) for v in vals))


def purity(rho: SymmetrizedDensityMatrix) -> float:
    """``Tr rho^2`` from the diagonal Gram weights ``Tr(B_n^dag B_m) = delta_nm N!/prod n_q!``."""
    return float(np.abs(rho.coeffs) ** 2 @ rho.basis.multinomial())


def _digits(N, d):
    return np.array(np.unravel_index(np.arange(d ** N), (d,) * N)).T


def _check_full(N, d, limit):
    if d ** N > limit:
        raise CapacityError(f"full dimension d**N = {d ** N} exceeds {limit}", d ** N, limit)


def _label_ranks(basis: PIBasis, rows: np.ndarray, digits: np.ndarray) -> np.ndarray:
    """Basis index of every matrix element (I, J) for I in ``rows``."""
    N, d, D = basis.N, basis.d, basis.D
    labels = digits[rows][:, None, :] * d + digits[None, :, :]
    flat = labels.reshape(-1, N)
    occ = np.zeros((flat.shape[0], D), dtype=np.int64)
    ar = np.arange(flat.shape[0])
    for i in range(N):
        occ[ar, flat[:, i]] += 1
    return basis.rank(occ).reshape(len(rows), -1)


def expand_full(rho: SymmetrizedDensityMatrix, limit: int = FULL_LIMIT) -> np.ndarray:
    """Dense ``d**N x d**N`` matrix; particle 1 is the most significant digit."""
    basis = rho.basis
    N, d = basis.N, basis.d
    _check_full(N, d, limit)
    dim = d ** N
    digits = _digits(N, d)
    out = np.empty((dim, dim), dtype=complex)
    chunk = max(1, (1 << 20) // dim)
    for start in range(0, dim, chunk):
        rows = np.arange(start, min(dim, start + chunk))
        out[rows] = rho.coeffs[_label_ranks(basis, rows, digits)]
    return out


def symmetrize(full: np.ndarray, basis: PIBasis) -> SymmetrizedDensityMatrix:
    """Inverse of :func:`expand_full` for permutation-invariant matrices (averages each orbit)."""
    N, d = basis.N, basis.d
    digits = _digits(N, d)
    idx = _label_ranks(basis, np.arange(d ** N), digits).ravel()
    sums = np.bincount(idx, weights=full.ravel().real, minlength=basis.dim) \
        + 1j * np.bincount(idx, weights=full.ravel().imag, minlength=basis.dim)
    return SymmetrizedDensityMatrix(basis, sums / basis.multinomial())


def partial_transpose(full: np.ndarray, N: int, d: int, transposed) -> np.ndarray:
    """Transpose the particles listed in ``transposed`` (0-based)."""
    t = np.asarray(full).reshape((d,) * (2 * N))
    axes = list(range(2 * N))
    for i in transposed:
        axes[i], axes[N + i] = axes[N + i], axes[i]
    return t.transpose(axes).reshape(d ** N, d ** N)


@dataclass(frozen=True)
class NegativityResult:
    N_A: int
    N_B: int
    negativity: float
    full_dimension: int


def _negativity_of(full, N, d, part_b):
    pt = partial_transpose(full, N, d, part_b)
    pt = 0.5 * (pt + pt.conj().T)
    try:
        ev = np.linalg.eigvalsh(pt)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(f"partial-transpose eigensolver failed: {exc}") from exc
    neg = ev[ev < -1e-12]
    return float(-neg.sum()) + 0.0


def negativity(rho, N_A: int | None = None, limit: int = FULL_LIMIT, check_seed=None,
               N: int | None = None, d: int | None = None) -> NegativityResult:
    """Sum of the magnitudes of the negative eigenvalues of the partial transpose.

    ``rho`` is a :class:`SymmetrizedDensityMatrix` or a dense matrix (then
    ``N`` and ``d`` are required).  Subsystem B is the last ``N - N_A``
    particles; ``N_A`` defaults to ``ceil(N/2)``.  With ``check_seed`` set, a
    second random bipartition of the same sizes is evaluated and must agree
    to 1e-10.
    """
    if isinstance(rho, SymmetrizedDensityMatrix):
        N, d = rho.N, rho.d
        _check_full(N, d, limit)
        full = expand_full(rho, limit)
    else:
        if N is None or d is None:
            raise ValueError("N and d are needed for a dense matrix")
        full = np.asarray(rho)
    N_A = math.ceil(N / 2) if N_A is None else N_A
    if not 0 < N_A < N:
        raise ValueError("both subsystems must be non-empty")
    value = _negativity_of(full, N, d, range(N_A, N))
    if check_seed is not None:
        rng = np.random.default_rng(check_seed)
        other = rng.permutation(N)[:N - N_A]
        alt = _negativity_of(full, N, d, sorted(other))
        if abs(alt - value) > 1e-10:
            raise ConvergenceError(f"bipartition dependence {abs(alt - value):.3e}")
    return NegativityResult(N_A, N - N_A, value, d ** N)


def _symmetric_isometry(N, d):
    """Columns are the normalised symmetric occupation states of N particles."""
    digits = _digits(N, d)
    hist = np.stack([(digits == k).sum(axis=1) for k in range(d)], axis=1)
    keys, inv = np.unique(hist, axis=0, return_inverse=True)
    inv = inv.ravel()
    counts = np.bincount(inv)
    vals = 1.0 / np.sqrt(counts[inv])
    return sp.csr_matrix((vals, (np.arange(d ** N), inv)), shape=(d ** N, len(keys)))


def symmetric_subspace_restriction(rho, limit: int = FULL_LIMIT, N: int | None = None,
                                   d: int | None = None):
    """Project onto the permutation-symmetric Hilbert subspace.

    Returns ``(S rho S / w, w)`` with ``S`` the symmetric projector and
    ``w = Tr(S rho S)``; the restricted matrix lives in the full space.
    """
    if isinstance(rho, SymmetrizedDensityMatrix):
        N, d = rho.N, rho.d
        full = expand_full(rho, limit)
    else:
        full = np.asarray(rho)
        _check_full(N, d, limit)
    W = _symmetric_isometry(N, d)
    inner = W.T @ (W.T @ full.T).T            # W^T rho W
    weight = float(np.real(np.trace(inner)))
    restricted = W @ (W @ inner.T).T          # W (W^T rho W) W^T
    if weight <= 0:
        return np.zeros_like(full), 0.0
    return restricted / weight, weight


def write_observables_csv(path, rows):
    """``rows``: dicts with the keys of ``COLUMNS`` (missing -> empty)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(COLUMNS)
        for r in rows:
            w.writerow([r.get(c, "") for c in COLUMNS])


COLUMNS = ("gammaI/|V|", "gammaC/|V|", "N", "d", "dissipator", "purity", "X", "Y", "Z",
           "negativity", "N_A", "N_B")
