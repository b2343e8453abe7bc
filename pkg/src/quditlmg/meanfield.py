"""Mean-field (N -> infinity) dynamics of the driven-dissipative qudit LMG model.

The state is the averaged single-particle density matrix, stored as the d**2
real numbers ``<S_{x;m,n}>`` (m >= n) and ``<S_{y;m,n}>`` (m > n).  Packing
order of the real vector:

1. ``sx[m][m]`` for ascending m,
2. ``sx[m][n]`` (m > n) grouped by ``m - n`` = 1, 2, ..., then ascending m,
3. ``sy[m][n]`` in the same order as 2.

In terms of the averaged matrix ``rho``: ``sx[m][n] = Re rho[n, m]`` and
``sy[m][n] = Im rho[n, m]``.

The equations of motion are ``V f(s) + gammaI g(s) + gammaC h(s)`` with ``f``
and ``h`` quadratic and ``g`` linear.  In matrix form

    d rho/dt = -i [h_V(rho), rho] + [K(rho), rho] + (gammaI/j) D_L[rho]

with ``h_V = (V/j)(b j_+ + b* j_-)``, ``b = Tr(rho j_+)``,
``K = gammaC/(2j) (a* L - a L^dag)``, ``a = Tr(rho L)`` and ``D_L`` the
single-particle Lindblad dissipator.  Both quadratic parts are tabulated once
per (d, dissipator) as rank-3 tensors so that the right-hand side and its
Jacobian are single contractions.
"""

from __future__ import annotations

import csv
import enum
import functools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.integrate import trapezoid

from .errors import StiffnessError
from .integrate import Controls, dopri5
from .spin_core import (ModelParams, SpinQuantum, doubled, jump_operator,
                        single_particle_matrices)

log = logging.getLogger(__name__)

__all__ = [
    "Stability", "SpinExpectations", "MeanFieldState", "FixedPoint", "Trajectory",
    "BranchTable", "ExponentFit", "ThresholdCheck", "OrbitAverage",
    "rhs", "rhs_parts", "jacobian", "integrate", "coherent_state",
    "random_max_spin_state", "random_valid_state", "spin_z_state",
    "find_fixed_points", "classify", "stability_threshold", "diagonal_state_stability",
    "track_branch", "broken_branch", "sweep_steady_branch", "fit_exponent",
    "small_rate_prefactors", "orbit_time_average", "largespin_rhs",
    "integrate_largespin", "qubit_rhs",
]


# ---------------------------------------------------------------------------
# layout

@functools.lru_cache(maxsize=None)
def _layout(d: int):
    pairs = [(kn + gap, kn) for gap in range(1, d) for kn in range(d - gap)]
    km = np.array([p[0] for p in pairs], dtype=int)
    kn = np.array([p[1] for p in pairs], dtype=int)
    index = {}
    for k in range(d):
        index[("x", k, k)] = k
    P = len(pairs)
    for p, (a, b) in enumerate(pairs):
        index[("x", a, b)] = d + p
        index[("y", a, b)] = d + P + p
    diag_mask = np.zeros(d * d, dtype=bool)
    diag_mask[:d] = True
    weights = np.where(diag_mask, 1.0, 2.0)
    return km, kn, index, diag_mask, weights


def pack(rho: np.ndarray) -> np.ndarray:
    """Averaged density matrices ``(..., d, d)`` -> real vectors ``(..., d*d)``."""
    rho = np.asarray(rho)
    d = rho.shape[-1]
    km, kn, _, _, _ = _layout(d)
    diag = np.real(np.diagonal(rho, axis1=-2, axis2=-1))
    upper = rho[..., kn, km]
    return np.concatenate([diag, upper.real, upper.imag], axis=-1)


def unpack(vec: np.ndarray, d: int) -> np.ndarray:
    vec = np.asarray(vec, dtype=float)
    km, kn, _, _, _ = _layout(d)
    P = len(km)
    rho = np.zeros(vec.shape[:-1] + (d, d), dtype=complex)
    idx = np.arange(d)
    rho[..., idx, idx] = vec[..., :d]
    upper = vec[..., d:d + P] + 1j * vec[..., d + P:]
    rho[..., kn, km] = upper
    rho[..., km, kn] = upper.conj()
    return rho


@functools.lru_cache(maxsize=None)
def _observable_rows(d: int) -> np.ndarray:
    """Rows mapping a packed state onto (X, Y, Z)."""
    spin = SpinQuantum(d)
    j = spin.j
    _, _, index, _, _ = _layout(d)
    rows = np.zeros((3, d * d))
    A = np.diag(single_particle_matrices(spin)["jp"], -1).real
    for k in range(d - 1):
        rows[0, index[("x", k + 1, k)]] = A[k] / j
        rows[1, index[("y", k + 1, k)]] = A[k] / j
    rows[2, :d] = spin.m_values / j
    return rows


# ---------------------------------------------------------------------------
# state types

@dataclass(frozen=True)
class SpinExpectations:
    X: float
    Y: float
    Z: float

    def as_tuple(self):
        return (float(self.X), float(self.Y), float(self.Z))


class MeanFieldState:
    """Packed mean-field state of one spin species (see module docstring)."""

    def __init__(self, spin: SpinQuantum, vector):
        vector = np.array(vector, dtype=float)
        if vector.shape != (spin.d ** 2,):
            raise ValueError(f"expected a vector of length {spin.d ** 2}")
        self.spin = spin
        self.vector = vector
        self.vector.setflags(write=False)

    @classmethod
    def from_matrix(cls, spin: SpinQuantum, rho) -> "MeanFieldState":
        return cls(spin, pack(rho))

    def matrix(self) -> np.ndarray:
        return unpack(self.vector, self.spin.d)

    def _component(self, alpha, m, n):
        tj = self.spin.two_j
        km, kn = (doubled(m) + tj) // 2, (doubled(n) + tj) // 2
        if not (0 <= km < self.spin.d and 0 <= kn < self.spin.d):
            return 0.0
        sign = 1.0
        if km < kn:
            km, kn = kn, km
            sign = -1.0 if alpha == "y" else 1.0
        if alpha == "y" and km == kn:
            return 0.0
        return sign * self.vector[_layout(self.spin.d)[2][(alpha, km, kn)]]

    def sx(self, m, n) -> float:
        """``<S_{x;m,n}>``; symmetric in (m, n), zero outside the level range."""
        return self._component("x", m, n)

    def sy(self, m, n) -> float:
        """``<S_{y;m,n}>``; antisymmetric in (m, n), zero outside the level range."""
        return self._component("y", m, n)

    @property
    def trace(self) -> float:
        return float(self.vector[:self.spin.d].sum())

    @property
    def purity(self) -> float:
        return float(self.vector ** 2 @ _layout(self.spin.d)[4])

    def expectations(self) -> SpinExpectations:
        return SpinExpectations(*(_observable_rows(self.spin.d) @ self.vector))

    def __repr__(self):
        e = self.expectations()
        return f"MeanFieldState(d={self.spin.d}, X={e.X:.6g}, Y={e.Y:.6g}, Z={e.Z:.6g})"


def spin_z_state(spin: SpinQuantum) -> MeanFieldState:
    """All population in ``m = -j``."""
    v = np.zeros(spin.d ** 2)
    v[0] = 1.0
    return MeanFieldState(spin, v)


def coherent_state(spin: SpinQuantum, theta: float, phi: float) -> MeanFieldState:
    """Spin-coherent state pointing along (theta, phi); theta = 0 is ``|m = j>``."""
    tj = spin.two_j
    up = np.arange(spin.d)  # j + m
    amp = np.array([math.sqrt(math.comb(tj, int(k))) for k in up])
    amp = amp * np.cos(theta / 2) ** up * np.sin(theta / 2) ** (tj - up)
    psi = amp * np.exp(-1j * spin.m_values * phi)
    return MeanFieldState.from_matrix(spin, np.outer(psi, psi.conj()))


def random_max_spin_state(seed, spin: SpinQuantum) -> MeanFieldState:
    """Coherent state with direction drawn uniformly on the sphere."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    cos_t = rng.uniform(-1.0, 1.0)
    phi = rng.uniform(0.0, 2 * np.pi)
    return coherent_state(spin, math.acos(cos_t), phi)


def random_valid_state(seed, spin: SpinQuantum) -> MeanFieldState:
    """Random full-rank single-particle density matrix (Ginibre ensemble)."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    g = rng.normal(size=(spin.d, spin.d)) + 1j * rng.normal(size=(spin.d, spin.d))
    rho = g @ g.conj().T
    return MeanFieldState.from_matrix(spin, rho / np.trace(rho).real)


# ---------------------------------------------------------------------------
# equations of motion

@functools.lru_cache(maxsize=64)
def _tensors(d: int, ell: tuple):
    spin = SpinQuantum(d)
    j = spin.j
    mats = single_particle_matrices(spin)
    jp, jm = mats["jp"], mats["jm"]
    L = np.zeros((d, d), dtype=complex)
    L[np.arange(d - 1), np.arange(1, d)] = np.asarray(ell, dtype=complex)
    Ld = L.conj().T
    n = d * d
    E = unpack(np.eye(n), d)                              # basis directions
    b = np.einsum("iab,ba->i", E, jp)                    # Tr(E_i j_+)
    Hv = (b[:, None, None] * jp + b.conj()[:, None, None] * jm) / j
    a = np.einsum("iab,ba->i", E, L)                     # Tr(E_i L)
    Kc = (a.conj()[:, None, None] * L - a[:, None, None] * Ld) / (2 * j)
    comm_v = -1j * (Hv[:, None] @ E[None] - E[None] @ Hv[:, None])
    comm_c = Kc[:, None] @ E[None] - E[None] @ Kc[:, None]
    Qf = np.moveaxis(pack(comm_v), -1, 0)                # [out, i, k]
    Qh = np.moveaxis(pack(comm_c), -1, 0)
    LdL = Ld @ L
    lind = (L @ E @ Ld - 0.5 * (LdL @ E + E @ LdL)) / j
    G = pack(lind).T                                     # [out, i]
    for arr in (Qf, Qh, G):
        arr.setflags(write=False)
    return Qf, G, Qh


class _Model:
    """Contracted tensors for one parameter point."""

    def __init__(self, params: ModelParams):
        Qf, G, Qh = _tensors(params.d, tuple(params.dissipator.ell))
        self.params = params
        self.d = params.d
        self.Q = params.V * Qf + params.gammaC * Qh
        self.Qsym = self.Q + self.Q.transpose(0, 2, 1)
        self.G = params.gammaI * G
        self.scale = max(abs(params.V), params.gammaI + params.gammaC, 1e-300)
        self.diag = _layout(self.d)[3]

    def rhs(self, s):
        return self.G @ s + np.einsum("aik,i,k->a", self.Q, s, s, optimize=False)

    def jacobian_full(self, s):
        return self.G + np.einsum("aib,i->ab", self.Qsym, s)

    def jacobian_reduced(self, s):
        J = self.jacobian_full(s)
        return J[1:, 1:] - np.outer(J[1:, 0], self.diag[1:])

    @staticmethod
    def embed(r):
        d2 = r.size + 1
        d = int(round(math.sqrt(d2)))
        s = np.empty(d2)
        s[1:] = r
        s[0] = 1.0 - r[:d - 1].sum()
        return s


def _as_vector(state, d):
    if isinstance(state, MeanFieldState):
        return state.vector
    v = np.asarray(state, dtype=float)
    if v.shape != (d * d,):
        raise ValueError(f"expected a state of length {d * d}")
    return v


def rhs(params: ModelParams, state) -> np.ndarray:
    """Time derivative of the packed state."""
    return _Model(params).rhs(_as_vector(state, params.d))


def rhs_parts(params: ModelParams, state):
    """The three contributions ``(f, g, h)`` so that rhs = V f + gammaI g + gammaC h."""
    s = _as_vector(state, params.d)
    Qf, G, Qh = _tensors(params.d, tuple(params.dissipator.ell))
    quad = functools.partial(np.einsum, "aik,i,k->a", optimize=False)
    return quad(Qf, s, s), G @ s, quad(Qh, s, s)


def jacobian(params: ModelParams, state):
    """Jacobian on the trace-one manifold (``sx[-j][-j]`` eliminated).

    Returns ``(matrix, eigenvalues)`` with eigenvalues sorted by descending
    real part.
    """
    J = _Model(params).jacobian_reduced(_as_vector(state, params.d))
    ev = np.linalg.eigvals(J)
    return J, ev[np.lexsort((-ev.imag, -ev.real))]


def qubit_rhs(V, gammaI, gammaC, xyz):
    """Closed three-variable equations for d = 2 in terms of (X, Y, Z)."""
    X, Y, Z = xyz
    return np.array([
        -2 * V * Y * Z - gammaI * X + gammaC * X * Z,
        -2 * V * X * Z - gammaI * Y + gammaC * Y * Z,
        4 * V * X * Y - 2 * gammaI * (Z + 1) - gammaC * (X ** 2 + Y ** 2),
    ])


# ---------------------------------------------------------------------------
# trajectories

@dataclass
class Trajectory:
    spin: SpinQuantum
    times: np.ndarray
    states: np.ndarray
    max_trace_correction: float = 0.0

    @property
    def expectations(self) -> np.ndarray:
        """Array of shape (n_samples, 3) holding X, Y, Z."""
        return self.states @ _observable_rows(self.spin.d).T

    @property
    def purity(self) -> np.ndarray:
        return self.states ** 2 @ _layout(self.spin.d)[4]

    def final(self) -> MeanFieldState:
        return MeanFieldState(self.spin, self.states[-1])

    def to_csv(self, path, params: ModelParams | None = None, seed=None):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            if params is not None:
                fh.write(f"# d={params.d} dissipator={params.dissipator.kind.value} "
                         f"gammaI/|V|={params.gammaI / abs(params.V):.12g} "
                         f"gammaC/|V|={params.gammaC / abs(params.V):.12g} seed={seed}\n")
            w.writerow(["t", "X", "Y", "Z", "purity"])
            for t, e, p in zip(self.times, self.expectations, self.purity):
                w.writerow([f"{t:.12g}", *(f"{x:.12g}" for x in e), f"{p:.12g}"])


def integrate(params: ModelParams, initial, t_end: float, controls: Controls | None = None,
              n_samples: int | None = None) -> Trajectory:
    """Adaptive Dormand-Prince integration of the mean-field equations.

    The trace is restored after every accepted step; the largest correction
    is stored on the returned trajectory and logged.  Raises
    :class:`StiffnessError` if the step size underflows.
    """
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    d = params.d
    s0 = _as_vector(initial, d)
    if abs(s0[:d].sum() - 1.0) > 1e-9:
        raise ValueError("initial state does not have unit trace")
    model = _Model(params)
    controls = controls or Controls()

    def project(y):
        c = 1.0 - y[:d].sum()
        if c:
            y = y.copy()
            y[:d] += c / d
        return y, abs(c)

    t_eval = None if n_samples is None else np.linspace(0.0, t_end, n_samples)
    sol = dopri5(model.rhs, s0, t_end, controls, t_eval=t_eval, project=project)
    if sol.max_projection > 0:
        log.debug("largest trace correction %.3e over %d steps", sol.max_projection, sol.n_steps)
    return Trajectory(params.spin, sol.t, sol.y, sol.max_projection)


# ---------------------------------------------------------------------------
# fixed points

class Stability(enum.Enum):
    STABLE = "stable"
    UNSTABLE = "unstable"
    CENTER = "center"
    MARGINAL = "marginal"


@dataclass
class FixedPoint:
    state: MeanFieldState
    jacobian_eigenvalues: np.ndarray
    classification: Stability

    @property
    def expectations(self) -> SpinExpectations:
        return self.state.expectations()


def _tolerance(params: ModelParams) -> float:
    return 1e-8 * max(params.gammaI + params.gammaC, abs(params.V))


def classify(eigenvalues, params: ModelParams) -> Stability:
    tol = _tolerance(params)
    re, im = np.real(eigenvalues), np.imag(eigenvalues)
    if np.any(re > tol):
        return Stability.UNSTABLE
    if np.all(re < -tol):
        return Stability.STABLE
    if np.all(np.abs(re) <= tol) and np.any(np.abs(im) > tol):
        return Stability.CENTER
    return Stability.MARGINAL


def _newton(model: _Model, s0: np.ndarray, conserve_purity: bool, max_iter: int = 80):
    """Damped Newton iteration on the reduced coordinates; returns vector or None."""
    weights = _layout(model.d)[4]
    target = s0 ** 2 @ weights
    r = s0[1:].copy()
    tol = 1e-13 * model.scale

    def residual(r):
        s = model.embed(r)
        F = model.rhs(s)[1:]
        if conserve_purity:
            F = np.append(F, (s ** 2 @ weights - target) * model.scale)
        return F, s

    F, s = residual(r)
    norm = np.linalg.norm(F)
    for _ in range(max_iter):
        if not np.isfinite(norm) or norm > 1e6 * model.scale:
            return None
        J = model.jacobian_reduced(s)
        if conserve_purity:
            g = 2 * s * weights
            J = np.vstack([J, (g[1:] - g[0] * model.diag[1:]) * model.scale])
        if J.shape[0] == J.shape[1]:
            try:
                step = np.linalg.solve(J, -F)
                if not np.all(np.isfinite(step)):
                    raise np.linalg.LinAlgError
            except np.linalg.LinAlgError:
                step = None
        else:
            step = None
        if step is None or np.linalg.cond(J) > 1e12:
            # Tikhonov-damped normal equations near singular points
            JT = J.T
            mu = 1e-10 * max(np.linalg.norm(J, 2) ** 2, 1e-300)
            step = np.linalg.solve(JT @ J + mu * np.eye(J.shape[1]), -JT @ F)
        lam = 1.0
        for _ in range(30):
            r_new = r + lam * step
            F_new, s_new = residual(r_new)
            n_new = np.linalg.norm(F_new)
            if np.isfinite(n_new) and n_new < (1 - 1e-4 * lam) * norm + tol:
                break
            lam *= 0.5
        else:
            return None
        r, F, s, norm = r_new, F_new, s_new, n_new
        if norm <= tol and np.linalg.norm(lam * step) < 1e-10:
            return s
    return s if norm <= 1e3 * tol else None


def _is_physical(s: np.ndarray, d: int) -> bool:
    return bool(np.linalg.eigvalsh(unpack(s, d)).min() > -1e-8)


def _make_fixed_point(params: ModelParams, s: np.ndarray) -> FixedPoint:
    _, ev = jacobian(params, s)
    return FixedPoint(MeanFieldState(params.spin, s), ev, classify(ev, params))


def _starts(spin: SpinQuantum, n_coherent: int, n_random: int, seed):
    rng = np.random.default_rng(seed)
    out = [random_max_spin_state(rng, spin).vector for _ in range(n_coherent)]
    out += [random_valid_state(rng, spin).vector for _ in range(n_random)]
    return out


def _mirror(s: np.ndarray, d: int) -> np.ndarray:
    """Image under the rotation by pi about z: rho_mn -> (-1)^(m-n) rho_mn."""
    km, kn, *_ = _layout(d)
    odd = ((km - kn) % 2).astype(bool)
    sign = np.concatenate([np.ones(d), np.where(odd, -1.0, 1.0), np.where(odd, -1.0, 1.0)])
    return sign * s


def _dedupe(points, tol=1e-6):
    kept = []
    for s in points:
        if all(np.linalg.norm(s - k) > tol for k in kept):
            kept.append(s)
    return kept


def find_fixed_points(params: ModelParams, n_coherent: int = 50, n_random: int = 20,
                      seed=0, extra_starts=(), polish_time: float = 0.0) -> list:
    """Multi-start Newton search for physical fixed points.

    Starts are ``n_coherent`` seeded spin-coherent states, ``n_random`` random
    density matrices and any ``extra_starts``.  With ``polish_time > 0`` every
    start is first propagated for that time.  For ``gammaI = 0`` the flow is
    isospectral in the averaged density matrix, so the fixed points form
    continua; the purity of each start is then imposed as an extra equation.
    Non-converged starts and unphysical solutions (negative populations) are
    dropped.  Results are closed under the rotation by pi about z, which maps
    fixed points onto fixed points.  The spin-z polarized point is always part
    of the result.
    """
    spin = params.spin
    model = _Model(params)
    conserve = params.gammaI == 0.0
    starts = [_as_vector(s, spin.d) for s in extra_starts]
    starts += _starts(spin, n_coherent, n_random, seed)
    found = [spin_z_state(spin).vector]
    for s0 in starts:
        if polish_time > 0:
            try:
                s0 = integrate(params, s0, polish_time).states[-1]
            except StiffnessError:
                continue
        s = _newton(model, s0, conserve)
        if s is not None and _is_physical(s, spin.d):
            found.append(s)
    found += [_mirror(s, spin.d) for s in found]
    return [_make_fixed_point(params, s) for s in _dedupe(found)]


@dataclass(frozen=True)
class ThresholdCheck:
    stable: bool
    margin: float          # |l_{-j}|^2 (gI + gC) / (2j) - 2|V|


def stability_threshold(params: ModelParams, ell_first=None) -> ThresholdCheck:
    """Stability of the spin-z polarized point from the leading 2 x 2 block.

    ``ell_first`` overrides the (normalised) amplitude ``ell_{-j}`` for
    unnormalised conventions.
    """
    ell0 = params.dissipator.ell[0] if ell_first is None else ell_first
    margin = abs(ell0) ** 2 * (params.gammaI + params.gammaC) / (2 * params.j) - 2 * abs(params.V)
    return ThresholdCheck(margin > 0, margin)


def diagonal_state_stability(params: ModelParams, populations, m0):
    """Analytic eigenvalue pair of a two-plateau diagonal fixed point (gammaI = 0).

    ``populations`` are the diagonal entries for ascending m; they may only
    change between levels ``m0`` and ``m0 + 1``.  Returns
    ``(eigenvalues, Stability)``.
    """
    if params.gammaI != 0:
        raise ValueError("diagonal states are fixed points only for gammaI = 0")
    spin = params.spin
    p = np.asarray(populations, dtype=float)
    if p.shape != (spin.d,) or abs(p.sum() - 1) > 1e-12:
        raise ValueError("populations must be d numbers summing to one")
    k0 = (doubled(m0) + spin.two_j) // 2
    if not 0 <= k0 < spin.d - 1:
        raise ValueError("m0 must lie in -j .. j-1")
    steps = np.diff(p)
    if np.any(np.abs(np.delete(steps, k0)) > 1e-12):
        raise ValueError("populations may only change across the pair (m0, m0+1)")
    S = steps[k0]
    two_m = 2 * k0 - spin.two_j
    A2 = (spin.two_j - two_m) * (spin.two_j + two_m + 2) / 4
    ell2 = abs(params.dissipator.ell[k0]) ** 2
    base = S / (2 * spin.j)
    ev = np.array([base * (ell2 * params.gammaC + 2 * A2 * abs(params.V)),
                   base * (ell2 * params.gammaC - 2 * A2 * abs(params.V))])
    if S == 0:
        verdict = Stability.MARGINAL
    elif S < 0 and ell2 * params.gammaC > 2 * A2 * abs(params.V):
        verdict = Stability.STABLE
    else:
        verdict = Stability.UNSTABLE
    return ev, verdict


# ---------------------------------------------------------------------------
# branches and exponents

def _tracks(params, fp: FixedPoint | None, prev: MeanFieldState) -> bool:
    if fp is None or fp.classification is not Stability.STABLE:
        return False
    s = fp.state.vector
    if np.linalg.norm(s - spin_z_state(params.spin).vector) < 1e-6:
        return False
    return fp.expectations.X * prev.expectations().X > 0


def _continue(params, prev: MeanFieldState) -> FixedPoint | None:
    model = _Model(params)
    s = _newton(model, prev.vector, params.gammaI == 0.0)
    if s is None or not _is_physical(s, params.d):
        return None
    return _make_fixed_point(params, s)


def track_branch(params: ModelParams, seed: MeanFieldState, values, axis: str = "gammaI",
                 resolution: float = 1e-3):
    """Natural-parameter continuation of a stable broken-symmetry fixed point.

    ``values`` are successive rates (in the units of ``params``) for ``axis``.
    Returns ``(rows, end)`` where ``rows`` is a list of ``(value, FixedPoint)``
    and ``end`` is the last trackable value located by bisection to
    ``resolution`` (``None`` if the branch survives the whole grid).
    """
    rows = []
    prev = seed
    last = None
    for v in values:
        p = params.with_rates(**{axis: v})
        fp = _continue(p, prev)
        if not _tracks(p, fp, prev):
            if last is None:
                return rows, None
            lo, hi, s_lo = last, v, prev
            while abs(hi - lo) > resolution:
                mid = 0.5 * (lo + hi)
                pm = params.with_rates(**{axis: mid})
                fm = _continue(pm, s_lo)
                if _tracks(pm, fm, s_lo):
                    lo, s_lo = mid, fm.state
                else:
                    hi = mid
            return rows, lo
        rows.append((v, fp))
        prev, last = fp.state, v
    return rows, None


def broken_branch(params: ModelParams, values, axis: str = "gammaI", seed=0,
                  resolution: float = 1e-3):
    """Locate the X > 0 broken-symmetry steady state at ``values[0]`` and track it."""
    p0 = params.with_rates(**{axis: values[0]})
    fps = [f for f in find_fixed_points(p0, seed=seed)
           if f.classification is Stability.STABLE and f.expectations.X > 1e-9]
    if not fps:
        raise ValueError(f"no stable broken-symmetry point at {axis}={values[0]}")
    start = max(fps, key=lambda f: f.expectations.X)
    return track_branch(params, start.state, values, axis, resolution)


@dataclass
class BranchTable:
    params: ModelParams
    axis: str
    seed: int
    rows: list = field(default_factory=list)
    termination: float | None = None
    gaps: list = field(default_factory=list)

    COLUMNS = ("d", "dissipator", "gammaI/|V|", "gammaC/|V|", "X", "Y", "Z", "stability", "seed")

    def broken(self):
        """Per grid value, the stable row with the largest positive X."""
        best = {}
        for r in self.rows:
            if r["X"] > 1e-9 and (r["value"] not in best or r["X"] > best[r["value"]]["X"]):
                best[r["value"]] = r
        return [best[k] for k in sorted(best)]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(f"# rates in units of |V|; termination={self.termination}\n")
            w = csv.writer(fh)
            w.writerow(self.COLUMNS)
            for r in self.rows:
                w.writerow([r[c] if not isinstance(r[c], float) else f"{r[c]:.12g}"
                            for c in self.COLUMNS])


def sweep_steady_branch(params: ModelParams, values, axis: str = "gammaI", seed: int = 0,
                        n_coherent: int = 50, n_random: int = 20,
                        resolution: float = 1e-3) -> BranchTable:
    """Stable fixed points along a monotone grid of one decay rate.

    Each grid point is seeded with the previous point's stable solutions plus
    fresh random starts.  The broken-symmetry branch is additionally tracked
    by continuation and its termination is located by bisection.
    """
    values = list(values)
    if np.any(np.diff(values) <= 0) and np.any(np.diff(values) >= 0):
        raise ValueError("grid must be monotone")
    table = BranchTable(params, axis, seed)
    Vabs = abs(params.V)
    carry = []
    for i, v in enumerate(values):
        p = params.with_rates(**{axis: v})
        fps = find_fixed_points(p, n_coherent, n_random, seed=seed + i, extra_starts=carry)
        stable = [f for f in fps if f.classification is Stability.STABLE]
        if not stable:
            table.gaps.append(v)
        for f in stable:
            e = f.expectations
            table.rows.append({
                "value": v, "d": p.d, "dissipator": p.dissipator.kind.value,
                "gammaI/|V|": p.gammaI / Vabs, "gammaC/|V|": p.gammaC / Vabs,
                "X": e.X, "Y": e.Y, "Z": e.Z, "stability": f.classification.value,
                "seed": seed,
            })
        carry = [f.state for f in stable]
    broken = [r for r in table.rows if r["X"] > 1e-9]
    if broken:
        first = broken[0]["value"]
        k = values.index(first)
        p = params.with_rates(**{axis: first})
        seeds = [f for f in find_fixed_points(p, n_coherent, n_random, seed=seed + k)
                 if f.classification is Stability.STABLE and f.expectations.X > 1e-9]
        if seeds:
            _, end = track_branch(params, seeds[0].state, values[k:], axis, resolution)
            table.termination = None if end is None else end / Vabs
    return table


@dataclass(frozen=True)
class ExponentFit:
    beta: float
    beta_stderr: float
    prefactor: float
    n_points: int
    window: tuple
    beta_lower_half: float
    beta_upper_half: float


def fit_exponent(distance, values, observable: str = "X",
                 window=(1e-3, 5e-2)) -> ExponentFit:
    """Power-law fit ``obs = c * distance**beta`` inside ``window``.

    ``distance`` is the distance to the critical point, ``2 - (gI+gC)/|V|``;
    ``values`` hold X (fitted as |X|) or Z (fitted as Z + 1) per point.
    """
    eps = np.asarray(distance, dtype=float)
    v = np.asarray(values, dtype=float)
    if observable == "X":
        y = np.abs(v)
    elif observable in ("Z", "Z+1"):
        y = v + 1.0
    else:
        raise ValueError("observable must be 'X' or 'Z+1'")
    lo, hi = window
    sel = (eps >= lo * (1 - 1e-12)) & (eps <= hi * (1 + 1e-12)) & (y > 0)
    if sel.sum() < 5:
        raise ValueError(f"only {int(sel.sum())} points in the fit window; need at least 5")
    lx, ly = np.log(eps[sel]), np.log(y[sel])
    res = stats.linregress(lx, ly)
    mid = np.median(lx)
    halves = []
    for part in (lx <= mid, lx >= mid):
        halves.append(stats.linregress(lx[part], ly[part]).slope if part.sum() >= 3 else np.nan)
    return ExponentFit(res.slope, res.stderr, math.exp(res.intercept), int(sel.sum()),
                       (lo, hi), halves[0], halves[1])


def small_rate_prefactors(params: ModelParams, rates=None, start: float = 0.5):
    """Leading coefficients of ``X ~ c_X gammaI**(1/2)`` and ``Z ~ c_Z gammaI`` as gammaI -> 0.

    ``rates`` (in units of |V|, descending grid appended after ``start``) are
    reached by continuation of the broken branch; the ratios are extrapolated
    linearly to gammaI = 0.  Returns ``(c_X, c_Z)``.
    """
    Vabs = abs(params.V)
    rates = np.geomspace(1e-2, 1e-3, 10) if rates is None else np.asarray(rates)
    approach = np.geomspace(start, rates[0], 40)
    grid = np.concatenate([approach, rates[1:]]) * Vabs
    rows, _ = broken_branch(params, list(grid), "gammaI")
    got = {round(v / Vabs, 15): fp.expectations for v, fp in rows}
    g = np.array([r for r in rates if round(r, 15) in got])
    if g.size < 3:
        raise ValueError("branch could not be followed to small rates")
    X = np.array([got[round(r, 15)].X for r in g])
    Z = np.array([got[round(r, 15)].Z for r in g])
    cX = np.polyfit(g, X / np.sqrt(g), 1)[-1]
    cZ = np.polyfit(g, Z / g, 1)[-1]
    return float(cX), float(cZ)


@dataclass(frozen=True)
class OrbitAverage:
    X: float
    Y: float
    Z: float
    period: float
    n_periods: int


def orbit_time_average(params: ModelParams, initial, t_total: float | None = None,
                       discard: float = 0.2, n_samples: int = 50001) -> OrbitAverage:
    """Time average along an oscillatory trajectory.

    The first ``discard`` fraction of the run is dropped as transient; the
    average is then taken over whole periods delimited by upward zero
    crossings of Z (falls back to the whole retained window if fewer than two
    crossings occur).
    """
    t_total = 500.0 / abs(params.V) if t_total is None else t_total
    tr = integrate(params, initial, t_total, Controls(rtol=1e-10, atol=1e-12), n_samples=n_samples)
    t, xyz = tr.times, tr.expectations
    keep = t >= discard * t_total
    t, xyz = t[keep], xyz[keep]
    z = xyz[:, 2]
    up = np.nonzero((z[:-1] < 0) & (z[1:] >= 0))[0]
    if len(up) >= 2:
        def crossing(i):
            return t[i] - z[i] * (t[i + 1] - t[i]) / (z[i + 1] - z[i])
        t0, t1 = crossing(up[0]), crossing(up[-1])
        tt = np.concatenate([[t0], t[up[0] + 1:up[-1] + 1], [t1]])
        vals = np.vstack([
            [np.interp(t0, t, xyz[:, c]) for c in range(3)],
            xyz[up[0] + 1:up[-1] + 1],
            [np.interp(t1, t, xyz[:, c]) for c in range(3)],
        ])
        mean = trapezoid(vals, tt, axis=0) / (t1 - t0)
        n = len(up) - 1
        return OrbitAverage(*mean, (t1 - t0) / n, n)
    mean = trapezoid(xyz, t, axis=0) / (t[-1] - t[0])
    return OrbitAverage(*mean, float("nan"), 0)


# ---------------------------------------------------------------------------
# large-spin limit

def largespin_rhs(params: ModelParams, x, y, z):
    """Classical equations of N scaled spins in the j -> infinity limit.

    Returns ``(dx, dy, dz)`` arrays of the same length as the inputs.
    """
    x, y, z = (np.asarray(a, dtype=float) for a in (x, y, z))
    N = x.size
    V, gI, gC = params.V, params.gammaI, params.gammaC
    Sx, Sy = x.sum() / N, y.sum() / N
    dx = -2 * V * Sy * z + gI * x * z + gC * Sx * z
    dy = -2 * V * Sx * z + gI * y * z + gC * Sy * z
    dz = 2 * V * (Sx * y + Sy * x) - gI * (x ** 2 + y ** 2) - gC * (Sx * x + Sy * y)
    return dx, dy, dz


def integrate_largespin(params: ModelParams, x0, y0, z0, t_end: float,
                        controls: Controls | None = None, t_eval=None):
    """Integrate :func:`largespin_rhs`; returns ``(times, array (n_t, 3, N))``."""
    N = len(x0)

    def f(u):
        return np.concatenate(largespin_rhs(params, u[:N], u[N:2 * N], u[2 * N:]))

    sol = dopri5(f, np.concatenate([x0, y0, z0]), t_end, controls or Controls(), t_eval=t_eval)
    return sol.t, sol.y.reshape(len(sol.t), 3, N)
