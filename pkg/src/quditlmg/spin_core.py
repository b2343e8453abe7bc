"""Spin algebra for d-level particles and the jump-operator amplitudes.

Level labels ``m = -j, ..., j`` are stored as *doubled* integers
(``two_m = 2*m``) wherever they are used as identities, so that half-integer
spins never rely on floating-point equality. Array positions use the shifted
index ``k = m + j`` running over ``0 .. d-1``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

__all__ = [
    "SpinQuantum",
    "DissipatorKind",
    "DissipatorSpec",
    "ModelParams",
    "ladder_coeff",
    "make_dissipator",
    "single_particle_matrices",
    "jump_operator",
    "doubled",
]


def doubled(x) -> int:
    """Return ``2*x`` as an int, rejecting values that are not half-integers."""
    two = Fraction(x).limit_denominator(64) * 2
    if two.denominator != 1:
        raise ValueError(f"{x!r} is not a half-integer")
    return int(two)


@dataclass(frozen=True)
class SpinQuantum:
    """Number of levels ``d`` of one particle; ``j = (d-1)/2``."""

    d: int

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 2:
            raise ValueError(f"d must be an integer >= 2, got {self.d!r}")
        object.__setattr__(self, "d", int(self.d))

    @classmethod
    def from_j(cls, j) -> "SpinQuantum":
        return cls(doubled(j) + 1)

    @property
    def two_j(self) -> int:
        return self.d - 1

    @property
    def j(self) -> float:
        return self.two_j / 2

    @property
    def m_values(self) -> np.ndarray:
        """Magnetic quantum numbers ``-j .. j`` in ascending order."""
        return (np.arange(self.d) * 2 - self.two_j) / 2


def ladder_coeff(j, m) -> float:
    """Matrix element ``<m+1| j_+ |m> = sqrt((j-m)(j+m+1))``.

    Zero outside ``-j <= m <= j-1``; in particular ``m = j`` and ``m = -j-1``
    give 0, which lets boundary terms of level sums drop out.
    """
    tj, tm = doubled(j), doubled(m)
    if (tj - tm) % 2:
        raise ValueError(f"m={m!r} is not a level of spin j={j!r}")
    if tm < -tj or tm > tj - 2:
        return 0.0
    return math.sqrt((tj - tm) * (tj + tm + 2)) / 2


def _ladder_array(spin: SpinQuantum) -> np.ndarray:
    tj = spin.two_j
    return np.array([math.sqrt((tj - tm) * (tj + tm + 2)) / 2
                     for tm in range(-tj, tj, 2)])


class DissipatorKind(enum.Enum):
    SPIN_LADDER = "spin-ladder"
    M_INDEPENDENT = "m-independent"
    CUSTOM = "custom"

    @classmethod
    def parse(cls, value) -> "DissipatorKind":
        if isinstance(value, cls):
            return value
        key = "".join(ch for ch in str(value).lower() if ch.isalnum())
        aliases = {"spinladder": cls.SPIN_LADDER, "ladder": cls.SPIN_LADDER,
                   "mindependent": cls.M_INDEPENDENT, "custom": cls.CUSTOM}
        if key not in aliases:
            raise ValueError(f"unknown dissipator kind {value!r}")
        return aliases[key]


@dataclass(frozen=True)
class DissipatorSpec:
    """Amplitudes ``ell[k]`` of ``L = sum_m ell_m |m><m+1|`` for ``m = -j .. j-1``.

    ``ell[0]`` is always ``sqrt(2j)``. ``rate_factor`` is the factor by which
    decay rates must be multiplied to compensate the normalisation of a custom
    amplitude list (1 for the built-in kinds).
    """

    ell: tuple
    kind: DissipatorKind
    rate_factor: float = 1.0

    @property
    def d(self) -> int:
        return len(self.ell) + 1

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.ell, dtype=complex)

    @property
    def is_real(self) -> bool:
        return bool(np.all(np.abs(self.array.imag) == 0.0))


def make_dissipator(kind, spin: SpinQuantum, ell=None) -> DissipatorSpec:
    """Build a normalised dissipator.

    For ``kind='custom'`` the amplitudes are rescaled so that the first one
    equals ``sqrt(2j)``; the rescaling ``c`` is reported as
    ``rate_factor = |c|**-2`` (multiply gamma_I and gamma_C by it).
    """
    kind = DissipatorKind.parse(kind)
    root = math.sqrt(spin.two_j)
    if kind is DissipatorKind.SPIN_LADDER:
        return DissipatorSpec(tuple(complex(x) for x in _ladder_array(spin)), kind)
    if kind is DissipatorKind.M_INDEPENDENT:
        return DissipatorSpec(tuple(complex(root) for _ in range(spin.d - 1)), kind)
    if ell is None:
        raise ValueError("custom dissipator needs explicit amplitudes")
    ell = np.asarray(ell, dtype=complex)
    if ell.shape != (spin.d - 1,):
        raise ValueError(f"expected {spin.d - 1} amplitudes, got shape {ell.shape}")
    if ell[0] == 0:
        raise ValueError("ell_{-j} = 0 cannot be normalised")
    c = root / ell[0]
    return DissipatorSpec(tuple(complex(x) for x in c * ell), kind, rate_factor=float(abs(c)) ** -2)


@dataclass(frozen=True)
class ModelParams:
    """One point of the phase diagram; all rates in the same frequency unit."""

    spin: SpinQuantum
    V: float
    gammaI: float
    gammaC: float
    dissipator: DissipatorSpec = field(default=None)

    def __post_init__(self):
        if self.gammaI < 0 or self.gammaC < 0:
            raise ValueError("decay rates must be non-negative")
        if self.dissipator is None:
            object.__setattr__(self, "dissipator", make_dissipator("spin-ladder", self.spin))
        if self.dissipator.d != self.spin.d:
            raise ValueError("dissipator does not match the number of levels")

    @classmethod
    def build(cls, d: int, V: float, gammaI: float, gammaC: float, kind="spin-ladder", ell=None):
        spin = SpinQuantum(d)
        diss = make_dissipator(kind, spin, ell)
        f = diss.rate_factor
        return cls(spin, float(V), float(gammaI) * f, float(gammaC) * f, diss)

    @property
    def d(self) -> int:
        return self.spin.d

    @property
    def j(self) -> float:
        return self.spin.j

    def with_rates(self, gammaI=None, gammaC=None, V=None) -> "ModelParams":
        return ModelParams(self.spin,
                           self.V if V is None else float(V),
                           self.gammaI if gammaI is None else float(gammaI),
                           self.gammaC if gammaC is None else float(gammaC),
                           self.dissipator)


def single_particle_matrices(spin: SpinQuantum) -> dict:
    """Spin matrices in the basis ``|-j>, ..., |j>`` (ascending m)."""
    d = spin.d
    jp = np.zeros((d, d), dtype=complex)
    jp[np.arange(1, d), np.arange(d - 1)] = _ladder_array(spin)
    jm = jp.conj().T
    return {
        "jp": jp,
        "jm": jm,
        "jx": (jp + jm) / 2,
        "jy": (jp - jm) / 2j,
        "jz": np.diag(spin.m_values).astype(complex),
    }


def jump_operator(diss: DissipatorSpec) -> np.ndarray:
    """Single-particle jump operator ``sum_m ell_m |m><m+1|`` as a d x d matrix."""
    d = diss.d
    L = np.zeros((d, d), dtype=complex)
    L[np.arange(d - 1), np.arange(1, d)] = diss.array
    return L
