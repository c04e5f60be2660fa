"""Angular-momentum algebra on a truncated rigid-rotor ladder.

States are |j, m> with 0 <= j <= j_max, ordered lexicographically (j first,
then m ascending).  Operators are dense complex ``numpy`` arrays indexed by
that ordering.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from math import comb, factorial, sqrt
from typing import Literal

import numpy as np

from .errors import TruncationError, ValidationError

Manifold = Literal["ground", "excited"]


def _frozen(a):
    a = np.asarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class RotBasis:
    j_max: int
    manifold: Manifold = "ground"
    states: tuple = field(init=False, repr=False, compare=False)
    j: np.ndarray = field(init=False, repr=False, compare=False)
    m: np.ndarray = field(init=False, repr=False, compare=False)
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if int(self.j_max) != self.j_max or self.j_max < 0:
            raise ValidationError(f"j_max must be a non-negative integer, got {self.j_max!r}", "j_max")
        if self.manifold not in ("ground", "excited"):
            raise ValidationError(f"unknown manifold {self.manifold!r}", "manifold")
        states = tuple((j, m) for j in range(self.j_max + 1) for m in range(-j, j + 1))
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "j", _frozen(np.array([s[0] for s in states], dtype=np.int64)))
        object.__setattr__(self, "m", _frozen(np.array([s[1] for s in states], dtype=np.int64)))
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(states)})

    def __len__(self):
        return len(self.states)

    @property
    def dim(self) -> int:
        return len(self.states)

    def index(self, j: int, m: int) -> int:
        try:
            return self._index[(j, m)]
        except KeyError:
            raise TruncationError(f"state |{j},{m}> is not in a basis with j_max={self.j_max}") from None

    def block(self, j: int) -> slice:
        """Slice of the basis covering the 2j+1 states of one j multiplet."""
        if not 0 <= j <= self.j_max:
            raise TruncationError(f"j={j} outside 0..{self.j_max}")
        return slice(j * j, (j + 1) * (j + 1))

    def mask(self, j_min: int) -> np.ndarray:
        return self.j >= j_min


@dataclass(frozen=True)
class PureState:
    basis: RotBasis
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=np.complex128)
        if amps.shape != (self.basis.dim,):
            raise ValidationError(
                f"expected {self.basis.dim} amplitudes, got shape {amps.shape}", "amplitudes"
            )
        object.__setattr__(self, "amplitudes", _frozen(amps))

    @property
    def norm2(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    def normalized(self) -> "PureState":
        return PureState(self.basis, self.amplitudes / np.sqrt(self.norm2))

    def projector(self) -> np.ndarray:
        return np.outer(self.amplitudes, self.amplitudes.conj())


def build_basis(j_max: int, manifold: Manifold = "ground") -> RotBasis:
    return RotBasis(j_max, manifold)


def build_J(basis: RotBasis, axis: str) -> np.ndarray:
    """Cartesian angular-momentum component as a dense Hermitian matrix."""
    n = basis.dim
    j = basis.j.astype(float)
    m = basis.m.astype(float)
    if axis == "z":
        return np.diag(m).astype(np.complex128)
    # J_+ |j,m> = sqrt(j(j+1) - m(m+1)) |j,m+1>
    jp = np.zeros((n, n), dtype=np.complex128)
    src = np.flatnonzero(basis.m < basis.j)
    jp[src + 1, src] = np.sqrt(j[src] * (j[src] + 1) - m[src] * (m[src] + 1))
    jm = jp.conj().T
    if axis == "x":
        return 0.5 * (jp + jm)
    if axis == "y":
        return -0.5j * (jp - jm)
    raise ValueError(f"axis must be 'x', 'y' or 'z', got {axis!r}")


def build_J_all(basis: RotBasis) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return build_J(basis, "x"), build_J(basis, "y"), build_J(basis, "z")


def _check_jm(j, m, name):
    for v, label in ((j, "j"), (m, "m")):
        if int(v) != v:
            raise ValueError(f"{name}: {label}={v!r} is not an integer")
    if j < 0 or abs(m) > j:
        raise ValueError(f"{name}: invalid pair (j={j}, m={m})")


@lru_cache(maxsize=None)
def _cg_exact(j1, m1, j2, m2, J, M):
    # Racah's closed form; returns (sum, prefactor^2) as exact rationals
    pref = Fraction(
        (2 * J + 1)
        * factorial(J + j1 - j2)
        * factorial(J - j1 + j2)
        * factorial(j1 + j2 - J)
        * factorial(J + M)
        * factorial(J - M)
        * factorial(j1 - m1)
        * factorial(j1 + m1)
        * factorial(j2 - m2)
        * factorial(j2 + m2),
        factorial(j1 + j2 + J + 1),
    )
    k_min = max(0, j2 - J - m1, j1 - J + m2)
    k_max = min(j1 + j2 - J, j1 - m1, j2 + m2)
    s = Fraction(0)
    for k in range(k_min, k_max + 1):
        den = (
            factorial(k)
            * factorial(j1 + j2 - J - k)
            * factorial(j1 - m1 - k)
            * factorial(j2 + m2 - k)
            * factorial(J - j2 + m1 + k)
            * factorial(J - j1 - m2 + k)
        )
        s += Fraction((-1) ** k, den)
    return s, pref


def cg(j1: int, m1: int, j2: int, m2: int, J: int, M: int) -> float:
    """Clebsch-Gordan coefficient <j1 m1; j2 m2 | J M> (Condon-Shortley phases).

    Integer angular momenta only.  Raises ``ValueError`` for invalid (j, m)
    pairs on the uncoupled side; a coupled pair outside the selection rules
    gives 0.
    """
    _check_jm(j1, m1, "first")
    _check_jm(j2, m2, "second")
    if int(J) != J or int(M) != M or J < 0:
        raise ValueError(f"coupled: invalid pair (J={J}, M={M})")
    j1, m1, j2, m2, J, M = (int(v) for v in (j1, m1, j2, m2, J, M))
    # |M| > J is excluded by the same selection rules that force M = m1 + m2
    if M != m1 + m2 or abs(M) > J or not abs(j1 - j2) <= J <= j1 + j2:
        return 0.0
    s, pref = _cg_exact(j1, m1, j2, m2, J, M)
    if s == 0:
        return 0.0
    mag = sqrt(float(s * s * pref))
    return mag if s > 0 else -mag


# e^{i s m phi} with s = -1 puts <J> along (theta, phi) for the J_y built above
COHERENT_PHASE_SIGN = -1


def coherent_state(basis: RotBasis, j: int, theta: float, phi: float) -> PureState:
    """Coherent angular-momentum state |j, theta, phi> on the j multiplet.

    <J> = j (sin th cos ph, sin th sin ph, cos th).
    """
    if j > basis.j_max:
        raise TruncationError(f"coherent state j={j} exceeds basis j_max={basis.j_max}")
    if j < 0 or int(j) != j:
        raise ValidationError(f"j must be a non-negative integer, got {j!r}", "j")
    amps = np.zeros(basis.dim, dtype=np.complex128)
    c, s = np.cos(theta / 2.0), np.sin(theta / 2.0)
    # cos(pi/2) is 6e-17 in floating point; keep the polar cases exact
    c = 0.0 if abs(c) < 1e-15 else c
    s = 0.0 if abs(s) < 1e-15 else s
    for m in range(-j, j + 1):
        amps[basis.index(j, m)] = (
            sqrt(comb(2 * j, j + m))
            * c ** (j + m)
            * s ** (j - m)
            * np.exp(1j * COHERENT_PHASE_SIGN * m * phi)
        )
    return PureState(basis, amps)


def basis_state(basis: RotBasis, j: int, m: int) -> PureState:
    amps = np.zeros(basis.dim, dtype=np.complex128)
    amps[basis.index(j, m)] = 1.0
    return PureState(basis, amps)
