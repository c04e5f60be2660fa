"""Operators of the reduced rotational master equation.

Units: hbar = 1, energies and rates in units of the rotational constant B,
time in 1/B.  The only couplings are the two-photon Rabi frequency
``omega_R`` (in B) and the ratio ``gamma_over_delta``.

The transition dipole lies along the internuclear axis, so its rotational
matrix elements are direction cosines between |j m> (ground) and
|j_e m_e> (excited) with j_e = j +- 1.  The excited ladder is truncated one
step above the ground ladder; the closure relation over ground states, and
hence the sum rule between the jump operators and the Raman Hamiltonian, is
exact on the interior j <= j_max - 2 only.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from math import sqrt

import numpy as np

from .angmom import RotBasis, build_basis, cg
from .errors import ValidationError

AXES = ("x", "y", "z")

NAMED_POLARIZATIONS = {
    "x": (1.0, 0.0, 0.0),
    "y": (0.0, 1.0, 0.0),
    "z": (0.0, 0.0, 1.0),
    # spherical unit vectors e_{+1} = -(x + iy)/sqrt2, e_{-1} = (x - iy)/sqrt2
    "sigma+": (-1 / sqrt(2), -1j / sqrt(2), 0.0),
    "sigma-": (1 / sqrt(2), -1j / sqrt(2), 0.0),
}


@dataclass(frozen=True)
class FieldComponent:
    """One spectral component of the slowly varying field amplitude.

    ``detuning`` is the offset from the carrier in units of B; the component
    carries the factor exp(-i detuning t).
    """

    amplitude: complex = 1.0
    polarization: tuple = (1.0, 0.0, 0.0)
    detuning: float = 0.0

    def __post_init__(self):
        pol = self.polarization
        if isinstance(pol, str):
            if pol not in NAMED_POLARIZATIONS:
                raise ValidationError(f"unknown polarization name {pol!r}", "polarization")
            pol = NAMED_POLARIZATIONS[pol]
        vec = np.asarray(pol, dtype=np.complex128)
        if vec.shape != (3,):
            raise ValidationError("polarization must be a 3-vector", "polarization")
        norm = np.linalg.norm(vec)
        if abs(norm - 1.0) > 1e-9:
            raise ValidationError(f"polarization must have unit norm, got {norm:.6g}", "polarization")
        object.__setattr__(self, "polarization", tuple(complex(v) for v in vec))
        object.__setattr__(self, "amplitude", complex(self.amplitude))
        object.__setattr__(self, "detuning", float(self.detuning))
        if abs(self.detuning) > 10.0:
            warnings.warn(
                f"field component detuned by {self.detuning} B; spectral width should stay O(B)",
                stacklevel=3,
            )


@dataclass(frozen=True)
class FieldConfig:
    components: tuple
    omega_R: float
    gamma_over_delta: float
    red_detuned: bool = False

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ValidationError("at least one field component is required", "field.components")
        object.__setattr__(self, "components", comps)
        if not self.omega_R >= 0:
            raise ValidationError(f"omega_R must be >= 0, got {self.omega_R}", "field.omega_R")
        if not 0 <= self.gamma_over_delta < 1:
            raise ValidationError(
                f"gamma_over_delta must lie in [0, 1), got {self.gamma_over_delta}",
                "field.gamma_over_delta",
            )
        if self.gamma_over_delta > 0.1:
            warnings.warn(
                f"gamma_over_delta={self.gamma_over_delta} is not far off resonance", stacklevel=3
            )
        if sum(abs(c.amplitude) ** 2 for c in comps) == 0:
            raise ValidationError("field amplitudes are all zero", "field.components")

    @property
    def time_independent(self) -> bool:
        return len({c.detuning for c in self.components}) == 1

    def weights(self, t: float) -> np.ndarray:
        """Normalized complex weight of every component at time t."""
        a = np.array([c.amplitude for c in self.components], dtype=np.complex128)
        a /= np.sqrt(np.sum(np.abs(a) ** 2))
        if self.time_independent:
            return a
        d = np.array([c.detuning for c in self.components])
        return a * np.exp(-1j * d * t)

    def polarization(self, t: float = 0.0) -> np.ndarray:
        pols = np.array([c.polarization for c in self.components], dtype=np.complex128)
        return self.weights(t) @ pols


def kerr_field(omega_R: float = 0.1, gamma_over_delta: float = 0.01) -> FieldConfig:
    """Single cw field, linearly polarized along x."""
    return FieldConfig((FieldComponent(1.0, "x", 0.0),), omega_R, gamma_over_delta)


def direction_cosine(ground: RotBasis, excited: RotBasis, q: int) -> np.ndarray:
    """Spherical component n_q of the internuclear unit vector, ground -> excited.

    Rows index the excited basis, columns the ground basis.
    """
    if ground.manifold != "ground" or excited.manifold != "excited":
        raise ValidationError("direction_cosine needs a ground basis and an excited basis")
    if q not in (-1, 0, 1):
        raise ValueError(f"q must be -1, 0 or 1, got {q!r}")
    if excited.j_max < ground.j_max:
        raise ValidationError("excited basis must extend at least as far as the ground basis")
    out = np.zeros((excited.dim, ground.dim))
    for col, (j, m) in enumerate(ground.states):
        for je in (j - 1, j + 1):
            me = m + q
            if je < 0 or je > excited.j_max or abs(me) > je:
                continue
            out[excited.index(je, me), col] = (
                cg(j, m, 1, q, je, me) * cg(j, 0, 1, 0, je, 0) * sqrt((2 * j + 1) / (2 * je + 1))
            )
    return out


def cartesian_dipoles(ground: RotBasis, excited: RotBasis) -> np.ndarray:
    """Cartesian direction cosines (n_x, n_y, n_z), ground -> excited, stacked."""
    dm, d0, dp = (direction_cosine(ground, excited, q) for q in (-1, 0, 1))
    return np.stack(
        [(dm - dp) / sqrt(2), 1j * (dm + dp) / sqrt(2), d0.astype(np.complex128)]
    )


def free_rotor_hamiltonian(basis: RotBasis) -> np.ndarray:
    j = basis.j.astype(float)
    return np.diag(j * (j + 1)).astype(np.complex128)


@dataclass(frozen=True)
class CouplingSet:
    """All prebuilt operators for one rotational basis and one field."""

    ground: RotBasis
    excited: RotBasis
    field: FieldConfig
    H_M: np.ndarray = field(repr=False)
    dipoles: np.ndarray = field(repr=False)  # (3, n_e, n_g), ground -> excited
    N: np.ndarray = field(repr=False)  # (3, n_g, n_e), excited -> ground
    A_parts: np.ndarray = field(repr=False)  # (n_comp, n_e, n_g)
    jump_parts: np.ndarray = field(repr=False)  # (3, n_comp, n_g, n_g)

    @property
    def dim(self) -> int:
        return self.ground.dim

    @property
    def time_independent(self) -> bool:
        return self.field.time_independent

    @property
    def raman_sign(self) -> float:
        # red detuning flips the light shift; the dissipator only sees |Gamma/Delta|
        return 1.0 if self.field.red_detuned else -1.0

    @property
    def jump_scale(self) -> float:
        return sqrt(self.field.gamma_over_delta * self.field.omega_R)

    def interior(self) -> np.ndarray:
        """Boolean mask of ground states with j <= j_max - 2."""
        return self.ground.j <= self.ground.j_max - 2

    def A(self, t: float = 0.0) -> np.ndarray:
        return np.tensordot(self.field.weights(t), self.A_parts, axes=1)


def build_coupling(j_max: int, field_config: FieldConfig) -> CouplingSet:
    ground = build_basis(j_max, "ground")
    excited = build_basis(j_max + 1, "excited")
    dip = cartesian_dipoles(ground, excited)
    N = np.conj(np.transpose(dip, (0, 2, 1)))
    pols = np.array([c.polarization for c in field_config.components], dtype=np.complex128)
    A_parts = np.einsum("kc,cen->ken", pols, dip)
    jump_parts = np.einsum("ige,keh->ikgh", N, A_parts)
    cs = CouplingSet(
        ground=ground,
        excited=excited,
        field=field_config,
        H_M=free_rotor_hamiltonian(ground),
        dipoles=dip,
        N=N,
        A_parts=A_parts,
        jump_parts=jump_parts,
    )
    for arr in (cs.H_M, cs.dipoles, cs.N, cs.A_parts, cs.jump_parts):
        arr.setflags(write=False)
    return cs


def build_H_R(cs: CouplingSet, t: float = 0.0) -> np.ndarray:
    """Stimulated Raman Hamiltonian -omega_R A(t)^dag A(t) (sign flipped if red detuned)."""
    A = cs.A(t)
    H = cs.raman_sign * cs.field.omega_R * (A.conj().T @ A)
    return 0.5 * (H + H.conj().T)


def build_jumps(cs: CouplingSet, t: float = 0.0) -> np.ndarray:
    """Spontaneous Raman jump operators S_x, S_y, S_z stacked as (3, n, n)."""
    w = cs.field.weights(t)
    return cs.jump_scale * np.tensordot(w, cs.jump_parts, axes=([0], [1]))


def jump_rate_operator(cs: CouplingSet, t: float = 0.0) -> np.ndarray:
    """sum_i S_i^dag S_i."""
    S = build_jumps(cs, t)
    K = np.einsum("iab,iac->bc", S.conj(), S)
    return 0.5 * (K + K.conj().T)


def build_H_eff(cs: CouplingSet, t: float = 0.0) -> np.ndarray:
    """Non-Hermitian no-jump generator H_M + H_R - (i/2) sum_i S_i^dag S_i.

    On the interior subspace this equals H_M + (1 + i Gamma/2Delta) H_R.
    """
    return cs.H_M + build_H_R(cs, t) - 0.5j * jump_rate_operator(cs, t)
