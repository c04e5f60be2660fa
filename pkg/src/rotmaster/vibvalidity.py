"""Vibrational heating by spontaneous Raman scattering.

Each spontaneous Raman event moves the vibrational ladder through an excited
electronic potential displaced by eta/2 oscillator units, so populations
follow the rate equation

    dP_nu/dt = r * sum_nu' (K[nu, nu'] - delta) P_nu',   K = F @ F,

with F[m, n] the Franck-Condon factor |<m|D(eta/2)|n>|^2 and r = Omega_R Gamma/Delta.
Starting from the ground state the mean grows as g t and the variance as
(g t)^2 + g t (1 + 3 eta^2 / 4), with g = eta^2 r / 2.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.optimize import brentq

from . import _kernels
from .errors import ValidationError

DEFAULT_NU_MAX = 60
DEFAULT_MARGIN = 0.1
KERNEL_TOL = 1e-8
MAX_NU = 2000


def _table(beta: float, n: int) -> np.ndarray:
    return _kernels.displaced_table(float(beta), int(n), int(n))


def fc_overlap(m: int, n: int, beta: float) -> float:
    """|<m| D(beta) |n>|^2 for harmonic-oscillator levels m, n >= 0."""
    if int(m) != m or int(n) != n or m < 0 or n < 0:
        raise ValueError(f"vibrational quantum numbers must be non-negative integers, got ({m}, {n})")
    size = max(int(m), int(n)) + 1
    return float(_table(beta, size)[int(m), int(n)] ** 2)


def fc_matrix(beta: float, n_rows: int, n_cols: int) -> np.ndarray:
    D = _kernels.displaced_table(float(beta), int(n_rows), int(n_cols))
    return D * D


@dataclass(frozen=True)
class VibMoments:
    t: np.ndarray | float
    nu_bar: np.ndarray | float
    var_nu: np.ndarray | float


@dataclass
class VibRateModel:
    """Rate model for the vibrational ladder.

    ``rate_prefactor`` is Omega_R Gamma/Delta in units of B.  The frequency
    ratios are only needed for ``max_valid_time``.  The ladder grows from
    ``nu_max`` until every column nu' <= nu_max/2 of the kernel loses less
    than 1e-8 probability to the truncation.
    """

    eta: float
    rate_prefactor: float
    nu_max: int = DEFAULT_NU_MAX
    omega_nu_over_B: float | None = None
    delta_over_B: float | None = None
    auto_extend: bool = True
    kernel: np.ndarray = field(init=False, repr=False)
    deficit: float = field(init=False)

    def __post_init__(self):
        if not self.eta >= 0:
            raise ValidationError(f"eta must be >= 0, got {self.eta}", "eta")
        if not self.rate_prefactor >= 0:
            raise ValidationError(f"rate_prefactor must be >= 0, got {self.rate_prefactor}", "rate_prefactor")
        if int(self.nu_max) != self.nu_max or self.nu_max < 1:
            raise ValidationError(f"nu_max must be a positive integer, got {self.nu_max}", "nu_max")
        for name in ("omega_nu_over_B", "delta_over_B"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValidationError(f"{name} must be > 0, got {v}", name)
        nu_max = int(self.nu_max)
        while True:
            K, deficit = self._build(nu_max)
            if deficit < KERNEL_TOL:
                break
            if not self.auto_extend or nu_max >= MAX_NU:
                raise ValidationError(
                    f"vibrational ladder nu_max={nu_max} loses {deficit:.2e} probability per event; "
                    "increase nu_max", "nu_max",
                )
            nu_max = int(nu_max * 1.5)
        self.nu_max = nu_max
        self.kernel = K
        self.deficit = deficit

    @property
    def beta(self) -> float:
        return 0.5 * self.eta

    @property
    def g(self) -> float:
        return 0.5 * self.eta**2 * self.rate_prefactor

    def _build(self, nu_max):
        # intermediate (excited-potential) ladder twice as deep as the ground one
        F = fc_matrix(self.beta, 2 * nu_max + 1, 2 * nu_max + 1)
        K = F[: nu_max + 1, :] @ F[:, : nu_max + 1]  # sum over the intermediate level
        cols = 1.0 - K.sum(axis=0)
        deficit = float(np.max(np.abs(cols[: nu_max // 2 + 1])))
        return K, deficit

    def generator(self) -> np.ndarray:
        """r (K - diag(column sums)); transitions out of the ladder are dropped."""
        K = self.kernel
        return self.rate_prefactor * (K - np.diag(K.sum(axis=0)))


def _moments(P):
    nu = np.arange(P.shape[-1])
    mean = P @ nu
    second = P @ nu**2
    return mean, second - mean**2


@dataclass(frozen=True)
class VibSolution:
    t: np.ndarray
    P: np.ndarray  # (T, nu_max + 1)
    moments: VibMoments


def integrate_rate_eq(model: VibRateModel, P0, grid) -> VibSolution:
    """Populations and moments on ``grid`` via exact exponentials of the rate matrix."""
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or len(grid) < 1 or np.any(np.diff(grid) <= 0):
        raise ValidationError("grid must be strictly increasing", "grid")
    P0 = np.asarray(P0, dtype=float)
    n = model.nu_max + 1
    if P0.ndim != 1 or len(P0) > n:
        raise ValidationError(f"P0 must be a vector of at most {n} populations", "P0")
    if np.any(P0 < 0) or abs(P0.sum() - 1.0) > 1e-12:
        raise ValidationError("P0 must be a probability distribution", "P0")
    p = np.zeros(n)
    p[: len(P0)] = P0
    G = model.generator()
    out = np.empty((len(grid), n))
    cache = {}
    t_prev = 0.0
    for i, t in enumerate(grid):
        dt = t - t_prev
        key = round(dt, 12)
        if key not in cache:
            cache[key] = scipy.linalg.expm(G * dt)
        p = cache[key] @ p
        out[i] = p
        t_prev = t
    mean, var = _moments(out)
    return VibSolution(grid, out, VibMoments(grid, mean, var))


def closed_form_moments(model: VibRateModel, t) -> VibMoments:
    gt = model.g * np.asarray(t, dtype=float)
    return VibMoments(t, gt, gt**2 + gt * (1.0 + 0.75 * model.eta**2))


@dataclass(frozen=True)
class ValidityBound:
    margin_bound: float  # c * Delta^2 / (Gamma omega_nu Omega_R) / eta^2, units of 1/B
    crossing_time: float  # omega_nu (nu_bar + dnu) = Delta, units of 1/B
    margin: float


def max_valid_time(model: VibRateModel, margin: float = DEFAULT_MARGIN) -> ValidityBound:
    """Interaction times for which vibrational heating stays below the detuning."""
    if model.omega_nu_over_B is None or model.delta_over_B is None:
        raise ValidationError("omega_nu_over_B and delta_over_B are required", "vibrational")
    if model.eta == 0 or model.rate_prefactor == 0:
        return ValidityBound(np.inf, np.inf, margin)
    D = model.delta_over_B / model.omega_nu_over_B
    bound = margin * D / (model.rate_prefactor * model.eta**2)

    def excess(t):
        m = closed_form_moments(model, t)
        return float(m.nu_bar + np.sqrt(m.var_nu)) - D

    hi = 1.0 / model.g
    while excess(hi) < 0:
        hi *= 2.0
    crossing = brentq(excess, 0.0, hi, xtol=1e-14 * hi, rtol=1e-14)
    return ValidityBound(float(bound), float(crossing), margin)


def validity_report(model: VibRateModel, t_max: float, margin: float = DEFAULT_MARGIN) -> dict:
    b = max_valid_time(model, margin)
    ok = t_max <= b.margin_bound
    report = {
        "evaluated": True,
        "eta": model.eta,
        "rate_prefactor": model.rate_prefactor,
        "omega_nu_over_B": model.omega_nu_over_B,
        "delta_over_B": model.delta_over_B,
        "margin": margin,
        "tau_max_margin": b.margin_bound,
        "tau_max_crossing": b.crossing_time,
        "t_max": t_max,
        "status": "within validity regime" if ok else "outside validity regime",
    }
    if not ok:
        report["warning"] = (
            f"t_max={t_max:.6g} exceeds the margin bound {b.margin_bound:.6g} "
            f"(exact crossing {b.crossing_time:.6g})"
        )
    return report
