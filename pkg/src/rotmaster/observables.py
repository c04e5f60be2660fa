"""Observable records and time series shared by both solvers."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import _kernels
from .angmom import RotBasis, build_J_all

SERIES_COLUMNS = (
    "t", "Jx", "Jy", "Jz", "varJx", "varJy", "varJz", "J2", "purity", "trace", "leakage",
)
SE_COLUMNS = ("se_Jx", "se_Jy", "se_Jz", "se_varJx", "se_varJy", "se_varJz", "se_J2", "se_purity")
SCHEMA_VERSION = 1


def leakage_mask(basis: RotBasis) -> np.ndarray:
    """States that count as truncation leakage: j >= j_max - 2."""
    return basis.j >= basis.j_max - 2


@lru_cache(maxsize=16)
def observable_operators(basis: RotBasis) -> np.ndarray:
    """Stack (Jx, Jy, Jz, Jx^2, Jy^2, Jz^2) used by every observable evaluation."""
    J = build_J_all(basis)
    ops = np.stack(list(J) + [a @ a for a in J])
    ops.setflags(write=False)
    return ops


@dataclass(frozen=True)
class ObservableRecord:
    t: float
    mean_J: np.ndarray
    var_J: np.ndarray
    J2: float
    purity: float
    trace: float
    leakage: float


def observables(sigma: np.ndarray, basis: RotBasis, t: float = 0.0) -> ObservableRecord:
    ops = observable_operators(basis)
    vals = np.einsum("ab,oba->o", sigma, ops).real
    mean = vals[:3]
    second = vals[3:]
    pops = np.diagonal(sigma).real
    return ObservableRecord(
        t=float(t),
        mean_J=mean,
        var_J=second - mean**2,
        J2=float(second.sum()),
        purity=float(np.vdot(sigma, sigma).real),
        trace=float(pops.sum()),
        leakage=float(pops[leakage_mask(basis)].sum()),
    )


def column_moments(Phi: np.ndarray, basis: RotBasis) -> dict:
    """Per-column expectation values for a matrix of normalized pure states.

    Returns arrays of shape (c,) or (3, c).
    """
    vals = _kernels.expectations(observable_operators(basis), np.ascontiguousarray(Phi))
    pops = np.abs(Phi) ** 2
    return {
        "mean": vals[:3],
        "second": vals[3:],
        "leakage": pops[leakage_mask(basis)].sum(axis=0),
        "trace": pops.sum(axis=0),
    }


@dataclass
class ObservableSeries:
    """Observable time series on one output grid.

    ``se`` holds standard-error columns (trajectory runs only), keyed like
    ``SE_COLUMNS``.
    """

    t: np.ndarray
    mean_J: np.ndarray
    var_J: np.ndarray
    J2: np.ndarray
    purity: np.ndarray
    trace: np.ndarray
    leakage: np.ndarray
    se: dict | None = None
    metadata: dict = field(default_factory=dict)

    @classmethod
    def from_records(cls, records, **kw) -> "ObservableSeries":
        return cls(
            t=np.array([r.t for r in records]),
            mean_J=np.array([r.mean_J for r in records]),
            var_J=np.array([r.var_J for r in records]),
            J2=np.array([r.J2 for r in records]),
            purity=np.array([r.purity for r in records]),
            trace=np.array([r.trace for r in records]),
            leakage=np.array([r.leakage for r in records]),
            **kw,
        )

    def __len__(self):
        return len(self.t)

    def record(self, i: int) -> ObservableRecord:
        return ObservableRecord(
            float(self.t[i]), self.mean_J[i], self.var_J[i], float(self.J2[i]),
            float(self.purity[i]), float(self.trace[i]), float(self.leakage[i]),
        )

    def table(self) -> tuple[tuple[str, ...], np.ndarray]:
        """Column names and a (T, ncol) array in the fixed output order."""
        cols = [self.t, *self.mean_J.T, *self.var_J.T, self.J2, self.purity, self.trace, self.leakage]
        names = SERIES_COLUMNS
        if self.se is not None:
            cols += [self.se[name] for name in SE_COLUMNS]
            names = names + SE_COLUMNS
        return names, np.column_stack(cols)
