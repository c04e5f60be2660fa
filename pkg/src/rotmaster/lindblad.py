"""Direct integration of the rotational master equation for the density matrix.

The generator is

    d sigma/dt = -i [H_M + H_R(t), sigma] + sum_i (S_i sigma S_i^dag - 1/2 {S_i^dag S_i, sigma})

in units of B.  Integration runs on the smallest basis subset that is closed
under every operator of the generator and contains the initial support (for
the x-polarized Kerr field this is one parity class of j).  Two integrators
are available: an adaptive Dormand-Prince 8(5,3) pair on the vectorized
density matrix, and exact exponentials for time-independent generators.  The
latter split the Liouvillian into symmetry sectors when the field is axially
symmetric, so ``linear_expectations`` can follow the mean angular momentum
over thousands of rotational periods.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.integrate import DOP853

from .angmom import PureState, RotBasis, build_J
from .coupling import CouplingSet, build_H_R, build_jumps
from .errors import LeakageError, PositivityError, TraceDriftError, ValidationError
from .observables import (
    ObservableRecord,
    ObservableSeries,
    leakage_mask,
    observable_operators,
    observables,
)

# largest subspace dimension for which the dense Liouvillian exponential is used
EXPM_MAX_DIM = 36
SECTOR_MAX_DIM = 2000
RK_COST_PER_TAU = 280.0
SPARSE_DENSITY = 0.25


def density_matrix(state) -> np.ndarray:
    if isinstance(state, PureState):
        state = state.amplitudes
    state = np.asarray(state, dtype=np.complex128)
    if state.ndim == 1:
        return np.outer(state, state.conj())
    return state.copy()


def rhs(sigma: np.ndarray, t: float, cs: CouplingSet) -> np.ndarray:
    """Time derivative of sigma, full basis, dense operators."""
    H = cs.H_M + build_H_R(cs, t)
    S = build_jumps(cs, t)
    out = -1j * (H @ sigma - sigma @ H)
    for s in S:
        sd = s.conj().T
        k = sd @ s
        out += s @ sigma @ sd - 0.5 * (k @ sigma + sigma @ k)
    return out


def _pattern(cs: CouplingSet) -> np.ndarray:
    a = np.abs(cs.A_parts).sum(axis=0)
    m = np.abs(cs.jump_parts).sum(axis=(0, 1))
    pat = np.abs(cs.H_M) + a.T @ a + m + m.T + m.T @ m
    return pat > 1e-14 * pat.max()


def reachable_subspace(cs: CouplingSet, support: np.ndarray) -> np.ndarray:
    """Indices of the smallest operator-closed basis subset containing ``support``."""
    pat = _pattern(cs)
    reach = np.asarray(support, dtype=bool).copy()
    while True:
        new = reach | pat[:, reach].any(axis=1) | pat[reach, :].any(axis=0)
        if (new == reach).all():
            return np.flatnonzero(reach)
        reach = new


class Generator:
    """Lindblad generator restricted to a basis subset, ready for repeated calls."""

    def __init__(self, cs: CouplingSet, index: np.ndarray | None = None, sparse: bool | None = None):
        self.cs = cs
        self.index = np.arange(cs.dim) if index is None else np.asarray(index)
        self.dim = len(self.index)
        ix = np.ix_(self.index, self.index)
        self._H_M = cs.H_M[ix]
        self._A_parts = cs.A_parts[:, :, self.index]
        self._jump_parts = cs.jump_parts[:, :, ix[0], ix[1]]
        if sparse is None:
            density = np.count_nonzero(np.abs(self._jump_parts).sum(axis=(0, 1))) / self.dim**2
            sparse = density < SPARSE_DENSITY
        self.sparse = sparse
        self._energies = np.diagonal(self._H_M).real.copy()
        self.interaction = False
        self._static = None
        if cs.time_independent:
            self._static = self._build(0.0)
            self._static_K = self.rate_operator(0.0)

    def rate_operator(self, t: float) -> np.ndarray:
        """sum_i S_i^dag S_i on the subspace."""
        if self._static is not None and hasattr(self, "_static_K"):
            return self._static_K
        _, S = self.operators(t)
        K = np.sum(np.conj(np.transpose(S, (0, 2, 1))) @ S, axis=0)
        return 0.5 * (K + K.conj().T)

    def phases(self, t: float) -> np.ndarray:
        """exp(i (E_a - E_b) t): Schroedinger -> interaction picture w.r.t. H_M."""
        p = np.exp(1j * self._energies * t)
        return np.outer(p, p.conj())

    def operators(self, t: float):
        """Dense (H_eff, S) at time t on the subspace."""
        f = self.cs.field
        w = f.weights(t)
        A = np.tensordot(w, self._A_parts, axes=1)
        H = self._H_M + self.cs.raman_sign * f.omega_R * (A.conj().T @ A)
        H = 0.5 * (H + H.conj().T)
        S = self.cs.jump_scale * np.tensordot(w, self._jump_parts, axes=([0], [1]))
        K = np.sum(np.conj(np.transpose(S, (0, 2, 1))) @ S, axis=0)
        K = 0.5 * (K + K.conj().T)
        return H - 0.5j * K, S

    def _build(self, t):
        Heff, S = self.operators(t)
        if self.interaction:
            Heff = Heff - self._H_M
        S = [s for s in S if np.any(s)]
        if self.sparse:
            return sp.csr_matrix(Heff), [(sp.csr_matrix(s), sp.csr_matrix(s.conj().T)) for s in S]
        return Heff, [(s, s.conj().T) for s in S]

    def use_interaction_picture(self, flag: bool = True) -> "Generator":
        """Make ``__call__`` act on e^{iH_M t} sigma e^{-iH_M t} instead of sigma."""
        self.interaction = flag
        if self._static is not None:
            self._static = self._build(0.0)
        return self

    def __call__(self, t: float, y: np.ndarray) -> np.ndarray:
        n = self.dim
        sigma = y.reshape(n, n)
        if self.interaction:
            ph = self.phases(t)
            sigma = sigma * ph.conj()
        Heff, S = self._static if self._static is not None else self._build(t)
        g = Heff @ sigma
        # sigma H_eff^dag = (H_eff sigma^dag)^dag
        out = -1j * (g - (Heff @ sigma.conj().T).conj().T)
        for s, sd in S:
            x = s @ sigma
            out += (s @ x.conj().T).conj().T
        if self.interaction:
            out *= ph
        return out.ravel()

    def liouvillian(self) -> np.ndarray:
        """Dense superoperator acting on row-major vec(sigma)."""
        if not self.cs.time_independent:
            raise ValidationError("the Liouvillian exponential needs a time-independent field")
        Heff, S = self.operators(0.0)
        eye = np.eye(self.dim)
        L = -1j * (np.kron(Heff, eye) - np.kron(eye, Heff.conj()))
        for s in S:
            L += np.kron(s, s.conj())
        return L


def symmetry_axis(field) -> np.ndarray | None:
    """Axis u whose rotations leave a time-independent field invariant up to a phase.

    Linear polarization e^{ia} u gives u itself; circular polarization about u
    gives u.  Other fields return None.
    """
    if not field.time_independent:
        return None
    eps = field.polarization(0.0)
    eps = eps / np.linalg.norm(eps)
    k = int(np.argmax(np.abs(eps)))
    lin = eps * np.exp(-1j * np.angle(eps[k]))
    if np.abs(lin.imag).max() < 1e-12:
        return lin.real / np.linalg.norm(lin.real)
    u = np.cross(eps.conj(), eps).imag
    if abs(np.linalg.norm(u) - 1.0) < 1e-12:
        return u
    return None


def _full_blocks(basis: RotBasis, index: np.ndarray) -> np.ndarray:
    js = np.unique(basis.j[index])
    return np.isin(basis.j, js)


class SectorPropagator:
    """Exact propagator for a time-independent generator with an axial symmetry.

    In the eigenbasis of u.J (rotated block by block in j), H_eff conserves the
    projection m_u and each spherical jump operator shifts it by a fixed amount,
    so the Liouvillian never mixes density-matrix elements with different
    m_u(a) - m_u(b).  Every such sector is exponentiated separately.
    ``SectorPropagator.build`` returns None when the structure is not present
    to working precision.
    """

    TOL = 1e-12

    def __init__(self, W, charges, H, S_sph):
        self.W = W
        self.dim = W.shape[0]
        n = self.dim
        a, b = np.divmod(np.arange(n * n), n)
        q = charges[a] - charges[b]
        self.sectors = []
        for val in np.unique(q):
            pos = np.flatnonzero(q == val)
            ra, rb = a[pos], b[pos]
            L = -1j * H[np.ix_(ra, ra)] * (rb[:, None] == rb[None, :])
            L += 1j * (ra[:, None] == ra[None, :]) * H.conj()[np.ix_(rb, rb)]
            for Sk in S_sph:
                L += Sk[np.ix_(ra, ra)] * Sk.conj()[np.ix_(rb, rb)]
            self.sectors.append((pos, L))
        self._cache = {}
        self._eigs = {}

    @classmethod
    def build(cls, gen: "Generator", axis) -> "SectorPropagator | None":
        if axis is None:
            return None
        basis = gen.cs.ground
        js = basis.j[gen.index]
        J = [build_J(basis, c)[np.ix_(gen.index, gen.index)] for c in "xyz"]
        Ju = sum(u * Jc for u, Jc in zip(axis, J))
        n = gen.dim
        W = np.zeros((n, n), dtype=np.complex128)
        charges = np.zeros(n, dtype=np.int64)
        for j in np.unique(js):
            blk = np.flatnonzero(js == j)
            if len(blk) != 2 * j + 1:
                return None
            w, V = np.linalg.eigh(Ju[np.ix_(blk, blk)])
            W[np.ix_(blk, blk)] = V
            charges[blk] = np.rint(w).astype(np.int64)
        H, S = gen.operators(0.0)
        Hr = W.conj().T @ H @ W
        scale = max(1.0, np.abs(Hr).max())
        off = charges[:, None] != charges[None, :]
        if np.abs(Hr[off]).max(initial=0.0) > cls.TOL * scale:
            return None
        # spherical recombination of the Cartesian jump operators about the axis
        e1 = np.cross(axis, [1.0, 0.0, 0.0] if abs(axis[0]) < 0.9 else [0.0, 1.0, 0.0])
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(axis, e1)
        Sv = [np.tensordot(v, S, axes=1) for v in (e1, e2, axis)]
        S_sph = [-(Sv[0] + 1j * Sv[1]) / np.sqrt(2), Sv[2], (Sv[0] - 1j * Sv[1]) / np.sqrt(2)]
        dq = charges[:, None] - charges[None, :]
        out = []
        for Sk in S_sph:
            Sr = W.conj().T @ Sk @ W
            big = np.abs(Sr) > cls.TOL * scale
            if not big.any():
                continue
            shifts = np.unique(dq[big])
            if len(shifts) != 1:
                return None
            Sr[dq != shifts[0]] = 0.0
            out.append(Sr)
        return cls(W, charges, Hr, out)

    @property
    def max_sector(self) -> int:
        return max(len(pos) for pos, _ in self.sectors)

    @property
    def step_cost(self) -> int:
        return sum(len(pos) ** 2 for pos, _ in self.sectors)

    def _steps(self, h):
        key = round(float(h), 12)
        if key not in self._cache:
            self._cache[key] = [scipy.linalg.expm(L * h) for _, L in self.sectors]
        return self._cache[key]

    def _eig(self, k):
        if k not in self._eigs:
            w, V = np.linalg.eig(self.sectors[k][1])
            self._eigs[k] = (w, V, np.linalg.inv(V))
        return self._eigs[k]

    def expectation(self, ops, sigma0: np.ndarray, times) -> np.ndarray:
        """Tr(O sigma(t)) for each operator at arbitrary times via the sector eigenmodes.

        Only sectors an operator touches are diagonalized, which makes long
        horizons with fine output cheap for linear observables.  ``ops`` is
        a sequence of (dim, dim) matrices in the subspace; returns
        (len(times), len(ops)).
        """
        W = self.W
        times = np.asarray(times, dtype=float)
        x = (W.conj().T @ sigma0 @ W).ravel()
        rows = [(W.conj().T @ O @ W).T.ravel() for O in ops]
        out = np.zeros((len(times), len(ops)), dtype=np.complex128)
        for k, (pos, _) in enumerate(self.sectors):
            used = [i for i, r in enumerate(rows) if np.any(r[pos] != 0)]
            if not used or not np.any(x[pos] != 0):
                continue
            w, V, Vinv = self._eig(k)
            c = Vinv @ x[pos]
            modes = np.exp(np.outer(times, w)) * c  # (T, s)
            for i in used:
                out[:, i] += modes @ (rows[i][pos] @ V)
        return out.real

    def evolve(self, sigma0: np.ndarray, grid: np.ndarray) -> np.ndarray:
        """Row-major vec(sigma) at every grid time, in the original basis."""
        W = self.W
        n = self.dim
        # sector-sorted storage turns every sector into a contiguous slice
        perm = np.concatenate([pos for pos, _ in self.sectors])
        bounds = np.cumsum([0] + [len(pos) for pos, _ in self.sectors])
        slices = [slice(lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:])]
        x = (W.conj().T @ sigma0 @ W).ravel()[perm]
        flat = np.empty(n * n, dtype=np.complex128)
        out = np.empty((len(grid), n * n), dtype=np.complex128)
        out[0] = sigma0.ravel()
        for i, h in enumerate(np.diff(grid)):
            for sl, E in zip(slices, self._steps(h)):
                x[sl] = E @ x[sl]
            flat[perm] = x
            out[i + 1] = (W @ flat.reshape(n, n) @ W.conj().T).ravel()
        return out


@dataclass
class LindbladResult:
    series: ObservableSeries
    states: np.ndarray | None = None
    jump_rate: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)


def _check_grid(grid):
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or len(grid) < 2:
        raise ValidationError("time grid needs at least two points", "grid")
    if grid[0] != 0.0:
        raise ValidationError("time grid must start at 0", "grid")
    if np.any(np.diff(grid) <= 0):
        raise ValidationError("time grid must be strictly increasing", "grid")
    return grid


def _evolve_expm(gen, sigma0, grid):
    L = gen.liouvillian()  # dim^2 x dim^2
    steps = np.diff(grid)
    out = np.empty((len(grid), gen.dim * gen.dim), dtype=np.complex128)
    out[0] = sigma0.ravel()
    cache = {}
    for i, h in enumerate(steps):
        key = round(h, 12)
        if key not in cache:
            cache[key] = scipy.linalg.expm(L * h)
        out[i + 1] = cache[key] @ out[i]
    return out, {"nfev": 0}


def _evolve_rk(gen, sigma0, grid, rtol, atol, max_step):
    gen.use_interaction_picture(True)
    solver = DOP853(gen, grid[0], sigma0.ravel(), grid[-1], rtol=rtol, atol=atol, max_step=max_step)
    ys = np.empty((len(grid), sigma0.size), dtype=np.complex128)
    ys[0] = sigma0.ravel()
    i = 1
    h_max = 0.0
    n_steps = 0
    while i < len(grid):
        msg = solver.step()
        if solver.status == "failed":  # pragma: no cover
            raise TraceDriftError(f"integrator failed: {msg}")
        n_steps += 1
        h_max = max(h_max, solver.t - solver.t_old)
        j = i
        while j < len(grid) and grid[j] <= solver.t:
            j += 1
        if j > i:
            dense = solver.dense_output()
            for k in range(i, j):
                ys[k] = solver.y if grid[k] == solver.t else dense(grid[k])
            i = j
    for k, t in enumerate(grid):
        ys[k] *= gen.phases(t).conj().ravel()
    gen.use_interaction_picture(False)
    return ys, {"nfev": int(solver.nfev), "n_steps": n_steps, "max_step_taken": h_max}


def propagate(
    sigma0,
    grid,
    cs: CouplingSet,
    *,
    method: str = "auto",
    rtol: float = 1e-9,
    atol: float = 1e-12,
    max_step: float = np.inf,
    leakage_threshold: float = 1e-6,
    trace_tolerance: float = 1e-6,
    positivity_tolerance: float = 1e-8,
    check_positivity: bool = True,
    store_states: bool = False,
) -> LindbladResult:
    """Integrate the master equation and record observables on ``grid``.

    ``method`` is ``"auto"``, ``"expm"`` or ``"rk"``.  ``expm`` propagates
    exactly with matrix exponentials: sector by sector when the field has an
    axial symmetry (any cw linearly or circularly polarized field), otherwise
    with the full Liouvillian, which is limited to ``EXPM_MAX_DIM`` states.
    ``auto`` picks ``expm`` whenever one of those applies and ``rk`` (adaptive
    DOP853 at ``rtol``/``atol``) otherwise.

    Raises LeakageError, TraceDriftError or PositivityError naming the first
    offending output time.
    """
    grid = _check_grid(grid)
    basis: RotBasis = cs.ground
    sigma0 = density_matrix(sigma0)
    if sigma0.shape != (basis.dim, basis.dim):
        raise ValidationError(f"initial state has shape {sigma0.shape}, basis dim is {basis.dim}")
    if method not in ("auto", "expm", "rk"):
        raise ValidationError(f"unknown method {method!r}", "method")
    support = (np.abs(sigma0) > 0).any(axis=0) | (np.abs(sigma0) > 0).any(axis=1)
    index = reachable_subspace(cs, support)
    axis = symmetry_axis(cs.field) if method != "rk" else None
    sectors = None
    if axis is not None:
        # rotations about the axis mix whole j multiplets
        while True:
            wider = reachable_subspace(cs, _full_blocks(basis, index))
            if len(wider) == len(index):
                break
            index = wider
        gen = Generator(cs, index)
        sectors = SectorPropagator.build(gen, axis)
        if sectors is None:
            index = reachable_subspace(cs, support)
    gen = Generator(cs, index)
    s0 = sigma0[np.ix_(index, index)]

    if method == "auto":
        # rough cost model calibrated on the Kerr preset, in units of complex multiply-adds
        rk_cost = RK_COST_PER_TAU * grid[-1] * gen.dim**3
        if sectors is not None and sectors.max_sector <= SECTOR_MAX_DIM and sectors.step_cost * (len(grid) - 1) <= rk_cost:
            method = "expm"
        elif cs.time_independent and gen.dim <= EXPM_MAX_DIM:
            method = "expm"
        else:
            method = "rk"
    if method == "expm":
        if sectors is not None:
            ys = sectors.evolve(s0, grid)
            info = {"propagator": "sectors", "n_sectors": len(sectors.sectors), "max_sector_dim": sectors.max_sector}
        elif cs.time_independent and gen.dim <= EXPM_MAX_DIM:
            ys, info = _evolve_expm(gen, s0, grid)
            info["propagator"] = "liouvillian"
        else:
            raise ValidationError(
                f"exact propagation needs a time-independent field with an axial symmetry or at most "
                f"{EXPM_MAX_DIM} coupled states (have {gen.dim}); use method='rk'", "method",
            )
    else:
        ys, info = _evolve_rk(gen, s0, grid, rtol, atol, max_step)

    ops = observable_operators(basis)[:, index][:, :, index]
    ops_flat = ops.reshape(len(ops), -1)
    leak = leakage_mask(basis)[index]
    n = gen.dim
    records = []
    states = np.zeros((len(grid), basis.dim, basis.dim), dtype=np.complex128) if store_states else None
    rates = np.empty(len(grid))
    herm = 0.0
    drift = 0.0
    min_eig = np.inf
    for i, t in enumerate(grid):
        sig = ys[i].reshape(n, n)
        vals = (ops_flat @ sig.T.ravel()).real
        mean, second = vals[:3], vals[3:]
        pops = np.diagonal(sig).real
        rec = ObservableRecord(
            t=float(t),
            mean_J=mean,
            var_J=second - mean**2,
            J2=float(second.sum()),
            purity=float(np.vdot(sig, sig).real),
            trace=float(pops.sum()),
            leakage=float(pops[leak].sum()),
        )
        records.append(rec)
        rates[i] = float(np.vdot(gen.rate_operator(t).T.ravel(), sig.ravel()).real)
        herm = max(herm, float(np.abs(sig - sig.conj().T).max()))
        drift = max(drift, abs(rec.trace - 1.0))
        if rec.leakage > leakage_threshold:
            raise LeakageError(
                f"population {rec.leakage:.3e} in j >= {basis.j_max - 2} exceeds "
                f"{leakage_threshold:.1e} at t={t:.6g}; increase j_max",
                time=float(t), value=rec.leakage,
            )
        if abs(rec.trace - 1.0) > trace_tolerance:
            raise TraceDriftError(
                f"trace drifted to {rec.trace:.12g} at t={t:.6g}", time=float(t), value=rec.trace
            )
        if check_positivity:
            lo = float(np.linalg.eigvalsh(0.5 * (sig + sig.conj().T))[0])
            min_eig = min(min_eig, lo)
            if lo < -positivity_tolerance:
                raise PositivityError(
                    f"density matrix eigenvalue {lo:.3e} at t={t:.6g}", time=float(t), value=lo
                )
        if store_states:
            states[i][np.ix_(index, index)] = sig

    diagnostics = {
        "method": method,
        "subspace_dim": int(n),
        "sparse": bool(gen.sparse),
        "max_hermiticity_residual": herm,
        "max_trace_drift": drift,
        "min_eigenvalue": None if min_eig == np.inf else min_eig,
        **info,
    }
    series = ObservableSeries.from_records(records, metadata={"backend": "lindblad"})
    return LindbladResult(series, states, rates, diagnostics)


def linear_expectations(
    state,
    times,
    cs: CouplingSet,
    *,
    leakage_threshold: float = 1e-6,
) -> dict:
    """<J_x>, <J_y>, <J_z>, trace and edge leakage at arbitrary times.

    Uses the eigenmodes of each symmetry sector, so the cost does not grow
    with the horizon.  Needs a time-independent field with an axial symmetry.
    Returns a dict of arrays keyed ``Jx``, ``Jy``, ``Jz``, ``trace``, ``leakage``.
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or len(times) < 1 or np.any(times < 0):
        raise ValidationError("times must be a 1-d array of non-negative values", "times")
    basis: RotBasis = cs.ground
    sigma0 = density_matrix(state)
    if sigma0.shape != (basis.dim, basis.dim):
        raise ValidationError(f"initial state has shape {sigma0.shape}, basis dim is {basis.dim}")
    axis = symmetry_axis(cs.field) if cs.time_independent else None
    if axis is None:
        raise ValidationError("needs a time-independent field with an axial symmetry", "field")
    support = (np.abs(sigma0) > 0).any(axis=0) | (np.abs(sigma0) > 0).any(axis=1)
    index = reachable_subspace(cs, support)
    while True:
        wider = reachable_subspace(cs, _full_blocks(basis, index))
        if len(wider) == len(index):
            break
        index = wider
    sectors = SectorPropagator.build(Generator(cs, index), axis)
    if sectors is None:
        raise ValidationError("generator lacks the expected axial symmetry", "field")
    sub = np.ix_(index, index)
    names = ("Jx", "Jy", "Jz", "trace", "leakage")
    ops = [build_J(basis, c)[sub] for c in "xyz"]
    ops.append(np.eye(len(index)))
    ops.append(np.diag(leakage_mask(basis)[index].astype(float)))
    vals = sectors.expectation(ops, sigma0[sub], times)
    bad = np.flatnonzero(vals[:, 4] > leakage_threshold)
    if len(bad):
        t = float(times[bad[0]])
        raise LeakageError(
            f"population {vals[bad[0], 4]:.3e} in j >= {basis.j_max - 2} exceeds "
            f"{leakage_threshold:.1e} at t={t:.6g}; increase j_max",
            time=t, value=float(vals[bad[0], 4]),
        )
    return dict(zip(names, vals.T))


def jump_rate(sigma: np.ndarray, cs: CouplingSet, t: float = 0.0) -> float:
    """Expected spontaneous Raman rate Tr(sigma sum_i S_i^dag S_i)."""
    S = build_jumps(cs, t)
    K = np.einsum("iab,iac->bc", S.conj(), S)
    return float(np.einsum("ab,ba->", sigma, K).real)


__all__ = [
    "Generator",
    "LindbladResult",
    "density_matrix",
    "jump_rate",
    "linear_expectations",
    "observables",
    "propagate",
    "reachable_subspace",
    "rhs",
    "symmetry_axis",
]
