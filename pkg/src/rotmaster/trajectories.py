"""Quantum-trajectory unraveling of the rotational master equation.

Between jumps a trajectory evolves under the non-Hermitian generator
H_eff = H_M + H_R - (i/2) sum_i S_i^dag S_i without renormalization.  A jump
happens once the squared norm falls to a uniform random level R in (0, 1];
the emitted polarization i is then drawn with probabilities
W_i ~ <psi|S_i^dag S_i|psi> and the state is replaced by S_i psi, normalized.

Trajectory k of an ensemble draws from its own generator seeded with
``trajectory_seed(master_seed, k)``, so records never depend on the order in
which trajectories are computed.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.integrate import solve_ivp
from scipy.optimize import brentq
from scipy.sparse.linalg import expm_multiply

from . import _kernels
from .angmom import PureState, RotBasis
from .coupling import CouplingSet, build_H_eff, build_jumps
from .errors import LeakageError, RotmasterError, ValidationError
from .observables import SE_COLUMNS, ObservableSeries, column_moments, leakage_mask

CHANNELS = ("x", "y", "z")
SPECTRAL_MAX_COND = 1e6
TIME_RTOL = 1e-10
COLUMN_BLOCK = 32


def trajectory_seed(master_seed: int, index: int) -> int:
    """64-bit seed of trajectory ``index`` derived from the master seed."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


def _uniform(rng) -> float:
    # R in (0, 1]
    return 1.0 - rng.random()


class NoJumpPropagator:
    """U_eff(t1, t0) for one coupling set.

    Time-independent generators are diagonalized once (eigh when Hermitian,
    eig when the eigenvector matrix is well conditioned, otherwise Krylov
    exponentials).  Time-dependent ones are integrated with DOP853.
    """

    def __init__(self, cs: CouplingSet, rtol: float = 1e-9, atol: float = 1e-12):
        self.cs = cs
        self.rtol = rtol
        self.atol = atol
        self.time_independent = cs.time_independent
        self._U = {}
        self._spectral = False
        if self.time_independent:
            H = build_H_eff(cs)
            self.H = H
            if cs.field.gamma_over_delta == 0.0 or cs.field.omega_R == 0.0:
                w, V = np.linalg.eigh(0.5 * (H + H.conj().T))
                self._w, self._V, self._Vinv = w.astype(np.complex128), V, V.conj().T
                self._spectral = True
            else:
                w, V = np.linalg.eig(H)
                if np.linalg.cond(V) < SPECTRAL_MAX_COND:
                    self._w, self._V, self._Vinv = w, V, np.linalg.inv(V)
                    self._spectral = True

    def H_eff(self, t: float) -> np.ndarray:
        return self.H if self.time_independent else build_H_eff(self.cs, t)

    def U(self, h: float) -> np.ndarray:
        """Step propagator for a time-independent generator (cached by step)."""
        key = round(float(h), 13)
        if key not in self._U:
            if self._spectral:
                U = (self._V * np.exp(-1j * self._w * h)) @ self._Vinv
            else:
                U = scipy.linalg.expm(-1j * self.H * h)
            self._U[key] = np.ascontiguousarray(U)
        return self._U[key]

    def _ode(self, psi, t0, t1, dense=False):
        def f(t, y):
            Y = y.reshape(self.cs.dim, -1)
            return (-1j * (self.H_eff(t) @ Y)).ravel()

        sol = solve_ivp(
            f, (t0, t1), np.asarray(psi, dtype=np.complex128).ravel(), method="DOP853",
            rtol=self.rtol, atol=self.atol, dense_output=dense,
        )
        if not sol.success:  # pragma: no cover
            raise RotmasterError(f"no-jump integration failed: {sol.message}")
        return sol

    def evolve(self, psi: np.ndarray, t0: float, t1: float) -> np.ndarray:
        if t1 == t0:
            return np.array(psi, dtype=np.complex128)
        if self.time_independent:
            if self._spectral:
                return self._V @ (np.exp(-1j * self._w * (t1 - t0)) * (self._Vinv @ psi))
            return expm_multiply(-1j * self.H * (t1 - t0), psi)
        return self._ode(psi, t0, t1).y[:, -1].reshape(np.shape(psi))

    def curve(self, psi: np.ndarray, t0: float, t1: float):
        """Callable s -> U_eff(s, t0) psi for s in [t0, t1]."""
        if self.time_independent:
            if self._spectral:
                c = self._Vinv @ psi
                return lambda s: self._V @ (np.exp(-1j * self._w * (s - t0)) * c)
            return lambda s: self.evolve(psi, t0, s)
        sol = self._ode(psi, t0, t1, dense=True)
        return lambda s: sol.sol(s)

    def step_columns(self, Psi: np.ndarray, t0: float, t1: float):
        """Advance every column of Psi from t0 to t1; returns (Psi, squared norms)."""
        if self.time_independent:
            return _kernels.step_columns(self.U(t1 - t0), np.ascontiguousarray(Psi))
        out = self._ode(Psi, t0, t1).y[:, -1].reshape(Psi.shape)
        return out, np.einsum("ak,ak->k", out.conj(), out).real


def evolve_no_jump(psi, t0: float, t1: float, cs: CouplingSet, prop: NoJumpPropagator | None = None):
    """Unnormalized no-jump evolution U_eff(t1, t0) psi."""
    if t1 < t0:
        raise ValueError("t1 must not precede t0")
    amps = psi.amplitudes if isinstance(psi, PureState) else np.asarray(psi, dtype=np.complex128)
    prop = prop or NoJumpPropagator(cs)
    out = prop.evolve(amps, t0, t1)
    return PureState(cs.ground, out) if isinstance(psi, PureState) else out


def _find_crossing(curve, ta, tb, r):
    def f(s):
        v = curve(s)
        return float(np.vdot(v, v).real) - r

    if f(tb) > 0.0:
        return None
    if f(ta) <= 0.0:
        return ta
    return brentq(f, ta, tb, xtol=TIME_RTOL * max(1.0, abs(tb)), rtol=TIME_RTOL)


class WaitingTimeSampler:
    """Draws jump times for one fixed normalized state psi at t0.

    The squared no-jump norm is tabulated on a step grid up to ``horizon``;
    each draw brackets the level R in the table and refines by root finding.
    """

    def __init__(self, psi, t0: float, horizon: float, prop: NoJumpPropagator, step: float = 0.01):
        self.prop = prop
        self.t0 = float(t0)
        n_steps = max(1, int(np.ceil((horizon - t0) / step)))
        self.times = np.linspace(t0, horizon, n_steps + 1)
        states = [np.asarray(psi, dtype=np.complex128)]
        for a, b in zip(self.times[:-1], self.times[1:]):
            states.append(prop.evolve(states[-1], a, b))
        self.states = np.array(states)
        self.norm2 = np.einsum("ka,ka->k", self.states.conj(), self.states).real

    def sample(self, R: float):
        # first table index with norm2 <= R (norm2 is non-increasing)
        idx = np.searchsorted(-self.norm2, -R, side="left")
        if idx >= len(self.times):
            return None
        if idx == 0:
            return self.t0
        ta, tb = self.times[idx - 1], self.times[idx]
        return _find_crossing(self.prop.curve(self.states[idx - 1], ta, tb), ta, tb, R)

    def cdf(self, t):
        """1 - ||U_eff(t, t0) psi||^2, evaluated directly at each t."""
        t = np.atleast_1d(t)
        out = []
        for s in t:
            v = self.prop.evolve(self.states[0], self.t0, float(s))
            out.append(1.0 - float(np.vdot(v, v).real))
        return np.array(out)


def sample_jump_time(psi, t0: float, R: float, cs: CouplingSet, horizon: float,
                     prop: NoJumpPropagator | None = None, step: float = 0.01):
    """Earliest t with ||U_eff(t, t0) psi||^2 = R, or None if beyond ``horizon``."""
    if not 0.0 < R <= 1.0:
        raise ValueError(f"R must lie in (0, 1], got {R}")
    amps = psi.amplitudes if isinstance(psi, PureState) else np.asarray(psi)
    prop = prop or NoJumpPropagator(cs)
    if cs.field.gamma_over_delta == 0.0 or cs.field.omega_R == 0.0:
        return None
    t = float(t0)
    while t < horizon:
        t_next = min(horizon, t + step)
        nxt = prop.evolve(amps, t, t_next)
        if float(np.vdot(nxt, nxt).real) <= R:
            return _find_crossing(prop.curve(amps, t, t_next), t, t_next, R)
        amps, t = nxt, t_next
    return None


def jump_weights(psi: np.ndarray, S: np.ndarray) -> np.ndarray:
    """W_i = <psi|S_i^dag S_i|psi> / sum_j <psi|S_j^dag S_j|psi>, plus the raw rates."""
    v = S @ psi
    rates = np.einsum("ia,ia->i", v.conj(), v).real
    total = rates.sum()
    if not total > 0.0:
        raise RotmasterError("jump requested for a state with zero jump rate")
    return rates / total, v


def choose_channel(W: np.ndarray, R_prime: float) -> int:
    """Interval rule: x if R' <= W_x, y if R' <= W_x + W_y, else z."""
    if R_prime <= W[0]:
        return 0
    if R_prime <= W[0] + W[1]:
        return 1
    return 2


def select_jump_channel(psi, t: float, R_prime: float, cs: CouplingSet):
    """Pick the emitted polarization and return (channel name, normalized post-jump state)."""
    amps = psi.amplitudes if isinstance(psi, PureState) else np.asarray(psi)
    W, v = jump_weights(amps, build_jumps(cs, t))
    i = choose_channel(W, R_prime)
    post = v[i] / np.linalg.norm(v[i])
    return CHANNELS[i], (PureState(cs.ground, post) if isinstance(psi, PureState) else post)


@dataclass
class TrajectoryRecord:
    seed: int
    jumps: list  # [(t_k, "x"|"y"|"z"), ...]
    snapshots: np.ndarray  # (T, n) normalized states on the output grid
    grid: np.ndarray

    @property
    def n_jumps(self) -> int:
        return len(self.jumps)


class TrajectoryEngine:
    """State shared by single trajectories and the lockstep ensemble."""

    def __init__(self, cs: CouplingSet, grid, leakage_threshold: float = 1e-6):
        grid = np.asarray(grid, dtype=float)
        if grid.ndim != 1 or len(grid) < 2 or np.any(np.diff(grid) <= 0):
            raise ValidationError("output grid must be strictly increasing with >= 2 points", "grid")
        self.cs = cs
        self.grid = grid
        self.prop = NoJumpPropagator(cs)
        self.leak = leakage_mask(cs.ground)
        self.leakage_threshold = leakage_threshold
        self.dissipative = cs.field.gamma_over_delta > 0.0 and cs.field.omega_R > 0.0
        self._S = build_jumps(cs) if cs.time_independent else None

    def jumps_at(self, t):
        return self._S if self._S is not None else build_jumps(self.cs, t)

    def segment(self, psi, ta, tb, r, rng, log):
        """Evolve psi from ta to tb, performing every jump on the way."""
        while True:
            curve = self.prop.curve(psi, ta, tb)
            t_jump = _find_crossing(curve, ta, tb, r) if self.dissipative else None
            if t_jump is None:
                return curve(tb), r
            pre = curve(t_jump)
            W, v = jump_weights(pre, self.jumps_at(t_jump))
            i = choose_channel(W, _uniform(rng))
            log.append((float(t_jump), CHANNELS[i]))
            psi = v[i] / np.linalg.norm(v[i])
            r = _uniform(rng)
            ta = t_jump

    def check_leakage_columns(self, Phi, i):
        lk = np.sum(np.abs(Phi[self.leak]) ** 2, axis=0)
        if lk.size and lk.max() > self.leakage_threshold:
            self.check_leakage(Phi[:, int(np.argmax(lk))], i, "ensemble")

    def check_leakage_rows(self, snaps, i0, i1, who):
        lk = np.sum(np.abs(snaps[i0:i1, self.leak]) ** 2, axis=1)
        bad = np.flatnonzero(lk > self.leakage_threshold)
        if bad.size:
            self.check_leakage(snaps[i0 + bad[0]], i0 + bad[0], who)

    def check_leakage(self, phi, i, who):
        lk = float(np.sum(np.abs(phi[self.leak]) ** 2))
        if lk > self.leakage_threshold:
            t = float(self.grid[i])
            raise LeakageError(
                f"{who}: population {lk:.3e} in j >= {self.cs.ground.j_max - 2} exceeds "
                f"{self.leakage_threshold:.1e} at t={t:.6g}; increase j_max",
                time=t, value=lk,
            )


def _initial_amplitudes(psi0, basis: RotBasis) -> np.ndarray:
    amps = psi0.amplitudes if isinstance(psi0, PureState) else np.asarray(psi0, dtype=np.complex128)
    if amps.shape != (basis.dim,):
        raise ValidationError(f"initial state has {amps.shape} amplitudes, basis has {basis.dim}")
    return amps / np.linalg.norm(amps)


def run_trajectory(seed: int, cs: CouplingSet, psi0, grid, leakage_threshold: float = 1e-6,
                   engine: TrajectoryEngine | None = None) -> TrajectoryRecord:
    """One stochastic realization; a pure function of (seed, cs, psi0, grid)."""
    eng = engine or TrajectoryEngine(cs, grid, leakage_threshold)
    grid = eng.grid
    rng = _rng(seed)
    psi = np.array(_initial_amplitudes(psi0, cs.ground))
    snaps = np.empty((len(grid), cs.dim), dtype=np.complex128)
    snaps[0] = psi
    eng.check_leakage(psi, 0, f"trajectory seed {seed}")
    r = _uniform(rng)
    log = []
    i = 0
    uniform = eng.prop.time_independent and np.allclose(np.diff(grid), grid[1] - grid[0], rtol=1e-12, atol=0)
    last = len(grid) - 1
    while i < last:
        if uniform:
            stop = _kernels.advance_until(eng.prop.U(grid[1] - grid[0]), psi, r, snaps, i, last)
            eng.check_leakage_rows(snaps, i + 1, min(stop, last + 1), f"trajectory seed {seed}")
            if stop > last:
                break
            i = stop - 1
        psi, r = eng.segment(psi, grid[i], grid[i + 1], r, rng, log)
        i += 1
        snaps[i] = psi / np.linalg.norm(psi)
        eng.check_leakage(snaps[i], i, f"trajectory seed {seed}")
    return TrajectoryRecord(int(seed), log, snaps, grid)


@dataclass
class EnsembleResult:
    n_traj: int
    series: ObservableSeries
    rho: dict = field(default_factory=dict)  # grid index -> ensemble density matrix
    jump_counts: np.ndarray | None = None
    jump_logs: list | None = None
    seeds: list | None = None


def _reduce(Phi: np.ndarray, w: np.ndarray, basis: RotBasis, n: int):
    """Ensemble observables of weighted normalized columns (weights are multiplicities)."""
    mom = column_moments(Phi, basis)
    wn = w / n

    def mean_se(x):
        mu = x @ wn
        if n < 2:
            return mu, np.full(np.shape(mu), np.nan)
        var = ((x - np.expand_dims(mu, -1)) ** 2) @ w / (n - 1)
        return mu, np.sqrt(var / n)

    mean, se_mean = mean_se(mom["mean"])
    second, _ = mean_se(mom["second"])
    # delta method for var = <J^2> - <J>^2
    _, se_var = mean_se(mom["second"] - 2.0 * mean[:, None] * mom["mean"])
    J2, se_J2 = mean_se(mom["second"].sum(axis=0))
    leakage = float(mom["leakage"] @ wn)
    trace = float(mom["trace"] @ wn)

    c = Phi.shape[1]
    if c <= Phi.shape[0]:
        G = np.abs(Phi.conj().T @ Phi) ** 2
        q = G @ wn  # <phi_a|rho|phi_a>
        purity = float(wn @ q)
        rho = None
    else:
        rho = (Phi * wn) @ Phi.conj().T
        purity = float(np.vdot(rho, rho).real)
        q = np.einsum("ak,ab,bk->k", Phi.conj(), rho, Phi).real
    if n < 2:
        se_purity = np.nan
    else:
        loo = (n * n * purity - 2.0 * n * q + 1.0) / (n - 1) ** 2
        loo_mean = loo @ wn
        se_purity = float(np.sqrt((n - 1) / n * (((loo - loo_mean) ** 2) @ w)))
    rec = {
        "mean_J": mean, "var_J": second - mean**2, "J2": float(J2), "purity": purity,
        "trace": trace, "leakage": leakage,
        "se": np.concatenate([se_mean, se_var, [se_J2, se_purity]]),
    }
    return rec, rho


def _series_from(rows, grid, meta):
    se = np.array([r["se"] for r in rows])
    return ObservableSeries(
        t=np.asarray(grid, dtype=float),
        mean_J=np.array([r["mean_J"] for r in rows]),
        var_J=np.array([r["var_J"] for r in rows]),
        J2=np.array([r["J2"] for r in rows]),
        purity=np.array([r["purity"] for r in rows]),
        trace=np.array([r["trace"] for r in rows]),
        leakage=np.array([r["leakage"] for r in rows]),
        se={name: se[:, k] for k, name in enumerate(SE_COLUMNS)},
        metadata=meta,
    )


def ensemble_average(records, basis: RotBasis, rho_indices=()) -> EnsembleResult:
    """Reduce stored trajectory records to ensemble observables."""
    records = list(records)
    if not records:
        raise ValidationError("need at least one trajectory record")
    grid = records[0].grid
    for rec in records[1:]:
        if len(rec.grid) != len(grid) or np.any(rec.grid != grid):
            raise ValidationError("trajectory records use different output grids")
    n = len(records)
    w = np.ones(n)
    rows, rho = [], {}
    for i in range(len(grid)):
        Phi = np.stack([r.snapshots[i] for r in records], axis=1)
        row, _ = _reduce(Phi, w, basis, n)
        rows.append(row)
        if i in rho_indices:
            rho[i] = (Phi / n) @ Phi.conj().T
    return EnsembleResult(
        n_traj=n,
        series=_series_from(rows, grid, {"backend": "trajectories", "n_traj": n}),
        rho=rho,
        jump_counts=np.array([r.n_jumps for r in records]),
        jump_logs=[r.jumps for r in records],
        seeds=[r.seed for r in records],
    )


def _step_blocks(prop, Psi, ta, tb, pool):
    # fixed column blocks, so results never depend on the number of workers
    starts = range(0, Psi.shape[1], COLUMN_BLOCK)
    blocks = [np.ascontiguousarray(Psi[:, s:s + COLUMN_BLOCK]) for s in starts]
    if pool is None or len(blocks) == 1:
        parts = [prop.step_columns(b, ta, tb) for b in blocks]
    else:
        parts = list(pool.map(lambda b: prop.step_columns(b, ta, tb), blocks))
    return np.concatenate([p[0] for p in parts], axis=1), np.concatenate([p[1] for p in parts])


def run_ensemble(cs: CouplingSet, psi0, grid, n_traj: int, master_seed: int, *,
                 leakage_threshold: float = 1e-6, rho_indices=(), keep_logs: bool = True,
                 workers: int = 1) -> EnsembleResult:
    """Propagate ``n_traj`` trajectories in lockstep over the output grid.

    Trajectories that have not jumped yet share one deterministic no-jump
    state and are carried as a single weighted column; each trajectory gets
    its own column after its first jump.  Observables are reduced at every
    output time, so memory stays proportional to the number of distinct
    states rather than to n_traj x len(grid).
    """
    if n_traj < 1:
        raise ValidationError("n_traj must be >= 1", "n_traj")
    eng = TrajectoryEngine(cs, grid, leakage_threshold)
    grid = eng.grid
    basis = cs.ground
    seeds = [trajectory_seed(master_seed, k) for k in range(n_traj)]
    rngs = [_rng(s) for s in seeds]
    first_r = np.array([_uniform(g) for g in rngs])
    logs = [[] for _ in range(n_traj)]

    phi = _initial_amplitudes(psi0, basis).copy()
    eng.check_leakage(phi, 0, "ensemble")
    order = np.argsort(-first_r, kind="stable") if eng.dissipative else np.array([], dtype=int)
    ptr = 0
    in_prefix = n_traj
    ids: list[int] = []  # trajectory index of each explicit column
    Psi = np.empty((cs.dim, 0), dtype=np.complex128)
    r_cols = np.empty(0)

    rows, rho = [], {}

    def reduce_at(i):
        cols, wts = [], []
        if in_prefix:
            cols.append(phi / np.linalg.norm(phi))
            wts.append(float(in_prefix))
        if ids:
            norms = np.linalg.norm(Psi, axis=0)
            cols.extend((Psi / norms).T)
            wts.extend([1.0] * len(ids))
        Phi = np.ascontiguousarray(np.stack(cols, axis=1))
        eng.check_leakage_columns(Phi, i)
        row, rmat = _reduce(Phi, np.array(wts), basis, n_traj)
        rows.append(row)
        if i in rho_indices:
            rho[i] = rmat if rmat is not None else (Phi * (np.array(wts) / n_traj)) @ Phi.conj().T

    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        reduce_at(0)
        for i in range(len(grid) - 1):
            ta, tb = grid[i], grid[i + 1]
            new_ids, new_cols, new_r = [], [], []
            if in_prefix:
                stepped, nrm = eng.prop.step_columns(phi[:, None], ta, tb)
                leaving = []
                while ptr < len(order) and first_r[order[ptr]] >= nrm[0]:
                    leaving.append(int(order[ptr]))
                    ptr += 1
                for k in sorted(leaving):
                    psi_k, r_k = eng.segment(phi, ta, tb, first_r[k], rngs[k], logs[k])
                    new_ids.append(k)
                    new_cols.append(psi_k)
                    new_r.append(r_k)
                in_prefix -= len(leaving)
                phi = stepped[:, 0]
            if ids:
                stepped, nrm = _step_blocks(eng.prop, Psi, ta, tb, pool)
                for c in np.flatnonzero(nrm <= r_cols):
                    k = ids[c]
                    stepped[:, c], r_cols[c] = eng.segment(Psi[:, c], ta, tb, r_cols[c], rngs[k], logs[k])
                Psi = stepped
            if new_ids:
                ids.extend(new_ids)
                Psi = np.concatenate([Psi, np.stack(new_cols, axis=1)], axis=1)
                r_cols = np.concatenate([r_cols, new_r])
                perm = np.argsort(ids, kind="stable")
                ids = [ids[p] for p in perm]
                Psi = np.ascontiguousarray(Psi[:, perm])
                r_cols = r_cols[perm]
            reduce_at(i + 1)
    finally:
        if pool is not None:
            pool.shutdown()

    counts = np.array([len(lg) for lg in logs])
    meta = {"backend": "trajectories", "n_traj": n_traj, "master_seed": int(master_seed)}
    return EnsembleResult(
        n_traj=n_traj,
        series=_series_from(rows, grid, meta),
        rho=rho,
        jump_counts=counts,
        jump_logs=logs if keep_logs else None,
        seeds=seeds,
    )


__all__ = [
    "CHANNELS",
    "EnsembleResult",
    "NoJumpPropagator",
    "TrajectoryEngine",
    "TrajectoryRecord",
    "WaitingTimeSampler",
    "choose_channel",
    "ensemble_average",
    "evolve_no_jump",
    "run_ensemble",
    "run_trajectory",
    "sample_jump_time",
    "select_jump_channel",
    "trajectory_seed",
]
