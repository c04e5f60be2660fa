"""Command line front end: ``rotmaster simulate | validity | presets``.

Exit codes: 0 success, 2 invalid configuration, 3 numerical abort.  On an
abort the out directory receives ``error.json`` describing the failure.
"""

from __future__ import annotations

import argparse
import os
import sys
import warnings

import numpy as np
from scipy.integrate import trapezoid

from . import __version__, _kernels
from .coupling import build_coupling
from .errors import NumericalAbort, ValidationError
from .lindblad import propagate
from .output import (
    ensure_dir,
    format_jumps,
    format_json,
    format_series,
    series_header,
    write_text,
)
from .scenario import PRESETS, Scenario, load_scenario
from .trajectories import CHANNELS, run_ensemble
from .vibvalidity import VibRateModel, validity_report

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3

SEED_RULE = "trajectory k: PCG64(SeedSequence(master_seed, spawn_key=(k,)).generate_state(1, uint64)[0])"


def report_validity(scenario: Scenario) -> dict:
    """Vibrational-heating validity block for the scenario horizon."""
    vib = scenario.vibrational
    if vib is None:
        return {"evaluated": False, "status": "not evaluated",
                "reason": "vibrational ratios (eta, omega_nu_over_B, delta_over_B) not supplied"}
    model = VibRateModel(
        eta=vib.eta,
        rate_prefactor=scenario.field.omega_R * scenario.field.gamma_over_delta,
        nu_max=vib.nu_max,
        omega_nu_over_B=vib.omega_nu_over_B,
        delta_over_B=vib.delta_over_B,
    )
    return validity_report(model, scenario.t_max, vib.margin)


def _echo(scenario: Scenario) -> dict:
    # the output directory is left out so runs written elsewhere stay byte-identical
    d = scenario.to_dict()
    d["output"].pop("dir")
    return d


def _jump_stats(counts, logs) -> dict:
    n = len(counts)
    by_channel = {c: 0 for c in CHANNELS}
    for log in logs:
        for _, ch in log:
            by_channel[ch] += 1
    hist = np.bincount(counts) if n else np.zeros(1, dtype=int)
    return {
        "total": int(counts.sum()),
        "mean_per_trajectory": float(counts.mean()),
        "se_mean": float(counts.std(ddof=1) / np.sqrt(n)) if n > 1 else None,
        "max": int(counts.max()),
        "by_channel": by_channel,
        "histogram": [int(v) for v in hist],
    }


def run(scenario: Scenario, workers: int = 1) -> dict:
    """Execute a validated scenario and write every output file.

    Returns the summary dictionary.  Numerical aborts propagate after
    ``error.json`` has been written.
    """
    out_dir = ensure_dir(scenario.output.dir)
    digest = scenario.digest()
    cs = build_coupling(scenario.j_max, scenario.field)
    psi0 = scenario.initial_state()
    grid = scenario.grid
    summary = {
        "rotmaster_version": __version__,
        "schema_version": 1,
        "kernels": _kernels.BACKEND,
        "scenario": _echo(scenario),
        "scenario_sha256": digest,
        "units": "energies and rates in B, times in 1/B (tau = B t)",
        "validity": report_validity(scenario),
    }
    files = {}
    lind = traj = None
    try:
        if scenario.backend in ("lindblad", "both"):
            tol = scenario.tolerances
            lind = propagate(
                psi0, grid, cs, method=tol.method, rtol=tol.rtol, atol=tol.atol,
                leakage_threshold=scenario.leakage_threshold, trace_tolerance=tol.trace,
                positivity_tolerance=tol.positivity,
            )
            path = os.path.join(out_dir, "lindblad.tsv")
            write_text(path, format_series(lind.series, series_header(__version__, digest, None, "lindblad")))
            files["lindblad"] = "lindblad.tsv"
            summary["lindblad"] = {
                "diagnostics": lind.diagnostics,
                "expected_jumps": float(trapezoid(lind.jump_rate, grid)),
                "final": {
                    "Jy": float(lind.series.mean_J[-1, 1]),
                    "J2": float(lind.series.J2[-1]),
                    "purity": float(lind.series.purity[-1]),
                },
            }
        if scenario.backend in ("trajectories", "both"):
            traj = run_ensemble(
                cs, psi0, grid, scenario.n_traj, scenario.master_seed,
                leakage_threshold=scenario.leakage_threshold, workers=workers,
            )
            path = os.path.join(out_dir, "trajectories.tsv")
            header = series_header(__version__, digest, scenario.master_seed, "trajectories")
            write_text(path, format_series(traj.series, header))
            files["trajectories"] = "trajectories.tsv"
            if scenario.output.jump_logs:
                write_text(os.path.join(out_dir, "jumps.tsv"), format_jumps(traj.jump_logs, traj.seeds))
                files["jumps"] = "jumps.tsv"
            summary["trajectories"] = {
                "n_traj": scenario.n_traj,
                "master_seed": scenario.master_seed,
                "seed_rule": SEED_RULE,
                "jumps": _jump_stats(traj.jump_counts, traj.jump_logs),
            }
    except NumericalAbort as exc:
        write_text(os.path.join(out_dir, "error.json"), format_json({**exc.record(), "scenario_sha256": digest}))
        raise
    if lind is not None and traj is not None:
        d = np.abs(lind.series.mean_J[:, 1] - traj.series.mean_J[:, 1])
        se = traj.series.se["se_Jy"]
        summary["comparison"] = {
            "max_abs_diff_Jy": float(d.max()),
            "t_at_max_abs_diff_Jy": float(grid[int(np.argmax(d))]),
            "max_abs_diff_J2": float(np.abs(lind.series.J2 - traj.series.J2).max()),
            "max_abs_diff_purity": float(np.abs(lind.series.purity - traj.series.purity).max()),
            "within_max_3se_0p05_Jy": bool(np.all(d <= np.maximum(3 * se, 0.05))),
        }
    summary["files"] = files
    write_text(os.path.join(out_dir, "summary.json"), format_json(summary))
    return summary


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rotmaster", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"rotmaster {__version__}")
    sub = p.add_subparsers(dest="verb", required=True)

    sim = sub.add_parser("simulate", help="run a scenario (TOML file or preset name)")
    sim.add_argument("config")
    sim.add_argument("--backend", choices=("lindblad", "trajectories", "both"))
    sim.add_argument("--seed", type=int, help="master seed of the trajectory ensemble")
    sim.add_argument("--trajectories", type=int, help="number of trajectories")
    sim.add_argument("--out-dir")
    sim.add_argument("--jmax", type=int)
    sim.add_argument("--tmax", type=float)
    sim.add_argument("--workers", type=int, default=1, help="threads for the trajectory ensemble")

    val = sub.add_parser("validity", help="print the vibrational validity report of a scenario")
    val.add_argument("config")
    val.add_argument("--tmax", type=float)

    pre = sub.add_parser("presets", help="list built-in presets")
    pre.add_argument("--show", metavar="NAME", help="print the TOML of one preset")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.verb == "presets":
            if args.show:
                if args.show not in PRESETS:
                    raise ValidationError(f"unknown preset {args.show!r}", "presets")
                sys.stdout.write(PRESETS[args.show][0])
            else:
                for name, (_, desc) in PRESETS.items():
                    print(f"{name}\t{desc}")
            return EXIT_OK
        scenario = load_scenario(args.config)
        if args.verb == "validity":
            scenario = scenario.with_overrides(t_max=args.tmax)
            sys.stdout.write(format_json(report_validity(scenario)))
            return EXIT_OK
        if args.workers < 1:
            raise ValidationError("must be >= 1", "--workers")
        scenario = scenario.with_overrides(
            backend=args.backend, master_seed=args.seed, n_traj=args.trajectories,
            out_dir=args.out_dir, j_max=args.jmax, t_max=args.tmax,
        )
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            summary = run(scenario, workers=args.workers)
        print(f"wrote {', '.join(summary['files'].values())} and summary.json to {scenario.output.dir}")
        return EXIT_OK
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalAbort as exc:
        print(f"numerical abort ({exc.kind}): {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
