"""Scenario configuration: TOML parsing, validation and built-in presets."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .angmom import PureState, RotBasis, basis_state, build_basis, coherent_state
from .coupling import FieldComponent, FieldConfig
from .errors import ValidationError

BACKENDS = ("lindblad", "trajectories", "both")
METHODS = ("auto", "expm", "rk")

_KERR = """\
# Optical Kerr configuration: one cw field linearly polarized along x acting
# on a coherent rotor state whose mean angular momentum points along y.
name = "{name}"
j_max = 12
backend = "both"
n_traj = 2000
master_seed = 20240607
leakage_threshold = 1e-6

[initial]
kind = "coherent"
j = 2
theta = 1.5707963267948966
phi = 1.5707963267948966

[field]
omega_R = 0.1
gamma_over_delta = {gd}
red_detuned = false

[[field.components]]
amplitude = 1.0
polarization = "x"
detuning = 0.0

[grid]
t_max = 20.0
n_points = 2000
"""

PRESETS = {
    "kerr-fig2": (_KERR.format(name="kerr-fig2", gd="0.01"), "Kerr field, Omega_R/B = 0.1, Gamma/Delta = 0.01"),
    "kerr-fig2-unitary": (_KERR.format(name="kerr-fig2-unitary", gd="0.0"), "same field without spontaneous scattering"),
}


@dataclass(frozen=True)
class InitialSpec:
    kind: str
    j: int | None = None
    m: int | None = None
    theta: float | None = None
    phi: float | None = None
    amplitudes: tuple | None = None  # ((re, im), ...) in basis order

    def build(self, basis: RotBasis) -> PureState:
        if self.kind == "coherent":
            return coherent_state(basis, self.j, self.theta, self.phi)
        if self.kind == "basis":
            return basis_state(basis, self.j, self.m)
        amps = np.array([complex(re, im) for re, im in self.amplitudes])
        if len(amps) != basis.dim:
            raise ValidationError(
                f"{len(amps)} amplitudes given, basis with j_max={basis.j_max} has {basis.dim}",
                "initial.amplitudes",
            )
        return PureState(basis, amps).normalized()

    def max_j(self) -> int:
        if self.kind in ("coherent", "basis"):
            return self.j
        nz = [i for i, (re, im) in enumerate(self.amplitudes) if re or im]
        return max(math.isqrt(i) for i in nz)


@dataclass(frozen=True)
class Tolerances:
    rtol: float = 1e-9
    atol: float = 1e-12
    trace: float = 1e-6
    positivity: float = 1e-8
    method: str = "auto"


@dataclass(frozen=True)
class VibrationalSpec:
    eta: float
    omega_nu_over_B: float
    delta_over_B: float
    margin: float = 0.1
    nu_max: int = 60


@dataclass(frozen=True)
class OutputSpec:
    dir: str = "out"
    jump_logs: bool = True


@dataclass(frozen=True)
class Scenario:
    name: str
    j_max: int
    initial: InitialSpec
    field: FieldConfig
    t_max: float
    n_points: int
    backend: str = "lindblad"
    n_traj: int = 2000
    master_seed: int = 0
    leakage_threshold: float = 1e-6
    tolerances: Tolerances = Tolerances()
    vibrational: VibrationalSpec | None = None
    output: OutputSpec = OutputSpec()

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, self.t_max, self.n_points)

    def basis(self) -> RotBasis:
        return build_basis(self.j_max)

    def initial_state(self) -> PureState:
        return self.initial.build(self.basis())

    def to_dict(self) -> dict:
        """Canonical echo; parse_dict(s.to_dict()) reproduces s."""
        init = {"kind": self.initial.kind}
        if self.initial.kind == "coherent":
            init.update(j=self.initial.j, theta=self.initial.theta, phi=self.initial.phi)
        elif self.initial.kind == "basis":
            init.update(j=self.initial.j, m=self.initial.m)
        else:
            init["amplitudes"] = [list(a) for a in self.initial.amplitudes]
        comps = []
        for c in self.field.components:
            comps.append({
                "amplitude": [c.amplitude.real, c.amplitude.imag],
                "polarization": [[v.real, v.imag] for v in c.polarization],
                "detuning": c.detuning,
            })
        d = {
            "name": self.name,
            "j_max": self.j_max,
            "backend": self.backend,
            "n_traj": self.n_traj,
            "master_seed": self.master_seed,
            "leakage_threshold": self.leakage_threshold,
            "initial": init,
            "field": {
                "omega_R": self.field.omega_R,
                "gamma_over_delta": self.field.gamma_over_delta,
                "red_detuned": self.field.red_detuned,
                "components": comps,
            },
            "grid": {"t_max": self.t_max, "n_points": self.n_points},
            "tolerances": vars(self.tolerances).copy(),
            "output": vars(self.output).copy(),
        }
        if self.vibrational is not None:
            d["vibrational"] = vars(self.vibrational).copy()
        return d

    def digest(self) -> str:
        """SHA-256 of the canonical echo, excluding output paths."""
        d = self.to_dict()
        d.pop("output")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_overrides(self, **kw) -> "Scenario":
        kw = {k: v for k, v in kw.items() if v is not None}
        if not kw:
            return self
        d = self.to_dict()
        for key, value in kw.items():
            if key == "t_max":
                d["grid"]["t_max"] = value
            elif key == "out_dir":
                d["output"]["dir"] = value
            else:
                d[key] = value
        return parse_dict(d)


# schema: key -> (type check, default or REQUIRED)
REQUIRED = object()


def _reject_unknown(table: dict, allowed, path: str):
    for key in table:
        if key not in allowed:
            where = f"{path}.{key}" if path else key
            raise ValidationError(f"unknown key (allowed: {', '.join(sorted(allowed))})", where)


def _get(table, key, kind, path, default=REQUIRED):
    where = f"{path}.{key}" if path else key
    if key not in table:
        if default is REQUIRED:
            raise ValidationError("missing required key", where)
        return default
    v = table[key]
    if kind is float:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ValidationError(f"expected a number, got {v!r}", where)
        v = float(v)
        if not math.isfinite(v):
            raise ValidationError(f"expected a finite number, got {v!r}", where)
        return v
    if kind is int:
        if isinstance(v, bool) or not isinstance(v, int):
            raise ValidationError(f"expected an integer, got {v!r}", where)
        return v
    if not isinstance(v, kind):
        raise ValidationError(f"expected {kind.__name__}, got {v!r}", where)
    return v


def _complex(v, where):
    if isinstance(v, bool):
        raise ValidationError(f"expected a number or [re, im], got {v!r}", where)
    if isinstance(v, (int, float)):
        return complex(v)
    if isinstance(v, list) and len(v) == 2 and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
        return complex(v[0], v[1])
    raise ValidationError(f"expected a number or [re, im], got {v!r}", where)


def _initial(t, path="initial") -> InitialSpec:
    if not isinstance(t, dict):
        raise ValidationError("expected a table", path)
    kind = _get(t, "kind", str, path, "coherent")
    if kind == "coherent":
        _reject_unknown(t, {"kind", "j", "theta", "phi"}, path)
        j = _get(t, "j", int, path)
        theta = _get(t, "theta", float, path)
        phi = _get(t, "phi", float, path)
        if j < 0:
            raise ValidationError(f"must be >= 0, got {j}", f"{path}.j")
        if not 0.0 <= theta <= math.pi:
            raise ValidationError(f"must lie in [0, pi], got {theta}", f"{path}.theta")
        if not 0.0 <= phi < 2 * math.pi:
            raise ValidationError(f"must lie in [0, 2 pi), got {phi}", f"{path}.phi")
        return InitialSpec("coherent", j=j, theta=theta, phi=phi)
    if kind == "basis":
        _reject_unknown(t, {"kind", "j", "m"}, path)
        j = _get(t, "j", int, path)
        m = _get(t, "m", int, path)
        if j < 0 or abs(m) > j:
            raise ValidationError(f"invalid pair (j={j}, m={m})", path)
        return InitialSpec("basis", j=j, m=m)
    if kind == "amplitudes":
        _reject_unknown(t, {"kind", "amplitudes"}, path)
        raw = _get(t, "amplitudes", list, path)
        amps = tuple(
            (c.real, c.imag) for c in (_complex(v, f"{path}.amplitudes[{i}]") for i, v in enumerate(raw))
        )
        if not any(re or im for re, im in amps):
            raise ValidationError("all amplitudes are zero", f"{path}.amplitudes")
        return InitialSpec("amplitudes", amplitudes=amps)
    raise ValidationError(f"must be 'coherent', 'basis' or 'amplitudes', got {kind!r}", f"{path}.kind")


def _field(t, path="field") -> FieldConfig:
    if not isinstance(t, dict):
        raise ValidationError("expected a table", path)
    _reject_unknown(t, {"omega_R", "gamma_over_delta", "red_detuned", "components"}, path)
    omega_R = _get(t, "omega_R", float, path)
    gd = _get(t, "gamma_over_delta", float, path)
    red = _get(t, "red_detuned", bool, path, False)
    raw = _get(t, "components", list, path, [{"amplitude": 1.0, "polarization": "x", "detuning": 0.0}])
    if not raw:
        raise ValidationError("at least one component is required", f"{path}.components")
    comps = []
    for i, c in enumerate(raw):
        where = f"{path}.components[{i}]"
        if not isinstance(c, dict):
            raise ValidationError("expected a table", where)
        _reject_unknown(c, {"amplitude", "polarization", "detuning"}, where)
        amp = _complex(c.get("amplitude", 1.0), f"{where}.amplitude")
        pol = c.get("polarization", "x")
        if not isinstance(pol, str):
            if not isinstance(pol, list) or len(pol) != 3:
                raise ValidationError("expected a name or a 3-vector", f"{where}.polarization")
            pol = tuple(_complex(v, f"{where}.polarization[{k}]") for k, v in enumerate(pol))
        det = _get(c, "detuning", float, where, 0.0)
        try:
            comps.append(FieldComponent(amp, pol, det))
        except ValidationError as exc:
            raise ValidationError(str(exc).split(": ", 1)[-1], f"{where}.polarization") from None
    try:
        return FieldConfig(tuple(comps), omega_R, gd, red)
    except ValidationError as exc:
        raise ValidationError(str(exc).split(": ", 1)[-1], exc.path) from None


def parse_dict(doc: dict) -> Scenario:
    """Validate a configuration tree and fill in defaults."""
    _reject_unknown(
        doc,
        {"name", "j_max", "backend", "n_traj", "master_seed", "leakage_threshold",
         "initial", "field", "grid", "tolerances", "vibrational", "output"},
        "",
    )
    name = _get(doc, "name", str, "", "scenario")
    j_max = _get(doc, "j_max", int, "")
    if j_max < 3:
        raise ValidationError(f"must be >= 3, got {j_max}", "j_max")
    backend = _get(doc, "backend", str, "", "lindblad")
    if backend not in BACKENDS:
        raise ValidationError(f"must be one of {BACKENDS}, got {backend!r}", "backend")
    n_traj = _get(doc, "n_traj", int, "", 2000)
    if backend != "lindblad" and n_traj < 1:
        raise ValidationError(f"must be >= 1, got {n_traj}", "n_traj")
    seed = _get(doc, "master_seed", int, "", 0)
    if not 0 <= seed < 2**63:
        raise ValidationError(f"must lie in [0, 2^63), got {seed}", "master_seed")
    leak = _get(doc, "leakage_threshold", float, "", 1e-6)
    if not 0 < leak < 1:
        raise ValidationError(f"must lie in (0, 1), got {leak}", "leakage_threshold")

    initial = _initial(_get(doc, "initial", dict, ""))
    if initial.kind == "amplitudes":
        if len(initial.amplitudes) != (j_max + 1) ** 2:
            raise ValidationError(
                f"{len(initial.amplitudes)} amplitudes given, j_max={j_max} needs {(j_max + 1) ** 2}",
                "initial.amplitudes",
            )
    if initial.max_j() > j_max - 3:
        raise ValidationError(
            f"initial state reaches j={initial.max_j()}; j_max={j_max} leaves no heating headroom "
            f"(need j <= j_max - 3)", "initial.j",
        )
    field = _field(_get(doc, "field", dict, ""))

    g = _get(doc, "grid", dict, "", {})
    _reject_unknown(g, {"t_max", "n_points"}, "grid")
    t_max = _get(g, "t_max", float, "grid", 20.0)
    n_points = _get(g, "n_points", int, "grid", 2000)
    if not t_max > 0:
        raise ValidationError(f"must be > 0, got {t_max}", "grid.t_max")
    if n_points < 2:
        raise ValidationError(f"must be >= 2, got {n_points}", "grid.n_points")

    tt = _get(doc, "tolerances", dict, "", {})
    _reject_unknown(tt, {"rtol", "atol", "trace", "positivity", "method"}, "tolerances")
    tol = Tolerances(
        rtol=_get(tt, "rtol", float, "tolerances", 1e-9),
        atol=_get(tt, "atol", float, "tolerances", 1e-12),
        trace=_get(tt, "trace", float, "tolerances", 1e-6),
        positivity=_get(tt, "positivity", float, "tolerances", 1e-8),
        method=_get(tt, "method", str, "tolerances", "auto"),
    )
    for key in ("rtol", "atol", "trace", "positivity"):
        if not getattr(tol, key) > 0:
            raise ValidationError("must be > 0", f"tolerances.{key}")
    if tol.method not in METHODS:
        raise ValidationError(f"must be one of {METHODS}, got {tol.method!r}", "tolerances.method")

    vib = None
    if "vibrational" in doc:
        v = _get(doc, "vibrational", dict, "")
        _reject_unknown(v, {"eta", "omega_nu_over_B", "delta_over_B", "margin", "nu_max"}, "vibrational")
        vib = VibrationalSpec(
            eta=_get(v, "eta", float, "vibrational"),
            omega_nu_over_B=_get(v, "omega_nu_over_B", float, "vibrational"),
            delta_over_B=_get(v, "delta_over_B", float, "vibrational"),
            margin=_get(v, "margin", float, "vibrational", 0.1),
            nu_max=_get(v, "nu_max", int, "vibrational", 60),
        )
        for key in ("omega_nu_over_B", "delta_over_B", "margin"):
            if not getattr(vib, key) > 0:
                raise ValidationError("must be > 0", f"vibrational.{key}")
        if vib.eta < 0:
            raise ValidationError("must be >= 0", "vibrational.eta")
        if vib.nu_max < 1:
            raise ValidationError("must be >= 1", "vibrational.nu_max")

    o = _get(doc, "output", dict, "", {})
    _reject_unknown(o, {"dir", "jump_logs"}, "output")
    out = OutputSpec(dir=_get(o, "dir", str, "output", "out"), jump_logs=_get(o, "jump_logs", bool, "output", True))

    return Scenario(
        name=name, j_max=j_max, initial=initial, field=field, t_max=t_max, n_points=n_points,
        backend=backend, n_traj=n_traj, master_seed=seed, leakage_threshold=leak,
        tolerances=tol, vibrational=vib, output=out,
    )


def parse_scenario(text: str) -> Scenario:
    """Parse a TOML document.  Duplicate keys and syntax errors raise ValidationError."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"cannot parse configuration: {exc}", "config") from None
    return parse_dict(doc)


def load_scenario(source: str) -> Scenario:
    """A preset name or the path of a TOML file."""
    if source in PRESETS:
        return parse_scenario(PRESETS[source][0])
    try:
        with open(source, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ValidationError(f"cannot read configuration ({exc.strerror}); presets: {', '.join(PRESETS)}", source) from None
    return parse_scenario(text)


def preset(name: str) -> Scenario:
    if name not in PRESETS:
        raise ValidationError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}", "preset")
    return parse_scenario(PRESETS[name][0])


__all__ = [
    "PRESETS",
    "Scenario",
    "load_scenario",
    "parse_dict",
    "parse_scenario",
    "preset",
]
