import numpy as np
import pytest

from rotmaster.errors import ValidationError
from rotmaster.scenario import PRESETS, load_scenario, parse_scenario, preset

BASE = """
j_max = 8
backend = "lindblad"
[initial]
kind = "coherent"
j = 2
theta = 1.0
phi = 0.5
[field]
omega_R = 0.1
gamma_over_delta = 0.01
"""


def test_kerr_preset():
    s = preset("kerr-fig2")
    assert s.field.omega_R == 0.1 and s.field.gamma_over_delta == 0.01
    assert s.initial.kind == "coherent" and s.initial.j == 2
    assert s.initial.theta == pytest.approx(np.pi / 2) and s.initial.phi == pytest.approx(np.pi / 2)
    (comp,) = s.field.components
    assert np.allclose(comp.polarization, [1, 0, 0]) and comp.detuning == 0.0
    assert s.j_max >= 12
    psi = s.initial_state()
    assert psi.basis.j_max == s.j_max
    assert len(s.grid) == s.n_points and s.grid[-1] == s.t_max


def test_presets_parse():
    for name in PRESETS:
        assert load_scenario(name).name == name


def test_defaults():
    s = parse_scenario(BASE)
    assert s.backend == "lindblad" and s.t_max == 20.0 and s.leakage_threshold == 1e-6
    assert s.tolerances.method == "auto" and s.vibrational is None


@pytest.mark.parametrize(
    "old,new,path",
    [
        ("theta = 1.0", "theta = -1.0", "initial.theta"),
        ("phi = 0.5", "phi = 7.0", "initial.phi"),
        ("j_max = 8", "j_max = 2", "j_max"),
        ("j = 2", "j = 6", "initial.j"),
        ('backend = "lindblad"', 'backend = "fast"', "backend"),
        ("omega_R = 0.1", "omega_R = -0.1", "field.omega_R"),
        ("omega_R = 0.1", 'omega_R = "big"', "field.omega_R"),
        ('kind = "coherent"', 'kind = "squeezed"', "initial.kind"),
        ("j_max = 8", "j_max = 8\ncolour = 1", "colour"),
    ],
)
def test_validation_names_field(old, new, path):
    with pytest.raises(ValidationError) as exc:
        parse_scenario(BASE.replace(old, new))
    assert exc.value.path is not None and path in exc.value.path or path in str(exc.value)


def test_duplicate_key_is_parse_error():
    with pytest.raises(ValidationError) as exc:
        parse_scenario(BASE + "\n[grid]\nt_max = 1.0\nt_max = 2.0\n")
    assert exc.value.path == "config"


def test_missing_file():
    with pytest.raises(ValidationError):
        load_scenario("/nonexistent/config.toml")


def test_explicit_amplitudes_and_basis_state():
    text = BASE.replace("j_max = 8", "j_max = 4")
    coherent = 'kind = "coherent"\nj = 2\ntheta = 1.0\nphi = 0.5'
    s = parse_scenario(text.replace(coherent, 'kind = "basis"\nj = 1\nm = -1'))
    assert s.initial_state().amplitudes[1] == 1.0
    vec = ", ".join(["[0.6, 0.0]", "0.0", "0.0", "[0.0, 0.8]"] + ["0.0"] * 21)
    s = parse_scenario(text.replace(coherent, f'kind = "amplitudes"\namplitudes = [{vec}]'))
    assert np.allclose(s.initial_state().amplitudes[[0, 3]], [0.6, 0.8j])
    with pytest.raises(ValidationError):
        parse_scenario(text.replace(coherent, 'kind = "amplitudes"\namplitudes = [1.0, 0.0]'))
    # a j = 2 component leaves no heating headroom below j_max = 4
    vec = ", ".join(["0.0"] * 4 + ["1.0"] + ["0.0"] * 20)
    with pytest.raises(ValidationError):
        parse_scenario(text.replace(coherent, f'kind = "amplitudes"\namplitudes = [{vec}]'))


def test_digest_and_overrides():
    s = parse_scenario(BASE)
    t = s.with_overrides(t_max=5.0)
    assert t.t_max == 5.0 and t.digest() != s.digest()
    assert s.with_overrides(out_dir="elsewhere").digest() == s.digest()
    assert parse_scenario(BASE).digest() == s.digest()


def test_vibrational_block():
    s = parse_scenario(BASE + "\n[vibrational]\neta = 3.7\nomega_nu_over_B = 200.0\ndelta_over_B = 1e6\n")
    assert s.vibrational.eta == 3.7 and s.vibrational.margin == 0.1
    with pytest.raises(ValidationError):
        parse_scenario(BASE + "\n[vibrational]\neta = 3.7\nomega_nu_over_B = 0.0\ndelta_over_B = 1e6\n")
