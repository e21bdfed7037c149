import pytest

from membrane_lab.config import (SimConfig, config_hash, load_experiment, parse_experiment,
                                 scenario_dir, scenario_path)
from membrane_lab.errors import ConfigError, StepTooLarge

BASE = """\
[scenario]
name = "t"

[coefficients]
sigma = [[1.0]]
beta = 2.0
gamma = 0.5

[membranes]
density = 1.0

[scaling]
epsilon = 0.1
delta = 0.1

[simulation]
n_paths = 10
seed = 3
"""

SCENARIOS = sorted(p.stem for p in scenario_dir().glob("*.toml"))


@pytest.mark.parametrize("name", SCENARIOS)
def test_builtin_scenarios_load(name):
    exp = load_experiment(scenario_path(name))
    assert exp.name == name
    assert len(exp.config_hash) == 16
    assert exp.regime.delta * exp.field.bounds.beta < 1


def test_minimal_config_defaults():
    exp = parse_experiment(BASE)
    assert exp.field.dim_y == 0 and exp.sim.n_paths == 10 and exp.sim.master_seed == 3
    assert exp.regime.lam == 0.0 and exp.coupling.p_limit.finite() == pytest.approx(1.0)
    assert exp.sim.scheme == "euler" and exp.rule == "integral"


def test_negative_gamma_names_field_and_line():
    text = BASE.replace("gamma = 0.5", "gamma = -1.0")
    with pytest.raises(ConfigError) as exc:
        parse_experiment(text)
    assert exc.value.field == "coefficients.gamma"
    assert exc.value.line == 7


def test_unknown_section_rejected():
    with pytest.raises(ConfigError) as exc:
        parse_experiment(BASE + "\n[extras]\nfoo = 1\n")
    assert exc.value.field == "extras"


@pytest.mark.parametrize("old,new,field", [
    ("epsilon = 0.1", "epsilon = 0.0", "scaling.epsilon"),
    ("epsilon = 0.1", "epsilon = 2.0", "scaling.epsilon"),
    ("delta = 0.1", "delta = 0.6", "scaling.delta"),
    ("n_paths = 10", "n_paths = 0", "simulation.n_paths"),
    ("n_paths = 10", 'n_paths = "ten"', "simulation.n_paths"),
    ("density = 1.0", "density = -1.0", "membranes.density"),
    ("beta = 2.0", 'beta = {preset = "spline"}', "coefficients.beta"),
    ("seed = 3", "seed = 3\nscheme = \"leapfrog\"", "simulation.scheme"),
])
def test_bad_values_named(old, new, field):
    with pytest.raises(ConfigError) as exc:
        parse_experiment(BASE.replace(old, new))
    assert exc.value.field == field
    assert exc.value.line is not None


def test_toml_syntax_error_has_line():
    with pytest.raises(ConfigError) as exc:
        parse_experiment(BASE.replace("beta = 2.0", "beta = = 2"))
    assert exc.value.line == 6


def test_vanishing_sigma_row_rejected():
    text = BASE.replace("sigma = [[1.0]]", 'sigma = [[{preset = "sinusoidal", amp = 1.0, x = 1.0}]]')
    with pytest.raises(ConfigError) as exc:
        parse_experiment(text)
    assert exc.value.field == "coefficients.sigma"


def test_config_hash_is_order_insensitive():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})


def test_resolved_defaults_and_step_check():
    cfg = SimConfig().resolved(0.1, 1.0, 4.0)
    assert cfg.rho == pytest.approx(0.0125)
    assert cfg.step == pytest.approx(0.0125**2 / 40)
    with pytest.raises(StepTooLarge):
        SimConfig(step=1e-3).resolved(0.1, 1.0, 1.0)
    # the strip walk has no step constraint
    SimConfig(step=1e-3, scheme="stripwalk").resolved(0.1, 1.0, 1.0)


def test_overrides_ignore_none():
    cfg = SimConfig(n_paths=5)
    assert cfg.with_overrides(n_paths=None, master_seed=None) is cfg
    assert cfg.with_overrides(n_paths=7).n_paths == 7


def test_unknown_scenario():
    with pytest.raises(ConfigError):
        scenario_path("no-such-scenario")


def test_missing_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_experiment(tmp_path / "absent.toml")
