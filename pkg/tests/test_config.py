import numpy as np
import pytest

from dynhom.config import ConfigError, RunConfig, from_dict, load_config


def write(tmp_path, text):
    p = tmp_path / "run.toml"
    p.write_text(text)
    return p


def test_defaults_are_valid():
    cfg = load_config(None)
    assert cfg.geometry.epsilon_list == (0.25, 0.125, 0.0625)
    assert cfg.problem.f == "cubic" and cfg.problem.g == "linear"
    assert cfg.cell().has_hole


def test_load_toml_with_fractions(tmp_path):
    p = write(tmp_path, """
[geometry]
shape = "ellipse"
size = [0.3, 0.2]
epsilon_list = ["1/2", "1/4"]

[discretization]
h_cell = "1/16"
fixed_point_iters = 2

[problem]
f = "linear"
g = "linear_tanh"
forcing = "bump_ramp"

[study]
kind = "properties"

[output]
dir = "somewhere"
""")
    cfg = load_config(p)
    assert cfg.geometry.epsilon_list == (0.5, 0.25)
    assert cfg.geometry.size == (0.3, 0.2)
    assert cfg.discretization.h_cell == 1 / 16
    data = cfg.problem_data()
    x = np.array([[0.5, 0.5]])
    assert data.h(x, 0.5)[0] == pytest.approx(10 * 0.5)


@pytest.mark.parametrize(
    "raw",
    [
        {"geometry": {"colour": "red"}},
        {"extras": {}},
        {"geometry": {"epsilon_list": ["1/8", "1/4"]}},
        {"geometry": {"epsilon_list": [0.3]}},
        {"geometry": {"size": 0.6}},
        {"problem": {"f": "quartic"}},
        {"problem": {"forcing": "wiggle"}},
        {"problem": {"kappa": 0.0}},
        {"problem": {"boundary_forcing": "constant"}},
        {"study": {"kind": "everything"}},
        {"discretization": {"dt_factor": -1.0}},
        {"geometry": {"epsilon_list": ["1/0"]}},
    ],
)
def test_invalid_configs(raw):
    with pytest.raises(ConfigError):
        from_dict(raw)


def test_unreadable_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, "[geometry\nshape="))


def test_no_hole_and_linear_checks_allowed():
    cfg = from_dict({"geometry": {"shape": "none"}, "problem": {"f": "zero", "g": "zero"}})
    assert not cfg.cell().has_hole


def test_to_dict_roundtrip():
    cfg = RunConfig().validate()
    again = from_dict(cfg.to_dict())
    assert again == cfg
