from pathlib import Path

import pytest

from idpamr.config import ConfigError, load_config, parse_config

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

BASE = """
[run]
version = 1
system = shallow_water
t_final = 0.5
[initial]
kind = constant
state = 1.0, 0.0, 0.0
"""


def test_parse_minimal():
    cfg = parse_config(BASE)
    assert cfg.t_final == 0.5 and cfg.cfl == 0.9 and cfg.limiter
    assert cfg.initial["state"] == ("1.0", "0.0", "0.0")
    assert cfg.boundary["left"] == "slip"


@pytest.mark.parametrize("name", ["dam_break", "sedov", "jet"])
def test_shipped_configs_parse(name):
    cfg = load_config(CONFIGS / f"{name}.ini")
    assert cfg.name == name


def test_dam_break_config_values():
    cfg = load_config(CONFIGS / "dam_break.ini")
    assert cfg.extent == ((0.0, 75.0), (0.0, 30.0))
    assert (cfg.nx, cfg.ny, cfg.max_level, cfg.t_final) == (5, 2, 5, 8.0)
    assert cfg.initial == {"kind": "dam_break", "h_left": 1.875, "h_right": 0.0, "x_dam": 16.0}
    assert cfg.indicator["period"] == 10


@pytest.mark.parametrize(
    "text",
    [
        BASE + "[run2]\n",
        BASE.replace("t_final", "t_end"),
        BASE.replace("version = 1", "version = 2"),
        BASE.replace("version = 1\n", ""),
        BASE + "h_left = 1.0\n",
        BASE.replace("kind = constant", "kind = vortex"),
        BASE.replace("t_final = 0.5", "t_final = soon"),
        BASE + "[mesh]\nnx = 2\nnx = 3\n",
        BASE.replace("t_final = 0.5", "t_final = 0.5\ncfl = 1.5"),
        BASE.replace("t_final = 0.5", "t_final = 0.5\ndegree = 3"),
        BASE.replace("t_final = 0.5", "t_final = 0.5\nlimiter = maybe"),
    ],
)
def test_invalid_configs_rejected(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_overrides():
    cfg = parse_config(BASE).with_overrides(limiter=False, seed=None)
    assert cfg.limiter is False and cfg.seed == 0
