from pathlib import Path

import pytest

from loggpis.config import ConfigError, ScenarioConfig, load_config, parse_config

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_shipped_configs_load():
    for name, lam in [("circle", 40.0), ("lidar2d", 10.0), ("boxes", 50.0)]:
        cfg = load_config(CONFIGS / f"{name}.cfg")
        assert cfg.scenario == name and cfg.lambda_value == lam


def test_defaults():
    cfg = load_config(None)
    assert cfg.scenario == "circle" and cfg.lambda_value == 40.0 and cfg.kernel == "matern32"


def test_include_and_override(tmp_path):
    _write(tmp_path, "base.cfg", "scenario = lidar2d\nlambda = 5\nprimitive = circle 0 0 1\n")
    top = _write(tmp_path, "top.cfg", "include = base.cfg\nlambda = 7  # later wins\n"
                                      "primitive = box 1 1 0.5 0.5\n")
    cfg = load_config(top)
    assert cfg.lambda_value == 7.0
    assert cfg.primitives == [("circle", [0.0, 0.0, 1.0]), ("box", [1.0, 1.0, 0.5, 0.5])]


def test_include_cycle(tmp_path):
    _write(tmp_path, "a.cfg", "include = b.cfg\n")
    _write(tmp_path, "b.cfg", "include = a.cfg\n")
    with pytest.raises(ConfigError, match="cycle"):
        parse_config(tmp_path / "a.cfg")


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.cfg")


@pytest.mark.parametrize("text", [
    "bogus = 1\n",
    "lambda = 0\n",
    "lambda = 1001\n",
    "lambda = abc\n",
    "kernel = rbf\n",
    "scenario = moon\n",
    "frames = -1\n",
    "seed = 1.5\n",
    "no equals sign\n",
    "primitive = hexagon 1 2\n",
    "lambda_sweep = 5 0\n",
    "sigma2 = -1\n",
])
def test_invalid(tmp_path, text):
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, "c.cfg", text))


def test_overrides(tmp_path):
    cfg = load_config(_write(tmp_path, "c.cfg", "lambda = 5\n"), {"lambda": "20", "seed": None})
    assert cfg.lambda_value == 20.0 and cfg.seed == 0


def test_kernel_params():
    cfg = ScenarioConfig(scenario="boxes", kernel="whittle")
    p = cfg.kernel_params()
    assert p.lam == 50.0 and p.kernel_name == "whittle"
