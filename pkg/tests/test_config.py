import json

import pytest

from lorenz_cusp.config import SCHEMA, RunConfig, schema_help
from lorenz_cusp.errors import ConfigError


def test_defaults_follow_schema():
    cfg = RunConfig()
    for sec, keys in SCHEMA.items():
        for k, key in keys.items():
            val = cfg[sec][k]
            assert key.check is None or key.check(val), f"{sec}.{k}"
    assert cfg["flow"]["tol"] == 1e-10
    assert tuple(cfg["flow"]["u0"]) == (1.0, 1.0, -20.0)


def test_overrides_are_coerced():
    cfg = RunConfig()
    cfg.set("flow.rho=30")
    cfg.set("density.n_bins=1024")
    cfg.set("sweep.epsilons=0.4, 0.2,0.1,0.05")
    assert cfg["flow"]["rho"] == 30.0
    assert cfg["density"]["n_bins"] == 1024
    assert cfg["sweep"]["epsilons"] == (0.4, 0.2, 0.1, 0.05)


@pytest.mark.parametrize("item, path", [
    ("flow.t_end=50", "flow.t_end"),
    ("density.n_bins=1000", "density.n_bins"),
    ("density.n_bins=256", "density.n_bins"),
    ("run.seed=-1", "run.seed"),
    ("map.kind=spline", "map.kind"),
    ("sweep.epsilons=0.1,0.2,0.05,0.01", "sweep.epsilons"),
    ("flow.nope=1", "flow.nope"),
    ("nope.key=1", "nope"),
    ("flow.tol=abc", "flow.tol"),
    ("garbage", "garbage"),
])
def test_invalid_values_name_the_key(item, path):
    with pytest.raises(ConfigError) as err:
        RunConfig().set(item)
    assert err.value.path == path


def test_ini_round_trip(tmp_path):
    cfg = RunConfig({"flow": {"rho": 29.5}, "run": {"seed": 11}})
    (tmp_path / "c.ini").write_text(cfg.to_ini())
    back = RunConfig.from_file(tmp_path / "c.ini")
    assert back.as_dict() == cfg.as_dict()


def test_manifest_is_a_config(tmp_path):
    cfg = RunConfig({"density": {"method": "histogram"}})
    (tmp_path / "manifest.json").write_text(json.dumps({"command": "density",
                                                       "config": cfg.as_dict()}))
    assert RunConfig.from_file(tmp_path / "manifest.json").as_dict() == cfg.as_dict()


def test_missing_file():
    with pytest.raises(ConfigError):
        RunConfig.from_file("/nonexistent/run.ini")


def test_help_lists_every_key():
    text = schema_help()
    for sec, keys in SCHEMA.items():
        for k in keys:
            assert f"{sec}.{k} =" in text
