"""Configuration and preset tests."""

import json

import pytest

from dotshape import config as cfg
from dotshape.errors import ConfigError
from dotshape.grid import Side

from .const import EXP_DIRS, EXP_G, EXP_NX, EXP_SOURCES, EXP_WINDOW, SMALL_CONFIG, TRUE_CENTERS


@pytest.mark.parametrize("name", cfg.PRESETS)
def test_presets_load(name):
    """Test that every preset validates."""
    config = cfg.load_preset(name)
    assert config.name == name
    assert config.grid.nx == EXP_NX
    assert config.solver.n_dirs == EXP_DIRS
    assert config.solver.g == EXP_G
    assert config.solver.time_grid().courant(config.grid.spec()) == pytest.approx(0.5)


def test_experiment_values():
    """Test the experiment constants."""
    exp1 = cfg.load_preset("exp1")
    assert exp1.sources.per_side * len(exp1.sources.order) == EXP_SOURCES
    assert tuple(exp1.receivers.window) == EXP_WINDOW
    assert exp1.receivers.min_arc == 5.0
    assert [tuple(o.center) for o in exp1.phantom.obstacles] == list(TRUE_CENTERS)
    assert exp1.phantom.clear_layer.a == 0.01
    assert exp1.inversion.a_hat == 0.5
    assert exp1.inversion.tbt_sweeps == 20
    assert exp1.sources.order[0] is Side.BOTTOM

    assert cfg.load_preset("exp2").inversion.a_hat == 0.55
    exp3 = cfg.load_preset("exp3")
    assert [o.a for o in exp3.phantom.obstacles] == [0.4, 0.5, 0.6]
    assert len(exp3.phantom.clear_discs) == 2
    assert exp3.inversion.ls_sweeps == 10
    assert exp3.inversion.ls_snapshot_steps == [6, 48, 160]
    assert exp1.inversion.ls_snapshot_steps == [6, 16]
    for config in (exp1, exp3):
        assert config.inversion.tbt_taper_px == 4.0
        assert config.inversion.init_margin_px == 3.0

    fig1 = cfg.load_preset("fig1")
    assert fig1.sensitivity.n_rec == 130
    assert fig1.sensitivity.times == [10.0, 24.0]
    assert not fig1.phantom.obstacles


def test_unknown_preset():
    """Test an unknown preset name."""
    with pytest.raises(ConfigError):
        cfg.load_preset("exp9")


def test_round_trip(tmp_path):
    """Test that dumped configuration parses back equal."""
    config = cfg.load_preset("exp3")
    path = tmp_path / "exp3.json"
    path.write_text(cfg.dump_config(config), encoding="utf-8")
    again = cfg.parse_config(path)
    assert again == config
    assert cfg.config_hash(again) == cfg.config_hash(config)


def test_hash_ignores_key_order():
    """Test hash invariance under key order and sensitivity to values."""
    forward = cfg.config_from_dict(SMALL_CONFIG)
    backward = cfg.config_from_dict(dict(reversed(list(SMALL_CONFIG.items()))))
    assert cfg.config_hash(forward) == cfg.config_hash(backward)
    changed = cfg.with_overrides(forward, {"solver.g": 0.6})
    assert cfg.config_hash(changed) != cfg.config_hash(forward)


def test_unknown_key_reports_path():
    """Test that an unknown field is reported with its path."""
    data = json.loads(json.dumps(SMALL_CONFIG))
    data["grid"]["bogus"] = 1
    with pytest.raises(ConfigError) as err:
        cfg.config_from_dict(data)
    assert "grid.bogus" in err.value.paths
    assert "grid.bogus" in str(err.value)


@pytest.mark.parametrize(
    ("section", "key", "value", "path"),
    [
        ("solver", "n_dirs", 7, "solver.n_dirs"),
        ("solver", "g", 1.0, "solver.g"),
        ("grid", "dx", 0.0, "grid.dx"),
        ("receivers", "window", [20.0, 8.0], "receivers"),
        ("inversion", "a_max", 0.001, "inversion"),
    ],
)
def test_invalid_values(section, key, value, path):
    """Test value validation."""
    data = json.loads(json.dumps(SMALL_CONFIG))
    data[section][key] = value
    with pytest.raises(ConfigError) as err:
        cfg.config_from_dict(data)
    assert path in err.value.paths


def test_parse_errors(tmp_path):
    """Test unreadable and malformed files."""
    with pytest.raises(ConfigError):
        cfg.parse_config(tmp_path / "missing.json")
    broken = tmp_path / "broken.json"
    broken.write_text("{", encoding="utf-8")
    with pytest.raises(ConfigError):
        cfg.parse_config(broken)
    listed = tmp_path / "list.json"
    listed.write_text("[]", encoding="utf-8")
    with pytest.raises(ConfigError):
        cfg.parse_config(listed)


def test_with_overrides():
    """Test dotted overrides and their validation."""
    config = cfg.load_preset("exp1")
    changed = cfg.with_overrides(config, {"inversion.ls_sweeps": 3, "threads": 2})
    assert changed.inversion.ls_sweeps == 3
    assert changed.threads == 2
    assert config.inversion.ls_sweeps == 1
    with pytest.raises(ConfigError):
        cfg.with_overrides(config, {"inversion.ls_sweeps": -1})


def test_defaults():
    """Test the default configuration."""
    config = cfg.PipelineConfig()
    assert config.solver.substeps == 4
    assert config.phantom.clear_layer is not None
    assert config.inversion.gamma_ls == 0.9
    assert config.sensitivity.source.side is Side.LEFT
