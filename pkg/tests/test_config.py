"""Config parsing, presets, round-tripping, and hashing."""

import pytest

from obstaclesim.config import (ConfigError, config_hash, list_presets,
                                parse_config, preset_config, serialize_config)


def test_minimal_preset_reference_expands_fully():
    cfg = parse_config('[scenario]\npreset = "pm-contact"\n')
    assert cfg == preset_config("pm-contact")
    assert cfg.n == 256 and cfg.m == 2.0 and cfg.sigma_kind == "sqrt_phi"


def test_preset_override_key_by_key():
    cfg = parse_config("[scenario]\npreset = pm-contact\n"
                       "[mesh]\nn = 64\n[penalty]\nepsilon = 0.025\n")
    assert cfg.n == 64 and cfg.epsilon == 0.025
    # everything else keeps the preset values
    assert cfg.obstacle_rate == preset_config("pm-contact").obstacle_rate


def test_round_trip_all_presets():
    for name in list_presets():
        cfg = preset_config(name)
        assert parse_config(serialize_config(cfg)) == cfg


def test_unknown_section_and_key_rejected():
    with pytest.raises(ConfigError, match=r"\[physics\]"):
        parse_config("[physics]\nn = 4\n")
    with pytest.raises(ConfigError, match=r"\[mesh\].cells"):
        parse_config("[mesh]\ncells = 4\n")
    with pytest.raises(ConfigError, match=r"\[scenario\].name"):
        parse_config("[scenario]\nname = pm-contact\n")
    with pytest.raises(ConfigError):
        parse_config("not an ini file [")
    with pytest.raises(ConfigError, match="unknown preset"):
        parse_config("[scenario]\npreset = nope\n")


def test_negative_epsilon_rejected_by_key_path():
    with pytest.raises(ConfigError, match=r"\[penalty\].epsilon"):
        parse_config("[scenario]\npreset = pm-contact\n"
                     "[penalty]\nepsilon = -0.1\n")


def test_initial_data_above_obstacle_rejected():
    with pytest.raises(ConfigError, match=r"u_init"):
        parse_config("[scenario]\npreset = pm-contact\n"
                     "[init]\nbase = 2.0\n")


def test_bad_value_type_names_key():
    with pytest.raises(ConfigError, match=r"\[mesh\].n"):
        parse_config("[mesh]\nn = many\n")


def test_optional_and_list_values():
    cfg = parse_config("[scenario]\npreset = pm-contact\n"
                       "[mesh]\nxi_max = none\n"
                       "[output]\nsnapshot_times = 0.25 0.5, 1.0\n")
    assert cfg.xi_max is None
    assert cfg.snapshot_times == (0.25, 0.5, 1.0)
    cfg2 = parse_config("[scenario]\npreset = ode-contact\n"
                        "[init]\nallow_above_obstacle = yes\n")
    assert cfg2.allow_init_above_obstacle is True
    with pytest.raises(ConfigError):
        parse_config("[scenario]\npreset = ode-contact\n"
                     "[init]\nallow_above_obstacle = maybe\n")


def test_config_hash_stability_and_sensitivity():
    a = preset_config("pm-contact")
    b = preset_config("pm-contact")
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(preset_config("pm-contact", n=128))
    assert len(config_hash(a)) == 12


def test_list_presets_descriptions():
    presets = list_presets()
    assert set(presets) == {"pm-contact", "heat-contact", "fast-diffusion",
                            "ode-contact"}
    assert all(isinstance(d, str) and d for d in presets.values())
    with pytest.raises(ConfigError):
        preset_config("missing")
