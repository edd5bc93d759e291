"""Config validation, presets, geometry, and the flat text format."""

import dataclasses

import pytest

from svtr.config import PRESETS, SvtrConfig, format_config, load_config, parse_config_text
from svtr.exceptions import ContractError, GeometryError


def test_presets_construct():
    for name, config in PRESETS.items():
        assert sum(config.depths) == len(config.permutation), name


def test_variant_table():
    t = PRESETS["svtr-t"]
    assert t.embed_dims == (64, 128, 256)
    assert t.depths == (3, 6, 3)
    assert t.heads == (2, 4, 8)
    assert t.combined_dim == 192
    assert "".join(t.permutation) == "L" * 6 + "G" * 6
    lg = {name: "".join(PRESETS[name].permutation)
          for name in ("svtr-s", "svtr-b", "svtr-l")}
    assert lg == {"svtr-s": "L" * 8 + "G" * 7,
                  "svtr-b": "L" * 8 + "G" * 10,
                  "svtr-l": "L" * 10 + "G" * 11}


def test_stage_geometry_halves_height_keeps_width():
    geo = PRESETS["svtr-t"].stage_geometry()
    assert geo == [(8, 32, 64), (4, 32, 128), (2, 32, 256)]


def test_stage_permutation_slices():
    config = PRESETS["svtr-t"]
    assert config.stage_permutation(0) == ("L",) * 3
    assert config.stage_permutation(1) == ("L", "L", "L", "G", "G", "G")
    assert config.stage_permutation(2) == ("G",) * 3


def test_permutation_length_mismatch():
    with pytest.raises(ContractError):
        SvtrConfig(permutation=tuple("LG"))


def test_head_divisibility():
    with pytest.raises(ContractError):
        SvtrConfig(heads=(3, 4, 8))


def test_input_geometry_validation():
    with pytest.raises(GeometryError):
        dataclasses.replace(PRESETS["svtr-micro"], input_h=20)


def test_width_must_cover_max_label():
    with pytest.raises(ContractError):
        dataclasses.replace(PRESETS["svtr-micro"], input_w=16)


def test_even_window_rejected():
    with pytest.raises(ContractError):
        SvtrConfig(window=(6, 11))


def test_dict_roundtrip():
    for config in PRESETS.values():
        assert SvtrConfig.from_dict(config.to_dict()) == config


def test_text_roundtrip():
    for config in PRESETS.values():
        assert parse_config_text(format_config(config)) == config


def test_parse_preset_with_override():
    config = parse_config_text("preset = svtr-t\ncharset_size = 11  # digits\n")
    assert config.charset_size == 11
    assert config.embed_dims == PRESETS["svtr-t"].embed_dims


def test_parse_rejects_unknown_key():
    with pytest.raises(ContractError):
        parse_config_text("fuzz = 1\n")


def test_load_config_preset_and_file(tmp_path):
    assert load_config("svtr-s") == PRESETS["svtr-s"]
    path = tmp_path / "model.cfg"
    path.write_text(format_config(PRESETS["svtr-micro"]))
    assert load_config(str(path)) == PRESETS["svtr-micro"]
    with pytest.raises(ContractError):
        load_config("no-such-preset")
