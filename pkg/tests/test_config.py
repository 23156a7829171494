import pytest
from hypothesis import given
from hypothesis import strategies as st

from swinlip.config import (ModelConfig, config_hash, format_config, parse_config, reduced,
                            resnet18_frontend, swinlip_streaming, validate)
from swinlip.errors import ConfigError


def test_empty_file_is_default_preset():
    cfg = parse_config("")
    assert cfg == ModelConfig()
    assert [(s.channels, s.depth, s.window, s.heads) for s in cfg.stages] == \
        [(64, 2, 4, 2), (128, 2, 4, 4), (256, 6, 2, 8)]
    assert cfg.patch_size == 11 and cfg.stem.kernel == (3, 5, 5)


def test_streaming_flag_selects_streaming_preset():
    cfg = parse_config("temporal.streaming = true\n")
    assert cfg.kind == "swinlip_streaming" and cfg.streaming
    assert cfg == swinlip_streaming()


def test_comments_and_blank_lines():
    cfg = parse_config("# header\n\nseed = 5   # trailing\n")
    assert cfg.seed == 5


def test_window_three_on_eight_grid_reports_line():
    with pytest.raises(ConfigError, match="stage1.window") as info:
        parse_config("seed = 1\nstage1.window = 3\n")
    assert info.value.line == 2


@pytest.mark.parametrize("text,line", [
    ("bogus.key = 1\n", 1),
    ("seed = 1\nseed = 2\n", 2),
    ("seed = abc\n", 1),
    ("stem.kernel = 3,5\n", 1),
    ("\nno equals sign\n", 2),
    ("temporal.kernel = 4\n", 1),
    ("model.kind = swinlip_streaming\ntemporal.streaming = false\n", 2),
])
def test_errors_carry_line_numbers(text, line):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.line == line


def test_resnet_kind():
    assert parse_config("model.kind = resnet18_frontend\n") == resnet18_frontend()


@pytest.mark.parametrize("cfg", [ModelConfig(), swinlip_streaming(), resnet18_frontend(), reduced()])
def test_canonical_text_round_trip(cfg):
    assert parse_config(format_config(cfg)) == cfg


def test_hash_ignores_seed_but_not_architecture():
    base = ModelConfig()
    assert config_hash(base) == config_hash(ModelConfig(seed=9))
    assert config_hash(base) != config_hash(swinlip_streaming())
    assert len(config_hash(base)) == 32


@given(st.integers(1, 40))
def test_patch_size_validation_matches_divisibility(patch):
    cfg = ModelConfig(patch_size=patch)
    grid = 88 // patch
    # three merges need the grid to halve evenly three times
    ok = 88 % patch == 0 and grid % 8 == 0
    if ok:
        validate(cfg)
    else:
        with pytest.raises(ConfigError):
            validate(cfg)
