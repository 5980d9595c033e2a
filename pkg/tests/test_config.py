import json

import pytest

from src.stonemark.cli import build_parser, resolve_config
from src.stonemark.config import SETTINGS, RunConfig, load_config_file, merge_config


def test_defaults():
    cfg = RunConfig()
    assert cfg.gamma == SETTINGS.gamma and cfg.delta == SETTINGS.delta
    assert cfg.provider == "toy" and cfg.gate == "non_syntax"
    assert cfg.k_values == [1, 5]


def test_flags_win_over_file(tmp_path):
    fp = tmp_path / "cfg.json"
    fp.write_text(json.dumps({"gamma": 0.25, "delta": 3.0, "max-tokens": 40, "k_values": [1]}))
    args = build_parser().parse_args(["evaluate", "--config", str(fp), "--delta", "2.5", "--samples", "3"])
    cfg = resolve_config(args)
    assert cfg.gamma == 0.25       # file
    assert cfg.delta == 2.5        # flag over file
    assert cfg.max_tokens == 40    # dashed key in the file
    assert cfg.samples == 3
    assert cfg.k_values == [1]
    assert cfg.top_k == SETTINGS.top_k  # default


def test_unset_flags_fall_through():
    cfg = merge_config({"seed": 9}, {"seed": None, "workers": 2})
    assert cfg.seed == 9 and cfg.workers == 2


def test_config_file_errors(tmp_path):
    assert load_config_file(None) == {}
    with pytest.raises(FileNotFoundError):
        load_config_file(tmp_path / "missing.json")
    fp = tmp_path / "list.json"
    fp.write_text("[1, 2]")
    with pytest.raises(ValueError):
        load_config_file(fp)


@pytest.mark.parametrize("values", [{"gamma": 1.0}, {"delta": -1}, {"workers": 0}, {"unknown_key": 1}])
def test_invalid_values_are_rejected(values):
    with pytest.raises(ValueError):
        merge_config(values, {})
