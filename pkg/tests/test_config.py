"""Tests for configuration parsing, validation and hashing."""

from __future__ import annotations

import json

import pytest

from fedlfd.config import ConfigError, load_config, parse_config, with_overrides


def test_minimal_config_all_defaults():
    config = parse_config({})
    assert config.scenario.teachers == 4
    assert config.scenario.nodes == 4
    assert config.strategies == ("fedavg", "user_weighted")
    assert config.seeds == (0,)
    # Every defaulted field is recorded for the run log.
    assert any("training.global_learning_rate" in line for line in config.defaults_applied)
    assert any("seeds" in line for line in config.defaults_applied)


def test_negative_global_learning_rate_names_field():
    with pytest.raises(ConfigError) as err:
        parse_config({"training": {"global_learning_rate": -0.1}})
    assert "global_learning_rate" in str(err.value)


def test_participation_fraction_zero_rejected():
    with pytest.raises(ConfigError) as err:
        parse_config({"training": {"participation_fraction": 0.0}})
    assert "participation_fraction" in str(err.value)


def test_unknown_keys_rejected_at_all_levels():
    with pytest.raises(ConfigError):
        parse_config({"bogus": 1})
    with pytest.raises(ConfigError):
        parse_config({"scenario": {"bogus": 1}})
    with pytest.raises(ConfigError):
        parse_config({"training": {"bogus": 1}})
    with pytest.raises(ConfigError):
        parse_config({"scenario": {"archetypes": [{"bogus": 1}]}})


def test_unknown_strategy_rejected():
    with pytest.raises(ConfigError) as err:
        parse_config({"strategies": ["fedavg", "median"]})
    assert "strategies" in str(err.value)


def test_archetype_counts_must_sum_to_teachers():
    with pytest.raises(ConfigError):
        parse_config(
            {
                "scenario": {
                    "teachers": 3,
                    "archetypes": [{"name": "a", "count": 1}, {"name": "b", "count": 1}],
                }
            }
        )


def test_archetype_free_counts_fill_remainder():
    config = parse_config(
        {
            "scenario": {
                "teachers": 5,
                "archetypes": [{"name": "a", "count": 2}, {"name": "b"}],
            }
        }
    )
    assert config.scenario.archetype_counts == (2, 3)


def test_state_vector_length_must_match_state_dim():
    with pytest.raises(ConfigError) as err:
        parse_config({"scenario": {"state_dim": 3, "archetypes": [{"state_baseline": [0.1, 0.2]}]}})
    assert "state_baseline" in str(err.value)


def test_config_hash_sensitivity_and_output_dir_exclusion():
    base = parse_config({})
    assert parse_config({}).hash == base.hash
    assert parse_config({"output_dir": "elsewhere"}).hash == base.hash
    changed = [
        {"training": {"rounds": 6}},
        {"training": {"local_learning_rate": 0.06}},
        {"scenario": {"teachers": 5}},
        {"scenario": {"coupling": 2.0}},
        {"model": {"representation_dim": 5}},
        {"seeds": [1]},
        {"strategies": ["fedavg"]},
    ]
    hashes = {base.hash}
    for override in changed:
        h = parse_config(override).hash
        assert h not in hashes, f"hash collision for {override}"
        hashes.add(h)


def test_session_length_range_validation():
    with pytest.raises(ConfigError):
        parse_config({"scenario": {"session_length_range": [9, 4]}})
    with pytest.raises(ConfigError):
        parse_config({"scenario": {"session_length_range": [0, 4]}})


def test_load_config_reports_parse_error_with_line(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "scenario": {\n}')
    with pytest.raises(ConfigError) as err:
        load_config(path)
    assert "line" in str(err.value)


def test_load_config_roundtrip(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"training": {"rounds": 2}, "seeds": [3, 4]}))
    config = load_config(path)
    assert config.training.rounds == 2
    assert config.seeds == (3, 4)


def test_with_overrides_seed_offset_and_out():
    base = parse_config({"seeds": [0, 1]})
    shifted = with_overrides(base, output_dir="other", seed_offset=100)
    assert shifted.seeds == (100, 101)
    assert shifted.output_dir == "other"
    assert shifted.hash != base.hash  # seeds affect results
    moved = with_overrides(base, output_dir="other")
    assert moved.hash == base.hash  # output_dir does not
