"""Experiment configuration: JSON schema, defaults, validation, hashing.

The configuration file is a JSON document with four sections (``scenario``,
``model``, ``training``) plus run-level keys. Every field has a default, so
``{}`` is a valid minimal configuration; applied defaults are recorded and
echoed to the run log. Unknown keys are rejected. The config hash covers
every field that affects results; only ``output_dir`` is excluded.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .world import SensorCatalog, SensorSpec, UserArchetype

STRATEGY_NAMES = ("fedavg", "user_weighted")


class ConfigError(ValueError):
    """Configuration problem; the message names the offending field."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


DEFAULT_SENSORS = [
    {"name": "gaze", "dim": 2, "rate": 1.0},
    {"name": "heart_rate", "dim": 1, "rate": 0.5},
]
DEFAULT_ROBOT_SENSORS = [{"name": "pose", "dim": 3, "rate": 1.0}]
DEFAULT_ARCHETYPE = {
    "name": "baseline",
    "count": None,
    "continuous_means": [0.0],
    "continuous_stds": [1.0],
    "categorical_probs": [[0.5, 0.5]],
    "state_baseline": [0.2, 0.2],
    "state_drift": [0.0, 0.0],
    "state_noise": 0.05,
    "stream_amplitude": 1.0,
    "stream_frequency": 2.0,
    "stream_noise": 0.1,
    "demo_noise": 0.05,
    "demo_bias": 0.0,
    "outlier_probability": 0.1,
    "outlier_noise_multiplier": 2.0,
}

_SCENARIO_DEFAULTS = {
    "teachers": 4,
    "nodes": None,  # defaults to the number of teachers
    "state_dim": 2,
    "detector_noise": 0.05,
    "action_dim": 2,
    "sensors": DEFAULT_SENSORS,
    "robot_sensors": DEFAULT_ROBOT_SENSORS,
    "robot_types": ["arm"],
    "archetypes": [DEFAULT_ARCHETYPE],
    "sessions_per_round": 2,
    "initial_sessions": 3,
    "samples_per_session": 4,
    "session_length_range": [8, 16],
    "coupling": 1.0,
    "ground_truth_scale": 1.0,
}

_MODEL_DEFAULTS = {
    "policy_hidden": [8],
    "representation_dim": 4,
    "profile_hidden_dim": 4,
    "profile_code_dim": 3,
}

_TRAINING_DEFAULTS = {
    "local_learning_rate": 0.05,
    "global_learning_rate": 1.0,
    "local_epochs": 4,
    "rounds": 5,
    "participation_fraction": 1.0,
    "aggregation_stabilizer": 1e-6,
    "session_stabilizer": 1e-6,
    "lstm_epochs": 80,
    "lstm_learning_rate": 0.08,
    "profile_epochs": 40,
    "profile_learning_rate": 0.08,
    "profile_refresh_epochs": 3,
    "global_profile_learning_rate": 1.0,
    "eval_samples": 256,
}

_TOP_DEFAULTS = {
    "strategies": ["fedavg", "user_weighted"],
    "seeds": [0],
    "output_dir": "results",
}


def _reject_unknown(section: dict, allowed, path: str) -> None:
    for key in section:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}" if path else key, "unknown key")


def _resolve(section: dict, defaults: dict, path: str, applied: list[str]) -> dict:
    _reject_unknown(section, defaults, path)
    out = {}
    for key, default in defaults.items():
        if key in section:
            out[key] = section[key]
        else:
            out[key] = json.loads(json.dumps(default))  # deep copy
            applied.append(f"{path}.{key} = {json.dumps(default)}" if path else f"{key} = {json.dumps(default)}")
    return out


def _number(value, path: str, *, minimum=None, exclusive=False, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    if integer and int(value) != value:
        raise ConfigError(path, f"expected an integer, got {value!r}")
    if minimum is not None:
        if exclusive and value <= minimum:
            raise ConfigError(path, f"must be > {minimum}, got {value}")
        if not exclusive and value < minimum:
            raise ConfigError(path, f"must be >= {minimum}, got {value}")
    return int(value) if integer else float(value)


def _number_list(value, path: str, *, minimum=None, integer=False, min_len=0) -> list:
    if not isinstance(value, list):
        raise ConfigError(path, f"expected a list, got {value!r}")
    if len(value) < min_len:
        raise ConfigError(path, f"needs at least {min_len} entries")
    return [
        _number(v, f"{path}[{i}]", minimum=minimum, integer=integer) for i, v in enumerate(value)
    ]


@dataclass(frozen=True)
class ScenarioConfig:
    teachers: int
    nodes: int
    state_dim: int
    detector_noise: float
    action_dim: int
    catalog: SensorCatalog
    archetypes: tuple[UserArchetype, ...]
    archetype_counts: tuple[int, ...]
    sessions_per_round: int
    initial_sessions: int
    samples_per_session: int
    session_length_range: tuple[int, int]
    coupling: float
    ground_truth_scale: float

    @property
    def attribute_dim(self) -> int:
        return self.archetypes[0].attribute_dim


@dataclass(frozen=True)
class ModelConfig:
    policy_hidden: tuple[int, ...]
    representation_dim: int
    profile_hidden_dim: int
    profile_code_dim: int


@dataclass(frozen=True)
class TrainingConfig:
    local_learning_rate: float
    global_learning_rate: float
    local_epochs: int
    rounds: int
    participation_fraction: float
    aggregation_stabilizer: float
    session_stabilizer: float
    lstm_epochs: int
    lstm_learning_rate: float
    profile_epochs: int
    profile_learning_rate: float
    profile_refresh_epochs: int
    global_profile_learning_rate: float
    eval_samples: int


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: ScenarioConfig
    model: ModelConfig
    training: TrainingConfig
    strategies: tuple[str, ...]
    seeds: tuple[int, ...]
    output_dir: str
    resolved: dict = field(repr=False)
    defaults_applied: tuple[str, ...] = field(repr=False)

    @property
    def hash(self) -> str:
        return config_hash(self.resolved)

    @property
    def policy_dims(self) -> tuple[int, ...]:
        return (
            self.scenario.catalog.task_state_dim,
            *self.model.policy_hidden,
            self.scenario.action_dim,
        )


def config_hash(resolved: dict) -> str:
    """Hash over every result-affecting field (everything but output_dir)."""
    hashed = {k: v for k, v in resolved.items() if k != "output_dir"}
    canon = json.dumps(hashed, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def _parse_sensor(entry, path: str) -> SensorSpec:
    if not isinstance(entry, dict):
        raise ConfigError(path, "expected an object with name/dim/rate")
    _reject_unknown(entry, ("name", "dim", "rate"), path)
    if "name" not in entry or not isinstance(entry["name"], str):
        raise ConfigError(f"{path}.name", "sensor name is required")
    dim = _number(entry.get("dim", 1), f"{path}.dim", minimum=1, integer=True)
    rate = _number(entry.get("rate", 1.0), f"{path}.rate", minimum=0.0, exclusive=True)
    return SensorSpec(name=entry["name"], dim=dim, rate=rate)


def _parse_archetype(entry, path: str, state_dim: int) -> tuple[UserArchetype, int | None]:
    if not isinstance(entry, dict):
        raise ConfigError(path, "expected an archetype object")
    _reject_unknown(entry, DEFAULT_ARCHETYPE, path)
    merged = dict(DEFAULT_ARCHETYPE)
    merged.update(entry)
    count = merged["count"]
    if count is not None:
        count = _number(count, f"{path}.count", minimum=0, integer=True)
    probs = merged["categorical_probs"]
    if not isinstance(probs, list):
        raise ConfigError(f"{path}.categorical_probs", "expected a list of distributions")
    parsed_probs = tuple(
        np.asarray(_number_list(p, f"{path}.categorical_probs[{i}]", minimum=0.0, min_len=1))
        for i, p in enumerate(probs)
    )
    baseline = _number_list(merged["state_baseline"], f"{path}.state_baseline")
    drift = _number_list(merged["state_drift"], f"{path}.state_drift")
    if len(baseline) != state_dim or len(drift) != state_dim:
        raise ConfigError(
            f"{path}.state_baseline", f"state vectors must have scenario.state_dim = {state_dim} entries"
        )
    try:
        arch = UserArchetype(
            name=str(merged["name"]),
            continuous_means=np.asarray(_number_list(merged["continuous_means"], f"{path}.continuous_means")),
            continuous_stds=np.asarray(
                _number_list(merged["continuous_stds"], f"{path}.continuous_stds", minimum=0.0)
            ),
            categorical_probs=parsed_probs,
            state_baseline=np.asarray(baseline),
            state_drift=np.asarray(drift),
            state_noise=_number(merged["state_noise"], f"{path}.state_noise", minimum=0.0),
            stream_amplitude=_number(merged["stream_amplitude"], f"{path}.stream_amplitude", minimum=0.0),
            stream_frequency=_number(merged["stream_frequency"], f"{path}.stream_frequency", minimum=0.0),
            stream_noise=_number(merged["stream_noise"], f"{path}.stream_noise", minimum=0.0),
            demo_noise=_number(merged["demo_noise"], f"{path}.demo_noise", minimum=0.0),
            demo_bias=_number(merged["demo_bias"], f"{path}.demo_bias", minimum=0.0),
            outlier_probability=_number(merged["outlier_probability"], f"{path}.outlier_probability", minimum=0.0),
            outlier_noise_multiplier=_number(
                merged["outlier_noise_multiplier"], f"{path}.outlier_noise_multiplier", minimum=0.0
            ),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(path, str(exc)) from exc
    return arch, count


def parse_config(data: Any, source: str = "<config>") -> ExperimentConfig:
    """Validate a parsed JSON document and apply defaults."""
    if not isinstance(data, dict):
        raise ConfigError(source, "top-level config must be a JSON object")
    applied: list[str] = []
    _reject_unknown(data, ("scenario", "model", "training", *_TOP_DEFAULTS), "")
    scenario_raw = data.get("scenario", {})
    model_raw = data.get("model", {})
    training_raw = data.get("training", {})
    for name, section in (("scenario", scenario_raw), ("model", model_raw), ("training", training_raw)):
        if not isinstance(section, dict):
            raise ConfigError(name, "expected an object")

    scenario = _resolve(scenario_raw, _SCENARIO_DEFAULTS, "scenario", applied)
    model = _resolve(model_raw, _MODEL_DEFAULTS, "model", applied)
    training = _resolve(training_raw, _TRAINING_DEFAULTS, "training", applied)
    top = _resolve(
        {k: v for k, v in data.items() if k in _TOP_DEFAULTS}, _TOP_DEFAULTS, "", applied
    )

    teachers = _number(scenario["teachers"], "scenario.teachers", minimum=1, integer=True)
    nodes = scenario["nodes"]
    nodes = teachers if nodes is None else _number(nodes, "scenario.nodes", minimum=1, integer=True)
    state_dim = _number(scenario["state_dim"], "scenario.state_dim", minimum=1, integer=True)

    sensors = scenario["sensors"]
    robot_sensors = scenario["robot_sensors"]
    if not isinstance(sensors, list) or not sensors:
        raise ConfigError("scenario.sensors", "at least one human sensor is required")
    if not isinstance(robot_sensors, list) or not robot_sensors:
        raise ConfigError("scenario.robot_sensors", "at least one robot sensor is required")
    human = tuple(_parse_sensor(s, f"scenario.sensors[{i}]") for i, s in enumerate(sensors))
    robot = tuple(_parse_sensor(s, f"scenario.robot_sensors[{i}]") for i, s in enumerate(robot_sensors))
    robot_types = scenario["robot_types"]
    if not isinstance(robot_types, list) or not all(isinstance(t, str) for t in robot_types):
        raise ConfigError("scenario.robot_types", "expected a list of names")
    try:
        catalog = SensorCatalog(
            robot_sensors=robot, human_sensors=human, robot_types=tuple(robot_types)
        )
    except ValueError as exc:
        raise ConfigError("scenario.sensors", str(exc)) from exc

    arch_entries = scenario["archetypes"]
    if not isinstance(arch_entries, list) or not arch_entries:
        raise ConfigError("scenario.archetypes", "at least one archetype is required")
    archetypes = []
    counts: list[int | None] = []
    for i, entry in enumerate(arch_entries):
        arch, count = _parse_archetype(entry, f"scenario.archetypes[{i}]", state_dim)
        archetypes.append(arch)
        counts.append(count)
    fixed = sum(c for c in counts if c is not None)
    free = counts.count(None)
    if fixed > teachers:
        raise ConfigError("scenario.archetypes", f"archetype counts {fixed} exceed teachers {teachers}")
    if free:
        remainder = teachers - fixed
        share, extra = divmod(remainder, free)
        j = 0
        for i, c in enumerate(counts):
            if c is None:
                counts[i] = share + (1 if j < extra else 0)
                j += 1
    if sum(counts) != teachers:
        raise ConfigError("scenario.archetypes", "archetype counts must sum to scenario.teachers")
    first = archetypes[0]
    for i, arch in enumerate(archetypes[1:], start=1):
        if arch.attribute_dim != first.attribute_dim:
            raise ConfigError(
                f"scenario.archetypes[{i}]", "all archetypes must share the attribute structure"
            )

    length_range = _number_list(
        scenario["session_length_range"], "scenario.session_length_range", minimum=1, integer=True, min_len=2
    )
    if len(length_range) != 2 or length_range[0] > length_range[1]:
        raise ConfigError("scenario.session_length_range", f"invalid range {length_range}")

    scenario_cfg = ScenarioConfig(
        teachers=teachers,
        nodes=nodes,
        state_dim=state_dim,
        detector_noise=_number(scenario["detector_noise"], "scenario.detector_noise", minimum=0.0),
        action_dim=_number(scenario["action_dim"], "scenario.action_dim", minimum=1, integer=True),
        catalog=catalog,
        archetypes=tuple(archetypes),
        archetype_counts=tuple(counts),
        sessions_per_round=_number(
            scenario["sessions_per_round"], "scenario.sessions_per_round", minimum=1, integer=True
        ),
        initial_sessions=_number(
            scenario["initial_sessions"], "scenario.initial_sessions", minimum=1, integer=True
        ),
        samples_per_session=_number(
            scenario["samples_per_session"], "scenario.samples_per_session", minimum=1, integer=True
        ),
        session_length_range=(length_range[0], length_range[1]),
        coupling=_number(scenario["coupling"], "scenario.coupling", minimum=0.0),
        ground_truth_scale=_number(scenario["ground_truth_scale"], "scenario.ground_truth_scale", minimum=0.0),
    )

    model_cfg = ModelConfig(
        policy_hidden=tuple(
            _number_list(model["policy_hidden"], "model.policy_hidden", minimum=1, integer=True)
        ),
        representation_dim=_number(
            model["representation_dim"], "model.representation_dim", minimum=1, integer=True
        ),
        profile_hidden_dim=_number(
            model["profile_hidden_dim"], "model.profile_hidden_dim", minimum=1, integer=True
        ),
        profile_code_dim=_number(
            model["profile_code_dim"], "model.profile_code_dim", minimum=1, integer=True
        ),
    )

    fraction = _number(training["participation_fraction"], "training.participation_fraction")
    if not 0 < fraction <= 1:
        raise ConfigError(
            "training.participation_fraction", f"must be in (0, 1], got {fraction} (0 allows no participants)"
        )
    training_cfg = TrainingConfig(
        local_learning_rate=_number(training["local_learning_rate"], "training.local_learning_rate", minimum=0.0),
        global_learning_rate=_number(
            training["global_learning_rate"], "training.global_learning_rate", minimum=0.0
        ),
        local_epochs=_number(training["local_epochs"], "training.local_epochs", minimum=0, integer=True),
        rounds=_number(training["rounds"], "training.rounds", minimum=0, integer=True),
        participation_fraction=fraction,
        aggregation_stabilizer=_number(
            training["aggregation_stabilizer"], "training.aggregation_stabilizer", minimum=0.0, exclusive=True
        ),
        session_stabilizer=_number(
            training["session_stabilizer"], "training.session_stabilizer", minimum=0.0, exclusive=True
        ),
        lstm_epochs=_number(training["lstm_epochs"], "training.lstm_epochs", minimum=1, integer=True),
        lstm_learning_rate=_number(training["lstm_learning_rate"], "training.lstm_learning_rate", minimum=0.0),
        profile_epochs=_number(training["profile_epochs"], "training.profile_epochs", minimum=0, integer=True),
        profile_learning_rate=_number(
            training["profile_learning_rate"], "training.profile_learning_rate", minimum=0.0
        ),
        profile_refresh_epochs=_number(
            training["profile_refresh_epochs"], "training.profile_refresh_epochs", minimum=0, integer=True
        ),
        global_profile_learning_rate=_number(
            training["global_profile_learning_rate"], "training.global_profile_learning_rate", minimum=0.0
        ),
        eval_samples=_number(training["eval_samples"], "training.eval_samples", minimum=1, integer=True),
    )

    strategies = top["strategies"]
    if not isinstance(strategies, list) or not strategies:
        raise ConfigError("strategies", "at least one strategy is required")
    for s in strategies:
        if s not in STRATEGY_NAMES:
            raise ConfigError("strategies", f"unknown strategy {s!r}; known: {STRATEGY_NAMES}")
    if len(set(strategies)) != len(strategies):
        raise ConfigError("strategies", "duplicate strategy names")
    seeds = _number_list(top["seeds"], "seeds", minimum=0, integer=True, min_len=1)
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seeds", "duplicate seeds")
    output_dir = top["output_dir"]
    if not isinstance(output_dir, str) or not output_dir:
        raise ConfigError("output_dir", "expected a non-empty path string")

    resolved = {
        "scenario": {**scenario, "nodes": nodes, "archetypes": _canonical_archetypes(arch_entries, counts)},
        "model": model,
        "training": training,
        "strategies": list(strategies),
        "seeds": list(seeds),
        "output_dir": output_dir,
    }

    return ExperimentConfig(
        scenario=scenario_cfg,
        model=model_cfg,
        training=training_cfg,
        strategies=tuple(strategies),
        seeds=tuple(int(s) for s in seeds),
        output_dir=output_dir,
        resolved=resolved,
        defaults_applied=tuple(applied),
    )


def _canonical_archetypes(entries: list, counts: list[int]) -> list[dict]:
    out = []
    for entry, count in zip(entries, counts):
        merged = dict(DEFAULT_ARCHETYPE)
        if isinstance(entry, dict):
            merged.update(entry)
        merged["count"] = count
        out.append(merged)
    return out


def load_config(path: str | Path) -> ExperimentConfig:
    """Load and validate a configuration file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read config: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(str(path), f"parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return parse_config(data, source=str(path))


def with_overrides(
    config: ExperimentConfig, *, output_dir: str | None = None, seed_offset: int = 0
) -> ExperimentConfig:
    """Re-resolve a config with CLI overrides applied (hash follows the result)."""
    resolved = json.loads(json.dumps(config.resolved))
    if output_dir is not None:
        resolved["output_dir"] = str(output_dir)
    if seed_offset:
        resolved["seeds"] = [s + seed_offset for s in resolved["seeds"]]
    return parse_config(resolved)
