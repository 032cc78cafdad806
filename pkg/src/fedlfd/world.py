"""Synthetic scenario generator: teachers, sessions, streams, demonstrations.

All distributions here are declared fixtures, not claims about human
behavior. The generator encodes one causal premise explicitly: a hidden
per-session disturbance jointly shifts the state detector outputs, the
sensor stream statistics and the demonstration noise, so behavioral
deviation correlates with degraded feedback by construction. Outlier flags
and the ground-truth policy exist for evaluation only and must never reach
the learners.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .federated import FeedbackSample, PolicyModel, build_policy, policy_predict
from .nn import ShapeError, as_array
from .rng import Rng


@dataclass(frozen=True)
class SensorSpec:
    """One sensor type: name, per-sample feature dim, sampling rate multiplier."""

    name: str
    dim: int
    rate: float = 1.0

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"sensor {self.name!r}: dim must be >= 1")
        if self.rate <= 0:
            raise ValueError(f"sensor {self.name!r}: rate must be > 0")


@dataclass(frozen=True)
class SensorCatalog:
    """Robot- and human-side sensor sets plus the robot type set."""

    robot_sensors: tuple[SensorSpec, ...]
    human_sensors: tuple[SensorSpec, ...]
    robot_types: tuple[str, ...] = ("arm",)

    def __post_init__(self):
        names = [s.name for s in self.robot_sensors] + [s.name for s in self.human_sensors]
        if len(set(names)) != len(names):
            raise ValueError("sensor names must be unique")
        if not self.human_sensors:
            raise ValueError("at least one human sensor is required")
        if not self.robot_sensors:
            raise ValueError("at least one robot sensor is required")

    @property
    def task_state_dim(self) -> int:
        """Policy input width: the concatenated robot sensor features."""
        return sum(s.dim for s in self.robot_sensors)


@dataclass(frozen=True, eq=False)
class UserArchetype:
    """Distribution parameters for one synthetic teacher population."""

    name: str
    continuous_means: np.ndarray
    continuous_stds: np.ndarray
    categorical_probs: tuple[np.ndarray, ...]
    state_baseline: np.ndarray
    state_drift: np.ndarray
    state_noise: float
    stream_amplitude: float
    stream_frequency: float
    stream_noise: float
    demo_noise: float
    demo_bias: float
    outlier_probability: float
    outlier_noise_multiplier: float

    def __post_init__(self):
        object.__setattr__(self, "continuous_means", as_array(self.continuous_means, ndim=1))
        object.__setattr__(self, "continuous_stds", as_array(self.continuous_stds, ndim=1))
        object.__setattr__(
            self, "categorical_probs", tuple(as_array(p, ndim=1) for p in self.categorical_probs)
        )
        object.__setattr__(self, "state_baseline", as_array(self.state_baseline, ndim=1))
        object.__setattr__(self, "state_drift", as_array(self.state_drift, ndim=1))
        if self.continuous_means.shape != self.continuous_stds.shape:
            raise ValueError(f"archetype {self.name!r}: continuous means/stds length mismatch")
        if np.any(self.continuous_stds < 0):
            raise ValueError(f"archetype {self.name!r}: continuous stds must be >= 0")
        for probs in self.categorical_probs:
            if np.any(probs < 0) or np.any(probs > 1) or abs(float(probs.sum()) - 1.0) > 1e-9:
                raise ValueError(f"archetype {self.name!r}: invalid categorical distribution")
        if self.state_baseline.shape != self.state_drift.shape:
            raise ValueError(f"archetype {self.name!r}: state baseline/drift length mismatch")
        for field_name in (
            "state_noise",
            "stream_amplitude",
            "stream_noise",
            "demo_noise",
            "demo_bias",
        ):
            if getattr(self, field_name) < 0:
                raise ValueError(f"archetype {self.name!r}: {field_name} must be >= 0")
        if not 0 <= self.outlier_probability <= 1:
            raise ValueError(f"archetype {self.name!r}: outlier_probability must be in [0, 1]")
        if self.outlier_noise_multiplier < 0:
            raise ValueError(f"archetype {self.name!r}: outlier_noise_multiplier must be >= 0")

    @property
    def attribute_dim(self) -> int:
        return int(sum(len(p) for p in self.categorical_probs) + self.continuous_means.size)

    @property
    def state_dim(self) -> int:
        return self.state_baseline.size


@dataclass(frozen=True, eq=False)
class Teacher:
    """One simulated human teacher paired with a network node."""

    teacher_id: int
    node_id: int
    archetype_index: int
    archetype: UserArchetype
    attributes: np.ndarray  # encoded static attribute vector
    hidden_baseline: np.ndarray  # hidden fatigue/stress baseline, world-only


@dataclass(frozen=True, eq=False)
class SessionRecord:
    """One feedback session as generated: streams, state vector, samples.

    ``is_outlier`` is ground truth for evaluation; learners never see it.
    """

    index: int
    length: int
    streams: dict[str, np.ndarray]
    state: np.ndarray
    samples: tuple[FeedbackSample, ...]
    is_outlier: bool


@dataclass(frozen=True)
class SessionParams:
    """Scenario-level knobs for session generation."""

    length_range: tuple[int, int]
    samples_per_session: int
    coupling: float
    detector_noise: float

    def __post_init__(self):
        lo, hi = self.length_range
        if lo < 1 or hi < lo:
            raise ValueError(f"degenerate session length range {self.length_range}")
        if self.samples_per_session < 1:
            raise ValueError("samples_per_session must be >= 1")
        if self.coupling < 0 or self.detector_noise < 0:
            raise ValueError("coupling and detector_noise must be >= 0")


@dataclass(frozen=True, eq=False)
class GroundTruthPolicy:
    """Frozen target mapping plus per-archetype systematic bias vectors."""

    policy: PolicyModel
    archetype_bias: tuple[np.ndarray, ...]

    def predict(self, x: np.ndarray) -> np.ndarray:
        return policy_predict(self.policy, x)

    @property
    def action_dim(self) -> int:
        return self.policy.dims[-1]

    @property
    def input_dim(self) -> int:
        return self.policy.dims[0]


def _mixture_moments(
    archetypes: Sequence[UserArchetype], counts: Sequence[int]
) -> tuple[np.ndarray, np.ndarray]:
    # Closed-form standardization constants for continuous attributes, taken
    # from the configured mixture rather than pooled data.
    total = sum(counts)
    w = np.asarray(counts, dtype=float) / total
    means = np.stack([a.continuous_means for a in archetypes])
    stds = np.stack([a.continuous_stds for a in archetypes])
    mix_mean = w @ means
    mix_second = w @ (stds**2 + means**2)
    mix_std = np.sqrt(np.maximum(mix_second - mix_mean**2, 0.0))
    return mix_mean, np.maximum(mix_std, 1e-6)


def generate_population(
    catalog: SensorCatalog,
    archetypes: Sequence[UserArchetype],
    archetype_counts: Sequence[int],
    num_nodes: int,
    num_teachers: int,
    rng: Rng,
) -> list[Teacher]:
    """Sample the teacher population and pair teachers with nodes.

    Archetypes are assigned in blocks following ``archetype_counts``;
    categorical attributes are one-hot encoded and continuous attributes are
    standardized with the closed-form mixture moments of the configuration.
    """
    if not archetypes:
        raise ValueError("at least one archetype is required")
    if num_nodes < 1 or num_teachers < 1:
        raise ValueError("counts must be >= 1")
    if len(archetype_counts) != len(archetypes):
        raise ValueError("one count required per archetype")
    if sum(archetype_counts) != num_teachers:
        raise ValueError("archetype counts must sum to the number of teachers")
    first = archetypes[0]
    for arch in archetypes[1:]:
        if arch.attribute_dim != first.attribute_dim or arch.state_dim != first.state_dim:
            raise ShapeError("archetypes must share attribute and state structure")
    assignment: list[int] = []
    for i, count in enumerate(archetype_counts):
        assignment.extend([i] * count)
    mix_mean, mix_std = _mixture_moments(archetypes, archetype_counts)
    teachers = []
    for m in range(num_teachers):
        arch = archetypes[assignment[m]]
        stream = rng.child(f"teacher/{m}")
        one_hots = []
        for probs in arch.categorical_probs:
            idx = int(stream.choice(len(probs), p=probs))
            hot = np.zeros(len(probs))
            hot[idx] = 1.0
            one_hots.append(hot)
        raw = arch.continuous_means + arch.continuous_stds * stream.standard_normal(
            arch.continuous_means.size
        )
        cont = (raw - mix_mean) / mix_std
        attributes = np.concatenate(one_hots + [cont]) if one_hots else cont
        hidden = arch.state_baseline + arch.state_noise * stream.standard_normal(arch.state_dim)
        teachers.append(
            Teacher(
                teacher_id=m,
                node_id=m % num_nodes,
                archetype_index=assignment[m],
                archetype=arch,
                attributes=attributes,
                hidden_baseline=hidden,
            )
        )
    return teachers


def build_ground_truth(
    archetypes: Sequence[UserArchetype],
    policy_dims: Sequence[int],
    scale: float,
    rng: Rng,
) -> GroundTruthPolicy:
    """Freeze a random target policy and one bias vector per archetype."""
    policy = build_policy(policy_dims, rng.child("policy"))
    policy.params.values *= scale
    action_dim = policy.dims[-1]
    biases = []
    for i, arch in enumerate(archetypes):
        if arch.demo_bias == 0:
            biases.append(np.zeros(action_dim))
        else:
            direction = rng.child(f"bias/{i}").standard_normal(action_dim)
            norm = float(np.linalg.norm(direction))
            if norm == 0:
                direction = np.ones(action_dim)
                norm = math.sqrt(action_dim)
            biases.append(arch.demo_bias * direction / norm)
    return GroundTruthPolicy(policy=policy, archetype_bias=tuple(biases))


def generate_session(
    teacher: Teacher,
    ground_truth: GroundTruthPolicy,
    catalog: SensorCatalog,
    params: SessionParams,
    index: int,
    rng: Rng,
) -> SessionRecord:
    """Synthesize one feedback session for a teacher.

    Outlier sessions add the coupling shift to the hidden state, shift the
    stream baselines, multiply the stream noise, and multiply the
    demonstration noise by the archetype's outlier multiplier.
    """
    arch = teacher.archetype
    lo, hi = params.length_range
    length = int(rng.integers(lo, hi + 1))
    is_outlier = bool(rng.random() < arch.outlier_probability)
    shift = params.coupling if is_outlier else 0.0

    hidden = (
        teacher.hidden_baseline
        + arch.state_drift * index
        + arch.state_noise * rng.standard_normal(arch.state_dim)
        + shift
    )
    state = hidden + params.detector_noise * rng.standard_normal(arch.state_dim)

    streams: dict[str, np.ndarray] = {}
    for sensor in catalog.human_sensors:
        steps = max(1, int(round(length * sensor.rate)))
        t = np.arange(steps) / steps
        phase = float(rng.uniform(0.0, 2.0 * math.pi))
        cols = []
        for j in range(sensor.dim):
            base = arch.stream_amplitude * np.sin(
                2.0 * math.pi * arch.stream_frequency * t + phase + math.pi * j / sensor.dim
            )
            noise = arch.stream_noise * (1.0 + shift) * rng.standard_normal(steps)
            cols.append(base + shift + noise)
        streams[sensor.name] = np.column_stack(cols)

    bias = ground_truth.archetype_bias[teacher.archetype_index]
    noise_scale = arch.demo_noise * (arch.outlier_noise_multiplier if is_outlier else 1.0)
    samples = []
    for _ in range(params.samples_per_session):
        x = rng.standard_normal(ground_truth.input_dim)
        target = (
            ground_truth.predict(x)
            + bias
            + noise_scale * rng.standard_normal(ground_truth.action_dim)
        )
        samples.append(FeedbackSample(input=x, target=target, session_index=index))

    return SessionRecord(
        index=index,
        length=length,
        streams=streams,
        state=state,
        samples=tuple(samples),
        is_outlier=is_outlier,
    )


def evaluate_policy(
    model: PolicyModel, ground_truth: GroundTruthPolicy, n_eval: int, rng: Rng
) -> float:
    """Mean squared error against noiseless ground-truth actions on fresh states."""
    if n_eval < 1:
        raise ValueError("n_eval must be >= 1")
    x = rng.standard_normal((n_eval, ground_truth.input_dim))
    predicted = policy_predict(model, x)
    ideal = ground_truth.predict(x)
    diff = predicted - ideal
    return float((diff * diff).mean())
