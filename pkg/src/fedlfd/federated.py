"""Node-side training and the synchronous federated round.

A round fans out: every participating node downloads the global policy,
trains it on its own feedback samples under session weighting, and emits a
parameter delta plus its user profile. The aggregator (see ``aggregation``)
fans the deltas back in.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .aggregation import (
    FedAvg,
    LocalUpdate,
    UserWeighted,
    aggregate_fedavg,
    aggregate_user_weighted,
    apply_global_update,
)
from .nn import (
    DivergenceError,
    ParamVector,
    ShapeError,
    as_array,
    build_mlp,
    mlp_backward,
    mlp_forward,
    mlp_forward_cached,
    mlp_from_params,
    mlp_layout,
    mlp_params,
    sgd_step,
)
from .profile import UserProfile
from .rng import Rng


@dataclass(frozen=True, eq=False)
class FeedbackSample:
    """One demonstrated (task state, action) pair from a feedback session."""

    input: np.ndarray
    target: np.ndarray
    session_index: int

    def __post_init__(self):
        object.__setattr__(self, "input", as_array(self.input, ndim=1))
        object.__setattr__(self, "target", as_array(self.target, ndim=1))


@dataclass
class PolicyModel:
    """Shared robot policy: an MLP with tanh hidden layers, identity output."""

    dims: tuple[int, ...]
    params: ParamVector

    def copy(self) -> "PolicyModel":
        return PolicyModel(self.dims, self.params.copy())


def build_policy(dims: Sequence[int], rng: Rng) -> PolicyModel:
    mlp = build_mlp(dims, rng)
    return PolicyModel(tuple(int(d) for d in dims), mlp_params(mlp))


def policy_layout(dims: Sequence[int]):
    return mlp_layout(dims)


def policy_predict(model: PolicyModel, x: np.ndarray) -> np.ndarray:
    return mlp_forward(mlp_from_params(model.dims, model.params), x)


@dataclass
class NodeState:
    """Learner-visible state of one (node, teacher) pair.

    ``session_samples`` groups the feedback samples by session, aligned with
    ``encodings``. Raw sensor records never appear here; the node-local
    feature pipeline runs upstream of this type.
    """

    node_id: int
    teacher_id: int
    session_samples: list[list[FeedbackSample]]
    encodings: list[np.ndarray]
    profile: UserProfile | None
    local_lr: float
    local_model: ParamVector | None = None

    @property
    def key(self) -> tuple[int, int]:
        return (self.node_id, self.teacher_id)

    @property
    def num_samples(self) -> int:
        return sum(len(group) for group in self.session_samples)


def session_weights(encodings: Sequence[np.ndarray], stabilizer: float) -> np.ndarray:
    """Per-session weights: inverse distance of each encoding from their mean.

    Sessions whose encoding sits far from the node's mean encoding (outlier
    behavior) receive strictly smaller weight; identical encodings yield
    exactly uniform weights.
    """
    if not len(encodings):
        raise ValueError("no session encodings")
    if stabilizer <= 0:
        raise ValueError("stabilizer must be > 0")
    mat = np.stack([as_array(e, ndim=1) for e in encodings])
    if len({e.shape for e in map(np.asarray, encodings)}) != 1:
        raise ShapeError("encodings have unequal lengths")
    center = mat.mean(axis=0)
    dist = np.linalg.norm(mat - center, axis=1)
    return 1.0 / (stabilizer + dist)


def weighted_local_loss(
    model: PolicyModel,
    session_samples: Sequence[Sequence[FeedbackSample]],
    weights: Sequence[float],
) -> tuple[float, ParamVector]:
    """Session-weighted mean loss and its gradient.

    The loss is sum_v w_v * L_v / sum_v w_v where L_v is the mean per-sample
    MSE of session v. Implemented as one batched pass with per-row scales.
    """
    if len(session_samples) != len(weights):
        raise ValueError("one weight required per session")
    if not session_samples:
        raise ValueError("no sessions")
    weights = np.asarray(weights, dtype=float)
    if np.any(weights < 0):
        raise ValueError("session weights must be >= 0")
    total_w = float(weights.sum())
    if total_w <= 0:
        raise ValueError("session weights sum to zero")
    rows_x, rows_y, row_scale = [], [], []
    for group, w in zip(session_samples, weights):
        if not group:
            raise ValueError("a session has no samples")
        scale = w / (total_w * len(group))
        for sample in group:
            rows_x.append(sample.input)
            rows_y.append(sample.target)
            row_scale.append(scale)
    x = np.stack(rows_x)
    y = np.stack(rows_y)
    scale = np.asarray(row_scale)
    mlp = mlp_from_params(model.dims, model.params)
    preds, inputs = mlp_forward_cached(mlp, x)
    diff = preds - y
    per_sample = (diff * diff).mean(axis=1)
    loss = float(scale @ per_sample)
    grad_out = (2.0 / y.shape[1]) * scale[:, None] * diff
    _, grads = mlp_backward(mlp, inputs, grad_out)
    return loss, grads


def local_train(
    global_model: PolicyModel,
    node: NodeState,
    epochs: int,
    session_stabilizer: float,
) -> tuple[ParamVector, list[float]]:
    """Full-batch gradient descent from the downloaded global parameters.

    Returns the local parameters and the loss history (epochs + 1 entries).
    """
    if node.num_samples < 1:
        raise ValueError(f"node {node.key} holds no samples")
    if len(node.encodings) != len(node.session_samples):
        raise ShapeError("one encoding required per session")
    weights = session_weights(node.encodings, session_stabilizer)
    params = global_model.params.copy()
    history = []
    for epoch in range(epochs):
        loss, grads = weighted_local_loss(
            PolicyModel(global_model.dims, params), node.session_samples, weights
        )
        if not np.isfinite(loss):
            raise DivergenceError(f"local training diverged at node {node.key}", epoch)
        history.append(loss)
        params = sgd_step(params, grads, node.local_lr)
    final, _ = weighted_local_loss(
        PolicyModel(global_model.dims, params), node.session_samples, weights
    )
    if not np.isfinite(final):
        raise DivergenceError(f"local training diverged at node {node.key}", epochs)
    history.append(final)
    return params, history


def compute_update(
    local_params: ParamVector, global_params: ParamVector, node: NodeState
) -> LocalUpdate:
    """Elementwise difference between the local and the downloaded model."""
    if local_params.layout != global_params.layout:
        raise ShapeError("local and global parameter layouts differ")
    return LocalUpdate(
        delta=ParamVector(local_params.layout, local_params.values - global_params.values),
        node_id=node.node_id,
        teacher_id=node.teacher_id,
        num_samples=node.num_samples,
    )


def fraction_selector(fraction: float) -> Callable[[int, Rng], list[int]]:
    """Participation selector sampling a fixed fraction of nodes per round."""
    if not 0 < fraction <= 1:
        raise ValueError("participation fraction must be in (0, 1]")

    def select(count: int, rng: Rng) -> list[int]:
        k = max(1, int(round(fraction * count)))
        chosen = rng.choice(count, size=min(k, count), replace=False)
        return sorted(int(i) for i in np.atleast_1d(chosen))

    return select


def fixed_selector(indices: Sequence[int]) -> Callable[[int, Rng], list[int]]:
    chosen = [int(i) for i in indices]

    def select(count: int, rng: Rng) -> list[int]:
        return [i for i in chosen if 0 <= i < count]

    return select


@dataclass
class RoundReport:
    """Per-round audit record consumed by the harness."""

    participants: list[tuple[int, int]] = field(default_factory=list)
    local_losses: dict[tuple[int, int], float] = field(default_factory=dict)
    shares: dict[tuple[int, int], float] | None = None
    update_norm: float = 0.0
    skipped: bool = False

    @property
    def mean_local_loss(self) -> float:
        if not self.local_losses:
            return float("nan")
        return float(np.mean(list(self.local_losses.values())))


def run_round(
    model: PolicyModel,
    nodes: Sequence[NodeState],
    strategy: FedAvg | UserWeighted,
    selector: Callable[[int, Rng], list[int]],
    global_lr: float,
    rng: Rng,
    *,
    local_epochs: int,
    session_stabilizer: float,
) -> tuple[PolicyModel, RoundReport]:
    """One synchronous federated round.

    Participants train from the downloaded global model in deterministic
    (node, teacher) order; the aggregator combines their deltas per the
    strategy and the global parameters move by the global learning rate.
    An empty participant set skips the round and reports it.
    """
    indices = selector(len(nodes), rng)
    if not indices:
        return model, RoundReport(skipped=True)
    participants = sorted((nodes[i] for i in indices), key=lambda n: n.key)
    updates: list[LocalUpdate] = []
    profiles: list[UserProfile] = []
    report = RoundReport()
    for node in participants:
        params, history = local_train(model, node, local_epochs, session_stabilizer)
        node.local_model = params
        updates.append(compute_update(params, model.params, node))
        profiles.append(node.profile)
        report.participants.append(node.key)
        report.local_losses[node.key] = history[-1]
    if isinstance(strategy, UserWeighted):
        combined, shares = aggregate_user_weighted(
            updates, profiles, strategy.global_profile, strategy.stabilizer
        )
        report.shares = shares
    else:
        combined = aggregate_fedavg(updates)
    report.update_norm = float(np.linalg.norm(combined.values))
    new_params = apply_global_update(model.params, combined, global_lr)
    return PolicyModel(model.dims, new_params), report
