"""Aggregator-side operations for the federated loop.

Everything in this module consumes only parameter deltas, user profiles and
sample counts. Raw session data never crosses this boundary; the privacy
test suite asserts that structurally.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import LayoutError, ParamVector
from .profile import FingerprintError, UserProfile, profile_distance


@dataclass(frozen=True, eq=False)
class LocalUpdate:
    """Parameter delta from one (node, teacher) pair."""

    delta: ParamVector
    node_id: int
    teacher_id: int
    num_samples: int

    @property
    def key(self) -> tuple[int, int]:
        return (self.node_id, self.teacher_id)


@dataclass(frozen=True)
class FedAvg:
    """Unweighted mean of the received deltas."""

    name: str = field(default="fedavg", init=False)


@dataclass(frozen=True)
class UserWeighted:
    """Inverse profile-distance weighting against the global profile."""

    stabilizer: float
    global_profile: UserProfile
    name: str = field(default="user_weighted", init=False)

    def __post_init__(self):
        if self.stabilizer <= 0:
            raise ValueError("stabilizer must be > 0")


AggregationStrategy = FedAvg | UserWeighted


def _check_layouts(updates: list[LocalUpdate]) -> None:
    if not updates:
        raise ValueError("no updates to aggregate")
    layout = updates[0].delta.layout
    for upd in updates[1:]:
        if upd.delta.layout != layout:
            raise LayoutError("updates carry different parameter layouts")


def aggregate_fedavg(updates: list[LocalUpdate]) -> ParamVector:
    """Plain average of the deltas, summed in (node, teacher) order."""
    _check_layouts(updates)
    ordered = sorted(updates, key=lambda u: u.key)
    total = np.zeros(ordered[0].delta.layout.size)
    for upd in ordered:
        total += upd.delta.values
    return ParamVector(ordered[0].delta.layout, total / len(ordered))


def aggregate_user_weighted(
    updates: list[LocalUpdate],
    profiles: list[UserProfile],
    global_profile: UserProfile,
    stabilizer: float,
) -> tuple[ParamVector, dict[tuple[int, int], float]]:
    """Combine deltas weighted by inverse profile distance from the global profile.

    Each update's weight is 1 / (stabilizer + distance); the normalized
    per-user shares are returned alongside the combined delta for audit.
    """
    _check_layouts(updates)
    if len(profiles) != len(updates):
        raise ValueError("one profile required per update")
    if stabilizer < 0:
        raise ValueError("stabilizer must be >= 0")
    for prof in profiles:
        if prof.fingerprint != global_profile.fingerprint:
            raise FingerprintError("profile fingerprint does not match the global profile")
    order = sorted(range(len(updates)), key=lambda i: updates[i].key)
    eps = np.array(
        [1.0 / (stabilizer + profile_distance(global_profile, profiles[i])) for i in order]
    )
    total_eps = float(eps.sum())
    shares = eps / total_eps
    combined = np.zeros(updates[0].delta.layout.size)
    report: dict[tuple[int, int], float] = {}
    for rank, i in enumerate(order):
        combined += shares[rank] * updates[i].delta.values
        report[updates[i].key] = float(shares[rank])
    return ParamVector(updates[0].delta.layout, combined), report


def apply_global_update(
    params: ParamVector, combined: ParamVector, global_lr: float
) -> ParamVector:
    """Move the global parameters along the aggregated delta."""
    if params.layout != combined.layout:
        raise LayoutError("global parameters and aggregate have different layouts")
    return ParamVector(params.layout, params.values + global_lr * combined.values)


def update_global_profile(
    global_profile: UserProfile, profiles: list[UserProfile], learning_rate: float = 1.0
) -> UserProfile:
    """Federated-averaging step on profile parameters."""
    if not profiles:
        raise ValueError("no profiles received")
    for prof in profiles:
        if prof.fingerprint != global_profile.fingerprint:
            raise FingerprintError("profile fingerprint does not match the global profile")
    mean_delta = np.zeros_like(global_profile.values)
    for prof in profiles:
        mean_delta += prof.values - global_profile.values
    mean_delta /= len(profiles)
    return UserProfile(
        values=global_profile.values + learning_rate * mean_delta,
        fingerprint=global_profile.fingerprint,
    )
