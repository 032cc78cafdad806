"""Cross-module behavior: profiles and encodings over generated populations."""

from __future__ import annotations

import numpy as np

from fedlfd.lstm import encode_sequence, train_lstm_autoencoder
from fedlfd.profile import (
    ProfileDims,
    SessionFeatures,
    build_profile_model,
    encode_sessions,
    extract_profile,
    profile_distance,
    train_profile,
)
from fedlfd.rng import Rng
from fedlfd.world import (
    SensorCatalog,
    SensorSpec,
    SessionParams,
    UserArchetype,
    build_ground_truth,
    generate_population,
    generate_session,
)

CATALOG = SensorCatalog(
    robot_sensors=(SensorSpec("pose", 3),),
    human_sensors=(SensorSpec("gaze", 2, 1.0),),
)
PARAMS = SessionParams(length_range=(8, 12), samples_per_session=3, coupling=0.5, detector_noise=0.05)


def _archetype(name, attr_mean, state_level, amplitude):
    return UserArchetype(
        name=name,
        continuous_means=np.array([attr_mean, -attr_mean]),
        continuous_stds=np.array([0.2, 0.2]),
        categorical_probs=(np.array([0.9, 0.1]) if attr_mean > 0 else np.array([0.1, 0.9]),),
        state_baseline=np.array([state_level, state_level]),
        state_drift=np.array([0.0, 0.0]),
        state_noise=0.05,
        stream_amplitude=amplitude,
        stream_frequency=2.0,
        stream_noise=0.1,
        demo_noise=0.1,
        demo_bias=0.0,
        outlier_probability=0.0,
        outlier_noise_multiplier=1.0,
    )


def _teacher_features(teacher, gt, rng, n_sessions=8, rep_dim=3):
    records = [
        generate_session(teacher, gt, CATALOG, PARAMS, i, rng.child(f"s{i}"))
        for i in range(n_sessions)
    ]
    stacked = np.concatenate([r.streams["gaze"] for r in records])
    mean, std = stacked.mean(axis=0), np.maximum(stacked.std(axis=0), 1e-8)
    seqs = [(r.streams["gaze"] - mean) / std for r in records]
    auto, _ = train_lstm_autoencoder(seqs, rep_dim, 25, 0.08, rng.child("lstm"))
    feats = []
    for r, seq in zip(records, seqs):
        h, _ = encode_sequence(auto.encoder, seq)
        feats.append(SessionFeatures(teacher.attributes, r.state, h))
    return feats


def test_archetypes_separate_in_encoding_space():
    # Sessions from teachers of distinct archetypes must land further apart
    # in encoding space than sessions of the same archetype, once a shared
    # profile model has been trained on the pooled feature set.
    rng = Rng(50)
    calm = _archetype("calm", 0.8, 0.2, 1.0)
    tense = _archetype("tense", -0.8, 0.9, 1.8)
    teachers = generate_population(CATALOG, [calm, tense], [2, 2], 4, 4, rng.child("pop"))
    gt = build_ground_truth([calm, tense], (3, 4, 2), 1.0, rng.child("gt"))
    per_teacher = [
        _teacher_features(t, gt, rng.child(f"teacher{t.teacher_id}")) for t in teachers
    ]
    pooled = [f for feats in per_teacher for f in feats]
    dims = ProfileDims(teachers[0].attributes.size, 2, 3, 4, 3)
    model = build_profile_model(dims, rng.child("profile-init"))
    model, _ = train_profile(model, pooled, 60, 0.08)

    encodings = [encode_sessions(model, feats) for feats in per_teacher]
    centroids = [e.mean(axis=0) for e in encodings]
    labels = [t.archetype_index for t in teachers]
    intra, inter = [], []
    for i in range(len(teachers)):
        for j in range(i + 1, len(teachers)):
            dist = float(np.linalg.norm(centroids[i] - centroids[j]))
            (intra if labels[i] == labels[j] else inter).append(dist)
    assert np.mean(inter) > np.mean(intra)


def test_profiles_of_shared_init_separate_by_archetype():
    # Per-user profile models trained from one shared initialization: users
    # of the same archetype stay closer in parameter space than users of
    # different archetypes, which is what the aggregation weighting relies on.
    rng = Rng(51)
    calm = _archetype("calm", 0.8, 0.2, 1.0)
    tense = _archetype("tense", -0.8, 0.9, 1.8)
    teachers = generate_population(CATALOG, [calm, tense], [2, 2], 4, 4, rng.child("pop"))
    gt = build_ground_truth([calm, tense], (3, 4, 2), 1.0, rng.child("gt"))
    dims = ProfileDims(teachers[0].attributes.size, 2, 3, 4, 3)
    profiles = []
    for teacher in teachers:
        feats = _teacher_features(teacher, gt, rng.child(f"teacher{teacher.teacher_id}"))
        model = build_profile_model(dims, rng.child("profile-init"))
        model, _ = train_profile(model, feats, 60, 0.08)
        profiles.append(extract_profile(model))
    labels = [t.archetype_index for t in teachers]
    intra, inter = [], []
    for i in range(len(teachers)):
        for j in range(i + 1, len(teachers)):
            dist = profile_distance(profiles[i], profiles[j])
            (intra if labels[i] == labels[j] else inter).append(dist)
    assert np.mean(inter) > np.mean(intra)
