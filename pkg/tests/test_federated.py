"""Tests for local training, aggregation and the federated round."""

from __future__ import annotations

import numpy as np
import pytest
from conftest import assert_grad_close

from fedlfd.aggregation import (
    FedAvg,
    LocalUpdate,
    UserWeighted,
    aggregate_fedavg,
    aggregate_user_weighted,
    apply_global_update,
    update_global_profile,
)
from fedlfd.federated import (
    FeedbackSample,
    NodeState,
    PolicyModel,
    build_policy,
    compute_update,
    fixed_selector,
    fraction_selector,
    local_train,
    policy_predict,
    run_round,
    session_weights,
    weighted_local_loss,
)
from fedlfd.nn import Layout, ParamVector, finite_difference_grad
from fedlfd.profile import FingerprintError, UserProfile
from fedlfd.rng import Rng

KAPPA = 1e-6


def _pv(values):
    values = np.asarray(values, dtype=float)
    return ParamVector(Layout([("p", values.shape)]), values.copy())


def _update(values, node=0, teacher=0, n=1):
    return LocalUpdate(delta=_pv(values), node_id=node, teacher_id=teacher, num_samples=n)


def _profile(values, fp="fp"):
    return UserProfile(np.asarray(values, dtype=float), fp)


def _node(rng: Rng, model: PolicyModel, sessions=2, samples=3, encodings=None, **kwargs):
    groups = []
    for v in range(sessions):
        groups.append(
            [
                FeedbackSample(
                    input=rng.standard_normal(model.dims[0]),
                    target=rng.standard_normal(model.dims[-1]),
                    session_index=v,
                )
                for _ in range(samples)
            ]
        )
    if encodings is None:
        encodings = [rng.standard_normal(2) for _ in range(sessions)]
    defaults = dict(node_id=0, teacher_id=0, profile=None, local_lr=0.1)
    defaults.update(kwargs)
    return NodeState(session_samples=groups, encodings=encodings, **defaults)


# -- session weights ---------------------------------------------------------


def test_session_weights_identical_encodings_are_uniform():
    enc = [np.array([0.3, -0.1])] * 4
    w = session_weights(enc, KAPPA)
    assert np.all(w == 1.0 / KAPPA)


def test_session_weights_two_symmetric_sessions():
    w = session_weights([np.array([0.0]), np.array([2.0])], KAPPA)
    assert w[0] == w[1] == 1.0 / (KAPPA + 1.0)


def test_session_weights_outlier_down_weighted():
    # Encodings (0), (0), (3): mean is (1); the outlier sits at distance 2
    # while the near pair sit at distance 1, so its weight must be smaller.
    w = session_weights([np.array([0.0]), np.array([0.0]), np.array([3.0])], KAPPA)
    assert w[2] < w[0] == w[1]
    assert w[0] == 1.0 / (KAPPA + 1.0)
    assert w[2] == 1.0 / (KAPPA + 2.0)


def test_session_weights_rejects_empty():
    with pytest.raises(ValueError):
        session_weights([], KAPPA)


# -- weighted local loss -----------------------------------------------------


def test_weighted_loss_equal_weights_is_mean_of_session_losses():
    rng = Rng(1)
    model = build_policy([3, 2], rng)
    node = _node(rng, model, sessions=3, samples=2)
    loss_eq, _ = weighted_local_loss(model, node.session_samples, [2.0, 2.0, 2.0])
    per_session = [
        weighted_local_loss(model, [group], [1.0])[0] for group in node.session_samples
    ]
    assert loss_eq == pytest.approx(np.mean(per_session), rel=1e-12)


def test_weighted_loss_single_hot_weight_selects_session():
    rng = Rng(2)
    model = build_policy([3, 2], rng)
    node = _node(rng, model, sessions=3, samples=2)
    loss, _ = weighted_local_loss(model, node.session_samples, [0.0, 1.0, 0.0])
    only, _ = weighted_local_loss(model, [node.session_samples[1]], [1.0])
    assert loss == pytest.approx(only, rel=1e-12)


def test_weighted_loss_gradient_matches_finite_differences():
    rng = Rng(3)
    dims = (3, 4, 2)
    model = build_policy(dims, rng)
    node = _node(rng, model, sessions=2, samples=3)
    weights = [0.7, 0.3]

    def f(v: ParamVector) -> float:
        return weighted_local_loss(PolicyModel(dims, v), node.session_samples, weights)[0]

    fd = finite_difference_grad(f, model.params, h=1e-5)
    _, analytic = weighted_local_loss(model, node.session_samples, weights)
    assert_grad_close(analytic, fd)


def test_weighted_loss_rejects_zero_weight_sum():
    rng = Rng(4)
    model = build_policy([2, 1], rng)
    node = _node(rng, model, sessions=1, samples=1)
    with pytest.raises(ValueError):
        weighted_local_loss(model, node.session_samples, [0.0])


# -- local training ----------------------------------------------------------


def test_local_train_zero_epochs_keeps_global():
    rng = Rng(5)
    model = build_policy([3, 2], rng)
    node = _node(rng, model)
    params, history = local_train(model, node, epochs=0, session_stabilizer=KAPPA)
    assert np.array_equal(params.values, model.params.values)
    assert len(history) == 1


def test_local_train_zero_lr_keeps_global():
    rng = Rng(6)
    model = build_policy([3, 2], rng)
    node = _node(rng, model, local_lr=0.0)
    params, _ = local_train(model, node, epochs=5, session_stabilizer=KAPPA)
    assert np.array_equal(params.values, model.params.values)


def test_local_train_linear_model_approaches_least_squares():
    # Oracle: the closed-form least-squares fit of the same samples.
    rng = Rng(7)
    model = build_policy([2, 1], rng)
    xs = rng.standard_normal((12, 2))
    w_true = np.array([[1.5, -0.7]])
    ys = xs @ w_true.T + 0.3
    groups = [[FeedbackSample(xs[i], ys[i], 0) for i in range(12)]]
    node = NodeState(0, 0, groups, [np.zeros(1)], None, local_lr=0.2)
    params, history = local_train(model, node, epochs=400, session_stabilizer=KAPPA)
    x_aug = np.hstack([xs, np.ones((12, 1))])
    theta, *_ = np.linalg.lstsq(x_aug, ys, rcond=None)
    fitted = np.concatenate([params.view("layer0.weights").ravel(), params.view("layer0.bias")])
    oracle = np.concatenate([theta[:2].T.ravel(), theta[2]])
    assert history[-1] < history[0]
    assert np.max(np.abs(fitted - oracle)) < 1e-4


# -- updates and aggregation -------------------------------------------------


def test_compute_update_zero_when_equal():
    rng = Rng(8)
    model = build_policy([2, 1], rng)
    node = _node(rng, model)
    upd = compute_update(model.params, model.params, node)
    assert not upd.delta.values.any()


def test_compute_update_hand_example():
    a = _pv([1.0, 2.0])
    b = _pv([0.5, 2.0])
    node = NodeState(3, 4, [[FeedbackSample(np.zeros(1), np.zeros(1), 0)]], [np.zeros(1)], None, 0.1)
    upd = LocalUpdate(
        delta=ParamVector(a.layout, a.values - b.values),
        node_id=node.node_id,
        teacher_id=node.teacher_id,
        num_samples=node.num_samples,
    )
    assert np.array_equal(upd.delta.values, [0.5, 0.0])
    assert compute_update(a, b, node).key == (3, 4)


def test_update_then_apply_roundtrip_restores_local_model():
    rng = Rng(9)
    model = build_policy([3, 2], rng)
    local = ParamVector(model.params.layout, model.params.values + rng.standard_normal(model.params.values.size))
    node = _node(rng, model)
    upd = compute_update(local, model.params, node)
    combined = aggregate_fedavg([upd])
    restored = apply_global_update(model.params, combined, 1.0)
    assert np.max(np.abs(restored.values - local.values)) <= 1e-12


def test_fedavg_single_update_is_identity():
    upd = _update([2.0, -1.0])
    assert np.array_equal(aggregate_fedavg([upd]).values, [2.0, -1.0])


def test_fedavg_hand_mean():
    out = aggregate_fedavg([_update([2.0, 0.0], node=0), _update([0.0, 2.0], node=1)])
    assert np.array_equal(out.values, [1.0, 1.0])


def test_fedavg_rejects_empty():
    with pytest.raises(ValueError):
        aggregate_fedavg([])


def test_user_weighted_equals_fedavg_at_equal_distances():
    rng = Rng(10)
    for trial in range(5):
        n = int(rng.integers(2, 6))
        updates = [_update(rng.standard_normal(7), node=i) for i in range(n)]
        # Profiles placed on distinct axes at the same exact distance.
        base = np.zeros(n)
        profiles = []
        for i in range(n):
            v = base.copy()
            v[i] = 1.7
            profiles.append(_profile(v))
        global_profile = _profile(np.zeros(n))
        uw, shares = aggregate_user_weighted(updates, profiles, global_profile, KAPPA)
        fa = aggregate_fedavg(updates)
        assert np.max(np.abs(uw.values - fa.values)) <= 1e-12
        assert abs(sum(shares.values()) - 1.0) <= 1e-12


def test_user_weighted_extreme_outlier_share_vanishes():
    d1 = np.array([1.0, 0.0])
    d2 = np.array([0.0, 1.0])
    updates = [_update(d1, node=0), _update(d2, node=1)]
    profiles = [_profile([0.0]), _profile([1e12])]
    global_profile = _profile([0.0])
    combined, shares = aggregate_user_weighted(updates, profiles, global_profile, KAPPA)
    assert shares[(1, 0)] < 1e-10
    assert np.max(np.abs(combined.values - d1)) < 1e-9


def test_user_weighted_shares_hand_example():
    # Distances (1, 1, 4) in the vanishing-stabilizer limit give weights
    # proportional to (1, 1, 1/4), i.e. shares (4/9, 4/9, 1/9).
    updates = [_update([1.0], node=i) for i in range(3)]
    profiles = [_profile([1.0]), _profile([-1.0]), _profile([4.0])]
    global_profile = _profile([0.0])
    _, shares = aggregate_user_weighted(updates, profiles, global_profile, stabilizer=1e-12)
    assert shares[(0, 0)] == pytest.approx(4.0 / 9.0, abs=1e-9)
    assert shares[(1, 0)] == pytest.approx(4.0 / 9.0, abs=1e-9)
    assert shares[(2, 0)] == pytest.approx(1.0 / 9.0, abs=1e-9)


def test_user_weighted_share_normalization_random_sets():
    rng = Rng(11)
    for _ in range(10):
        n = int(rng.integers(1, 7))
        updates = [_update(rng.standard_normal(4), node=i) for i in range(n)]
        profiles = [_profile(rng.standard_normal(3)) for _ in range(n)]
        global_profile = _profile(rng.standard_normal(3))
        _, shares = aggregate_user_weighted(updates, profiles, global_profile, KAPPA)
        assert abs(sum(shares.values()) - 1.0) <= 1e-12


def test_user_weighted_share_strictly_decreases_with_distance():
    updates = [_update([1.0], node=i) for i in range(3)]
    global_profile = _profile([0.0])
    last = None
    for dist in (0.5, 1.0, 2.0, 8.0):
        profiles = [_profile([1.0]), _profile([-1.0]), _profile([dist])]
        _, shares = aggregate_user_weighted(updates, profiles, global_profile, KAPPA)
        if last is not None:
            assert shares[(2, 0)] < last
        last = shares[(2, 0)]


def test_user_weighted_rejects_fingerprint_mismatch():
    updates = [_update([1.0])]
    with pytest.raises(FingerprintError):
        aggregate_user_weighted(updates, [_profile([0.0], fp="x")], _profile([0.0], fp="y"), KAPPA)


def test_strategy_stabilizer_must_be_positive():
    with pytest.raises(ValueError):
        UserWeighted(stabilizer=0.0, global_profile=_profile([0.0]))


# -- global update and global profile ----------------------------------------


def test_apply_global_update_zero_lr():
    p = _pv([1.0, 2.0])
    out = apply_global_update(p, _pv([5.0, -5.0]), 0.0)
    assert np.array_equal(out.values, p.values)


def test_apply_global_update_half_steps_compose():
    p = _pv([1.0, 2.0])
    g = _pv([0.4, -0.2])
    twice = apply_global_update(apply_global_update(p, g, 0.5), g, 0.5)
    once = apply_global_update(p, g, 1.0)
    assert np.max(np.abs(twice.values - once.values)) <= 1e-12


def test_update_global_profile_all_equal_snaps_to_value():
    g = _profile([0.0, 0.0])
    p = _profile([1.0, 2.0])
    out = update_global_profile(g, [p, p, p], learning_rate=1.0)
    assert np.array_equal(out.values, p.values)


def test_update_global_profile_hand_mean():
    g = _profile([0.0])
    out = update_global_profile(g, [_profile([0.0]), _profile([2.0])], learning_rate=1.0)
    assert np.array_equal(out.values, [1.0])


def test_update_global_profile_fixed_point():
    profiles = [_profile([1.0, 3.0]), _profile([3.0, 1.0])]
    g = _profile([2.0, 2.0])
    out = update_global_profile(g, profiles, learning_rate=1.0)
    assert np.array_equal(out.values, g.values)


def test_update_global_profile_fingerprint_mismatch():
    with pytest.raises(FingerprintError):
        update_global_profile(_profile([0.0], fp="a"), [_profile([0.0], fp="b")])


# -- rounds -------------------------------------------------------------------


def test_round_centralized_equivalence_single_node():
    rng = Rng(12)
    dims = (3, 4, 2)
    model = build_policy(dims, rng)
    node = _node(rng, model, sessions=3, samples=4, local_lr=0.05)
    weights = session_weights(node.encodings, KAPPA)

    fl_model = model.copy()
    central = model.params.copy()
    from fedlfd.nn import sgd_step

    for r in range(10):
        fl_model, report = run_round(
            fl_model,
            [node],
            FedAvg(),
            fraction_selector(1.0),
            global_lr=1.0,
            rng=Rng(1000 + r),
            local_epochs=2,
            session_stabilizer=KAPPA,
        )
        for _ in range(2):
            _, grads = weighted_local_loss(PolicyModel(dims, central), node.session_samples, weights)
            central = sgd_step(central, grads, node.local_lr)
        assert np.max(np.abs(fl_model.params.values - central.values)) <= 1e-10


def test_round_participation_selector_reproducible():
    select = fraction_selector(0.5)
    a = select(10, Rng(77).child("participation"))
    b = select(10, Rng(77).child("participation"))
    assert a == b
    assert len(a) == 5


def test_round_zero_local_lr_keeps_global_model():
    rng = Rng(13)
    model = build_policy([3, 2], rng)
    nodes = [
        _node(rng.child(f"n{i}"), model, node_id=i, teacher_id=i, local_lr=0.0) for i in range(3)
    ]
    out, report = run_round(
        model,
        nodes,
        FedAvg(),
        fraction_selector(1.0),
        global_lr=1.0,
        rng=Rng(14),
        local_epochs=3,
        session_stabilizer=KAPPA,
    )
    assert np.max(np.abs(out.params.values - model.params.values)) <= 1e-12
    assert report.participants == [(0, 0), (1, 1), (2, 2)]


def test_round_empty_selection_is_skipped_and_reported():
    rng = Rng(15)
    model = build_policy([3, 2], rng)
    node = _node(rng, model)
    out, report = run_round(
        model,
        [node],
        FedAvg(),
        fixed_selector([]),
        global_lr=1.0,
        rng=Rng(16),
        local_epochs=1,
        session_stabilizer=KAPPA,
    )
    assert report.skipped
    assert np.array_equal(out.params.values, model.params.values)


def test_round_user_weighted_emits_shares():
    rng = Rng(17)
    model = build_policy([3, 2], rng)
    fp = "fp"
    nodes = []
    for i in range(3):
        node = _node(rng.child(f"n{i}"), model, node_id=i, teacher_id=i, local_lr=0.05)
        node.profile = _profile(np.array([float(i)]), fp)
        nodes.append(node)
    strategy = UserWeighted(stabilizer=KAPPA, global_profile=_profile(np.array([0.0]), fp))
    _, report = run_round(
        model,
        nodes,
        strategy,
        fraction_selector(1.0),
        global_lr=1.0,
        rng=Rng(18),
        local_epochs=1,
        session_stabilizer=KAPPA,
    )
    assert report.shares is not None
    assert abs(sum(report.shares.values()) - 1.0) <= 1e-12
    assert report.shares[(0, 0)] > report.shares[(2, 2)]


def test_policy_predict_shapes():
    model = build_policy([3, 4, 2], Rng(19))
    assert policy_predict(model, np.zeros(3)).shape == (2,)
    assert policy_predict(model, np.zeros((5, 3))).shape == (5, 2)
