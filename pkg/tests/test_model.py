import numpy as np
import pytest

from spnpb.autodiff import ShapeError, Tape, Var, backward, sum_
from spnpb.model import (
    ModelConfig,
    ModelParams,
    NormStats,
    RecurrentState,
    forward,
    load_model,
    rollout,
    save_model,
)


def unit_stats(n_s=2, n_u=2):
    return NormStats(np.zeros(n_s), np.ones(n_s), np.zeros(n_u), np.ones(n_u))


def make_params(seed=0, n_s=2, n_u=2, n_p=2, n_trials=0, labels=None):
    cfg = ModelConfig(n_s=n_s, n_u=n_u, n_p=n_p)
    return ModelParams.init(
        cfg, unit_stats(n_s, n_u), np.random.default_rng(seed),
        n_trials=n_trials, pb_labels=labels,
    )


def zero_weights(params):
    for v in params.weight_vars():
        v.value[...] = 0.0
    return params


def test_layer_widths_follow_the_fixed_pattern():
    cfg = ModelConfig(n_s=2, n_u=2, n_p=2)
    assert cfg.n_in == 6
    assert cfg.layer_widths == (6, 50, 20, 10, 10, 10, 10, 20, 50, 4)


def test_zero_weights_give_zero_mean_unit_variance():
    params = zero_weights(make_params())
    pred, _state = forward(
        params, RecurrentState.zeros(), np.ones(2), np.ones(2), np.ones(2), Tape()
    )
    np.testing.assert_array_equal(pred.mean, np.zeros(2))
    np.testing.assert_array_equal(pred.variance, np.ones(2))


def test_variance_is_always_positive():
    rng = np.random.default_rng(11)
    params = make_params(seed=1)
    state = RecurrentState.zeros()
    for _ in range(1000):
        s = rng.normal(scale=3.0, size=2)
        u = rng.normal(scale=3.0, size=2)
        p = rng.normal(scale=2.0, size=2)
        pred, state = forward(params, state, s, u, p, Tape())
        assert np.all(pred.variance > 0)
        assert np.all(np.isfinite(pred.mean))


def test_forward_matches_frozen_golden_vector():
    # generated once from ModelParams.init(cfg, unit stats, default_rng(2024))
    params = make_params(seed=2024)
    s = np.array([0.25, -0.5])
    u = np.array([1.0, -0.75])
    p = np.array([0.1, -0.2])
    pred1, st = forward(params, RecurrentState.zeros(), s, u, p, Tape())
    np.testing.assert_allclose(
        pred1.mean,
        [-0.0037923958685253919, 0.00049870010409637641],
        rtol=0, atol=1e-15,
    )
    np.testing.assert_allclose(
        pred1.variance,
        [1.0032886659419402, 1.0057541446524412],
        rtol=0, atol=1e-14,
    )
    pred2, _ = forward(params, st, s, u, p, Tape())
    np.testing.assert_allclose(
        pred2.mean,
        [-0.0085378236794865919, 0.0010771400715352901],
        rtol=0, atol=1e-15,
    )
    np.testing.assert_allclose(
        st.h1[:3],
        [0.030602997215508541, -0.062825484548874058, -0.010780669279780797],
        rtol=0, atol=1e-15,
    )


def test_forward_does_not_mutate_its_input_state():
    params = make_params(seed=3)
    state = RecurrentState.zeros()
    h1_before = state.h1.copy()
    pred, new_state = forward(
        params, state, np.ones(2), np.ones(2), np.zeros(2), Tape()
    )
    np.testing.assert_array_equal(state.h1, h1_before)
    assert new_state is not state
    assert np.any(new_state.h1 != 0)


def test_single_step_rollout_equals_forward():
    params = make_params(seed=4)
    s = np.array([0.2, 0.4])
    u = np.array([-0.3, 0.8])
    p = np.array([0.05, -0.05])
    pred_f, _ = forward(params, RecurrentState.zeros(), s, u, p, Tape())
    preds_r = rollout(params, RecurrentState.zeros(), s, [u], p, Tape())
    assert len(preds_r) == 1
    np.testing.assert_array_equal(preds_r[0].mean, pred_f.mean)
    np.testing.assert_array_equal(preds_r[0].variance, pred_f.variance)


def test_rollout_feeds_mean_back_as_next_state():
    params = make_params(seed=5)
    s = np.array([0.1, -0.1])
    p = np.zeros(2)
    u_seq = [np.array([0.5, 0.5]), np.array([-0.5, 0.25])]
    preds = rollout(params, RecurrentState.zeros(), s, u_seq, p, Tape())

    # manual two-step replay with explicit state threading
    pred1, st1 = forward(params, RecurrentState.zeros(), s, u_seq[0], p, Tape())
    pred2, _ = forward(params, st1, pred1.mean, u_seq[1], p, Tape())
    np.testing.assert_allclose(preds[0].mean, pred1.mean, atol=1e-15)
    np.testing.assert_allclose(preds[1].mean, pred2.mean, atol=1e-12)


def test_rollout_rejects_empty_command_sequence():
    params = make_params(seed=6)
    with pytest.raises(ValueError):
        rollout(params, RecurrentState.zeros(), np.zeros(2), [], np.zeros(2), Tape())


def test_rollout_gradient_wrt_commands_matches_finite_differences():
    params = make_params(seed=7)
    s = np.array([0.3, -0.2])
    p = np.array([0.1, 0.1])
    u_flat = np.random.default_rng(8).normal(size=6)

    def value():
        u_seq = [u_flat[0:2], u_flat[2:4], u_flat[4:6]]
        preds = rollout(params, RecurrentState.zeros(), s, u_seq, p, Tape())
        return float(sum(np.sum(pr.mean**2) for pr in preds))

    tape = Tape()
    u_vars = [Var(u_flat[0:2]), Var(u_flat[2:4]), Var(u_flat[4:6])]
    preds = rollout(params, RecurrentState.zeros(), s, u_vars, p, tape)
    from spnpb.autodiff import add_n, mul

    sq = [sum_(tape, mul(tape, pr.mean_node, pr.mean_node)) for pr in preds]
    loss = add_n(tape, sq)
    grads = backward(tape, 1.0, output=loss)

    h = 1e-5
    for k, uv in enumerate(u_vars):
        for j in range(2):
            idx = 2 * k + j
            keep = u_flat[idx]
            u_flat[idx] = keep + h
            hi = value()
            u_flat[idx] = keep - h
            lo = value()
            u_flat[idx] = keep
            numeric = (hi - lo) / (2 * h)
            analytic = grads[uv][j]
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)
            assert err <= 1e-4, f"u[{k}][{j}] grad err {err}"


def test_parametric_bias_changes_the_prediction():
    params = make_params(seed=9)
    s, u = np.array([0.2, 0.2]), np.array([0.5, -0.5])
    pred_a, _ = forward(params, RecurrentState.zeros(), s, u, np.array([1.0, 0.0]), Tape())
    pred_b, _ = forward(params, RecurrentState.zeros(), s, u, np.array([-1.0, 0.0]), Tape())
    assert np.max(np.abs(pred_a.mean - pred_b.mean)) > 1e-6


def test_input_shape_validation():
    params = make_params(seed=10)
    st = RecurrentState.zeros()
    with pytest.raises(ShapeError):
        forward(params, st, np.zeros(3), np.zeros(2), np.zeros(2), Tape())
    with pytest.raises(ShapeError):
        forward(params, st, np.zeros(2), np.zeros(1), np.zeros(2), Tape())
    with pytest.raises(ShapeError):
        forward(params, st, np.zeros(2), np.zeros(2), np.zeros(3), Tape())


def test_normalization_round_trip():
    stats = NormStats(
        np.array([1.0, -2.0]), np.array([0.5, 3.0]),
        np.array([0.1, 0.2]), np.array([2.0, 0.25]),
    )
    s = np.array([4.2, -7.7])
    u = np.array([-1.1, 0.9])
    np.testing.assert_allclose(
        stats.denormalize_state(stats.normalize_state(s)), s, atol=1e-12
    )
    np.testing.assert_allclose(
        stats.denormalize_command(stats.normalize_command(u)), u, atol=1e-12
    )


def test_normalization_floors_degenerate_std():
    stats = NormStats(np.zeros(2), np.array([0.0, 1.0]), np.zeros(2), np.ones(2))
    assert stats.std_s[0] == NormStats.STD_FLOOR
    out = stats.normalize_state(np.array([1e-6, 0.0]))
    assert np.isfinite(out).all()


def test_pb_centroid_for_label():
    params = make_params(seed=11, n_trials=4, labels=["a", "b", "a", "b"])
    params.pb_table[0] = [1.0, 2.0]
    params.pb_table[2] = [3.0, 4.0]
    np.testing.assert_allclose(params.pb_for_label("a"), [2.0, 3.0], atol=1e-15)
    with pytest.raises(KeyError):
        params.pb_for_label("missing")


def test_save_load_round_trip_is_bit_exact(tmp_path):
    params = make_params(seed=12, n_trials=3, labels=["x", "y", "x"])
    params.pb_table[:] = np.random.default_rng(13).normal(size=(3, 2))
    path = tmp_path / "model.json"
    save_model(params, str(path))
    loaded = load_model(str(path))

    for a, b in zip(params.weight_arrays(), loaded.weight_arrays()):
        assert np.array_equal(a, b), "weights drifted through serialization"
    assert np.array_equal(params.pb_table, loaded.pb_table)
    assert loaded.pb_labels == ["x", "y", "x"]
    assert loaded.config == params.config
    np.testing.assert_array_equal(loaded.stats.mean_s, params.stats.mean_s)
    np.testing.assert_array_equal(loaded.stats.std_u, params.stats.std_u)

    # a forward pass through the loaded model must agree bitwise
    s, u, p = np.array([0.3, 0.1]), np.array([-0.2, 0.9]), np.array([0.0, 0.5])
    pred_a, _ = forward(params, RecurrentState.zeros(), s, u, p, Tape())
    pred_b, _ = forward(loaded, RecurrentState.zeros(), s, u, p, Tape())
    assert np.array_equal(pred_a.mean, pred_b.mean)
    assert np.array_equal(pred_a.variance, pred_b.variance)


def test_load_rejects_wrong_kind(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"kind": "something-else", "format_version": 1}')
    with pytest.raises(ValueError):
        load_model(str(path))


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(n_s=0, n_u=2)
    with pytest.raises(ValueError):
        ModelConfig(n_s=2, n_u=2, tick_period=0.0)
