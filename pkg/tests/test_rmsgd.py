import numpy as np
import pytest

from config import LR_FLOOR
from errors import LayerCountMismatch, NonFiniteGradient
from optim.rmsgd import (
    RMSGD,
    LayerGroup,
    MomentumSGD,
    OptimizerState,
    assign_layer_groups,
    closed_form_lr,
    epoch_lr_update,
    sgd_step,
    vanilla_rank_lr,
)


def one_layer(lr=0.1, alpha=0.9, beta=0.98, zeta=1.0):
    params = {"w": np.zeros(3)}
    groups = [LayerGroup(1, "w")]
    state = OptimizerState.initial(params, groups, alpha=alpha, beta=beta, zeta=zeta, eta0=lr)
    return params, state


def test_assign_layer_groups_attaches_biases_to_preceding_weight():
    names = ["dense0.weight", "dense0.bias", "conv0.weight", "conv0.bias", "dense1.weight", "dense1.bias"]
    groups = assign_layer_groups(names, ["dense0.weight", "conv0.weight", "dense1.weight"])
    assert [g.layer_index for g in groups] == [1, 2, 3]
    assert [g.params for g in groups] == [["dense0.weight", "dense0.bias"], ["conv0.weight", "conv0.bias"],
                                          ["dense1.weight", "dense1.bias"]]


def test_assign_layer_groups_leading_params_join_first_group():
    groups = assign_layer_groups(["scale", "w0", "b0"], ["w0"])
    assert groups[0].params == ["w0", "scale", "b0"]


def test_assign_layer_groups_needs_a_weight():
    with pytest.raises(ValueError):
        assign_layer_groups(["b"], [])


def test_sgd_step_single_update():
    params, state = one_layer()
    sgd_step(state, params, {"w": np.ones(3)})
    np.testing.assert_array_equal(state.velocity["w"], np.full(3, -0.1))
    np.testing.assert_array_equal(params["w"], np.full(3, -0.1))


def test_sgd_step_two_updates_unrolled():
    params, state = one_layer()
    sgd_step(state, params, {"w": np.ones(3)})
    sgd_step(state, params, {"w": np.ones(3)})
    np.testing.assert_allclose(state.velocity["w"], -0.19, rtol=0, atol=1e-15)
    np.testing.assert_allclose(params["w"], -0.29, rtol=0, atol=1e-15)


def test_sgd_step_zero_gradient_is_a_no_op():
    params, state = one_layer()
    params["w"][:] = [1.0, 2.0, 3.0]
    sgd_step(state, params, {"w": np.zeros(3)})
    np.testing.assert_array_equal(params["w"], [1.0, 2.0, 3.0])


def test_sgd_step_rejects_bad_gradients_before_updating():
    params = {"w": np.zeros(2), "b": np.zeros(1)}
    state = OptimizerState.initial(params, [LayerGroup(1, "w", ["b"])], eta0=0.1)
    with pytest.raises(NonFiniteGradient):
        sgd_step(state, params, {"w": np.ones(2), "b": np.array([np.inf])})
    np.testing.assert_array_equal(params["w"], 0.0)
    with pytest.raises(ValueError):
        sgd_step(state, params, {"w": np.ones(3)})


def test_attached_params_share_the_group_rate():
    params = {"w": np.zeros(2), "b": np.zeros(1), "w2": np.zeros(2)}
    state = OptimizerState.initial(params, [LayerGroup(1, "w", ["b"]), LayerGroup(2, "w2")], alpha=0.0, eta0=0.1)
    state.per_layer_lr = [0.1, 0.5]
    sgd_step(state, params, {name: np.ones_like(p) for name, p in params.items()})
    np.testing.assert_allclose(params["b"], -0.1)
    np.testing.assert_allclose(params["w2"], -0.5)


def test_epoch_lr_update_known_values():
    _, state = one_layer(lr=0.03)
    assert epoch_lr_update(state, [0.1]) == [pytest.approx(0.1294, abs=1e-15)]
    _, state = one_layer(lr=0.05)
    state.prev_stable_rank = [0.4]
    assert epoch_lr_update(state, [0.399])[0] == pytest.approx(0.048, abs=1e-15)
    assert state.prev_stable_rank == [0.399]
    assert state.epoch == 1


def test_epoch_lr_update_without_rank_change_decays_geometrically():
    _, state = one_layer(lr=0.03)
    for _ in range(5):
        epoch_lr_update(state, [0.0])
    assert state.per_layer_lr[0] == pytest.approx(0.03 * 0.98 ** 5, rel=1e-14)


def test_epoch_lr_update_clamps_non_positive_rates(caplog):
    _, state = one_layer(lr=0.03)
    state.prev_stable_rank = [0.9]
    rates = epoch_lr_update(state, [0.1])
    assert rates == [LR_FLOOR]
    assert state.clamp_count == 1
    assert state.raw_lr_history[-1][0] < 0
    assert "clamped" in caplog.text


def test_epoch_lr_update_matches_closed_form_over_200_epochs():
    rng = np.random.default_rng(0)
    s = np.cumsum(rng.uniform(0.0, 0.004, size=200))
    _, state = one_layer(lr=0.03)
    for t in range(200):
        epoch_lr_update(state, [s[t]])
    deltas = np.diff(np.concatenate([[0.0], s]))
    assert state.per_layer_lr[0] == pytest.approx(closed_form_lr(0.03, 0.98, 1.0, deltas), abs=1e-12)
    for t in range(1, 201):
        assert state.lr_history[t][0] == pytest.approx(closed_form_lr(0.03, 0.98, 1.0, deltas[:t]), abs=1e-12)


def test_epoch_lr_update_without_momentum_is_the_plain_gain_rule():
    s = np.cumsum(np.random.default_rng(4).uniform(1e-4, 0.05, size=20))
    _, state = one_layer(lr=0.03, beta=0.0)
    prev = 0.0
    for curr in s:
        assert epoch_lr_update(state, [curr])[0] == pytest.approx(vanilla_rank_lr(prev, curr, 1.0), abs=1e-15)
        prev = curr


def test_epoch_lr_update_without_gain_ignores_the_stable_rank():
    rng = np.random.default_rng(5)
    _, state = one_layer(lr=0.03, zeta=0.0)
    for t in range(1, 31):
        epoch_lr_update(state, [float(rng.uniform())])
        assert state.per_layer_lr[0] == pytest.approx(0.03 * 0.98 ** t, rel=1e-12)


def test_epoch_lr_update_checks_layer_count():
    _, state = one_layer()
    with pytest.raises(LayerCountMismatch):
        epoch_lr_update(state, [0.1, 0.2])


def test_vanilla_rank_lr():
    assert vanilla_rank_lr(0.3, 0.5, 1.0) == pytest.approx(0.2)
    assert vanilla_rank_lr(0.4, 0.4, 1.0) == 0.0
    assert vanilla_rank_lr(0.1, 0.9, 0.0) == 0.0


@pytest.mark.parametrize("kwargs", [{"alpha": 1.0}, {"beta": 1.0}, {"zeta": -0.1}, {"eta0": 0.0}])
def test_state_rejects_out_of_range_hyperparameters(kwargs):
    params = {"w": np.zeros(1)}
    with pytest.raises(ValueError):
        OptimizerState.initial(params, [LayerGroup(1, "w")], **kwargs)


def test_momentum_sgd_keeps_its_rate():
    params = {"w": np.zeros(2)}
    opt = MomentumSGD(params, [LayerGroup(1, "w")], lr=0.1)
    assert opt.end_epoch([0.5]) == [0.1]
    assert opt.state.lr_history == [[0.1], [0.1]]


def test_rmsgd_revises_its_rate():
    params = {"w": np.zeros(2)}
    opt = RMSGD(params, [LayerGroup(1, "w")], eta0=0.03)
    opt.step({"w": np.ones(2)})
    np.testing.assert_allclose(params["w"], -0.03)
    assert opt.end_epoch([0.1]) == [pytest.approx(0.1294)]
    assert opt.learning_rates == [pytest.approx(0.1294)]
