"""DeepONet combine, FB-DON stacking and operator training mechanics."""

import numpy as np
import pytest

from stackpinn.autodiff import Tensor
from stackpinn.decomp import DecompositionConfig
from stackpinn.deeponet import (DeepONetParams, OperatorTrainConfig, build_operator_stack,
                                deeponet_eval, fbdon_eval_jet, fbdon_level_eval,
                                operator_train_set, train_operator)
from stackpinn.mfstack import frozen_hash
from stackpinn.nn import NetworkParams, init_params


def affine_don(branch_w, branch_b, trunk_w, trunk_b, bias=0.0, p=1, sol=1):
    branch = NetworkParams([2, p * sol], [Tensor(np.asarray(branch_w))],
                           [Tensor(np.asarray(branch_b))], "identity")
    trunk = NetworkParams([1, p], [Tensor(np.asarray(trunk_w))],
                          [Tensor(np.asarray(trunk_b))], "identity")
    return DeepONetParams(branch, trunk, Tensor(np.full(sol, bias)))


def test_zero_branch_gives_zero():
    d = affine_don(np.zeros((1, 2)), [0.0], np.zeros((1, 1)), [3.0])
    out = deeponet_eval(d, [0.7, -0.3], np.linspace(-1, 1, 5))
    assert np.allclose(out, 0.0)


def test_p1_dot_product():
    d = affine_don(np.zeros((1, 2)), [2.0], np.zeros((1, 1)), [3.0])
    assert np.isclose(deeponet_eval(d, [0.0, 0.0], 0.0)[0, 0], 6.0)


def test_bias_only_net_is_constant():
    d = affine_don(np.zeros((1, 2)), [0.0], np.zeros((1, 1)), [0.0], bias=4.2)
    for ic in ([0.0, 0.0], [1.5, -0.9]):
        out = deeponet_eval(d, ic, np.linspace(-1, 1, 4))
        assert np.allclose(out, 4.2)


def test_bilinearity_in_branch_and_trunk():
    rng = np.random.default_rng(0)
    p, sol = 3, 2
    branch = init_params([2, 4, p * sol], "tanh", 1)
    trunk = init_params([1, 4, p], "tanh", 2)
    d = DeepONetParams(branch, trunk, Tensor(np.zeros(sol)))
    ic, t = [0.5, -0.2], 0.3
    base = deeponet_eval(d, ic, t)
    for w in branch.weights:
        w.data *= 2.0
    for b in branch.biases:
        b.data *= 2.0
    # scaling all branch weights is nonlinear in general; bilinearity is in the
    # OUTPUTS: scale the final branch layer only
    d2 = DeepONetParams(branch, trunk, Tensor(np.zeros(sol)))
    for w in branch.weights:
        w.data /= 2.0
    for b in branch.biases:
        b.data /= 2.0
    branch.weights[-1].data *= 3.0
    branch.biases[-1].data *= 3.0
    assert np.allclose(deeponet_eval(d2, ic, t), 3.0 * base)


def test_branch_trunk_dim_validation():
    branch = init_params([2, 7], "identity", 0)
    trunk = init_params([1, 3], "identity", 0)
    with pytest.raises(ValueError):
        DeepONetParams(branch, trunk, Tensor(np.zeros(2)))


def small_operator(levels=1, seed=0):
    cfg = OperatorTrainConfig(level0_width=10, level0_layers=2, nonlinear_width=8,
                              nonlinear_layers=2, linear_width=4, linear_layers=1,
                              n_train_ics=64, residual_batch=32, bc_batch=8,
                              level0_iterations=4, mf_iterations=4, seed=seed)
    dc = DecompositionConfig(T=20.0, levels=levels, delta=2.0)
    return build_operator_stack(dc, cfg), cfg


def test_level0_model_is_plain_deeponet():
    model, _ = small_operator(levels=0)
    t = np.linspace(0, 20, 6)
    got = fbdon_level_eval(model, 0, (1.0, 1.0), t)
    mu, sigma = model.decomp.center_halfwidth(0, 1)
    want = deeponet_eval(model.level0, (1.0, 1.0), (t - mu) / sigma)
    assert np.array_equal(got, want)


def test_alpha_zero_keeps_linear_route():
    model, _ = small_operator(levels=1)
    for u in model.levels[0].units:
        u.alpha.data[...] = 0.0
        for w in u.linear_net.branch.weights + u.linear_net.trunk.weights:
            w.data[...] = 0.0
        for b in u.linear_net.branch.biases + u.linear_net.trunk.biases:
            b.data[...] = 0.0
        u.linear_net.branch.biases[-1].data[...] = 1.0  # coefficients 1
        u.linear_net.trunk.biases[-1].data[...] = 0.5   # basis 0.5
    # each component: sum_k 1*0.5 = p_lin * 0.5 = 2.0 with p_lin = 4
    out = fbdon_level_eval(model, 1, (1.0, 1.0), np.linspace(0, 20, 7))
    assert np.allclose(out, 2.0)


def test_time_derivative_chain_rule_vs_fd():
    model, _ = small_operator(levels=2)
    t = np.linspace(0.5, 19.5, 9)
    ics = np.tile([[1.0, 1.0]], (9, 1))
    jet = fbdon_eval_jet(model, 2, ics, t, wrt_time=True, order=1)
    v, d1, _ = jet.values()
    h = 1e-6
    fp = fbdon_level_eval(model, 2, (1.0, 1.0), t + h)
    fm = fbdon_level_eval(model, 2, (1.0, 1.0), t - h)
    fd = (fp - fm) / (2 * h)
    assert np.abs(d1 - fd).max() < 1e-4 * (1 + np.abs(fd).max())


def test_train_set_inside_box():
    cfg = OperatorTrainConfig(n_train_ics=500, seed=7)
    ics = operator_train_set(cfg)
    assert ics.shape == (500, 2)
    assert ics[:, 0].min() >= -2.0 and ics[:, 0].max() <= 2.0
    assert ics[:, 1].min() >= -1.2 and ics[:, 1].max() <= 1.2


def test_untrained_model_has_positive_ic_loss():
    model, cfg = small_operator(levels=0)
    from stackpinn.deeponet import _operator_level_loss
    from stackpinn.problems import PendulumParams
    ics = operator_train_set(cfg)
    _, res, bc, _ = _operator_level_loss(model, 0, ics[:16], np.linspace(0, 20, 16),
                                         ics[:8], cfg.weights, PendulumParams())
    assert bc > 0.0


def test_operator_training_freezes_lower_levels_and_reruns_identically():
    results = []
    for _ in range(2):
        model, cfg = small_operator(levels=1, seed=5)
        h0 = frozen_hash(model, 1)
        model, reports = train_operator(model, cfg)
        assert frozen_hash(model, 1) != h0  # level 0 trained
        assert all(r.frozen_hash_ok for r in reports)
        results.append(np.concatenate([r.total for r in reports]))
    assert np.array_equal(results[0], results[1])


def test_operator_checkpoint_roundtrip(tmp_path):
    from stackpinn.checkpoint import load_operator, save_operator

    model, _ = small_operator(levels=1, seed=3)
    save_operator(tmp_path / "op.npz", model, "tag")
    loaded = load_operator(tmp_path / "op.npz")
    t = np.linspace(0, 20, 5)
    assert np.array_equal(fbdon_level_eval(model, 1, (0.5, 0.5), t),
                          fbdon_level_eval(loaded, 1, (0.5, 0.5), t))
    assert loaded.ic_box == model.ic_box
