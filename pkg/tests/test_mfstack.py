"""Multifidelity blend units, stacking recursion and freezing semantics."""

import numpy as np
import pytest

from stackpinn.autodiff import Jet, Tensor, value_of
from stackpinn.decomp import DecompositionConfig, scale_input
from stackpinn.mfstack import (MfUnit, Stack, build_stack, eval_on_grid, frozen_hash,
                               level_eval, level_eval_jet, mf_eval, parameter_count,
                               set_trainable, trainable_params)
from stackpinn.nn import NetworkParams, init_params, mlp_forward


def constant_output_net(in_dim, out_dim, value):
    """Affine net that ignores its input and returns `value`."""
    return NetworkParams([in_dim, out_dim],
                         [Tensor(np.zeros((out_dim, in_dim)))],
                         [Tensor(np.full(out_dim, float(value)))], "identity")


def blend_unit(lin_value, nl_value, alpha):
    return MfUnit(constant_output_net(1, 1, lin_value),
                  constant_output_net(2, 1, nl_value),
                  Tensor(np.float64(alpha)))


def small_stack(levels=2, seed=0, delta=2.0):
    cfg = DecompositionConfig(T=20.0, levels=levels, delta=delta)
    return build_stack(cfg, [1, 6, 6, 2], "swish", [2, 4, 2], [3, 6, 2], "swish", seed)


def test_alpha_zero_gives_linear_branch_exactly():
    unit = blend_unit(2.0, 4.0, 0.0)
    out = mf_eval(unit, np.array([0.1]), np.array([0.5]))
    assert out[0] == 2.0


def test_alpha_one_gives_nonlinear_branch_exactly():
    for alpha in (1.0, -1.0):
        unit = blend_unit(2.0, 4.0, alpha)
        out = mf_eval(unit, np.array([0.1]), np.array([0.5]))
        assert out[0] == 4.0


def test_alpha_blend_arithmetic():
    unit = blend_unit(2.0, 4.0, -0.5)
    out = mf_eval(unit, np.array([0.0]), np.array([0.0]))
    assert np.isclose(out[0], 3.0)


def test_alpha_blend_stays_on_segment():
    for alpha in np.linspace(-1, 1, 21):
        unit = blend_unit(2.0, 4.0, alpha)
        out = mf_eval(unit, np.array([0.0]), np.array([0.0]))[0]
        assert 2.0 - 1e-12 <= out <= 4.0 + 1e-12


def test_level0_matches_plain_network_bitwise():
    stack = small_stack(levels=0)
    t = np.linspace(0.0, 20.0, 17)
    got = level_eval(stack, 0, t[:, None])
    scaled = scale_input(stack.decomp, 0, 1, t)[:, None]
    want = mlp_forward(stack.level0, scaled)
    assert np.array_equal(got, want)


def test_identical_units_reduce_to_single_unit_output():
    # PoU sums to 1, so J identical units give exactly one unit's blend when
    # the units ignore the coordinate input.
    cfg = DecompositionConfig(T=20.0, levels=1, delta=2.0)
    stack = build_stack(cfg, [1, 4, 2], "tanh", [2, 4, 2], [3, 6, 2], "tanh", seed=1)
    src = stack.levels[0].units[0]
    dst = stack.levels[0].units[1]
    for a, b in zip(src.tensors(), dst.tensors()):
        b.data[...] = a.data
    for u in stack.levels[0].units:
        u.nonlinear_net.weights[0].data[:, 0] = 0.0  # drop the scaled-coord column
    t = np.linspace(0.0, 20.0, 9)[:, None]
    u0 = level_eval_jet(stack, 0, t).val
    out = level_eval(stack, 1, t)
    from stackpinn.mfstack import mf_eval_jet
    want = value_of(mf_eval_jet(src, Jet.constant(np.zeros((9, 1))), Jet.constant(u0)).val)
    assert np.allclose(out, want, atol=1e-12)


def test_center_point_sees_single_unit():
    stack = small_stack(levels=2)
    cfg = stack.decomp
    mu, sigma = cfg.center_halfwidth(2, 2)
    out = level_eval(stack, 2, np.array([[mu]]))
    u_prev = level_eval_jet(stack, 1, np.array([[mu]])).val
    from stackpinn.mfstack import mf_eval_jet
    want = value_of(mf_eval_jet(stack.levels[1].units[1],
                                Jet.constant(np.zeros((1, 1))), Jet.constant(u_prev)).val)
    assert np.allclose(out, want, atol=1e-12)


def test_trainable_params_views():
    stack = small_stack(levels=2)
    p0 = trainable_params(stack, 0)
    assert sum(t.size for t in p0) == stack.level0.n_params()
    p1 = trainable_params(stack, 1)
    assert sum(t.size for t in p1) == sum(u.n_params() for u in stack.levels[0].units)
    with pytest.raises(IndexError):
        trainable_params(stack, 3)


def test_parameter_count_levels():
    stack = small_stack(levels=2)
    total = parameter_count(stack)
    assert total == sum(parameter_count(stack, [l]) for l in range(3))
    assert parameter_count(stack, [1], include_alpha=False) \
        == parameter_count(stack, [1]) - len(stack.levels[0].units)


def test_frozen_levels_excluded_from_gradients():
    stack = small_stack(levels=1)
    set_trainable(stack, 1)
    t = np.linspace(0.0, 20.0, 8)[:, None]
    out = level_eval_jet(stack, 1, t)
    loss = (out.val * out.val).sum() / 8
    loss.backward()
    for p in trainable_params(stack, 0):
        assert p.grad is None  # level 0 never entered the tape
    assert any(p.grad is not None and np.abs(p.grad).max() > 0
               for p in trainable_params(stack, 1))
    set_trainable(stack, None)


def test_frozen_is_not_ignored():
    stack = small_stack(levels=1)
    x = np.array([[3.0]])
    before = level_eval(stack, 1, x)
    stack.level0.weights[0].data += 0.5
    after = level_eval(stack, 1, x)
    assert not np.allclose(before, after)


def test_level_eval_determinism_and_memoization():
    stack = small_stack(levels=2)
    x = np.linspace(0, 20, 31)[:, None]
    a = level_eval(stack, 2, x)
    b = level_eval(stack, 2, x)
    assert np.array_equal(a, b)


def test_frozen_hash_stability():
    stack = small_stack(levels=2)
    h1 = frozen_hash(stack, 2)
    stack.levels[1].units[0].alpha.data += 1.0  # level 2 param, outside the hash
    assert frozen_hash(stack, 2) == h1
    stack.level0.biases[0].data += 1.0
    assert frozen_hash(stack, 2) != h1


def test_eval_on_grid_thread_independence():
    stack = small_stack(levels=1)
    coords = np.linspace(0, 20, 5000)[:, None]
    a = eval_on_grid(stack, 1, coords, threads=1)
    b = eval_on_grid(stack, 1, coords, threads=4)
    assert np.array_equal(a, b)


def test_stack_checkpoint_roundtrip(tmp_path):
    from stackpinn.checkpoint import CheckpointError, load_stack, save_stack

    stack = small_stack(levels=2, seed=9)
    path = tmp_path / "stack.npz"
    save_stack(path, stack, "deadbeef")
    loaded = load_stack(path)
    x = np.linspace(0, 20, 7)[:, None]
    assert np.array_equal(level_eval(stack, 2, x), level_eval(loaded, 2, x))

    np.savez(tmp_path / "bad.npz", format="other-v9")
    with pytest.raises(CheckpointError):
        load_stack(tmp_path / "bad.npz")
