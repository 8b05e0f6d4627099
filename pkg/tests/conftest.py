"""Shared fixtures and finite-difference oracles for the test suite."""

import numpy as np
import pytest

from stackpinn.autodiff import Jet, mean_sumsq, value_of
from stackpinn.nn import mlp_jet
from stackpinn.problems import AllenCahnOracle, PendulumOracle


def fd_param_grads(params, loss_of_params, h=1e-5):
    """Central-difference gradient of a scalar loss over every network leaf."""
    grads = []
    for t in params.tensors():
        g = np.zeros_like(t.data)
        it = np.nditer(t.data, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            orig = t.data[i]
            t.data[i] = orig + h
            lp = loss_of_params(params)
            t.data[i] = orig - h
            lm = loss_of_params(params)
            t.data[i] = orig
            g[i] = (lp - lm) / (2.0 * h)
        grads.append(g)
    return grads


def batch_loss(params, x):
    """Mean squared output over a fixed batch, as a plain float."""
    out = value_of(mlp_jet(params, Jet.constant(np.asarray(x))).val)
    return float((out * out).sum() / x.shape[0])


def batch_loss_tensor(x):
    """The same loss as batch_loss but built on the tape."""
    def fn(params):
        out = mlp_jet(params, Jet.constant(np.asarray(x))).val
        return mean_sumsq(out)
    return fn


def rel_err(a, b, floor=1e-10):
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b).max() / (np.abs(b).max() + floor)


@pytest.fixture(scope="session")
def pendulum_oracle():
    return PendulumOracle()


@pytest.fixture(scope="session")
def ac_oracle(tmp_path_factory):
    """Allen-Cahn reference with the self-convergence study run once per session."""
    path = tmp_path_factory.mktemp("oracle") / "allen-cahn.npz"
    oracle = AllenCahnOracle.build(check=True)
    oracle.save(path)
    loaded = AllenCahnOracle.load(path)
    loaded.self_delta = oracle.self_delta
    return loaded
