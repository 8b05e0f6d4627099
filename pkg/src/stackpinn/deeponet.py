"""Finite-basis DeepONets: operator learning for the pendulum family.

A DeepONet factors the solution operator into a branch net encoding the
initial condition and a trunk net encoding the (scaled) query time; each
solution component is the dot product of its slice of branch coefficients
with the trunk basis, plus a per-component bias.

The finite-basis extension stacks DeepONet multifidelity units over the same
time decomposition and partition-of-unity windows as the PINN stack: at level
l, 2^l units blend a linear DeepONet (fed the previous level's output) with a
nonlinear one (fed the initial condition and the previous output), weighted
by the windows.  Training is physics informed: the pendulum residual is
evaluated through trunk input derivatives, with the initial condition
enforced softly at t = 0.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .autodiff import Jet, Tensor, absolute, jet_concat, jet_scatter_rows, mean_sumsq, value_of
from .decomp import DecompositionConfig, window_jets
from .mfstack import MfLevel, MfUnit, frozen_hash, set_trainable, trainable_params
from .nn import NetworkParams, init_params, mlp_jet
from .optim import AdamState, LrSchedule, adam_step
from .problems import PendulumParams, pendulum_residual
from .trainer import LossWeights, TrainingDiverged, relative_l2
from .util import seedseq

IC_BOX = [(-2.0, 2.0), (-1.2, 1.2)]


@dataclass
class DeepONetParams:
    """Branch/trunk pair plus one output bias per solution component."""

    branch: NetworkParams
    trunk: NetworkParams
    bias: Tensor

    def __post_init__(self):
        if self.branch.out_dim % self.trunk.out_dim != 0:
            raise ValueError("branch output must be a multiple of the trunk basis count")

    @property
    def n_basis(self) -> int:
        return self.trunk.out_dim

    @property
    def sol_dim(self) -> int:
        return self.branch.out_dim // self.trunk.out_dim

    def tensors(self) -> list:
        return self.branch.tensors() + self.trunk.tensors() + [self.bias]

    def n_params(self) -> int:
        return self.branch.n_params() + self.trunk.n_params() + self.bias.size


@dataclass
class OperatorStack:
    level0: DeepONetParams
    levels: list
    decomp: DecompositionConfig
    ic_box: list

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def sol_dim(self) -> int:
        return self.level0.sol_dim


def _jet_sum_cols(j: Jet) -> Jet:
    def s(c):
        return None if c is None else c.sum(axis=1, keepdims=True)
    return Jet(s(j.val), s(j.d1), s(j.d2), j.order)


def _jet_cols(j: Jet, a: int, b: int) -> Jet:
    def c(x):
        if x is None:
            return None
        return x.cols(a, b) if isinstance(x, Tensor) else x[:, a:b]
    return Jet(c(j.val), c(j.d1), c(j.d2), j.order)


def deeponet_eval_jet(params: DeepONetParams, branch_in: Jet, trunk_in: Jet,
                      order: int = 0) -> Jet:
    """Dot-product combine of branch slices with the trunk basis, plus bias."""
    b = mlp_jet(params.branch, branch_in, order)
    tr = mlp_jet(params.trunk, trunk_in, order)
    p = params.n_basis
    comps = [_jet_sum_cols(_jet_cols(b, c * p, (c + 1) * p) * tr)
             for c in range(params.sol_dim)]
    out = jet_concat(comps, axis=1)
    return Jet(out.val + params.bias, out.d1, out.d2, out.order)


def deeponet_eval(params: DeepONetParams, ic, t_hat):
    """Plain values for one initial condition over scaled times t_hat."""
    t_hat = np.atleast_1d(np.asarray(t_hat, dtype=np.float64))
    ics = np.broadcast_to(np.asarray(ic, dtype=np.float64), (t_hat.size, len(ic)))
    out = deeponet_eval_jet(params, Jet.constant(ics.copy()),
                            Jet.constant(t_hat[:, None]))
    return value_of(out.val)


def fbdon_eval_jet(model: OperatorStack, l: int, ics: np.ndarray, t: np.ndarray,
                   wrt_time: bool = False, order: int = 0) -> Jet:
    """Window-weighted stacked operator evaluation over (ic, t) rows."""
    if not 0 <= l <= model.n_levels:
        raise IndexError(f"level {l} out of range 0..{model.n_levels}")
    cfg = model.decomp
    n = t.shape[0]
    ic_jet = Jet.constant(ics, order)

    def trunk_jet(mu, sigma, rows=None):
        tt = t if rows is None else t[rows]
        d1 = np.full((tt.size, 1), 1.0 / sigma) if (wrt_time and order >= 1) else None
        return Jet(((tt - mu) / sigma)[:, None], d1, None, order)

    mu0, sig0 = cfg.center_halfwidth(0, 1)
    u = deeponet_eval_jet(model.level0, ic_jet, trunk_jet(mu0, sig0), order)
    for lvl in model.levels[:l]:
        wjets = window_jets(cfg, lvl.level, t, wrt_time, order)
        out = None
        for j, unit in enumerate(lvl.units, start=1):
            idx = np.nonzero(wjets[j - 1].val[:, 0] > 0.0)[0]
            if idx.size == 0:
                continue
            mu, sigma = cfg.center_halfwidth(lvl.level, j)
            tj = trunk_jet(mu, sigma, idx)
            u_sub = u.take_rows(idx)
            lin = deeponet_eval_jet(unit.linear_net, u_sub, tj, order)
            nl = deeponet_eval_jet(unit.nonlinear_net,
                                   jet_concat([ic_jet.take_rows(idx), u_sub]), tj, order)
            a = absolute(unit.alpha)
            blended = lin.scale(1.0 - a) + nl.scale(a)
            part = jet_scatter_rows(wjets[j - 1].take_rows(idx) * blended, idx, n)
            out = part if out is None else out + part
        u = out
    return u


def fbdon_level_eval(model: OperatorStack, l: int, ic, t) -> np.ndarray:
    """Trajectory prediction for one initial condition at raw times t."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    ics = np.broadcast_to(np.asarray(ic, dtype=np.float64), (t.size, 2)).copy()
    return value_of(fbdon_eval_jet(model, l, ics, t).val)


# -- construction -------------------------------------------------------------------


@dataclass
class OperatorTrainConfig:
    """FB-DON training setup mirroring the operator hyperparameter table."""

    level0_width: int = 100
    level0_layers: int = 5
    level0_iterations: int = 100000
    level0_rate: float = 5e-3
    level0_decay: float = 0.9
    nonlinear_width: int = 100
    nonlinear_layers: int = 3
    linear_width: int = 10
    linear_layers: int = 1
    mf_iterations: int = 200000
    mf_rate: float = 5e-3
    mf_decay: float = 0.9
    activation: str = "sin"
    n_train_ics: int = 50000
    residual_batch: int = 10000
    bc_batch: int = 1000
    weights: LossWeights = None
    seed: int = 0
    decay_steps: int = 2000

    def __post_init__(self):
        if self.weights is None:
            self.weights = LossWeights(1.0, 1.0, 1.0)

    def schedule(self, level: int) -> LrSchedule:
        if level == 0:
            return LrSchedule(self.level0_rate, self.level0_decay, self.decay_steps)
        return LrSchedule(self.mf_rate, self.mf_decay, self.decay_steps)

    def iterations(self, level: int) -> int:
        return self.level0_iterations if level == 0 else self.mf_iterations


def _make_don(branch_in: int, width: int, layers: int, n_basis: int, sol_dim: int,
              activation: str, seed_parts) -> DeepONetParams:
    branch_sizes = [branch_in] + [width] * layers + [n_basis * sol_dim]
    trunk_sizes = [1] + [width] * layers + [n_basis]
    return DeepONetParams(
        init_params(branch_sizes, activation, seedseq(*seed_parts, 0)),
        init_params(trunk_sizes, activation, seedseq(*seed_parts, 1)),
        Tensor(np.zeros(sol_dim)))


def build_operator_stack(decomp_cfg: DecompositionConfig, cfg: OperatorTrainConfig,
                         sol_dim: int = 2, ic_dim: int = 2) -> OperatorStack:
    from .mfstack import ALPHA_INIT

    level0 = _make_don(ic_dim, cfg.level0_width, cfg.level0_layers, cfg.level0_width,
                       sol_dim, cfg.activation, (cfg.seed, 0, 0))
    levels = []
    for l in range(1, decomp_cfg.levels + 1):
        units = []
        for j in range(1, decomp_cfg.n_subdomains(l) + 1):
            lin = _make_don(sol_dim, cfg.linear_width, cfg.linear_layers, cfg.linear_width,
                            sol_dim, "identity", (cfg.seed, l, j, 1))
            nl = _make_don(ic_dim + sol_dim, cfg.nonlinear_width, cfg.nonlinear_layers,
                           cfg.nonlinear_width, sol_dim, cfg.activation, (cfg.seed, l, j, 2))
            units.append(MfUnit(lin, nl, Tensor(np.float64(ALPHA_INIT))))
        levels.append(MfLevel(l, units))
    return OperatorStack(level0, levels, decomp_cfg, list(IC_BOX))


# -- training -------------------------------------------------------------------------


@dataclass
class OperatorReport:
    level: int
    total: np.ndarray
    residual_term: np.ndarray
    constraint_term: np.ndarray
    alpha_term: np.ndarray
    learning_rate: np.ndarray
    n_params: int
    seconds: float = 0.0
    frozen_hash_ok: bool = True


def operator_train_set(cfg: OperatorTrainConfig, ic_box=None) -> np.ndarray:
    """The pool of initial-condition pairs the operator is trained on."""
    box = np.asarray(IC_BOX if ic_box is None else ic_box)
    rng = np.random.default_rng(seedseq(cfg.seed, 31))
    return rng.uniform(box[:, 0], box[:, 1], size=(cfg.n_train_ics, box.shape[0]))


def _operator_level_loss(model: OperatorStack, level: int, ics, t, bc_ics,
                         weights: LossWeights, pend: PendulumParams):
    jet = fbdon_eval_jet(model, level, ics, t, wrt_time=True, order=1)
    res_term = mean_sumsq(pendulum_residual(jet.val, jet.d1, pend))
    u0 = fbdon_eval_jet(model, level, bc_ics, np.zeros(bc_ics.shape[0])).val
    bc_term = mean_sumsq(u0 - bc_ics)
    loss = weights.lambda_r * res_term + weights.lambda_bc * bc_term
    alpha_val = 0.0
    if level >= 1:
        a4 = None
        for unit in model.levels[level - 1].units:
            term = unit.alpha ** 4.0
            a4 = term if a4 is None else a4 + term
        alpha_val = float(value_of(a4))
        loss = loss + weights.lambda_alpha * a4
    return loss, float(value_of(res_term)), float(value_of(bc_term)), alpha_val


def train_operator_level(model: OperatorStack, level: int, cfg: OperatorTrainConfig,
                         train_ics: np.ndarray,
                         pend: PendulumParams = PendulumParams()) -> OperatorReport:
    iters = cfg.iterations(level)
    schedule = cfg.schedule(level)
    params = trainable_params(model, level)
    set_trainable(model, level)
    state = AdamState.for_params(params)
    hist = {k: np.zeros(iters) for k in ("total", "residual", "constraint", "alpha", "lr")}
    t0 = time.perf_counter()
    try:
        for i in range(iters):
            rng = np.random.default_rng(seedseq(cfg.seed, 41, level, i))
            ics = train_ics[rng.integers(0, train_ics.shape[0], cfg.residual_batch)]
            t = rng.uniform(0.0, pend.T, cfg.residual_batch)
            bc_ics = train_ics[rng.integers(0, train_ics.shape[0], cfg.bc_batch)]
            loss, res, bc, al = _operator_level_loss(model, level, ics, t, bc_ics,
                                                     cfg.weights, pend)
            total = float(value_of(loss))
            if not np.isfinite(total):
                raise TrainingDiverged(level, i, model)
            for p in params:
                p.grad = None
            loss.backward()
            grads = [np.zeros_like(p.data) if p.grad is None else p.grad for p in params]
            adam_step(state, params, grads, schedule)
            hist["total"][i] = total
            hist["residual"][i] = res
            hist["constraint"][i] = bc
            hist["alpha"][i] = al
            hist["lr"][i] = schedule.rate(state.step)
    finally:
        set_trainable(model, None)
    return OperatorReport(level, hist["total"], hist["residual"], hist["constraint"],
                          hist["alpha"], hist["lr"],
                          n_params=sum(p.data.size for p in params),
                          seconds=time.perf_counter() - t0)


def train_operator(model: OperatorStack, cfg: OperatorTrainConfig,
                   levels=None, pend: PendulumParams = PendulumParams()):
    """Sequentially train level 0 then each stacking level; returns reports."""
    if levels is None:
        levels = list(range(model.n_levels + 1))
    train_ics = operator_train_set(cfg, model.ic_box)
    reports = []
    for level in levels:
        before = frozen_hash(model, level)
        rep = train_operator_level(model, level, cfg, train_ics, pend)
        rep.frozen_hash_ok = frozen_hash(model, level) == before
        if not rep.frozen_hash_ok:
            raise RuntimeError(f"frozen levels changed while training level {level}")
        reports.append(rep)
    return model, reports
