"""Loss assembly, sequential level-by-level training and error metrics.

Each stacking level is trained on its own: the loss is evaluated through the
full stack truncated at that level, but gradients only reach the level's own
parameters.  Batches are drawn fresh every iteration from seeded substreams,
so a rerun with the same config and seed is bitwise identical.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import mean_sumsq, value_of
from .decomp import DecompositionConfig
from .mfstack import (Stack, build_stack, eval_on_grid, frozen_hash, level_eval_jet,
                      parameter_count, set_trainable, trainable_params)
from .optim import AdamState, LrSchedule, adam_step
from .problems import ProblemSpec, sample_collocation
from .util import seedseq, write_csv


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries the last finite state for inspection."""

    def __init__(self, level: int, iteration: int, stack: Stack):
        super().__init__(f"loss diverged at level {level}, iteration {iteration}")
        self.level = level
        self.iteration = iteration
        self.stack = stack


@dataclass
class LossWeights:
    lambda_r: float = 1.0
    lambda_bc: float = 1.0
    lambda_alpha: float = 1.0

    def __post_init__(self):
        for v in (self.lambda_r, self.lambda_bc, self.lambda_alpha):
            if not np.isfinite(v) or v < 0:
                raise ValueError("loss weights must be finite and non-negative")


@dataclass
class TrainConfig:
    """Per-problem training setup mirroring the default hyperparameter tables."""

    level0_width: int
    level0_layers: int  # hidden layers
    level0_activation: str
    level0_iterations: int
    level0_rate: float
    level0_decay: float
    nonlinear_width: int
    nonlinear_layers: int  # hidden layers
    linear_sizes: list
    mf_activation: str
    mf_iterations: int
    mf_rate: float
    mf_decay: float
    residual_batch: int
    bc_batch: int
    weights: LossWeights
    seed: int = 0
    decay_steps: int = 2000

    def schedule(self, level: int) -> LrSchedule:
        if level == 0:
            return LrSchedule(self.level0_rate, self.level0_decay, self.decay_steps)
        return LrSchedule(self.mf_rate, self.mf_decay, self.decay_steps)

    def iterations(self, level: int) -> int:
        return self.level0_iterations if level == 0 else self.mf_iterations


@dataclass
class TrainReport:
    level: int
    total: np.ndarray
    residual_term: np.ndarray
    constraint_term: np.ndarray
    alpha_term: np.ndarray
    learning_rate: np.ndarray
    n_params: int
    seconds: float = 0.0
    frozen_hash_ok: bool = True


def stack_for(problem: ProblemSpec, decomp_cfg: DecompositionConfig,
              cfg: TrainConfig) -> Stack:
    """Initialise a stack with the layer shapes implied by the config."""
    level0_sizes = [problem.coord_dim] + [cfg.level0_width] * cfg.level0_layers + [problem.sol_dim]
    nl_sizes = ([problem.coord_dim + problem.sol_dim]
                + [cfg.nonlinear_width] * cfg.nonlinear_layers + [problem.sol_dim])
    lin = list(cfg.linear_sizes)
    if lin[0] != problem.sol_dim or lin[-1] != problem.sol_dim:
        raise ValueError(f"linear net must map solution dim {problem.sol_dim} to itself, got {lin}")
    return build_stack(decomp_cfg, level0_sizes, cfg.level0_activation,
                       lin, nl_sizes, cfg.mf_activation, cfg.seed)


def assemble_loss(stack: Stack, level: int, residual_coords: np.ndarray,
                  constraint_batch, problem: ProblemSpec, weights: LossWeights):
    """Weighted residual + constraint + alpha**4 loss through the given level.

    Returns (scalar tensor, components dict); components are plain floats in
    the same order the CSV history records them.
    """
    jets = {spec: level_eval_jet(stack, level, residual_coords, spec[0], spec[1])
            for spec in problem.deriv_specs}
    res = problem.residual(residual_coords, jets)
    res_term = mean_sumsq(res)

    def eval_fn(coords, wrt, order):
        return level_eval_jet(stack, level, coords, wrt, order)

    bc_term = mean_sumsq(problem.constraint_residual(eval_fn, constraint_batch))
    loss = weights.lambda_r * res_term + weights.lambda_bc * bc_term
    alpha_val = 0.0
    if level >= 1:
        a4 = None
        for unit in stack.levels[level - 1].units:
            term = unit.alpha ** 4.0
            a4 = term if a4 is None else a4 + term
        alpha_val = float(value_of(a4))
        loss = loss + weights.lambda_alpha * a4
    comps = {
        "residual": float(value_of(res_term)),
        "constraint": float(value_of(bc_term)),
        "alpha": alpha_val,
    }
    return loss, comps


def train_level(stack: Stack, level: int, problem: ProblemSpec,
                cfg: TrainConfig) -> TrainReport:
    """Adam-train exactly the parameters of `level`; lower levels stay frozen."""
    iters = cfg.iterations(level)
    schedule = cfg.schedule(level)
    params = trainable_params(stack, level)
    set_trainable(stack, level)
    state = AdamState.for_params(params)
    hist = {k: np.zeros(iters) for k in ("total", "residual", "constraint", "alpha", "lr")}
    bounds = problem.domain
    t0 = time.perf_counter()
    try:
        for i in range(iters):
            coords = sample_collocation(bounds, cfg.residual_batch,
                                        seedseq(cfg.seed, 11, level).generate_state(1)[0],
                                        draw=i)
            crng = np.random.default_rng(seedseq(cfg.seed, 13, level, i))
            cbatch = problem.constraint_batch(crng, cfg.bc_batch)
            loss, comps = assemble_loss(stack, level, coords, cbatch, problem, cfg.weights)
            total = float(value_of(loss))
            if not np.isfinite(total):
                raise TrainingDiverged(level, i, stack)
            for p in params:
                p.grad = None
            loss.backward()
            grads = [np.zeros_like(p.data) if p.grad is None else p.grad for p in params]
            adam_step(state, params, grads, schedule)
            hist["total"][i] = total
            hist["residual"][i] = comps["residual"]
            hist["constraint"][i] = comps["constraint"]
            hist["alpha"][i] = comps["alpha"]
            hist["lr"][i] = schedule.rate(state.step)
    finally:
        set_trainable(stack, None)
    return TrainReport(level, hist["total"], hist["residual"], hist["constraint"],
                       hist["alpha"], hist["lr"],
                       n_params=sum(p.data.size for p in params),
                       seconds=time.perf_counter() - t0)


def relative_l2(predicted: np.ndarray, exact: np.ndarray) -> float:
    """||u - u_hat||_2 / ||u||_2 over the flattened evaluation grid."""
    predicted = np.asarray(predicted, dtype=np.float64)
    exact = np.asarray(exact, dtype=np.float64)
    if predicted.shape != exact.shape:
        raise ValueError(f"shape mismatch {predicted.shape} vs {exact.shape}")
    denom = np.linalg.norm(exact.ravel())
    if denom == 0.0:
        raise ValueError("exact solution has zero norm")
    return float(np.linalg.norm((predicted - exact).ravel()) / denom)


@dataclass
class ExperimentResult:
    stack: Stack
    reports: list
    levels: list
    grid_error: list
    train_error: list
    parameters: list  # cumulative through each level
    seconds: list = field(default_factory=list)


def run_experiment(problem: ProblemSpec, decomp_cfg: DecompositionConfig,
                   cfg: TrainConfig, levels=None, oracle=None,
                   out_dir=None, config_tag: str = "", threads=None) -> ExperimentResult:
    """Train level 0 then each stacking level; record errors after every stage.

    The freezing invariant (levels below the one being trained are bit
    identical before and after) is verified on every stage and violations
    raise immediately.
    """
    if levels is None:
        levels = list(range(decomp_cfg.levels + 1))
    if oracle is None:
        oracle = problem.reference()
    stack = stack_for(problem, decomp_cfg, cfg)
    grid = problem.eval_grid()
    exact_grid = oracle.eval(grid)
    train_pts = sample_collocation(problem.domain, 2000,
                                   seedseq(cfg.seed, 17).generate_state(1)[0])
    exact_train = oracle.eval(train_pts)

    result = ExperimentResult(stack, [], [], [], [], [])
    for level in levels:
        before = frozen_hash(stack, level)
        report = train_level(stack, level, problem, cfg)
        report.frozen_hash_ok = frozen_hash(stack, level) == before
        if not report.frozen_hash_ok:
            raise RuntimeError(f"frozen levels changed while training level {level}")
        result.reports.append(report)
        result.levels.append(level)
        result.grid_error.append(relative_l2(eval_on_grid(stack, level, grid, threads), exact_grid))
        result.train_error.append(relative_l2(eval_on_grid(stack, level, train_pts, threads), exact_train))
        result.parameters.append(parameter_count(stack, range(level + 1)))
        result.seconds.append(report.seconds)
        if out_dir is not None:
            _write_outputs(out_dir, result, report, config_tag)
    return result


def _write_outputs(out_dir, result: ExperimentResult, report: TrainReport, tag: str):
    import os

    from .checkpoint import save_stack

    os.makedirs(out_dir, exist_ok=True)
    head = f"config_hash={tag}" if tag else ""
    write_csv(os.path.join(out_dir, f"history_{report.level}.csv"), {
        "iteration": np.arange(len(report.total)),
        "total": report.total,
        "residual": report.residual_term,
        "constraint": report.constraint_term,
        "alpha": report.alpha_term,
        "learning_rate": report.learning_rate,
    }, head)
    write_csv(os.path.join(out_dir, "errors.csv"), {
        "level": np.asarray(result.levels),
        "relative_l2": np.asarray(result.grid_error),
        "relative_l2_train": np.asarray(result.train_error),
        "parameters": np.asarray(result.parameters),
    }, head)
    # wall-clock lives apart from errors.csv so reruns stay bitwise identical
    write_csv(os.path.join(out_dir, "timings.csv"), {
        "level": np.asarray(result.levels),
        "seconds": np.asarray(result.seconds),
    }, head)
    save_stack(os.path.join(out_dir, "stack.npz"), result.stack, tag)
