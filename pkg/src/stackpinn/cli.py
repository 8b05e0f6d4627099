"""Experiment runner: config parsing, train/eval/oracle/inspect subcommands.

Configs are single YAML documents (bundled presets use the .cfg extension).
Unknown keys are rejected; semantic errors name the offending key path.
Exit codes: 0 success, 2 invalid config/checkpoint, 3 divergence or oracle
non-convergence.
"""

from __future__ import annotations

import argparse
import os
import sys
from importlib import resources

import numpy as np
import yaml

from .checkpoint import (CheckpointError, DON_FORMAT, STACK_FORMAT, checkpoint_meta,
                         load_operator, load_stack, save_operator)
from .decomp import DecompositionConfig
from .deeponet import (OperatorTrainConfig, build_operator_stack, fbdon_level_eval,
                       train_operator)
from .mfstack import eval_on_grid, parameter_count
from .problems import (AllenCahnOracle, MultiscaleOracle, OracleError, PendulumOracle,
                       PendulumParams, make_problem)
from .trainer import (LossWeights, TrainConfig, TrainingDiverged, relative_l2,
                      run_experiment)
from .util import config_hash, write_csv


class ConfigError(ValueError):
    pass


PROBLEMS = ("pendulum", "multiscale", "allen-cahn", "pendulum-operator")

# schema: key -> (required, type) ; nested dicts hold their own schemas
_DECOMP_SCHEMA = {"levels": (True, int), "overlap": (False, float),
                  "subdomains": (False, list)}
_WEIGHTS_SCHEMA = {"residual": (True, float), "bc": (True, float), "alpha": (True, float)}
_LEVEL0_SCHEMA = {"width": (True, int), "layers": (True, int), "activation": (True, str),
                  "iterations": (True, int), "learning_rate": (True, float),
                  "decay_rate": (True, float)}
_MF_SCHEMA = {"nonlinear_width": (True, int), "nonlinear_layers": (True, int),
              "linear_sizes": (True, list), "activation": (True, str),
              "iterations": (True, int), "learning_rate": (True, float),
              "decay_rate": (True, float)}
_TRAIN_SCHEMA = {"level0": (True, dict), "mf": (True, dict),
                 "residual_batch": (True, int), "bc_batch": (True, int),
                 "weights": (True, dict), "decay_steps": (False, int)}
_OP_LEVEL0_SCHEMA = {"width": (True, int), "layers": (True, int),
                     "iterations": (True, int), "learning_rate": (True, float),
                     "decay_rate": (True, float)}
_OP_MF_SCHEMA = {"nonlinear_width": (True, int), "nonlinear_layers": (True, int),
                 "linear_width": (True, int), "linear_layers": (True, int),
                 "iterations": (True, int), "learning_rate": (True, float),
                 "decay_rate": (True, float)}
_OP_TRAIN_SCHEMA = {"level0": (True, dict), "mf": (True, dict),
                    "activation": (True, str), "n_train_ics": (True, int),
                    "residual_batch": (True, int), "bc_batch": (True, int),
                    "weights": (True, dict), "decay_steps": (False, int)}
_ORACLE_SCHEMA = {"n_modes": (False, int), "dt": (False, float), "check": (False, bool)}
_TOP_SCHEMA = {"problem": (True, str), "seed": (False, int), "out": (False, str),
               "decomposition": (True, dict), "training": (True, dict),
               "oracle": (False, dict)}


def _validate(section: dict, schema: dict, path: str):
    if not isinstance(section, dict):
        raise ConfigError(f"{path}: expected a mapping")
    for key in section:
        if key not in schema:
            raise ConfigError(f"{path}.{key}: unknown key")
    for key, (required, typ) in schema.items():
        if key not in section:
            if required:
                raise ConfigError(f"{path}.{key}: missing required key")
            continue
        val = section[key]
        if typ is float and isinstance(val, int):
            continue
        if not isinstance(val, typ) or (typ is int and isinstance(val, bool)):
            raise ConfigError(f"{path}.{key}: expected {typ.__name__}, got {type(val).__name__}")


def bundled_config_path(name: str):
    ref = resources.files("stackpinn").joinpath("configs", name)
    return ref if ref.is_file() else None


def load_config(path_or_name: str) -> dict:
    """Parse and validate a config file (a path or a bundled preset name)."""
    path = path_or_name
    if not os.path.exists(path):
        bundled = bundled_config_path(os.path.basename(path_or_name))
        if bundled is None:
            raise ConfigError(f"config file not found: {path_or_name}")
        text = bundled.read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        where = f" (line {mark.line + 1})" if mark else ""
        raise ConfigError(f"{path_or_name}: YAML parse error{where}: {e}") from e
    _validate(raw, _TOP_SCHEMA, "config")
    problem = raw["problem"]
    if problem not in PROBLEMS:
        raise ConfigError(f"config.problem: unknown problem '{problem}'")
    _validate(raw["decomposition"], _DECOMP_SCHEMA, "config.decomposition")
    if problem == "pendulum-operator":
        _validate(raw["training"], _OP_TRAIN_SCHEMA, "config.training")
        _validate(raw["training"]["level0"], _OP_LEVEL0_SCHEMA, "config.training.level0")
        _validate(raw["training"]["mf"], _OP_MF_SCHEMA, "config.training.mf")
    else:
        _validate(raw["training"], _TRAIN_SCHEMA, "config.training")
        _validate(raw["training"]["level0"], _LEVEL0_SCHEMA, "config.training.level0")
        _validate(raw["training"]["mf"], _MF_SCHEMA, "config.training.mf")
    _validate(raw["training"]["weights"], _WEIGHTS_SCHEMA, "config.training.weights")
    if "oracle" in raw:
        _validate(raw["oracle"], _ORACLE_SCHEMA, "config.oracle")
    return raw


def decomposition_from(raw: dict, horizon: float) -> DecompositionConfig:
    d = raw["decomposition"]
    return DecompositionConfig(T=horizon, levels=d["levels"],
                               delta=float(d.get("overlap", 2.0)),
                               subdomains=d.get("subdomains"))


def train_config_from(raw: dict) -> TrainConfig:
    t = raw["training"]
    l0, mf, w = t["level0"], t["mf"], t["weights"]
    return TrainConfig(
        level0_width=l0["width"], level0_layers=l0["layers"],
        level0_activation=l0["activation"], level0_iterations=l0["iterations"],
        level0_rate=float(l0["learning_rate"]), level0_decay=float(l0["decay_rate"]),
        nonlinear_width=mf["nonlinear_width"], nonlinear_layers=mf["nonlinear_layers"],
        linear_sizes=list(mf["linear_sizes"]), mf_activation=mf["activation"],
        mf_iterations=mf["iterations"], mf_rate=float(mf["learning_rate"]),
        mf_decay=float(mf["decay_rate"]), residual_batch=t["residual_batch"],
        bc_batch=t["bc_batch"],
        weights=LossWeights(float(w["residual"]), float(w["bc"]), float(w["alpha"])),
        seed=int(raw.get("seed", 0)), decay_steps=int(t.get("decay_steps", 2000)))


def operator_config_from(raw: dict) -> OperatorTrainConfig:
    t = raw["training"]
    l0, mf, w = t["level0"], t["mf"], t["weights"]
    return OperatorTrainConfig(
        level0_width=l0["width"], level0_layers=l0["layers"],
        level0_iterations=l0["iterations"], level0_rate=float(l0["learning_rate"]),
        level0_decay=float(l0["decay_rate"]), nonlinear_width=mf["nonlinear_width"],
        nonlinear_layers=mf["nonlinear_layers"], linear_width=mf["linear_width"],
        linear_layers=mf["linear_layers"], mf_iterations=mf["iterations"],
        mf_rate=float(mf["learning_rate"]), mf_decay=float(mf["decay_rate"]),
        activation=t["activation"], n_train_ics=t["n_train_ics"],
        residual_batch=t["residual_batch"], bc_batch=t["bc_batch"],
        weights=LossWeights(float(w["residual"]), float(w["bc"]), float(w["alpha"])),
        seed=int(raw.get("seed", 0)), decay_steps=int(t.get("decay_steps", 2000)))


def build_oracle(problem_name: str, opts: dict | None = None, cache: str | None = None):
    opts = dict(opts or {})
    if problem_name == "multiscale":
        return MultiscaleOracle()
    if problem_name in ("pendulum", "pendulum-operator"):
        return PendulumOracle(**opts)
    if cache and os.path.exists(cache):
        return AllenCahnOracle.load(cache)
    oracle = AllenCahnOracle.build(**opts)
    if cache:
        os.makedirs(os.path.dirname(cache) or ".", exist_ok=True)
        oracle.save(cache)
    return oracle


# -- subcommands ----------------------------------------------------------------------


def cmd_train(args) -> int:
    try:
        raw = load_config(args.config)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    if args.seed is not None:
        raw["seed"] = args.seed
    out_dir = args.out or raw.get("out") or "runs/" + raw["problem"]
    tag = config_hash(raw)
    os.makedirs(out_dir, exist_ok=True)
    try:
        if raw["problem"] == "pendulum-operator":
            return _train_operator(raw, args, out_dir, tag)
        problem = make_problem(raw["problem"])
        decomp = decomposition_from(raw, problem.horizon)
        cfg = train_config_from(raw)
        levels = None if args.levels is None else list(range(args.levels + 1))
        oracle = build_oracle(problem.name, raw.get("oracle"),
                              cache=os.path.join(out_dir, "oracle.npz")
                              if problem.name == "allen-cahn" else None)
        result = run_experiment(problem, decomp, cfg, levels=levels, oracle=oracle,
                                out_dir=out_dir, config_tag=tag)
    except TrainingDiverged as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    for lvl, err in zip(result.levels, result.grid_error):
        print(f"level {lvl}: relative_l2 {err:.6e}  "
              f"params {result.parameters[result.levels.index(lvl)]}")
    print(f"outputs written to {out_dir}")
    return 0


def _train_operator(raw, args, out_dir, tag) -> int:
    cfg = operator_config_from(raw)
    decomp = decomposition_from(raw, PendulumOracle().p.T)
    model = build_operator_stack(decomp, cfg)
    levels = None if args.levels is None else list(range(args.levels + 1))
    try:
        model, reports = train_operator(model, cfg, levels=levels)
    except TrainingDiverged as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    save_operator(os.path.join(out_dir, "operator.npz"), model, tag)
    t = np.linspace(0.0, 20.0, 401)
    errors = []
    for ic in ((1.0, 1.0), (-0.5, -0.4)):
        exact = PendulumOracle(PendulumParams(s0=ic)).eval(t)
        errors.append(relative_l2(fbdon_level_eval(model, model.n_levels, ic, t), exact))
    for rep in reports:
        write_csv(os.path.join(out_dir, f"history_{rep.level}.csv"), {
            "iteration": np.arange(len(rep.total)), "total": rep.total,
            "residual": rep.residual_term, "constraint": rep.constraint_term,
            "alpha": rep.alpha_term, "learning_rate": rep.learning_rate}, f"config_hash={tag}")
    write_csv(os.path.join(out_dir, "errors.csv"), {
        "ic": np.asarray(["(1,1)", "(-0.5,-0.4)"]),
        "relative_l2": np.asarray(errors)}, f"config_hash={tag}")
    print("test-IC relative_l2:", ", ".join(f"{e:.4e}" for e in errors))
    print(f"outputs written to {out_dir}")
    return 0


def cmd_eval(args) -> int:
    try:
        meta = checkpoint_meta(args.checkpoint)
    except (CheckpointError, FileNotFoundError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    if meta["format"] == DON_FORMAT:
        return _eval_operator(args)
    if meta["format"] != STACK_FORMAT:
        print(f"error: cannot evaluate checkpoint of format {meta['format']}", file=sys.stderr)
        return 2
    stack = load_stack(args.checkpoint)
    problem = make_problem(args.problem)
    oracle = build_oracle(problem.name, cache=args.oracle_cache)
    out_dir = args.out or os.path.dirname(os.path.abspath(args.checkpoint))
    os.makedirs(out_dir, exist_ok=True)
    if args.times:
        if problem.name != "allen-cahn":
            print("error: --times only applies to allen-cahn", file=sys.stderr)
            return 2
        for tval in args.times:
            x = -1.0 + 2.0 * np.arange(256) / 256
            coords = np.column_stack([x, np.full_like(x, tval)])
            pred = eval_on_grid(stack, stack.n_levels, coords)
            exact = oracle.eval(coords)
            path = os.path.join(out_dir, f"solution_t{tval}.csv")
            write_csv(path, {"x": x, "predicted": pred[:, 0], "oracle": exact[:, 0],
                             "error": pred[:, 0] - exact[:, 0]})
            print(f"slice t={tval} -> {path}")
        return 0
    grid = problem.eval_grid()
    exact = oracle.eval(grid)
    final = None
    for level in range(stack.n_levels + 1):
        pred = eval_on_grid(stack, level, grid)
        err = relative_l2(pred, exact)
        print(f"level {level}: relative_l2 {err:.6e}")
        final = pred
    cols = {f"x{i}": grid[:, i] for i in range(grid.shape[1])}
    for c in range(final.shape[1]):
        cols[f"predicted{c}"] = final[:, c]
        cols[f"oracle{c}"] = exact[:, c]
        cols[f"error{c}"] = final[:, c] - exact[:, c]
    path = os.path.join(out_dir, "solution.csv")
    write_csv(path, cols)
    print(f"solution written to {path}")
    return 0


def _eval_operator(args) -> int:
    model = load_operator(args.checkpoint)
    ic = tuple(args.ic) if args.ic else (1.0, 1.0)
    t = np.linspace(0.0, model.decomp.T, 401)
    pred = fbdon_level_eval(model, model.n_levels, ic, t)
    oracle = PendulumOracle(PendulumOracle().p.__class__(s0=ic))
    exact = oracle.eval(t)
    print(f"ic={ic}: relative_l2 {relative_l2(pred, exact):.6e}")
    out_dir = args.out or os.path.dirname(os.path.abspath(args.checkpoint))
    path = os.path.join(out_dir, "trajectory.csv")
    write_csv(path, {"t": t, "predicted_s1": pred[:, 0], "predicted_s2": pred[:, 1],
                     "oracle_s1": exact[:, 0], "oracle_s2": exact[:, 1]})
    print(f"trajectory written to {path}")
    return 0


def cmd_oracle(args) -> int:
    try:
        if args.problem == "multiscale":
            print("multiscale oracle is closed-form; nothing to build")
            return 0
        if args.problem == "pendulum":
            oracle = PendulumOracle()
            print(f"pendulum RK45 oracle built (rtol=atol=1e-10); "
                  f"max energy increase {oracle.max_energy_increase():.3e}")
            return 0
        opts = {}
        if args.n_modes:
            opts["n_modes"] = args.n_modes
        if args.dt:
            opts["dt"] = args.dt
        oracle = AllenCahnOracle.build(check=True, **opts)
    except OracleError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    if args.out:
        os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
        oracle.save(args.out)
        print(f"cache written to {args.out}")
    print(f"allen-cahn oracle: n_modes={oracle.n_modes} dt={oracle.dt} "
          f"self-convergence delta {oracle.self_delta:.3e} (< 1e-6 required)")
    return 0


def cmd_inspect(args) -> int:
    try:
        meta = checkpoint_meta(args.checkpoint)
    except (CheckpointError, FileNotFoundError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    for key in sorted(meta):
        print(f"{key}: {meta[key]}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="stackpinn",
                                     description="Stacked multifidelity FBPINN experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run a training experiment from a config")
    p.add_argument("--config", required=True, help="config path or bundled preset name")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--levels", type=int, default=None, help="train levels 0..LEVELS only")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint against the oracle")
    p.add_argument("checkpoint")
    p.add_argument("--problem", default="multiscale", choices=PROBLEMS[:3])
    p.add_argument("--out", default=None)
    p.add_argument("--oracle-cache", default=None)
    p.add_argument("--times", type=float, nargs="*", default=None,
                   help="allen-cahn line-plot slices, e.g. --times 0.25 0.75")
    p.add_argument("--ic", type=float, nargs=2, default=None,
                   help="initial condition for operator checkpoints")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("oracle", help="build and cache a reference oracle")
    p.add_argument("problem", choices=PROBLEMS[:3])
    p.add_argument("--out", default=None)
    p.add_argument("--n-modes", type=int, default=None)
    p.add_argument("--dt", type=float, default=None)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("inspect", help="dump checkpoint metadata")
    p.add_argument("checkpoint")
    p.set_defaults(func=cmd_inspect)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
