"""Versioned npz checkpoints for networks, stacks and operator models."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .decomp import DecompositionConfig
from .mfstack import MfLevel, MfUnit, Stack
from .nn import NetworkParams

NET_FORMAT = "stackpinn-net-v1"
STACK_FORMAT = "stackpinn-stack-v1"
DON_FORMAT = "stackpinn-don-v1"


class CheckpointError(RuntimeError):
    pass


def _pack_net(out: dict, prefix: str, p: NetworkParams):
    out[f"{prefix}sizes"] = np.asarray(p.layer_sizes, dtype=np.int64)
    out[f"{prefix}activation"] = p.activation
    out[f"{prefix}seed"] = -1 if p.seed is None else p.seed
    for k, (w, b) in enumerate(zip(p.weights, p.biases)):
        out[f"{prefix}W{k}"] = np.ascontiguousarray(w.data)
        out[f"{prefix}b{k}"] = b.data


def _unpack_net(z, prefix: str) -> NetworkParams:
    sizes = [int(s) for s in z[f"{prefix}sizes"]]
    weights = [Tensor(z[f"{prefix}W{k}"]) for k in range(len(sizes) - 1)]
    biases = [Tensor(z[f"{prefix}b{k}"]) for k in range(len(sizes) - 1)]
    seed = int(z[f"{prefix}seed"])
    return NetworkParams(sizes, weights, biases, str(z[f"{prefix}activation"]),
                         None if seed < 0 else seed)


def _check_format(z, want: str, path):
    if "format" not in z or str(z["format"]) != want:
        got = str(z["format"]) if "format" in z else "<missing>"
        raise CheckpointError(f"{path}: format tag {got!r} != {want!r}")


def save_network(path, params: NetworkParams):
    out = {"format": NET_FORMAT}
    _pack_net(out, "", params)
    np.savez(path, **out)


def load_network(path) -> NetworkParams:
    z = np.load(path, allow_pickle=False)
    _check_format(z, NET_FORMAT, path)
    return _unpack_net(z, "")


def save_stack(path, stack: Stack, config_hash: str = ""):
    out = {
        "format": STACK_FORMAT,
        "config_hash": config_hash,
        "T": stack.decomp.T,
        "levels": stack.decomp.levels,
        "delta": stack.decomp.delta,
        "subdomains": np.asarray(stack.decomp.subdomains, dtype=np.int64),
    }
    _pack_net(out, "l0__", stack.level0)
    for lvl in stack.levels:
        for j, u in enumerate(lvl.units, start=1):
            pre = f"l{lvl.level}__u{j}__"
            _pack_net(out, pre + "lin__", u.linear_net)
            _pack_net(out, pre + "nl__", u.nonlinear_net)
            out[pre + "alpha"] = u.alpha.data
    np.savez(path, **out)


def load_stack(path) -> Stack:
    z = np.load(path, allow_pickle=False)
    _check_format(z, STACK_FORMAT, path)
    cfg = DecompositionConfig(T=float(z["T"]), levels=int(z["levels"]),
                              delta=float(z["delta"]),
                              subdomains=[int(s) for s in z["subdomains"]])
    level0 = _unpack_net(z, "l0__")
    levels = []
    for l in range(1, cfg.levels + 1):
        units = []
        for j in range(1, cfg.n_subdomains(l) + 1):
            pre = f"l{l}__u{j}__"
            units.append(MfUnit(_unpack_net(z, pre + "lin__"),
                                _unpack_net(z, pre + "nl__"),
                                Tensor(z[pre + "alpha"])))
        levels.append(MfLevel(l, units))
    return Stack(level0, levels, cfg)


def checkpoint_meta(path) -> dict:
    """Format tag plus the lightweight metadata of any stackpinn checkpoint."""
    z = np.load(path, allow_pickle=False)
    if "format" not in z:
        raise CheckpointError(f"{path}: not a stackpinn checkpoint")
    meta = {"format": str(z["format"])}
    for key in z.files:
        val = z[key]
        if val.ndim == 0:
            meta[key] = val.item() if val.dtype.kind in "if" else str(val)
        elif val.size <= 8 and key.endswith(("sizes", "subdomains")):
            meta[key] = [int(v) for v in val]
    return meta


def save_operator(path, model, config_hash: str = ""):
    from .deeponet import OperatorStack  # local import to avoid a cycle

    assert isinstance(model, OperatorStack)
    out = {
        "format": DON_FORMAT,
        "config_hash": config_hash,
        "T": model.decomp.T,
        "levels": model.decomp.levels,
        "delta": model.decomp.delta,
        "subdomains": np.asarray(model.decomp.subdomains, dtype=np.int64),
        "ic_box": np.asarray(model.ic_box),
    }

    def pack_don(pre, don):
        _pack_net(out, pre + "branch__", don.branch)
        _pack_net(out, pre + "trunk__", don.trunk)
        out[pre + "bias"] = don.bias.data

    pack_don("l0__", model.level0)
    for lvl in model.levels:
        for j, u in enumerate(lvl.units, start=1):
            pre = f"l{lvl.level}__u{j}__"
            pack_don(pre + "lin__", u.linear_net)
            pack_don(pre + "nl__", u.nonlinear_net)
            out[pre + "alpha"] = u.alpha.data
    np.savez(path, **out)


def load_operator(path):
    from .deeponet import DeepONetParams, OperatorStack

    z = np.load(path, allow_pickle=False)
    _check_format(z, DON_FORMAT, path)
    cfg = DecompositionConfig(T=float(z["T"]), levels=int(z["levels"]),
                              delta=float(z["delta"]),
                              subdomains=[int(s) for s in z["subdomains"]])

    def unpack_don(pre):
        return DeepONetParams(_unpack_net(z, pre + "branch__"),
                              _unpack_net(z, pre + "trunk__"),
                              Tensor(z[pre + "bias"]))

    level0 = unpack_don("l0__")
    levels = []
    for l in range(1, cfg.levels + 1):
        units = []
        for j in range(1, cfg.n_subdomains(l) + 1):
            pre = f"l{l}__u{j}__"
            units.append(MfUnit(unpack_don(pre + "lin__"), unpack_don(pre + "nl__"),
                                Tensor(z[pre + "alpha"])))
        levels.append(MfLevel(l, units))
    return OperatorStack(level0, levels, cfg, ic_box=[tuple(r) for r in z["ic_box"]])
