"""Multifidelity stacking: per-subdomain blend units and level recursion.

A stack is a single-fidelity level-0 network plus one multifidelity level per
stacking stage.  Each unit blends a linear (identity-activation) network fed
only the previous level's output with a nonlinear network fed the scaled
coordinates and the previous output:

    (1 - |alpha|) * linear(u_prev)  +  |alpha| * nonlinear([coords, u_prev])

The level output is the partition-of-unity-weighted sum of its units; the
stack output is the final level alone (no 1/L averaging).  Units whose window
vanishes on a batch row are never evaluated there.

Coordinate convention: time is the LAST column of the coordinate batch; the
decomposition and input scaling act on that column only.
"""

from __future__ import annotations

import hashlib
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .autodiff import Jet, Tensor, absolute, jet_concat, jet_scatter_rows, value_of
from .decomp import DecompositionConfig, window_jets
from .nn import NetworkParams, init_params, mlp_jet
from .util import seedseq

ALPHA_INIT = 0.1
_EVAL_CHUNK = 4096  # fixed, so results never depend on the thread count


@dataclass
class MfUnit:
    """One subdomain's linear/nonlinear pair with its trainable blend weight."""

    linear_net: NetworkParams
    nonlinear_net: NetworkParams
    alpha: Tensor

    def tensors(self) -> list:
        return self.linear_net.tensors() + self.nonlinear_net.tensors() + [self.alpha]

    def n_params(self) -> int:
        return self.linear_net.n_params() + self.nonlinear_net.n_params() + 1


@dataclass
class MfLevel:
    level: int
    units: list

    def tensors(self) -> list:
        return [t for u in self.units for t in u.tensors()]


@dataclass
class Stack:
    level0: NetworkParams
    levels: list
    decomp: DecompositionConfig

    def __post_init__(self):
        for k, lvl in enumerate(self.levels):
            if lvl.level != k + 1:
                raise ValueError("levels must be ordered 1..L")
            want = self.decomp.n_subdomains(k + 1)
            if len(lvl.units) != want:
                raise ValueError(f"level {k + 1} needs {want} units, got {len(lvl.units)}")

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def coord_dim(self) -> int:
        return self.level0.in_dim

    @property
    def sol_dim(self) -> int:
        return self.level0.out_dim


def build_stack(decomp_cfg: DecompositionConfig, level0_sizes, level0_activation: str,
                linear_sizes, nonlinear_sizes, mf_activation: str, seed: int) -> Stack:
    """Initialise a full stack; every net gets its own derived seed."""
    level0 = init_params(level0_sizes, level0_activation, seedseq(seed, 0, 0, 0))
    levels = []
    for l in range(1, decomp_cfg.levels + 1):
        units = []
        for j in range(1, decomp_cfg.n_subdomains(l) + 1):
            lin = init_params(linear_sizes, "identity", seedseq(seed, l, j, 1))
            nl = init_params(nonlinear_sizes, mf_activation, seedseq(seed, l, j, 2))
            units.append(MfUnit(lin, nl, Tensor(np.float64(ALPHA_INIT))))
        levels.append(MfLevel(l, units))
    return Stack(level0, levels, decomp_cfg)


def mf_eval_jet(unit: MfUnit, coord_jet: Jet, u_prev: Jet, order: int = 0) -> Jet:
    """Blend (1-|a|)*linear(u_prev) + |a|*nonlinear([coords, u_prev])."""
    lin = mlp_jet(unit.linear_net, u_prev, order)
    nl = mlp_jet(unit.nonlinear_net, jet_concat([coord_jet, u_prev]), order)
    a = absolute(unit.alpha)
    return lin.scale(1.0 - a) + nl.scale(a)


def mf_eval(unit: MfUnit, scaled_coord, u_prev):
    """Plain-value blend on a vector or batch (spec-level entry point)."""
    c = np.atleast_2d(np.asarray(scaled_coord, dtype=np.float64))
    u = np.atleast_2d(np.asarray(u_prev, dtype=np.float64))
    out = value_of(mf_eval_jet(unit, Jet.constant(c), Jet.constant(u)).val)
    return out[0] if np.asarray(scaled_coord).ndim <= 1 else out


def _scaled_coord_jet(coords: np.ndarray, mu: float, sigma: float,
                      wrt: int | None, order: int) -> Jet:
    """Coordinate jet with the time column mapped onto [-1, 1] for one subdomain."""
    scaled = coords.copy()
    scaled[:, -1] = (coords[:, -1] - mu) / sigma
    d1 = None
    if wrt is not None and order >= 1:
        d1 = np.zeros_like(coords)
        d1[:, wrt] = 1.0 / sigma if wrt == coords.shape[1] - 1 else 1.0
    return Jet(scaled, d1, None, order)


def level_eval_jet(stack: Stack, l: int, coords: np.ndarray,
                   wrt: int | None = None, order: int = 0) -> Jet:
    """Stacked evaluation through level l as a jet along coordinate `wrt`.

    Runs bottom-up so every lower level is evaluated exactly once per batch.
    """
    if not 0 <= l <= stack.n_levels:
        raise IndexError(f"level {l} out of range 0..{stack.n_levels}")
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] != stack.coord_dim:
        raise ValueError(f"coords must have shape (n, {stack.coord_dim})")
    cfg = stack.decomp
    mu0, sig0 = cfg.center_halfwidth(0, 1)
    u = mlp_jet(stack.level0, _scaled_coord_jet(coords, mu0, sig0, wrt, order), order)
    n = coords.shape[0]
    wrt_time = wrt == stack.coord_dim - 1
    for lvl in stack.levels[:l]:
        wjets = window_jets(cfg, lvl.level, coords[:, -1], wrt_time, order)
        out = None
        for j, unit in enumerate(lvl.units, start=1):
            idx = np.nonzero(wjets[j - 1].val[:, 0] > 0.0)[0]
            if idx.size == 0:
                continue
            mu, sigma = cfg.center_halfwidth(lvl.level, j)
            cj = _scaled_coord_jet(coords[idx], mu, sigma, wrt, order)
            mf = mf_eval_jet(unit, cj, u.take_rows(idx), order)
            part = jet_scatter_rows(wjets[j - 1].take_rows(idx) * mf, idx, n)
            out = part if out is None else out + part
        u = out
    return u


def level_eval(stack: Stack, l: int, x):
    """Solution values of the stack truncated at level l."""
    arr = np.asarray(x, dtype=np.float64)
    batch = arr[None, :] if arr.ndim == 1 else arr
    out = value_of(level_eval_jet(stack, l, batch).val)
    return out[0] if arr.ndim == 1 else out


def trainable_params(stack: Stack, l: int) -> list:
    """The parameter leaves of level l only (lower levels stay frozen)."""
    if l == 0:
        return stack.level0.tensors()
    if not 1 <= l <= stack.n_levels:
        raise IndexError(f"level {l} out of range 0..{stack.n_levels}")
    return stack.levels[l - 1].tensors()


def parameter_count(stack: Stack, levels=None, include_alpha: bool = True) -> int:
    """Parameter total over the given level indices (default: whole stack)."""
    if levels is None:
        levels = range(stack.n_levels + 1)
    total = 0
    for l in levels:
        if l == 0:
            total += stack.level0.n_params()
        else:
            for u in stack.levels[l - 1].units:
                total += u.n_params() if include_alpha else u.n_params() - 1
    return total


def set_trainable(stack: Stack, l: int | None):
    """Mark exactly level l's parameters as requiring gradients."""
    for k in range(stack.n_levels + 1):
        for t in trainable_params(stack, k):
            t.requires_grad = k == l
            t.grad = None


def frozen_hash(stack: Stack, below_level: int) -> str:
    """SHA-256 over all parameters of levels < below_level, in fixed order."""
    h = hashlib.sha256()
    for k in range(min(below_level, stack.n_levels + 1)):
        for t in trainable_params(stack, k):
            h.update(np.ascontiguousarray(t.data).tobytes())
    return h.hexdigest()


def eval_on_grid(stack: Stack, l: int, coords: np.ndarray, threads: int | None = None) -> np.ndarray:
    """Chunked (optionally threaded) plain evaluation over a large grid.

    The chunking is fixed, so results are bitwise independent of the thread
    count.  STACKPINN_THREADS caps the worker pool.
    """
    coords = np.asarray(coords, dtype=np.float64)
    if threads is None:
        threads = int(os.environ.get("STACKPINN_THREADS", "1"))
    threads = max(1, threads)
    out = np.empty((coords.shape[0], stack.sol_dim))
    spans = [(i, min(i + _EVAL_CHUNK, coords.shape[0]))
             for i in range(0, coords.shape[0], _EVAL_CHUNK)]

    def run(span):
        i0, i1 = span
        out[i0:i1] = value_of(level_eval_jet(stack, l, coords[i0:i1]).val)

    if threads == 1 or len(spans) == 1:
        for s in spans:
            run(s)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, spans))
    return out
