"""Overlapping time-domain decomposition and cosine partition-of-unity windows.

Level 0 is a single subdomain covering the whole horizon; level l >= 1 splits
[0, T] into J(l) subdomains centred at mu_j = T(j-1)/(J(l)-1) with half-width
sigma_j = (delta*T/2)/(J(l)-1).  The overlap ratio delta must exceed 1
strictly, otherwise the window supports leave gaps and the partition-of-unity
denominator vanishes between centres.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Jet, jet_cos

DENOM_FLOOR = 1e-12


class PartitionOfUnityError(RuntimeError):
    pass


@dataclass
class DecompositionConfig:
    """Time horizon T, number of stacking levels, overlap ratio and J per level."""

    T: float
    levels: int
    delta: float = 2.0
    subdomains: list | None = None  # J for levels 1..levels; default 2**l

    def __post_init__(self):
        if self.T <= 0:
            raise ValueError("time horizon T must be positive")
        if self.levels < 0:
            raise ValueError("levels must be >= 0")
        if self.delta <= 1.0:
            raise ValueError("overlap ratio delta must be > 1 (strict)")
        if self.subdomains is None:
            self.subdomains = [2 ** l for l in range(1, self.levels + 1)]
        if len(self.subdomains) != self.levels:
            raise ValueError("need one subdomain count per level 1..levels")
        for j in self.subdomains:
            if j < 2:
                raise ValueError("levels >= 1 need at least 2 subdomains")

    def n_subdomains(self, l: int) -> int:
        self._check_level(l)
        return 1 if l == 0 else self.subdomains[l - 1]

    def _check_level(self, l: int):
        if not 0 <= l <= self.levels:
            raise IndexError(f"level {l} out of range 0..{self.levels}")

    def center_halfwidth(self, l: int, j: int):
        """(mu, sigma) for subdomain j (1-based) of level l."""
        J = self.n_subdomains(l)
        if not 1 <= j <= J:
            raise IndexError(f"subdomain {j} out of range 1..{J}")
        if l == 0:
            return 0.5 * self.T, 0.5 * self.delta * self.T
        return self.T * (j - 1) / (J - 1), 0.5 * self.delta * self.T / (J - 1)


@dataclass
class Subdomain:
    level: int
    index: int
    center: float
    halfwidth: float
    lo: float = field(init=False)
    hi: float = field(init=False)

    def __post_init__(self):
        self.lo = self.center - self.halfwidth
        self.hi = self.center + self.halfwidth


def subdomain_interval(cfg: DecompositionConfig, l: int, j: int) -> Subdomain:
    mu, sigma = cfg.center_halfwidth(l, j)
    return Subdomain(l, j, mu, sigma)


def scale_input(cfg: DecompositionConfig, l: int, j: int, t):
    """Affine map sending subdomain j of level l onto [-1, 1]."""
    mu, sigma = cfg.center_halfwidth(l, j)
    return (np.asarray(t, dtype=np.float64) - mu) / sigma


def raw_window(cfg: DecompositionConfig, l: int, j: int, t) -> np.ndarray:
    """Unnormalised window [1 + cos(pi (t-mu)/sigma)]^2, zero outside support."""
    t = np.asarray(t, dtype=np.float64)
    if l == 0:
        return np.ones_like(t)
    mu, sigma = cfg.center_halfwidth(l, j)
    inside = np.abs(t - mu) < sigma
    w = np.zeros_like(t)
    th = np.pi * (t[inside] - mu) / sigma
    w[inside] = (1.0 + np.cos(th)) ** 2
    return w


def window_all(cfg: DecompositionConfig, l: int, t) -> np.ndarray:
    """Normalised window values for every subdomain of level l, shape (n, J)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    J = cfg.n_subdomains(l)
    if l == 0:
        return np.ones((t.size, 1))
    raw = np.stack([raw_window(cfg, l, j, t) for j in range(1, J + 1)], axis=1)
    denom = raw.sum(axis=1)
    bad = denom < DENOM_FLOOR
    if np.any(bad):
        raise PartitionOfUnityError(
            f"window denominator below {DENOM_FLOOR} at t={t[bad][:3]} (level {l}); "
            "overlap ratio delta must be > 1")
    return raw / denom[:, None]


def window(cfg: DecompositionConfig, l: int, j: int, t):
    """Partition-of-unity weight of subdomain j of level l at time(s) t."""
    t_arr = np.atleast_1d(np.asarray(t, dtype=np.float64))
    J = cfg.n_subdomains(l)
    if not 1 <= j <= J:
        raise IndexError(f"subdomain {j} out of range 1..{J}")
    w = window_all(cfg, l, t_arr)[:, j - 1]
    return float(w[0]) if np.isscalar(t) or np.asarray(t).ndim == 0 else w


def window_jets(cfg: DecompositionConfig, l: int, t: np.ndarray,
                wrt_time: bool, order: int) -> list:
    """Normalised window jets (value and t-derivatives) for every subdomain.

    Components are plain ndarrays of shape (n, 1); derivative slots are zero
    when differentiating with respect to a non-time coordinate.
    """
    t = np.asarray(t, dtype=np.float64)
    J = cfg.n_subdomains(l)
    if l == 0:
        return [Jet.constant(np.ones((t.size, 1)), order)]
    raws = []
    for j in range(1, J + 1):
        mu, sigma = cfg.center_halfwidth(l, j)
        inside = (np.abs(t - mu) < sigma).astype(np.float64)[:, None]
        th = Jet(np.pi * (t[:, None] - mu) / sigma,
                 np.full((t.size, 1), np.pi / sigma) if (wrt_time and order >= 1) else None,
                 None, order)
        u = jet_cos(th).shift(1.0)
        w = u * u
        # zero everything outside the support (cos oscillates beyond it)
        raws.append(Jet(w.val * inside,
                        None if w.d1 is None else w.d1 * inside,
                        None if w.d2 is None else w.d2 * inside,
                        order))
    total = raws[0]
    for w in raws[1:]:
        total = total + w
    if np.any(total.val < DENOM_FLOOR):
        raise PartitionOfUnityError(
            f"window denominator below {DENOM_FLOOR} (level {l}); delta must be > 1")
    return [w / total for w in raws]
