"""Benchmark problems: residuals, constraints, collocation sampling and oracles.

Three benchmarks are provided:

* pendulum   -- damped pendulum ODE system on [0, 20], solution (position,
                velocity), reference via adaptive RK45 at tight tolerance.
* multiscale -- two-frequency first-order ODE on [0, 20] with a closed-form
                exact solution sin(x) + sin(15 x).
* allen-cahn -- 1-D Allen-Cahn equation on [-1, 1] x (0, 1] with periodic
                value/derivative constraints; reference via a Fourier-spectral
                method of lines integrated with ETDRK4, validated by a
                self-convergence study.

Residual operators are payload-generic: they accept plain arrays or tape
tensors, so the same code serves oracle validation and training.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .autodiff import Jet, Tensor, concat, sin, take_rows, value_of
from .util import seedseq


class OracleError(RuntimeError):
    """Reference solver failed to converge; message carries diagnostics."""


ORACLE_FORMAT = "stackpinn-oracle-v1"


# -- problem parameters -------------------------------------------------------


@dataclass
class PendulumParams:
    m: float = 1.0
    len: float = 1.0
    b: float = 0.05
    g: float = 9.81
    T: float = 20.0
    s0: tuple = (1.0, 1.0)

    def __post_init__(self):
        if self.m <= 0 or self.len <= 0:
            raise ValueError("mass and length must be positive")


@dataclass
class MultiscaleParams:
    omega1: float = 1.0
    omega2: float = 15.0
    lo: float = 0.0
    hi: float = 20.0

    def __post_init__(self):
        if not 0 < self.omega1 < self.omega2:
            raise ValueError("need omega2 > omega1 > 0")


@dataclass
class AllenCahnParams:
    diffusivity: float = 1e-4
    cubic: float = 5.0
    linear: float = -5.0

    def __post_init__(self):
        if self.diffusivity <= 0:
            raise ValueError("diffusivity must be positive")

    @staticmethod
    def initial_condition(x):
        return x ** 2 * np.cos(np.pi * x)


# -- residual operators --------------------------------------------------------


def _col(x, i):
    return x.cols(i, i + 1) if isinstance(x, Tensor) else np.asarray(x)[:, i:i + 1]


def pendulum_residual(s, ds_dt, p: PendulumParams):
    """Residual of the damped-pendulum system for states s=(position, velocity)."""
    single = not isinstance(s, Tensor) and np.asarray(s).ndim == 1
    if single:
        s, ds_dt = np.asarray(s)[None, :], np.asarray(ds_dt)[None, :]
    r1 = _col(ds_dt, 0) - _col(s, 1)
    r2 = _col(ds_dt, 1) + (p.b / p.m) * _col(s, 1) + (p.g / p.len) * sin(_col(s, 0))
    out = concat([r1, r2], axis=1)
    return value_of(out)[0] if single else out


def multiscale_exact(x, p: MultiscaleParams = MultiscaleParams()):
    x = np.asarray(x, dtype=np.float64)
    return np.sin(p.omega1 * x) + np.sin(p.omega2 * x)


def multiscale_exact_derivative(x, p: MultiscaleParams = MultiscaleParams()):
    x = np.asarray(x, dtype=np.float64)
    return p.omega1 * np.cos(p.omega1 * x) + p.omega2 * np.cos(p.omega2 * x)


def multiscale_residual(ds_dx, x, p: MultiscaleParams = MultiscaleParams()):
    """ds/dx minus the forcing w1*cos(w1 x) + w2*cos(w2 x)."""
    return ds_dx - multiscale_exact_derivative(x, p)


def allen_cahn_residual(s, s_t, s_xx, p: AllenCahnParams = AllenCahnParams()):
    """s_t - diffusivity*s_xx + 5 s^3 - 5 s."""
    return s_t - p.diffusivity * s_xx + p.cubic * (s * s * s) + p.linear * s


def allen_cahn_constraints(eval_fn, batch):
    """Initial-condition and periodic value/derivative constraint residuals.

    `eval_fn(coords, wrt, order)` must return a jet of the current model;
    `batch` comes from the problem's constraint sampler.  The three groups
    (initial condition, value periodicity, derivative periodicity) are
    stacked into one residual column.
    """
    ic = batch["ic"]
    u_ic = eval_fn(ic, None, 0).val
    target = AllenCahnParams.initial_condition(ic[:, 0])[:, None]
    g_ic = u_ic - target

    per = batch["periodic"]
    n = per.shape[0] // 2
    jet = eval_fn(per, 0, 1)  # value and d/dx at x = +1 rows then x = -1 rows
    top, bot = np.arange(n), np.arange(n, 2 * n)
    g_val = take_rows(jet.val, top) - take_rows(jet.val, bot)
    g_der = take_rows(jet.d1, top) - take_rows(jet.d1, bot)
    return concat([g_ic, g_val, g_der], axis=0)


# -- collocation sampling --------------------------------------------------------


def sample_collocation(bounds, n: int, seed: int, strategy: str = "uniform",
                       draw: int = 0) -> np.ndarray:
    """Sample n points in a box, reproducibly for a given (seed, draw) pair."""
    bounds = np.atleast_2d(np.asarray(bounds, dtype=np.float64))
    if n <= 0:
        raise ValueError("n must be positive")
    if np.any(bounds[:, 1] <= bounds[:, 0]):
        raise ValueError(f"degenerate box {bounds.tolist()}")
    dim = bounds.shape[0]
    if strategy == "uniform":
        rng = np.random.default_rng(seedseq(seed, draw))
        return rng.uniform(bounds[:, 0], bounds[:, 1], size=(n, dim))
    if strategy == "fixed-grid":
        per_axis = max(2, int(round(n ** (1.0 / dim))))
        axes = [np.linspace(lo, hi, n if dim == 1 else per_axis) for lo, hi in bounds]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.column_stack([m.ravel() for m in mesh])
    raise ValueError(f"unknown strategy '{strategy}'")


# -- reference oracles ---------------------------------------------------------


class MultiscaleOracle:
    """Closed-form reference for the two-frequency problem."""

    method = "closed-form"

    def __init__(self, p: MultiscaleParams = MultiscaleParams()):
        self.p = p

    def eval(self, coords) -> np.ndarray:
        return multiscale_exact(np.asarray(coords)[:, 0], self.p)[:, None]

    def eval_derivative(self, coords) -> np.ndarray:
        return multiscale_exact_derivative(np.asarray(coords)[:, 0], self.p)[:, None]


class PendulumOracle:
    """Adaptive RK45 integration of the pendulum system at tight tolerance."""

    method = "RK45"

    def __init__(self, p: PendulumParams = PendulumParams(), rtol: float = 1e-10,
                 atol: float = 1e-10):
        self.p = p
        self.rtol, self.atol = rtol, atol
        sol = solve_ivp(self._rhs, (0.0, p.T), np.asarray(p.s0, dtype=np.float64),
                        method="RK45", rtol=rtol, atol=atol, dense_output=True)
        if not sol.success:
            raise OracleError(f"pendulum RK45 failed: {sol.message}")
        self._sol = sol

    def _rhs(self, t, s):
        p = self.p
        return [s[1], -(p.b / p.m) * s[1] - (p.g / p.len) * np.sin(s[0])]

    def eval(self, coords) -> np.ndarray:
        arr = np.atleast_1d(np.asarray(coords, dtype=np.float64))
        t = arr[:, 0] if arr.ndim > 1 else arr
        return self._sol.sol(t).T

    def energy(self, t) -> np.ndarray:
        """(1/2) m len^2 v^2 + m g len (1 - cos(theta)) along the trajectory."""
        s = self.eval(np.atleast_1d(t)[:, None])
        p = self.p
        return 0.5 * p.m * p.len ** 2 * s[:, 1] ** 2 + p.m * p.g * p.len * (1.0 - np.cos(s[:, 0]))

    def max_energy_increase(self, n: int = 2000) -> float:
        e = self.energy(np.linspace(0.0, self.p.T, n))
        return float(np.diff(e).max())


class AllenCahnOracle:
    """Fourier-spectral method of lines for the Allen-Cahn benchmark.

    The stiff linear part (diffusion plus the linear reaction term) is handled
    exactly by ETDRK4; the cubic term is explicit.  Full-resolution snapshots
    are kept so that the residual of the oracle itself can be checked by time
    differencing at the stored step.
    """

    method = "fourier-etdrk4"

    def __init__(self, x_full, t_full, values_full, n_modes, dt,
                 self_delta=None, p: AllenCahnParams = AllenCahnParams(),
                 out_nx: int = 256):
        self.p = p
        self.x_full = x_full
        self.t_full = t_full
        self.values_full = values_full  # (n_times, n_modes)
        self.n_modes = int(n_modes)
        self.dt = float(dt)
        self.self_delta = self_delta
        stride = n_modes // out_nx
        self.x = x_full[::stride]
        self.t = t_full
        self.values = values_full[:, ::stride]  # (n_times, out_nx)

    # construction ---------------------------------------------------------------

    @staticmethod
    def _integrate(n: int, h: float, p: AllenCahnParams, snap_dt: float, t_end: float = 1.0):
        x = -1.0 + 2.0 * np.arange(n) / n
        u = AllenCahnParams.initial_condition(x)
        k = np.pi * np.fft.rfftfreq(n) * n  # wavenumbers for period-2 domain
        L = -p.diffusivity * k ** 2 - p.linear
        m = 32
        r = np.exp(1j * np.pi * (np.arange(1, m + 1) - 0.5) / m)
        LR = h * L[:, None] + r[None, :]
        E, E2 = np.exp(h * L), np.exp(h * L / 2.0)
        Q = h * np.real(np.mean((np.exp(LR / 2.0) - 1.0) / LR, axis=1))
        f1 = h * np.real(np.mean((-4.0 - LR + np.exp(LR) * (4.0 - 3.0 * LR + LR ** 2)) / LR ** 3, axis=1))
        f2 = h * np.real(np.mean((2.0 + LR + np.exp(LR) * (-2.0 + LR)) / LR ** 3, axis=1))
        f3 = h * np.real(np.mean((-4.0 - 3.0 * LR - LR ** 2 + np.exp(LR) * (4.0 - LR)) / LR ** 3, axis=1))

        def nonlin(w):
            return np.fft.rfft(-p.cubic * np.fft.irfft(w, n) ** 3)

        every = int(round(snap_dt / h))
        if abs(every * h - snap_dt) > 1e-12:
            raise OracleError(f"snapshot interval {snap_dt} is not a multiple of dt {h}")
        v = np.fft.rfft(u)
        snaps = [u.copy()]
        n_steps = int(round(t_end / h))
        for i in range(1, n_steps + 1):
            Nv = nonlin(v)
            a = E2 * v + Q * Nv
            Na = nonlin(a)
            b = E2 * v + Q * Na
            Nb = nonlin(b)
            c = E2 * a + Q * (2.0 * Nb - Nv)
            Nc = nonlin(c)
            v = E * v + Nv * f1 + 2.0 * (Na + Nb) * f2 + Nc * f3
            if i % every == 0:
                snaps.append(np.fft.irfft(v, n))
        snaps = np.asarray(snaps)
        if not np.all(np.isfinite(snaps)):
            raise OracleError(f"spectral MOL diverged (n={n}, dt={h})")
        return x, np.linspace(0.0, t_end, snaps.shape[0]), snaps

    @classmethod
    def build(cls, n_modes: int = 2048, dt: float = 2e-4, snap_dt: float = 5e-3,
              p: AllenCahnParams = AllenCahnParams(), check: bool = True,
              out_nx: int = 256) -> "AllenCahnOracle":
        """Run the solver; with check=True also run at doubled resolution.

        Doubling both the mode count and the step count must change the
        solution by less than 1e-6 in relative l2 on the output grid.
        """
        x, t, vals = cls._integrate(n_modes, dt, p, snap_dt)
        delta = None
        if check:
            _, _, fine = cls._integrate(2 * n_modes, dt / 2.0, p, snap_dt)
            a = vals[:, :: n_modes // out_nx]
            b = fine[:, :: 2 * n_modes // out_nx]
            delta = float(np.linalg.norm(a - b) / np.linalg.norm(b))
            if delta >= 1e-6:
                raise OracleError(
                    f"self-convergence failed: delta={delta:.3e} >= 1e-6 "
                    f"(n_modes={n_modes}, dt={dt})")
        return cls(x, t, vals, n_modes, dt, delta, p, out_nx)

    # queries -------------------------------------------------------------------

    def eval(self, coords) -> np.ndarray:
        """Values at (x, t) pairs that lie on the cached grid."""
        coords = np.asarray(coords, dtype=np.float64)
        ti = np.rint(coords[:, 1] / (self.t[1] - self.t[0])).astype(int)
        dx = self.x[1] - self.x[0]
        xi = np.rint((coords[:, 0] - self.x[0]) / dx).astype(int)
        if (np.abs(self.t[np.clip(ti, 0, len(self.t) - 1)] - coords[:, 1]).max() > 1e-9
                or np.abs(self.x[np.clip(xi, 0, len(self.x) - 1)] - coords[:, 0]).max() > 1e-9):
            raise OracleError("requested points are off the cached Allen-Cahn grid")
        return self.values[ti, xi][:, None]

    def residual_check_data(self):
        """Full-resolution snapshots plus the documented row-wise bound.

        The time derivative of the stored trajectory is approximated by
        central differences at the snapshot step; spatial derivatives are
        spectral.  Per row, the finite-difference truncation error dominates
        and is bounded by (step^2/6)*max|s_ttt| with s_ttt estimated from
        third differences; a factor 3 covers the early-transient rows where
        higher-order terms still contribute.
        """
        s = self.values_full
        step = self.t_full[1] - self.t_full[0]
        st = (s[2:] - s[:-2]) / (2.0 * step)
        k = np.pi * np.fft.rfftfreq(self.n_modes) * self.n_modes
        sxx = np.fft.irfft(-k ** 2 * np.fft.rfft(s[1:-1], axis=1), self.n_modes, axis=1)
        res = allen_cahn_residual(s[1:-1], st, sxx, self.p)
        s3 = (s[3:] - 3.0 * s[2:-1] + 3.0 * s[1:-2] - s[:-3]) / step ** 3
        bound = step ** 2 / 6.0 * np.abs(s3).max(axis=1) * 3.0
        return np.abs(res).max(axis=1), bound

    # cache io -------------------------------------------------------------------

    def save(self, path):
        np.savez_compressed(
            path, format=ORACLE_FORMAT, problem="allen-cahn", method=self.method,
            n_modes=self.n_modes, dt=self.dt,
            self_delta=np.nan if self.self_delta is None else self.self_delta,
            x_full=self.x_full, t_full=self.t_full, values_full=self.values_full,
            out_nx=len(self.x))

    @classmethod
    def load(cls, path) -> "AllenCahnOracle":
        z = np.load(path)
        if str(z["format"]) != ORACLE_FORMAT:
            raise OracleError(f"oracle cache format {z['format']} != {ORACLE_FORMAT}")
        delta = float(z["self_delta"])
        return cls(z["x_full"], z["t_full"], z["values_full"], int(z["n_modes"]),
                   float(z["dt"]), None if np.isnan(delta) else delta,
                   out_nx=int(z["out_nx"]))


# -- problem bundle ---------------------------------------------------------------


@dataclass
class ProblemSpec:
    """Everything the trainer needs to know about one benchmark."""

    name: str
    coord_dim: int
    sol_dim: int
    domain: list  # [(lo, hi)] per coordinate, time last
    deriv_specs: tuple  # ((wrt index, order), ...) needed by the residual
    params: object
    residual: callable = field(repr=False)  # (coords, {spec: Jet}) -> (n, k)
    constraint_batch: callable = field(repr=False)  # (rng, n) -> batch
    constraint_residual: callable = field(repr=False)  # (eval_fn, batch) -> (m, kc)
    reference: callable = field(repr=False)  # (**opts) -> oracle
    eval_grid: callable = field(repr=False)  # () -> (n_eval, coord_dim)

    @property
    def horizon(self) -> float:
        return self.domain[-1][1]


def _pendulum_spec() -> ProblemSpec:
    p = PendulumParams()

    def residual(coords, jets):
        j = jets[(0, 1)]
        return pendulum_residual(j.val, j.d1, p)

    def constraint_batch(rng, n):
        return np.zeros((1, 1))

    def constraint_residual(eval_fn, batch):
        return eval_fn(batch, None, 0).val - np.asarray([p.s0])

    return ProblemSpec(
        name="pendulum", coord_dim=1, sol_dim=2, domain=[(0.0, p.T)],
        deriv_specs=((0, 1),), params=p, residual=residual,
        constraint_batch=constraint_batch, constraint_residual=constraint_residual,
        reference=lambda **kw: PendulumOracle(p, **kw),
        eval_grid=lambda n=2000: np.linspace(0.0, p.T, n)[:, None])


def _multiscale_spec() -> ProblemSpec:
    p = MultiscaleParams()

    def residual(coords, jets):
        j = jets[(0, 1)]
        return multiscale_residual(j.d1, coords, p)

    def constraint_batch(rng, n):
        return np.zeros((1, 1))

    def constraint_residual(eval_fn, batch):
        return eval_fn(batch, None, 0).val - 0.0

    return ProblemSpec(
        name="multiscale", coord_dim=1, sol_dim=1, domain=[(p.lo, p.hi)],
        deriv_specs=((0, 1),), params=p, residual=residual,
        constraint_batch=constraint_batch, constraint_residual=constraint_residual,
        reference=lambda **kw: MultiscaleOracle(p),
        eval_grid=lambda n=2000: np.linspace(p.lo, p.hi, n)[:, None])


def _allen_cahn_spec() -> ProblemSpec:
    p = AllenCahnParams()

    def residual(coords, jets):
        jt, jx = jets[(1, 1)], jets[(0, 2)]
        return allen_cahn_residual(jt.val, jt.d1, jx.d2, p)

    def constraint_batch(rng, n):
        xi = rng.uniform(-1.0, 1.0, n)
        tb = rng.uniform(0.0, 1.0, n)
        ic = np.column_stack([xi, np.zeros(n)])
        periodic = np.concatenate([np.column_stack([np.ones(n), tb]),
                                   np.column_stack([-np.ones(n), tb])])
        return {"ic": ic, "periodic": periodic}

    def eval_grid():
        x = -1.0 + 2.0 * np.arange(256) / 256
        t = np.linspace(0.0, 1.0, 101)
        tt, xx = np.meshgrid(t, x, indexing="ij")
        return np.column_stack([xx.ravel(), tt.ravel()])

    return ProblemSpec(
        name="allen-cahn", coord_dim=2, sol_dim=1, domain=[(-1.0, 1.0), (0.0, 1.0)],
        deriv_specs=((1, 1), (0, 2)), params=p, residual=residual,
        constraint_batch=constraint_batch, constraint_residual=allen_cahn_constraints,
        reference=lambda **kw: AllenCahnOracle.build(p=p, **kw),
        eval_grid=eval_grid)


_PROBLEMS = {
    "pendulum": _pendulum_spec,
    "multiscale": _multiscale_spec,
    "allen-cahn": _allen_cahn_spec,
}


def make_problem(name: str) -> ProblemSpec:
    if name not in _PROBLEMS:
        raise ValueError(f"unknown problem '{name}' (choose from {sorted(_PROBLEMS)})")
    return _PROBLEMS[name]()
