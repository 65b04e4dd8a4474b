"""Backward finite-difference solver for the free-boundary problem.

The value function solves ``v_t + drift(t,z) v_z + v_zz / 2 = 0`` where
``v > z`` and equals ``z`` elsewhere.  Each backward step is one implicit
(theta) step of the generator with the obstacle ``v >= z`` imposed either
exactly, by solving the discrete complementarity problem with policy
iteration (``obstacle="lcp"``, default), or by the cheaper projection
``v <- max(v, z)`` after the linear solve (``obstacle="projection"``).  The
projection splitting costs O(sqrt(dt)) in the boundary location, which is
visible at practical grid sizes; the exact step does not.

Spatial differences are central where the cell Peclet number
``|drift| dz`` is at most one and upwind elsewhere, so every implicit matrix
is an M-matrix.  Time nodes are geometric in ``1 - t`` because both the
drift and the filter are singular like ``1 / (1 - t)``.

Two terminal conditions at ``t1 = 1 - epsilon``:

``reveal``   the pin is revealed at ``t1`` and the holder collects
             ``E[v_X(t1, z) | Z_t1 = z]`` (biased up);
``stopnow``  stopping is forced at ``t1``, ``v(t1, z) = z`` (biased down).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.linalg import lapack

from . import classical, filtering
from .priors import Prior, is_discrete, prior_mean, prior_variance, support_bounds

REVEAL = "reveal"
STOPNOW = "stopnow"
TERMINALS = (REVEAL, STOPNOW)

UPPER, LOWER, MULTIPLE = "Upper", "Lower", "Multiple"
LCP, PROJECTION = "lcp", "projection"


class GridError(ValueError):
    """Grid fails its invariants or is too coarse for the requested scheme."""


@dataclass(frozen=True)
class GridSpec:
    n_t: int
    z_min: float
    z_max: float
    n_z: int
    epsilon_horizon: float = 1e-3
    t0: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.epsilon_horizon < 1.0:
            raise GridError("epsilon_horizon must lie in (0, 1)")
        if not 0.0 <= self.t0 < self.t1:
            raise GridError("need 0 <= t0 < t1 < 1")
        if self.n_t < 2 or self.n_z < 3:
            raise GridError("need n_t >= 2 and n_z >= 3")
        if not self.z_min < self.z_max:
            raise GridError("need z_min < z_max")

    @property
    def t1(self) -> float:
        return 1.0 - self.epsilon_horizon

    @property
    def dz(self) -> float:
        return (self.z_max - self.z_min) / (self.n_z - 1)

    def times(self) -> np.ndarray:
        tau = np.geomspace(1.0 - self.t0, self.epsilon_horizon, self.n_t)
        t = 1.0 - tau
        t[0], t[-1] = self.t0, self.t1
        return t

    def space(self) -> np.ndarray:
        return np.linspace(self.z_min, self.z_max, self.n_z)

    def to_dict(self):
        return {"t0": self.t0, "t1": self.t1, "n_t": self.n_t, "z_min": self.z_min,
                "z_max": self.z_max, "n_z": self.n_z, "epsilon_horizon": self.epsilon_horizon}

    @classmethod
    def from_dict(cls, d):
        return cls(n_t=int(d["n_t"]), z_min=float(d["z_min"]), z_max=float(d["z_max"]),
                   n_z=int(d["n_z"]), epsilon_horizon=float(d.get("epsilon_horizon", 1e-3)),
                   t0=float(d.get("t0", 0.0)))

    @classmethod
    def for_prior(cls, prior: Prior, n_t: int = 2000, n_z: int = 1201,
                  epsilon_horizon: float = 1e-3, t0: float = 0.0) -> "GridSpec":
        """Lateral boundaries at ``mean +- max(6 sd, max|atom - mean| + 2)``."""
        mean, half = prior_mean(prior), 6.0 * math.sqrt(prior_variance(prior))
        if is_discrete(prior):
            atoms, _ = prior.atoms()
            half = max(half, float(np.max(np.abs(atoms - mean))) + 2.0)
        return cls(n_t=n_t, z_min=mean - half, z_max=mean + half, n_z=n_z,
                   epsilon_horizon=epsilon_horizon, t0=t0)


def check_domain(prior: Prior, grid: GridSpec) -> None:
    mean, sd = prior_mean(prior), math.sqrt(prior_variance(prior))
    lo, hi = mean - 6.0 * sd, mean + 6.0 * sd
    if is_discrete(prior):
        atoms, _ = prior.atoms()
        lo, hi = min(lo, atoms.min() - 2.0), max(hi, atoms.max() + 2.0)
    if grid.z_min > lo + 1e-12 or grid.z_max < hi - 1e-12:
        raise GridError(f"z-domain [{grid.z_min}, {grid.z_max}] must contain [{lo}, {hi}]")


@dataclass(frozen=True)
class ValueField:
    grid: GridSpec
    prior: Prior
    terminal: str
    times: np.ndarray
    z: np.ndarray
    values: np.ndarray
    label_tol: float
    gap: np.ndarray = field(init=False)
    labels: np.ndarray = field(init=False)

    def __post_init__(self):
        gap = self.values - self.z[None, :]
        object.__setattr__(self, "gap", gap)
        object.__setattr__(self, "labels", gap <= self.label_tol)  # True = Stop

    def value_at(self, t: float, z: float) -> float:
        """Linear interpolation in z on the slice nearest to ``t``."""
        k = int(np.argmin(np.abs(self.times - t)))
        return float(np.interp(z, self.z, self.values[k]))

    def slice_index(self, t: float) -> int:
        return int(np.argmin(np.abs(self.times - t)))


def _gauss_hermite(n=64):
    x, w = hermegauss(n)
    return x, w / w.sum()


def terminal_values(prior: Prior, t1: float, z: np.ndarray, terminal: str) -> np.ndarray:
    if terminal == STOPNOW:
        return z.copy()
    if terminal != REVEAL:
        raise ValueError(f"unknown terminal scheme {terminal!r}")
    post = filtering.posterior(prior, t1, z)
    if post.discrete:
        return np.sum(post.weights * classical.v_known(post.values, t1, z[None, :]), axis=0)
    x, w = _gauss_hermite()
    out = np.zeros_like(z)
    for j in range(post.weights.shape[0]):
        pins = post.values[j][None, :] + np.sqrt(post.variances[j])[None, :] * x[:, None]
        out += post.weights[j] * (w @ classical.v_known(pins, t1, z[None, :]))
    return out


def _coefficients(b: np.ndarray, dz: float):
    """Neighbour weights of the discrete generator at interior nodes."""
    diff = 0.5 / dz**2
    central = np.abs(b) * dz <= 1.0
    lower = np.where(central, diff - 0.5 * b / dz, diff + np.maximum(-b, 0.0) / dz)
    upper = np.where(central, diff + 0.5 * b / dz, diff + np.maximum(b, 0.0) / dz)
    return lower, upper


def _tridiag(sub, diag, sup, rhs):
    _, _, _, x, info = lapack.dgtsv(sub, diag, sup, rhs)
    if info != 0:
        raise FloatingPointError(f"tridiagonal solve failed (info={info})")
    return x


def _solve_lcp(sub, diag, sup, rhs, obstacle, max_iter=50):
    """Policy iteration for ``min(A v - rhs, v - obstacle) = 0``, A tridiagonal M-matrix."""
    x = np.maximum(_tridiag(sub, diag, sup, rhs), obstacle)
    stop = x <= obstacle
    for _ in range(max_iter):
        d, lo, up, b = diag.copy(), sub.copy(), sup.copy(), rhs.copy()
        d[stop], b[stop] = 1.0, obstacle[stop]
        lo[stop[1:]] = 0.0
        up[stop[:-1]] = 0.0
        x = _tridiag(lo, d, up, b)
        ax = diag * x
        ax[1:] += sub * x[:-1]
        ax[:-1] += sup * x[1:]
        diff = (x - obstacle) - (ax - rhs)
        # ties (both branches satisfied to round-off) keep the current policy;
        # otherwise degenerate rows such as v = z with zero drift can cycle
        tie = np.abs(diff) <= 1e-12 * (1.0 + np.abs(obstacle))
        new_stop = np.where(tie, stop, diff < 0)
        if np.array_equal(new_stop, stop):
            return np.maximum(x, obstacle)
        stop = new_stop
    raise FloatingPointError("obstacle policy iteration did not converge")


def solve(prior: Prior, grid: GridSpec, terminal: str = REVEAL, theta: float = 1.0,
          label_tol: float | None = None, obstacle: str = LCP,
          check: bool = True) -> ValueField:
    """Solve the stopping problem backward from ``grid.t1`` to ``grid.t0``."""
    if terminal not in TERMINALS:
        raise ValueError(f"terminal must be one of {TERMINALS}")
    if not 0.5 <= theta <= 1.0:
        raise ValueError("theta must lie in [0.5, 1]")
    if obstacle not in (LCP, PROJECTION):
        raise ValueError(f"obstacle must be {LCP!r} or {PROJECTION!r}")
    if check:
        check_domain(prior, grid)
    if label_tol is None:
        label_tol = 1e-6 * (grid.z_max - grid.z_min)

    t = grid.times()
    z = grid.space()
    dz = grid.dz
    n = grid.n_z
    dirichlet_top = math.isfinite(support_bounds(prior)[1])

    values = np.empty((grid.n_t, n))
    v = terminal_values(prior, grid.t1, z, terminal)
    v = np.maximum(v, z)
    values[-1] = v

    lower, upper = _coefficients(filtering.drift(prior, t[-1], z[1:-1]), dz)
    for k in range(grid.n_t - 2, -1, -1):
        dt = t[k + 1] - t[k]
        rhs = v[1:-1].copy()
        if theta < 1.0:
            # explicit part uses the generator of the later time level
            expl = (1.0 - theta) * dt
            cfl = float(np.max(expl * (lower + upper)))
            if cfl > 1.0:
                raise GridError(f"explicit-part CFL {cfl:.3g} exceeds 1; refine the time grid")
            rhs += expl * (lower * v[:-2] + upper * v[2:] - (lower + upper) * v[1:-1])

        lower, upper = _coefficients(filtering.drift(prior, t[k], z[1:-1]), dz)
        a = theta * dt
        diag = 1.0 + a * (lower + upper)
        sub = -a * lower[1:]
        sup = -a * upper[:-1]

        # lower edge: v0 = 2 v1 - v2; an outward drift leaves row 1 uncoupled
        net = max(upper[0] - lower[0], 0.0)
        diag[0] = 1.0 + a * net
        sup[0] = -a * net
        if dirichlet_top:
            rhs[-1] += a * upper[-1] * z[-1]
        else:
            net = max(lower[-1] - upper[-1], 0.0)
            diag[-1] = 1.0 + a * net
            sub[-1] = -a * net

        if obstacle == LCP:
            interior = _solve_lcp(sub, diag, sup, rhs, z[1:-1])
        else:
            interior = _tridiag(sub, diag, sup, rhs)
        v = np.empty(n)
        v[1:-1] = interior
        v[0] = 2.0 * v[1] - v[2]
        v[-1] = z[-1] if dirichlet_top else 2.0 * v[-2] - v[-3]
        v = np.maximum(v, z)
        values[k] = v

    return ValueField(grid, prior, terminal, t, z, values, float(label_tol))


# --- region extraction ------------------------------------------------------

@dataclass(frozen=True)
class Boundary:
    """Sampled boundary ``t -> b(t)``.

    ``levels`` is NaN on slices without a crossing.  For ``Multiple`` it holds
    the highest continue-to-stop crossing and ``crossings`` lists every
    crossing per slice as ``(level, side)`` pairs.
    """

    times: np.ndarray
    levels: np.ndarray
    kind: str
    crossings: tuple = ()
    meta: dict = field(default_factory=dict)

    def level_at(self, t):
        ok = np.isfinite(self.levels)
        return np.interp(t, self.times[ok], self.levels[ok])

    def rows(self):
        if self.kind != MULTIPLE:
            return [(float(t), float(b), self.kind) for t, b in zip(self.times, self.levels)
                    if np.isfinite(b)]
        return [(float(t), float(level), side) for t, cs in zip(self.times, self.crossings)
                for level, side in cs]


@dataclass(frozen=True)
class RegionMap:
    times: np.ndarray
    z: np.ndarray
    stop: np.ndarray
    stop_loss: np.ndarray
    too_good: np.ndarray


def extract_regions(vf: ValueField, label_tol: float | None = None):
    """Region map with stop-loss / too-good-to-persist flags and boundaries."""
    tol = vf.label_tol if label_tol is None else label_tol
    stop = vf.gap <= tol
    cont = ~stop
    above_cont = np.zeros_like(stop)
    below_cont = np.zeros_like(stop)
    above_cont[:, :-1] = cont[:, 1:]
    below_cont[:, 1:] = cont[:, :-1]
    region = RegionMap(vf.times, vf.z, stop, stop & above_cont, stop & below_cont)

    crossings = []
    for row in stop:
        up = np.nonzero(~row[:-1] & row[1:])[0] + 1   # continue below, stop at/above
        down = np.nonzero(row[:-1] & ~row[1:])[0]     # stop at/below, continue above
        cs = [(float(vf.z[i]), UPPER) for i in up] + [(float(vf.z[i]), LOWER) for i in down]
        crossings.append(tuple(sorted(cs)))
    n_up = np.array([sum(s == UPPER for _, s in cs) for cs in crossings])
    n_down = np.array([sum(s == LOWER for _, s in cs) for cs in crossings])

    if np.all(n_up <= 1) and np.all(n_down == 0):
        kind = UPPER
    elif np.all(n_down <= 1) and np.all(n_up == 0):
        kind = LOWER
    else:
        kind = MULTIPLE
    side = LOWER if kind == LOWER else UPPER
    levels = np.array([max((lv for lv, s in cs if s == side), default=np.nan) for cs in crossings])
    boundary = Boundary(vf.times, levels, kind, tuple(crossings) if kind == MULTIPLE else ())
    return region, [boundary]
