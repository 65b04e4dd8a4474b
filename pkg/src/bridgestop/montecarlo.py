"""Exact path simulation of the bridge with a random pin, and rule evaluation.

The pin ``X`` is drawn first from the posterior at the start point; given the
pin the path is a Brownian bridge, so every transition is an exact Gaussian
step and the last step lands on ``X``.  Stopping rules only see ``(t, Z_t)``.

Between grid times the path given its two endpoints is a Brownian bridge, so
the chance of touching a stopping barrier inside a step is known exactly
(``exp(-2 (b0 - z0) (b1 - z1) / dt)`` for a barrier moving linearly from
``b0`` to ``b1``).  ``monitoring="bridge"`` uses that to stop inside steps;
``monitoring="grid"`` looks only at grid times.

Paths are produced in fixed-size chunks, each with its own Philox stream
spawned from the user seed, so results depend on ``(seed, n_paths)`` only and
not on how chunks are spread over workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import classical, filtering
from .dp_solver import LOWER, UPPER, Boundary, ValueField
from .priors import Prior

CHUNK = 1 << 16
DEFAULT_STEPS = 2000
DEFAULT_PATHS = 100_000


def simulation_times(n_steps: int = DEFAULT_STEPS, t0: float = 0.0, tail: float = 1e-4) -> np.ndarray:
    """``n_steps + 1`` times from ``t0`` to 1, geometric in ``1 - t`` down to ``tail``."""
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    if not 0.0 <= t0 < 1.0:
        raise ValueError("t0 must lie in [0, 1)")
    if n_steps == 1:
        return np.array([t0, 1.0])
    tail = min(tail, 0.5 * (1.0 - t0))
    t = 1.0 - np.geomspace(1.0 - t0, tail, n_steps)
    t[0] = t0
    return np.append(t, 1.0)


def _check_times(times) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size < 2 or np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly increasing with at least two entries")
    if times[0] < 0.0 or times[-1] != 1.0:
        raise ValueError("times must start in [0, 1) and end at 1")
    return times


def sample_pins(prior: Prior, t0: float, z0: float, n: int, rng: np.random.Generator) -> np.ndarray:
    post = filtering.posterior(prior, t0, z0)
    w = np.asarray(post.weights, dtype=float).ravel()
    idx = rng.choice(w.size, size=n, p=w / w.sum())
    values = np.asarray(post.values, dtype=float).ravel()[idx]
    sd = np.sqrt(np.asarray(post.variances, dtype=float).ravel()[idx])
    if np.any(sd > 0):
        values = values + sd * rng.standard_normal(n)
    return values


def _bridge_step(z, pin, t, t_next, noise):
    """Exact transition of a bridge pinned at ``pin`` at time 1."""
    rest = 1.0 - t
    dt = t_next - t
    mean = z + dt * (pin - z) / rest
    var = max(dt * (rest - dt) / rest, 0.0)
    return mean + math.sqrt(var) * noise


def sample_paths(prior: Prior, n_steps: int = DEFAULT_STEPS, n_paths: int = 1, seed=None,
                 t0: float = 0.0, z0: float = 0.0, times=None):
    """Return ``(times, paths, pins)``; ``paths`` has one row per path."""
    times = simulation_times(n_steps, t0) if times is None else _check_times(times)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    pins = sample_pins(prior, times[0], z0, n_paths, rng)
    paths = np.empty((n_paths, times.size))
    paths[:, 0] = z0
    for k in range(times.size - 1):
        paths[:, k + 1] = _bridge_step(paths[:, k], pins, times[k], times[k + 1],
                                       rng.standard_normal(n_paths))
    paths[:, -1] = pins
    return times, paths, pins


def sample_path(prior: Prior, t0: float, z0: float, n_steps: int, seed=None):
    """One path as ``(times, values)``."""
    times, paths, _ = sample_paths(prior, n_steps, 1, seed, t0, z0)
    return times, paths[0]


# --- stopping rules ---------------------------------------------------------

class StoppingRule:
    """Base class for rules that read only ``(t, Z_t)``.

    ``stops(t, z)`` is the stopping set at a grid time.  ``barriers(t, z)``
    gives, for continuing points, the nearest stopping levels below and above
    (scalars or arrays, ``None`` when there is none); bridge monitoring uses
    them.
    """

    name = "rule"
    never_stops = False
    # True when the stopping set is held fixed between grid times
    piecewise_constant = False

    def stops(self, t: float, z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def barriers(self, t: float, z: np.ndarray):
        raise NotImplementedError


class HoldToEnd(StoppingRule):
    name = "hold_to_end"
    never_stops = True

    def stops(self, t, z):
        return np.zeros(z.shape, bool)

    def barriers(self, t, z):
        return None, None


@dataclass
class StopAtLevel(StoppingRule):
    level: float

    @property
    def name(self):
        return f"stop_at_level({self.level:g})"

    def stops(self, t, z):
        return z >= self.level

    def barriers(self, t, z):
        return None, self.level


@dataclass
class KnownPinRule(StoppingRule):
    """Stop above the boundary of a bridge pinned at a known ``r``."""

    r: float

    @property
    def name(self):
        return f"known_pin({self.r:g})"

    def stops(self, t, z):
        return z >= classical.boundary_known(self.r, t)

    def barriers(self, t, z):
        return None, float(classical.boundary_known(self.r, t))


@dataclass
class SingleBoundary(StoppingRule):
    boundary: Boundary
    side: str = UPPER

    def __post_init__(self):
        if self.side not in (UPPER, LOWER):
            raise ValueError(f"side must be {UPPER} or {LOWER}")

    @property
    def name(self):
        return f"single_boundary({self.side})"

    def stops(self, t, z):
        level = float(self.boundary.level_at(t))
        return z >= level if self.side == UPPER else z <= level

    def barriers(self, t, z):
        level = float(self.boundary.level_at(t))
        return (None, level) if self.side == UPPER else (level, None)


class RegionMap(StoppingRule):
    """Stop where a solved field labels the nearest node Stop.

    Times use the latest solver slice at or before ``t`` (the last slice
    beyond the solver horizon); space uses the nearest node, clamped to the
    grid.  Barriers sit half a cell from the first stopping node.
    """

    name = "region_map"
    piecewise_constant = True

    def __init__(self, field: ValueField):
        self.times = np.asarray(field.times)
        self.z = np.asarray(field.z)
        self.stop = np.asarray(field.labels, dtype=bool)
        self.dz = float(self.z[1] - self.z[0])
        n = self.z.size
        idx = np.arange(n)
        above = np.where(self.stop, idx, n)
        self._above = np.minimum.accumulate(above[:, ::-1], axis=1)[:, ::-1]
        below = np.where(self.stop, idx, -1)
        self._below = np.maximum.accumulate(below, axis=1)
        # barrier levels per node index, with the "none" index mapped to +-inf
        self._top = np.append(self.z - 0.5 * self.dz, np.inf)
        self._bottom = np.append(-np.inf, self.z + 0.5 * self.dz)

    def _slice(self, t):
        return int(np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, self.times.size - 1))

    def _node(self, z):
        return np.clip(np.rint((z - self.z[0]) / self.dz).astype(np.int64), 0, self.z.size - 1)

    def stops(self, t, z):
        return self.stop[self._slice(t), self._node(z)]

    def barriers(self, t, z):
        k, j = self._slice(t), self._node(z)
        return self._bottom[self._below[k, j] + 1], self._top[self._above[k, j]]


# --- evaluation -------------------------------------------------------------

MONITORING = ("bridge", "grid")


@dataclass(frozen=True)
class SimResult:
    mean: float
    std_error: float
    n_paths: int
    seed: int | None
    rule: str = ""

    def to_dict(self):
        return {"mean": self.mean, "std_error": self.std_error, "n_paths": self.n_paths,
                "seed": self.seed, "rule": self.rule}


@dataclass(frozen=True)
class JointResult:
    """Several rules on common paths, with the payoff covariance."""

    results: tuple[SimResult, ...]
    covariance: np.ndarray

    def __getitem__(self, i) -> SimResult:
        return self.results[i]

    def __len__(self):
        return len(self.results)

    def difference(self, i: int, j: int) -> tuple[float, float]:
        """Mean and standard error of ``payoff_i - payoff_j`` on the same paths."""
        c = self.covariance
        n = self.results[i].n_paths
        var = max(c[i, i] + c[j, j] - 2.0 * c[i, j], 0.0)
        return self.results[i].mean - self.results[j].mean, math.sqrt(var / n)


def _touch(gap_a, gap_b, dt):
    """Probability that a Brownian bridge with end gaps ``gap_a, gap_b`` touches.

    A negative end gap means the path finished beyond the barrier.
    """
    e = (2.0 / dt) * gap_a * gap_b
    p = np.zeros(e.shape)
    near = e < 40.0
    p[near] = np.exp(-np.maximum(e[near], 0.0))
    return p


def _bridge_max(za, zb, dt, u):
    """Maximum of a Brownian bridge from ``za`` to ``zb`` over ``dt``, from a uniform ``u``."""
    return 0.5 * (za + zb + np.sqrt((zb - za) ** 2 - 2.0 * dt * np.log(u)))


def _run_chunk(rules, prior, times, z0, n, seed_seq, monitoring):
    rng = np.random.Generator(np.random.Philox(seed_seq))
    pins = sample_pins(prior, times[0], z0, n, rng)
    payoff = np.empty((len(rules), n))
    bridge = monitoring == "bridge"
    # under bridge monitoring a fixed level is hit exactly when the running
    # maximum reaches it, so all such rules share one maximum per path
    levels = [i for i, rule in enumerate(rules) if bridge and isinstance(rule, StopAtLevel)]
    for i, rule in enumerate(rules):
        if rule.never_stops:
            payoff[i] = pins
    active = [i for i, rule in enumerate(rules) if not rule.never_stops and i not in levels]
    running_max = np.full(n, float(z0))
    # per-slot state, compacted as paths finish; ``ids`` maps slots to paths
    ids = np.arange(n)
    z = np.full(n, float(z0))
    pin = pins
    alive = np.ones((len(active), n), bool)
    top = np.full(n, float(z0))
    last = times.size - 1

    def settle(a, slots, value):
        payoff[active[a], ids[slots]] = value
        alive[a, slots] = False

    for a, i in enumerate(active):
        hit = np.nonzero(np.asarray(rules[i].stops(times[0], z), bool))[0]
        settle(a, hit, z[hit])
    for k in range(last):
        keep = alive.any(axis=0)
        if not keep.all():
            if levels:
                # the rest of a released path is a bridge from z to its pin:
                # draw its maximum in one go
                gone = ~keep
                rest = _bridge_max(z[gone], pin[gone], 1.0 - times[k], rng.random(int(gone.sum())))
                running_max[ids[gone]] = np.maximum(top[gone], rest)
            if not keep.any():
                ids, top = ids[:0], top[:0]
                break
            ids, z, pin, top, alive = ids[keep], z[keep], pin[keep], top[keep], alive[:, keep]
        t_a, t_b = times[k], times[k + 1]
        dt = t_b - t_a
        noise = rng.standard_normal(ids.size)
        u = rng.random(ids.size) if bridge else None
        z_new = pin if k + 1 == last else _bridge_step(z, pin, t_a, t_b, noise)
        if levels:
            np.maximum(top, _bridge_max(z, z_new, dt, u), out=top)
        for a, i in enumerate(active):
            li = np.nonzero(alive[a])[0]
            if li.size == 0:
                continue
            za, zb = z[li], z_new[li]
            if bridge:
                lo_a, hi_a = rules[i].barriers(t_a, za)
                if rules[i].piecewise_constant:
                    lo_b, hi_b = lo_a, hi_a
                else:
                    lo_b, hi_b = rules[i].barriers(t_b, za)
                p_up = 0.0 if hi_a is None else _touch(hi_a - za, hi_b - zb, dt)
                p_dn = 0.0 if lo_a is None else _touch(za - lo_a, zb - lo_b, dt)
                p_any = 1.0 - (1.0 - p_up) * (1.0 - p_dn)
                uu = u[li]
                crossed = uu < p_any
                if crossed.any():
                    share = p_up / np.maximum(p_up + p_dn, 1e-300)
                    up = crossed & (uu < p_any * share)
                    down = crossed & ~up
                    if hi_a is not None:
                        settle(a, li[up], np.broadcast_to(0.5 * (hi_a + hi_b), zb.shape)[up])
                    if lo_a is not None:
                        settle(a, li[down], np.broadcast_to(0.5 * (lo_a + lo_b), zb.shape)[down])
                    li, zb = li[~crossed], zb[~crossed]
            if k + 1 == last:
                settle(a, li, zb)
            else:
                hit = np.asarray(rules[i].stops(t_b, zb), bool)
                settle(a, li[hit], zb[hit])
        z = z_new
    # paths still simulated at the horizon have their full maximum in ``top``
    running_max[ids] = top
    for i in levels:
        c = rules[i].level
        payoff[i] = np.where(running_max >= c, max(c, float(z0)), pins)
    return payoff.sum(axis=1), payoff @ payoff.T


def evaluate_rules(rules, prior: Prior, n_paths: int = DEFAULT_PATHS, n_steps: int = DEFAULT_STEPS,
                   seed: int | None = None, t0: float = 0.0, z0: float = 0.0, times=None,
                   monitoring: str = "bridge", workers: int = 1) -> JointResult:
    """Estimate ``E[Z_tau]`` for every rule on the same simulated paths."""
    rules = list(rules)
    if not rules:
        raise ValueError("need at least one rule")
    if n_paths < 2:
        raise ValueError("n_paths must be at least 2")
    if monitoring not in MONITORING:
        raise ValueError(f"monitoring must be one of {MONITORING}")
    times = simulation_times(n_steps, t0) if times is None else _check_times(times)
    sizes = [CHUNK] * (n_paths // CHUNK) + ([n_paths % CHUNK] if n_paths % CHUNK else [])
    children = np.random.SeedSequence(seed).spawn(len(sizes))
    jobs = [(rules, prior, times, z0, n, ss, monitoring) for n, ss in zip(sizes, children)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda a: _run_chunk(*a), jobs))
    else:
        parts = [_run_chunk(*a) for a in jobs]
    total = sum(p[0] for p in parts)
    cross = sum(p[1] for p in parts)
    mean = total / n_paths
    cov = (cross - n_paths * np.outer(mean, mean)) / (n_paths - 1)
    results = tuple(
        SimResult(float(mean[i]), float(math.sqrt(max(cov[i, i], 0.0) / n_paths)), n_paths, seed,
                  getattr(rule, "name", type(rule).__name__))
        for i, rule in enumerate(rules))
    return JointResult(results, cov)


def evaluate_rule(rule: StoppingRule, prior: Prior, n_paths: int = DEFAULT_PATHS,
                  n_steps: int = DEFAULT_STEPS, seed: int | None = None, **kwargs) -> SimResult:
    return evaluate_rules([rule], prior, n_paths, n_steps, seed, **kwargs)[0]
