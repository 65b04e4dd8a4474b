"""Solver-free classification of states and structural diagnostics.

Three comparison rules give points whose type is known without solving:

* ``D_r``: if the support lies below ``r``, every ``z >= r + beta sqrt(1-t)``
  is a stopping point;
* ``C_l``: if the support lies above ``l``, every ``z < l + beta sqrt(1-t)``
  is a continuation point;
* ``Q_r`` (two-point priors): ``z < pi v_r(t,z) + (1-pi) l`` is a
  continuation point, where ``pi`` is the posterior weight of the top atom.

The single-boundary diagnostic checks the sign of
``d/dz (h(t,z) - z) = Var(t,z)/(1-t) - 1`` on a probe lattice.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import classical, filtering
from .priors import Mixture, Normal, Prior, TwoPoint, prior_mean, prior_variance, support_bounds


class Label(str, enum.Enum):
    KNOWN_STOP = "KnownStop"
    KNOWN_CONTINUE = "KnownContinue"
    UNKNOWN = "Unknown"


RULE_NAMES = ("D_r", "C_l", "Q_r")


@dataclass(frozen=True)
class PointClass:
    label: Label
    witnesses: tuple[str, ...]


def rule_masks(prior: Prior, t, z) -> dict[str, np.ndarray]:
    """Boolean masks of every rule, broadcast over ``t`` and ``z``."""
    t, z = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(z, dtype=float))
    if np.any(t >= 1.0):
        raise ValueError("classification needs t < 1")
    lo, hi = support_bounds(prior)
    root = classical.beta() * np.sqrt(1.0 - t)
    masks = {
        "D_r": z >= hi + root if math.isfinite(hi) else np.zeros(z.shape, bool),
        "C_l": z < lo + root if math.isfinite(lo) else np.zeros(z.shape, bool),
        "Q_r": np.zeros(z.shape, bool),
    }
    if isinstance(prior, TwoPoint):
        # the filter takes one time at a time, so group the points by t
        flat_t, flat_z = t.ravel(), z.ravel()
        order = np.argsort(flat_t, kind="stable")
        times, starts = np.unique(flat_t[order], return_index=True)
        q = np.empty(flat_z.size)
        for tv, idx in zip(times, np.split(order, starts[1:])):
            zv = flat_z[idx]
            pi = filtering.upper_weight(prior, tv, zv)
            q[idx] = pi * classical.v_known(prior.r, tv, zv) + (1.0 - pi) * prior.l
        masks["Q_r"] = z < q.reshape(z.shape)
    return masks


def classify_grid(prior: Prior, t, z):
    """Label array (``Label`` values as strings) plus the rule masks."""
    masks = rule_masks(prior, t, z)
    stop = masks["D_r"]
    cont = masks["C_l"] | masks["Q_r"]
    if np.any(stop & cont):
        raise AssertionError("a point was classified both stop and continue")
    labels = np.full(stop.shape, Label.UNKNOWN.value, dtype=object)
    labels[stop] = Label.KNOWN_STOP.value
    labels[cont] = Label.KNOWN_CONTINUE.value
    return labels, masks


def classify_point(prior: Prior, t: float, z: float) -> PointClass:
    labels, masks = classify_grid(prior, t, z)
    fired = tuple(name for name in RULE_NAMES if bool(masks[name]))
    return PointClass(Label(str(labels[()])), fired)


# --- single-boundary diagnostics ------------------------------------------

class Verdict(str, enum.Enum):
    DECREASING = "DecreasingEverywhere"
    INCREASING = "IncreasingEverywhere"
    NEITHER = "Neither"


@dataclass(frozen=True)
class ConditionReport:
    """Probe-lattice evidence on the monotonicity of ``h(t, z) - z``.

    ``verdict`` comes from the probes; ``analytic_decreasing`` is filled in
    only where a closed form decides the question (normal priors and
    symmetric two-component mixtures).
    """

    verdict: Verdict
    worst_point: tuple[float, float]
    max_slope: float
    min_slope: float
    analytic_decreasing: bool | None

    @property
    def proven(self) -> bool:
        return self.analytic_decreasing is not None


SLOPE_TOL = 1e-12


def slope_of_gap(prior: Prior, t: float, z):
    """``d/dz (h - z)`` from the exact variance identity."""
    t = float(t)
    return filtering.posterior_variance(prior, t, z) / (1.0 - min(t, filtering.T_CAP)) - 1.0


def _symmetric_pair(prior: Prior):
    if not isinstance(prior, Mixture) or len(prior.components_) != 2:
        return None
    (w1, m1, v1), (w2, m2, v2) = prior.components_
    if w1 == w2 == 0.5 and m1 == -m2 and v1 == v2:
        return abs(m1), v1
    return None


def _analytic(prior: Prior) -> bool | None:
    if isinstance(prior, Normal):
        return prior.var <= 1.0
    pair = _symmetric_pair(prior)
    if pair is not None and pair[1] < 1.0:
        return symmetric_mixture_criterion(*pair)
    return None


def single_boundary_condition(prior: Prior, t_max: float = 0.9999, z_range=None,
                              n_times: int = 64, n_z: int = 201) -> ConditionReport:
    if not t_max < 1.0:
        raise ValueError("t_max must be < 1")
    if n_times * n_z < 100:
        raise ValueError("need at least 100 probes")
    if z_range is None:
        mean, sd = prior_mean(prior), math.sqrt(prior_variance(prior))
        half = 8.0 * max(sd, 1e-3)
        z_range = (mean - half, mean + half)
    # geometric in 1 - t: for narrow mixture components the violations sit
    # very close to the horizon
    times = 1.0 - np.geomspace(1.0, 1.0 - t_max, n_times)
    zs = np.linspace(z_range[0], z_range[1], n_z)
    slopes = np.stack([slope_of_gap(prior, t, zs) for t in times])
    hi, lo = float(slopes.max()), float(slopes.min())
    if hi <= SLOPE_TOL:
        verdict = Verdict.DECREASING
        idx = np.unravel_index(np.argmax(slopes), slopes.shape)
    elif lo >= -SLOPE_TOL:
        verdict = Verdict.INCREASING
        idx = np.unravel_index(np.argmin(slopes), slopes.shape)
    else:
        verdict = Verdict.NEITHER
        # report where the single-upper-boundary condition fails worst
        idx = np.unravel_index(np.argmax(slopes), slopes.shape)
    worst = (float(times[idx[0]]), float(zs[idx[1]]))
    return ConditionReport(verdict, worst, hi, lo, _analytic(prior))


def symmetric_mixture_criterion(r: float, gamma2: float) -> bool:
    """Single upper boundary criterion for ``0.5 N(-r, g2) + 0.5 N(r, g2)``."""
    if not 0.0 < gamma2 < 1.0:
        raise ValueError("criterion needs 0 < gamma^2 < 1")
    return abs(r) <= math.sqrt(gamma2 * (1.0 - gamma2))
