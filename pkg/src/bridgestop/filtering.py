"""Exact Bayesian filter for the pinning point.

Observing ``Z_t = z`` multiplies the prior by ``exp(u*a - b*u**2/2)`` with

* ``a = z / (1 - t)``, ``b = t / (1 - t)`` in the bridge coordinates, or
* ``a = y``, ``b = s`` in the time-changed coordinates ``s = t/(1-t)``,
  ``y = z/(1-t)``.

Discrete priors are reweighted atom by atom; Gaussian components stay
Gaussian (conjugacy) and only their weights, means and variances move.  All
weights are formed in log space with max-subtraction because the exponents
blow up like ``1/(1-t)``.

Every function here broadcasts over array-valued ``z`` (or ``y``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import softmax

from .priors import Prior, TwoPoint, is_discrete

T_CAP = 1.0 - 1e-9


class FilterError(ValueError):
    pass


def _cap_time(t: float) -> float:
    t = float(t)
    if not 0.0 <= t < 1.0:
        raise FilterError(f"time must lie in [0, 1), got {t!r}")
    return min(t, T_CAP)


def _normalized(logw: np.ndarray, prior_w: np.ndarray, untilted: bool) -> np.ndarray:
    if untilted:
        # no information yet: hand back the prior weights bit for bit
        return np.broadcast_to(prior_w, logw.shape).copy()
    w = softmax(logw, axis=0)
    if not np.all(np.isfinite(w)):
        raise FloatingPointError("posterior weights underflowed")
    return w


@dataclass(frozen=True)
class Posterior:
    """Posterior law at ``(t, z)``; same family as the prior.

    For discrete priors ``values`` are the atoms and ``variances`` is zero.
    Leading axis of every array indexes atoms/components.
    """

    prior: Prior
    t: float
    z: float | np.ndarray
    weights: np.ndarray
    values: np.ndarray
    variances: np.ndarray

    @property
    def discrete(self) -> bool:
        return is_discrete(self.prior)

    def mean(self):
        return np.sum(self.weights * self.values, axis=0)

    def variance(self):
        mean = self.mean()
        var = np.sum(self.weights * (self.variances + (self.values - mean) ** 2), axis=0)
        return np.maximum(var, 0.0)


def _reweight(prior: Prior, a, b: float):
    """Return (weights, values, variances) after tilting by exp(u*a - b*u^2/2)."""
    a = np.asarray(a, dtype=float)
    tail = (1,) * a.ndim
    untilted = b == 0.0 and not np.any(a)
    if is_discrete(prior):
        u, p = prior.atoms()
        u = u.reshape(-1, *tail)
        logw = np.log(p).reshape(-1, *tail) + u * a - 0.5 * b * u**2
        w = _normalized(logw, p.reshape(-1, *tail), untilted)
        values = np.broadcast_to(u, w.shape)
        return w, values, np.zeros_like(w)
    pw, m, v = prior.components()
    pw, m, v = (x.reshape(-1, *tail) for x in (pw, m, v))
    denom = 1.0 + v * b
    mean = (m + v * a) / denom
    var = v / denom
    # log of p_i * int exp(u a - b u^2/2) N(u; m_i, v_i) du
    logw = np.log(pw) - 0.5 * np.log(denom) + 0.5 * ((m + v * a) ** 2 / (v * denom) - m**2 / v)
    w = _normalized(logw, pw, untilted)
    return w, mean, np.broadcast_to(var, w.shape)


def posterior(prior: Prior, t: float, z) -> Posterior:
    t_c = _cap_time(t)
    z_arr = np.asarray(z, dtype=float)
    w, values, var = _reweight(prior, z_arr / (1.0 - t_c), t_c / (1.0 - t_c))
    z_out = float(z_arr) if z_arr.ndim == 0 else z_arr
    return Posterior(prior, float(t), z_out, w, values, var)


def posterior_mean(prior: Prior, t: float, z):
    """Conditional mean ``h(t, z)`` of the pin."""
    return posterior(prior, t, z).mean()


def posterior_variance(prior: Prior, t: float, z):
    return posterior(prior, t, z).variance()


def drift(prior: Prior, t: float, z):
    """Drift ``(h(t, z) - z) / (1 - t)`` of the observed process."""
    if t >= 1.0:
        raise FilterError("drift is undefined at t >= 1")
    t_c = _cap_time(t)
    return (posterior_mean(prior, t_c, z) - np.asarray(z, dtype=float)) / (1.0 - t_c)


def two_point_pi(r: float, p: float, t: float, z):
    """P(X = r | Z_t = z) for the symmetric prior ``p delta_r + (1-p) delta_{-r}``."""
    t_c = _cap_time(t)
    logit = np.log(p) - np.log1p(-p) + 2.0 * r * np.asarray(z, dtype=float) / (1.0 - t_c)
    # logistic in a form that never overflows
    return np.where(logit >= 0, 1.0 / (1.0 + np.exp(-np.abs(logit))),
                    np.exp(-np.abs(logit)) / (1.0 + np.exp(-np.abs(logit))))


def upper_weight(prior: Prior, t: float, z):
    """Posterior probability of the top atom of a two-point prior."""
    if not isinstance(prior, TwoPoint):
        raise FilterError("upper_weight needs a TwoPoint prior")
    return posterior(prior, t, z).weights[1]


def f_coordinate(prior: Prior, s: float, y):
    """Posterior mean in the time-changed coordinates ``(s, y)``."""
    if s < 0:
        raise FilterError("s must be non-negative")
    w, values, _ = _reweight(prior, np.asarray(y, dtype=float), float(s))
    return np.sum(w * values, axis=0)
