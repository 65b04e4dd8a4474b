"""Known pinning point: the constant beta, the value function and its boundary."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq
from scipy.special import erfcx, ndtr

SQRT_2PI = math.sqrt(2.0 * math.pi)


def norm_cdf(x):
    return ndtr(x)


def scaled_cdf(x):
    """``exp(x**2 / 2) * Phi(x)`` without the 0 * inf for very negative x."""
    return 0.5 * erfcx(-np.asarray(x, dtype=float) / math.sqrt(2.0))


def beta_equation(x):
    """``sqrt(2 pi) (1 - x^2) exp(x^2/2) Phi(x) - x``; beta is its positive root."""
    return SQRT_2PI * (1.0 - x * x) * scaled_cdf(x) - x


@dataclass(frozen=True)
class BetaConstant:
    value: float
    residual: float


@lru_cache(maxsize=1)
def solve_beta() -> BetaConstant:
    lo, hi = 0.5, 1.5
    assert beta_equation(lo) > 0 > beta_equation(hi)
    root = brentq(beta_equation, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    return BetaConstant(float(root), float(abs(beta_equation(root))))


def beta() -> float:
    return solve_beta().value


def boundary_known(r: float, t):
    return r + beta() * np.sqrt(1.0 - np.asarray(t, dtype=float))


def v_known(r, t, z):
    """Value of stopping a bridge pinned at ``r`` from ``(t, z)``.

    Broadcasts over ``r``, ``t`` and ``z``.  At ``t = 1`` the value is
    ``max(z, r)``, the limit of both branches.
    """
    r, t, z = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (r, t, z)))
    b = beta()
    tau = 1.0 - t
    root = np.sqrt(np.maximum(tau, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.where(root > 0, (z - r) / np.where(root > 0, root, 1.0), -np.inf)
        inside = r + SQRT_2PI * root * (1.0 - b * b) * scaled_cdf(x)
    out = np.where(z >= r + b * root, z, inside)
    out = np.where(tau <= 0, np.maximum(z, r), out)
    return out[()] if out.ndim == 0 else out
