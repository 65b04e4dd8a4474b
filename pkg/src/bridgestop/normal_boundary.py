"""Stopping boundary for a normal prior from its integral equation.

With ``X ~ N(m, g2)``, ``g2 < 1``, the observed process on [0, 1] is a bridge
pinned at ``P = m / (1 - g2)`` at the later time ``T = 1 / (1 - g2)``.  Writing
``x(t) = b(t) - P`` the boundary equation becomes

    (1 - t) x(t) / (T - t) = J(t; x),
    J(t; x) = int_0^{1-t} E[(Z_u - P) / (T - t - u) ; Z_u > b(t + u)] du,

where ``Z_u`` starts at ``b(t)`` and has the explicit Gaussian bridge marginal,
so the inner expectation is a Gaussian partial moment.  The Picard map
iterated here is ``x <- (T - t) / (1 - t) * J(t; x)``.  Between nodes the level
is interpolated through ``q = x / sqrt(1 - t)``, so it collapses like a square
root at the horizon and ``x(1) = 0``.  The ratio ``q`` tends to a constant
(about 0.6388) that does not depend on ``m`` or ``g2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from . import classical
from .dp_solver import UPPER, Boundary

_PHI_NORM = 1.0 / math.sqrt(2.0 * math.pi)


class ConvergenceError(RuntimeError):
    def __init__(self, message, last_change):
        super().__init__(message)
        self.last_change = last_change


@dataclass(frozen=True)
class NormalProblem:
    m: float
    gamma2: float

    def __post_init__(self):
        if not 0.0 < self.gamma2 < 1.0:
            raise ValueError("normal boundary needs 0 < gamma^2 < 1")

    @property
    def pin(self) -> float:
        return self.m / (1.0 - self.gamma2)

    @property
    def T_ext(self) -> float:
        return 1.0 / (1.0 - self.gamma2)


def time_grid(n_t: int, tail: float = 1e-5) -> np.ndarray:
    """Nodes on [0, 1], geometric in ``1 - t`` down to ``tail``, then ``t = 1``."""
    t = 1.0 - np.geomspace(1.0, tail, n_t - 1)
    return np.append(t, 1.0)


def _gauss_legendre(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _picard_map(times, x, T, nodes, weights):
    """One application of the fixed-point map on all nodes (pin-centred)."""
    t = times[:-1, None]
    span = 1.0 - t
    # two Gauss-Legendre panels on [0, span/2] and [span/2, span]
    u = np.concatenate([0.5 * span * nodes, 0.5 * span * (1.0 + nodes)], axis=1)
    w = np.concatenate([0.5 * span * weights] * 2, axis=1)
    rest = T - t
    mean = x[:-1, None] * (1.0 - u / rest)
    sd = np.sqrt(u * (rest - u) / rest)
    q = x[:-1] / np.sqrt(1.0 - times[:-1])
    q = np.append(q, q[-1])
    level = np.interp(t + u, times, q) * np.sqrt(np.maximum(span - u, 0.0))
    d = (level - mean) / sd
    partial = mean * ndtr(-d) + sd * _PHI_NORM * np.exp(-0.5 * d * d)
    J = np.sum(w * partial / (rest - u), axis=1)
    new = np.empty_like(x)
    new[:-1] = (T - times[:-1]) / (1.0 - times[:-1]) * J
    new[-1] = 0.0
    return new


def solve_boundary(prob: NormalProblem, n_t: int = 400, tol: float = 1e-6,
                   max_iter: int = 500, n_quad: int = 64) -> Boundary:
    """Boundary on [0, 1]; ``meta`` records iterations, residual and history."""
    if n_t < 50:
        raise ValueError("n_t must be at least 50")
    times = time_grid(n_t)
    T = prob.T_ext
    nodes, weights = _gauss_legendre(n_quad)
    # start below the known-pin boundary; near t = 1 the map is almost the
    # identity for levels far above sqrt(1 - t), so the scale matters
    x = classical.beta() * np.sqrt(1.0 - times)
    omega, last = 1.0, math.inf
    history = []
    for it in range(1, max_iter + 1):
        target = np.maximum(_picard_map(times, x, T, nodes, weights), 0.0)
        change = float(np.max(np.abs(target - x)))
        if change > last:
            omega = max(0.5 * omega, 1.0 / 64)
        x = x + omega * (target - x)
        history.append(change)
        last = change
        if change < tol:
            break
    else:
        raise ConvergenceError(f"no convergence after {max_iter} sweeps (last change {last:.3g})", last)
    residual = float(np.max(np.abs(np.maximum(_picard_map(times, x, T, nodes, weights), 0.0) - x)))
    meta = {"m": prob.m, "gamma2": prob.gamma2, "pin": prob.pin, "T_ext": T, "tol": tol,
            "iterations": it, "residual": residual, "history": history}
    return Boundary(times, x + prob.pin, UPPER, meta=meta)


def known_pin_cap(prob: NormalProblem, times):
    """Boundary of the unrestricted extended bridge, ``P + beta sqrt(T - t)``."""
    return prob.pin + classical.beta() * np.sqrt(prob.T_ext - np.asarray(times))


def ou_profile(prob: NormalProblem, b: Boundary):
    """Boundary in OU coordinates: ``s = log(T/(T-t))/2``, ``g = (b - P)/sqrt(1 - t/T)``."""
    T = prob.T_ext
    t = np.asarray(b.times)
    s = 0.5 * np.log(T / (T - t))
    g = (np.asarray(b.levels) - prob.pin) / np.sqrt(1.0 - t / T)
    return s, g


def ou_consistency_check(prob: NormalProblem, b: Boundary) -> float:
    """Largest violation of ``g >= 0``, ``g`` nonincreasing and ``g(T') = 0``."""
    _, g = ou_profile(prob, b)
    negative = float(max(-g.min(), 0.0))
    rising = float(max(np.max(np.diff(g)), 0.0))
    terminal = float(abs(g[-1]))
    return max(negative, rising, terminal)
