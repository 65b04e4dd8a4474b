"""Prior distributions for the pinning point and problem standardization.

Five families are supported: a point mass, a two-point law, a finite discrete
law, a normal law and a finite Gaussian mixture.  All of them are reduced to
one of two internal shapes used by the filter:

* atoms   -- ``(values, weights)`` for the discrete families;
* gaussian components -- ``(weights, means, variances)`` for the rest.

Priors serialize to small JSON objects, for example::

    {"type": "point_mass", "r": 0.0}
    {"type": "two_point", "r": 1.0, "l": -1.0, "p": 0.5}
    {"type": "discrete", "atoms": [[-1.0, 0.25], [0.5, 0.75]]}
    {"type": "normal", "m": 0.0, "var": 0.5}
    {"type": "mixture", "components": [[0.5, -0.5, 0.5], [0.5, 0.5, 0.5]]}

``{"type": "symmetric_mixture", "r": ..., "var": ...}`` (or ``"mixture"`` with
``r`` and ``var`` instead of ``components``) is accepted on input as shorthand
for ``0.5 N(-r, var) + 0.5 N(r, var)``.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, NamedTuple, Union

import numpy as np

MAX_ATOMS = 64
MAX_COMPONENTS = 16
WEIGHT_TOL = 1e-12


class PriorError(ValueError):
    """Invalid prior parameters."""


def _finite(name: str, *values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise PriorError(f"{name}: non-finite parameter {v!r}")


def _check_weights(weights: np.ndarray, what: str) -> None:
    if len(weights) > 1 and np.any((weights <= 0.0) | (weights >= 1.0)):
        raise PriorError(f"{what} weights must lie strictly in (0, 1)")
    if abs(weights.sum() - 1.0) > WEIGHT_TOL:
        raise PriorError(f"{what} weights sum to {weights.sum()!r}, not 1")


@dataclass(frozen=True)
class PointMass:
    r: float

    def __post_init__(self):
        _finite("PointMass", self.r)

    def atoms(self):
        return np.array([float(self.r)]), np.array([1.0])

    def to_dict(self):
        return {"type": "point_mass", "r": float(self.r)}


@dataclass(frozen=True)
class TwoPoint:
    """``p * delta_r + (1 - p) * delta_l`` with ``r > l``."""

    r: float
    l: float
    p: float

    def __post_init__(self):
        _finite("TwoPoint", self.r, self.l, self.p)
        if not self.r > self.l:
            raise PriorError("TwoPoint requires r > l")
        if not 0.0 < self.p < 1.0:
            raise PriorError("TwoPoint requires 0 < p < 1")

    def atoms(self):
        return np.array([float(self.l), float(self.r)]), np.array([1.0 - self.p, self.p])

    def to_dict(self):
        return {"type": "two_point", "r": float(self.r), "l": float(self.l), "p": float(self.p)}


@dataclass(frozen=True)
class Discrete:
    atoms_: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if not 1 <= len(self.atoms_) <= MAX_ATOMS:
            raise PriorError(f"Discrete prior needs 1..{MAX_ATOMS} atoms")
        values, weights = self.atoms()
        _finite("Discrete", *values, *weights)
        if len(np.unique(values)) != len(values):
            raise PriorError("Discrete atoms must have distinct values")
        _check_weights(weights, "Discrete")

    @classmethod
    def from_pairs(cls, pairs) -> "Discrete":
        return cls(tuple((float(v), float(w)) for v, w in pairs))

    def atoms(self):
        arr = np.array(self.atoms_, dtype=float).reshape(-1, 2)
        order = np.argsort(arr[:, 0])
        return arr[order, 0], arr[order, 1]

    def to_dict(self):
        return {"type": "discrete", "atoms": [[v, w] for v, w in self.atoms_]}


@dataclass(frozen=True)
class Normal:
    m: float
    var: float

    def __post_init__(self):
        _finite("Normal", self.m, self.var)
        if not self.var > 0.0:
            raise PriorError("Normal variance must be positive")

    def components(self):
        return np.array([1.0]), np.array([float(self.m)]), np.array([float(self.var)])

    def to_dict(self):
        return {"type": "normal", "m": float(self.m), "var": float(self.var)}


@dataclass(frozen=True)
class Mixture:
    """Gaussian mixture; each component is ``(weight, mean, variance)``."""

    components_: tuple[tuple[float, float, float], ...]

    def __post_init__(self):
        if not 1 <= len(self.components_) <= MAX_COMPONENTS:
            raise PriorError(f"Mixture needs 1..{MAX_COMPONENTS} components")
        w, m, v = self.components()
        _finite("Mixture", *w, *m, *v)
        if np.any(v <= 0.0):
            raise PriorError("Mixture variances must be positive")
        _check_weights(w, "Mixture")

    @classmethod
    def from_triples(cls, triples) -> "Mixture":
        return cls(tuple((float(w), float(m), float(v)) for w, m, v in triples))

    @classmethod
    def symmetric(cls, r: float, var: float) -> "Mixture":
        return cls(((0.5, -float(r), float(var)), (0.5, float(r), float(var))))

    def components(self):
        arr = np.array(self.components_, dtype=float).reshape(-1, 3)
        return arr[:, 0], arr[:, 1], arr[:, 2]

    def to_dict(self):
        return {"type": "mixture", "components": [list(c) for c in self.components_]}


Prior = Union[PointMass, TwoPoint, Discrete, Normal, Mixture]
DISCRETE_TYPES = (PointMass, TwoPoint, Discrete)
GAUSSIAN_TYPES = (Normal, Mixture)


def is_discrete(prior: Prior) -> bool:
    return isinstance(prior, DISCRETE_TYPES)


def prior_mean(p: Prior) -> float:
    if is_discrete(p):
        u, w = p.atoms()
        return float(np.dot(w, u))
    w, m, _ = p.components()
    return float(np.dot(w, m))


def prior_variance(p: Prior) -> float:
    mean = prior_mean(p)
    if is_discrete(p):
        u, w = p.atoms()
        return float(max(np.dot(w, (u - mean) ** 2), 0.0))
    w, m, v = p.components()
    return float(max(np.dot(w, v + (m - mean) ** 2), 0.0))


def support_bounds(p: Prior) -> tuple[float, float]:
    """Smallest closed interval containing the support (infinite for Gaussians)."""
    if is_discrete(p):
        u, _ = p.atoms()
        return float(u.min()), float(u.max())
    return -math.inf, math.inf


def shift_prior(p: Prior, delta: float) -> Prior:
    """Law of ``X + delta`` when ``X ~ p``."""
    return _affine(p, 1.0, delta)


def _affine(p: Prior, scale: float, delta: float) -> Prior:
    # law of scale * X + delta, scale > 0
    if isinstance(p, PointMass):
        return PointMass(scale * p.r + delta)
    if isinstance(p, TwoPoint):
        return TwoPoint(scale * p.r + delta, scale * p.l + delta, p.p)
    if isinstance(p, Discrete):
        return Discrete(tuple((scale * v + delta, w) for v, w in p.atoms_))
    if isinstance(p, Normal):
        return Normal(scale * p.m + delta, scale**2 * p.var)
    if isinstance(p, Mixture):
        return Mixture(tuple((w, scale * m + delta, scale**2 * v) for w, m, v in p.components_))
    raise PriorError(f"unsupported prior {p!r}")


@dataclass(frozen=True)
class ProblemSpec:
    """Physical problem: bridge with diffusion ``sigma`` pinned at time ``horizon``."""

    sigma: float
    horizon: float
    start: float
    prior: Prior

    def __post_init__(self):
        _finite("ProblemSpec", self.sigma, self.horizon, self.start)
        if self.sigma <= 0 or self.horizon <= 0:
            raise PriorError("sigma and horizon must be positive")


class Standardized(NamedTuple):
    """Canonical problem on [0, 1] started at 0.

    The canonical pin is ``(X_phys - start) / value_scale`` and a canonical
    value ``v`` maps back as ``V_phys = value_scale * v + value_offset``.
    """

    prior: Prior
    value_scale: float
    value_offset: float

    def to_physical(self, v):
        return self.value_scale * v + self.value_offset

    def to_canonical(self, value):
        return (value - self.value_offset) / self.value_scale


def standardize(spec: ProblemSpec) -> Standardized:
    scale = spec.sigma * math.sqrt(spec.horizon)
    if not math.isfinite(scale):
        raise PriorError("sigma * sqrt(horizon) is not finite")
    canonical = _affine(spec.prior, 1.0 / scale, -spec.start / scale)
    return Standardized(canonical, scale, float(spec.start))


# --- serialization -------------------------------------------------------

def prior_from_dict(d: dict[str, Any]) -> Prior:
    try:
        kind = d["type"]
        if kind == "point_mass":
            return PointMass(float(d["r"]))
        if kind == "two_point":
            return TwoPoint(float(d["r"]), float(d["l"]), float(d["p"]))
        if kind == "discrete":
            return Discrete.from_pairs(d["atoms"])
        if kind == "normal":
            return Normal(float(d["m"]), float(d["var"]))
        if kind == "mixture" and "components" in d:
            return Mixture.from_triples(d["components"])
        if kind in ("symmetric_mixture", "mixture"):
            return Mixture.symmetric(float(d["r"]), float(d["var"]))
    except (KeyError, TypeError) as exc:
        raise PriorError(f"malformed prior object {d!r}: {exc}") from exc
    raise PriorError(f"unknown prior type {d.get('type')!r}")


def prior_to_dict(p: Prior) -> dict[str, Any]:
    return p.to_dict()


_SHORTHAND = re.compile(r"^\s*([a-z_]+)\s*\{(.*)\}\s*$")


def _number(text: str) -> float:
    return float(Fraction(text.strip()))


def parse_prior(text: str) -> Prior:
    """Parse JSON or the shorthand ``two_point{r:1,l:-1,p:0.5}``.

    Shorthand values may be fractions such as ``5/9``.
    """
    text = text.strip()
    if text.startswith("{"):
        return prior_from_dict(json.loads(text))
    match = _SHORTHAND.match(text)
    if not match:
        raise PriorError(f"cannot parse prior {text!r}")
    kind, body = match.groups()
    fields: dict[str, Any] = {"type": kind}
    for item in filter(None, (s.strip() for s in body.split(","))):
        key, _, value = item.partition(":")
        if not _:
            raise PriorError(f"bad shorthand field {item!r}")
        try:
            fields[key.strip()] = _number(value)
        except (ValueError, ZeroDivisionError) as exc:
            raise PriorError(f"bad number in {item!r}") from exc
    return prior_from_dict(fields)
