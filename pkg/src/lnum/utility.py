"""Concave utility families and the delivery-time observation channel."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError

FAMILIES = ("linear", "sqrt", "quadratic", "log")
_EDGE = 1e-12


@dataclass(frozen=True)
class Utility:
    """One utility curve.

    ``linear``    a*r
    ``sqrt``      a*sqrt(r + b) - a*sqrt(b)
    ``quadratic`` -a*r**2 + b*r
    ``log``       a*log(b*r + 1)
    """

    family: str
    a: float
    b: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown utility family {self.family!r}")
        if self.a < 0 or self.b < 0:
            raise ConfigurationError("utility parameters must be nonnegative")

    def __call__(self, r):
        a, b = self.a, self.b
        if self.family == "linear":
            return a * r
        if self.family == "sqrt":
            return a * np.sqrt(r + b) - a * np.sqrt(b)
        if self.family == "quadratic":
            return -a * r * r + b * r
        return a * np.log(b * r + 1.0)

    def derivative(self, r):
        a, b = self.a, self.b
        if self.family == "linear":
            return a + 0.0 * r
        if self.family == "sqrt":
            with np.errstate(divide="ignore"):
                return a / (2.0 * np.sqrt(r + b))
        if self.family == "quadratic":
            return -2.0 * a * r + b
        return a * b / (b * r + 1.0)

    def as_dict(self):
        return {"family": self.family, "a": float(self.a), "b": float(self.b)}


class UtilitySpec:
    """Per-class utilities on ``[0, B]`` with optional observation noise.

    ``D`` (max value) and ``L`` (Lipschitz constant) are derived here rather
    than supplied, so they can never disagree with the curves.
    """

    def __init__(self, utilities, bound, noise=0.0, grid_points=1000):
        self.utilities = tuple(u if isinstance(u, Utility) else Utility(**u) for u in utilities)
        self.bound = float(bound)
        self.noise = float(noise)
        if not self.utilities:
            raise ConfigurationError("at least one utility is required")
        if self.bound <= 0:
            raise ConfigurationError("size bound must be positive")
        if self.noise < 0:
            raise ConfigurationError("noise level must be nonnegative")
        B = self.bound
        for k, u in enumerate(self.utilities):
            if u.family == "quadratic" and u.b - 2.0 * u.a * B < -1e-12:
                raise ConfigurationError(
                    f"class {k}: quadratic decreases on [0, {B}] (need b - 2aB >= 0)")
        grid = np.linspace(0.0, B, grid_points)
        values = np.array([u(grid) for u in self.utilities])
        self.D = float(np.abs(values).max())
        # concave and nondecreasing: |f'| peaks at 0 (right derivative)
        self.L = float(max(u.derivative(0.0) for u in self.utilities))
        if np.any(np.diff(values, axis=1) < -1e-12):
            raise ConfigurationError("utility is not nondecreasing on [0, B]")
        slopes = np.abs(np.diff(values, axis=1)) / np.diff(grid)
        if np.isfinite(self.L) and np.any(slopes > self.L * (1 + 1e-9) + 1e-12):
            raise ConfigurationError(f"grid slope exceeds the derived Lipschitz constant {self.L}")
        if np.any(values[:, 1:-1] < 0.5 * (values[:, :-2] + values[:, 2:]) - 1e-9):
            raise ConfigurationError("utility is not concave on [0, B]")

    @property
    def n_classes(self):
        return len(self.utilities)

    def _check(self, r):
        if not (-_EDGE <= r <= self.bound + _EDGE):
            raise DomainError(f"job size {r} outside [0, {self.bound}]")

    def evaluate(self, k, r):
        self._check(r)
        return float(self.utilities[k](r))

    def observe(self, k, r, rng):
        value = self.evaluate(k, r)
        if self.noise > 0.0:
            value += rng.uniform(-self.noise, self.noise)
        return value

    def analytic_gradient(self, k, r):
        """Closed-form derivative (right derivative at the domain edge).

        For oracle and test use only; policies learn from observations.
        """
        self._check(r)
        return float(self.utilities[k].derivative(r))

    def total(self, r):
        """Sum of utilities; ``r`` may be (K,) or (..., K)."""
        r = np.asarray(r, dtype=float)
        return sum(u(r[..., k]) for k, u in enumerate(self.utilities))

    def gradient(self, r, cap=1e12):
        r = np.asarray(r, dtype=float)
        g = np.array([u.derivative(r[k]) for k, u in enumerate(self.utilities)], dtype=float)
        return np.minimum(g, cap)

    def with_noise(self, noise):
        return UtilitySpec(self.utilities, self.bound, noise)

    def as_dicts(self):
        return [u.as_dict() for u in self.utilities]


def evaluate(spec, k, r):
    return spec.evaluate(k, r)


def observe(spec, k, r, rng):
    return spec.observe(k, r, rng)


def analytic_gradient(spec, k, r):
    return spec.analytic_gradient(k, r)


def draw_utilities(K, rng, bound, families=FAMILIES):
    """Random utility mix: family uniform, a ~ U[0.5, 2], b ~ U[0.5, 1.5].

    Quadratic curvature is capped at ``b / (2B)`` so the curve stays
    nondecreasing on ``[0, B]``.
    """
    out = []
    for _ in range(K):
        family = families[int(rng.integers(len(families)))]
        a = float(rng.uniform(0.5, 2.0))
        b = float(rng.uniform(0.5, 1.5))
        if family == "linear":
            b = 0.0
        elif family == "quadratic":
            a = min(a, b / (2.0 * bound))
        out.append(Utility(family, a, b))
    return out
