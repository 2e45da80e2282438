"""Linear multistep time discretizations."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LinearMultistepScheme:
    """``sum_j alpha_j x^{n-j} = dt sum_j beta_j f(x^{n-j})`` with ``sum_j alpha_j = 0``."""

    alpha: tuple[float, ...]
    beta: tuple[float, ...]
    dt: float
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        if len(self.alpha) != len(self.beta) or len(self.alpha) < 2:
            raise ValueError("alpha and beta must have equal length k + 1 >= 2")
        if abs(sum(self.alpha)) > 1e-14 * max(abs(a) for a in self.alpha):
            raise ValueError(f"coefficients alpha must sum to zero, got {sum(self.alpha)}")
        if not self.dt > 0:
            raise ValueError("time step must be positive")
        if self.alpha[0] == 0:
            raise ValueError("alpha_0 must be nonzero")

    @property
    def steps(self) -> int:
        return len(self.alpha) - 1

    @property
    def implicit(self) -> bool:
        return self.beta[0] != 0.0

    def with_dt(self, dt: float) -> "LinearMultistepScheme":
        return LinearMultistepScheme(self.alpha, self.beta, dt, self.name)

    def startup(self, n: int) -> "LinearMultistepScheme":
        """Scheme used for step ``n`` (1-based); k-step schemes start with backward Euler."""
        if n >= self.steps:
            return self
        if self.steps == 2 and n == 1:
            return backward_euler(self.dt)
        raise NotImplementedError("startup only defined for schemes with k <= 2")


def backward_euler(dt: float) -> LinearMultistepScheme:
    return LinearMultistepScheme((1.0, -1.0), (1.0, 0.0), dt, "backward_euler")


def bdf2(dt: float) -> LinearMultistepScheme:
    return LinearMultistepScheme((1.0, -4.0 / 3.0, 1.0 / 3.0), (2.0 / 3.0, 0.0, 0.0), dt, "bdf2")


def scheme_by_name(name: str, dt: float) -> LinearMultistepScheme:
    table = {"backward_euler": backward_euler, "backward-euler": backward_euler, "be": backward_euler,
             "bdf2": bdf2}
    try:
        return table[name.lower()](dt)
    except KeyError:
        raise ValueError(f"unknown scheme {name!r}") from None


def history_times(t_n: float, scheme: LinearMultistepScheme) -> np.ndarray:
    return t_n - scheme.dt * np.arange(1, scheme.steps + 1)
