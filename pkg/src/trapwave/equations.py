"""Helmholtz and Schrodinger problems written as -Laplace(u) + q u = omega u.

Helmholtz with index n(x):  omega = k^2,  q = -k^2 (n^2 - 1).
Schrodinger with V(x):      omega = E,    q = V.
The background (n = 1, V = 0) has q = 0, so channel modes only see the
cross-section part of q.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


@dataclass(frozen=True, eq=False)
class Helmholtz:
    k_sq: float
    index: Optional[Callable] = None

    @property
    def omega(self) -> float:
        return float(self.k_sq)

    @property
    def k(self) -> float:
        return float(np.sqrt(self.k_sq))

    def with_omega(self, omega: float) -> "Helmholtz":
        return Helmholtz(omega, self.index)

    @property
    def medium(self):
        return self.index

    @property
    def q_factor(self) -> float:
        return -float(self.k_sq)

    def q_weight(self, x, y):
        """q = q_factor * q_weight; the weight does not depend on frequency."""
        n = np.asarray(self.index(x, y), dtype=float)
        return n * n - 1.0

    def q(self, x, y):
        """Zeroth-order coefficient at points, or None for the background medium."""
        if self.index is None:
            return None
        return self.q_factor * self.q_weight(x, y)

    def profile_q(self, profile):
        if profile is None:
            return None
        return lambda s: -self.k_sq * (np.asarray(profile(s), dtype=float) ** 2 - 1.0)


@dataclass(frozen=True, eq=False)
class Schrodinger:
    E: float
    potential: Optional[Callable] = None

    @property
    def omega(self) -> float:
        return float(self.E)

    @property
    def k(self) -> float:
        return float(np.sqrt(max(self.E, 0.0)))

    def with_omega(self, omega: float) -> "Schrodinger":
        return Schrodinger(omega, self.potential)

    @property
    def medium(self):
        return self.potential

    @property
    def q_factor(self) -> float:
        return 1.0

    def q_weight(self, x, y):
        return np.asarray(self.potential(x, y), dtype=float)

    def q(self, x, y):
        if self.potential is None:
            return None
        return self.q_weight(x, y)

    def profile_q(self, profile):
        if profile is None:
            return None
        return lambda s: np.asarray(profile(s), dtype=float)


def default_zeta(omega: float) -> float:
    return max(1.0, float(np.sqrt(abs(omega))))
