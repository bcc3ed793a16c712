"""Concept prototype banks and expert neighborhood sizes."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .infomap import Partition


class PrototypeError(ValueError):
    pass


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class ExpertConfig:
    k1: int
    k2: int
    k3: int
    scale: float

    @property
    def ks(self) -> tuple[int, int, int]:
        return (self.k1, self.k2, self.k3)


def derive_experts(k1: int, scale: float, n: int) -> ExpertConfig:
    """Base expert k1, fine expert round(k1*R), coarse expert round(k1/R)."""
    if not 0.0 < scale < 1.0:
        raise ValueError("scale R must lie in (0, 1)")
    if not 1 <= k1 < n:
        raise ValueError(f"k1 must be in [1, {n - 1}]")
    k2 = max(1, _round_half_up(k1 * scale))
    k3 = min(n - 1, _round_half_up(k1 / scale))
    return ExpertConfig(k1, k2, k3, scale)


@dataclass
class ConceptMemory:
    expert_id: int
    prototypes: np.ndarray  # (K_G, d), unit rows
    concept_of: np.ndarray  # (n,) concept id per sample

    @property
    def k(self) -> int:
        return self.prototypes.shape[0]

    def update(self, c: int, v: np.ndarray, eta: float) -> np.ndarray:
        """Momentum step ``mu_c <- normalize(eta * mu_c + (1 - eta) * v)``."""
        if not 0.0 <= eta <= 1.0:
            raise ValueError("eta must be in [0, 1]")
        mu = eta * self.prototypes[c] + (1.0 - eta) * np.asarray(v, dtype=np.float64)
        norm = np.linalg.norm(mu)
        if norm == 0:
            raise PrototypeError("momentum update produced a zero prototype")
        self.prototypes[c] = mu / norm
        return self.prototypes[c]


def init_memory(part: Partition, features: np.ndarray, expert_id: int = 1) -> ConceptMemory:
    """Unit-normalized community means, one prototype per community."""
    features = np.asarray(features, dtype=np.float64)
    if part.n != features.shape[0]:
        raise ValueError("partition does not cover the feature rows")
    sums = np.zeros((part.k, features.shape[1]))
    np.add.at(sums, part.assignment, features)
    means = sums / part.sizes[:, None]
    norms = np.linalg.norm(means, axis=1, keepdims=True)
    if np.any(norms < 1e-12):
        raise PrototypeError("degenerate prototype")
    return ConceptMemory(expert_id, means / norms, part.assignment.copy())


def momentum_update(mem: ConceptMemory, c: int, v: np.ndarray, eta: float) -> np.ndarray:
    return mem.update(c, v, eta)
