"""Diagonal Gaussians, product-of-experts fusion and seeded randomness.

Every Gaussian here is parameterized by mean and *precision*; a precision of
zero marks a dimension the expert says nothing about.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidArgumentError

LOG_2PI = float(np.log(2.0 * np.pi))


class SeededRng:
    """Reproducible random stream backed by the Philox counter-based generator.

    Philox-4x64 (Salmon et al., 2011) maps (key, counter) to output blocks with
    a fixed bijection, so a given seed yields the same raw stream everywhere.
    """

    def __init__(self, seed: int):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise InvalidArgumentError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        self.generator = np.random.Generator(np.random.Philox(key=seed))

    @classmethod
    def derived(cls, seed: int, stream: str) -> "SeededRng":
        """A stream keyed by ``(seed, stream)``, independent of other labels."""
        words = [int(seed) & 0xFFFFFFFF, int(seed) >> 32] + list(stream.encode("utf-8"))
        state = np.random.SeedSequence(words).generate_state(1, dtype=np.uint64)
        return cls(int(state[0]))

    def normal(self, size=None) -> np.ndarray:
        return self.generator.standard_normal(size)

    def uniform(self, size=None) -> np.ndarray:
        return self.generator.random(size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)



@dataclass(frozen=True)
class DiagGaussian:
    mean: np.ndarray
    precision: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        precision = np.asarray(self.precision, dtype=np.float64).reshape(-1)
        if mean.shape != precision.shape:
            raise InvalidArgumentError(
                f"mean has length {mean.size} but precision has length {precision.size}"
            )
        if np.any(precision < 0) or not np.all(np.isfinite(precision)):
            raise InvalidArgumentError("precision entries must be finite and nonnegative")
        if not np.all(np.isfinite(mean)):
            raise InvalidArgumentError("mean entries must be finite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "precision", precision)

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def variance(self) -> np.ndarray:
        return 1.0 / self.precision

    @classmethod
    def standard(cls, k: int) -> "DiagGaussian":
        return cls(np.zeros(k), np.ones(k))


def _require_positive(q: DiagGaussian, what: str):
    if np.any(q.precision <= 0):
        raise InvalidArgumentError(f"{what} is undefined for zero precision")


def poe_fuse(experts: Sequence[DiagGaussian], k: int | None = None) -> DiagGaussian:
    """Multiply the standard-normal prior with every expert.

    Precisions add; the fused mean is the precision-weighted average of the
    expert means, with the prior contributing precision 1 at mean 0.
    ``k`` is only needed when ``experts`` is empty.
    """
    if not experts:
        if k is None:
            raise InvalidArgumentError("latent dimension required when no experts are given")
        return DiagGaussian.standard(k)
    dims = {e.dim for e in experts}
    if len(dims) != 1 or (k is not None and dims != {k}):
        raise InvalidArgumentError(f"experts disagree on dimension: {sorted(dims)}")
    precision = np.ones(experts[0].dim)
    weighted = np.zeros(experts[0].dim)
    for e in experts:
        precision = precision + e.precision
        weighted = weighted + e.precision * e.mean
    return DiagGaussian(weighted / precision, precision)


def kl_to_standard_normal(q: DiagGaussian) -> float:
    _require_positive(q, "KL divergence")
    var = 1.0 / q.precision
    return float(0.5 * np.sum(var + q.mean**2 - 1.0 + np.log(q.precision)))


def entropy(q: DiagGaussian) -> float:
    _require_positive(q, "entropy")
    return float(0.5 * np.sum(LOG_2PI + 1.0 - np.log(q.precision)))


def log_density(q: DiagGaussian, z: np.ndarray) -> float:
    _require_positive(q, "log density")
    z = np.asarray(z, dtype=np.float64)
    return float(
        0.5 * np.sum(np.log(q.precision) - LOG_2PI - q.precision * (z - q.mean) ** 2)
    )


def reparam_sample(q: DiagGaussian, rng: SeededRng) -> np.ndarray:
    """Draw ``mean + eps / sqrt(precision)`` with ``eps`` from ``rng``."""
    _require_positive(q, "sampling")
    eps = rng.normal(q.dim)
    return q.mean + eps / np.sqrt(q.precision)
