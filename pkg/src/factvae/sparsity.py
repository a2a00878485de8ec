"""Group-lasso penalty on the columns of each group's stacked matrix and its prox."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError


@dataclass(frozen=True)
class SparsityConfig:
    lam: float = 1.0
    eta: float = 1e-4

    def __post_init__(self):
        if not self.lam >= 0:
            raise InvalidArgumentError(f"lambda must be >= 0, got {self.lam}")
        if not self.eta > 0:
            raise InvalidArgumentError(f"eta must be > 0, got {self.eta}")


def column_norms(phi: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(phi * phi, axis=0))


def penalty(model, lam: float) -> float:
    """``lam * sum_g sum_j ||phi_g[:, j]||_2``."""
    if lam < 0:
        raise InvalidArgumentError("lambda must be >= 0")
    return float(lam * sum(column_norms(p.value).sum() for p in model.phi_parameters()))


def _shrink_columns(phi: np.ndarray, threshold: float) -> np.ndarray:
    norms = column_norms(phi)
    keep = norms > threshold
    factor = np.where(keep, (norms - threshold) / np.where(keep, norms, 1.0), 0.0)
    # np.where instead of multiplying by 0 so dropped entries are +0.0, never -0.0
    return np.where(keep[None, :], phi * factor[None, :], 0.0)


def prox_group_lasso(column, eta: float, lam: float) -> np.ndarray:
    """Block soft-threshold: argmin_u 0.5||u - x||^2 + eta*lam*||u||_2."""
    if not eta > 0 or lam < 0:
        raise InvalidArgumentError("need eta > 0 and lambda >= 0")
    x = np.asarray(column, dtype=np.float64)
    if eta * lam == 0:
        return x.copy()
    return _shrink_columns(x.reshape(-1, 1), eta * lam).reshape(x.shape)


def prox_step(model, config: SparsityConfig):
    """Shrink every column of every group's stacked matrix in place."""
    threshold = config.eta * config.lam
    if threshold == 0:
        return
    for p in model.phi_parameters():
        p.value[...] = _shrink_columns(p.value, threshold)
