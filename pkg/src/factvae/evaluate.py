"""Conditional reconstruction, heldout likelihood, sparsity export and PGM images."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.special import logsumexp

from .data import GroupedDataset
from .errors import InvalidArgumentError, NumericalError
from .gaussian import LOG_2PI, SeededRng
from .model import FactVaeModel, GroupedSample, fused_posterior, sample_arrays
from .sparsity import column_norms

ACTIVE_THRESHOLD = 0.1


@dataclass
class SparsityMatrix:
    groups: list[str]
    values: np.ndarray  # (G, K) column norms

    def active(self, rel: float = ACTIVE_THRESHOLD) -> np.ndarray:
        """Entries above ``rel`` times the largest entry."""
        top = self.values.max() if self.values.size else 0.0
        if top == 0:
            return np.zeros_like(self.values, dtype=bool)
        return self.values > rel * top

    def to_csv(self) -> str:
        k = self.values.shape[1]
        rows = ["group," + ",".join(f"z{j + 1}" for j in range(k))]
        for g, row in zip(self.groups, self.values):
            rows.append(g + "," + ",".join(f"{v:.10g}" for v in row))
        return "\n".join(rows) + "\n"

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_csv())


def sparsity_matrix(model: FactVaeModel) -> SparsityMatrix:
    vals = np.stack([column_norms(model.nets[g].params["phi"].value) for g in model.names])
    return SparsityMatrix(model.names, vals)


def _decode_all(model: FactVaeModel, z: np.ndarray) -> dict[str, np.ndarray]:
    return {g: model.nets[g].decoder_mean(z).value for g in model.names}


def _include_mask(model: FactVaeModel, observed: np.ndarray, observe: Iterable[str]) -> np.ndarray:
    want = set(observe)
    unknown = want - set(model.names)
    if unknown:
        raise InvalidArgumentError(f"unknown groups {sorted(unknown)}")
    cols = np.array([g in want for g in model.names])
    return observed & cols[None, :]


def _latent(mean, precision, mode, rng):
    if mode == "mean":
        return mean
    if mode == "sample":
        if rng is None:
            raise InvalidArgumentError("mode='sample' requires an rng")
        return mean + rng.normal(mean.shape) / np.sqrt(precision)
    raise InvalidArgumentError(f"unknown mode {mode!r}")


def reconstruct(model: FactVaeModel, sample: GroupedSample, observe: Iterable[str],
                mode: str = "mean", rng: SeededRng | None = None) -> dict[str, np.ndarray]:
    """Decoder means for every group given only the groups in ``observe``."""
    observe = list(observe)
    if not observe:
        raise InvalidArgumentError("observe set must be nonempty")
    for g in observe:
        if sample.values.get(g) is None:
            raise InvalidArgumentError(f"group {g!r} is not present in the sample")
    xs, present = sample_arrays(model, [sample])
    include = _include_mask(model, present, observe)
    mean, prec = fused_posterior(model, xs, include)
    z = _latent(mean.value, prec.value, mode, rng)
    return {g: v[0] for g, v in _decode_all(model, z).items()}


def reconstruct_dataset(model: FactVaeModel, dataset: GroupedDataset, observe: Iterable[str],
                        mode: str = "mean", rng: SeededRng | None = None) -> GroupedDataset:
    """Reconstruct every sample from the requested groups it actually has.

    A sample holding none of the requested groups is decoded from the prior
    mean (z = 0) or a prior draw.
    """
    xs, present = dataset.batch(np.arange(len(dataset)))
    include = _include_mask(model, present, observe)
    mean, prec = fused_posterior(model, xs, include)
    z = _latent(mean.value, prec.value, mode, rng)
    out = _decode_all(model, z)
    return GroupedDataset(model.groups, out, np.ones((len(dataset), len(model.groups)), dtype=bool))


def heldout_ll_batch(model: FactVaeModel, xs: dict[str, np.ndarray], observed: np.ndarray,
                     samples: int, rng: SeededRng) -> np.ndarray:
    """Importance-weighted log-likelihood of each row's observed groups.

    The proposal is the fused posterior over all observed groups; with one
    sample this is a single-draw ELBO estimate.
    """
    if samples < 1:
        raise InvalidArgumentError("sample count must be >= 1")
    if not observed.any(axis=1).all():
        raise InvalidArgumentError("every sample needs at least one observed group")
    mean_t, prec_t = fused_posterior(model, xs, observed)
    mean, prec = mean_t.value, prec_t.value
    eps = rng.normal((samples,) + mean.shape)
    log_w = np.empty((samples, mean.shape[0]))
    log_q_const = 0.5 * np.sum(np.log(prec) - LOG_2PI, axis=1)
    for s in range(samples):
        z = mean + eps[s] / np.sqrt(prec)
        ll = np.zeros(mean.shape[0])
        for gi, g in enumerate(model.names):
            if observed[:, gi].any():
                ll += model.nets[g].log_likelihood(xs[g], z).value * observed[:, gi]
        log_pz = -0.5 * np.sum(z**2 + LOG_2PI, axis=1)
        log_qz = log_q_const - 0.5 * np.sum(eps[s] ** 2, axis=1)
        log_w[s] = ll + log_pz - log_qz
    if not np.all(np.isfinite(log_w)):
        raise NumericalError("non-finite importance weights")
    return logsumexp(log_w, axis=0) - np.log(samples)


def heldout_ll(model: FactVaeModel, sample: GroupedSample, samples: int = 64,
               rng: SeededRng | None = None) -> float:
    if rng is None:
        raise InvalidArgumentError("heldout_ll requires an rng")
    xs, present = sample_arrays(model, [sample])
    return float(heldout_ll_batch(model, xs, present, samples, rng)[0])


def dataset_heldout_ll(model: FactVaeModel, dataset: GroupedDataset, samples: int = 64,
                       rng: SeededRng | None = None) -> np.ndarray:
    xs, present = dataset.batch(np.arange(len(dataset)))
    return heldout_ll_batch(model, xs, present, samples, rng)


def write_pgm(image, path):
    """Binary greymap; values mapped affinely from [min, max] onto [0, 255]."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise InvalidArgumentError("image must be 2-D")
    if not np.all(np.isfinite(img)):
        raise InvalidArgumentError("image values must be finite")
    lo, hi = img.min(), img.max()
    if hi == lo:
        pix = np.zeros(img.shape, dtype=np.uint8)
    else:
        pix = np.floor((img - lo) / (hi - lo) * 255.0 + 0.5).clip(0, 255).astype(np.uint8)
    rows, cols = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
        fh.write(pix.tobytes())


def mse(pred: Sequence[np.ndarray], target: Sequence[np.ndarray]) -> float:
    return float(np.mean((np.asarray(pred) - np.asarray(target)) ** 2))
