"""Collapsed stochastic variational inference with a proximal group-lasso step.

Each iteration draws a minibatch, picks a random inference subset of every
sample's observed groups, and computes the minibatch-mean ELBO with the
likelihood evaluated on all observed groups, plus the weight prior divided
by the dataset size. The non-sparse parameters then
take an Adam step, the stacked sparsity matrices take a plain gradient step
of size ``eta``, and the group-lasso prox shrinks their columns by
``eta * lam``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter
from .data import GroupedDataset
from .errors import InvalidArgumentError, NumericalError
from .gaussian import SeededRng
from .model import FactVaeModel, batch_elbo
from .sparsity import SparsityConfig, column_norms, penalty, prox_step

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 1.0
    lr: float = 1e-3
    eta: float = 1e-4
    epochs: int = 200
    batch_size: int = 25
    q_keep: float = 0.5
    mc_samples: int = 1
    seed: int = 0

    def __post_init__(self):
        if not self.lam >= 0:
            raise InvalidArgumentError("lambda must be >= 0")
        if not (self.lr > 0 and self.eta > 0):
            raise InvalidArgumentError("learning rate and eta must be > 0")
        if not 0 < self.q_keep <= 1:
            raise InvalidArgumentError("q_keep must lie in (0, 1]")
        if self.epochs < 0 or self.batch_size < 1 or self.mc_samples < 1:
            raise InvalidArgumentError("epochs must be >= 0; batch_size and mc_samples >= 1")


@dataclass
class EpochRecord:
    epoch: int
    elbo_tilde: float
    penalty: float
    zero_col_fraction: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def to_csv(self) -> str:
        rows = ["epoch,elbo_tilde,penalty,zero_col_fraction"]
        for r in self.records:
            rows.append(f"{r.epoch},{r.elbo_tilde:.10g},{r.penalty:.10g},{r.zero_col_fraction:.10g}")
        return "\n".join(rows) + "\n"

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_csv())


class AdamState:
    def __init__(self, params: Sequence[Parameter], beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.value) for p in params]
        self.v = [np.zeros_like(p.value) for p in params]
        self.t = 0


def adam_step(params: Sequence[Parameter], grads: Sequence[np.ndarray], state: AdamState, lr: float):
    """One bias-corrected Adam step *descending* ``grads``."""
    if len(params) != len(state.m):
        raise InvalidArgumentError("optimizer state does not match parameters")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1.0 - b1**state.t, 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.value -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def sample_inference_masks(observed: np.ndarray, q_keep: float, rng: SeededRng) -> np.ndarray:
    """Keep each observed group with probability ``q_keep``, redrawing empty rows."""
    observed = np.asarray(observed, dtype=bool)
    if observed.ndim != 2 or not observed.any(axis=1).all():
        raise InvalidArgumentError("every row needs at least one observed group")
    if q_keep >= 1:
        return observed.copy()
    keep = (rng.uniform(observed.shape) < q_keep) & observed
    for i in np.flatnonzero(~keep.any(axis=1)):
        while not keep[i].any():
            keep[i] = (rng.uniform(observed.shape[1]) < q_keep) & observed[i]
    return keep


def sample_inference_subset(observed, q_keep: float, rng: SeededRng, order: Sequence[str] | None = None) -> set:
    """Random nonempty subset of ``observed``; each member kept w.p. ``q_keep``."""
    names = list(order) if order is not None else sorted(observed)
    if not observed:
        raise InvalidArgumentError("observed set must be nonempty")
    mask = np.array([[n in observed for n in names]])
    keep = sample_inference_masks(mask, q_keep, rng)[0]
    return {n for n, k in zip(names, keep) if k}


def zero_column_fraction(model: FactVaeModel) -> float:
    norms = np.concatenate([column_norms(p.value) for p in model.phi_parameters()])
    return float(np.mean(norms == 0.0))


def train(dataset: GroupedDataset, model: FactVaeModel, config: TrainConfig,
          rng: SeededRng | None = None) -> TrainHistory:
    if [(s.name, s.dim) for s in dataset.specs] != [(s.name, s.dim) for s in model.groups]:
        raise InvalidArgumentError("dataset groups do not match the model")
    rng = rng if rng is not None else SeededRng.derived(config.seed, "train")
    sparsity = SparsityConfig(config.lam, config.eta)
    theta, phi = model.theta_parameters(), model.phi_parameters()
    params = theta + phi
    adam = AdamState(theta)
    history = TrainHistory()
    n = len(dataset)
    prior_weight = 1.0 / n if n else 0.0
    iteration = 0
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        values = []
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            xs, observed = dataset.batch(idx)
            include = sample_inference_masks(observed, config.q_keep, rng)
            eps = rng.normal((config.mc_samples, len(idx), model.latent))
            try:
                value, grads = ad.gradient(
                    lambda: -batch_elbo(model, xs, include, observed, eps, prior_weight), params)
            except NumericalError as exc:
                raise NumericalError(f"iteration {iteration} (epoch {epoch}): {exc}") from exc
            adam_step(theta, grads[: len(theta)], adam, config.lr)
            for net in model.nets.values():
                net.clamp_logvar()
            for p, g in zip(phi, grads[len(theta):]):
                p.value -= config.eta * g
            prox_step(model, sparsity)
            values.append(-value)
            iteration += 1
        record = EpochRecord(epoch + 1, float(np.mean(values)), penalty(model, config.lam),
                             zero_column_fraction(model))
        history.records.append(record)
        log.debug("epoch %d elbo %.4f penalty %.4f zero %.3f", record.epoch, record.elbo_tilde,
                  record.penalty, record.zero_col_fraction)
    return history
