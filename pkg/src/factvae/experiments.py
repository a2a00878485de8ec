"""The bars experiment: train on quadrant-grouped bar images and score the result."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import BarsConfig, GroupedDataset, generate_bars
from .evaluate import ACTIVE_THRESHOLD, SparsityMatrix, reconstruct_dataset, sparsity_matrix
from .gaussian import SeededRng
from .model import FactVaeModel
from .trainer import TrainConfig, TrainHistory, train

TOP, BOTTOM = ("TL", "TR"), ("BL", "BR")


@dataclass
class BarsRun:
    dataset: GroupedDataset
    model: FactVaeModel
    history: TrainHistory


def run_bars(lam: float, seed: int = 0, bars: BarsConfig | None = None, latent: int = 8,
             hidden: int = 32, **train_kwargs) -> BarsRun:
    bars = bars or BarsConfig(seed=seed)
    dataset = generate_bars(bars)
    model = FactVaeModel.initialize(dataset.specs, latent, hidden, SeededRng.derived(seed, "init"))
    history = train(dataset, model, TrainConfig(lam=lam, seed=seed, **train_kwargs))
    return BarsRun(dataset, model, history)


@dataclass
class QuadrantPattern:
    top_shared: list[int]      # latents active for both TL and TR
    bottom_shared: list[int]   # latents active for both BL and BR
    crossing: list[int]        # latents active for a top and a bottom quadrant
    active_fraction: float


def quadrant_pattern(sm: SparsityMatrix, rel: float = ACTIVE_THRESHOLD) -> QuadrantPattern:
    act = sm.active(rel)
    row = {g: act[i] for i, g in enumerate(sm.groups)}
    top_any = row["TL"] | row["TR"]
    bottom_any = row["BL"] | row["BR"]
    return QuadrantPattern(
        top_shared=[int(j) for j in np.flatnonzero(row["TL"] & row["TR"])],
        bottom_shared=[int(j) for j in np.flatnonzero(row["BL"] & row["BR"])],
        crossing=[int(j) for j in np.flatnonzero(top_any & bottom_any)],
        active_fraction=float(act.mean()),
    )


def half_image_mse(model: FactVaeModel, train_set: GroupedDataset, test_set: GroupedDataset,
                   observe=("TL", "BL"), targets=("TR", "BR")) -> tuple[float, float]:
    """(model MSE, training-mean MSE) on ``targets`` given only ``observe``."""
    recon = reconstruct_dataset(model, test_set, observe)
    err_model, err_mean = [], []
    for g in targets:
        gi = train_set.names.index(g)
        train_mean = train_set.values[g][train_set.observed[:, gi]].mean(axis=0)
        truth = test_set.values[g]
        err_model.append((recon.values[g] - truth) ** 2)
        err_mean.append((train_mean[None, :] - truth) ** 2)
    return float(np.mean(err_model)), float(np.mean(err_mean))


__all__ = ["BarsRun", "QuadrantPattern", "run_bars", "quadrant_pattern", "half_image_mse",
           "sparsity_matrix"]
