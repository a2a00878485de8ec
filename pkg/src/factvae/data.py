"""Grouped datasets: the synthetic bars generator and a plain-text file format.

File format (UTF-8, LF line endings)::

    FVD1
    TL:16,TR:16,BL:16,BR:16
    <g1 values>|<g2 values>|*|<g4 values>

Each record line holds one sample. Groups are separated by ``|``; a group is
either ``*`` (missing) or its comma-separated values written with 17
significant digits, which round-trips float64 exactly.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidArgumentError, ParseError
from .gaussian import SeededRng
from .model import GroupedSample, GroupSpec, check_specs

DATA_MAGIC = "FVD1"
QUADRANTS = ("TL", "TR", "BL", "BR")


class GroupedDataset:
    """Samples stored as one (N, p_g) array per group plus an (N, G) presence mask.

    Rows of a group's array where the group is missing hold NaN; nothing in
    the package reads them.
    """

    def __init__(self, specs: Sequence[GroupSpec], values: dict[str, np.ndarray], observed: np.ndarray):
        check_specs(specs)
        self.specs = list(specs)
        self.observed = np.asarray(observed, dtype=bool)
        n = self.observed.shape[0]
        if self.observed.shape != (n, len(self.specs)):
            raise InvalidArgumentError("presence mask must be (N, G)")
        if n and not self.observed.any(axis=1).all():
            bad = int(np.flatnonzero(~self.observed.any(axis=1))[0])
            raise InvalidArgumentError(f"sample {bad} has no observed group")
        self.values = {}
        for gi, s in enumerate(self.specs):
            arr = np.asarray(values[s.name], dtype=np.float64)
            if arr.shape != (n, s.dim):
                raise InvalidArgumentError(f"group {s.name}: expected shape {(n, s.dim)}, got {arr.shape}")
            if not np.all(np.isfinite(arr[self.observed[:, gi]])):
                raise InvalidArgumentError(f"group {s.name}: observed values must be finite")
            self.values[s.name] = arr

    @classmethod
    def from_samples(cls, specs: Sequence[GroupSpec], samples: Sequence[GroupedSample]) -> "GroupedDataset":
        n = len(samples)
        observed = np.array([[s.values.get(g.name) is not None for g in specs] for s in samples],
                            dtype=bool).reshape(n, len(specs))
        values = {}
        for gi, spec in enumerate(specs):
            arr = np.full((n, spec.dim), np.nan)
            for i, s in enumerate(samples):
                if observed[i, gi]:
                    v = np.asarray(s.values[spec.name], dtype=np.float64).reshape(-1)
                    if v.size != spec.dim:
                        raise InvalidArgumentError(f"sample {i} group {spec.name}: length {v.size} != {spec.dim}")
                    arr[i] = v
            values[spec.name] = arr
        return cls(specs, values, observed)

    def __len__(self):
        return self.observed.shape[0]

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.specs]

    def sample(self, i: int) -> GroupedSample:
        return GroupedSample({
            s.name: self.values[s.name][i].copy() if self.observed[i, gi] else None
            for gi, s in enumerate(self.specs)
        })

    def __getitem__(self, i):
        return self.sample(i)

    def batch(self, indices) -> tuple[dict[str, np.ndarray], np.ndarray]:
        """Per-group (B, p_g) arrays with zeros at missing rows, and the (B, G) mask."""
        idx = np.asarray(indices)
        mask = self.observed[idx]
        xs = {s.name: np.where(mask[:, gi, None], self.values[s.name][idx], 0.0)
              for gi, s in enumerate(self.specs)}
        return xs, mask

    def subset(self, indices) -> "GroupedDataset":
        idx = np.asarray(indices)
        return GroupedDataset(self.specs, {k: v[idx] for k, v in self.values.items()}, self.observed[idx])


# -- bars ----------------------------------------------------------------------

@dataclass(frozen=True)
class BarsConfig:
    n: int = 2000
    size: int = 8
    p_row: float = 0.25
    noise: float = 0.05
    p_miss: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.n < 0:
            raise InvalidArgumentError("n must be >= 0")
        if self.size < 4 or self.size % 2:
            raise InvalidArgumentError(f"image size must be even and >= 4, got {self.size}")
        for name in ("p_row", "p_miss"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidArgumentError(f"{name} must lie in [0, 1], got {v}")
        if not self.noise >= 0:
            raise InvalidArgumentError("noise must be >= 0")


def bars_specs(size: int) -> list[GroupSpec]:
    return [GroupSpec(q, (size // 2) ** 2) for q in QUADRANTS]


def split_quadrants(images: np.ndarray) -> dict[str, np.ndarray]:
    """(N, S, S) images -> {quadrant: (N, (S/2)^2)} in row-major order."""
    n, s, _ = images.shape
    h = s // 2
    blocks = {
        "TL": images[:, :h, :h], "TR": images[:, :h, h:],
        "BL": images[:, h:, :h], "BR": images[:, h:, h:],
    }
    return {k: v.reshape(n, h * h).copy() for k, v in blocks.items()}


def join_quadrants(parts: dict[str, np.ndarray]) -> np.ndarray:
    """Inverse of :func:`split_quadrants` for a single image."""
    h = int(round(np.sqrt(np.asarray(parts["TL"]).size)))
    q = {k: np.asarray(parts[k], dtype=np.float64).reshape(h, h) for k in QUADRANTS}
    return np.block([[q["TL"], q["TR"]], [q["BL"], q["BR"]]])


def generate_bars(config: BarsConfig) -> GroupedDataset:
    """Horizontal-bar images split into four quadrant groups, some removed.

    Each row is on (1.0) independently with probability ``p_row``; Gaussian
    noise is added everywhere. Each quadrant is then dropped with probability
    ``p_miss``; a sample whose mask would drop all four is redrawn.
    """
    rng = SeededRng(config.seed)
    n, s = config.n, config.size
    rows = (rng.uniform((n, s)) < config.p_row).astype(np.float64)
    images = np.repeat(rows[:, :, None], s, axis=2)
    if config.noise > 0:
        images = images + config.noise * rng.normal((n, s, s))
    observed = np.ones((n, 4), dtype=bool)
    if config.p_miss > 0:
        for i in range(n):
            while True:
                keep = rng.uniform(4) >= config.p_miss
                if keep.any():
                    break
            observed[i] = keep
    values = split_quadrants(images)
    for gi, q in enumerate(QUADRANTS):
        values[q][~observed[:, gi]] = np.nan
    return GroupedDataset(bars_specs(s), values, observed)


# -- file format -----------------------------------------------------------------

def _fmt(v) -> str:
    return format(float(v), ".17g")


def write_dataset(dataset: GroupedDataset, path):
    lines = [DATA_MAGIC, ",".join(f"{s.name}:{s.dim}" for s in dataset.specs)]
    for i in range(len(dataset)):
        fields = []
        for gi, s in enumerate(dataset.specs):
            if dataset.observed[i, gi]:
                fields.append(",".join(_fmt(v) for v in dataset.values[s.name][i]))
            else:
                fields.append("*")
        lines.append("|".join(fields))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_dataset(path) -> GroupedDataset:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0].strip() != DATA_MAGIC:
        raise ParseError(f"missing {DATA_MAGIC} header", 1)
    if len(lines) < 2:
        raise ParseError("missing group header", 2)
    specs = []
    for item in lines[1].split(","):
        name, sep, dim = item.partition(":")
        try:
            if not sep:
                raise ValueError
            specs.append(GroupSpec(name, int(dim)))
        except (ValueError, InvalidArgumentError):
            raise ParseError(f"bad group spec {item!r}", 2) from None
    try:
        check_specs(specs)
    except InvalidArgumentError as exc:
        raise ParseError(str(exc), 2) from None

    n = len(lines) - 2
    values = {s.name: np.full((n, s.dim), np.nan) for s in specs}
    observed = np.zeros((n, len(specs)), dtype=bool)
    for r, line in enumerate(lines[2:]):
        lineno = r + 3
        fields = line.split("|")
        if len(fields) != len(specs):
            raise ParseError(f"expected {len(specs)} groups, found {len(fields)}", lineno)
        for gi, (spec, field) in enumerate(zip(specs, fields)):
            if field.strip() == "*":
                continue
            try:
                vals = [float(t) for t in field.split(",")]
            except ValueError:
                raise ParseError(f"non-numeric token in group {spec.name}", lineno) from None
            if len(vals) != spec.dim:
                raise ParseError(f"group {spec.name} has {len(vals)} values, expected {spec.dim}", lineno)
            if not all(np.isfinite(vals)):
                raise ParseError(f"non-finite value in group {spec.name}", lineno)
            values[spec.name][r] = vals
            observed[r, gi] = True
        if not observed[r].any():
            raise ParseError("record has no observed group", lineno)
    return GroupedDataset(specs, values, observed)
