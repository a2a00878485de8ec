"""The factorized VAE: per-group encoders, per-group decoders and the ELBO.

Each group ``g`` owns a stacked matrix ``phi`` of shape ``(p_g + H, K)``. Its
first ``p_g`` rows are the latent-to-group matrix ``W`` used by the decoder;
the remaining ``H`` rows are ``V.T``, where ``V`` (K×H) turns encoder features
into expert precisions. ``W`` and ``V`` are numpy views of that one array, so
zeroing column ``j`` of ``phi`` cuts latent ``j`` out of both directions at
once.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .errors import InvalidArgumentError, NumericalError, ParseError
from .gaussian import LOG_2PI, DiagGaussian, SeededRng, poe_fuse

LOGVAR_MIN, LOGVAR_MAX = -8.0, 4.0
MODEL_MAGIC = "FACTVAE1"


@dataclass(frozen=True)
class GroupSpec:
    name: str
    dim: int

    def __post_init__(self):
        if not self.name or any(c in self.name for c in ",:| \t\n*"):
            raise InvalidArgumentError(f"invalid group name {self.name!r}")
        if int(self.dim) < 1:
            raise InvalidArgumentError(f"group {self.name!r} must have dim >= 1")
        object.__setattr__(self, "dim", int(self.dim))


def check_specs(specs: Sequence[GroupSpec]):
    names = [s.name for s in specs]
    if not names:
        raise InvalidArgumentError("at least one group is required")
    if len(set(names)) != len(names):
        raise InvalidArgumentError(f"duplicate group names in {names}")


@dataclass
class GroupedSample:
    """One observation; ``values[name]`` is ``None`` when the group is missing."""

    values: dict[str, np.ndarray | None]

    @property
    def observed(self) -> list[str]:
        return [k for k, v in self.values.items() if v is not None]

    def __getitem__(self, name):
        return self.values[name]


# parameter name -> shape as a function of (p, H, K); "phi" is the sparsity target
_SHAPES = {
    "enc_w": lambda p, h, k: (h, p),
    "enc_b": lambda p, h, k: (h,),
    "mean_w": lambda p, h, k: (k, h),
    "mean_b": lambda p, h, k: (k,),
    "phi": lambda p, h, k: (p + h, k),
    "dec_w1": lambda p, h, k: (h, p),
    "dec_b1": lambda p, h, k: (h,),
    "dec_w2": lambda p, h, k: (p, h),
    "dec_b2": lambda p, h, k: (p,),
    "obs_logvar": lambda p, h, k: (p,),
}
PARAM_NAMES = tuple(_SHAPES)
# parameters under the standard-normal prior: everything but phi and obs_logvar
PRIOR_NAMES = ("enc_w", "enc_b", "mean_w", "mean_b", "dec_w1", "dec_b1", "dec_w2", "dec_b2")


class GroupNetworks:
    """Encoder, decoder and stacked sparsity matrix for one group."""

    def __init__(self, spec: GroupSpec, hidden: int, latent: int, arrays: Mapping[str, np.ndarray] | None = None):
        self.spec = spec
        self.hidden = hidden
        self.latent = latent
        self.params: dict[str, Parameter] = {}
        for name, shape_fn in _SHAPES.items():
            shape = shape_fn(spec.dim, hidden, latent)
            arr = np.zeros(shape) if arrays is None else np.array(arrays[name], dtype=np.float64)
            if arr.shape != shape:
                raise InvalidArgumentError(f"{spec.name}.{name}: expected shape {shape}, got {arr.shape}")
            self.params[name] = Parameter(arr, f"{spec.name}.{name}")

    def __getattr__(self, name):
        params = self.__dict__.get("params")
        if params is not None and name in params:
            return params[name].value
        raise AttributeError(name)

    @property
    def W(self) -> np.ndarray:
        """Latent-to-group matrix, ``p_g × K`` (a view of ``phi``)."""
        return self.params["phi"].value[: self.spec.dim]

    @property
    def V(self) -> np.ndarray:
        """Feature-to-precision matrix, ``K × H`` (a view of ``phi``)."""
        return self.params["phi"].value[self.spec.dim:].T

    def clamp_logvar(self):
        np.clip(self.params["obs_logvar"].value, LOGVAR_MIN, LOGVAR_MAX,
                out=self.params["obs_logvar"].value)

    # graph builders; X is (B, p), Z is (B, K)
    def expert(self, X) -> tuple[Tensor, Tensor]:
        p = self.params
        feats = ad.tanh(X @ p["enc_w"].T + p["enc_b"])
        mean = feats @ p["mean_w"].T + p["mean_b"]
        v_t = p["phi"][self.spec.dim:]  # (H, K) == V.T
        precision = ad.absolute(feats @ v_t)
        return mean, precision

    def decoder_mean(self, Z) -> Tensor:
        p = self.params
        w = p["phi"][: self.spec.dim]  # (p, K)
        hid = ad.tanh((Z @ w.T) @ p["dec_w1"].T + p["dec_b1"])
        return hid @ p["dec_w2"].T + p["dec_b2"]

    def log_likelihood(self, X, Z) -> Tensor:
        """Per-row Gaussian log-density of ``X`` under the decoder at ``Z``."""
        mean = self.decoder_mean(Z)
        lv = self.params["obs_logvar"]
        resid = ad.square(X - mean) * ad.exp(-lv)
        return -0.5 * ad.sum(resid + lv + LOG_2PI, axis=1)


class FactVaeModel:
    def __init__(self, groups: Sequence[GroupSpec], latent: int, hidden: int,
                 nets: Mapping[str, GroupNetworks] | None = None):
        check_specs(groups)
        if latent < 1 or hidden < 1:
            raise InvalidArgumentError("latent and hidden sizes must be positive")
        self.groups = list(groups)
        self.latent = int(latent)
        self.hidden = int(hidden)
        self.nets = dict(nets) if nets is not None else {
            s.name: GroupNetworks(s, self.hidden, self.latent) for s in self.groups
        }

    @classmethod
    def initialize(cls, groups: Sequence[GroupSpec], latent: int, hidden: int, rng: SeededRng) -> "FactVaeModel":
        """Dense weights ~ N(0, 1/fan_in), phi entries ~ N(0, 0.1^2), biases and log-variances 0."""
        model = cls(groups, latent, hidden)
        for spec in model.groups:
            params = model.nets[spec.name].params
            for name in PARAM_NAMES:
                arr = params[name].value
                if name == "phi":
                    arr[...] = 0.1 * rng.normal(arr.shape)
                elif arr.ndim == 2:
                    arr[...] = rng.normal(arr.shape) / np.sqrt(arr.shape[1])
        return model

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.groups]

    def spec(self, name: str) -> GroupSpec:
        for s in self.groups:
            if s.name == name:
                return s
        raise InvalidArgumentError(f"unknown group {name!r}")

    def parameters(self) -> list[Parameter]:
        return [net.params[n] for net in self.nets.values() for n in PARAM_NAMES]

    def phi_parameters(self) -> list[Parameter]:
        return [net.params["phi"] for net in self.nets.values()]

    def theta_parameters(self) -> list[Parameter]:
        return [net.params[n] for net in self.nets.values() for n in PARAM_NAMES if n != "phi"]

    def copy(self) -> "FactVaeModel":
        nets = {
            s.name: GroupNetworks(s, self.hidden, self.latent,
                                  {n: p.value for n, p in self.nets[s.name].params.items()})
            for s in self.groups
        }
        return FactVaeModel(self.groups, self.latent, self.hidden, nets)

    def log_prior(self) -> Tensor:
        """``-0.5 * ||theta||^2`` over the non-phi, non-variance parameters."""
        total = ad.Tensor(0.0)
        for net in self.nets.values():
            for n in PRIOR_NAMES:
                total = total + ad.sum(ad.square(net.params[n]))
        return -0.5 * total


# -- batched objective ---------------------------------------------------------

def fused_posterior(model: FactVaeModel, xs: Mapping[str, np.ndarray], include: np.ndarray) -> tuple[Tensor, Tensor]:
    """Product-of-experts posterior for a batch.

    ``include`` is a (B, G) boolean mask of the groups each row conditions on.
    Returns the fused mean and precision, both (B, K).
    """
    batch = include.shape[0]
    precision: Tensor = ad.Tensor(np.ones((batch, model.latent)))
    weighted: Tensor = ad.Tensor(np.zeros((batch, model.latent)))
    for gi, spec in enumerate(model.groups):
        col = include[:, gi]
        if not col.any():
            continue
        mean_g, prec_g = model.nets[spec.name].expert(xs[spec.name])
        prec_g = prec_g * col[:, None].astype(np.float64)
        precision = precision + prec_g
        weighted = weighted + prec_g * mean_g
    return weighted / precision, precision


def kl_standard_normal_rows(mean: Tensor, precision: Tensor) -> Tensor:
    return 0.5 * ad.sum(1.0 / precision + ad.square(mean) - 1.0 + ad.log(precision), axis=1)


def batch_elbo(model: FactVaeModel, xs: Mapping[str, np.ndarray], include: np.ndarray,
               observed: np.ndarray, eps: np.ndarray, prior_weight: float = 1.0) -> Tensor:
    """Minibatch-mean of the ELBO without the sparsity penalty.

    ``xs[name]`` holds (B, p_g) values; rows where the group is unobserved are
    never read beyond being multiplied by a zero mask, so callers should
    store zeros there. ``eps`` is (S, B, K) standard-normal noise, one slice
    per Monte Carlo sample. The log-prior over network weights is added once,
    scaled by ``prior_weight``; training passes ``1/N`` so that the prior
    counts once per dataset rather than once per sample.
    """
    mean, precision = fused_posterior(model, xs, include)
    scale = ad.exp(-0.5 * ad.log(precision))
    recon = ad.Tensor(np.zeros(include.shape[0]))
    for eps_s in eps:
        z = mean + scale * eps_s
        for gi, spec in enumerate(model.groups):
            col = observed[:, gi]
            if not col.any():
                continue
            ll = model.nets[spec.name].log_likelihood(xs[spec.name], z)
            recon = recon + ll * col.astype(np.float64)
    per_row = recon * (1.0 / eps.shape[0]) - kl_standard_normal_rows(mean, precision)
    objective = ad.sum(per_row) * (1.0 / include.shape[0])
    if prior_weight:
        objective = objective + prior_weight * model.log_prior()
    return objective


# -- single-sample API ---------------------------------------------------------

def _vector(model: FactVaeModel, g: str, x) -> np.ndarray:
    spec = model.spec(g)
    arr = np.asarray(x, dtype=np.float64).reshape(-1)
    if arr.size != spec.dim:
        raise InvalidArgumentError(f"group {g!r} expects length {spec.dim}, got {arr.size}")
    return arr


def encode_group(model: FactVaeModel, g: str, x) -> DiagGaussian:
    mean, prec = model.nets[g].expert(_vector(model, g, x)[None, :])
    return DiagGaussian(mean.value[0], prec.value[0])


def _check_subset(sample: GroupedSample, subset: Iterable[str]) -> list[str]:
    subset = list(subset)
    if not subset:
        raise InvalidArgumentError("inference subset must be nonempty")
    for g in subset:
        if sample.values.get(g) is None:
            raise InvalidArgumentError(f"group {g!r} is not present in the sample")
    return subset


def encode(model: FactVaeModel, sample: GroupedSample, subset: Iterable[str]) -> DiagGaussian:
    subset = _check_subset(sample, subset)
    return poe_fuse([encode_group(model, g, sample[g]) for g in subset], model.latent)


def decode_group(model: FactVaeModel, g: str, z) -> tuple[np.ndarray, np.ndarray]:
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    if z.size != model.latent:
        raise InvalidArgumentError(f"latent code must have length {model.latent}, got {z.size}")
    net = model.nets[g]
    mean = net.decoder_mean(z[None, :]).value[0]
    return mean, np.exp(net.obs_logvar).copy()


def assemble_phi(model: FactVaeModel, g: str) -> np.ndarray:
    """The stacked ``[W; V.T]`` matrix of group ``g``; writes go through to W and V."""
    return model.nets[g].params["phi"].value


def sample_arrays(model: FactVaeModel, samples: Sequence[GroupedSample]) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Stack samples into per-group (B, p_g) arrays plus a (B, G) presence mask.

    Missing entries are filled with zeros; the stored values are not read.
    """
    present = np.array([[s.values.get(g) is not None for g in model.names] for s in samples], dtype=bool)
    xs = {}
    for gi, spec in enumerate(model.groups):
        arr = np.zeros((len(samples), spec.dim))
        for i, s in enumerate(samples):
            if present[i, gi]:
                arr[i] = _vector(model, spec.name, s.values[spec.name])
        xs[spec.name] = arr
    return xs, present


def _mask(model: FactVaeModel, groups: Iterable[str]) -> np.ndarray:
    groups = set(groups)
    unknown = groups - set(model.names)
    if unknown:
        raise InvalidArgumentError(f"unknown groups {sorted(unknown)}")
    return np.array([[g in groups for g in model.names]], dtype=bool)


def elbo_tilde_tensor(model: FactVaeModel, sample: GroupedSample, subset: Iterable[str],
                      observed: Iterable[str], eps: np.ndarray) -> Tensor:
    subset = _check_subset(sample, subset)
    observed = _check_subset(sample, observed)
    if not set(subset) <= set(observed):
        raise InvalidArgumentError("inference subset must be contained in the observed set")
    xs, _ = sample_arrays(model, [sample])
    eps = np.asarray(eps, dtype=np.float64).reshape(-1, 1, model.latent)
    return batch_elbo(model, xs, _mask(model, subset), _mask(model, observed), eps)


def elbo_tilde(model: FactVaeModel, sample: GroupedSample, subset: Iterable[str],
               observed: Iterable[str], rng: SeededRng, mc_samples: int = 1) -> float:
    """Single-sample ELBO (reconstruction over ``observed``, posterior from ``subset``)."""
    if mc_samples < 1:
        raise InvalidArgumentError("mc_samples must be >= 1")
    eps = rng.normal((mc_samples, 1, model.latent))
    value = float(elbo_tilde_tensor(model, sample, subset, observed, eps).value)
    if not np.isfinite(value):
        raise NumericalError("ELBO is non-finite")
    return value


# -- serialization -------------------------------------------------------------

def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def save_model(model: FactVaeModel, path):
    lines = [
        MODEL_MAGIC,
        f"latent {model.latent}",
        f"hidden {model.hidden}",
        "groups " + ",".join(f"{s.name}:{s.dim}" for s in model.groups),
    ]
    for spec in model.groups:
        for name in PARAM_NAMES:
            arr = model.nets[spec.name].params[name].value
            mat = arr.reshape(arr.shape[0], -1) if arr.ndim == 2 else arr.reshape(1, -1)
            lines.append(f"matrix {spec.name} {name} {mat.shape[0]} {mat.shape[1]}")
            lines.extend(" ".join(_fmt(v) for v in row) for row in mat)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path) -> FactVaeModel:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()

    def kv(lineno, key):
        if lineno >= len(lines):
            raise ParseError(f"missing '{key}' line", lineno + 1)
        parts = lines[lineno].split(" ", 1)
        if len(parts) != 2 or parts[0] != key:
            raise ParseError(f"expected '{key} <value>'", lineno + 1)
        return parts[1]

    if not lines or lines[0] != MODEL_MAGIC:
        raise ParseError(f"missing {MODEL_MAGIC} header", 1)
    try:
        latent = int(kv(1, "latent"))
        hidden = int(kv(2, "hidden"))
    except ValueError as exc:
        raise ParseError(f"bad integer: {exc}", None) from exc
    groups = _parse_group_header(kv(3, "groups"), 4)

    arrays: dict[str, dict[str, np.ndarray]] = {s.name: {} for s in groups}
    i = 4
    while i < len(lines):
        head = lines[i].split()
        if len(head) != 5 or head[0] != "matrix":
            raise ParseError("expected 'matrix <group> <name> <rows> <cols>'", i + 1)
        _, gname, pname, nr, nc = head
        if gname not in arrays or pname not in _SHAPES:
            raise ParseError(f"unknown block {gname}.{pname}", i + 1)
        try:
            nr, nc = int(nr), int(nc)
        except ValueError:
            raise ParseError("bad block dimensions", i + 1) from None
        rows = []
        for r in range(nr):
            lineno = i + 1 + r
            if lineno >= len(lines):
                raise ParseError(f"block {gname}.{pname} truncated", lineno + 1)
            try:
                row = [float(t) for t in lines[lineno].split()]
            except ValueError:
                raise ParseError("non-numeric token", lineno + 1) from None
            if len(row) != nc:
                raise ParseError(f"expected {nc} values, got {len(row)}", lineno + 1)
            rows.append(row)
        spec = next(s for s in groups if s.name == gname)
        shape = _SHAPES[pname](spec.dim, hidden, latent)
        arr = np.array(rows, dtype=np.float64).reshape(nr, nc)
        if arr.size != int(np.prod(shape)):
            raise ParseError(f"block {gname}.{pname} has wrong size for shape {shape}", i + 1)
        arrays[gname][pname] = arr.reshape(shape)
        i += 1 + nr
    nets = {}
    for s in groups:
        missing = set(PARAM_NAMES) - set(arrays[s.name])
        if missing:
            raise ParseError(f"group {s.name} lacks blocks {sorted(missing)}")
        nets[s.name] = GroupNetworks(s, hidden, latent, arrays[s.name])
    return FactVaeModel(groups, latent, hidden, nets)


def _parse_group_header(text: str, lineno: int) -> list[GroupSpec]:
    specs = []
    for item in text.split(","):
        name, sep, dim = item.partition(":")
        try:
            if not sep:
                raise ValueError
            specs.append(GroupSpec(name, int(dim)))
        except (ValueError, InvalidArgumentError):
            raise ParseError(f"bad group spec {item!r}", lineno) from None
    try:
        check_specs(specs)
    except InvalidArgumentError as exc:
        raise ParseError(str(exc), lineno) from None
    return specs
