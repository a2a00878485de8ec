"""Command-line entry point: ``factvae <command> [flags]``.

Exit status: 0 success, 1 usage error, 2 data/model error, 3 numerical error.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from .data import QUADRANTS, BarsConfig, generate_bars, join_quadrants, read_dataset, write_dataset
from .errors import FactVaeError, InvalidArgumentError, NumericalError
from .evaluate import dataset_heldout_ll, reconstruct_dataset, sparsity_matrix, write_pgm
from .gaussian import SeededRng
from .model import FactVaeModel, load_model, save_model
from .trainer import TrainConfig, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _seed(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be in [0, 2^64)")
    return v


def build_parser() -> argparse.ArgumentParser:
    defaults_b, defaults_t = BarsConfig(), TrainConfig()
    parser = _Parser(prog="factvae", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("genbars", help="generate the synthetic bars dataset")
    p.add_argument("--n", type=int, default=defaults_b.n)
    p.add_argument("--size", type=int, default=defaults_b.size, help="image side (even, >= 4)")
    p.add_argument("--p-row", type=float, default=defaults_b.p_row)
    p.add_argument("--noise", type=float, default=defaults_b.noise)
    p.add_argument("--p-miss", type=float, default=defaults_b.p_miss)
    p.add_argument("--seed", type=_seed, default=defaults_b.seed)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="fit a model to a grouped dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--latent", type=int, default=8)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--lambda", dest="lam", type=float, default=defaults_t.lam)
    p.add_argument("--lr", type=float, default=defaults_t.lr)
    p.add_argument("--eta", type=float, default=defaults_t.eta)
    p.add_argument("--epochs", type=int, default=defaults_t.epochs)
    p.add_argument("--batch-size", type=int, default=defaults_t.batch_size)
    p.add_argument("--q-keep", type=float, default=defaults_t.q_keep)
    p.add_argument("--mc-samples", type=int, default=defaults_t.mc_samples)
    p.add_argument("--seed", type=_seed, default=defaults_t.seed)
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--history", help="optional CSV of per-epoch statistics")

    p = sub.add_parser("reconstruct", help="reconstruct all groups from a subset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--observe", required=True, help="comma-separated group names")
    p.add_argument("--mode", choices=("mean", "sample"), default="mean")
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--out", required=True, help="output in the dataset file format")
    p.add_argument("--pgm-dir", help="also write bars images (quadrant groups only)")
    p.add_argument("--pgm-count", type=int, default=8)

    p = sub.add_parser("sparsity", help="export group-by-latent column norms")
    p.add_argument("--model", required=True)
    p.add_argument("--out", help="CSV path (default: standard output)")

    p = sub.add_parser("eval", help="importance-weighted heldout log-likelihood")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--samples", type=int, default=64)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--out", help="optional per-sample CSV")
    return parser


def init_model(specs, latent: int, hidden: int, seed: int) -> FactVaeModel:
    return FactVaeModel.initialize(specs, latent, hidden, SeededRng.derived(seed, "init"))


def _require_file(path):
    if not os.path.isfile(path):
        raise FileNotFoundError(f"no such file: {path}")


def _config(cls, **kwargs):
    try:
        return cls(**kwargs)
    except InvalidArgumentError as exc:
        raise UsageError(str(exc)) from None


def cmd_genbars(args):
    cfg = _config(BarsConfig, n=args.n, size=args.size, p_row=args.p_row, noise=args.noise,
                     p_miss=args.p_miss, seed=args.seed)
    write_dataset(generate_bars(cfg), args.out)


def cmd_train(args):
    cfg = _config(TrainConfig, lam=args.lam, lr=args.lr, eta=args.eta, epochs=args.epochs,
                      batch_size=args.batch_size, q_keep=args.q_keep,
                      mc_samples=args.mc_samples, seed=args.seed)
    if args.latent < 1 or args.hidden < 1:
        raise UsageError("--latent and --hidden must be positive")
    _require_file(args.data)
    dataset = read_dataset(args.data)
    model = init_model(dataset.specs, args.latent, args.hidden, args.seed)
    history = train(dataset, model, cfg)
    save_model(model, args.out)
    if args.history:
        history.write_csv(args.history)


def cmd_reconstruct(args):
    _require_file(args.model)
    _require_file(args.data)
    model = load_model(args.model)
    dataset = read_dataset(args.data)
    observe = [g for g in args.observe.split(",") if g]
    if not observe:
        raise UsageError("--observe needs at least one group")
    rng = SeededRng.derived(args.seed, "reconstruct") if args.mode == "sample" else None
    recon = reconstruct_dataset(model, dataset, observe, args.mode, rng)
    write_dataset(recon, args.out)
    if args.pgm_dir:
        if sorted(model.names) != sorted(QUADRANTS):
            raise InvalidArgumentError("PGM export needs the TL/TR/BL/BR quadrant groups")
        os.makedirs(args.pgm_dir, exist_ok=True)
        for i in range(min(args.pgm_count, len(recon))):
            image = join_quadrants({q: recon.values[q][i] for q in QUADRANTS})
            write_pgm(image, os.path.join(args.pgm_dir, f"recon_{i:04d}.pgm"))


def cmd_sparsity(args):
    _require_file(args.model)
    sm = sparsity_matrix(load_model(args.model))
    if args.out:
        sm.write_csv(args.out)
    else:
        sys.stdout.write(sm.to_csv())


def cmd_eval(args):
    if args.samples < 1:
        raise UsageError("--samples must be >= 1")
    _require_file(args.model)
    _require_file(args.data)
    model = load_model(args.model)
    dataset = read_dataset(args.data)
    ll = dataset_heldout_ll(model, dataset, args.samples, SeededRng.derived(args.seed, "eval"))
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("index,heldout_ll\n")
            fh.writelines(f"{i},{v:.10g}\n" for i, v in enumerate(ll))
    print(f"mean heldout log-likelihood: {np.mean(ll):.10g} over {len(ll)} samples")


COMMANDS = {
    "genbars": cmd_genbars,
    "train": cmd_train,
    "reconstruct": cmd_reconstruct,
    "sparsity": cmd_sparsity,
    "eval": cmd_eval,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"factvae {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"factvae {args.command}: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FactVaeError, OSError) as exc:
        print(f"factvae {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
