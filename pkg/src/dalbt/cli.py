"""``dalbt`` command line: run, export-curves, gradcheck, fit-weibull."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .active_loop import run_experiment
from .config import config_to_dict, parse_config
from .errors import DalbtError
from .losses import LossWeights
from .metrics import RunManifest, RunSink, export_curves
from .network import ArchSpec, Dense, Flatten, init_params
from .trainer import grad_check
from .weibull_openset import fit_weibull

log = logging.getLogger("dalbt")


def _threads():
    raw = os.environ.get("DALBT_THREADS")
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise DalbtError(f"DALBT_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise DalbtError(f"DALBT_THREADS must be a positive integer, got {raw!r}")
    return n


def cmd_run(args) -> int:
    cfg = parse_config(args.config)
    if args.seed_override is not None:
        cfg = dataclasses.replace(cfg, seeds=(args.seed_override,))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest.create(cfg)
    (out / "config.json").write_text(json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n")
    manifest.write(out)
    with RunSink(out, manifest.run_id) as sink, threadpool_limits(limits=_threads()):
        result = run_experiment(cfg, sink)
    with open(out / "summary.jsonl", "w") as fh:
        for row in result.summary:
            fh.write(json.dumps(row) + "\n")
    manifest.failures = {str(k): v for k, v in result.failures.items()}
    manifest.status = "partial" if result.failures else "complete"
    manifest.write(out)
    for row in result.summary:
        print(f"{row['strategy']:>15} stage {row['stage']:>3}  labeled {row['labeled_size']:>8.1f}  "
              f"acc {row['mean_acc']:.4f} +/- {row['std_acc']:.4f}")
    if result.failures:
        for seed, msg in result.failures.items():
            print(f"seed {seed} failed: {msg}", file=sys.stderr)
        return 1
    return 0


def cmd_export_curves(args) -> int:
    rows = export_curves(args.runs, args.out)
    if not rows:
        print("no metrics records found", file=sys.stderr)
        return 1
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def toy_gradcheck(dims=(8, 6, 4, 3), batch=5, gamma=0.5, seed=0, step=1e-5):
    """Finite-difference check of the joint loss on a small dense model.

    ``dims`` is (input, latent, embedding, classes).
    """
    d_in, d_lat, d_emb, k = dims
    arch = ArchSpec((1, 1, d_in), (Flatten(), Dense(d_lat)), k, (d_emb,))
    params = init_params(arch, seed)
    rng = np.random.default_rng(seed + 1)
    x, v1, v2 = (rng.random((batch, 1, 1, d_in)) for _ in range(3))
    y = np.arange(batch) % k
    return grad_check(params, (x, y, v1, v2), step, LossWeights(gamma=gamma))


def cmd_gradcheck(args) -> int:
    dims = tuple(int(v) for v in args.dims.split(","))
    if len(dims) != 4:
        raise DalbtError("--dims takes four comma-separated sizes: input,latent,embedding,classes")
    err = toy_gradcheck(dims, args.batch, args.gamma, args.seed)
    print(f"max relative error {err:.3e}")
    return 0 if err < 1e-4 else 1


def read_column(path) -> np.ndarray:
    values = []
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row or not row[0].strip():
                continue
            try:
                values.append(float(row[0]))
            except ValueError:
                if i == 0:
                    continue  # header
                raise DalbtError(f"{path}:{i + 1}: not a number: {row[0]!r}") from None
    return np.array(values)


def cmd_fit_weibull(args) -> int:
    d = read_column(args.input)
    eta = args.eta if args.eta is not None else len(d)
    model = fit_weibull(d, eta=eta, tau=args.tau)
    print(f"tau={model.tau!r} lambda={model.lambda_scale!r} kappa={model.kappa!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dalbt", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an active-learning experiment")
    r.add_argument("--config", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--seed-override", type=int, default=None)
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("export-curves", help="aggregate run metrics into a CSV")
    e.add_argument("--runs", nargs="+", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_export_curves)

    g = sub.add_parser("gradcheck", help="finite-difference check of the joint loss gradient")
    g.add_argument("--dims", default="8,6,4,3", help="input,latent,embedding,classes")
    g.add_argument("--batch", type=int, default=5)
    g.add_argument("--gamma", type=float, default=0.5)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gradcheck)

    f = sub.add_parser("fit-weibull", help="fit a Weibull to a one-column CSV of distances")
    f.add_argument("--input", required=True)
    f.add_argument("--eta", type=int, default=None, help="tail size (default: all values)")
    f.add_argument("--tau", type=float, default=None, help="fixed location (default: 0.99 * tail minimum)")
    f.set_defaults(func=cmd_fit_weibull)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (DalbtError, OSError) as exc:
        print(f"dalbt: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
