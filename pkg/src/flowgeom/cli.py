"""Command-line pipeline: generate data, train models, query geometry,
run the autoencoder, and evaluate against ground truth.

Every subcommand prints its fully resolved configuration as one JSON line
before doing any work, takes all randomness from --seed, and writes CSV or
structured-text artifacts.  Failures exit non-zero with a one-line
machine-parsable ``error:<category>: message`` on stderr (bad file: 2,
bad schema: 3, dimension mismatch: 4, anything else: 1).

Relative output paths are resolved against $FLOWGEOM_OUT when it is set.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__, rae
from .datasets import Dataset, get_target, langevin_mh_sample, make_hemisphere, \
    make_sinusoid
from .errors import DimensionMismatchError, FileFormatError, FlowgeomError, \
    SchemaError
from .evaluation import REPORT_SCHEMA, TableEntry, default_perturbation_scale, \
    geodesic_error, run_table, sample_pairs, split_train_test, variation_error
from .flow import MODEL_SCHEMA, load_model, save_model
from .geometry import PullbackManifold
from .rae import RaeConfig
from .training import HISTORY_COLUMNS, VARIANTS, default_config, load_config_file

EXIT_CODES = {
    FileFormatError.category: 2,
    SchemaError.category: 3,
    DimensionMismatchError.category: 4,
}

MCMC_TARGETS = ("banana", "squeezed_banana", "river")


def _out_path(path: str) -> str:
    base = os.environ.get("FLOWGEOM_OUT")
    if base and not os.path.isabs(path):
        return os.path.join(base, path)
    return path


def _print_config(command: str, args: argparse.Namespace) -> None:
    resolved = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    print(f"config {json.dumps({'command': command, **resolved}, default=str)}")


def _parse_point(text: str, dim: int, label: str) -> np.ndarray:
    try:
        values = np.array([float(v) for v in text.split(",")])
    except ValueError as exc:
        raise FileFormatError(f"cannot parse {label} {text!r}: {exc}") from exc
    if values.size != dim:
        raise DimensionMismatchError(
            f"{label} has {values.size} coordinates, model dimension is {dim}"
        )
    return values


def _load_manifold(path: str) -> PullbackManifold:
    flow, potential = load_model(path)
    return PullbackManifold(flow, potential)


def _write_csv(path: str, header: str, rows) -> None:
    path = _out_path(path)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(format(v, ".17g") if isinstance(v, float) else str(v)
                              for v in row))
            fh.write("\n")
    print(f"wrote {path}")


# -- subcommands ---------------------------------------------------------------


def cmd_gen(args) -> int:
    if args.dataset in MCMC_TARGETS:
        ds = langevin_mh_sample(get_target(args.dataset), args.n,
                                steps=args.mcmc_steps, step_size=args.mcmc_delta,
                                seed=args.seed)
    elif args.dataset == "hemisphere":
        ds = make_hemisphere(args.intrinsic_dim, args.ambient_dim, args.n,
                             seed=args.seed)
    elif args.dataset == "sinusoid":
        ds = make_sinusoid(args.intrinsic_dim, args.ambient_dim, args.n,
                           seed=args.seed)
    else:  # pragma: no cover - argparse choices
        raise ValueError(args.dataset)
    out = _out_path(args.out)
    ds.save(out)
    print(f"wrote {out} ({ds.n} x {ds.dim})")
    return 0


def cmd_train(args) -> int:
    from .training import train

    ds = Dataset.load(args.data)
    name = ds.metadata.get("generator", "unknown")
    params = ds.metadata.get("params", {})
    if name in ("hemisphere", "sinusoid"):
        name = f"{name}_{params.get('intrinsic_dim')}_{params.get('ambient_dim')}"
    overrides = load_config_file(args.config) if args.config else {}
    for fld in ("flow_steps", "epochs", "batch_size", "lambda_iso", "lambda_vol",
                "learning_rate"):
        val = getattr(args, fld)
        if val is not None:
            overrides[fld] = val
    overrides.pop("variant", None)
    overrides.pop("seed", None)
    config = default_config(name, variant=args.variant, seed=args.seed, **overrides)
    print(f"resolved-training-config {json.dumps(config.to_dict())}")
    result = train(ds.samples, config)
    out = _out_path(args.out)
    save_model(out, result.flow, result.potential)
    print(f"wrote {out}")
    if args.history_out:
        hist = _out_path(args.history_out)
        with open(hist, "w", encoding="utf-8") as fh:
            fh.write(result.history_csv())
        print(f"wrote {hist}")
    return 0


def cmd_geodesic(args) -> int:
    manifold = _load_manifold(args.model)
    x = _parse_point(args.frm, manifold.dim, "--from")
    y = _parse_point(args.to, manifold.dim, "--to")
    curve = manifold.geodesic_curve(x, y, args.steps)
    t = np.linspace(0.0, 1.0, args.steps)
    header = "t," + ",".join(f"x_{i + 1}" for i in range(manifold.dim))
    _write_csv(args.out, header,
               ([float(tk)] + [float(v) for v in row] for tk, row in zip(t, curve)))
    return 0


def cmd_logmap(args) -> int:
    manifold = _load_manifold(args.model)
    x = _parse_point(args.at, manifold.dim, "--at")
    y = _parse_point(args.to, manifold.dim, "--to")
    v = manifold.log_map(x, y)
    print(",".join(format(float(c), ".17g") for c in v))
    return 0


def cmd_expmap(args) -> int:
    manifold = _load_manifold(args.model)
    x = _parse_point(args.at, manifold.dim, "--at")
    v = _parse_point(args.tangent, manifold.dim, "--tangent")
    y = manifold.exp_map(x, v)
    print(",".join(format(float(c), ".17g") for c in y))
    return 0


def cmd_distance(args) -> int:
    manifold = _load_manifold(args.model)
    x = _parse_point(args.frm, manifold.dim, "--from")
    y = _parse_point(args.to, manifold.dim, "--to")
    print(format(float(manifold.distance(x, y)), ".17g"))
    return 0


def cmd_barycentre(args) -> int:
    manifold = _load_manifold(args.model)
    ds = Dataset.load(args.data)
    if ds.dim != manifold.dim:
        raise DimensionMismatchError(
            f"data dimension {ds.dim} does not match model dimension {manifold.dim}"
        )
    centre = manifold.barycentre(ds.samples)
    print(",".join(format(float(c), ".17g") for c in centre))
    return 0


def cmd_rae_dim(args) -> int:
    manifold = _load_manifold(args.model)
    config = RaeConfig.from_variances(manifold.potential.variances, args.epsilon)
    order = ",".join(str(int(i)) for i in config.order)
    print(f"d_eps {config.d_eps}")
    print(f"variance_order {order}")
    return 0


def cmd_rae_curve(args) -> int:
    manifold = _load_manifold(args.model)
    ds = Dataset.load(args.data)
    if ds.dim != manifold.dim:
        raise DimensionMismatchError(
            f"data dimension {ds.dim} does not match model dimension {manifold.dim}"
        )
    ks, errors, _ = rae.reconstruction_curve(manifold, ds.samples,
                                             order=args.order, seed=args.seed)
    _write_csv(args.out, "k,mean_error,order,seed",
               ([int(k), float(e), args.order, args.seed]
                for k, e in zip(ks, errors)))
    return 0


def cmd_rae_mesh(args) -> int:
    manifold = _load_manifold(args.model)
    config = RaeConfig.from_variances(manifold.potential.variances, args.epsilon)
    latents, decoded = rae.manifold_mesh(manifold, config, args.grid)
    header = ",".join(
        [f"z_{i + 1}" for i in range(config.d_eps)]
        + [f"x_{i + 1}" for i in range(manifold.dim)]
    )
    _write_csv(args.out, header,
               ([float(v) for v in z] + [float(v) for v in x]
                for z, x in zip(latents, decoded)))
    return 0


def cmd_eval(args) -> int:
    manifold = _load_manifold(args.model)
    target = get_target(args.gt)
    truth = PullbackManifold(target.diffeo, target.potential())
    ds = Dataset.load(args.data)
    if ds.dim != manifold.dim:
        raise DimensionMismatchError(
            f"data dimension {ds.dim} does not match model dimension {manifold.dim}"
        )
    _, test = split_train_test(ds.samples, seed=args.seed)
    pairs = sample_pairs(test, args.pairs, seed=args.seed)
    sigma = default_perturbation_scale(ds.samples, args.sigma_scale)
    geo = geodesic_error(manifold, truth, pairs, args.steps)
    var = variation_error(manifold, pairs, sigma, args.steps, seed=args.seed)
    lines = [
        f"schema: {REPORT_SCHEMA}",
        "config:",
        f"  gt: {args.gt}",
        f"  n_pairs: {args.pairs}",
        f"  t_steps: {args.steps}",
        f"  sigma_scale: {args.sigma_scale}",
        f"  perturbation_sigma: {[float(s) for s in sigma]}",
        f"  seed: {args.seed}",
        "cells:",
        f"  geodesic_mean={geo.mean:.6g} geodesic_std={geo.std:.6g} "
        f"n_failed={geo.n_failed}",
        f"  variation_mean={var.mean:.6g} variation_std={var.std:.6g} "
        f"n_failed={var.n_failed}",
    ]
    text = "\n".join(lines) + "\n"
    if args.out:
        out = _out_path(args.out)
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
        print(f"wrote {out}")
    else:
        print(text, end="")
    if args.curves_out:
        header = "t," + ",".join(f"x_{i + 1}" for i in range(manifold.dim)) \
            + ",variant"
        t = np.linspace(0.0, 1.0, args.steps)
        rows = []
        for x0, x1 in pairs[: args.curve_dump_pairs]:
            for label, mfd in (("learned", manifold), ("ground_truth", truth)):
                curve = mfd.geodesic_curve(x0, x1, args.steps)
                for tk, row in zip(t, curve):
                    rows.append([float(tk)] + [float(v) for v in row] + [label])
        _write_csv(args.curves_out, header, rows)
    return 0


def cmd_table(args) -> int:
    data = {}
    for item in args.data or []:
        name, _, path = item.partition("=")
        if not path:
            raise FileFormatError(f"--data expects dataset=path, got {item!r}")
        data[name] = Dataset.load(path).samples
    entries = []
    for item in args.model or []:
        fields = item.split(":")
        if len(fields) != 4:
            raise FileFormatError(
                f"--model expects dataset:variant:seed:path, got {item!r}"
            )
        name, variant, seed, path = fields
        if variant not in VARIANTS:
            raise FileFormatError(f"unknown variant {variant!r} in {item!r}")
        try:
            manifold = _load_manifold(path)
        except FlowgeomError:
            manifold = None
        entries.append(TableEntry(name, variant, int(seed), manifold))
    truths = {
        name: PullbackManifold(get_target(name).diffeo, get_target(name).potential())
        for name in {e.dataset for e in entries}
    }
    report = run_table(entries, truths, data, n_pairs=args.pairs,
                       t_steps=args.steps, sigma_scale=args.sigma_scale,
                       seed=args.seed)
    out = _out_path(args.out)
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(report.to_text())
    print(f"wrote {out}")
    if args.csv_out:
        csv_out = _out_path(args.csv_out)
        with open(csv_out, "w", encoding="utf-8") as fh:
            fh.write(report.to_csv())
        print(f"wrote {csv_out}")
    return 0


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowgeom",
        description="Flow densities with closed-form pullback geometry.",
    )
    parser.add_argument(
        "--version", action="version",
        version=f"flowgeom {__version__} (model schema {MODEL_SCHEMA}, "
                f"report schema {REPORT_SCHEMA})",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--dataset", required=True,
                   choices=list(MCMC_TARGETS) + ["hemisphere", "sinusoid"])
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--mcmc-steps", type=int, default=2500)
    p.add_argument("--mcmc-delta", type=float, default=0.15)
    p.add_argument("--intrinsic-dim", type=int, default=2)
    p.add_argument("--ambient-dim", type=int, default=3)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="fit a flow density to a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--variant", default="ours", choices=list(VARIANTS))
    p.add_argument("--config", default=None,
                   help="JSON file overriding the built-in dataset defaults")
    p.add_argument("--out", required=True)
    p.add_argument("--history-out", default=None)
    p.add_argument("--seed", type=int, default=0)
    for fld, typ in (("flow_steps", int), ("epochs", int), ("batch_size", int),
                     ("lambda_iso", float), ("lambda_vol", float),
                     ("learning_rate", float)):
        p.add_argument(f"--{fld.replace('_', '-')}", dest=fld, type=typ,
                       default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("geodesic", help="sample a geodesic curve to CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--from", dest="frm", required=True)
    p.add_argument("--to", required=True)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_geodesic)

    p = sub.add_parser("logmap", help="tangent at --at pointing to --to")
    p.add_argument("--model", required=True)
    p.add_argument("--at", required=True)
    p.add_argument("--to", required=True)
    p.set_defaults(func=cmd_logmap)

    p = sub.add_parser("expmap", help="follow a tangent from --at")
    p.add_argument("--model", required=True)
    p.add_argument("--at", required=True)
    p.add_argument("--tangent", required=True)
    p.set_defaults(func=cmd_expmap)

    p = sub.add_parser("distance", help="pullback distance between two points")
    p.add_argument("--model", required=True)
    p.add_argument("--from", dest="frm", required=True)
    p.add_argument("--to", required=True)
    p.set_defaults(func=cmd_distance)

    p = sub.add_parser("barycentre", help="Riemannian mean of a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_barycentre)

    p = sub.add_parser("rae-dim", help="variance-selected latent dimension")
    p.add_argument("--model", required=True)
    p.add_argument("--epsilon", type=float, default=0.01)
    p.set_defaults(func=cmd_rae_dim)

    p = sub.add_parser("rae-curve", help="reconstruction error vs latent size")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--order", default="decreasing",
                   choices=["decreasing", "increasing", "random"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rae_curve)

    p = sub.add_parser("rae-mesh", help="decoded latent grid as CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--epsilon", type=float, default=0.01)
    p.add_argument("--grid", type=int, default=25)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rae_mesh)

    p = sub.add_parser("eval", help="geodesic/variation errors vs ground truth")
    p.add_argument("--model", required=True)
    p.add_argument("--gt", required=True, choices=list(MCMC_TARGETS))
    p.add_argument("--data", required=True)
    p.add_argument("--pairs", type=int, default=100)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--sigma-scale", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.add_argument("--curves-out", default=None)
    p.add_argument("--curve-dump-pairs", type=int, default=5)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("table", help="full dataset x variant comparison table")
    p.add_argument("--data", action="append", metavar="DATASET=PATH")
    p.add_argument("--model", action="append", metavar="DATASET:VARIANT:SEED:PATH")
    p.add_argument("--pairs", type=int, default=100)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--sigma-scale", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--csv-out", default=None)
    p.set_defaults(func=cmd_table)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _print_config(args.command, args)
    try:
        return args.func(args)
    except FlowgeomError as exc:
        print(f"error:{exc.category}: {exc}", file=sys.stderr)
        return EXIT_CODES.get(exc.category, 1)
    except Exception as exc:  # keep the contract: one line, non-zero exit
        print(f"error:internal: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
