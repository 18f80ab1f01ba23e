"""Command-line entry point.

Subcommands: embed-grid, rasterize, synth, train, eval, gradcheck, traverse.
Exit codes: 0 ok, 2 parse error, 3 capacity error, 4 numeric error,
5 shape error.
"""

import argparse
import hashlib
import json
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import dataio
from .diffcore import grad_check, load_checkpoint, save_checkpoint
from .errors import (
    CapacityError,
    DtigridError,
    NumericError,
    ParseError,
    ShapeError,
)
from .grid_embed import embed_grid
from .metrics import evaluate_model
from .objectives import combined_loss
from .train import RunConfig, train_model
from .vae import TcvaeModel, latent_traversal

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_CAPACITY = 3
EXIT_NUMERIC = 4
EXIT_SHAPE = 5


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(path, config, inputs, seed, wall_clock, outputs):
    obj = {
        "config": config,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "seed": seed,
        "wall_clock_s": wall_clock,
        "outputs": [str(p) for p in outputs],
    }
    dataio._atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _config_help():
    lines = []
    for f in fields(RunConfig):
        lines.append(f"  {f.name} (default {f.default!r})")
    return "\n".join(lines)


def _load_config(config_path, overrides):
    values = {}
    if config_path:
        for lineno, line in enumerate(
            Path(config_path).read_text(encoding="utf-8").splitlines(), start=1
        ):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ParseError(f"{config_path}: line {lineno}: expected key=value")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    for item in overrides or []:
        if "=" not in item:
            raise ParseError(f"--set {item!r}: expected key=value")
        key, value = item.split("=", 1)
        values[key] = value
    kwargs = {}
    field_map = {f.name: f for f in fields(RunConfig)}
    for key, raw in values.items():
        if key not in field_map:
            raise ParseError(f"unknown config key {key!r}")
        ftype = field_map[key].type
        if ftype in (int, "int"):
            kwargs[key] = int(raw)
        elif ftype in (float, "float"):
            kwargs[key] = float(raw)
        else:
            kwargs[key] = raw
    return RunConfig(**kwargs)


def cmd_embed_grid(args):
    centroids = dataio.load_centroids_csv(args.centroids)
    provisional_info = None
    layout = embed_grid(centroids)
    dataio.save_layout(args.output, layout)
    # displacement diagnostics against the provisional (pre-assignment) cells
    from .grid_embed import classical_mds, normalize_to_grid

    if len(centroids) >= 2:
        provisional = normalize_to_grid(classical_mds(centroids))
        cells = np.array([layout.assignment[t] for t in centroids.tract_ids])
        disp = int(np.sum((cells - provisional) ** 2))
        collisions = len(provisional) - len({tuple(r) for r in provisional})
        provisional_info = (disp, collisions)
    print(f"wrote {args.output}: {layout.occupied_count} tracts")
    if provisional_info:
        print(
            f"total squared displacement {provisional_info[0]}, "
            f"collisions resolved {provisional_info[1]}"
        )
    return EXIT_OK


def cmd_rasterize(args):
    layout = dataio.load_layout(args.layout)
    records = dataio.load_subjects_csv(args.subjects, n_tracts=layout.occupied_count)
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    for rec in records:
        img = dataio.rasterize(rec, layout)
        dataio.export_image(outdir / rec.subject_id, img)
    print(f"wrote {len(records)} images to {outdir}")
    return EXIT_OK


def cmd_synth(args):
    if args.spec:
        with open(args.spec, encoding="utf-8") as f:
            spec = dataio.spec_from_dict(json.load(f))
    else:
        spec = dataio.SyntheticSpec(n_subjects=args.subjects)
    dataset = dataio.generate_synthetic(spec, args.seed)
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    dataio.save_subjects_csv(outdir / "subjects.csv", dataset.records)
    dataio.save_factors_csv(
        outdir / "factors.csv",
        [r.subject_id for r in dataset.records],
        dataset.factors,
    )
    dataio.save_layout(outdir / "layout.json", dataset.layout)
    print(f"wrote synthetic cohort ({spec.n_subjects} subjects) to {outdir}")
    return EXIT_OK


def cmd_train(args):
    t0 = time.monotonic()
    config = _load_config(args.config, args.set)
    layout = dataio.load_layout(args.layout)
    records = dataio.load_subjects_csv(args.subjects, n_tracts=layout.occupied_count)
    images = np.stack([dataio.rasterize(r, layout) for r in records])
    labels = np.array([r.label for r in records], dtype=np.int64)
    mask = dataio.occupancy_mask(layout)
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    ckpt_path = outdir / "checkpoint.bin"
    curve_path = outdir / "curve.csv"

    model = TcvaeModel(seed=config.seed, latent_dim=config.latent_dim)
    save_checkpoint(ckpt_path, model.state_dict())
    history = []
    try:
        model, history = train_model(
            images, labels, config, occupied_mask=mask, model=model
        )
    except NumericError as exc:
        print(f"training aborted: {exc}; last-good checkpoint kept", file=sys.stderr)
        return EXIT_NUMERIC
    save_checkpoint(ckpt_path, model.state_dict())
    from .train import EpochStats

    lines = [EpochStats.HEADER] + [h.csv_row() for h in history]
    dataio._atomic_write_text(curve_path, "\n".join(lines) + "\n")
    inputs = [args.subjects, args.layout]
    _write_manifest(
        outdir / "manifest.json",
        config.to_dict(),
        inputs,
        config.seed,
        time.monotonic() - t0,
        [ckpt_path, curve_path],
    )
    print(f"trained {config.variant} variant for {config.epochs} epochs")
    if history:
        print(f"final total loss {history[-1].total:.6f}")
    return EXIT_OK


def cmd_eval(args):
    layout = dataio.load_layout(args.layout)
    records = dataio.load_subjects_csv(args.subjects, n_tracts=layout.occupied_count)
    images = np.stack([dataio.rasterize(r, layout) for r in records])
    labels = np.array([r.label for r in records], dtype=np.int64)
    factors = None
    factor_names = None
    if args.factors:
        sids, table = dataio.load_factors_csv(args.factors)
        order = {r.subject_id: i for i, r in enumerate(records)}
        if set(sids) != set(order):
            raise ParseError("factor table subjects do not match the dataset")
        perm = np.argsort([order[s] for s in sids], kind="stable")
        factors = table.values[perm]
        factor_names = table.names
    model = TcvaeModel(seed=0)
    model.load_state(load_checkpoint(args.checkpoint))
    report = evaluate_model(
        model,
        images,
        labels,
        factors=factors,
        factor_names=factor_names,
        n_splits=args.splits,
        test_frac=args.test_frac,
        seed=args.seed,
    )
    dataio._atomic_write_text(args.output, report.to_json() + "\n")
    print(f"wrote {args.output}")
    print(
        f"accuracy {report.accuracy:.2f}  f1 {report.f1:.2f}  "
        f"sep {report.separability:.2f}  recon {report.recon_mse:.5f}  "
        f"mig {report.mig:.4f}"
    )
    return EXIT_OK


def cmd_gradcheck(args):
    config = _load_config(args.config, args.set)
    rng = np.random.default_rng(config.seed)
    batch = rng.uniform(0.2, 0.8, size=(4, 9, 9))
    labels = np.array([0, 1, 0, 1])
    eps = rng.standard_normal((4, config.latent_dim))
    ok = True
    for variant in ("aux", "triplet", "simclr"):
        model = TcvaeModel(seed=config.seed, latent_dim=config.latent_dim)
        items = model.param_items()

        def loss_fn():
            model.zero_grad()
            bd = combined_loss(
                model,
                batch,
                labels,
                variant,
                config.weights(),
                config.beta,
                eps,
                dataset_size=100,
                aug_seed=7,
            )
            return bd.total

        report = grad_check(
            loss_fn,
            items,
            max_entries=args.max_entries,
            rng=np.random.default_rng(config.seed),
        )
        status = "PASS" if report.passed else "FAIL"
        print(f"{variant}: {status} (max rel err {report.max_rel_error:.3e})")
        ok = ok and report.passed
    return EXIT_OK if ok else 1


def cmd_traverse(args):
    if not args.values and not args.range:
        raise ParseError("traverse needs --values or --range")
    model = TcvaeModel(seed=0)
    model.load_state(load_checkpoint(args.checkpoint))
    if args.base_subject:
        if not (args.subjects and args.layout):
            raise ParseError("--base-subject needs --subjects and --layout")
        layout = dataio.load_layout(args.layout)
        records = dataio.load_subjects_csv(
            args.subjects, n_tracts=layout.occupied_count
        )
        match = [r for r in records if r.subject_id == args.base_subject]
        if not match:
            raise ParseError(f"subject {args.base_subject!r} not found")
        img = dataio.rasterize(match[0], layout)
        mu, _, _ = model.encoder.encode(img[None])
        z_base = mu[0]
    else:
        z_base = np.zeros(model.latent_dim)
    if args.values:
        values = [float(v) for v in args.values.split(",")]
    else:
        lo, hi, count = args.range.split(":")
        values = list(np.linspace(float(lo), float(hi), int(count)))
    images, variance = latent_traversal(model, z_base, args.dim, values)
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(images):
        dataio.export_image(outdir / f"step_{i:03d}", img)
    dataio.export_image(outdir / "variance", variance / max(variance.max(), 1e-300))
    dataio._atomic_write_text(
        outdir / "variance_raw.csv",
        "\n".join(",".join(repr(float(v)) for v in row) for row in variance) + "\n",
    )
    print(f"wrote {len(images)} traversal images for dim {args.dim} to {outdir}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dtigrid",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("embed-grid", help="centroids CSV -> 9x9 layout JSON")
    p.add_argument("centroids")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_embed_grid)

    p = sub.add_parser("rasterize", help="subjects CSV + layout -> FA images")
    p.add_argument("subjects")
    p.add_argument("layout")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_rasterize)

    p = sub.add_parser("synth", help="generate a synthetic labeled cohort")
    p.add_argument("--spec", help="JSON synthetic spec (defaults used if absent)")
    p.add_argument("--subjects", type=int, default=105)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_synth)

    cfg_epilog = "config keys (key=value file or --set):\n" + _config_help()
    p = sub.add_parser(
        "train",
        help="train a VAE variant",
        epilog=cfg_epilog,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("subjects")
    p.add_argument("layout")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("subjects")
    p.add_argument("layout")
    p.add_argument("--factors")
    p.add_argument("--splits", type=int, default=5)
    p.add_argument("--test-frac", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser(
        "gradcheck",
        help="finite-difference check of all variants",
        epilog=cfg_epilog,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--max-entries", type=int, default=20,
                   help="coordinates probed per parameter tensor")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("traverse", help="latent traversal image export")
    p.add_argument("checkpoint")
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--values", help="comma-separated latent values")
    p.add_argument("--range", help="lo:hi:count sweep")
    p.add_argument("--subjects", help="subjects CSV for --base-subject")
    p.add_argument("--layout", help="layout JSON for --base-subject")
    p.add_argument("--base-subject", help="encode this subject as the base z")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_traverse)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except CapacityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ShapeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SHAPE
    except DtigridError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
