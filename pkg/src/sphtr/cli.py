"""Command-line entry point: ``sphtr <subcommand> ...``.

Exit status is 0 on success, 2 for usage errors (bad flags, bad config keys or
values, invalid grid parameters) and 1 for runtime failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import experiments, groups
from .autodiff import CheckpointError, TrainingError
from .config import ConfigError, ExperimentConfig, load_config
from .data import CacheError, IngestionError, build_dataset, read_header
from .data.sources import write_synth_cifar
from .sampling import ConfigurationError, build_grid, grid_to_csv

log = logging.getLogger("sphtr")

PRESETS = {
    # three grids of comparable size per dataset scale
    "sphmnist": {"icosa": {"div": 3}, "cube": {"e": 15},
                 "erp": {"H": 25, "W": 50, "P_h": 5, "P_w": 5}},
    "sphcifar": {"icosa": {"div": 4}, "cube": {"e": 29},
                 "erp": {"H": 50, "W": 100, "P_h": 10, "P_w": 20}},
}


class UsageError(Exception):
    pass


def _add_grid_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("grid parameters")
    g.add_argument("--div", type=int, help="icosahedral subdivision level")
    g.add_argument("--k", type=int, default=0, help="icosahedral patch scale")
    g.add_argument("--e", type=int, help="cube face edge length in pixels")
    g.add_argument("--H", type=int, help="equirectangular height")
    g.add_argument("--W", type=int, help="equirectangular width")
    g.add_argument("--P-h", dest="P_h", type=int, help="equirectangular patch height")
    g.add_argument("--P-w", dest="P_w", type=int, help="equirectangular patch width")
    g.add_argument("--lattice", default="center", choices=("center", "paper"),
                   help="pixel lattice; 'paper' is an edge-inclusive calibration variant")


def _grid_params(method: str, args) -> dict:
    need = {"icosa": ("div",), "cube": ("e",), "erp": ("H", "W", "P_h", "P_w")}[method]
    missing = [n for n in need if getattr(args, n) is None]
    if missing:
        raise UsageError(f"{method} grid needs --{' --'.join(m.replace('_', '-') for m in missing)}")
    params = {n: getattr(args, n) for n in need}
    if method == "icosa":
        params["k"] = args.k
    elif args.lattice != "center":
        params["lattice"] = args.lattice
    return params


def _write_settings(out: Path, **settings) -> None:
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"{k} = {settings[k]}" for k in sorted(settings)]
    (out / "resolved_config.txt").write_text("\n".join(lines) + "\n")


def _load(kind: str, args) -> ExperimentConfig:
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if getattr(args, "output", None):
        overrides.append(f"output={args.output}")
    return load_config(kind, args.config, overrides)


# ----------------------------------------------------------------------------


def cmd_grid(args) -> int:
    grid = build_grid(args.method, **_grid_params(args.method, args))
    text = grid_to_csv(grid)
    if args.output is None:
        sys.stdout.write(text)
        return 0
    out = Path(args.output)
    _write_settings(out, command="grid", method=args.method,
                    **_grid_params(args.method, args))
    (out / "grid.csv").write_text(text)
    log.info("wrote %d points to %s", grid.num_points, out / "grid.csv")
    return 0


def cmd_uniformity(args) -> int:
    if args.preset:
        grids = {}
        for method, params in PRESETS[args.preset].items():
            if method != "icosa" and args.lattice != "center":
                params = dict(params, lattice=args.lattice)
            grids[method] = build_grid(method, **params)
    elif args.method:
        grids = {args.method: build_grid(args.method, **_grid_params(args.method, args))}
    else:
        raise UsageError("give a sampling method or --preset")
    if args.n < 1:
        raise UsageError("--n must be positive")
    seed = args.seed or 0
    seeds = list(range(seed, seed + args.seeds))
    rows = experiments.run_uniformity(
        grids, args.output, n=args.n, m=args.m, m_factor=args.m_factor, seeds=seeds,
        settings={"command": "uniformity", "grids": ";".join(g.describe() for g in grids.values()),
                  "n": args.n, "m": args.m, "m_factor": args.m_factor, "seed": seed,
                  "seeds": args.seeds})
    for r in rows:
        print(f"{r.label}\tseed={r.seed}\tpoints={r.num_points}\tm={r.m}\t{r.final_value:.6f}")
    return 0


def cmd_groups(args) -> int:
    elements = groups.enumerate_group(args.solid)
    groups.check_axioms(elements)
    out = Path(args.output)
    settings = {"command": "groups", "solid": args.solid}
    out.mkdir(parents=True, exist_ok=True)
    (out / "group.csv").write_text(groups.group_metadata_csv(elements))
    if args.div is not None or args.e is not None:
        params = _grid_params(args.solid, args)
        grid = build_grid(args.solid, **params)
        (out / "permutations.csv").write_text(groups.permutation_table_csv(grid, elements))
        settings.update(params)
    _write_settings(out, **settings)
    print(f"{args.solid}: {len(elements)} rotations, identity id "
          f"{groups.identity_id(args.solid)}, axioms hold")
    return 0


def cmd_dataset(args) -> int:
    if args.action == "inspect":
        print(json.dumps(read_header(args.path), sort_keys=True, indent=1))
        return 0
    out = Path(args.output)
    if args.action == "synth-cifar":
        write_synth_cifar(out, args.n_train, args.n_test, args.seed or 0)
        _write_settings(out, command="dataset synth-cifar", n_train=args.n_train,
                        n_test=args.n_test, seed=args.seed or 0)
        return 0
    grid = build_grid(args.method, **_grid_params(args.method, args))
    limits = {s: n for s, n in (("train", args.train_limit), ("test", args.test_limit)) if n}
    _write_settings(out, command="dataset build", source=args.source, grid=grid.describe(),
                    rotate=args.rotate, seed=args.seed or 0, train_limit=args.train_limit,
                    test_limit=args.test_limit)
    paths = build_dataset(args.source, grid, args.rotate, args.seed or 0, out,
                          root=args.data_root, limits=limits)
    for split, path in paths.items():
        print(f"{split}\t{path}")
    return 0


def cmd_train(args) -> int:
    cfg = _load("train", args)
    result = experiments.run_train(cfg)
    print(f"final test accuracy {result.final_accuracy:.4f}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load("train", args)
    loss, acc = experiments.run_eval(cfg, checkpoint=args.checkpoint)
    print(f"test loss {loss:.4f} accuracy {acc:.4f}")
    return 0


def cmd_equivariance(args) -> int:
    cfg = _load("equivariance", args)
    for rep in experiments.run_equivariance(cfg):
        print(f"{rep.mode}\tdiv={rep.grid_params['div']}\tlayers={rep.layers}\t"
              f"delta={rep.aggregate:.3e}")
    return 0


def cmd_ablate(args) -> int:
    overrides = [f"which={args.which}"]
    args.set = overrides + list(args.set or [])
    cfg = _load("ablate", args)
    if args.dry_run:
        for run in experiments.run_ablation(cfg, dry_run=True):
            print(f"## {run['name']}")
            print(run["config"])
        return 0
    for row in experiments.run_ablation(cfg):
        print(f"{row['name']}\tparams={row['params']}\taccuracy={row['accuracy']:.4f}")
    return 0


# ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sphtr", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def config_args(p):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key (repeatable)")
        p.add_argument("--output", help="output directory (overrides the config)")

    def seed_arg(p):
        p.add_argument("--seed", type=int, default=None, help="seed for all randomness")

    p = sub.add_parser("grid", help="build a sampling grid and export it as CSV")
    p.add_argument("method", choices=("erp", "cube", "icosa"))
    _add_grid_args(p)
    p.add_argument("--output", help="output directory (CSV to stdout if omitted)")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("uniformity", help="uniformity measure with its running-mean trace")
    p.add_argument("method", nargs="?", choices=("erp", "cube", "icosa"))
    p.add_argument("--preset", choices=tuple(PRESETS), help="all three grids at a dataset scale")
    _add_grid_args(p)
    p.add_argument("--n", type=int, default=100, help="iterations")
    p.add_argument("--m", type=int, default=None, help="reference set size (default: |P|)")
    p.add_argument("--m-factor", type=float, default=None,
                   help="reference set size as a multiple of |P|")
    p.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds")
    seed_arg(p)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_uniformity)

    p = sub.add_parser("groups", help="enumerate a rotation group and its permutations")
    p.add_argument("solid", choices=("icosa", "cube"))
    _add_grid_args(p)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_groups)

    p = sub.add_parser("dataset", help="build or inspect dataset caches")
    dsub = p.add_subparsers(dest="action", required=True)
    b = dsub.add_parser("build", help="convert a planar source onto a grid")
    b.add_argument("--source", choices=("mnist", "cifar"), required=True)
    b.add_argument("--method", choices=("erp", "cube", "icosa"), required=True)
    _add_grid_args(b)
    b.add_argument("--rotate", choices=("none", "so3", "group"), default="so3")
    b.add_argument("--data-root", help="source directory (default: $SPHTR_DATA)")
    b.add_argument("--train-limit", type=int, default=0)
    b.add_argument("--test-limit", type=int, default=0)
    seed_arg(b)
    b.add_argument("--output", required=True)
    i = dsub.add_parser("inspect", help="print a cache header")
    i.add_argument("path")
    s = dsub.add_parser("synth-cifar", help="write the procedural CIFAR-style source")
    s.add_argument("--n-train", type=int, default=50000)
    s.add_argument("--n-test", type=int, default=10000)
    seed_arg(s)
    s.add_argument("--output", required=True)
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("train", help="train a classifier from a config")
    config_args(p)
    seed_arg(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="top-1 accuracy of a checkpoint on the test cache")
    config_args(p)
    seed_arg(p)
    p.add_argument("--checkpoint", help="model checkpoint (untrained weights if omitted)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("equivariance", help="equivariance error sweep")
    config_args(p)
    seed_arg(p)
    p.set_defaults(func=cmd_equivariance)

    p = sub.add_parser("ablate", help="patch-scale or class-token ablation")
    p.add_argument("which", choices=("patch_scale", "cls_token"))
    config_args(p)
    seed_arg(p)
    p.add_argument("--dry-run", action="store_true", help="print run configs and stop")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, ConfigurationError) as exc:
        print(f"sphtr {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (IngestionError, CacheError, CheckpointError, TrainingError, groups.GeometryError,
            groups.GroupError, OSError, ValueError) as exc:
        print(f"sphtr {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
