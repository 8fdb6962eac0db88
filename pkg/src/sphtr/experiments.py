"""Experiment runners shared by the command line and the acceptance suite.

Each runner writes its CSV outputs, figures and a resolved copy of its
configuration into one output directory.
"""

from __future__ import annotations

import io
import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import plotting
from .autodiff import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, grid_from, grid_params_from
from .data import read_cache
from .data.build import build_dataset, load_source
from .data.sources import data_root, random_images
from .equivariance import equivariance_error, sweep_csv
from .model import (ModelConfig, count_params, init_params, param_shapes, params_from_arrays,
                    params_to_arrays)
from .sampling import SamplingGrid, build_grid
from .train import EpochRecord, TrainResult, TrainSettings, evaluate, train
from .uniformity import uniformity

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "model.sphk"
PRECISION_DTYPES = {"f32": "float32", "f64": "float64"}


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "-", text).strip("-")


def model_config(values: dict, grid: SamplingGrid, channels: int) -> ModelConfig:
    return ModelConfig(
        num_patches=grid.num_patches, patch_dim=grid.patch_size * channels,
        dim=values["dim"], layers=values["layers"], heads=values["heads"],
        ffn_hidden=values["ffn_hidden"], dropout=values["dropout"],
        use_pos_embedding=values["use_pos_embedding"],
        use_cls_token=values["use_cls_token"], activation=values["activation"],
        ln_variant=values["ln_variant"], clf_order=values["clf_order"])


def source_channels(source: str) -> int:
    return 1 if source == "mnist" else 3


# ----------------------------------------------------------------------------
# datasets


def dataset_dir(values: dict, out_dir) -> Path:
    """Cache directory keyed by everything that determines the cache contents."""
    base = Path(values["cache_dir"]) if values.get("cache_dir") else Path(out_dir) / "data"
    grid = grid_params_from(values)
    key = "_".join([values["source"], *(f"{k}{v}" for k, v in grid.items()),
                    values["rotate"], f"seed{values['seed']}",
                    f"tr{values['train_limit']}", f"te{values['test_limit']}"])
    return base / _slug(key)


def prepare_data(values: dict, out_dir):
    """Build (or reuse) the train and test caches for a train config."""
    grid = grid_from(values)
    where = dataset_dir(values, out_dir)
    paths = {s: where / f"{values['source']}_{s}.sphd" for s in ("train", "test")}
    if not all(p.exists() for p in paths.values()):
        limits = {s: values[f"{s}_limit"] for s in ("train", "test") if values[f"{s}_limit"]}
        build_dataset(values["source"], grid, values["rotate"], values["seed"], where,
                      root=values["data_root"] or None, limits=limits)
    return grid, read_cache(paths["train"]), read_cache(paths["test"])


# ----------------------------------------------------------------------------
# training


def settings_from(values: dict) -> TrainSettings:
    return TrainSettings(epochs=values["epochs"], batch_size=values["batch_size"],
                         lr=values["lr"], seed=values["seed"],
                         dtype=PRECISION_DTYPES[values["precision"]])


def run_train(cfg: ExperimentConfig, out_dir=None) -> TrainResult:
    values = cfg.values
    out = Path(out_dir or values["output"])
    cfg.write_resolved(out)
    grid, train_set, test_set = prepare_data(values, out)
    mcfg = model_config(values, grid, source_channels(values["source"]))
    log.info("model with %d parameters on %s", count_params(mcfg), grid.describe())
    progress = TrainResult(mcfg, {})

    def record(rec: EpochRecord) -> None:
        # rewritten every epoch so an interrupted run keeps its curve
        progress.history.append(rec)
        (out / "history.csv").write_text(progress.history_csv())

    trained = train(mcfg, train_set, test_set, settings_from(values), on_epoch=record)
    if values["save_checkpoint"]:
        save_checkpoint(out / CHECKPOINT_NAME, params_to_arrays(trained.params))
    (out / "model_config.json").write_text(json.dumps(mcfg.to_dict(), sort_keys=True, indent=1))
    plotting.learning_curves({grid.method: trained.history}, out / "learning_curve.png")
    return trained


def run_eval(cfg: ExperimentConfig, checkpoint=None, out_dir=None) -> tuple[float, float]:
    """Loss and top-1 accuracy on the test cache; an untrained model without a checkpoint."""
    values = cfg.values
    out = Path(out_dir or values["output"])
    cfg.write_resolved(out)
    grid, _, test_set = prepare_data(values, out)
    mcfg = model_config(values, grid, source_channels(values["source"]))
    dtype = np.dtype(PRECISION_DTYPES[values["precision"]])
    if checkpoint is None:
        params = init_params(mcfg, values["seed"], dtype=dtype)
    else:
        params = params_from_arrays(load_checkpoint(checkpoint, param_shapes(mcfg)), dtype)
    loss, acc = evaluate(params, mcfg, test_set, dtype=dtype)
    (out / "eval.csv").write_text(f"split,count,loss,accuracy\ntest,{len(test_set)},"
                                  f"{loss:.6f},{acc:.6f}\n")
    return loss, acc


# ----------------------------------------------------------------------------
# uniformity


@dataclass
class UniformityRow:
    label: str
    seed: int
    final_value: float
    num_points: int
    m: int


def run_uniformity(grids: dict, out_dir, n: int = 100, m: Optional[int] = None,
                   m_factor: Optional[float] = None, seeds=(0,),
                   settings: Optional[dict] = None) -> list[UniformityRow]:
    """Traces and final values for every ``label -> grid`` and seed.

    ``m`` fixes the reference-set size; ``m_factor`` scales it with the grid
    size; by default it equals the grid size.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows, traces = [], {}
    for label, grid in grids.items():
        size = m if m is not None else (
            int(round(m_factor * grid.num_points)) if m_factor else grid.num_points)
        for seed in seeds:
            rep = uniformity(grid, n=n, m=size, seed=seed)
            (out / f"uniformity_{_slug(label)}_seed{seed}.csv").write_text(rep.to_csv())
            rows.append(UniformityRow(label, seed, rep.final_value, grid.num_points, size))
            if seed == seeds[0]:
                traces[label] = rep.running_mean
    buf = io.StringIO()
    buf.write("label,seed,num_points,m,final_value\n")
    for r in rows:
        buf.write(f"{r.label},{r.seed},{r.num_points},{r.m},{r.final_value:.17g}\n")
    (out / "uniformity_summary.csv").write_text(buf.getvalue())
    plotting.uniformity_traces(traces, out / "uniformity.png")
    if settings is not None:
        lines = [f"{k} = {settings[k]}" for k in sorted(settings)]
        (out / "resolved_config.txt").write_text("\n".join(lines) + "\n")
    return rows


# ----------------------------------------------------------------------------
# equivariance


def equivariance_images(values: dict, n: int) -> tuple[np.ndarray, str]:
    if values.get("data_root"):
        images, _ = load_source("mnist", data_root(values["data_root"]), "test")
        return images[:n], "mnist"
    return random_images(min(n, 100), values["seed"]), "mnist"


def run_equivariance(cfg: ExperimentConfig, out_dir=None) -> list:
    values = cfg.values
    out = Path(out_dir or values["output"])
    cfg.write_resolved(out)
    images, source = equivariance_images(values, values["n"])
    reports = []
    for mode in values["modes"]:
        for div in values["divs"]:
            grid = build_grid(values["method"], div=div, k=values["k"])
            for layers in values["layers_list"]:
                rep = equivariance_error(
                    grid, n=values["n"], layers=layers, mode=mode,
                    precision=values["precision"],
                    use_pos_embedding=values["use_pos_embedding"], seed=values["seed"],
                    images=images, dim=values["dim"], heads=values["heads"], source=source)
                log.info("%s div=%d layers=%d delta=%.3g", mode, div, layers, rep.aggregate)
                reports.append(rep)
    (out / "equivariance.csv").write_text(sweep_csv(reports))
    buf = io.StringIO()
    buf.write("mode,div,layers,precision,use_pos_embedding,n,aggregate_delta\n")
    for r in reports:
        buf.write(f"{r.mode},{r.grid_params['div']},{r.layers},{r.precision},"
                  f"{str(r.use_pos_embedding).lower()},{r.n},{r.aggregate:.17g}\n")
    (out / "equivariance_summary.csv").write_text(buf.getvalue())
    for mode in values["modes"]:
        sel = [r for r in reports if r.mode == mode]
        by_layers = {f"L={L}": [r.aggregate for r in sel if r.layers == L]
                     for L in values["layers_list"]}
        plotting.equivariance_sweep(values["divs"], by_layers, "subdivision level",
                                    out / f"equivariance_{mode}_div.png")
        by_div = {f"div={d}": [r.aggregate for r in sel if r.grid_params["div"] == d]
                  for d in values["divs"]}
        plotting.equivariance_sweep(values["layers_list"], by_div, "encoder layers",
                                    out / f"equivariance_{mode}_layers.png")
    return reports


# ----------------------------------------------------------------------------
# ablations


def ablation_runs(cfg: ExperimentConfig, out_dir=None) -> list[tuple[str, ExperimentConfig]]:
    """``(run name, train config)`` for every run of the ablation.

    Runs write into subdirectories of the ablation's output and share one
    dataset cache directory.
    """
    values = cfg.values
    out = Path(out_dir or values["output"])
    cache_dir = values["cache_dir"] or str(out / "data")
    which = values["which"]
    seeds = values["seeds"] or [values["seed"]]
    train_keys = {k: v for k, v in values.items() if k not in ("which", "ks", "seeds")}
    runs = []
    for seed in seeds:
        if which == "patch_scale":
            variants = [(f"k{k}", {"k": k, "method": "icosa"}) for k in values["ks"]]
        elif which == "cls_token":
            variants = [("no_cls", {"use_cls_token": False}), ("cls", {"use_cls_token": True})]
        else:
            raise ValueError(f"unknown ablation {which!r}, expected patch_scale or cls_token")
        for name, change in variants:
            run_name = f"{name}_seed{seed}"
            run_values = dict(train_keys, seed=seed, output=str(out / run_name),
                              cache_dir=cache_dir, **change)
            runs.append((run_name, ExperimentConfig("train", run_values)))
    return runs


def run_ablation(cfg: ExperimentConfig, out_dir=None, dry_run: bool = False) -> list[dict]:
    values = cfg.values
    out = Path(out_dir or values["output"])
    runs = ablation_runs(cfg, out)
    if dry_run:
        return [{"name": name, "config": rc.to_text()} for name, rc in runs]
    cfg.write_resolved(out)
    rows, curves = [], {}
    for name, rc in runs:
        result = run_train(rc)
        shape = (result.config.num_patches, result.config.patch_dim)
        rows.append({"name": name, "seed": rc["seed"], "k": rc["k"],
                     "use_cls_token": rc["use_cls_token"],
                     "params": count_params(result.config), "shape": shape,
                     "accuracy": result.final_accuracy})
        curves[name] = result.history
    buf = io.StringIO()
    buf.write("run,seed,k,use_cls_token,params,input_shape,accuracy\n")
    for r in rows:
        buf.write(f"{r['name']},{r['seed']},{r['k']},{str(r['use_cls_token']).lower()},"
                  f"{r['params']},{r['shape'][0]}x{r['shape'][1]},{r['accuracy']:.6f}\n")
    (out / "ablation.csv").write_text(buf.getvalue())
    if values["which"] == "cls_token":
        lines = ["run,epoch,train_loss,train_acc,test_loss,test_acc,lr"]
        for name, hist in curves.items():
            lines += [f"{name},{r.epoch},{r.train_loss:.6f},{r.train_acc:.6f},"
                      f"{r.test_loss:.6f},{r.test_acc:.6f},{r.lr:.8g}" for r in hist]
        (out / "learning_curves.csv").write_text("\n".join(lines) + "\n")
        plotting.learning_curves(curves, out / "learning_curves.png")
    else:
        plotting.bars([r["name"] for r in rows], [r["accuracy"] for r in rows],
                      "test accuracy", out / "ablation.png")
    return rows
