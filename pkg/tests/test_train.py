from __future__ import annotations

import numpy as np
import pytest

from sphtr import autodiff as ad
from sphtr.config import load_config
from sphtr.data import build_dataset, read_cache
from sphtr.experiments import ablation_runs, run_ablation
from sphtr.model import init_params
from sphtr.sampling import build_grid
from sphtr.train import TrainSettings, evaluate, model_config_for, train

MODEL = dict(dim=8, layers=1, heads=2, ffn_hidden=16, dropout=0.0)


@pytest.fixture(scope="module")
def caches(synth_cifar_root, tmp_path_factory):
    out = tmp_path_factory.mktemp("caches")
    paths = build_dataset("cifar", build_grid("icosa", div=1), "none", 0, out,
                          root=synth_cifar_root)
    return read_cache(paths["train"]), read_cache(paths["test"])


def test_loss_decreases(caches):
    tr, te = caches
    cfg = model_config_for(tr, **MODEL)
    res = train(cfg, tr, te, TrainSettings(epochs=4, batch_size=50, lr=3e-3))
    losses = [r.train_loss for r in res.history]
    assert losses[-1] < losses[0]
    assert all(np.isfinite(losses))
    assert res.history[-1].lr == pytest.approx(0.0, abs=1e-4)
    assert res.history_csv().startswith("epoch,train_loss,train_acc,test_loss,test_acc,lr\n")


def test_training_is_reproducible(caches):
    tr, te = caches
    cfg = model_config_for(tr, **dict(MODEL, dropout=0.1))
    a = train(cfg, tr, te, TrainSettings(epochs=2, batch_size=64, seed=3))
    b = train(cfg, tr, te, TrainSettings(epochs=2, batch_size=64, seed=3))
    assert a.history_csv() == b.history_csv()
    for k in a.params:
        assert np.array_equal(a.params[k].data, b.params[k].data)


def test_untrained_accuracy_is_chance(caches):
    _, te = caches
    cfg = model_config_for(te, **MODEL)
    accs = [evaluate(init_params(cfg, s), cfg, te)[1] for s in range(5)]
    assert abs(np.mean(accs) - 0.1) <= 0.03


def test_evaluate_is_batch_size_independent(caches):
    _, te = caches
    cfg = model_config_for(te, **MODEL)
    p = init_params(cfg, 0, np.float64)
    a = evaluate(p, cfg, te, batch_size=7, dtype=np.float64)
    b = evaluate(p, cfg, te, batch_size=500, dtype=np.float64)
    assert a[1] == b[1] and a[0] == pytest.approx(b[0], rel=1e-12)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_diverging_training_names_the_parameter(caches):
    tr, _ = caches
    cfg = model_config_for(tr, **MODEL)
    with pytest.raises(ad.TrainingError, match=r"\w+\.\w+"):
        train(cfg, tr, None, TrainSettings(epochs=1, batch_size=50, lr=float("inf")))


def test_ablation_runs_layout(tmp_path):
    cfg = load_config("ablate", overrides=["which=cls_token", "seeds=0,1",
                                           f"output={tmp_path}"])
    runs = ablation_runs(cfg)
    assert [n for n, _ in runs] == ["no_cls_seed0", "cls_seed0", "no_cls_seed1", "cls_seed1"]
    assert len({rc["output"] for _, rc in runs}) == 4
    assert len({rc["cache_dir"] for _, rc in runs}) == 1
    with pytest.raises(ValueError):
        ablation_runs(load_config("ablate", overrides=["which=depth"]))


def test_patch_scale_ablation_end_to_end(tmp_path, synth_cifar_root):
    cfg = load_config("ablate", overrides=[
        "which=patch_scale", "ks=0,1", "source=cifar", f"data_root={synth_cifar_root}",
        "div=2", "layers=1", "dim=8", "heads=2", "ffn_hidden=16", "epochs=1",
        "batch_size=100", "rotate=none", "train_limit=200", "test_limit=100",
        f"output={tmp_path}"])
    rows = run_ablation(cfg)
    # div 2 has 320 points: 20 patches of 16 or 80 patches of 4, three channels each
    assert [r["shape"] for r in rows] == [(20, 48), (80, 12)]
    lines = (tmp_path / "ablation.csv").read_text().splitlines()
    assert lines[0] == "run,seed,k,use_cls_token,params,input_shape,accuracy"
    assert len(lines) == 3 and (tmp_path / "ablation.png").exists()
    assert (tmp_path / "k1_seed0" / "history.csv").exists()


def test_chunk_size_bounds_attention_memory():
    from sphtr.model import ModelConfig
    from sphtr.train import chunk_size
    assert chunk_size(ModelConfig(20, 768, heads=8)) >= 500
    assert chunk_size(ModelConfig(1280, 12, heads=8)) == 1
    assert chunk_size(ModelConfig(10, 4, dim=8, heads=2), budget=450) == 2


def test_micro_batches_match_full_batches(caches):
    tr, te = caches
    cfg = model_config_for(tr, **MODEL)
    full = train(cfg, tr, None, TrainSettings(epochs=1, batch_size=64, dtype="float64"))
    small = TrainSettings(epochs=1, batch_size=64, dtype="float64",
                          attention_budget=2 * 20 * 20 * 5)
    chunked = train(cfg, tr, None, small)
    for k in full.params:
        assert np.abs(full.params[k].data - chunked.params[k].data).max() < 1e-9
    assert chunked.history[0].train_loss == pytest.approx(full.history[0].train_loss, rel=1e-9)
