from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import numeric_grad, rel_error
from sphtr import autodiff as ad
from sphtr.autodiff import Tensor
from sphtr.model import (ModelConfig, attention, classify, count_params, embed, encode,
                         encoder_layer, forward, init_params, loss, param_shapes,
                         solve_ffn_hidden, truncated_normal)

TINY = ModelConfig(num_patches=20, patch_dim=4, dim=8, layers=1, heads=2, ffn_hidden=16,
                   dropout=0.0)


def tiny_params(cfg=TINY, seed=0, pos_std=0.0):
    params = init_params(cfg, seed, dtype=np.float64, pos_std=pos_std)
    # move biases and gains off their trivial init so every path is exercised
    rng = np.random.default_rng(seed + 100)
    for name, t in params.items():
        t.data += rng.normal(scale=0.1, size=t.shape)
    return params


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(20, 4, dim=10, heads=4)
    with pytest.raises(ValueError):
        ModelConfig(20, 4, dropout=1.0)
    with pytest.raises(ValueError):
        ModelConfig(20, 4, ln_variant="middle")
    cfg = ModelConfig(20, 64)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


def test_parameter_count_closed_form_matches_shapes():
    for cfg in (TINY, ModelConfig(20, 64), ModelConfig(1280, 12, layers=4, use_cls_token=True)):
        assert count_params(cfg) == sum(int(np.prod(s)) for s in param_shapes(cfg).values())


@pytest.mark.parametrize("N,D_in,layers,expected", [
    (20, 64, 8, 60106),    # icosa div 3, SPH-MNIST network
    (6, 225, 8, 63634),    # cube e=15
    (50, 25, 8, 59890),    # erp 25x50 in 5x5 patches
    (20, 768, 4, 48106),   # icosa div 4, SPH-CIFAR network, k=0
    (80, 192, 4, 35722),   # k=1
    (320, 48, 4, 38026),   # k=2
    (1280, 12, 4, 60202),  # k=3
])
def test_parameter_budgets(N, D_in, layers, expected):
    assert count_params(ModelConfig(N, D_in, layers=layers)) == expected


def test_table1_mnist_budget_near_60k():
    cfg = ModelConfig(20, 64)
    assert solve_ffn_hidden(cfg, 60000) == 96
    assert abs(count_params(cfg) - 60000) / 60000 < 0.01


def test_truncated_normal_std():
    z = truncated_normal(np.random.default_rng(0), (100000,))
    assert abs(z.std() - 0.02) / 0.02 < 0.05
    assert np.abs(z).max() <= 2 * 0.02 / 0.8796 + 1e-12


def test_init_is_deterministic_and_finite(tmp_path):
    cfg = ModelConfig(20, 64)
    a, b = init_params(cfg, 3), init_params(cfg, 3)
    for k in a:
        assert np.array_equal(a[k].data, b[k].data) and np.all(np.isfinite(a[k].data))
    assert np.all(a["embed.pos"].data == 0) and np.all(a["layers.0.attn.bq"].data == 0)
    ad.save_checkpoint(tmp_path / "a", {k: t.data for k, t in a.items()})
    ad.save_checkpoint(tmp_path / "b", {k: t.data for k, t in b.items()})
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_forward_shapes_and_uniform_loss(rng):
    p = init_params(TINY, 0, np.float64)
    x = rng.random((20, 4))
    assert forward(x, p, TINY).shape == (10,)
    assert forward(rng.random((3, 20, 4)), p, TINY).shape == (3, 10)
    assert loss(Tensor(np.zeros((1, 10))), [3]).item() == pytest.approx(math.log(10), abs=1e-12)
    with pytest.raises(ad.ShapeError):
        forward(rng.random((19, 4)), p, TINY)


def test_embed_examples(rng):
    p = tiny_params()
    p["embed.pos"].data[:] = 0
    assert np.array_equal(embed(np.zeros((20, 4)), p, TINY).data, np.zeros((20, 8)))
    x = rng.random((20, 4))
    E = p["embed.E"].data
    naive = np.array([[sum(x[i, k] * E[k, j] for k in range(4)) for j in range(8)]
                      for i in range(20)])
    assert np.abs(embed(x, p, TINY).data - naive).max() < 1e-12
    cfg = ModelConfig(20, 4, dim=8, layers=1, heads=2, use_pos_embedding=False)
    perm = rng.permutation(20)
    assert np.abs(embed(x[perm], p, cfg).data - embed(x, p, cfg).data[perm]).max() < 1e-12


def test_residual_identity_when_branches_are_zero(rng):
    p = tiny_params()
    p["layers.0.attn.Wo"].data[:] = 0
    p["layers.0.attn.bo"].data[:] = 0
    p["layers.0.ffn.W2"].data[:] = 0
    p["layers.0.ffn.b2"].data[:] = 0
    s = Tensor(rng.normal(size=(20, 8)))
    assert np.array_equal(encoder_layer(s, p, TINY, 0).data, s.data)


def test_single_head_attention_on_two_tokens(rng):
    u = rng.normal(size=(2, 2))
    names = {n: rng.normal(size=(2, 2)) for n in ("Wq", "Wk", "Wv", "Wo")}
    names.update({n: rng.normal(size=2) for n in ("bq", "bk", "bv", "bo")})
    p = {"a." + k: Tensor(v) for k, v in names.items()}
    out = attention(Tensor(u), p, "a.", heads=1).data
    q = u @ names["Wq"] + names["bq"]
    k = u @ names["Wk"] + names["bk"]
    v = u @ names["Wv"] + names["bv"]
    expected = np.zeros((2, 2))
    for i in range(2):
        s0 = float(q[i] @ k[0]) / math.sqrt(2)
        s1 = float(q[i] @ k[1]) / math.sqrt(2)
        w0 = math.exp(s0) / (math.exp(s0) + math.exp(s1))
        expected[i] = (w0 * v[0] + (1 - w0) * v[1]) @ names["Wo"] + names["bo"]
    assert np.abs(out - expected).max() < 1e-12


def test_classify_examples(rng):
    p = tiny_params()
    p["head.W"].data[:] = 0
    s = Tensor(rng.normal(size=(20, 8)))
    assert np.array_equal(classify(s, p, TINY).data, p["head.b"].data)
    p = tiny_params()
    perm = rng.permutation(20)
    assert np.abs(classify(Tensor(s.data[perm]), p, TINY).data
                  - classify(s, p, TINY).data).max() < 1e-12
    # row-wise LN then arithmetic mean then linear map
    g, b = p["norm.gain"].data, p["norm.bias"].data
    rows = (s.data - s.data.mean(1, keepdims=True)) / np.sqrt(s.data.var(1, keepdims=True) + 1e-5)
    pooled = (rows * g + b).mean(axis=0)
    expected = pooled @ p["head.W"].data + p["head.b"].data
    assert np.abs(classify(s, p, TINY).data - expected).max() < 1e-12


def test_alternative_orders_and_cls_token_run(rng):
    x = rng.random((2, 20, 4))
    for cfg in (ModelConfig(20, 4, dim=8, layers=2, heads=2, clf_order="mean_ln"),
                ModelConfig(20, 4, dim=8, layers=2, heads=2, ln_variant="post"),
                ModelConfig(20, 4, dim=8, layers=2, heads=2, use_cls_token=True),
                ModelConfig(20, 4, dim=8, layers=2, heads=2, activation="relu")):
        p = init_params(cfg, 0, np.float64)
        out = forward(x, p, cfg)
        assert out.shape == (2, 10) and np.all(np.isfinite(out.data))
    cfg = ModelConfig(20, 4, dim=8, layers=1, heads=2, use_cls_token=True)
    p = init_params(cfg, 0, np.float64)
    assert encode(x, p, cfg).shape == (2, 21, 8)


def test_eval_forward_is_pure(rng):
    cfg = ModelConfig(20, 4, dim=8, layers=2, heads=2, dropout=0.0)
    p = init_params(cfg, 1, np.float64)
    x = rng.random((20, 4))
    assert np.array_equal(forward(x, p, cfg).data, forward(x, p, cfg).data)


def test_dropout_changes_training_forward_only(rng):
    cfg = ModelConfig(20, 4, dim=8, layers=2, heads=2, dropout=0.5)
    p = init_params(cfg, 1, np.float64)
    x = rng.random((20, 4))
    a = forward(x, p, cfg, train=True, rng=np.random.default_rng(0)).data
    b = forward(x, p, cfg, train=True, rng=np.random.default_rng(1)).data
    assert not np.array_equal(a, b)
    assert np.array_equal(forward(x, p, cfg).data, forward(x, p, cfg).data)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2 ** 16), layers=st.integers(1, 3))
def test_stack_permutation_equivariance(seed, layers):
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(12, 5, dim=8, layers=layers, heads=2, dropout=0.0,
                      use_pos_embedding=False)
    p = init_params(cfg, seed, np.float64)
    x = rng.random((12, 5))
    perm = rng.permutation(12)
    out = encode(x, p, cfg).data
    assert np.abs(encode(x[perm], p, cfg).data - out[perm]).max() < 1e-9
    assert np.abs(forward(x[perm], p, cfg).data - forward(x, p, cfg).data).max() < 1e-9


def test_positional_embedding_breaks_equivariance(rng):
    cfg = ModelConfig(12, 5, dim=8, layers=2, heads=2, dropout=0.0)
    p = init_params(cfg, 0, np.float64, pos_std=0.02)
    x = rng.random((12, 5))
    perm = rng.permutation(12)
    out = encode(x, p, cfg).data
    assert np.abs(encode(x[perm], p, cfg).data - out[perm]).max() > 1e-3


def test_full_model_gradients():
    p = tiny_params()
    rng = np.random.default_rng(5)
    x = rng.random((3, 20, 4))
    y = np.array([1, 7, 3])

    def f():
        return loss(forward(x, p, TINY), y)

    for t in p.values():
        t.zero_grad()
    f().backward()
    worst = {}
    for name, t in p.items():
        num = numeric_grad(lambda: f().item(), t.data)
        worst[name] = rel_error(num, t.grad)
    assert max(worst.values()) <= 1e-4, worst


def test_matches_torch_reference(rng):
    torch = pytest.importorskip("torch")
    cfg = ModelConfig(20, 4, dim=8, layers=2, heads=2, ffn_hidden=16, dropout=0.0)
    p = tiny_params(cfg)
    x = rng.random((3, 20, 4))
    y = np.array([0, 4, 9])
    T = {k: torch.tensor(v.data, requires_grad=True) for k, v in p.items()}
    F = torch.nn.functional

    def ln(t, pre):
        return F.layer_norm(t, (cfg.dim,), T[pre + ".gain"], T[pre + ".bias"], 1e-5)

    s = torch.tensor(x) @ T["embed.E"] + T["embed.pos"]
    for i in range(cfg.layers):
        pre = f"layers.{i}."
        u = ln(s, pre + "ln1")
        heads = []
        for h in range(cfg.heads):
            sl = slice(4 * h, 4 * h + 4)
            q = (u @ T[pre + "attn.Wq"] + T[pre + "attn.bq"])[..., sl]
            k = (u @ T[pre + "attn.Wk"] + T[pre + "attn.bk"])[..., sl]
            v = (u @ T[pre + "attn.Wv"] + T[pre + "attn.bv"])[..., sl]
            heads.append(torch.softmax(q @ k.transpose(-1, -2) / 2.0, dim=-1) @ v)
        s = torch.cat(heads, -1) @ T[pre + "attn.Wo"] + T[pre + "attn.bo"] + s
        u = ln(s, pre + "ln2")
        s = F.gelu(u @ T[pre + "ffn.W1"] + T[pre + "ffn.b1"]) @ T[pre + "ffn.W2"] \
            + T[pre + "ffn.b2"] + s
    logits = ln(s, "norm").mean(dim=-2) @ T["head.W"] + T["head.b"]
    ref = F.cross_entropy(logits, torch.tensor(y))
    ref.backward()
    ours = loss(forward(x, p, cfg), y)
    ours.backward()
    assert abs(ours.item() - ref.item()) < 1e-12
    for k in p:
        assert np.abs(p[k].grad - T[k].grad.numpy()).max() < 1e-12, k
