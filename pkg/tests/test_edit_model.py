"""Editor model contracts: flow matching, sampler exactness, hook
neutrality, batch equivariance, and a full-model gradient check."""

import numpy as np
import pytest

from viewedit import autodiff as ad
from viewedit.autodiff import Tensor
from viewedit.editor import (ArchitectureConfig, EditorModel, Hooks,
                             fm_interpolate, fm_loss)
from viewedit.editor.ckpt import load_editor, save_editor
from viewedit.editor.flow import sample
from viewedit.errors import ConfigError, ShapeError

from oracles import finite_difference, rel_err

TINY = ArchitectureConfig(image_size=8, patch=4, width=8, heads=2, depth=2,
                          guidance_depth=1, semantic_layers=(0, 1),
                          vocab_size=4)


def make_inputs(cfg, B=2, seed=0, dtype=np.float64):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((B, cfg.n_image_tokens, cfg.d_latent)).astype(dtype)
    cond = rng.uniform(0, 1, (B, cfg.image_size, cfg.image_size, 3)).astype(dtype)
    ids = rng.integers(0, cfg.vocab_size, B)
    t = rng.uniform(0, 1, B)
    return z, cond, ids, t


def test_config_validation():
    with pytest.raises(ConfigError):
        ArchitectureConfig(depth=2, guidance_depth=3)
    with pytest.raises(ConfigError):
        ArchitectureConfig(width=65)
    with pytest.raises(ConfigError):
        ArchitectureConfig(semantic_layers=(3, 99))
    with pytest.raises(ConfigError):
        ArchitectureConfig(alpha=-0.1)
    assert ArchitectureConfig().block_interval == 6      # ceil(12/2)
    assert ArchitectureConfig(depth=12, guidance_depth=5).block_interval == 3


def test_fm_interpolate_endpoints_and_midpoint():
    rng = np.random.default_rng(0)
    z0 = rng.standard_normal((2, 4, 3))
    z1 = rng.standard_normal((2, 4, 3))
    np.testing.assert_array_equal(fm_interpolate(z0, z1, 0.0), z0)
    np.testing.assert_array_equal(fm_interpolate(z0, z1, 1.0), z1)
    np.testing.assert_allclose(fm_interpolate(z0, z1, 0.5), 0.5 * (z0 + z1))
    with pytest.raises(ValueError):
        fm_interpolate(z0, z1, 1.5)
    with pytest.raises(ShapeError):
        fm_interpolate(z0, z1[:1], 0.5)


def test_fm_loss_values_and_gradient():
    rng = np.random.default_rng(1)
    z0 = rng.standard_normal((2, 3, 4))
    z1 = rng.standard_normal((2, 3, 4))
    exact = Tensor(z0 - z1, requires_grad=True)
    assert float(fm_loss(exact, z0, z1).data) == 0.0
    zero = Tensor(np.zeros_like(z0), requires_grad=True)
    want = float(np.mean((z0 - z1) ** 2))
    assert float(fm_loss(zero, z0, z1).data) == pytest.approx(want)
    # gradient vs finite differences
    v = rng.standard_normal((2, 3, 4))
    vt = Tensor(v.copy(), requires_grad=True)
    fm_loss(vt, z0, z1).backward()

    def f(x):
        return float(np.mean((x - (z0 - z1)) ** 2))

    fd = finite_difference(f, v.copy())
    assert rel_err(vt.grad, fd) < 1e-6
    np.testing.assert_allclose(vt.grad, 2 * (v - (z0 - z1)) / v.size, rtol=1e-10)


@pytest.mark.parametrize("K", [1, 5, 20])
def test_sampler_exact_with_analytic_velocity(K):
    cfg = TINY
    model = EditorModel(cfg, seed=0, dtype=np.float64)
    rng = np.random.default_rng(123)
    z1 = rng.standard_normal((1, cfg.n_image_tokens, cfg.d_latent))
    z1 = np.clip(z1 * 0.2 + 0.5, 0, 1)  # decodable target in [0,1]
    cond = rng.uniform(0, 1, (1, cfg.image_size, cfg.image_size, 3))

    seen = {}

    def vel(z, t):
        seen.setdefault("z0", z.copy())
        return seen["z0"] - z1   # constant analytic field z0 - z1

    out = sample(model, cond, 0, np.random.default_rng(7), steps=K,
                 velocity_fn=vel)
    from viewedit.imaging import unpatchify
    want = unpatchify(z1[0], cfg.patch, cfg.image_size, cfg.image_size)
    assert np.abs(out - np.clip(want, 0, 1)).max() <= 1e-6


def test_sampler_deterministic_per_seed():
    cfg = TINY
    model = EditorModel(cfg, seed=0, dtype=np.float64)
    rng = np.random.default_rng(5)
    cond = rng.uniform(0, 1, (1, cfg.image_size, cfg.image_size, 3))
    a = sample(model, cond, 1, np.random.default_rng(42), steps=4)
    b = sample(model, cond, 1, np.random.default_rng(42), steps=4)
    assert np.array_equal(a, b)
    with pytest.raises(ValueError):
        sample(model, cond, 1, np.random.default_rng(0), steps=0)


def test_hook_neutrality_bit_exact():
    cfg = ArchitectureConfig(image_size=16, patch=4, width=16, heads=2,
                             depth=4, guidance_depth=2, semantic_layers=(1, 3),
                             vocab_size=4)
    model = EditorModel(cfg, seed=3, dtype=np.float64)
    z, cond, ids, t = make_inputs(cfg, B=2, seed=9)
    plain = model.forward(z, cond, ids, t).data

    zeros = [Tensor(np.zeros((2, cfg.n_tokens, cfg.width)))
             for _ in range(cfg.guidance_depth)]
    kv = {l: (Tensor(np.zeros((2, cfg.heads, 4, cfg.width // cfg.heads))),
              Tensor(np.zeros((2, cfg.heads, 4, cfg.width // cfg.heads))))
          for l in cfg.semantic_set()}
    hooked = model.forward(z, cond, ids, t,
                           hooks=Hooks(residuals=zeros, ref_kv=kv, alpha=0.0)).data
    assert np.array_equal(plain, hooked)
    # zero residuals alone (alpha left at 0) are also exactly neutral
    hooked2 = model.forward(z, cond, ids, t, hooks=Hooks(residuals=zeros)).data
    assert np.array_equal(plain, hooked2)


def test_batch_permutation_equivariance():
    cfg = TINY
    model = EditorModel(cfg, seed=1, dtype=np.float64)
    z, cond, ids, t = make_inputs(cfg, B=3, seed=2)
    out = model.forward(z, cond, ids, t).data
    perm = [2, 0, 1]
    out_p = model.forward(z[perm], cond[perm], ids[perm], t[perm]).data
    np.testing.assert_allclose(out_p, out[perm], atol=1e-12)


def test_output_shape_contract():
    for cfg in (TINY, ArchitectureConfig(image_size=16, patch=4, width=16,
                                         heads=2, depth=3, guidance_depth=1,
                                         semantic_layers=(1, 2), vocab_size=5)):
        model = EditorModel(cfg, seed=0, dtype=np.float64)
        z, cond, ids, t = make_inputs(cfg, B=2, seed=0)
        out = model.forward(z, cond, ids, t)
        assert out.shape == (2, cfg.n_image_tokens, cfg.d_latent)


def test_full_model_gradient_check_tiny():
    # loss gradient through the whole transformer vs finite differences
    cfg = TINY
    model = EditorModel(cfg, seed=4, dtype=np.float64)
    model.set_trainable(("backbone.",))
    z, cond, ids, t = make_inputs(cfg, B=2, seed=11)
    rng = np.random.default_rng(3)
    z0 = rng.standard_normal(z.shape)
    z1 = rng.standard_normal(z.shape)

    def loss_value():
        return fm_loss(model.forward(z, cond, ids, t), z0, z1)

    names = ("backbone.blocks.0.qkv.w", "backbone.blocks.1.fc2.w",
             "backbone.embed_z.w", "backbone.prompt.table",
             "backbone.out_ln.g")
    loss = loss_value()
    loss.backward()
    grads = {name: model.params[name].grad.copy() for name in names}
    for other in model.params.values():
        other.grad = None
    for name in names:
        p = model.params[name]
        got = grads[name]
        base = p.data.copy()
        idxs = [tuple(rng.integers(0, s) for s in p.shape) for _ in range(4)]
        for idx in idxs:
            step = 1e-6
            p.data[idx] = base[idx] + step
            fp = float(loss_value().data)
            p.data[idx] = base[idx] - step
            fm = float(loss_value().data)
            p.data[idx] = base[idx]
            fd = (fp - fm) / (2 * step)
            scale = max(abs(got).max(), 1e-6)
            assert abs(got[idx] - fd) / scale < 1e-3, (
                f"{name}[{idx}]: analytic {got[idx]:.3e} vs fd {fd:.3e}")


def test_bad_residual_shape_rejected():
    cfg = TINY
    model = EditorModel(cfg, seed=0, dtype=np.float64)
    z, cond, ids, t = make_inputs(cfg, B=1, seed=0)
    bad = [Tensor(np.zeros((1, 3, cfg.width)))]
    with pytest.raises(ShapeError):
        model.forward(z, cond, ids, t, hooks=Hooks(residuals=bad))
    with pytest.raises(ShapeError):
        model.forward(z, cond, ids, t,
                      hooks=Hooks(residuals=[]))


def test_editor_checkpoint_roundtrip(tmp_path):
    cfg = TINY
    model = EditorModel(cfg, seed=6, dtype=np.float32)
    path = tmp_path / "editor.ckpt"
    save_editor(path, model)
    loaded = load_editor(path)
    assert loaded.cfg == cfg
    assert set(loaded.params) == set(model.params)
    for k in model.params:
        assert np.array_equal(loaded.params[k].data, model.params[k].data), k
    z, cond, ids, t = make_inputs(cfg, B=1, seed=1, dtype=np.float32)
    np.testing.assert_array_equal(loaded.forward(z, cond, ids, t).data,
                                  model.forward(z, cond, ids, t).data)
