import numpy as np
import pytest

from lfmdepth import tensor as T
from lfmdepth.denoiser import (BLOCKS, CKPT_MAGIC, PLACEMENTS, CheckpointError, UNet, UNetConfig,
                               adapt_input_layer, lfm_cost, load_checkpoint, predict_noise, save_checkpoint,
                               timestep_embedding)
from lfmdepth.lfm import lfm_parameter_count
from lfmdepth.tensor import ShapeError, Tensor

from .conftest import finite_difference

SMALL = dict(latent_channels=12, latent_size=8, base_channels=8, temb_dim=8, n_masks=2)


def latents(cfg, b=2, seed=0, dtype=np.float32):
    rng = np.random.default_rng(seed)
    shape = (b, cfg.latent_channels, cfg.latent_size, cfg.latent_size)
    return rng.standard_normal(shape).astype(dtype), rng.standard_normal(shape).astype(dtype)


def test_output_shape_and_dtype():
    cfg = UNetConfig(**SMALL)
    model = UNet(cfg, seed=0)
    z_t, z_x = latents(cfg)
    out = predict_noise(model, z_t, z_x, np.array([3, 50]))
    assert out.shape == z_t.shape and out.dtype == np.float32


def test_unbatched_input():
    cfg = UNetConfig(**SMALL)
    model = UNet(cfg, seed=0)
    z_t, z_x = latents(cfg, b=1)
    out = predict_noise(model, z_t[0], z_x[0], 10)
    np.testing.assert_allclose(out.data, predict_noise(model, z_t, z_x, 10).data[0], rtol=1e-6)


def test_shape_errors():
    cfg = UNetConfig(**SMALL)
    model = UNet(cfg)
    z_t, z_x = latents(cfg)
    with pytest.raises(ShapeError):
        predict_noise(model, z_t, z_x[:1], 1)
    with pytest.raises(ShapeError):
        predict_noise(model, z_t[:, :4], z_x[:, :4], 1)
    with pytest.raises(ValueError):
        UNetConfig(placement="nowhere")


def test_adapted_input_layer_reproduces_single_input():
    rng = np.random.default_rng(0)
    w = rng.standard_normal((5, 3, 3, 3))
    u = Tensor(rng.standard_normal((1, 3, 6, 6)))
    ref = T.conv2d(u, Tensor(w)).data
    got = T.conv2d(T.concat([u, u], axis=1), Tensor(adapt_input_layer(w))).data
    np.testing.assert_allclose(got, ref, atol=1e-12)


def test_zero_mask_lfm_matches_no_lfm():
    base = UNetConfig(**SMALL, placement="none")
    with_lfm = UNetConfig(**SMALL, placement="decoder-penultimate")
    a, b = UNet(base, seed=3), UNet(with_lfm, seed=3)
    for blk in b.lfm.values():
        blk.bank.masks.data[...] = 0
    z_t, z_x = latents(base)
    assert np.array_equal(predict_noise(a, z_t, z_x, 7).data, predict_noise(b, z_t, z_x, 7).data)


@pytest.mark.parametrize("placement", sorted(PLACEMENTS))
def test_every_placement_runs(placement):
    cfg = UNetConfig(**SMALL, placement=placement)
    model = UNet(cfg)
    assert set(model.lfm) == set(PLACEMENTS[placement])
    z_t, z_x = latents(cfg, b=1)
    assert np.isfinite(predict_noise(model, z_t, z_x, 1).data).all()


def test_lfm_cost_sums_blocks():
    geom = UNetConfig(**SMALL).block_geometry()
    one = lfm_cost(UNetConfig(**SMALL, placement="decoder-penultimate"))
    ch, s = geom["dec1"]
    assert one["params"] == lfm_parameter_count(ch, s, s, 2)
    every = lfm_cost(UNetConfig(**SMALL, placement="all-blocks"))
    assert every["blocks"] == len(BLOCKS)
    assert every["params"] == sum(lfm_parameter_count(c, s, s, 2) for c, s in geom.values())
    assert lfm_cost(UNetConfig(**SMALL, placement="none"))["params"] == 0


def test_timestep_embedding_layout():
    e = timestep_embedding(np.array([0, 5]), 8)
    assert e.shape == (2, 8)
    np.testing.assert_allclose(e[0], [0, 0, 0, 0, 1, 1, 1, 1])


def test_full_model_gradients_float64():
    cfg = UNetConfig(**SMALL)
    model = UNet(cfg, seed=1, dtype=np.float64)
    rng = np.random.default_rng(0)
    for _, p in model.named_parameters():  # leave the zero-initialized convs non-degenerate
        p.data = p.data + rng.standard_normal(p.shape) * 0.05
    z_t, z_x = latents(cfg, b=1, dtype=np.float64)
    w = rng.standard_normal(z_t.shape)

    def fn():
        return T.tsum(predict_noise(model, z_t, z_x, 17) * Tensor(w))
    T.backward(fn())
    named = list(model.named_parameters())
    for k in range(12):
        name, p = named[rng.integers(len(named))]
        idx = tuple(rng.integers(n) for n in p.shape)
        num = finite_difference(fn, p, idx)
        assert abs(p.grad[idx] - num) <= 1e-8 + 1e-4 * abs(num), name


def test_checkpoint_round_trip(tmp_path):
    cfg = UNetConfig(**SMALL)
    model = UNet(cfg, seed=2)
    save_checkpoint(tmp_path / "m", model.state_dict(), {"a": 1}, {"step": 4})
    tensors, config, meta = load_checkpoint(tmp_path / "m")
    assert config == {"a": 1} and meta == {"step": 4}
    other = UNet(cfg, seed=9)
    other.load_state_dict(tensors)
    for (n, p), (_, q) in zip(model.named_parameters(), other.named_parameters()):
        assert np.array_equal(p.data, q.data), n
    text = (tmp_path / "m.manifest").read_text()
    assert text.startswith(CKPT_MAGIC)


def test_checkpoint_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "missing")
    save_checkpoint(tmp_path / "m", {"x": np.ones(4, np.float32)})
    (tmp_path / "m.bin").write_bytes(b"\0" * 8)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "m")
    (tmp_path / "m.manifest").write_text("garbage\n")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "m")


def test_load_state_rejects_mismatch():
    model = UNet(UNetConfig(**SMALL))
    state = model.state_dict()
    state.pop(next(iter(state)))
    with pytest.raises(KeyError):
        model.load_state_dict(state)


@pytest.mark.parametrize("output", ["eps", "v"])
def test_zero_parameters(output):
    cfg = UNetConfig(**SMALL, output=output)
    model = UNet(cfg)
    for _, p in model.named_parameters():
        p.data[...] = 0
    z_t, z_x = latents(cfg)
    out = predict_noise(model, z_t, z_x, np.array([1, 150])).data
    if output == "eps":
        assert np.all(out == 0)
    else:  # an all-zero trunk leaves only the sqrt(1 - alpha_bar) z_t term
        ab = model.alpha_bar[[1, 150]].reshape(2, 1, 1, 1)
        np.testing.assert_allclose(out, np.sqrt(1 - ab) * z_t, rtol=1e-5)  # float32 model

