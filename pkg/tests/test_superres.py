import numpy as np
import pytest
import torch

from lapsegen.config import InversionConfig, SuperResConfig
from lapsegen.superres import (BilinearUpscaler, BlendSpec, ConvUpscaler,
                               SrPair, blend_frame, build_sr_dataset,
                               feather_mask, guided_filter, make_sr_model,
                               super_resolve, train_sr_model)


# --- guided filter oracle ------------------------------------------------------


def brute_force_guided_filter(guide, src, radius, eps):
    """Independent per-window implementation: loops every window."""
    h, w = guide.shape
    a = np.zeros((h, w))
    b = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            y0, y1 = max(0, i - radius), min(h, i + radius + 1)
            x0, x1 = max(0, j - radius), min(w, j + radius + 1)
            gw = guide[y0:y1, x0:x1]
            sw = src[y0:y1, x0:x1]
            mean_g = gw.mean()
            mean_s = sw.mean()
            var_g = (gw * gw).mean() - mean_g ** 2
            cov = (gw * sw).mean() - mean_g * mean_s
            a[i, j] = cov / (var_g + eps)
            b[i, j] = mean_s - a[i, j] * mean_g
    out = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            y0, y1 = max(0, i - radius), min(h, i + radius + 1)
            x0, x1 = max(0, j - radius), min(w, j + radius + 1)
            out[i, j] = a[y0:y1, x0:x1].mean() * guide[i, j] + b[y0:y1, x0:x1].mean()
    return out


def test_guided_filter_matches_brute_force_oracle():
    rng = np.random.default_rng(3)
    guide = rng.uniform(-1, 1, size=(16, 16))
    src = rng.uniform(-1, 1, size=(16, 16))
    fast = guided_filter(guide, src, radius=3, eps=1e-4).numpy()
    slow = brute_force_guided_filter(guide, src, 3, 1e-4)
    assert np.abs(fast - slow).max() < 1e-6


def test_guided_filter_constant_src():
    rng = np.random.default_rng(4)
    guide = rng.uniform(-1, 1, size=(12, 12))
    src = np.full((12, 12), 0.37)
    out = guided_filter(guide, src, radius=2, eps=1e-4).numpy()
    assert np.abs(out - 0.37).max() < 1e-10


def test_guided_filter_linear_src_exact():
    rng = np.random.default_rng(5)
    guide = rng.uniform(-1, 1, size=(16, 16))
    src = 0.6 * guide + 0.2
    out = guided_filter(guide, src, radius=4, eps=1e-10).numpy()
    assert np.abs(out - src).max() < 1e-6


def test_guided_filter_identity_limit():
    rng = np.random.default_rng(6)
    guide = rng.uniform(-1, 1, size=(16, 16))
    out = guided_filter(guide, guide.copy(), radius=3, eps=1e-8).numpy()
    assert np.abs(out - guide).mean() < 1e-3


def test_guided_filter_rejects_bad_args():
    img = np.zeros((8, 8))
    with pytest.raises(ValueError):
        guided_filter(img, np.zeros((9, 9)), 2, 1e-4)
    with pytest.raises(ValueError):
        guided_filter(img, img, 8, 1e-4)  # radius as large as the image
    with pytest.raises(ValueError):
        guided_filter(img, img, 0, 1e-4)
    with pytest.raises(ValueError):
        guided_filter(img, img, 2, 0.0)


def test_guided_filter_per_channel():
    rng = np.random.default_rng(7)
    guide = rng.uniform(-1, 1, size=(12, 12, 3))
    src = rng.uniform(-1, 1, size=(12, 12, 3))
    out = guided_filter(guide, src, radius=2, eps=1e-4)
    assert out.shape == (12, 12, 3)


# --- blending -------------------------------------------------------------------


def _blend_fixture():
    rng = np.random.default_rng(8)
    hires = torch.from_numpy(rng.uniform(-1, 1, size=(32, 32, 3))).float()
    sr = torch.from_numpy(rng.uniform(-1, 1, size=(32, 32, 3))).float()
    return hires, sr


def test_blend_all_static_mask_is_filtered_everywhere():
    hires, sr = _blend_fixture()
    spec = BlendSpec(hires, [sr], torch.ones(32, 32), radius=3, eps=1e-4,
                     feather_px=0)
    out = blend_frame(spec, 0)
    expected = guided_filter(hires, sr, 3, 1e-4)
    assert torch.allclose(out, expected, atol=1e-6)


def test_blend_all_dynamic_mask_is_sr_everywhere():
    hires, sr = _blend_fixture()
    spec = BlendSpec(hires, [sr], torch.zeros(32, 32), feather_px=0)
    out = blend_frame(spec, 0)
    assert torch.allclose(out, sr, atol=1e-7)


def test_blend_zero_feather_partitions_exactly():
    hires, sr = _blend_fixture()
    mask = torch.zeros(32, 32)
    mask[16:, :] = 1.0
    spec = BlendSpec(hires, [sr], mask, radius=3, eps=1e-4, feather_px=0)
    out = blend_frame(spec, 0)
    filtered = guided_filter(hires, sr, 3, 1e-4)
    assert torch.allclose(out[:16], sr[:16], atol=1e-7)
    assert torch.allclose(out[16:], filtered[16:], atol=1e-6)


def test_blend_static_region_recovers_input_detail():
    # SR output degraded from the input: the filtered static region should
    # sit closer to the input than the raw SR frame does
    rng = np.random.default_rng(9)
    hires = torch.from_numpy(rng.uniform(-1, 1, size=(32, 32, 3))).float()
    degraded = torch.from_numpy(
        np.clip(hires.numpy() * 0.7 + rng.normal(0, 0.15, size=(32, 32, 3)), -1, 1)
    ).float()
    spec = BlendSpec(hires, [degraded], torch.ones(32, 32), radius=4, eps=1e-3,
                     feather_px=0)
    out = blend_frame(spec, 0)
    mae_blend = float((out - hires).abs().mean())
    mae_sr = float((degraded - hires).abs().mean())
    assert mae_blend < mae_sr


def test_feather_mask_zero_is_identity():
    mask = torch.zeros(8, 8)
    mask[4:, :] = 1.0
    assert torch.equal(feather_mask(mask, 0), mask)
    soft = feather_mask(mask, 2)
    assert 0.0 < float(soft[4, 3]) < 1.0  # boundary softened


def test_blend_spec_validation():
    hires, sr = _blend_fixture()
    with pytest.raises(ValueError):
        BlendSpec(hires, [sr], torch.ones(16, 16))
    with pytest.raises(ValueError):
        BlendSpec(hires, [sr[:16]], torch.ones(32, 32))
    with pytest.raises(ValueError):
        BlendSpec(hires, [sr], torch.ones(32, 32), radius=0)


# --- SR backends ------------------------------------------------------------------


def test_bilinear_stub_scales_and_preserves_constants():
    model = BilinearUpscaler(scale=4)
    frame = torch.full((16, 16, 3), 0.25)
    out = super_resolve(model, frame)
    assert out.shape == (64, 64, 3)
    assert torch.allclose(out, torch.full((64, 64, 3), 0.25), atol=1e-6)


def test_super_resolve_deterministic():
    model = ConvUpscaler(scale=4, width=8, depth=2)
    frame = torch.rand(8, 8, 3) * 2 - 1
    a = super_resolve(model, frame)
    b = super_resolve(model, frame)
    assert torch.equal(a, b)
    assert a.shape == (32, 32, 3)


def test_super_resolve_size_policy():
    model = BilinearUpscaler(scale=4)
    frame = torch.rand(8, 8, 3)
    with pytest.raises(ValueError):
        super_resolve(model, frame, input_resolution=16, resize_policy="error")
    out = super_resolve(model, frame, input_resolution=16, resize_policy="resize")
    assert out.shape == (64, 64, 3)


def test_make_sr_model():
    assert isinstance(make_sr_model(SuperResConfig(backend="bilinear")), BilinearUpscaler)
    assert isinstance(make_sr_model(SuperResConfig(backend="cnn")), ConvUpscaler)
    with pytest.raises(ValueError):
        make_sr_model(SuperResConfig(backend="esrgan-full"))


def test_sr_pair_validates_scale():
    with pytest.raises(ValueError):
        SrPair(hi_res=torch.zeros(32, 32, 3), low_res=torch.zeros(16, 16, 3))


# --- dataset construction -----------------------------------------------------------


@pytest.fixture(scope="module")
def sr_inputs(tiny_config):
    from lapsegen.config import EncoderConfig
    from lapsegen.inversion import train_encoder
    from lapsegen.model import create_bundle

    bundle = create_bundle(tiny_config, seed=5)
    enc_cfg = EncoderConfig(stage_blocks=(1, 1), stage_channels=(8, 16),
                            stem_channels=8, mlp_hidden=64, batch_size=16)
    encoder = train_encoder(bundle, enc_cfg, n_samples=256, seed=4)
    return bundle, encoder


@pytest.fixture(scope="module")
def hires_videos(tmp_path_factory, tiny_config):
    # frames at 4x the model resolution for SR pair construction
    from PIL import Image
    from lapsegen.data import ingest_videos

    root = tmp_path_factory.mktemp("sr_videos")
    rng = np.random.default_rng(11)
    side = 4 * tiny_config.final_resolution
    for v in range(2):
        vdir = root / f"vid_{v}"
        vdir.mkdir()
        for f in range(3):
            arr = rng.integers(0, 255, size=(side, side, 3), dtype=np.uint8)
            Image.fromarray(arr).save(vdir / f"{f}.png")
    return ingest_videos(root, resolution=side)


def test_build_sr_dataset_shapes_and_difference(sr_inputs, hires_videos, tiny_config):
    bundle, encoder = sr_inputs
    config = InversionConfig(variant="eoi", max_iters=5)
    pairs = build_sr_dataset(hires_videos, bundle, config, encoder, n_frames=2,
                             seed=3)
    assert 0 < len(pairs) <= 2
    res = tiny_config.final_resolution
    for pair in pairs:
        assert pair.hi_res.shape == (4 * res, 4 * res, 3)
        assert pair.low_res.shape == (res, res, 3)
        # reconstruction differs from a plain downsample of the hi-res frame
        from lapsegen.data import _resize_pow2
        plain = _resize_pow2(pair.hi_res.permute(2, 0, 1), res).permute(1, 2, 0)
        assert float((pair.low_res - plain).abs().mean()) > 0


def test_build_sr_dataset_rejects_finetuning_variant(sr_inputs, hires_videos):
    bundle, encoder = sr_inputs
    with pytest.raises(ValueError):
        build_sr_dataset(hires_videos, bundle, InversionConfig(variant="eoif"),
                         encoder, n_frames=1)


def test_train_sr_model_runs(sr_inputs, hires_videos, tiny_config):
    bundle, encoder = sr_inputs
    config = InversionConfig(variant="eoi", max_iters=3)
    pairs = build_sr_dataset(hires_videos, bundle, config, encoder, n_frames=2,
                             seed=3)
    sr_cfg = SuperResConfig(backend="cnn", train_steps=3, batch_size=2)
    model = ConvUpscaler(scale=4, width=8, depth=1)
    trained = train_sr_model(model, pairs, sr_cfg, seed=0)
    out = super_resolve(trained, pairs[0].low_res)
    assert out.shape == pairs[0].hi_res.shape
