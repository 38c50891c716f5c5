import copy

import pytest
import torch

from lapsegen.config import GeneratorConfig
from lapsegen.latents import LatentCode, sample_latents
from lapsegen.model import (create_bundle, ema_update, load_checkpoint,
                            map_latents, save_checkpoint, styles_for_code,
                            synthesize)
from lapsegen.networks import PairwiseDiscriminator, StaticDiscriminator


def test_output_resolution_matches_block_count(tiny_bundle, tiny_config, torch_rng):
    code, noise = sample_latents(torch_rng, tiny_config)
    img = synthesize(tiny_bundle.eval_generator(), styles_for_code(tiny_bundle, code), noise)
    assert img.shape == (tiny_config.final_resolution, tiny_config.final_resolution, 3)
    assert tiny_config.final_resolution == 2 ** (tiny_config.num_blocks + 1)
    assert GeneratorConfig(num_blocks=7).final_resolution == 256


def test_output_range(tiny_bundle, tiny_config, torch_rng):
    code, noise = sample_latents(torch_rng, tiny_config)
    img = synthesize(tiny_bundle.eval_generator(), styles_for_code(tiny_bundle, code), noise)
    assert float(img.min()) >= -1.0 and float(img.max()) <= 1.0


def test_synthesize_deterministic(tiny_bundle, tiny_config, torch_rng):
    code, noise = sample_latents(torch_rng, tiny_config)
    styles = styles_for_code(tiny_bundle, code)
    a = synthesize(tiny_bundle.eval_generator(), styles, noise)
    b = synthesize(tiny_bundle.eval_generator(), styles, noise)
    assert torch.equal(a, b)


def test_mapping_deterministic_and_sized(tiny_bundle, tiny_config, torch_rng):
    code, _ = sample_latents(torch_rng, tiny_config)
    w1 = map_latents(tiny_bundle.mapping, code)
    w2 = map_latents(tiny_bundle.mapping, code)
    assert torch.equal(w1, w2)
    assert w1.shape == (tiny_config.latent_dim,)


def test_mapping_rejects_wrong_length(tiny_bundle):
    bad = LatentCode(torch.zeros(10), torch.zeros(3))
    with pytest.raises(ValueError):
        map_latents(tiny_bundle.mapping, bad)


def test_dynamic_latent_changes_style(tiny_bundle, tiny_config, torch_rng):
    code, _ = sample_latents(torch_rng, tiny_config)
    other = LatentCode(code.z_static, code.z_dynamic + 1.0)
    w1 = map_latents(tiny_bundle.mapping, code)
    w2 = map_latents(tiny_bundle.mapping, other)
    assert not torch.equal(w1, w2)


def test_zeroed_noise_scales_make_branch_inert(tiny_config, torch_rng):
    # scales start at zero, so a fresh generator ignores both spatial branches
    bundle = create_bundle(tiny_config, seed=3)
    code, noise = sample_latents(torch_rng, tiny_config)
    styles = styles_for_code(bundle, code)
    base = synthesize(bundle.generator, styles, noise)
    perturbed = noise.clone()
    for m in perturbed.dynamic_maps:
        m += 100.0
    assert torch.equal(base, synthesize(bundle.generator, styles, perturbed))
    # a nonzero scale re-enables the branch
    with torch.no_grad():
        bundle.generator.blocks[0].unit1.noise_dynamic.scale.fill_(1.0)
    assert not torch.equal(synthesize(bundle.generator, styles, noise),
                           synthesize(bundle.generator, styles, perturbed))


def test_mismatched_noise_side_raises(tiny_bundle, tiny_config, torch_rng):
    code, noise = sample_latents(torch_rng, tiny_config)
    styles = styles_for_code(tiny_bundle, code)
    bad = noise.clone()
    bad.static_maps[1] = torch.randn(4, 4)
    with pytest.raises(ValueError):
        synthesize(tiny_bundle.eval_generator(), styles, bad)


def test_style_gradient_matches_finite_differences():
    # analytic vs central finite differences on a 32x32 double-precision model
    cfg = GeneratorConfig(num_blocks=4, channel_widths=(8, 8, 8, 8), mapping_depth=2)
    bundle = create_bundle(cfg, seed=7)
    gen = bundle.generator.double()
    rng = torch.Generator().manual_seed(2)
    code, noise = sample_latents(rng, cfg)
    styles = styles_for_code(bundle, code).styles.double()
    maps_s = [m.double() for m in noise.static_maps]
    maps_d = [m.double() for m in noise.dynamic_maps]
    with torch.no_grad():
        for block in gen.blocks:
            for unit in (block.unit1, block.unit2):
                unit.noise_static.scale.fill_(0.3)
                unit.noise_dynamic.scale.fill_(0.2)
    probe = torch.randn(32, 32, 3, generator=rng).double()

    def loss_for(s):
        img = gen(s.unsqueeze(0), maps_s, maps_d)[0].permute(1, 2, 0)
        return (img * probe).sum()

    styles_leaf = styles.clone().requires_grad_(True)
    loss = loss_for(styles_leaf)
    loss.backward()
    idx = (1, 17)
    analytic = float(styles_leaf.grad[idx])
    eps = 1e-5
    plus, minus = styles.clone(), styles.clone()
    plus[idx] += eps
    minus[idx] -= eps
    with torch.no_grad():
        numeric = float((loss_for(plus) - loss_for(minus)) / (2 * eps))
    assert abs(analytic - numeric) <= 1e-3 * max(abs(numeric), 1e-8)


def test_ema_update_formula():
    ema = {"w": torch.zeros(3)}
    live = {"w": torch.ones(3)}
    ema_update(ema, live, alpha=0.999)
    assert torch.allclose(ema["w"], torch.full((3,), 0.001), atol=0, rtol=1e-12)

    ema = {"w": torch.tensor([2.0])}
    ema_update(ema, {"w": torch.tensor([5.0])}, alpha=1.0)
    assert float(ema["w"]) == 2.0
    ema_update(ema, {"w": torch.tensor([5.0])}, alpha=0.0)
    assert float(ema["w"]) == 5.0


def test_ema_update_shape_mismatch():
    with pytest.raises(ValueError):
        ema_update({"w": torch.zeros(3)}, {"w": torch.zeros(4)}, 0.5)
    with pytest.raises(ValueError):
        ema_update({"w": torch.zeros(3)}, {"v": torch.zeros(3)}, 0.5)


def test_checkpoint_round_trip_bitwise(tmp_path, tiny_config, torch_rng):
    bundle = create_bundle(tiny_config, seed=21)
    bundle.progress["samples_seen"] = 1234
    code, noise = sample_latents(torch_rng, tiny_config)
    styles = styles_for_code(bundle, code)
    before = synthesize(bundle.eval_generator(), styles, noise)
    path = tmp_path / "ckpt.pt"
    save_checkpoint(bundle, path)
    loaded = load_checkpoint(path)
    assert loaded.progress["samples_seen"] == 1234
    after = synthesize(loaded.eval_generator(), styles, noise)
    assert torch.equal(before, after)


def test_pairwise_first_conv_has_half_channels(tiny_config):
    ds = StaticDiscriminator(tiny_config.num_blocks, tiny_config.channel_widths)
    dp = PairwiseDiscriminator(tiny_config.num_blocks, tiny_config.channel_widths)
    for n in range(tiny_config.num_blocks):
        assert dp.from_rgb[n].out_channels * 2 == ds.from_rgb[n].out_channels


def test_pairwise_order_sensitivity_and_identical_frames(tiny_bundle, torch_rng):
    res = tiny_bundle.config.final_resolution
    a = torch.randn(2, 3, res, res, generator=torch_rng)
    b = torch.randn(2, 3, res, res, generator=torch_rng)
    with torch.no_grad():
        ab = tiny_bundle.d_pairwise(a, b)
        ba = tiny_bundle.d_pairwise(b, a)
        aa = tiny_bundle.d_pairwise(a, a)
    assert not torch.allclose(ab, ba)  # concat order matters by design
    assert torch.isfinite(aa).all()


def test_progressive_stage_output_sizes(tiny_bundle, torch_rng):
    cfg = tiny_bundle.config
    z = torch.randn(1, cfg.latent_dim, generator=torch_rng)
    with torch.no_grad():
        w = tiny_bundle.mapping(z)
    styles = w.unsqueeze(1).repeat(1, cfg.num_blocks, 1)
    for stage in range(cfg.num_blocks):
        sides = cfg.noise_sides()[: stage + 1]
        maps = [torch.randn(1, 1, s, s, generator=torch_rng) for s in sides]
        with torch.no_grad():
            img = tiny_bundle.generator(styles, maps, maps, stage=stage, alpha=0.5)
        assert img.shape[-1] == 2 ** (stage + 2)
        with torch.no_grad():
            logit = tiny_bundle.d_static(img, stage=stage, alpha=0.5)
        assert logit.shape == (1,)
