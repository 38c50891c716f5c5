import pytest
import torch

from lapsegen.config import GeneratorConfig
from lapsegen.latents import (SpatialNoiseSet, broadcast_styles,
                              sample_latents, sample_noise_maps)


def test_default_dims_concatenate_to_512():
    cfg = GeneratorConfig(num_blocks=7)
    rng = torch.Generator().manual_seed(0)
    code, _ = sample_latents(rng, cfg)
    assert code.z_static.shape == (509,)
    assert code.z_dynamic.shape == (3,)
    assert code.concat().shape == (512,)


def test_noise_map_sides_for_n7():
    cfg = GeneratorConfig(num_blocks=7)
    assert cfg.noise_sides() == (4, 8, 16, 32, 64, 128, 256)
    rng = torch.Generator().manual_seed(0)
    _, noise = sample_latents(rng, cfg)
    assert len(noise.static_maps) == 7 and len(noise.dynamic_maps) == 7
    for n, m in enumerate(noise.static_maps):
        assert m.shape == (2 ** (n + 2), 2 ** (n + 2))


def test_sampling_reproducible_per_seed(tiny_config):
    a_code, a_noise = sample_latents(torch.Generator().manual_seed(5), tiny_config)
    b_code, b_noise = sample_latents(torch.Generator().manual_seed(5), tiny_config)
    assert torch.equal(a_code.concat(), b_code.concat())
    for ma, mb in zip(a_noise.dynamic_maps, b_noise.dynamic_maps):
        assert torch.equal(ma, mb)


def test_sample_statistics_unit_normal():
    # ~174k scalars; empirical mean within 0.02 of 0, variance within 0.02 of 1
    cfg = GeneratorConfig(num_blocks=7)
    noise = sample_noise_maps(torch.Generator().manual_seed(123), cfg)
    flat = torch.cat([m.flatten() for m in noise.static_maps + noise.dynamic_maps])
    assert flat.numel() >= 100_000
    assert abs(float(flat.mean())) < 0.02
    assert abs(float(flat.var()) - 1.0) < 0.02


def test_noise_set_shape_validation():
    good = [torch.zeros(4, 4), torch.zeros(8, 8)]
    SpatialNoiseSet([m.clone() for m in good], [m.clone() for m in good])
    with pytest.raises(ValueError):
        SpatialNoiseSet([torch.zeros(4, 4)], [torch.zeros(5, 5)])
    with pytest.raises(ValueError):
        SpatialNoiseSet([torch.zeros(4, 4)], [])


def test_broadcast_single_style():
    w = torch.randn(512)
    styles = broadcast_styles(w, 7)
    assert styles.styles.shape == (7, 512)
    assert all(torch.equal(styles.styles[i], w) for i in range(7))


def test_broadcast_mixing_crossover():
    w1, w2 = torch.zeros(8), torch.ones(8)
    styles = broadcast_styles([w1, w2], 7, crossovers=[3])
    # slots 0-2 from the first style, 3-6 from the second
    assert torch.equal(styles.styles[:3], w1.expand(3, 8))
    assert torch.equal(styles.styles[3:], w2.expand(4, 8))


def test_broadcast_rejects_empty_and_bad_crossovers():
    with pytest.raises(ValueError):
        broadcast_styles([], 7)
    with pytest.raises(ValueError):
        broadcast_styles([torch.zeros(4), torch.ones(4)], 7, crossovers=None)
    with pytest.raises(ValueError):
        broadcast_styles([torch.zeros(4), torch.ones(4)], 7, crossovers=[0])
