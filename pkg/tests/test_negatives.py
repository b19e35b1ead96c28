"""Hard-negative generation: strategy semantics and selection statistics."""

import numpy as np
import pytest

from tsadkit.errors import ConfigError
from tsadkit.negatives import (STRATEGIES, NegativeGenConfig,
                               generate_negative, generate_negatives,
                               pick_strategy, sample_intensity)
from tsadkit.rng import make_rng


def patches(rng, n=8, p=4):
    return rng.standard_normal((n, p))


def cfg_with(**kw):
    return NegativeGenConfig(**kw)


# -- config validation ----------------------------------------------------------

def test_config_validation():
    with pytest.raises(ConfigError, match="strategy"):
        cfg_with(strategy="wiggle")
    with pytest.raises(ConfigError, match="noise_ratio"):
        cfg_with(noise_ratio=1.5)
    with pytest.raises(ConfigError, match="sigma"):
        cfg_with(sigma=-0.1)
    with pytest.raises(ConfigError, match="compress_factor"):
        cfg_with(compress_factor=1)
    with pytest.raises(ConfigError, match="shift_delta"):
        cfg_with(shift_delta=0)


def test_pick_strategy_pinned_and_mixed():
    pinned = cfg_with(strategy="noise")
    assert pick_strategy(pinned, make_rng(0)) == "noise"
    mixed = cfg_with()
    seen = {pick_strategy(mixed, make_rng(s)) for s in range(200)}
    assert seen == set(STRATEGIES)


# -- identity at ratio zero -------------------------------------------------------

@pytest.mark.parametrize("strategy", STRATEGIES)
def test_zero_ratio_is_identity(strategy):
    rng = make_rng(1)
    x = patches(rng)
    out = generate_negative(x, strategy, cfg_with(noise_ratio=0.0), make_rng(2), 2)
    np.testing.assert_array_equal(out, x)


@pytest.mark.parametrize("strategy", STRATEGIES)
def test_input_never_mutated(strategy):
    rng = make_rng(3)
    x = patches(rng)
    before = x.copy()
    generate_negative(x, strategy, cfg_with(noise_ratio=1.0), make_rng(4), 2)
    np.testing.assert_array_equal(x, before)


# -- involutions --------------------------------------------------------------------

def test_hmirror_is_involution_at_full_ratio():
    rng = make_rng(5)
    x = patches(rng)
    cfg = cfg_with(noise_ratio=1.0)
    once = generate_negative(x, "hmirror", cfg, make_rng(6), 2)
    twice = generate_negative(once, "hmirror", cfg, make_rng(7), 2)
    # Reflection about the mean preserves the mean, so applying it twice
    # restores the input exactly.
    np.testing.assert_allclose(twice, x, rtol=1e-12, atol=1e-12)


def test_vmirror_is_involution_at_full_ratio():
    rng = make_rng(8)
    x = patches(rng)
    cfg = cfg_with(noise_ratio=1.0)
    once = generate_negative(x, "vmirror", cfg, make_rng(9), 2)
    twice = generate_negative(once, "vmirror", cfg, make_rng(10), 2)
    np.testing.assert_array_equal(twice, x)
    np.testing.assert_array_equal(once, x[:, ::-1])


# -- per-strategy semantics -----------------------------------------------------------

def test_scale_multiplier_statistics():
    # One multiplier draw per call; over many calls the multiplier is
    # (sigma * s + 1) with s ~ N(0,1): mean 1, std sigma.
    sigma = 0.5
    cfg = cfg_with(strategy="scale", noise_ratio=1.0, sigma=sigma)
    rng = make_rng(11)
    x = np.ones((1, 1))
    mults = np.array([
        generate_negative(x, "scale", cfg, rng, 1)[0, 0] for _ in range(10_000)])
    assert mults.mean() == pytest.approx(1.0, abs=0.02)
    assert mults.std() == pytest.approx(sigma, abs=0.02)


def test_scale_uses_one_draw_per_matrix():
    cfg = cfg_with(noise_ratio=1.0, sigma=0.5)
    x = np.ones((4, 4))
    out = generate_negative(x, "scale", cfg, make_rng(12), 2)
    assert np.unique(out).size == 1      # same multiplier everywhere


def test_compress_piecewise_means():
    x = np.array([[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]])
    cfg = cfg_with(noise_ratio=1.0, compress_factor=2)
    out = generate_negative(x, "compress", cfg, make_rng(13), 2)
    np.testing.assert_allclose(out[0], [1.5, 1.5, 3.5, 3.5, 5.5, 5.5])


def test_compress_trailing_group_shorter():
    x = np.array([[1.0, 2.0, 3.0, 4.0, 5.0]])
    cfg = cfg_with(noise_ratio=1.0, compress_factor=3)
    out = generate_negative(x, "compress", cfg, make_rng(14), 2)
    np.testing.assert_allclose(out[0], [2.0, 2.0, 2.0, 4.5, 4.5])


def test_hmirror_reflects_about_matrix_mean():
    x = np.array([[0.0, 1.0], [2.0, 3.0]])
    cfg = cfg_with(noise_ratio=1.0)
    out = generate_negative(x, "hmirror", cfg, make_rng(15), 2)
    np.testing.assert_allclose(out, 2.0 * 1.5 - x)


def test_shift_displaces_forward_with_edge_hold():
    x = np.arange(8.0).reshape(2, 4)
    cfg = cfg_with(noise_ratio=1.0, shift_delta=3)
    out = generate_negative(x, "shift", cfg, make_rng(16), 2)
    flat = np.arange(8.0)
    want = flat[np.maximum(np.arange(8) - 3, 0)].reshape(2, 4)
    np.testing.assert_array_equal(out, want)


def test_shift_default_delta_is_base_patch():
    x = np.arange(8.0).reshape(2, 4)
    cfg = cfg_with(noise_ratio=1.0)
    out = generate_negative(x, "shift", cfg, make_rng(17), base_patch=4)
    flat = np.arange(8.0)
    want = flat[np.maximum(np.arange(8) - 4, 0)].reshape(2, 4)
    np.testing.assert_array_equal(out, want)


def test_shift_reads_from_clean_input():
    # Selected points take the value the clean series had delta steps back,
    # even when that source point is itself selected.
    x = np.array([[10.0, 20.0, 30.0, 40.0]])
    cfg = cfg_with(noise_ratio=1.0, shift_delta=1)
    out = generate_negative(x, "shift", cfg, make_rng(18), 2)
    np.testing.assert_array_equal(out, [[10.0, 10.0, 20.0, 30.0]])


def test_noise_additive_with_sigma():
    rng = make_rng(19)
    x = np.zeros((50, 20))
    cfg = cfg_with(noise_ratio=1.0, sigma=0.5)
    out = generate_negative(x, "noise", cfg, rng, 2)
    assert out.std() == pytest.approx(0.5, abs=0.02)
    assert abs(out.mean()) < 0.02


def test_selection_rate_matches_noise_ratio():
    rng = make_rng(20)
    x = np.zeros((40, 25))
    cfg = cfg_with(noise_ratio=0.3, sigma=1.0)
    out = generate_negative(x, "noise", cfg, rng, 2)
    frac = (out != 0.0).mean()
    assert frac == pytest.approx(0.3, abs=0.03)


def test_patch_strategies_select_whole_patches():
    rng = make_rng(21)
    x = rng.standard_normal((30, 6))
    cfg = cfg_with(noise_ratio=0.5)
    out = generate_negative(x, "vmirror", cfg, make_rng(22), 2)
    for i in range(30):
        row_same = np.array_equal(out[i], x[i])
        row_flip = np.array_equal(out[i], x[i, ::-1])
        assert row_same or row_flip


def test_unknown_strategy_rejected():
    with pytest.raises(ConfigError, match="unknown negative strategy"):
        generate_negative(np.ones((2, 2)), "blur", cfg_with(), make_rng(0), 2)


# -- per-window generation ----------------------------------------------------------

def test_generate_negatives_same_strategy_every_scale():
    rng = make_rng(23)
    scales = [rng.standard_normal((8, 2)), rng.standard_normal((4, 4))]
    strategy, out = generate_negatives(scales, cfg_with(), make_rng(24), 2)
    assert strategy in STRATEGIES
    assert len(out) == 2
    assert out[0].shape == (8, 2) and out[1].shape == (4, 4)


def test_generate_negatives_pinned_strategy():
    rng = make_rng(25)
    scales = [rng.standard_normal((4, 2))]
    strategy, _ = generate_negatives(scales, cfg_with(), make_rng(26), 2,
                                     strategy="vmirror")
    assert strategy == "vmirror"


def test_generate_negatives_deterministic():
    rng = make_rng(27)
    scales = [rng.standard_normal((8, 2)), rng.standard_normal((4, 4))]
    s1, out1 = generate_negatives(scales, cfg_with(), make_rng(99), 2)
    s2, out2 = generate_negatives(scales, cfg_with(), make_rng(99), 2)
    assert s1 == s2
    for a, b in zip(out1, out2):
        np.testing.assert_array_equal(a, b)


def test_scale_streams_are_independent():
    # Pollution of scale 0 must not change when scale 1's shape changes.
    rng = make_rng(28)
    first = rng.standard_normal((8, 2))
    small = [first, np.ones((4, 4))]
    large = [first, np.ones((2, 8))]
    _, out_small = generate_negatives(small, cfg_with(), make_rng(7), 2,
                                      strategy="noise")
    _, out_large = generate_negatives(large, cfg_with(), make_rng(7), 2,
                                      strategy="noise")
    np.testing.assert_array_equal(out_small[0], out_large[0])


def test_sample_intensity_is_standard_normal():
    rng = make_rng(29)
    draws = np.array([sample_intensity(rng) for _ in range(10_000)])
    assert draws.mean() == pytest.approx(0.0, abs=0.03)
    assert draws.std() == pytest.approx(1.0, abs=0.03)
