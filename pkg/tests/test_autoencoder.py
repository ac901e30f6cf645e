"""Autoencoder: patch geometry, stochastic encoding, training contract."""

import numpy as np
import pytest

from semflow.autoencoder import (
    AeConfig,
    AeParams,
    LatentGrid,
    ae_decode,
    ae_encode,
    patchify3d,
    psnr,
    train_autoencoder,
    unpatchify3d,
)
from semflow.errors import ConfigError, DimensionError
from semflow.numerics import Rng
from semflow.synthdata import CorpusConfig, Video, make_corpus

MINI = CorpusConfig(num_clips=48, F=16, H=16, W=16, seed=0)


def small_video(seed=0, f=4, h=8, w=8):
    rng = Rng(seed)
    return Video(frames=rng.uniform((f, 3, h, w)), fps=8.0)


def test_patchify_roundtrip():
    cfg = AeConfig()
    v = small_video()
    rows, grid = patchify3d(v.frames, cfg)
    assert grid == (2, 2, 2)
    assert rows.shape == (8, cfg.patch_dim)
    back = unpatchify3d(rows, grid, cfg)
    np.testing.assert_array_equal(back, v.frames)


def test_patchify_raster_order():
    # row index t*H_z*W_z + i*W_z + j; check token (1, 0, 1) content
    cfg = AeConfig()
    v = small_video()
    rows, grid = patchify3d(v.frames, cfg)
    patch = v.frames[2:4, :, 0:4, 4:8]  # frames 2..3, rows 0..3, cols 4..7
    np.testing.assert_array_equal(
        rows[1 * 4 + 0 * 2 + 1], patch.transpose(0, 1, 2, 3).reshape(-1)
    )


def test_patchify_rejects_indivisible():
    cfg = AeConfig()
    with pytest.raises(ConfigError):
        patchify3d(np.zeros((5, 3, 8, 8)), cfg)
    with pytest.raises(ConfigError):
        patchify3d(np.zeros((4, 3, 6, 8)), cfg)
    with pytest.raises(DimensionError):
        patchify3d(np.zeros((4, 1, 8, 8)), cfg)


def test_compression_ratio_value():
    # f_t * f_s^2 * 3 pixel scalars map to c_z latent scalars
    cfg = AeConfig(f_t=2, f_s=4, c_z=8)
    assert cfg.compression_ratio() == 12.0
    v = small_video()
    z = ae_encode(v, AeParams(cfg, Rng(0)))
    assert v.frames.size / (z.tokens.size) == cfg.compression_ratio()


def test_zero_weights_give_zero_grid():
    cfg = AeConfig()
    ae = AeParams(cfg, Rng(0))
    for name, t in ae.params.items():
        t.data = np.zeros_like(t.data)
    z = ae_encode(small_video(), ae)
    np.testing.assert_array_equal(z.tokens, 0.0)


def test_zero_grid_decodes_to_mid_gray():
    cfg = AeConfig()
    ae = AeParams(cfg, Rng(0))
    for name, t in ae.params.items():
        if not name.startswith("dec.head.b"):
            t.data = np.zeros_like(t.data)
    z = LatentGrid(tokens=np.zeros((2, 2, 2, cfg.c_z)), f_t=2, f_s=4, fps=8.0)
    v = ae_decode(z, ae)
    np.testing.assert_allclose(v.frames, 0.5)
    assert v.fps == 8.0


def test_encode_deterministic_without_sampling():
    ae = AeParams(AeConfig(), Rng(3))
    v = small_video(7)
    a = ae_encode(v, ae).tokens
    b = ae_encode(v, ae).tokens
    np.testing.assert_array_equal(a, b)


def test_sampling_needs_rng():
    ae = AeParams(AeConfig(), Rng(3))
    with pytest.raises(ConfigError):
        ae_encode(small_video(), ae, sample=True)


def test_sampled_encoding_matches_logvar():
    # empirical std of sampled tokens ~ exp(logvar/2) within 5% at 10^4 draws
    from semflow.autoencoder import encode_rows

    ae = AeParams(AeConfig(), Rng(5))
    v = small_video(2)
    mean = ae_encode(v, ae).tokens.reshape(-1)
    rows, _ = patchify3d(v.frames, ae.cfg)
    _, logvar = encode_rows(rows, ae)
    sig = np.exp(0.5 * logvar.data).reshape(-1)

    rng = Rng(11)
    draws = np.stack(
        [ae_encode(v, ae, rng=rng, sample=True).tokens.reshape(-1) for _ in range(10_000)]
    )
    np.testing.assert_allclose(draws.mean(axis=0), mean, atol=5e-2 * sig.max())
    np.testing.assert_allclose(draws.std(axis=0), sig, rtol=5e-2)


def test_decode_rejects_mismatched_grid():
    ae = AeParams(AeConfig(), Rng(0))
    z = LatentGrid(tokens=np.zeros((2, 2, 2, 5)), f_t=2, f_s=4, fps=8.0)
    with pytest.raises(DimensionError):
        ae_decode(z, ae)
    z = LatentGrid(tokens=np.zeros((2, 2, 2, 8)), f_t=4, f_s=4, fps=8.0)
    with pytest.raises(DimensionError):
        ae_decode(z, ae)


def test_decode_output_in_unit_range():
    ae = AeParams(AeConfig(), Rng(9))
    z = LatentGrid(tokens=Rng(4).normal((2, 2, 2, 8), std=20.0), f_t=2, f_s=4, fps=8.0)
    v = ae_decode(z, ae)
    assert v.frames.min() >= 0.0 and v.frames.max() <= 1.0


def test_overfit_single_clip():
    cfg = AeConfig(hidden=64, steps=1800, batch=1, lr=3e-3, beta=0.0, seed=1)
    corpus = make_corpus(CorpusConfig(num_clips=1, F=8, H=16, W=16, seed=4))
    ae, curve = train_autoencoder(corpus, cfg)
    v = corpus[0][1]
    rec = ae_decode(ae_encode(v, ae), ae)
    assert float(np.mean((rec.frames - v.frames) ** 2)) < 1e-3


def test_beta_zero_loss_equals_recon():
    cfg = AeConfig(hidden=32, steps=5, batch=2, beta=0.0)
    corpus = make_corpus(CorpusConfig(num_clips=4, F=8, H=16, W=16, seed=2))
    _, curve = train_autoencoder(corpus, cfg)
    for step, loss, recon, kl in curve:
        assert loss == recon
        assert kl == 0.0


def test_training_reduces_loss_monotone_smoothed():
    cfg = AeConfig(hidden=64, steps=600, batch=4, seed=0)
    ae, curve = train_autoencoder(make_corpus(MINI), cfg)
    losses = np.array([c[1] for c in curve])
    w = 50
    smoothed = np.convolve(losses, np.ones(w) / w, mode="valid")
    # smoothed curve close to monotone: tail well below head, no large bumps
    assert smoothed[-1] < 0.25 * smoothed[0]
    assert np.all(smoothed[1:] <= smoothed[:-1] + 2e-3)


def test_frozen_after_training():
    cfg = AeConfig(hidden=32, steps=3, batch=2)
    ae, _ = train_autoencoder(make_corpus(CorpusConfig(num_clips=4, F=8, H=16, W=16)), cfg)
    assert ae.frozen
    assert not any(t.requires_grad for t in ae.params.values())


def test_train_determinism():
    cfg = AeConfig(hidden=32, steps=40, batch=2, seed=7)
    corpus = make_corpus(CorpusConfig(num_clips=8, F=8, H=16, W=16, seed=1))
    a, ca = train_autoencoder(corpus, cfg)
    b, cb = train_autoencoder(corpus, cfg)
    assert ca == cb
    for k in a.params:
        np.testing.assert_array_equal(a.params[k].data, b.params[k].data)


def test_empty_corpus_rejected():
    with pytest.raises(ConfigError):
        train_autoencoder([], AeConfig())


@pytest.fixture(scope="module")
def trained_ae():
    cfg = AeConfig(steps=3000, batch=4, lr=2e-3, seed=0)
    corpus = make_corpus(MINI)
    ae, curve = train_autoencoder(corpus, cfg)
    return ae, corpus, curve


def test_roundtrip_psnr(trained_ae):
    ae, corpus, _ = trained_ae
    vals = []
    for _, v in corpus[:16]:
        rec = ae_decode(ae_encode(v, ae), ae)
        vals.append(psnr(rec.frames, v.frames))
    assert float(np.mean(vals)) >= 25.0


def test_noise_floor_bounds_psnr(trained_ae):
    # corpus pixels carry fresh uniform texture noise the mean encoding
    # cannot represent; its variance alone caps reconstruction quality
    ae, corpus, _ = trained_ae
    a = MINI.texture_noise
    floor_mse = a * a / 3.0  # var of U(-a, a)
    ceiling = -10.0 * np.log10(floor_mse)
    vals = [
        psnr(ae_decode(ae_encode(v, ae), ae).frames, v.frames) for _, v in corpus[:16]
    ]
    assert float(np.mean(vals)) <= ceiling


def test_psnr_helper():
    a = np.zeros((4, 4))
    assert psnr(a, a) == float("inf")
    b = np.full((4, 4), 0.1)
    assert abs(psnr(a, b) - 20.0) < 1e-9
