"""Sprite corpus checks: kinematics oracles, stratification, persistence."""

import math

import numpy as np
import pytest

from semflow.errors import ConfigError
from semflow.numerics import Rng
from semflow.synthdata import (
    CorpusConfig,
    FactorSpec,
    Video,
    background_image,
    corpus_digest,
    factor_classes,
    load_corpus,
    make_corpus,
    render_clip,
    save_corpus,
    subsample_frames,
    trajectory,
)


def spec(**kw):
    base = dict(
        shape_id=0, color=0, velocity=(1.0, 0.0), start_position=(10.0, 10.0),
        background_id=0, motion_pattern="linear",
    )
    base.update(kw)
    return FactorSpec(**base)


def centroid(frame, bg):
    """Intensity-weighted sprite center from |frame - background|."""
    w = np.abs(frame - bg).sum(axis=0)
    ys, xs = np.mgrid[0 : w.shape[0], 0 : w.shape[1]]
    tot = w.sum()
    return (xs * w).sum() / tot, (ys * w).sum() / tot


# ------------------------------------------------------------- trajectories


def test_static_sprite_frames_identical_noise_free():
    cfg = CorpusConfig(texture_noise=0.0)
    v = render_clip(spec(velocity=(0.0, 0.0)), cfg, Rng(0))
    for k in range(1, cfg.F):
        np.testing.assert_array_equal(v.frames[k], v.frames[0])


def test_static_sprite_frames_close_with_noise():
    cfg = CorpusConfig(texture_noise=0.05)
    v = render_clip(spec(velocity=(0.0, 0.0)), cfg, Rng(0))
    assert np.abs(v.frames[3] - v.frames[0]).max() <= 0.1 + 1e-12


def test_linear_kinematics_center_sequence():
    cfg = CorpusConfig(texture_noise=0.0)
    s = spec(velocity=(1.0, 0.0), start_position=(2.0, 16.0))
    tr = trajectory(s, cfg, 16)
    np.testing.assert_allclose(tr[:, 0], np.arange(2.0, 18.0), atol=1e-15)
    np.testing.assert_allclose(tr[:, 1], 16.0, atol=1e-15)
    # rendered sprite centroid follows, where the sprite is fully in frame
    v = render_clip(s, cfg, Rng(1))
    bg = background_image("grad_x", (1.0, 0.92, 0.85), cfg.H, cfg.W)
    for k in range(5, 12):
        cx, cy = centroid(v.frames[k], bg)
        assert abs(cx - tr[k, 0]) < 0.5 and abs(cy - tr[k, 1]) < 0.5


def test_bounce_matches_scalar_simulation():
    cfg = CorpusConfig(texture_noise=0.0)
    h = cfg.H
    s = spec(motion_pattern="bounce", velocity=(2.0, 0.0),
             start_position=(float(h - 2), 16.0))
    tr = trajectory(s, cfg, 24)

    # independent per-frame scalar simulation with radius-inset reflection
    r = cfg.sprite_radius
    lo, hi = r, cfg.W - 1 - r
    x, vx = float(h - 2), 2.0
    for k in range(24):
        assert abs(tr[k, 0] - x) <= 1e-12, f"frame {k}"
        assert abs(tr[k, 1] - 16.0) <= 1e-12
        x += vx
        while x < lo or x > hi:
            if x < lo:
                x = 2 * lo - x
            else:
                x = 2 * hi - x
            vx = -vx


def test_orbit_constant_angular_velocity():
    cfg = CorpusConfig(texture_noise=0.0)
    s = spec(motion_pattern="orbit", velocity=(1.0, 0.0), start_position=(16.0, 16.0))
    tr = trajectory(s, cfg, 12)
    rel = tr - np.array([16.0, 16.0])
    radii = np.hypot(rel[:, 0], rel[:, 1])
    np.testing.assert_allclose(radii, cfg.orbit_radius, atol=1e-12)
    angles = np.unwrap(np.arctan2(rel[:, 1], rel[:, 0]))
    steps = np.diff(angles)
    np.testing.assert_allclose(steps, 1.0 / cfg.orbit_radius, atol=1e-12)


def test_start_outside_frame_rejected():
    cfg = CorpusConfig()
    with pytest.raises(ConfigError, match="outside frame"):
        trajectory(spec(start_position=(40.0, 10.0)), cfg, 4)


def test_velocity_recoverable_by_least_squares():
    cfg = CorpusConfig(texture_noise=0.0)
    s = spec(velocity=(0.7, 0.7), start_position=(10.0, 10.0))
    v = render_clip(s, cfg, Rng(2))
    bg = background_image("grad_x", (1.0, 0.92, 0.85), cfg.H, cfg.W)
    pts = np.array([centroid(v.frames[k], bg) for k in range(cfg.F)])
    ks = np.arange(cfg.F)
    vx = np.polyfit(ks, pts[:, 0], 1)[0]
    vy = np.polyfit(ks, pts[:, 1], 1)[0]
    assert abs(vx - 0.7) < 0.1 and abs(vy - 0.7) < 0.1


def test_texture_noise_floor():
    # two renders of one spec differ only in noise; MSE ~= 2 * var(uniform)
    cfg = CorpusConfig(texture_noise=0.05)
    s = spec(velocity=(0.0, 1.0))
    a = render_clip(s, cfg, Rng(10)).frames
    b = render_clip(s, cfg, Rng(11)).frames
    var = 0.1**2 / 12
    mse = ((a - b) ** 2).mean()
    assert abs(mse - 2 * var) < 0.2 * 2 * var


# ------------------------------------------------------------- corpus


def test_single_clip_corpus():
    cfg = CorpusConfig(num_clips=1, seed=5)
    corpus = make_corpus(cfg)
    assert len(corpus) == 1
    again = make_corpus(cfg)
    np.testing.assert_array_equal(corpus[0][1].frames, again[0][1].frames)
    assert corpus[0][0] == again[0][0]


def test_corpus_byte_identical(tmp_path):
    cfg = CorpusConfig(num_clips=6, seed=3)
    d1, d2 = tmp_path / "a", tmp_path / "b"
    save_corpus(str(d1), cfg, make_corpus(cfg))
    save_corpus(str(d2), cfg, make_corpus(cfg))
    assert corpus_digest(str(d1)) == corpus_digest(str(d2))


def test_stratification_covers_every_category():
    cfg = CorpusConfig(num_clips=256, seed=1, H=16, W=16, F=2, sprite_radius=2.0,
                       orbit_radius=3.0)
    corpus = make_corpus(cfg)
    counts = {name: np.zeros(size, dtype=int) for name, size in cfg.factor_sizes().items()}
    for s, _ in corpus:
        for name, idx in factor_classes(s, cfg).items():
            counts[name][idx] += 1
    for name, c in counts.items():
        assert (c >= 1).all(), f"factor {name} has unseen categories: {c}"


def test_empty_vocab_rejected():
    cfg = CorpusConfig(shapes=())
    with pytest.raises(ConfigError, match="empty"):
        make_corpus(cfg)


def test_long_mode_renders_f_long():
    cfg = CorpusConfig(num_clips=2, F=4, F_long=12, seed=9)
    corpus = make_corpus(cfg, long=True)
    assert corpus[0][1].frames.shape[0] == 12


# ------------------------------------------------------------- subsampling


def test_subsample_identity():
    v = Video(frames=Rng(0).uniform((8, 3, 4, 4)), fps=8.0)
    out = subsample_frames(v, 8.0)
    np.testing.assert_array_equal(out.frames, v.frames)


def test_subsample_stride_four():
    v = Video(frames=np.arange(16, dtype=np.float64)[:, None, None, None]
              * np.ones((16, 3, 4, 4)), fps=8.0)
    out = subsample_frames(v, 2.0)
    assert out.frames.shape[0] == 4
    np.testing.assert_array_equal(out.frames[:, 0, 0, 0], [0.0, 4.0, 8.0, 12.0])


def test_subsample_paper_rates():
    v = Video(frames=np.zeros((240, 3, 2, 2)), fps=24.0)
    out = subsample_frames(v, 1.6)
    assert out.frames.shape[0] == 16  # stride round(24/1.6) = 15


def test_subsample_target_above_fps_rejected():
    v = Video(frames=np.zeros((4, 3, 2, 2)), fps=8.0)
    with pytest.raises(ConfigError):
        subsample_frames(v, 20.0)


# ------------------------------------------------------------- persistence


def test_save_load_roundtrip(tmp_path):
    cfg = CorpusConfig(num_clips=4, seed=7, H=16, W=16, F=6, sprite_radius=2.0,
                       orbit_radius=3.0,
                       velocities=((0.5, 0.0), (0.0, 0.5)),
                       start_positions=((5.0, 5.0), (10.0, 10.0)))
    corpus = make_corpus(cfg)
    save_corpus(str(tmp_path / "c"), cfg, corpus)
    cfg2, corpus2 = load_corpus(str(tmp_path / "c"))
    assert cfg2 == cfg
    assert len(corpus2) == len(corpus)
    for (s1, v1), (s2, v2) in zip(corpus, corpus2):
        assert s1 == s2
        np.testing.assert_array_equal(
            v1.frames.astype("<f4").astype(np.float64), v2.frames
        )
        assert v1.fps == v2.fps
