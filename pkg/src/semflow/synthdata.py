"""Synthetic moving-sprite video corpus with fully known generative factors.

Every clip is a single colored sprite moving over a static patterned
background, plus per-pixel texture noise. The six factors (shape, color,
velocity, start position, background, motion pattern) come from finite
vocabularies and play the role of text prompts: conditioning embeddings are
learned per factor value, and the same factors are the ground truth that
evaluation probes try to recover from generated videos.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from semflow.errors import ConfigError
from semflow.numerics import Rng

SHAPES = ("circle", "square", "triangle")
BACKGROUNDS = ("grad_x", "grad_y", "checker", "stripes")
MOTIONS = ("linear", "bounce", "orbit")

# sprite colors and background tints stay inside [0.1, 0.9] so texture noise
# almost never hits the [0,1] clamp and keeps its documented variance
DEFAULT_COLORS = (
    (0.90, 0.20, 0.20),
    (0.20, 0.85, 0.25),
    (0.25, 0.40, 0.90),
    (0.88, 0.88, 0.20),
)
_BG_TINTS = ((1.0, 0.92, 0.85), (0.85, 1.0, 0.92), (0.92, 0.85, 1.0), (1.0, 1.0, 0.88))


@dataclass(frozen=True)
class FactorSpec:
    """One clip's generative factors. Categoricals are vocabulary indices."""

    shape_id: int
    color: int
    velocity: tuple[float, float]  # (vx, vy) pixels/frame
    start_position: tuple[float, float]  # (px, py) pixels
    background_id: int
    motion_pattern: str


@dataclass
class Video:
    frames: np.ndarray  # (F, 3, H, W) float64 in [0, 1]
    fps: float


@dataclass
class CorpusConfig:
    num_clips: int = 64
    F: int = 16
    F_long: int = 128
    H: int = 32
    W: int = 32
    seed: int = 0
    fps: float = 8.0
    texture_noise: float = 0.05
    sprite_radius: float = 4.0
    orbit_radius: float = 6.0
    max_speed: float = 3.0
    shapes: tuple[str, ...] = SHAPES
    colors: tuple[tuple[float, float, float], ...] = DEFAULT_COLORS
    velocities: tuple[tuple[float, float], ...] = ((1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.7, 0.7))
    start_positions: tuple[tuple[float, float], ...] = ()  # filled from H/W when empty
    backgrounds: tuple[str, ...] = BACKGROUNDS
    motion_patterns: tuple[str, ...] = MOTIONS

    def __post_init__(self):
        if not self.start_positions:
            fr = ((0.35, 0.35), (0.65, 0.65), (0.35, 0.65), (0.65, 0.35))
            self.start_positions = tuple(
                (fx * (self.W - 1), fy * (self.H - 1)) for fx, fy in fr
            )

    def validate(self) -> None:
        if self.H < 8 or self.W < 8 or self.F < 2 or self.num_clips < 1:
            raise ConfigError(
                f"corpus dims out of range: H={self.H} W={self.W} F={self.F} "
                f"num_clips={self.num_clips}"
            )
        for name in ("shapes", "colors", "velocities", "start_positions",
                     "backgrounds", "motion_patterns"):
            vocab = getattr(self, name)
            if len(vocab) == 0:
                raise ConfigError(
                    f"factor vocabulary '{name}' is empty: nothing to stratify over"
                )
        for vx, vy in self.velocities:
            if math.hypot(vx, vy) > self.max_speed:
                raise ConfigError(f"velocity ({vx},{vy}) exceeds max_speed {self.max_speed}")
        for bg in self.backgrounds:
            if bg not in BACKGROUNDS:
                raise ConfigError(f"unknown background pattern '{bg}'")
        for m in self.motion_patterns:
            if m not in MOTIONS:
                raise ConfigError(f"unknown motion pattern '{m}'")

    def factor_sizes(self) -> dict[str, int]:
        return {
            "shape_id": len(self.shapes),
            "color": len(self.colors),
            "velocity": len(self.velocities),
            "start_position": len(self.start_positions),
            "background_id": len(self.backgrounds),
            "motion_pattern": len(self.motion_patterns),
        }


def factor_classes(spec: FactorSpec, cfg: CorpusConfig) -> dict[str, int]:
    """Vocabulary index of every factor (classification targets for probes)."""
    try:
        vel = cfg.velocities.index(tuple(spec.velocity))
        start = cfg.start_positions.index(tuple(spec.start_position))
        motion = cfg.motion_patterns.index(spec.motion_pattern)
    except ValueError as e:
        raise ConfigError(f"factor value not in corpus vocabulary: {e}") from e
    return {
        "shape_id": spec.shape_id,
        "color": spec.color,
        "velocity": vel,
        "start_position": start,
        "background_id": spec.background_id,
        "motion_pattern": motion,
    }


# ------------------------------------------------------------- rendering


def background_image(bg_name: str, tint: tuple[float, float, float],
                     h: int, w: int) -> np.ndarray:
    """Static (3, H, W) background in [0.15, 0.45] before tinting."""
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    if bg_name == "grad_x":
        g = 0.15 + 0.30 * xs / max(w - 1, 1)
    elif bg_name == "grad_y":
        g = 0.45 - 0.30 * ys / max(h - 1, 1)
    elif bg_name == "checker":
        cell = max(2, h // 8)
        g = np.where(((ys // cell + xs // cell) % 2) == 0, 0.20, 0.40)
    elif bg_name == "stripes":
        period = max(4, h // 4)
        g = np.where(((ys + xs) % period) < period / 2, 0.20, 0.40)
    else:
        raise ConfigError(f"unknown background pattern '{bg_name}'")
    return g[None, :, :] * np.asarray(tint, dtype=np.float64)[:, None, None]


def sprite_mask(shape_name: str, cx: float, cy: float, r: float,
                h: int, w: int) -> np.ndarray:
    """Soft (H, W) coverage mask, ~1px linear edge falloff."""
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    if shape_name == "circle":
        d = r - np.hypot(xs - cx, ys - cy)
    elif shape_name == "square":
        d = r - np.maximum(np.abs(xs - cx), np.abs(ys - cy))
    elif shape_name == "triangle":
        # apex up at (cx, cy-r), base corners (cx±r, cy+r); signed distance
        # is the min over the three inward half-plane distances
        d_bot = (cy + r) - ys
        nx, ny = 2.0 * r, -r  # left edge normal, points inward
        nn = math.hypot(nx, ny)
        d_left = (nx * (xs - cx) + ny * (ys - (cy - r))) / nn
        d_right = (-nx * (xs - cx) + ny * (ys - (cy - r))) / nn
        d = np.minimum(d_bot, np.minimum(d_left, d_right))
    else:
        raise ConfigError(f"unknown shape '{shape_name}'")
    return np.clip(d + 0.5, 0.0, 1.0)


def trajectory(spec: FactorSpec, cfg: CorpusConfig, frames: int) -> np.ndarray:
    """Per-frame sprite centers, shape (frames, 2) as (px, py).

    linear: straight line, no reflection (may exit the frame).
    bounce: per-frame step with reflection at a sprite-radius inset border.
    orbit: circle of cfg.orbit_radius around start, phase atan2(vy, vx),
    angular rate speed/orbit_radius rad/frame.
    """
    px, py = spec.start_position
    vx, vy = spec.velocity
    if not (0 <= px <= cfg.W - 1 and 0 <= py <= cfg.H - 1):
        raise ConfigError(
            f"start position ({px},{py}) outside frame {cfg.W}x{cfg.H}"
        )
    out = np.empty((frames, 2), dtype=np.float64)
    if spec.motion_pattern == "linear":
        ks = np.arange(frames, dtype=np.float64)
        out[:, 0] = px + vx * ks
        out[:, 1] = py + vy * ks
    elif spec.motion_pattern == "bounce":
        r = cfg.sprite_radius
        lox, hix = r, cfg.W - 1 - r
        loy, hiy = r, cfg.H - 1 - r
        x, y = px, py
        for k in range(frames):
            out[k] = (x, y)
            x += vx
            y += vy
            while x < lox or x > hix:
                if x < lox:
                    x = 2 * lox - x
                else:
                    x = 2 * hix - x
                vx = -vx
            while y < loy or y > hiy:
                if y < loy:
                    y = 2 * loy - y
                else:
                    y = 2 * hiy - y
                vy = -vy
    elif spec.motion_pattern == "orbit":
        speed = math.hypot(vx, vy)
        omega = speed / cfg.orbit_radius
        theta0 = math.atan2(vy, vx)
        ks = np.arange(frames, dtype=np.float64)
        out[:, 0] = px + cfg.orbit_radius * np.cos(theta0 + omega * ks)
        out[:, 1] = py + cfg.orbit_radius * np.sin(theta0 + omega * ks)
    else:
        raise ConfigError(f"unknown motion pattern '{spec.motion_pattern}'")
    return out


def render_clip(spec: FactorSpec, cfg: CorpusConfig, rng: Rng,
                frames: int | None = None) -> Video:
    """Rasterize one clip; texture noise is uniform(-a, a) per pixel/frame."""
    f = cfg.F if frames is None else frames
    if not (0 <= spec.shape_id < len(cfg.shapes)):
        raise ConfigError(f"shape_id {spec.shape_id} outside vocabulary")
    if not (0 <= spec.color < len(cfg.colors)):
        raise ConfigError(f"color {spec.color} outside vocabulary")
    if not (0 <= spec.background_id < len(cfg.backgrounds)):
        raise ConfigError(f"background_id {spec.background_id} outside vocabulary")
    centers = trajectory(spec, cfg, f)
    bg = background_image(
        cfg.backgrounds[spec.background_id],
        _BG_TINTS[spec.background_id % len(_BG_TINTS)],
        cfg.H, cfg.W,
    )
    color = np.asarray(cfg.colors[spec.color], dtype=np.float64)[:, None, None]
    shape_name = cfg.shapes[spec.shape_id]
    out = np.empty((f, 3, cfg.H, cfg.W), dtype=np.float64)
    for k in range(f):
        m = sprite_mask(shape_name, centers[k, 0], centers[k, 1],
                        cfg.sprite_radius, cfg.H, cfg.W)[None]
        out[k] = bg * (1.0 - m) + color * m
    if cfg.texture_noise > 0:
        out += rng.uniform(out.shape, -cfg.texture_noise, cfg.texture_noise)
    np.clip(out, 0.0, 1.0, out=out)
    return Video(frames=out, fps=cfg.fps)


# ------------------------------------------------------------- corpus


def _stratified_indices(n: int, size: int, rng: Rng) -> np.ndarray:
    """n draws covering range(size): concatenated independent permutations."""
    blocks = [rng.derive("perm", b).permutation(size) for b in range(-(-n // size))]
    return np.concatenate(blocks)[:n]


def make_corpus(cfg: CorpusConfig, long: bool = False) -> list[tuple[FactorSpec, Video]]:
    """Render num_clips clips with stratified factor assignment.

    Each factor cycles through seed-shuffled permutation blocks of its
    vocabulary, so every entry appears at least once every `len(vocab)`
    clips and factors stay decorrelated from each other.
    """
    cfg.validate()
    frames = cfg.F_long if long else cfg.F
    base = Rng(cfg.seed).derive("corpus", "long" if long else "short")
    assign = {
        name: _stratified_indices(cfg.num_clips, size, base.derive(name))
        for name, size in cfg.factor_sizes().items()
    }
    corpus = []
    for i in range(cfg.num_clips):
        spec = FactorSpec(
            shape_id=int(assign["shape_id"][i]),
            color=int(assign["color"][i]),
            velocity=tuple(cfg.velocities[assign["velocity"][i]]),
            start_position=tuple(cfg.start_positions[assign["start_position"][i]]),
            background_id=int(assign["background_id"][i]),
            motion_pattern=cfg.motion_patterns[assign["motion_pattern"][i]],
        )
        corpus.append((spec, render_clip(spec, cfg, base.derive("clip", i), frames)))
    return corpus


def subsample_frames(v: Video, target_fps: float) -> Video:
    """Uniform temporal stride round(fps/target_fps), first frame kept."""
    if target_fps <= 0 or target_fps > v.fps:
        raise ConfigError(
            f"target fps {target_fps} not in (0, {v.fps}]: stride would be < 1"
        )
    stride = int(round(v.fps / target_fps))
    if stride < 1:
        raise ConfigError(f"subsample stride {stride} < 1")
    return Video(frames=v.frames[::stride].copy(), fps=v.fps / stride)


# ------------------------------------------------------------- persistence

_CSV_FIELDS = ("idx", "shape_id", "color", "vel_x", "vel_y", "start_x",
               "start_y", "background_id", "motion_pattern")


def save_corpus(path: str, cfg: CorpusConfig, corpus: list[tuple[FactorSpec, Video]]) -> None:
    os.makedirs(path, exist_ok=True)
    header = {
        "config": dataclasses.asdict(cfg),
        "num_clips": len(corpus),
        "frames": int(corpus[0][1].frames.shape[0]),
        "fps": corpus[0][1].fps,
    }
    with open(os.path.join(path, "header.json"), "w") as fh:
        json.dump(header, fh, indent=1, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(path, "factors.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CSV_FIELDS)
        for i, (spec, _) in enumerate(corpus):
            writer.writerow([
                i, spec.shape_id, spec.color,
                repr(spec.velocity[0]), repr(spec.velocity[1]),
                repr(spec.start_position[0]), repr(spec.start_position[1]),
                spec.background_id, spec.motion_pattern,
            ])
    for i, (_, video) in enumerate(corpus):
        blob = video.frames.astype("<f4").tobytes()
        with open(os.path.join(path, f"clip_{i}.bin"), "wb") as fh:
            fh.write(blob)


def _config_from_header(raw: dict) -> CorpusConfig:
    raw = dict(raw)
    for key in ("colors", "velocities", "start_positions"):
        raw[key] = tuple(tuple(x) for x in raw[key])
    for key in ("shapes", "backgrounds", "motion_patterns"):
        raw[key] = tuple(raw[key])
    return CorpusConfig(**raw)


def load_corpus_config(path: str) -> CorpusConfig:
    """Just the config, without touching the clip blobs."""
    with open(os.path.join(path, "header.json")) as fh:
        return _config_from_header(json.load(fh)["config"])


def load_corpus(path: str) -> tuple[CorpusConfig, list[tuple[FactorSpec, Video]]]:
    with open(os.path.join(path, "header.json")) as fh:
        header = json.load(fh)
    cfg = _config_from_header(header["config"])
    frames = header["frames"]
    corpus = []
    with open(os.path.join(path, "factors.csv"), newline="") as fh:
        rows = list(csv.DictReader(fh))
    if len(rows) != header["num_clips"]:
        raise ConfigError(
            f"corpus at {path}: factors.csv has {len(rows)} rows, "
            f"header says {header['num_clips']}"
        )
    for row in rows:
        spec = FactorSpec(
            shape_id=int(row["shape_id"]),
            color=int(row["color"]),
            velocity=(float(row["vel_x"]), float(row["vel_y"])),
            start_position=(float(row["start_x"]), float(row["start_y"])),
            background_id=int(row["background_id"]),
            motion_pattern=row["motion_pattern"],
        )
        blob = np.fromfile(os.path.join(path, f"clip_{row['idx']}.bin"), dtype="<f4")
        vid = Video(
            frames=blob.astype(np.float64).reshape(frames, 3, cfg.H, cfg.W),
            fps=header["fps"],
        )
        corpus.append((spec, vid))
    return cfg, corpus


def corpus_digest(path: str) -> str:
    """sha256 over header, factor table, and every clip blob, in index order."""
    h = hashlib.sha256()
    for name in ("header.json", "factors.csv"):
        with open(os.path.join(path, name), "rb") as fh:
            h.update(fh.read())
    i = 0
    while os.path.exists(os.path.join(path, f"clip_{i}.bin")):
        with open(os.path.join(path, f"clip_{i}.bin"), "rb") as fh:
            h.update(fh.read())
        i += 1
    return h.hexdigest()
