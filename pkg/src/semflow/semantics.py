"""Compact semantic representations of clips.

Two pieces: a small frozen encoder that maps a low-fps view of a clip to a
grid of d-dimensional tokens (pretrained once on ground-truth factor
prediction, then frozen), and a learnable per-token MLP compressor that maps
d -> (mean, logvar) over d_c channels with a diagonal-Gaussian KL pull
toward N(0, I). The compressed grid is what the generators condition on;
it is 1/16th the token count of the latent grid under the default geometry
(temporal stride 4 at patch 8 vs latent stride 2 at patch 4).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from semflow.checkpoint import (
    canonicalize,
    load_checkpoint,
    load_into_params,
    save_checkpoint,
)
from semflow.errors import ConfigError, DimensionError, NumericError, TrainingDivergedError
from semflow.numerics import (
    Adam,
    Rng,
    Tensor,
    cross_entropy,
    gelu,
    matmul,
    mse,
    rms_norm,
    softmax_attention,
)
from semflow.synthdata import CorpusConfig, FactorSpec, Video, factor_classes, subsample_frames

CATEGORICAL_FACTORS = ("shape_id", "color", "background_id", "motion_pattern")


@dataclass
class SemanticConfig:
    d: int = 64  # raw token width out of the trunk
    d_c: int = 16  # compressed width (d_c = d is the no-op control)
    p_s: int = 8  # spatial patch, semantic side
    fps_ratio: int = 4  # clip fps / semantic fps
    n_blocks: int = 2
    n_heads: int = 4
    mlp_ratio: int = 2
    compressor_hidden: int = 64
    logvar_clamp: float = 10.0
    pos_extents: tuple[int, int, int] = (16, 8, 8)  # (t, h, w) table caps
    encoder_id: str = "factor-trunk-v1"

    def validate(self) -> None:
        if self.d % self.n_heads != 0:
            raise ConfigError(f"d {self.d} not divisible by n_heads {self.n_heads}")
        if not (0 < self.d_c <= self.d):
            raise ConfigError(
                f"compressed width d_c={self.d_c} must lie in (0, d={self.d}]"
            )
        if self.fps_ratio < 1 or self.p_s < 1:
            raise ConfigError(
                f"fps_ratio {self.fps_ratio} and p_s {self.p_s} must be >= 1"
            )


@dataclass
class RawSemanticGrid:
    tokens: np.ndarray  # (T_s', H_s, W_s, d)
    encoder_id: str
    f_s: int  # frame count the encoder saw

    @property
    def d(self) -> int:
        return self.tokens.shape[-1]

    @property
    def n_tokens(self) -> int:
        t, h, w, _ = self.tokens.shape
        return t * h * w


@dataclass
class SemanticGrid:
    tokens: np.ndarray  # (T_s', H_s, W_s, d_c)
    sampled: bool

    @property
    def n_tokens(self) -> int:
        t, h, w, _ = self.tokens.shape
        return t * h * w


def check_token_ratio(n_latent: int, n_semantic: int, ratio: int = 16) -> None:
    """Compression floor: semantic grid may not exceed 1/ratio of the latents."""
    if n_semantic * ratio > n_latent:
        raise ConfigError(
            f"{n_semantic} semantic tokens exceed {n_latent} latent tokens / {ratio}"
        )


# ------------------------------------------------------------ encoder trunk


class SemanticEncoderParams:
    """Trunk + factor heads. Generation stages read only the trunk; the heads
    exist for pretraining and double as the frozen factor probe."""

    def __init__(self, cfg: SemanticConfig, sizes: dict[str, int], rng: Rng):
        cfg.validate()
        self.cfg = cfg
        self.head_sizes = dict(sizes)
        d = cfg.d
        in_dim = 2 * 3 * cfg.p_s * cfg.p_s
        sq = 1 / math.sqrt(d)
        p: dict[str, Tensor] = {
            "embed.w": Tensor(rng.normal((in_dim, d), std=1 / math.sqrt(in_dim)),
                              requires_grad=True),
            "embed.b": Tensor(np.zeros(d), requires_grad=True),
        }
        for ax, n in zip("thw", cfg.pos_extents):
            p[f"pos.{ax}"] = Tensor(rng.normal((n, d), std=0.02), requires_grad=True)
        for i in range(cfg.n_blocks):
            for nm in ("q", "k", "v", "o"):
                p[f"blk{i}.attn.w{nm}"] = Tensor(rng.normal((d, d), std=sq),
                                                 requires_grad=True)
                p[f"blk{i}.attn.b{nm}"] = Tensor(np.zeros(d), requires_grad=True)
            hid = cfg.mlp_ratio * d
            p[f"blk{i}.mlp.w1"] = Tensor(rng.normal((d, hid), std=sq), requires_grad=True)
            p[f"blk{i}.mlp.b1"] = Tensor(np.zeros(hid), requires_grad=True)
            p[f"blk{i}.mlp.w2"] = Tensor(rng.normal((hid, d), std=1 / math.sqrt(hid)),
                                         requires_grad=True)
            p[f"blk{i}.mlp.b2"] = Tensor(np.zeros(d), requires_grad=True)
            p[f"blk{i}.n1.gain"] = Tensor(np.ones(d), requires_grad=True)
            p[f"blk{i}.n2.gain"] = Tensor(np.ones(d), requires_grad=True)
        p["out.gain"] = Tensor(np.ones(d), requires_grad=True)
        for name in CATEGORICAL_FACTORS:
            p[f"head.{name}.w"] = Tensor(rng.normal((d, sizes[name]), std=sq),
                                         requires_grad=True)
            p[f"head.{name}.b"] = Tensor(np.zeros(sizes[name]), requires_grad=True)
        for name in ("velocity", "start_position"):
            p[f"head.{name}.w"] = Tensor(rng.normal((d, 2), std=sq), requires_grad=True)
            p[f"head.{name}.b"] = Tensor(np.zeros(2), requires_grad=True)
        self.params = p

    def freeze(self) -> None:
        for t in self.params.values():
            t.requires_grad = False

    def trunk_keys(self) -> list[str]:
        return [k for k in self.params if not k.startswith("head.")]


def _patchify(frames: np.ndarray, p_s: int) -> tuple[np.ndarray, tuple[int, int, int]]:
    """(F_s, 3, H, W) -> ((n, 2*3*p_s^2) rows in t-major raster order, grid shape)."""
    f_s, c, h, w = frames.shape
    if f_s % 2 != 0:
        raise ConfigError(f"semantic encoder needs an even frame count, got {f_s}")
    if h % p_s != 0 or w % p_s != 0:
        raise ConfigError(f"frame size {h}x{w} not divisible by semantic patch {p_s}")
    t2, hs, ws = f_s // 2, h // p_s, w // p_s
    x = frames.reshape(t2, 2, c, hs, p_s, ws, p_s)
    x = x.transpose(0, 3, 5, 1, 2, 4, 6)
    return x.reshape(t2 * hs * ws, 2 * c * p_s * p_s) - 0.5, (t2, hs, ws)


def _grid_pos(shape: tuple[int, int, int]) -> np.ndarray:
    t, h, w = shape
    idx = np.arange(t * h * w)
    return np.stack([idx // (h * w), (idx // w) % h, idx % w], axis=1)


def _trunk_forward(enc: SemanticEncoderParams, x, grid_shape) -> Tensor:
    """x: (B, n, in_dim) -> (B, n, d) tokens after the final norm."""
    p, cfg = enc.params, enc.cfg
    pos = _grid_pos(grid_shape)
    for ax, cap in zip("thw", cfg.pos_extents):
        axis = "thw".index(ax)
        if pos[:, axis].max() >= cap:
            raise ConfigError(
                f"semantic grid extent {grid_shape} exceeds pos table caps {cfg.pos_extents}"
            )
    h = matmul(x, p["embed.w"]) + p["embed.b"]
    h = h + p["pos.t"][pos[:, 0]] + p["pos.h"][pos[:, 1]] + p["pos.w"][pos[:, 2]]
    n = pos.shape[0]
    full = np.ones((n, n), dtype=bool)
    nh = cfg.n_heads
    dh = cfg.d // nh
    for i in range(cfg.n_blocks):
        a = rms_norm(h, p[f"blk{i}.n1.gain"])
        b = h.shape[0]
        q = (matmul(a, p[f"blk{i}.attn.wq"]) + p[f"blk{i}.attn.bq"]) \
            .reshape(b, n, nh, dh).transpose(0, 2, 1, 3)
        k = (matmul(a, p[f"blk{i}.attn.wk"]) + p[f"blk{i}.attn.bk"]) \
            .reshape(b, n, nh, dh).transpose(0, 2, 1, 3)
        v = (matmul(a, p[f"blk{i}.attn.wv"]) + p[f"blk{i}.attn.bv"]) \
            .reshape(b, n, nh, dh).transpose(0, 2, 1, 3)
        o = softmax_attention(q, k, v, full).transpose(0, 2, 1, 3).reshape(b, n, cfg.d)
        h = h + matmul(o, p[f"blk{i}.attn.wo"]) + p[f"blk{i}.attn.bo"]
        m = rms_norm(h, p[f"blk{i}.n2.gain"])
        m = gelu(matmul(m, p[f"blk{i}.mlp.w1"]) + p[f"blk{i}.mlp.b1"])
        h = h + matmul(m, p[f"blk{i}.mlp.w2"]) + p[f"blk{i}.mlp.b2"]
    return rms_norm(h, p["out.gain"])


def subsample_for_semantics(v: Video, cfg: SemanticConfig) -> Video:
    return subsample_frames(v, v.fps / cfg.fps_ratio)


def sem_encode(v: Video, enc: SemanticEncoderParams, cfg: SemanticConfig) -> RawSemanticGrid:
    """Encode an already-subsampled clip into a (T_s', H_s, W_s, d) grid.

    Deterministic given params. Odd frame counts and patch-indivisible frames
    are configuration errors.
    """
    rows, shape = _patchify(v.frames, cfg.p_s)
    tokens = _trunk_forward(enc, rows[None], shape).data[0]
    return RawSemanticGrid(tokens=tokens.reshape(*shape, cfg.d),
                           encoder_id=cfg.encoder_id, f_s=v.frames.shape[0])


def _head_logits(enc: SemanticEncoderParams, pooled: Tensor, name: str) -> Tensor:
    p = enc.params
    return matmul(pooled, p[f"head.{name}.w"]) + p[f"head.{name}.b"]


def predict_factors(enc: SemanticEncoderParams, cfg: SemanticConfig,
                    videos: list[Video]) -> dict[str, np.ndarray]:
    """Frozen factor probe: class indices for categoricals, px/frame velocity,
    and [0,1]-normalized start position, one row per clip."""
    rows = []
    shape = None
    for v in videos:
        r, shape = _patchify(subsample_for_semantics(v, cfg).frames, cfg.p_s)
        rows.append(r)
    pooled = _trunk_forward(enc, np.stack(rows), shape).mean(axis=1)
    out: dict[str, np.ndarray] = {}
    for name in CATEGORICAL_FACTORS:
        out[name] = _head_logits(enc, pooled, name).data.argmax(axis=-1)
    out["velocity"] = _head_logits(enc, pooled, "velocity").data
    out["start_position"] = _head_logits(enc, pooled, "start_position").data
    return out


@dataclass
class PretrainConfig:
    steps: int = 5000
    batch: int = 16
    lr: float = 3e-3
    seed: int = 0
    holdout_fraction: float = 0.2
    # fresh per-step input noise at the corpus texture amplitude; rows are
    # linear in pixels, so this emulates re-rendering with new texture draws
    augment_noise: bool = True
    # pull token grids of two noise views of the same clip together
    consistency_weight: float = 35.0
    sem: SemanticConfig = field(default_factory=SemanticConfig)


def _factor_targets(specs: list[FactorSpec], ccfg: CorpusConfig) -> dict[str, np.ndarray]:
    classes = [factor_classes(s, ccfg) for s in specs]
    t: dict[str, np.ndarray] = {
        name: np.array([c[name] for c in classes]) for name in CATEGORICAL_FACTORS
    }
    t["velocity"] = np.array([s.velocity for s in specs])
    t["start_position"] = np.array(
        [(s.start_position[0] / (ccfg.W - 1), s.start_position[1] / (ccfg.H - 1))
         for s in specs]
    )
    return t


def pretrain_semantic_encoder(
    corpus: list[tuple[FactorSpec, Video]],
    ccfg: CorpusConfig,
    cfg: PretrainConfig,
    log_every: int | None = None,
) -> tuple[SemanticEncoderParams, dict[str, float]]:
    """Train the trunk + heads to read every factor out of low-fps clips.

    Returns frozen params and held-out metrics. Shape accuracy at or below
    chance after the budget is a training failure, not a soft warning.
    """
    rng = Rng(cfg.seed).derive("sem-pretrain")
    sizes = ccfg.factor_sizes()
    enc = SemanticEncoderParams(cfg.sem, sizes, rng.derive("init"))

    rows = []
    shape = None
    for _, v in corpus:
        r, shape = _patchify(subsample_for_semantics(v, cfg.sem).frames, cfg.sem.p_s)
        rows.append(r)
    x_all = np.stack(rows)
    targets = _factor_targets([s for s, _ in corpus], ccfg)

    n = len(corpus)
    perm = rng.derive("split").permutation(n)
    n_hold = max(1, int(round(n * cfg.holdout_fraction)))
    train_idx, hold_idx = perm[:-n_hold], perm[-n_hold:]
    if len(train_idx) == 0:
        raise ConfigError(f"holdout fraction {cfg.holdout_fraction} leaves no training clips")

    opt = Adam(enc.params, lr=cfg.lr)
    draw = rng.derive("batches")
    noise_amp = ccfg.texture_noise if cfg.augment_noise else 0.0
    for step in range(cfg.steps):
        idx = train_idx[draw.integers(0, len(train_idx), (cfg.batch,))]
        x = x_all[idx]
        consistency = None
        if noise_amp > 0:
            tokens = _trunk_forward(
                enc, x + draw.uniform(x.shape, -noise_amp, noise_amp), shape
            )
            if cfg.consistency_weight > 0:
                other = _trunk_forward(
                    enc, x + draw.uniform(x.shape, -noise_amp, noise_amp), shape
                ).data
                # cosine alignment of the two views' flattened grids; the
                # second view is held constant (one-sided pull)
                a = tokens.reshape(tokens.shape[0], -1)
                b = other.reshape(other.shape[0], -1)
                dot = (a * Tensor(b)).sum(axis=1)
                na = (a * a).sum(axis=1) ** 0.5
                cos = dot / (na * Tensor(np.linalg.norm(b, axis=1)))
                consistency = (1.0 - cos).mean() * cfg.consistency_weight
        else:
            tokens = _trunk_forward(enc, x, shape)
        pooled = tokens.mean(axis=1)
        loss = None
        for name in CATEGORICAL_FACTORS:
            term = cross_entropy(_head_logits(enc, pooled, name), targets[name][idx])
            loss = term if loss is None else loss + term
        loss = loss + mse(_head_logits(enc, pooled, "velocity"), targets["velocity"][idx])
        loss = loss + mse(_head_logits(enc, pooled, "start_position"),
                          targets["start_position"][idx])
        if consistency is not None:
            loss = loss + consistency
        opt.zero_grad()
        loss.backward()
        opt.step()
        if log_every and step % log_every == 0:
            print(f"pretrain step {step} loss {loss.item():.4f}")

    enc.freeze()
    hold_videos = [corpus[i][1] for i in hold_idx]
    pred = predict_factors(enc, cfg.sem, hold_videos)
    metrics = {}
    for name in CATEGORICAL_FACTORS:
        metrics[f"{name}_acc"] = float(
            (pred[name] == targets[name][hold_idx]).mean()
        )
    metrics["velocity_mae"] = float(
        np.abs(pred["velocity"] - targets["velocity"][hold_idx]).mean()
    )
    chance = 1.0 / sizes["shape_id"]
    if metrics["shape_id_acc"] <= chance:
        raise TrainingDivergedError(
            f"shape accuracy {metrics['shape_id_acc']:.3f} at or below chance "
            f"{chance:.3f} after {cfg.steps} steps",
            step=cfg.steps, param="head.shape_id",
        )
    return enc, metrics


def save_encoder(path: str, enc: SemanticEncoderParams,
                 metrics: dict | None = None) -> None:
    """Checkpoint the frozen encoder (held-out probe metrics ride along);
    rounds the live weights through float32 so memory and disk agree."""
    arrays = {f"param.{k}": t.data for k, t in enc.params.items()}
    canonicalize(arrays)
    save_checkpoint(path, arrays, {
        "kind": "sem_encoder",
        "config": asdict(enc.cfg),
        "head_sizes": enc.head_sizes,
        "metrics": metrics or {},
    })


def load_encoder(path: str) -> tuple[SemanticEncoderParams, dict]:
    meta, arrays = load_checkpoint(path)
    if meta.get("kind") != "sem_encoder":
        raise ConfigError(f"{path} is not a semantic encoder checkpoint")
    raw = dict(meta["config"])
    raw["pos_extents"] = tuple(raw["pos_extents"])
    sizes = {k: int(v) for k, v in meta["head_sizes"].items()}
    enc = SemanticEncoderParams(SemanticConfig(**raw), sizes, Rng(0))
    load_into_params(enc.params, arrays, prefix="param.")
    enc.freeze()
    return enc, meta.get("metrics", {})


# --------------------------------------------------------------- compressor


class CompressorParams:
    """Per-token MLP d -> (mean, logvar) over d_c channels."""

    def __init__(self, cfg: SemanticConfig, rng: Rng):
        cfg.validate()
        self.cfg = cfg
        d, hid, d_c = cfg.d, cfg.compressor_hidden, cfg.d_c
        self.params = {
            "w1": Tensor(rng.normal((d, hid), std=1 / math.sqrt(d)), requires_grad=True),
            "b1": Tensor(np.zeros(hid), requires_grad=True),
            "w2": Tensor(rng.normal((hid, 2 * d_c), std=1 / math.sqrt(hid)),
                         requires_grad=True),
            "b2": Tensor(np.zeros(2 * d_c), requires_grad=True),
        }

    def freeze(self) -> None:
        for t in self.params.values():
            t.requires_grad = False


def compress_tensor(x, comp: CompressorParams, rng: Rng | None = None,
                    sample: bool = True) -> tuple[Tensor, Tensor, Tensor]:
    """Core op on (n, d) rows; returns (tokens, mean, logvar) with gradients
    flowing through the reparametrized draw."""
    p, cfg = comp.params, comp.cfg
    d_c = cfg.d_c
    if x.shape[-1] != cfg.d:
        raise DimensionError(f"compressor expects width {cfg.d}, got {x.shape[-1]}")
    h = gelu(matmul(x, p["w1"]) + p["b1"])
    out = matmul(h, p["w2"]) + p["b2"]
    mean = out[..., :d_c]
    logvar = out[..., d_c:].clip(-cfg.logvar_clamp, cfg.logvar_clamp)
    if not sample:
        return mean, mean, logvar
    if rng is None:
        raise ConfigError("sampling from the compressor needs an rng")
    xi = rng.normal(mean.shape)
    tokens = mean + (logvar * 0.5).exp() * Tensor(xi)
    return tokens, mean, logvar


def compress(z_raw: RawSemanticGrid, comp: CompressorParams, rng: Rng | None = None,
             sample: bool = False) -> tuple[SemanticGrid, np.ndarray, np.ndarray]:
    t, h, w, d = z_raw.tokens.shape
    tokens, mean, logvar = compress_tensor(
        z_raw.tokens.reshape(-1, d), comp, rng=rng, sample=sample
    )
    grid = SemanticGrid(tokens=tokens.data.reshape(t, h, w, comp.cfg.d_c), sampled=sample)
    return grid, mean.data.copy(), logvar.data.copy()


def kl_diag_gaussian(mean, logvar) -> Tensor:
    """KL(N(mean, diag exp(logvar)) || N(0, I)), averaged over tokens.

    Closed form per channel: (exp(logvar) + mean^2 - 1 - logvar) / 2, summed
    over channels; rows (tokens) are averaged so the weight is grid-size
    independent.
    """
    m = mean if isinstance(mean, Tensor) else Tensor(np.asarray(mean, dtype=np.float64))
    lv = logvar if isinstance(logvar, Tensor) else Tensor(np.asarray(logvar, dtype=np.float64))
    if m.shape != lv.shape:
        raise DimensionError(f"mean/logvar shapes disagree: {m.shape} vs {lv.shape}")
    if not (np.all(np.isfinite(m.data)) and np.all(np.isfinite(lv.data))):
        raise NumericError("non-finite mean/logvar in KL term")
    per_channel = (lv.exp() + m * m - 1.0 - lv) * 0.5
    if m.data.ndim == 1:
        return per_channel.sum()
    n_rows = int(np.prod(m.shape[:-1]))
    return per_channel.sum() * (1.0 / n_rows)


def corrupt_semantics(z: SemanticGrid, noise_level: float, rng: Rng) -> SemanticGrid:
    """Blend toward unit noise along the straight path used everywhere else."""
    if not 0.0 <= noise_level <= 1.0:
        raise ConfigError(f"noise_level {noise_level} outside [0, 1]")
    if noise_level == 0.0:
        return SemanticGrid(tokens=z.tokens.copy(), sampled=z.sampled)
    xi = rng.normal(z.tokens.shape)
    return SemanticGrid(tokens=(1.0 - noise_level) * z.tokens + noise_level * xi,
                        sampled=z.sampled)
