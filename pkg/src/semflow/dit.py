"""Transformer backbone shared by both generators.

One attention flavor: joint self-attention over a sequence of
[condition tokens] ++ [semantic tokens] ++ [noised target tokens], with
learned kind and (t, h, w) position embeddings. The diffusion timestep
enters through RMSNorm modulation: the t-embedding maps to a per-channel
scale (zero-initialized, so scale is 1 at init) applied inside every norm.
The output head is zero-initialized, so a fresh model is the zero velocity
field.

Attention layouts: `full` (all-true mask) and `swin_interleaved`, where
latent tokens attend within time windows of length T_w, windows shift by
T_w/2 on odd layers, semantic tokens join the window covering the time span
they summarize (their coordinate is the span center), semantic-semantic
pairs are always allowed, and condition tokens see and are seen by everyone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from semflow.errors import ConfigError, DimensionError, InternalError, NumericError
from semflow.numerics import Rng, Tensor, concat, gelu, matmul, rms_norm, softmax_attention

KINDS = ("condition", "semantic", "latent")


@dataclass
class AttentionLayout:
    mode: str = "full"  # full | swin_interleaved
    T_w: int = 4  # window length in latent-time units

    def __post_init__(self):
        if self.mode not in ("full", "swin_interleaved"):
            raise ConfigError(f"unknown attention mode '{self.mode}'")
        if self.mode == "swin_interleaved" and (self.T_w < 2 or self.T_w % 2 != 0):
            raise ConfigError(f"window length T_w must be even and >= 2, got {self.T_w}")

    def shift(self, layer_index: int) -> int:
        """Half-window shift on odd layers, none on even."""
        return self.T_w // 2 if layer_index % 2 == 1 else 0


@dataclass
class TokenSequence:
    """Flattened token layout: payload rows plus per-token descriptors.

    `blocks` lists (kind, payload, pos, times) in sequence order, where
    payload is (n, c_kind) raw values (Tensor when gradients must flow
    through, e.g. sampled semantics), pos is (n, 3) integer (t, h, w), and
    times is the per-token latent-time coordinate used by windowing (NaN for
    condition tokens, which are globally visible).
    """

    blocks: list[tuple[str, object, np.ndarray, np.ndarray]]
    target_kind: str

    def __post_init__(self):
        for kind, _, pos, _ in self.blocks:
            if kind not in KINDS:
                raise ConfigError(f"unknown token kind '{kind}'")
            uniq = {tuple(p) for p in pos}
            if len(uniq) != len(pos):
                raise InternalError(f"duplicate positions within kind '{kind}'")

    @property
    def length(self) -> int:
        return sum(len(pos) for _, _, pos, _ in self.blocks)

    def kinds(self) -> np.ndarray:
        return np.concatenate([
            np.full(len(pos), kind, dtype=object) for kind, _, pos, _ in self.blocks
        ])

    def times(self) -> np.ndarray:
        return np.concatenate([t for _, _, _, t in self.blocks])

    def target_slice(self) -> slice:
        start = 0
        for kind, _, pos, _ in self.blocks:
            if kind == self.target_kind:
                return slice(start, start + len(pos))
            start += len(pos)
        raise InternalError(f"sequence has no '{self.target_kind}' block")


def _grid_descriptors(shape: tuple[int, int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Raster order t-major, then h, then w; returns (pos, t_coords)."""
    t, h, w = shape
    idx = np.arange(t * h * w)
    pos = np.stack([idx // (h * w), (idx // w) % h, idx % w], axis=1)
    return pos, pos[:, 0].astype(np.float64)


def semantic_time_coords(t_sem: int, t_latent: int) -> np.ndarray:
    """Latent-time coordinate of each semantic time index: span centers.

    Semantic index s summarizes latent frames [s*k, (s+1)*k) for
    k = t_latent / t_sem, whose center is (s + 0.5) * k - 0.5.
    """
    if t_latent % t_sem != 0:
        raise ConfigError(
            f"semantic time length {t_sem} does not divide latent length {t_latent}"
        )
    k = t_latent / t_sem
    return (np.arange(t_sem) + 0.5) * k - 0.5


def build_sequence(z_t: np.ndarray, z_sem, cond, target_kind: str = "latent",
                   latent_t: int | None = None) -> TokenSequence:
    """Assemble [condition] ++ [semantic] ++ [target] with kind tags.

    z_t: (T, H, W, c) noised target grid. z_sem: (T_s, H_s, W_s, d_c)
    semantic conditioning grid or None (must be None when the target IS the
    semantic grid). cond: (n_cond, c_cond) condition payload, usually a
    Tensor from the factor embedder. latent_t: the latent-time extent that
    semantic coordinates refer to (defaults to z_t's own time length).
    """
    if z_t.ndim != 4:
        raise DimensionError(f"target grid must be (T, H, W, c), got {z_t.shape}")
    if target_kind == "semantic" and z_sem is not None:
        raise ConfigError("semantic conditioning block alongside a semantic target "
                          "would duplicate positions")
    blocks = []
    if cond is not None:
        n = cond.shape[0]
        pos = np.stack([np.arange(n), np.zeros(n, int), np.zeros(n, int)], axis=1)
        blocks.append(("condition", cond, pos, np.full(n, np.nan)))
    t_lat = latent_t if latent_t is not None else z_t.shape[0]
    if z_sem is not None:
        if z_sem.ndim != 4:
            raise DimensionError(f"semantic grid must be (T, H, W, c), got {z_sem.shape}")
        shape = z_sem.shape[:3]
        pos, _ = _grid_descriptors(shape)
        t_coords = semantic_time_coords(shape[0], t_lat)[pos[:, 0]]
        payload = z_sem.reshape(-1, z_sem.shape[-1])
        blocks.append(("semantic", payload, pos, t_coords))
    pos, t_coords = _grid_descriptors(z_t.shape[:3])
    if target_kind == "semantic":
        t_coords = semantic_time_coords(z_t.shape[0], t_lat)[pos[:, 0]]
    blocks.append((target_kind, z_t.reshape(-1, z_t.shape[-1]), pos, t_coords))
    return TokenSequence(blocks=blocks, target_kind=target_kind)


def build_mask(seq: TokenSequence, layout: AttentionLayout, layer_index: int) -> np.ndarray:
    """Boolean (L, L) attention mask, True = pair allowed."""
    L = seq.length
    if layout.mode == "full":
        return np.ones((L, L), dtype=bool)
    kinds = seq.kinds()
    times = seq.times()
    is_cond = kinds == "condition"
    is_sem = kinds == "semantic"
    if np.isnan(times[~is_cond]).any():
        raise InternalError("non-condition token is missing its time coordinate")
    shift = layout.shift(layer_index)
    window = np.floor((times - shift) / layout.T_w)
    same_window = window[:, None] == window[None, :]
    mask = same_window
    mask = mask | is_cond[:, None] | is_cond[None, :]
    mask = mask | (is_sem[:, None] & is_sem[None, :])
    return mask


def sinusoidal_features(t: float, dim: int) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(np.linspace(0.0, math.log(1000.0), half))
    ang = t * freqs
    out = np.concatenate([np.sin(ang), np.cos(ang)])
    if dim % 2 == 1:
        out = np.concatenate([out, [0.0]])
    return out


@dataclass
class DitConfig:
    c_model: int = 128
    n_blocks: int = 6
    n_heads: int = 4
    mlp_ratio: int = 4
    target_kind: str = "latent"
    out_dim: int = 8
    in_dims: dict = field(default_factory=dict)  # kind -> payload width
    pos_extents: dict = field(default_factory=dict)  # kind -> (T, H, W) table sizes
    eps: float = 1e-6

    def validate(self) -> None:
        if self.c_model % self.n_heads != 0:
            raise ConfigError(
                f"c_model {self.c_model} not divisible by n_heads {self.n_heads}"
            )
        if self.target_kind not in ("latent", "semantic"):
            raise ConfigError(f"target kind '{self.target_kind}' must be latent|semantic")
        if self.target_kind not in self.in_dims:
            raise ConfigError(f"in_dims missing target kind '{self.target_kind}'")


class DiT:
    """Parameter container + forward pass. Params live in a flat dict."""

    def __init__(self, cfg: DitConfig, rng: Rng):
        cfg.validate()
        self.cfg = cfg
        c = cfg.c_model
        p: dict[str, Tensor] = {}

        for kind, c_in in cfg.in_dims.items():
            if kind not in KINDS:
                raise ConfigError(f"unknown token kind '{kind}'")
            p[f"in.{kind}.w"] = Tensor(rng.normal((c_in, c), std=1 / math.sqrt(c_in)),
                                       requires_grad=True)
            p[f"in.{kind}.b"] = Tensor(np.zeros(c), requires_grad=True)
            p[f"kind.{kind}"] = Tensor(rng.normal((c,), std=0.02), requires_grad=True)
            t_n, h_n, w_n = cfg.pos_extents.get(kind, (1, 1, 1))
            p[f"pos.{kind}.t"] = Tensor(rng.normal((t_n, c), std=0.02), requires_grad=True)
            p[f"pos.{kind}.h"] = Tensor(rng.normal((h_n, c), std=0.02), requires_grad=True)
            p[f"pos.{kind}.w"] = Tensor(rng.normal((w_n, c), std=0.02), requires_grad=True)

        p["temb.w1"] = Tensor(rng.normal((c, c), std=1 / math.sqrt(c)), requires_grad=True)
        p["temb.b1"] = Tensor(np.zeros(c), requires_grad=True)
        p["temb.w2"] = Tensor(rng.normal((c, c), std=1 / math.sqrt(c)), requires_grad=True)
        p["temb.b2"] = Tensor(np.zeros(c), requires_grad=True)

        sq = 1 / math.sqrt(c)
        for i in range(cfg.n_blocks):
            for nm in ("q", "k", "v", "o"):
                p[f"blk{i}.attn.w{nm}"] = Tensor(rng.normal((c, c), std=sq),
                                                 requires_grad=True)
                p[f"blk{i}.attn.b{nm}"] = Tensor(np.zeros(c), requires_grad=True)
            hid = cfg.mlp_ratio * c
            p[f"blk{i}.mlp.w1"] = Tensor(rng.normal((c, hid), std=sq), requires_grad=True)
            p[f"blk{i}.mlp.b1"] = Tensor(np.zeros(hid), requires_grad=True)
            p[f"blk{i}.mlp.w2"] = Tensor(rng.normal((hid, c), std=1 / math.sqrt(hid)),
                                         requires_grad=True)
            p[f"blk{i}.mlp.b2"] = Tensor(np.zeros(c), requires_grad=True)
            for nm in ("n1", "n2"):
                p[f"blk{i}.{nm}.gain"] = Tensor(np.ones(c), requires_grad=True)
                # zero init: modulation scale is exactly 1 at t=anything
                p[f"blk{i}.{nm}.mod_w"] = Tensor(np.zeros((c, c)), requires_grad=True)
                p[f"blk{i}.{nm}.mod_b"] = Tensor(np.zeros(c), requires_grad=True)
        p["head.gain"] = Tensor(np.ones(c), requires_grad=True)
        p["head.mod_w"] = Tensor(np.zeros((c, c)), requires_grad=True)
        p["head.mod_b"] = Tensor(np.zeros(c), requires_grad=True)
        # zero-init head: a fresh model is the zero velocity field
        p["head.w"] = Tensor(np.zeros((c, cfg.out_dim)), requires_grad=True)
        p["head.b"] = Tensor(np.zeros(cfg.out_dim), requires_grad=True)
        self.params = p

    def param_count(self) -> int:
        return sum(t.size for t in self.params.values())

    def _embed(self, seq: TokenSequence) -> Tensor:
        parts = []
        p = self.params
        for kind, payload, pos, _ in seq.blocks:
            if kind not in self.cfg.in_dims:
                raise ConfigError(f"model has no embedder for token kind '{kind}'")
            t_n = p[f"pos.{kind}.t"].shape[0]
            h_n = p[f"pos.{kind}.h"].shape[0]
            w_n = p[f"pos.{kind}.w"].shape[0]
            if pos[:, 0].max() >= t_n or pos[:, 1].max() >= h_n or pos[:, 2].max() >= w_n:
                raise ConfigError(
                    f"position {tuple(pos.max(axis=0))} outside embedding tables "
                    f"({t_n},{h_n},{w_n}) for kind '{kind}'"
                )
            x = matmul(payload, p[f"in.{kind}.w"]) + p[f"in.{kind}.b"]
            x = x + p[f"kind.{kind}"]
            x = x + p[f"pos.{kind}.t"][pos[:, 0]]
            x = x + p[f"pos.{kind}.h"][pos[:, 1]]
            x = x + p[f"pos.{kind}.w"][pos[:, 2]]
            parts.append(x)
        return parts[0] if len(parts) == 1 else concat(parts, axis=0)

    def _t_embedding(self, t: float) -> Tensor:
        p = self.params
        feats = Tensor(sinusoidal_features(t, self.cfg.c_model)[None, :])
        h = gelu(matmul(feats, p["temb.w1"]) + p["temb.b1"])
        return matmul(h, p["temb.w2"]) + p["temb.b2"]  # (1, c)

    def _modulated_norm(self, x: Tensor, prefix: str, t_emb: Tensor) -> Tensor:
        p = self.params
        scale = matmul(t_emb, p[f"{prefix}.mod_w"]) + p[f"{prefix}.mod_b"] + 1.0
        return rms_norm(x, p[f"{prefix}.gain"], scale, eps=self.cfg.eps)

    def _attention(self, x: Tensor, i: int, mask: np.ndarray) -> Tensor:
        p = self.params
        c, nh = self.cfg.c_model, self.cfg.n_heads
        dh = c // nh
        L = x.shape[0]
        q = (matmul(x, p[f"blk{i}.attn.wq"]) + p[f"blk{i}.attn.bq"])
        k = (matmul(x, p[f"blk{i}.attn.wk"]) + p[f"blk{i}.attn.bk"])
        v = (matmul(x, p[f"blk{i}.attn.wv"]) + p[f"blk{i}.attn.bv"])
        # (L, c) -> (heads, L, dh)
        q = q.reshape(L, nh, dh).transpose(1, 0, 2)
        k = k.reshape(L, nh, dh).transpose(1, 0, 2)
        v = v.reshape(L, nh, dh).transpose(1, 0, 2)
        o = softmax_attention(q, k, v, mask)
        o = o.transpose(1, 0, 2).reshape(L, c)
        return matmul(o, p[f"blk{i}.attn.wo"]) + p[f"blk{i}.attn.bo"]

    def forward(self, seq: TokenSequence, t: float, masks) -> Tensor:
        """Velocity prediction for the target-kind tokens, (n_target, out_dim).

        `masks` is one (L, L) boolean array applied to every block, or a list
        with one mask per block (shifted-window layouts alternate per layer).
        """
        p = self.params
        if isinstance(masks, np.ndarray):
            masks = [masks] * self.cfg.n_blocks
        if len(masks) != self.cfg.n_blocks:
            raise ConfigError(
                f"{len(masks)} masks for {self.cfg.n_blocks} blocks"
            )
        L = seq.length
        for m in masks:
            if m.shape != (L, L):
                raise DimensionError(f"mask shape {m.shape} != ({L}, {L})")
        x = self._embed(seq)
        t_emb = self._t_embedding(t)
        for i in range(self.cfg.n_blocks):
            a = self._modulated_norm(x, f"blk{i}.n1", t_emb)
            x = x + self._attention(a, i, masks[i])
            hmid = self._modulated_norm(x, f"blk{i}.n2", t_emb)
            h = gelu(matmul(hmid, p[f"blk{i}.mlp.w1"]) + p[f"blk{i}.mlp.b1"])
            x = x + (matmul(h, p[f"blk{i}.mlp.w2"]) + p[f"blk{i}.mlp.b2"])
            if not np.all(np.isfinite(x.data)):
                raise NumericError(f"non-finite activation after block {i}")
        y = self._modulated_norm(x, "head", t_emb)
        y = matmul(y, p["head.w"]) + p["head.b"]
        return y[seq.target_slice()]


def dit_forward(seq: TokenSequence, t: float, model: DiT, masks) -> Tensor:
    return model.forward(seq, t, masks)
