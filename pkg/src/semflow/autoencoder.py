"""Video autoencoder: pixels -> latent token grid -> pixels.

Non-overlapping 3D patches (f_t frames by f_s x f_s pixels) embed into a
hidden width, pass through two residual MLP blocks, and project to per-token
(mean, logvar) over c_z channels. The decoder mirrors this. Trained once
with MSE + beta * KL and frozen; every later stage consumes mean encodings.

Per-token only: no attention, no spatial mixing. A latent token is a pure
function of its own patch, which keeps the model tiny and the grid geometry
exact.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from semflow.checkpoint import (
    canonicalize,
    load_checkpoint,
    load_into_params,
    save_checkpoint,
)
from semflow.errors import ConfigError, DimensionError, TrainingDivergedError
from semflow.numerics import Adam, Rng, Tensor, gelu, matmul, mse, rms_norm
from semflow.semantics import kl_diag_gaussian
from semflow.synthdata import Video


@dataclass
class AeConfig:
    f_t: int = 2
    f_s: int = 4
    c_z: int = 8
    hidden: int = 128
    n_blocks: int = 2  # residual MLP blocks per side
    logvar_clamp: float = 10.0
    steps: int = 3000
    batch: int = 4
    lr: float = 2e-3
    beta: float = 1e-4
    seed: int = 0

    def validate(self) -> None:
        for name in ("f_t", "f_s", "c_z", "hidden", "n_blocks"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")

    @property
    def patch_dim(self) -> int:
        return self.f_t * 3 * self.f_s * self.f_s

    def compression_ratio(self) -> float:
        """Pixels (scalars) per latent scalar."""
        return self.patch_dim / self.c_z


@dataclass
class LatentGrid:
    tokens: np.ndarray  # (T_z, H_z, W_z, c_z)
    f_t: int
    f_s: int
    fps: float

    @property
    def n_tokens(self) -> int:
        t, h, w, _ = self.tokens.shape
        return t * h * w


class AeParams:
    def __init__(self, cfg: AeConfig, rng: Rng):
        cfg.validate()
        self.cfg = cfg
        self.frozen = False
        d_in, h, c_z = cfg.patch_dim, cfg.hidden, cfg.c_z
        p: dict[str, Tensor] = {}

        def block(prefix: str, width: int):
            p[f"{prefix}.norm"] = Tensor(np.ones(width), requires_grad=True)
            p[f"{prefix}.w1"] = Tensor(rng.normal((width, width), std=1 / math.sqrt(width)),
                                       requires_grad=True)
            p[f"{prefix}.b1"] = Tensor(np.zeros(width), requires_grad=True)
            p[f"{prefix}.w2"] = Tensor(rng.normal((width, width), std=1 / math.sqrt(width)),
                                       requires_grad=True)
            p[f"{prefix}.b2"] = Tensor(np.zeros(width), requires_grad=True)

        p["enc.embed.w"] = Tensor(rng.normal((d_in, h), std=1 / math.sqrt(d_in)),
                                  requires_grad=True)
        p["enc.embed.b"] = Tensor(np.zeros(h), requires_grad=True)
        for i in range(cfg.n_blocks):
            block(f"enc.blk{i}", h)
        p["enc.head.w"] = Tensor(rng.normal((h, 2 * c_z), std=1 / math.sqrt(h)),
                                 requires_grad=True)
        p["enc.head.b"] = Tensor(np.zeros(2 * c_z), requires_grad=True)

        p["dec.embed.w"] = Tensor(rng.normal((c_z, h), std=1 / math.sqrt(c_z)),
                                  requires_grad=True)
        p["dec.embed.b"] = Tensor(np.zeros(h), requires_grad=True)
        for i in range(cfg.n_blocks):
            block(f"dec.blk{i}", h)
        p["dec.head.w"] = Tensor(rng.normal((h, d_in), std=1 / math.sqrt(h)),
                                 requires_grad=True)
        # mid-gray init: an all-zero latent decodes to 0.5 everywhere
        p["dec.head.b"] = Tensor(np.full(d_in, 0.5), requires_grad=True)
        self.params = p

    def param_count(self) -> int:
        return sum(t.size for t in self.params.values())

    def freeze(self) -> None:
        self.frozen = True
        for t in self.params.values():
            t.requires_grad = False


def _check_divisible(shape: tuple[int, int, int], cfg: AeConfig) -> tuple[int, int, int]:
    f, hh, ww = shape
    if f % cfg.f_t != 0 or hh % cfg.f_s != 0 or ww % cfg.f_s != 0:
        raise ConfigError(
            f"video dims F={f} H={hh} W={ww} not divisible by "
            f"(f_t={cfg.f_t}, f_s={cfg.f_s})"
        )
    return f // cfg.f_t, hh // cfg.f_s, ww // cfg.f_s


def patchify3d(frames: np.ndarray, cfg: AeConfig) -> tuple[np.ndarray, tuple[int, int, int]]:
    """(F, 3, H, W) -> ((n, f_t*3*f_s^2) rows in t-major raster order, grid shape)."""
    if frames.ndim != 4 or frames.shape[1] != 3:
        raise DimensionError(f"expected (F, 3, H, W) frames, got {frames.shape}")
    f, c, hh, ww = frames.shape
    tz, hz, wz = _check_divisible((f, hh, ww), cfg)
    x = frames.reshape(tz, cfg.f_t, c, hz, cfg.f_s, wz, cfg.f_s)
    x = x.transpose(0, 3, 5, 1, 2, 4, 6)
    return x.reshape(tz * hz * wz, cfg.patch_dim), (tz, hz, wz)


def unpatchify3d(rows: np.ndarray, grid: tuple[int, int, int], cfg: AeConfig) -> np.ndarray:
    tz, hz, wz = grid
    x = rows.reshape(tz, hz, wz, cfg.f_t, 3, cfg.f_s, cfg.f_s)
    x = x.transpose(0, 3, 4, 1, 5, 2, 6)
    return x.reshape(tz * cfg.f_t, 3, hz * cfg.f_s, wz * cfg.f_s)


def _residual_stack(p: dict, prefix: str, cfg: AeConfig, x: Tensor) -> Tensor:
    for i in range(cfg.n_blocks):
        pre = f"{prefix}.blk{i}"
        h = rms_norm(x, p[f"{pre}.norm"])
        h = gelu(matmul(h, p[f"{pre}.w1"]) + p[f"{pre}.b1"])
        x = x + matmul(h, p[f"{pre}.w2"]) + p[f"{pre}.b2"]
    return x


def encode_rows(rows, ae: AeParams) -> tuple[Tensor, Tensor]:
    """(n, patch_dim) pixel rows -> per-token (mean, logvar) Tensors."""
    cfg, p = ae.cfg, ae.params
    if rows.shape[-1] != cfg.patch_dim:
        raise DimensionError(
            f"encoder expects rows of width {cfg.patch_dim}, got {rows.shape[-1]}"
        )
    x = matmul(rows - 0.5, p["enc.embed.w"]) + p["enc.embed.b"]
    x = _residual_stack(p, "enc", cfg, x)
    out = matmul(x, p["enc.head.w"]) + p["enc.head.b"]
    mean = out[..., : cfg.c_z]
    logvar = out[..., cfg.c_z:].clip(-cfg.logvar_clamp, cfg.logvar_clamp)
    return mean, logvar


def decode_rows(z_rows, ae: AeParams) -> Tensor:
    """(n, c_z) latent rows -> (n, patch_dim) pixel rows clamped to [0, 1]."""
    cfg, p = ae.cfg, ae.params
    if z_rows.shape[-1] != cfg.c_z:
        raise DimensionError(
            f"decoder expects rows of width {cfg.c_z}, got {z_rows.shape[-1]}"
        )
    x = matmul(z_rows, p["dec.embed.w"]) + p["dec.embed.b"]
    x = _residual_stack(p, "dec", cfg, x)
    out = matmul(x, p["dec.head.w"]) + p["dec.head.b"]
    return out.clip(0.0, 1.0)


def ae_encode(v: Video, ae: AeParams, rng: Rng | None = None,
              sample: bool = False) -> LatentGrid:
    rows, grid = patchify3d(v.frames, ae.cfg)
    mean, logvar = encode_rows(rows, ae)
    tokens = mean.data
    if sample:
        if rng is None:
            raise ConfigError("sampled encoding needs an rng")
        tokens = tokens + np.exp(0.5 * logvar.data) * rng.normal(tokens.shape)
    return LatentGrid(tokens=tokens.reshape(*grid, ae.cfg.c_z).copy(),
                      f_t=ae.cfg.f_t, f_s=ae.cfg.f_s, fps=v.fps)


def ae_decode(z: LatentGrid, ae: AeParams) -> Video:
    cfg = ae.cfg
    if z.tokens.shape[-1] != cfg.c_z or z.f_t != cfg.f_t or z.f_s != cfg.f_s:
        raise DimensionError(
            f"latent grid {z.tokens.shape} (f_t={z.f_t}, f_s={z.f_s}) does not "
            f"match model (c_z={cfg.c_z}, f_t={cfg.f_t}, f_s={cfg.f_s})"
        )
    grid = z.tokens.shape[:3]
    rows = decode_rows(z.tokens.reshape(-1, cfg.c_z), ae)
    return Video(frames=unpatchify3d(rows.data, grid, cfg), fps=z.fps)


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    err = float(np.mean((a - b) ** 2))
    if err == 0:
        return float("inf")
    return -10.0 * math.log10(err)


def train_autoencoder(
    corpus: list, cfg: AeConfig, log=None
) -> tuple[AeParams, list[tuple[int, float, float, float]]]:
    """MSE + beta*KL over sampled encodings; returns frozen params + curve.

    `log` is an optional LossLog with columns (step, loss, recon, kl).
    Divergence aborts with the step index rather than finishing quietly.
    """
    if not corpus:
        raise ConfigError("autoencoder training needs a nonempty corpus")
    rng = Rng(cfg.seed).derive("ae-train")
    ae = AeParams(cfg, rng.derive("init"))

    rows_all = []
    grid = None
    for _, v in corpus:
        r, grid = patchify3d(v.frames, cfg)
        rows_all.append(r)
    rows_all = np.stack(rows_all)  # (N, n_tok, patch_dim)

    opt = Adam(ae.params, lr=cfg.lr)
    draw = rng.derive("batches")
    curve: list[tuple[int, float, float, float]] = []
    for step in range(cfg.steps):
        idx = draw.integers(0, len(corpus), (min(cfg.batch, len(corpus)),))
        rows = rows_all[idx].reshape(-1, cfg.patch_dim)
        mean, logvar = encode_rows(rows, ae)
        xi = draw.normal(mean.shape)
        z = mean + (logvar * 0.5).exp() * Tensor(xi)
        recon = decode_rows(z, ae)
        recon_term = mse(recon, rows)
        if cfg.beta > 0:
            kl_term = kl_diag_gaussian(mean, logvar)
            loss = recon_term + kl_term * cfg.beta
            kl_val = kl_term.item()
        else:
            loss = recon_term
            kl_val = 0.0
        if not np.isfinite(loss.data):
            raise TrainingDivergedError(
                f"autoencoder loss became non-finite at step {step}", step=step
            )
        opt.zero_grad()
        loss.backward()
        opt.step()
        curve.append((step, loss.item(), recon_term.item(), kl_val))
        if log is not None:
            log.append(step, loss.item(), recon_term.item(), kl_val)

    ae.freeze()
    return ae, curve


def save_ae(path: str, ae: AeParams) -> None:
    """Checkpoint the autoencoder; rounds the live weights through float32 so
    the in-memory model and any reload of this file agree bit for bit."""
    arrays = {f"param.{k}": t.data for k, t in ae.params.items()}
    canonicalize(arrays)
    save_checkpoint(path, arrays, {"kind": "ae", "config": asdict(ae.cfg)})


def load_ae(path: str) -> AeParams:
    meta, arrays = load_checkpoint(path)
    if meta.get("kind") != "ae":
        raise ConfigError(f"{path} is not an autoencoder checkpoint")
    ae = AeParams(AeConfig(**meta["config"]), Rng(0))
    load_into_params(ae.params, arrays, prefix="param.")
    ae.freeze()
    return ae
