"""Two-stage training and one-pass generation, plus matched baselines.

Stage one jointly trains the latent velocity model and the token compressor
against frozen autoencoder latents, conditioned on sampled compressed
semantics. Stage two freezes the compressor and trains a second velocity
model that generates the compressed grids themselves from factor
conditioning. Generation chains them: factors -> semantic grid -> latent
grid -> pixels, one Euler pass each.

Baselines share the identical loop, corpus, step budget, optimizer, and
seed: a factor-conditioned latent model with full attention (ct), the same
under shifted windows (ct_swin), and a two-stage variant whose first stage
generates pooled-latent codes instead of semantics (vae2stage).

Both velocity models train from scratch here; "continued training" of a
large pretrained base is out of desk-scale reach, so the baselines mean
"same from-scratch budget without semantic modeling".

Training state is checkpointed at float32 precision and the live parameters
are rounded through float32 at every save, so a killed-and-resumed run
replays the exact loss curve of an uninterrupted one: per-step randomness is
re-derived from (seed, step), never carried across steps.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import re
import time
from dataclasses import dataclass, field, replace

import numpy as np

from semflow.artifacts import LossLog, write_config_snapshot
from semflow.autoencoder import AeParams, LatentGrid, ae_decode, ae_encode
from semflow.checkpoint import (
    canonicalize,
    load_checkpoint,
    load_into_params,
    params_data,
    save_checkpoint,
    state_digest,
)
from semflow.dit import AttentionLayout, DiT, DitConfig, build_mask, build_sequence
from semflow.errors import ConfigError, DependencyError, InternalError
from semflow.flow import SamplerConfig, cfm_loss, euler_sample
from semflow.numerics import Adam, Rng, Tensor
from semflow.semantics import (
    CompressorParams,
    SemanticConfig,
    SemanticEncoderParams,
    SemanticGrid,
    check_token_ratio,
    compress_tensor,
    corrupt_semantics,
    kl_diag_gaussian,
    sem_encode,
    subsample_for_semantics,
)
from semflow.synthdata import CorpusConfig, FactorSpec, Video, factor_classes

STAGES = ("latent_gen", "sem_gen", "baseline_ct", "baseline_ct_swin",
          "baseline_vae2stage")
FACTOR_ORDER = ("shape_id", "color", "velocity", "start_position",
                "background_id", "motion_pattern")
LAYOUTS = ("full", "swin_interleaved")


@dataclass
class StageConfig:
    stage: str = "latent_gen"
    steps: int = 400
    batch: int = 4
    lr: float = 1e-3
    layout_mode: str = "full"
    T_w: int = 4
    d_c: int = 16
    noise_level: float = 0.1
    lambda_kl: float = 1e-3
    seed: int = 0
    c_model: int = 64
    n_blocks: int = 4
    n_heads: int = 4
    mlp_ratio: int = 4
    num_sample_steps: int = 50
    save_every: int = 0  # periodic checkpoints; 0 keeps only the final one
    # pins for modules that must arrive frozen (name -> state digest)
    frozen_hashes: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.stage not in STAGES:
            raise ConfigError(f"stage '{self.stage}' not one of {STAGES}")
        if self.layout_mode not in LAYOUTS:
            raise ConfigError(f"layout '{self.layout_mode}' not one of {LAYOUTS}")
        if self.steps < 1 or self.batch < 1:
            raise ConfigError(f"steps={self.steps} batch={self.batch} must be >= 1")
        if self.d_c < 1:
            raise ConfigError(f"d_c must be >= 1, got {self.d_c}")
        if not 0.0 <= self.noise_level <= 1.0:
            raise ConfigError(f"noise_level {self.noise_level} outside [0, 1]")
        if self.lambda_kl < 0:
            raise ConfigError(f"lambda_kl must be >= 0, got {self.lambda_kl}")
        self.layout()  # validates T_w when windowed

    def layout(self) -> AttentionLayout:
        return AttentionLayout(mode=self.layout_mode, T_w=self.T_w)

    def snapshot(self) -> dict:
        return {
            "stage": self.stage, "steps": self.steps, "batch": self.batch,
            "lr": self.lr, "layout_mode": self.layout_mode, "T_w": self.T_w,
            "d_c": self.d_c, "noise_level": self.noise_level,
            "lambda_kl": self.lambda_kl, "seed": self.seed,
            "c_model": self.c_model, "n_blocks": self.n_blocks,
            "n_heads": self.n_heads, "mlp_ratio": self.mlp_ratio,
            "num_sample_steps": self.num_sample_steps,
            "frozen_hashes": dict(self.frozen_hashes),
        }


@dataclass
class RunArtifact:
    """Everything one training run leaves behind. `models` holds the live
    objects for in-process use; the byte-level record is the checkpoint."""

    name: str
    stage: str
    config: dict
    curve: list
    stats: dict
    frozen_hashes: dict
    data_order_digest: str
    corpus_digest: str
    wall_clock_per_step: float
    models: dict = field(default_factory=dict, repr=False)
    aux_curves: dict = field(default_factory=dict, repr=False)
    run_path: str | None = None


# ------------------------------------------------------------- conditioning


def condition_width(ccfg: CorpusConfig) -> int:
    return len(FACTOR_ORDER) + max(ccfg.factor_sizes().values())


def encode_condition(spec: FactorSpec, ccfg: CorpusConfig) -> np.ndarray:
    """One row per factor: [which-factor one-hot ++ class one-hot].

    Parameter-free by design; the velocity model's condition embedder learns
    whatever projection it needs, and two distinct specs never collide.
    """
    classes = factor_classes(spec, ccfg)
    base = len(FACTOR_ORDER)
    rows = np.zeros((base, condition_width(ccfg)))
    for i, name in enumerate(FACTOR_ORDER):
        rows[i, i] = 1.0
        rows[i, base + classes[name]] = 1.0
    return rows


def clips_digest(corpus: list[tuple[FactorSpec, Video]]) -> str:
    """Content hash of a corpus at float32 precision (fairness anchor)."""
    h = hashlib.sha256()
    for spec, v in corpus:
        h.update(repr((spec.shape_id, spec.color, tuple(spec.velocity),
                       tuple(spec.start_position), spec.background_id,
                       spec.motion_pattern)).encode())
        h.update(np.float32(v.fps).tobytes())
        h.update(np.ascontiguousarray(v.frames, dtype="<f4").tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------- geometry


def _latent_shape(frames: int, h: int, w: int, ae_cfg) -> tuple[int, int, int]:
    if frames % ae_cfg.f_t or h % ae_cfg.f_s or w % ae_cfg.f_s:
        raise ConfigError(
            f"frame count {frames} or frame size {h}x{w} not divisible by "
            f"latent factors (f_t={ae_cfg.f_t}, f_s={ae_cfg.f_s})"
        )
    return frames // ae_cfg.f_t, h // ae_cfg.f_s, w // ae_cfg.f_s


def _semantic_shape(frames: int, h: int, w: int, fps_ratio: int,
                    p_s: int) -> tuple[int, int, int]:
    n_sub = (frames + fps_ratio - 1) // fps_ratio
    if n_sub % 2:
        raise ConfigError(
            f"{frames} frames subsample to {n_sub}, which does not pair up"
        )
    if h % p_s or w % p_s:
        raise ConfigError(f"frame size {h}x{w} not divisible by p_s={p_s}")
    return n_sub // 2, h // p_s, w // p_s


# ------------------------------------------------------------- data staging


def _encode_latents(corpus, ae: AeParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mean latent grids for every clip, standardized per channel."""
    grids = np.stack([ae_encode(v, ae).tokens for _, v in corpus])
    mu = grids.reshape(-1, grids.shape[-1]).mean(axis=0)
    sigma = np.maximum(grids.reshape(-1, grids.shape[-1]).std(axis=0), 1e-6)
    return (grids - mu) / sigma, mu, sigma


def _encode_semantics(corpus, enc: SemanticEncoderParams) -> np.ndarray:
    cfg = enc.cfg
    return np.stack([
        sem_encode(subsample_for_semantics(v, cfg), enc, cfg).tokens
        for _, v in corpus
    ])


def _pool_latents(lat_std: np.ndarray, sem_shape: tuple[int, int, int]) -> np.ndarray:
    """Block-fold standardized latents onto the semantic grid's token count.

    (N, T_z, H_z, W_z, c) -> (N, T_s, H_s, W_s, k*c) where k is the fold
    factor; every latent scalar survives into the channel axis, so the MLP
    compressor alone decides what to keep (matched capacity with the
    semantic route).
    """
    n, tz, hz, wz, c = lat_std.shape
    ts, hs, ws = sem_shape
    if tz % ts or hz % hs or wz % ws:
        raise ConfigError(
            f"latent grid {(tz, hz, wz)} does not fold onto semantic grid "
            f"{sem_shape}"
        )
    ft, fh, fw = tz // ts, hz // hs, wz // ws
    x = lat_std.reshape(n, ts, ft, hs, fh, ws, fw, c)
    x = x.transpose(0, 1, 3, 5, 2, 4, 6, 7)
    return x.reshape(n, ts, hs, ws, ft * fh * fw * c)


def _standardize(grids: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    flat = grids.reshape(-1, grids.shape[-1])
    mu = flat.mean(axis=0)
    sigma = np.maximum(flat.std(axis=0), 1e-6)
    return (grids - mu) / sigma, mu, sigma


# ----------------------------------------------------------- freeze checks


def _is_frozen(params: dict[str, Tensor]) -> bool:
    return not any(t.requires_grad for t in params.values())


def _require_frozen(name: str, params: dict[str, Tensor], expected: dict) -> str:
    if not _is_frozen(params):
        raise ConfigError(f"'{name}' must be frozen before this stage")
    digest = state_digest(params_data(params))
    pinned = expected.get(name)
    if pinned is not None and pinned != digest:
        raise ConfigError(
            f"frozen-hash mismatch for '{name}': config pins {pinned[:12]}..., "
            f"module hashes to {digest[:12]}..."
        )
    return digest


def _verify_unchanged(name: str, params: dict[str, Tensor], before: str) -> None:
    after = state_digest(params_data(params))
    if after != before:
        raise InternalError(f"frozen module '{name}' changed during training")


# ------------------------------------------------------------ model builders


def _build_dit(cfg: StageConfig, *, target_kind: str, out_dim: int,
               in_dims: dict, pos_extents: dict, label: str) -> DiT:
    dcfg = DitConfig(
        c_model=cfg.c_model, n_blocks=cfg.n_blocks, n_heads=cfg.n_heads,
        mlp_ratio=cfg.mlp_ratio, target_kind=target_kind, out_dim=out_dim,
        in_dims=in_dims, pos_extents=pos_extents,
    )
    return DiT(dcfg, Rng(cfg.seed).derive(label))


def stage_model_fn(dit: DiT, layout: AttentionLayout, target_kind: str = "latent",
                   forbid_semantics: bool = False):
    """Velocity closure shared by training and sampling.

    cond is (cond_rows, z_sem, latent_t); masks are cached per sequence
    length since every call in a stage shares one token structure.
    """
    cache: dict[int, list] = {}

    def model(z_t, t, cond):
        cond_rows, z_sem, latent_t = cond
        if forbid_semantics:
            assert z_sem is None, (
                "layout guard: this baseline must not see semantic tokens"
            )
        seq = build_sequence(z_t, z_sem, cond_rows, target_kind=target_kind,
                             latent_t=latent_t)
        masks = cache.get(seq.length)
        if masks is None:
            masks = [build_mask(seq, layout, i) for i in range(dit.cfg.n_blocks)]
            cache[seq.length] = masks
        return dit.forward(seq, t, masks).reshape(*z_t.shape)

    return model


# ------------------------------------------------------------ training loop


def _replay_order_digest(h, cfg: StageConfig, n: int, upto: int) -> None:
    for step in range(upto):
        idx = Rng(cfg.seed).derive(f"step-{step}").derive("idx").integers(
            0, n, (cfg.batch,))
        h.update(idx.astype(np.int64).tobytes())


def _find_resume_checkpoint(run_path: str, tag: str) -> str | None:
    pat = re.compile(rf"^ckpt_{tag}step_(\d+)\.bin$")
    best, best_step = None, -1
    for fn in os.listdir(run_path):
        if fn == f"ckpt_{tag}final.bin":
            return os.path.join(run_path, fn)
        m = pat.match(fn)
        if m and int(m.group(1)) > best_step:
            best, best_step = fn, int(m.group(1))
    return os.path.join(run_path, best) if best else None


def _run_stage_loop(name: str, cfg: StageConfig, n_clips: int,
                    param_groups: dict[str, dict[str, Tensor]], loss_fn,
                    stats: dict, *, run_path: str | None = None,
                    resume: bool = False, tag: str = "") -> tuple[list, str, float]:
    """Generic per-step loop: batch draw, loss, Adam, logging, checkpoints.

    `loss_fn(idx, step_rng) -> (loss Tensor, cfm float, kl float)`. Returns
    (curve rows, data-order digest, seconds per step). All randomness is
    derived from (seed, step) so a resumed run is bit-identical.
    """
    merged = {f"{g}.{k}": t for g, d in param_groups.items() for k, t in d.items()}
    trainable = {k: t for k, t in merged.items() if t.requires_grad}
    if not trainable:
        raise ConfigError(f"stage '{name}' has nothing to train")
    opt = Adam(trainable, lr=cfg.lr)

    log = None
    if run_path is not None:
        os.makedirs(os.path.join(run_path, "samples"), exist_ok=True)
        # sub-stage runs (tagged) keep separate logs so neither clobbers the
        # other and each resume reloads its own rows
        log_name = f"loss_{tag[:-1]}.csv" if tag else "loss.csv"
        log = LossLog(os.path.join(run_path, log_name),
                      ("step", "loss", "cfm", "kl"))
        write_config_snapshot(run_path, {**cfg.snapshot(), "name": name})

    order = hashlib.sha256()
    start = 0
    curve: list[tuple] = []
    if resume and run_path is not None:
        ckpt = _find_resume_checkpoint(run_path, tag)
        if ckpt is not None:
            meta, arrays = load_checkpoint(ckpt)
            load_into_params(merged, arrays, prefix="param.")
            for k in trainable:
                opt.m[k][...] = arrays[f"adam.m.{k}"]
                opt.v[k][...] = arrays[f"adam.v.{k}"]
            opt.t = int(meta["adam_t"])
            start = int(meta["next_step"])
            log.load_upto(start - 1)
            curve = list(log.rows)
    _replay_order_digest(order, cfg, n_clips, start)

    def write_ckpt(path: str, next_step: int) -> None:
        arrays = {f"param.{k}": t.data for k, t in merged.items()}
        for k in trainable:
            arrays[f"adam.m.{k}"] = opt.m[k]
            arrays[f"adam.v.{k}"] = opt.v[k]
        for k, a in stats.items():
            arrays[f"stats.{k}"] = np.asarray(a, dtype=np.float64)
        # round live state through f32 so saved and in-memory agree exactly
        canonicalize(arrays)
        meta = {"stage": cfg.stage, "name": name, "next_step": next_step,
                "adam_t": opt.t, "config": cfg.snapshot()}
        save_checkpoint(path, arrays, meta)

    t0 = time.perf_counter()
    for step in range(start, cfg.steps):
        srng = Rng(cfg.seed).derive(f"step-{step}")
        idx = srng.derive("idx").integers(0, n_clips, (cfg.batch,))
        order.update(idx.astype(np.int64).tobytes())
        loss, cfm_val, kl_val = loss_fn(idx, srng)
        opt.zero_grad()
        loss.backward()
        opt.step()
        row = (step, loss.item(), cfm_val, kl_val)
        curve.append(row)
        if log is not None:
            log.append(*row)
        if (run_path is not None and cfg.save_every > 0
                and (step + 1) % cfg.save_every == 0 and step + 1 < cfg.steps):
            write_ckpt(os.path.join(run_path, f"ckpt_{tag}step_{step + 1:06d}.bin"),
                       step + 1)
            log.flush()
    steps_run = max(cfg.steps - start, 1)
    per_step = (time.perf_counter() - t0) / steps_run

    if run_path is not None:
        write_ckpt(os.path.join(run_path, f"ckpt_{tag}final.bin"), cfg.steps)
        log.flush()
    else:
        arrays = {f"param.{k}": t.data for k, t in merged.items()}
        canonicalize(arrays)

    return curve, order.hexdigest(), per_step


def _write_run_record(art: RunArtifact) -> None:
    """Replace the minimal in-loop snapshot with the full artifact record so a
    finished run directory is self-describing (enough to rebuild the models)."""
    if art.run_path is None:
        return
    write_config_snapshot(art.run_path, {
        **art.config,
        "frozen_hashes": art.frozen_hashes,
        "corpus_digest": art.corpus_digest,
        "data_order_digest": art.data_order_digest,
    })


# ------------------------------------------------------------- stage: latent


def _latent_stage(name: str, corpus, ccfg: CorpusConfig, ae: AeParams,
                  raw_grids: np.ndarray, cfg: StageConfig,
                  frozen_hashes: dict, *, run_path=None, resume=False,
                  tag: str = "") -> tuple[DiT, CompressorParams, RunArtifact]:
    """Joint latent-velocity + compressor training, conditioned on sampled
    compressed tokens of `raw_grids` (semantic or pooled-latent source)."""
    lat_std, lat_mu, lat_sigma = _encode_latents(corpus, ae)
    n, (tz, hz, wz) = len(corpus), lat_std.shape[1:4]
    sem_shape = raw_grids.shape[1:4]
    d_raw = raw_grids.shape[-1]
    check_token_ratio(tz * hz * wz, int(np.prod(sem_shape)))

    tz_long, hz_long, wz_long = _latent_shape(ccfg.F_long, ccfg.H, ccfg.W, ae.cfg)
    ts_long = sem_shape[0] * (tz_long // tz)
    dit = _build_dit(
        cfg, target_kind="latent", out_dim=ae.cfg.c_z,
        in_dims={"latent": ae.cfg.c_z, "semantic": cfg.d_c},
        pos_extents={"latent": (tz_long, hz_long, wz_long),
                     "semantic": (ts_long, sem_shape[1], sem_shape[2])},
        label=f"{name}-dit",
    )
    comp_cfg = SemanticConfig(d=d_raw, d_c=cfg.d_c)
    comp = CompressorParams(comp_cfg, Rng(cfg.seed).derive(f"{name}-comp"))
    layout = cfg.layout()
    model = stage_model_fn(dit, layout, target_kind="latent")
    raw_rows = raw_grids.reshape(n, -1, d_raw)

    def loss_fn(idx, srng):
        comp_rng = srng.derive("comp")
        kls = []

        def cond_model(z_t, t, cond):
            rows, latent_t = cond
            tokens, mean, logvar = compress_tensor(rows, comp, rng=comp_rng,
                                                   sample=True)
            kls.append(kl_diag_gaussian(mean, logvar))
            z_sem = tokens.reshape(*sem_shape, cfg.d_c)
            return model(z_t, t, (None, z_sem, latent_t))

        batch = [(lat_std[i], (raw_rows[i], tz)) for i in idx]
        cfm = cfm_loss(cond_model, batch, rng=srng.derive("flow"))
        kl = kls[0] if len(kls) == 1 else sum(kls[1:], kls[0]) * (1.0 / len(kls))
        loss = cfm + kl * cfg.lambda_kl if cfg.lambda_kl > 0 else cfm
        return loss, float(cfm.data), float(kl.data)

    stats = {"latent_mu": lat_mu, "latent_sigma": lat_sigma}
    curve, order, per_step = _run_stage_loop(
        name, cfg, n, {"dit": dit.params, "comp": comp.params}, loss_fn, stats,
        run_path=run_path, resume=resume, tag=tag,
    )

    art = RunArtifact(
        name=name, stage=cfg.stage, curve=curve, stats=stats,
        config={**cfg.snapshot(), "name": name, "c_z": ae.cfg.c_z,
                "d_raw": d_raw, "frames": ccfg.F, "fps": ccfg.fps,
                "H": ccfg.H, "W": ccfg.W, "f_t": ae.cfg.f_t, "f_s": ae.cfg.f_s,
                "sem_shape": list(sem_shape), "latent_shape": [tz, hz, wz],
                # semantic geometry as integers so any frame count maps to
                # a grid shape without the encoder object in hand
                "sem_fps_ratio": ccfg.F // (2 * sem_shape[0]),
                "sem_p_s": ccfg.H // sem_shape[1]},
        frozen_hashes=frozen_hashes, data_order_digest=order,
        corpus_digest=clips_digest(corpus), wall_clock_per_step=per_step,
        models={"dit": dit, "comp": comp}, run_path=run_path,
    )
    _write_run_record(art)
    return dit, comp, art


def train_latent_generator(corpus, ccfg: CorpusConfig, ae: AeParams,
                           sem_encoder: SemanticEncoderParams, cfg: StageConfig,
                           *, run_path=None, resume=False,
                           ) -> tuple[DiT, CompressorParams, RunArtifact]:
    """Stage one: velocity model over autoencoder latents conditioned on
    sampled compressed semantics; the compressor trains jointly under a KL
    pull toward the unit Gaussian."""
    cfg = replace(cfg, stage="latent_gen")
    cfg.validate()
    if cfg.d_c > sem_encoder.cfg.d:
        raise ConfigError(
            f"d_c={cfg.d_c} exceeds raw semantic width d={sem_encoder.cfg.d}"
        )
    frozen = {
        "ae": _require_frozen("ae", ae.params, cfg.frozen_hashes),
        "sem_encoder": _require_frozen("sem_encoder", sem_encoder.params,
                                       cfg.frozen_hashes),
    }
    if not ae.frozen:
        raise ConfigError("autoencoder must be frozen before stage one")
    raw = _encode_semantics(corpus, sem_encoder)
    out = _latent_stage("latent_gen", corpus, ccfg, ae, raw, cfg, frozen,
                        run_path=run_path, resume=resume)
    _verify_unchanged("ae", ae.params, frozen["ae"])
    _verify_unchanged("sem_encoder", sem_encoder.params, frozen["sem_encoder"])
    return out


# ---------------------------------------------------------- stage: grid gen


def _grid_stage(name: str, targets: np.ndarray, cond_rows: np.ndarray,
                latent_t: int, cfg: StageConfig, frozen_hashes: dict,
                corpus_dig: str, *, ts_long: int, run_path=None, resume=False,
                tag: str = "", extra_config=None,
                ) -> tuple[DiT, RunArtifact]:
    """Velocity model over (standardized) compressed grids, factor-conditioned,
    full attention: the whole point of the compressed space is that full
    attention stays affordable there."""
    n = targets.shape[0]
    tgt_std, mu, sigma = _standardize(targets)
    sem_shape = targets.shape[1:4]
    d_c = targets.shape[-1]
    dit = _build_dit(
        cfg, target_kind="semantic", out_dim=d_c,
        in_dims={"semantic": d_c, "condition": cond_rows.shape[-1]},
        pos_extents={"semantic": (ts_long, sem_shape[1], sem_shape[2]),
                     "condition": (cond_rows.shape[1], 1, 1)},
        label=f"{name}-dit",
    )
    layout = AttentionLayout(mode="full")
    model = stage_model_fn(dit, layout, target_kind="semantic")

    def loss_fn(idx, srng):
        batch = [(tgt_std[i], (cond_rows[i], None, latent_t)) for i in idx]
        cfm = cfm_loss(model, batch, rng=srng.derive("flow"))
        return cfm, float(cfm.data), 0.0

    stats = {"grid_mu": mu, "grid_sigma": sigma}
    curve, order, per_step = _run_stage_loop(
        name, cfg, n, {"dit": dit.params}, loss_fn, stats,
        run_path=run_path, resume=resume, tag=tag,
    )
    art = RunArtifact(
        name=name, stage=cfg.stage, curve=curve, stats=stats,
        config={**cfg.snapshot(), "name": name, "d_c": d_c,
                "sem_shape": list(sem_shape), "latent_t": latent_t,
                "cond_width": cond_rows.shape[-1], **(extra_config or {})},
        frozen_hashes=frozen_hashes, data_order_digest=order,
        corpus_digest=corpus_dig, wall_clock_per_step=per_step,
        models={"dit": dit}, run_path=run_path,
    )
    _write_run_record(art)
    return dit, art


def train_semantic_generator(corpus, ccfg: CorpusConfig,
                             sem_encoder: SemanticEncoderParams,
                             compressor: CompressorParams, cfg: StageConfig,
                             *, run_path=None, resume=False,
                             ) -> tuple[DiT, RunArtifact]:
    """Stage two: generate compressed semantic grids from factor rows.

    Targets are the frozen compressor's means (no sampling noise); the
    encoder and compressor must both arrive frozen and leave unchanged."""
    cfg = replace(cfg, stage="sem_gen")
    cfg.validate()
    frozen = {
        "sem_encoder": _require_frozen("sem_encoder", sem_encoder.params,
                                       cfg.frozen_hashes),
        "compressor": _require_frozen("compressor", compressor.params,
                                      cfg.frozen_hashes),
    }
    if compressor.cfg.d_c != cfg.d_c:
        raise ConfigError(
            f"compressor width d_c={compressor.cfg.d_c} != config d_c={cfg.d_c}"
        )
    raw = _encode_semantics(corpus, sem_encoder)
    n, (ts, hs, ws) = raw.shape[0], raw.shape[1:4]
    means, _, _ = compress_tensor(raw.reshape(-1, raw.shape[-1]), compressor,
                                  sample=False)
    targets = means.data.reshape(n, ts, hs, ws, cfg.d_c)
    cond = np.stack([encode_condition(s, ccfg) for s, _ in corpus])
    ts_long = _semantic_shape(ccfg.F_long, ccfg.H, ccfg.W,
                              sem_encoder.cfg.fps_ratio, sem_encoder.cfg.p_s)[0]
    dit, art = _grid_stage(
        "sem_gen", targets, cond, ts, cfg, frozen, clips_digest(corpus),
        ts_long=ts_long, run_path=run_path, resume=resume,
        extra_config={"sem_fps_ratio": sem_encoder.cfg.fps_ratio,
                      "sem_p_s": sem_encoder.cfg.p_s},
    )
    _verify_unchanged("sem_encoder", sem_encoder.params, frozen["sem_encoder"])
    _verify_unchanged("compressor", compressor.params, frozen["compressor"])
    return dit, art


# ------------------------------------------------------------- baselines


def _check_fairness(reference: RunArtifact | None, cfg: StageConfig,
                    corpus_dig: str) -> None:
    if reference is None:
        return
    ref = reference.config
    drift = []
    for key in ("steps", "batch", "lr", "seed"):
        if ref[key] != getattr(cfg, key):
            drift.append(f"{key}: {ref[key]} != {getattr(cfg, key)}")
    if reference.corpus_digest != corpus_dig:
        drift.append("corpus digest differs")
    if drift:
        raise ConfigError(
            "fairness violation against run '%s': %s"
            % (reference.name, "; ".join(drift))
        )


def train_baselines(corpus, ccfg: CorpusConfig, ae: AeParams, cfg: StageConfig,
                    *, reference: RunArtifact | None = None,
                    which=("baseline_ct", "baseline_ct_swin", "baseline_vae2stage"),
                    run_root=None, resume=False) -> dict[str, RunArtifact]:
    """Matched-budget baselines; `reference` (the stage-one run) pins the
    fairness contract: same corpus bytes, steps, optimizer settings, seed."""
    corpus_dig = clips_digest(corpus)
    _check_fairness(reference, cfg, corpus_dig)
    if not ae.frozen:
        raise ConfigError("autoencoder must be frozen for baseline training")
    ae_digest = _require_frozen("ae", ae.params, cfg.frozen_hashes)

    lat_std, lat_mu, lat_sigma = _encode_latents(corpus, ae)
    n, (tz, hz, wz) = len(corpus), lat_std.shape[1:4]
    tz_long, hz_long, wz_long = _latent_shape(ccfg.F_long, ccfg.H, ccfg.W, ae.cfg)
    cond = np.stack([encode_condition(s, ccfg) for s, _ in corpus])
    out: dict[str, RunArtifact] = {}

    for stage in which:
        if stage not in ("baseline_ct", "baseline_ct_swin", "baseline_vae2stage"):
            raise ConfigError(f"unknown baseline '{stage}'")
        run_path = os.path.join(run_root, stage) if run_root else None
        if run_path:
            os.makedirs(run_path, exist_ok=True)
        scfg = replace(cfg, stage=stage)

        if stage in ("baseline_ct", "baseline_ct_swin"):
            scfg = replace(
                scfg,
                layout_mode="full" if stage == "baseline_ct" else "swin_interleaved",
            )
            scfg.validate()
            dit = _build_dit(
                scfg, target_kind="latent", out_dim=ae.cfg.c_z,
                in_dims={"latent": ae.cfg.c_z, "condition": cond.shape[-1]},
                pos_extents={"latent": (tz_long, hz_long, wz_long),
                             "condition": (cond.shape[1], 1, 1)},
                label=f"{stage}-dit",
            )
            model = stage_model_fn(dit, scfg.layout(), target_kind="latent",
                                   forbid_semantics=True)

            def loss_fn(idx, srng, model=model):
                batch = [(lat_std[i], (cond[i], None, tz)) for i in idx]
                cfm = cfm_loss(model, batch, rng=srng.derive("flow"))
                return cfm, float(cfm.data), 0.0

            stats = {"latent_mu": lat_mu, "latent_sigma": lat_sigma}
            curve, order, per_step = _run_stage_loop(
                stage, scfg, n, {"dit": dit.params}, loss_fn, stats,
                run_path=run_path, resume=resume,
            )
            out[stage] = RunArtifact(
                name=stage, stage=stage, curve=curve, stats=stats,
                config={**scfg.snapshot(), "name": stage, "c_z": ae.cfg.c_z,
                        "frames": ccfg.F, "fps": ccfg.fps, "H": ccfg.H,
                        "W": ccfg.W, "f_t": ae.cfg.f_t, "f_s": ae.cfg.f_s,
                        "cond_width": cond.shape[-1],
                        "latent_shape": [tz, hz, wz]},
                frozen_hashes={"ae": ae_digest}, data_order_digest=order,
                corpus_digest=corpus_dig, wall_clock_per_step=per_step,
                models={"dit": dit}, run_path=run_path,
            )
            _write_run_record(out[stage])
        else:
            # token grid matched to whatever the semantic route used; default
            # geometry when no reference run pins it
            if reference is not None and "sem_shape" in reference.config:
                sem_shape = tuple(reference.config["sem_shape"])
            else:
                g = SemanticConfig()
                sem_shape = _semantic_shape(ccfg.F, ccfg.H, ccfg.W,
                                            g.fps_ratio, g.p_s)
            out[stage] = _train_vae2stage(
                corpus, ccfg, ae, scfg, lat_std, lat_mu, lat_sigma, cond,
                ae_digest, corpus_dig, sem_shape, run_path=run_path,
                resume=resume,
            )
        _check_fairness(reference, scfg, corpus_dig)
    _verify_unchanged("ae", ae.params, ae_digest)
    return out


def _train_vae2stage(corpus, ccfg, ae, cfg: StageConfig, lat_std, lat_mu,
                     lat_sigma, cond, ae_digest, corpus_dig, sem_shape, *,
                     run_path=None, resume=False) -> RunArtifact:
    """Two-stage control with the semantic encoder swapped for block-pooled
    latents: stage two trains its own compressor jointly (mirror of the
    semantic route), then stage one learns to generate those codes."""
    cfg.validate()
    pooled = _pool_latents(lat_std, sem_shape)
    dit2, comp, art2 = _latent_stage(
        "baseline_vae2stage.stage2", corpus, ccfg, ae, pooled, cfg,
        {"ae": ae_digest}, run_path=run_path, resume=resume, tag="stage2_",
    )
    comp.freeze()
    comp_digest = state_digest(params_data(comp.params))

    n = pooled.shape[0]
    means, _, _ = compress_tensor(pooled.reshape(-1, pooled.shape[-1]), comp,
                                  sample=False)
    targets = means.data.reshape(n, *sem_shape, cfg.d_c)
    tz = lat_std.shape[1]
    tz_long = _latent_shape(ccfg.F_long, ccfg.H, ccfg.W, ae.cfg)[0]
    dit1, art1 = _grid_stage(
        "baseline_vae2stage.stage1", targets, cond, sem_shape[0], cfg,
        {"ae": ae_digest, "compressor": comp_digest}, corpus_dig,
        ts_long=sem_shape[0] * (tz_long // tz), run_path=run_path,
        resume=resume, tag="stage1_",
    )
    _verify_unchanged("compressor", comp.params, comp_digest)

    art = RunArtifact(
        name="baseline_vae2stage", stage="baseline_vae2stage",
        config={**art2.config, "name": "baseline_vae2stage",
                "cond_width": cond.shape[-1],
                "stage1_config": art1.config},
        curve=art2.curve, aux_curves={"stage1": art1.curve},
        stats={**art2.stats, "grid_mu": art1.stats["grid_mu"],
               "grid_sigma": art1.stats["grid_sigma"]},
        frozen_hashes={"ae": ae_digest, "compressor": comp_digest},
        data_order_digest=art2.data_order_digest, corpus_digest=corpus_dig,
        wall_clock_per_step=art2.wall_clock_per_step + art1.wall_clock_per_step,
        models={"stage1": dit1, "stage2": dit2, "comp": comp},
        run_path=run_path,
    )
    _write_run_record(art)  # the composite record wins over the sub-stage ones
    return art


# ------------------------------------------------------------- generation


def _sample_grid(dit: DiT, layout: AttentionLayout, shape, cond_rows, z_sem,
                 latent_t, num_steps: int, rng: Rng, target_kind: str) -> np.ndarray:
    model = stage_model_fn(dit, layout, target_kind=target_kind)
    return euler_sample(
        lambda z, t, _c: model(z, t, (cond_rows, z_sem, latent_t)),
        None, SamplerConfig(num_steps=num_steps), rng, shape,
    )


def _check_compat(sem_art: RunArtifact, lat_art: RunArtifact, ae: AeParams) -> None:
    if sem_art.config["d_c"] != lat_art.config["d_c"]:
        raise ConfigError(
            f"checkpoint mismatch: semantic generator '{sem_art.name}' emits "
            f"d_c={sem_art.config['d_c']} but latent generator '{lat_art.name}' "
            f"was trained on d_c={lat_art.config['d_c']}"
        )
    if lat_art.config["c_z"] != ae.cfg.c_z:
        raise ConfigError(
            f"checkpoint mismatch: latent generator '{lat_art.name}' emits "
            f"c_z={lat_art.config['c_z']} but the autoencoder expects "
            f"c_z={ae.cfg.c_z}"
        )


def generate(spec: FactorSpec, ccfg: CorpusConfig, sem_art: RunArtifact,
             lat_art: RunArtifact, ae: AeParams, cfg: StageConfig,
             seed: int | None = None, frames: int | None = None,
             ) -> Video:
    """Factors -> semantic grid -> latent grid -> pixels, one Euler pass per
    stage, deterministic given `seed`."""
    _check_compat(sem_art, lat_art, ae)
    frames = ccfg.F if frames is None else frames
    base = Rng(cfg.seed if seed is None else seed).derive("generate")

    tz, hz, wz = _latent_shape(frames, ccfg.H, ccfg.W, ae.cfg)
    sem_dit: DiT = sem_art.models["dit"]
    lat_dit: DiT = lat_art.models["dit"]
    d_c = lat_art.config["d_c"]
    ss = _semantic_shape(frames, ccfg.H, ccfg.W,
                         lat_art.config["sem_fps_ratio"],
                         lat_art.config["sem_p_s"])
    check_token_ratio(tz * hz * wz, int(np.prod(ss)))

    cond = encode_condition(spec, ccfg)
    grid_std = _sample_grid(sem_dit, AttentionLayout(mode="full"),
                            (*ss, d_c), cond, None, ss[0], cfg.num_sample_steps,
                            base.derive("sem-noise"), "semantic")
    grid = grid_std * sem_art.stats["grid_sigma"] + sem_art.stats["grid_mu"]
    z_sem = corrupt_semantics(SemanticGrid(tokens=grid, sampled=False),
                              cfg.noise_level, base.derive("corrupt"))

    lat_std = _sample_grid(lat_dit, cfg.layout(), (tz, hz, wz, ae.cfg.c_z),
                           None, z_sem.tokens, tz, cfg.num_sample_steps,
                           base.derive("latent-noise"), "latent")
    lat = lat_std * lat_art.stats["latent_sigma"] + lat_art.stats["latent_mu"]
    z = LatentGrid(tokens=lat, f_t=ae.cfg.f_t, f_s=ae.cfg.f_s,
                   fps=lat_art.config.get("fps", ccfg.fps))
    return ae_decode(z, ae)


def generate_long(spec: FactorSpec, ccfg: CorpusConfig, sem_art: RunArtifact,
                  lat_art: RunArtifact, ae: AeParams, cfg: StageConfig,
                  f_long: int | None = None, seed: int | None = None,
                  ) -> tuple[Video, dict]:
    """One joint windowed pass over the full long sequence; semantic tokens
    stay globally visible while latent tokens attend within shifted windows.
    Returns the video plus a token-accounting report."""
    if cfg.layout_mode != "swin_interleaved":
        raise ConfigError("long generation requires layout_mode=swin_interleaved")
    f_long = ccfg.F_long if f_long is None else f_long
    tz, hz, wz = _latent_shape(f_long, ccfg.H, ccfg.W, ae.cfg)
    ss = _semantic_shape(f_long, ccfg.H, ccfg.W,
                         lat_art.config["sem_fps_ratio"],
                         lat_art.config["sem_p_s"])
    video = generate(spec, ccfg, sem_art, lat_art, ae, cfg, seed=seed,
                     frames=f_long)
    n_sem, n_lat = int(np.prod(ss)), tz * hz * wz
    return video, {
        "frames": f_long, "n_semantic": n_sem, "n_latent": n_lat,
        "token_ratio": n_sem / n_lat,
    }


def generate_baseline(art: RunArtifact, spec: FactorSpec, ccfg: CorpusConfig,
                      ae: AeParams, cfg: StageConfig, seed: int | None = None,
                      frames: int | None = None) -> Video:
    """Sampling path for the three controls, matching `generate` stage for
    stage so comparisons isolate the representation, not the plumbing."""
    frames = ccfg.F if frames is None else frames
    base = Rng(cfg.seed if seed is None else seed).derive("generate")
    tz, hz, wz = _latent_shape(frames, ccfg.H, ccfg.W, ae.cfg)
    cond = encode_condition(spec, ccfg)

    if art.stage in ("baseline_ct", "baseline_ct_swin"):
        if art.config["c_z"] != ae.cfg.c_z:
            raise ConfigError(
                f"checkpoint mismatch: '{art.name}' emits c_z={art.config['c_z']} "
                f"but the autoencoder expects c_z={ae.cfg.c_z}"
            )
        layout = cfg.layout() if art.stage == "baseline_ct_swin" else \
            AttentionLayout(mode="full")
        lat_std = _sample_grid(art.models["dit"], layout,
                               (tz, hz, wz, ae.cfg.c_z), cond, None, tz,
                               cfg.num_sample_steps,
                               base.derive("latent-noise"), "latent")
    elif art.stage == "baseline_vae2stage":
        ss = _semantic_shape(frames, ccfg.H, ccfg.W,
                             art.config["sem_fps_ratio"], art.config["sem_p_s"])
        d_c = art.config["d_c"]
        grid_std = _sample_grid(art.models["stage1"], AttentionLayout(mode="full"),
                                (*ss, d_c), cond, None, ss[0],
                                cfg.num_sample_steps, base.derive("sem-noise"),
                                "semantic")
        grid = grid_std * art.stats["grid_sigma"] + art.stats["grid_mu"]
        z_sem = corrupt_semantics(SemanticGrid(tokens=grid, sampled=False),
                                  cfg.noise_level, base.derive("corrupt"))
        lat_std = _sample_grid(art.models["stage2"], cfg.layout(),
                               (tz, hz, wz, ae.cfg.c_z), None, z_sem.tokens,
                               tz, cfg.num_sample_steps,
                               base.derive("latent-noise"), "latent")
    else:
        raise ConfigError(f"'{art.stage}' is not a baseline artifact")

    lat = lat_std * art.stats["latent_sigma"] + art.stats["latent_mu"]
    z = LatentGrid(tokens=lat, f_t=ae.cfg.f_t, f_s=ae.cfg.f_s,
                   fps=art.config.get("fps", ccfg.fps))
    return ae_decode(z, ae)


# ------------------------------------------------------------- run loading


def _rebuild_dit(snap: dict, arrays: dict, target_kind: str) -> DiT:
    """Inverse of checkpointing: token widths and positional extents are read
    off the saved array shapes, everything else from the config snapshot."""
    pre = "param.dit."
    in_dims: dict[str, int] = {}
    pos: dict[str, list[int]] = {}
    for k, a in arrays.items():
        if not k.startswith(pre):
            continue
        rest = k[len(pre):]
        if rest.startswith("in.") and rest.endswith(".w"):
            in_dims[rest[3:-2]] = int(a.shape[0])
        elif rest.startswith("pos."):
            kind, axis = rest[4:].rsplit(".", 1)
            pos.setdefault(kind, [1, 1, 1])["thw".index(axis)] = int(a.shape[0])
    dcfg = DitConfig(
        c_model=int(snap["c_model"]), n_blocks=int(snap["n_blocks"]),
        n_heads=int(snap["n_heads"]), mlp_ratio=int(snap["mlp_ratio"]),
        target_kind=target_kind,
        out_dim=int(arrays[pre + "head.w"].shape[1]),
        in_dims=in_dims, pos_extents={k: tuple(v) for k, v in pos.items()},
    )
    dit = DiT(dcfg, Rng(0))
    load_into_params(dit.params, arrays, prefix=pre)
    return dit


def _rebuild_comp(config: dict, arrays: dict) -> CompressorParams:
    comp = CompressorParams(
        SemanticConfig(d=int(config["d_raw"]), d_c=int(config["d_c"])), Rng(0)
    )
    load_into_params(comp.params, arrays, prefix="param.comp.")
    comp.freeze()
    return comp


def _read_curve(path: str) -> list[tuple]:
    if not os.path.isfile(path):
        return []
    log = LossLog(path, ("step", "loss", "cfm", "kl"))
    log.load_upto(1 << 62)
    return list(log.rows)


def load_run(run_path: str) -> RunArtifact:
    """Rebuild a finished run (live models included) from its directory.

    Counterpart of the records the trainers leave behind; reloaded stats and
    weights are the float32-canonicalized values the live run ended with, so
    sampling from a reloaded artifact matches sampling in-process."""
    cfg_path = os.path.join(run_path, "config.json")
    if not os.path.isfile(cfg_path):
        raise DependencyError(f"no run record at '{cfg_path}'")
    with open(cfg_path) as fh:
        config = json.load(fh)
    stage = config.get("stage")

    def ckpt(tag: str = "") -> tuple[dict, dict]:
        path = os.path.join(run_path, f"ckpt_{tag}final.bin")
        if not os.path.isfile(path):
            raise DependencyError(
                f"run '{run_path}' has no '{os.path.basename(path)}'; "
                "it never finished training"
            )
        return load_checkpoint(path)

    models: dict = {}
    aux_curves: dict = {}
    if stage == "baseline_vae2stage":
        meta2, arr2 = ckpt("stage2_")
        meta1, arr1 = ckpt("stage1_")
        models["stage2"] = _rebuild_dit(meta2["config"], arr2, "latent")
        models["comp"] = _rebuild_comp(config, arr2)
        models["stage1"] = _rebuild_dit(meta1["config"], arr1, "semantic")
        stats = {k[len("stats."):]: a for k, a in {**arr2, **arr1}.items()
                 if k.startswith("stats.")}
        curve = _read_curve(os.path.join(run_path, "loss_stage2.csv"))
        aux_curves["stage1"] = _read_curve(os.path.join(run_path, "loss_stage1.csv"))
    elif stage in STAGES:
        meta, arrays = ckpt()
        kind = "semantic" if stage == "sem_gen" else "latent"
        models["dit"] = _rebuild_dit(meta["config"], arrays, kind)
        if any(k.startswith("param.comp.") for k in arrays):
            models["comp"] = _rebuild_comp(config, arrays)
        stats = {k[len("stats."):]: a for k, a in arrays.items()
                 if k.startswith("stats.")}
        curve = _read_curve(os.path.join(run_path, "loss.csv"))
    else:
        raise ConfigError(f"run record at '{cfg_path}' has unknown stage '{stage}'")

    return RunArtifact(
        name=config.get("name", os.path.basename(run_path)), stage=stage,
        config=config, curve=curve, stats=stats,
        frozen_hashes=config.get("frozen_hashes", {}),
        data_order_digest=config.get("data_order_digest", ""),
        corpus_digest=config.get("corpus_digest", ""),
        wall_clock_per_step=0.0, models=models, aux_curves=aux_curves,
        run_path=run_path,
    )
