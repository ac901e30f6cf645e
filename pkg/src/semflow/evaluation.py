"""Metrics, first-vs-last-segment drift, and the three comparison harnesses.

The harnesses compare systems trained under the matched-budget contract:
representation-space convergence (semantic grids vs compressed pooled
latents), the compression-width sweep, and long-horizon drift. Video quality
is proxied by four cheap metrics instead of reference-model suites:
`mean_luma` (brightness), `frame_diff_energy` (flicker), `bg_consistency`
(background stability: frame-pair correlation over low-variance pixels), and
`factor_match` (the frozen encoder's factor probe against the requested
spec). Proxy percentages are not comparable to any published numbers.
"""

from __future__ import annotations

import csv
import json
import os
import tempfile
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from semflow.artifacts import save_filmstrip, save_video_bin
from semflow.autoencoder import AeParams
from semflow.checkpoint import load_checkpoint, load_into_params
from semflow.errors import ConfigError, DimensionError
from semflow.numerics import Rng, Tensor
from semflow.pipeline import (RunArtifact, StageConfig, generate,
                              generate_baseline, train_baselines,
                              train_latent_generator,
                              train_semantic_generator)
from semflow.semantics import (CATEGORICAL_FACTORS, SemanticEncoderParams,
                               predict_factors)
from semflow.synthdata import CorpusConfig, FactorSpec, Video, factor_classes

_LUMA = np.array([0.299, 0.587, 0.114])


# ------------------------------------------------------------------ metrics


@dataclass(frozen=True)
class MetricFn:
    """Named scalar function over a frame window (F, 3, H, W) in [0, 1]."""

    name: str
    fn: Callable[[np.ndarray], float]

    def __call__(self, frames: np.ndarray) -> float:
        return float(self.fn(np.asarray(frames, dtype=np.float64)))


def _luma(frames: np.ndarray) -> np.ndarray:
    return np.tensordot(frames, _LUMA, axes=([1], [0]))


def _mean_luma(frames: np.ndarray) -> float:
    return float(_luma(frames).mean())


def _frame_diff_energy(frames: np.ndarray) -> float:
    if frames.shape[0] < 2:
        return 0.0
    d = frames[1:] - frames[:-1]
    return float((d * d).mean())


def _pair_corr(a: np.ndarray, b: np.ndarray) -> float:
    sa, sb = a.std(), b.std()
    if sa < 1e-12 and sb < 1e-12:
        return 1.0
    if sa < 1e-12 or sb < 1e-12:
        return 0.0
    return float(np.corrcoef(a, b)[0, 1])


def _bg_consistency(frames: np.ndarray) -> float:
    """Mean frame-pair correlation over the low-variance half of pixels.

    The moving sprite is the high-variance minority, so the kept half is a
    background proxy; a static background scores 1, churn scores near 0.
    """
    f = frames.shape[0]
    if f < 2:
        return 1.0
    luma = _luma(frames).reshape(f, -1)
    var = luma.var(axis=0)
    keep = np.argsort(var, kind="stable")[: max(1, var.size // 2)]
    bg = luma[:, keep]
    vals = [_pair_corr(bg[i], bg[j]) for i in range(f) for j in range(i + 1, f)]
    return float(np.mean(vals))


mean_luma = MetricFn("mean_luma", _mean_luma)
frame_diff_energy = MetricFn("frame_diff_energy", _frame_diff_energy)
bg_consistency = MetricFn("bg_consistency", _bg_consistency)

METRICS = {m.name: m for m in (mean_luma, frame_diff_energy, bg_consistency)}


def metric_mean(metric: MetricFn, clips) -> float:
    """Batch aggregation: the plain mean, so duplicating a batch is a no-op."""
    return float(np.mean([metric(c.frames if isinstance(c, Video) else c)
                          for c in clips]))


def factor_match(videos: list[Video], specs: list[FactorSpec],
                 enc: SemanticEncoderParams, ccfg: CorpusConfig) -> float:
    """Fraction of categorical factors the frozen probe recovers as requested."""
    if len(videos) != len(specs):
        raise DimensionError(
            f"{len(videos)} clips vs {len(specs)} factor specs")
    preds = predict_factors(enc, enc.cfg, videos)
    hits = []
    for name in CATEGORICAL_FACTORS:
        want = np.array([factor_classes(s, ccfg)[name] for s in specs])
        hits.append(preds[name] == want)
    return float(np.mean(hits))


# -------------------------------------------------------------------- drift


@dataclass(frozen=True)
class DriftReport:
    metric: str
    first: float
    last: float
    delta: float
    fraction: float


def drift(video, metric: MetricFn, fraction: float = 0.15) -> DriftReport:
    """|metric(leading segment) - metric(trailing segment)|, both segments
    floor(F * fraction) frames long and never overlapping."""
    frames = video.frames if isinstance(video, Video) else np.asarray(video)
    if not 0.0 < fraction <= 0.5:
        raise ConfigError(f"segment fraction {fraction} outside (0, 0.5]")
    k = int(np.floor(frames.shape[0] * fraction))
    if k < 1:
        raise DimensionError(
            f"{frames.shape[0]} frames yield an empty {fraction:.0%} segment")
    first = metric(frames[:k])
    last = metric(frames[-k:])
    return DriftReport(metric=metric.name, first=first, last=last,
                       delta=abs(first - last), fraction=fraction)


# ---------------------------------------------------------------- plumbing


def sample_spec(ccfg: CorpusConfig, rng: Rng) -> FactorSpec:
    """One uniform draw from the corpus factor vocabulary."""
    pick = {name: int(rng.derive(name).integers(0, size, (1,))[0])
            for name, size in ccfg.factor_sizes().items()}
    return FactorSpec(
        shape_id=pick["shape_id"],
        color=pick["color"],
        velocity=tuple(ccfg.velocities[pick["velocity"]]),
        start_position=tuple(ccfg.start_positions[pick["start_position"]]),
        background_id=pick["background_id"],
        motion_pattern=ccfg.motion_patterns[pick["motion_pattern"]],
    )


def _canon(video: Video) -> Video:
    # metrics run on exactly what a saved sample file would reload (f32)
    return Video(frames=video.frames.astype("<f4").astype(np.float64),
                 fps=video.fps)


def _restore(run_path: str, tag: str, step, groups: dict[str, dict[str, Tensor]]) -> None:
    name = (f"ckpt_{tag}final.bin" if step == "final"
            else f"ckpt_{tag}step_{step:06d}.bin")
    path = os.path.join(run_path, name)
    if not os.path.exists(path):
        raise ConfigError(f"missing checkpoint {path}")
    _, arrays = load_checkpoint(path)
    merged = {f"{g}.{k}": t for g, d in groups.items() for k, t in d.items()}
    load_into_params(merged, arrays, prefix="param.")


def majority_trend(pairs: list[tuple[float, float]], op=None) -> tuple[list[bool], bool]:
    """Per-seed comparisons plus the majority verdict (>= half must win)."""
    if op is None:
        op = lambda a, b: a >= b
    wins = [bool(op(a, b)) for a, b in pairs]
    return wins, sum(wins) >= len(wins) // 2 + 1


def write_report(run_root: str, rows: list[dict], summary: dict) -> None:
    """CSV of scalar columns (one row per run/metric) plus the full JSON."""
    os.makedirs(run_root, exist_ok=True)
    if rows:
        cols = [k for k, v in rows[0].items() if np.isscalar(v)]
        with open(os.path.join(run_root, "report.csv"), "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
            w.writeheader()
            w.writerows(rows)
    with open(os.path.join(run_root, "report.json"), "w") as fh:
        json.dump({"rows": rows, "summary": summary}, fh, indent=1,
                  sort_keys=True)
        fh.write("\n")


def semantic_system(sem_art: RunArtifact, lat_art: RunArtifact, ae: AeParams,
                    ccfg: CorpusConfig, cfg: StageConfig) -> Callable:
    for art in (sem_art, lat_art):
        if "dit" not in art.models:
            raise ConfigError(
                f"run '{art.name}' carries no loaded checkpoint (models empty)")

    def sampler(spec: FactorSpec, seed: int, frames: int | None = None) -> Video:
        return _canon(generate(spec, ccfg, sem_art, lat_art, ae, cfg,
                               seed=seed, frames=frames))

    return sampler


def baseline_system(art: RunArtifact, ae: AeParams, ccfg: CorpusConfig,
                    cfg: StageConfig) -> Callable:
    needed = {"baseline_vae2stage": ("stage1", "stage2")}.get(art.stage, ("dit",))
    for key in needed:
        if key not in art.models:
            raise ConfigError(
                f"run '{art.name}' carries no loaded checkpoint ('{key}' missing)")

    def sampler(spec: FactorSpec, seed: int, frames: int | None = None) -> Video:
        return _canon(generate_baseline(art, spec, ccfg, ae, cfg, seed=seed,
                                        frames=frames))

    return sampler


# ------------------------------------------------- experiment: convergence


def convergence_experiment(corpus, ccfg: CorpusConfig, ae: AeParams,
                           sem_encoder: SemanticEncoderParams,
                           cfg: StageConfig, *, seeds=(0, 1, 2), n_eval: int = 8,
                           n_ckpts: int = 4, run_root: str | None = None) -> dict:
    """Grid-stage convergence in semantic space vs compressed-latent space.

    Both systems share the latent-stage recipe; what differs is the space the
    first (grid) stage must learn. factor_match is probed at every saved
    checkpoint with the second stage held at its final state.
    """
    if cfg.steps % n_ckpts:
        raise ConfigError(f"steps={cfg.steps} not divisible by n_ckpts={n_ckpts}")
    save_every = cfg.steps // n_ckpts
    ks = list(range(save_every, cfg.steps + 1, save_every))
    rows: list[dict] = []
    curves: dict[str, dict] = {"semantic": {}, "vae2stage": {}}
    finals: list[dict[str, float]] = []
    strips: dict[str, str] = {}
    own_tmp = run_root is None
    root = tempfile.mkdtemp(prefix="semflow-conv-") if own_tmp else run_root

    for s in seeds:
        scfg = replace(cfg, seed=s, save_every=save_every)
        sroot = os.path.join(root, f"seed{s}")
        lat_path = os.path.join(sroot, "latent_gen")
        sem_path = os.path.join(sroot, "sem_gen")
        os.makedirs(lat_path, exist_ok=True)
        os.makedirs(sem_path, exist_ok=True)

        _, comp, lat_art = train_latent_generator(
            corpus, ccfg, ae, sem_encoder, scfg, run_path=lat_path)
        comp.freeze()
        sem_dit, sem_art = train_semantic_generator(
            corpus, ccfg, sem_encoder, comp, scfg, run_path=sem_path)
        vae_art = train_baselines(
            corpus, ccfg, ae, scfg, reference=sem_art,
            which=("baseline_vae2stage",), run_root=sroot,
        )["baseline_vae2stage"]

        curves["semantic"][str(s)] = [list(r) for r in sem_art.curve]
        curves["vae2stage"][str(s)] = [list(r) for r in vae_art.aux_curves["stage1"]]

        erng = Rng(s).derive("conv-eval")
        specs = [sample_spec(ccfg, erng.derive(i)) for i in range(n_eval)]
        samplers = {
            "semantic": semantic_system(sem_art, lat_art, ae, ccfg, scfg),
            "vae2stage": baseline_system(vae_art, ae, ccfg, scfg),
        }
        restores = {
            "semantic": (sem_path, "", {"dit": sem_dit.params}),
            "vae2stage": (vae_art.run_path, "stage1_",
                          {"dit": vae_art.models["stage1"].params}),
        }
        loss_at = {
            "semantic": {r[0] + 1: r[1] for r in sem_art.curve},
            "vae2stage": {r[0] + 1: r[1] for r in vae_art.aux_curves["stage1"]},
        }
        final_fm: dict[str, float] = {}
        for system, sampler in samplers.items():
            path, tag, groups = restores[system]
            for k in ks:
                _restore(path, tag, "final" if k == cfg.steps else k, groups)
                clips = [sampler(sp, 7000 + 13 * i) for i, sp in enumerate(specs)]
                fm = factor_match(clips, specs, sem_encoder, ccfg)
                rows.append({"seed": s, "system": system, "step": k,
                             "factor_match": fm, "loss": loss_at[system][k]})
                if k == cfg.steps:
                    final_fm[system] = fm
                    strips[f"{system}_seed{s}"] = f"filmstrip_{system}_seed{s}.png"
                    save_filmstrip(os.path.join(root, strips[f"{system}_seed{s}"]),
                                   clips[0])
            _restore(path, tag, "final", groups)
        finals.append(final_fm)

    wins, majority = majority_trend(
        [(f["semantic"], f["vae2stage"]) for f in finals])
    summary = {
        "gate": "semantic factor_match >= vae2stage at final checkpoint",
        "final_factor_match": finals,
        "wins": wins,
        "majority": majority,
        "checkpoint_steps": ks,
        "filmstrips": strips,
    }
    report = {"experiment": "convergence", "steps": cfg.steps,
              "seeds": list(seeds), "rows": rows, "curves": curves,
              "summary": summary}
    if not own_tmp:
        write_report(root, rows, summary)
    return report


# -------------------------------------------- experiment: compression sweep


def compression_ablation(corpus, ccfg: CorpusConfig, ae: AeParams,
                         sem_encoder: SemanticEncoderParams, cfg: StageConfig,
                         *, d_cs=None, seeds=(0, 1, 2), n_eval: int = 8,
                         run_root: str | None = None) -> dict:
    """Full two-stage run per compression width at matched budgets.

    d_c == d doubles as the uncompressed control: the KL weight is forced to
    zero there so the compressor reduces to a plain linear projection.
    """
    d = sem_encoder.cfg.d
    if d_cs is None:
        d_cs = (d, d // 4, d // 16)
    if any(dc < 1 or dc > d for dc in d_cs):
        raise ConfigError(f"compression widths {d_cs} must lie in [1, {d}]")
    rows = []
    per_seed: dict[int, dict[int, dict[str, float]]] = {}
    strips: dict[str, str] = {}
    root = run_root

    for s in seeds:
        erng = Rng(s).derive("ablate-eval")
        specs = [sample_spec(ccfg, erng.derive(i)) for i in range(n_eval)]
        per_seed[s] = {}
        for dc in d_cs:
            scfg = replace(cfg, seed=s, d_c=int(dc),
                           lambda_kl=0.0 if dc == d else cfg.lambda_kl)
            _, comp, lat_art = train_latent_generator(
                corpus, ccfg, ae, sem_encoder, scfg)
            comp.freeze()
            _, sem_art = train_semantic_generator(
                corpus, ccfg, sem_encoder, comp, scfg)
            sampler = semantic_system(sem_art, lat_art, ae, ccfg, scfg)
            clips = [sampler(sp, 7000 + 13 * i) for i, sp in enumerate(specs)]
            row = {
                "seed": s, "d_c": int(dc),
                "factor_match": factor_match(clips, specs, sem_encoder, ccfg),
                "bg_consistency": metric_mean(bg_consistency, clips),
                "mean_luma": metric_mean(mean_luma, clips),
                "frame_diff_energy": metric_mean(frame_diff_energy, clips),
                "final_loss": float(np.mean([r[1] for r in sem_art.curve[-10:]])),
            }
            rows.append(row)
            per_seed[s][int(dc)] = row
            if root is not None and s == seeds[0]:
                strips[f"dc{dc}"] = f"filmstrip_dc{dc}.png"
                save_filmstrip(os.path.join(root, strips[f"dc{dc}"]), clips[0])

    smallest, largest = min(d_cs), max(d_cs)
    fm_pairs = [(per_seed[s][smallest]["factor_match"],
                 per_seed[s][largest]["factor_match"]) for s in seeds]
    bg_pairs = [(per_seed[s][smallest]["bg_consistency"],
                 per_seed[s][largest]["bg_consistency"]) for s in seeds]
    fm_wins, fm_major = majority_trend(fm_pairs)
    bg_wins, bg_major = majority_trend(bg_pairs)
    summary = {
        "gate": f"d_c={smallest} >= d_c={largest} on factor_match and "
                "bg_consistency",
        "factor_match_wins": fm_wins, "factor_match_majority": fm_major,
        "bg_consistency_wins": bg_wins, "bg_consistency_majority": bg_major,
        "widths": [int(x) for x in d_cs],
        "filmstrips": strips,
    }
    report = {"experiment": "compression", "seeds": list(seeds), "rows": rows,
              "summary": summary}
    if root is not None:
        write_report(root, rows, summary)
    return report


# --------------------------------------------------- experiment: long drift


def drift_experiment(systems: dict[str, Callable], ccfg: CorpusConfig,
                     *, n_clips: int = 4, f_long: int | None = None,
                     fraction: float = 0.15, spec_seed: int = 0,
                     metrics=("mean_luma", "frame_diff_energy", "bg_consistency"),
                     run_root: str | None = None) -> dict:
    """Mean first-vs-last segment drift per metric for each system.

    Every system renders the same specs with the same seeds, so rows differ
    only through the models.
    """
    if not systems:
        raise ConfigError("no systems to evaluate")
    f_long = ccfg.F_long if f_long is None else f_long
    srng = Rng(spec_seed).derive("drift-specs")
    specs = [sample_spec(ccfg, srng.derive(i)) for i in range(n_clips)]
    rows = []
    means: dict[str, dict[str, float]] = {}
    clips_by_system = {}
    for label, sampler in systems.items():
        clips = [sampler(sp, 5000 + 17 * i, f_long)
                 for i, sp in enumerate(specs)]
        clips_by_system[label] = clips
        means[label] = {}
        for mname in metrics:
            metric = METRICS[mname]
            deltas = [drift(c, metric, fraction).delta for c in clips]
            mean_delta = float(np.mean(deltas))
            means[label][mname] = mean_delta
            rows.append({"system": label, "metric": mname,
                         "mean_delta": mean_delta, "deltas": deltas})
    summary = {"fraction": fraction, "f_long": f_long, "n_clips": n_clips,
               "means": means,
               "filmstrips": {lb: f"filmstrip_{lb}.png" for lb in systems},
               "samples": {lb: f"samples/{lb}_clip0.bin" for lb in systems}}
    report = {"experiment": "drift", "rows": rows, "summary": summary}
    if run_root is not None:
        os.makedirs(os.path.join(run_root, "samples"), exist_ok=True)
        for label, clips in clips_by_system.items():
            save_filmstrip(os.path.join(run_root, f"filmstrip_{label}.png"),
                           clips[0], max_frames=16)
            save_video_bin(os.path.join(run_root, "samples",
                                        f"{label}_clip0.bin"), clips[0])
        write_report(run_root, rows, summary)
    return report
