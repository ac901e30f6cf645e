"""Flat dotted-key configuration shared by every command-line verb.

One global registry: each key carries a default, a value kind, and a
one-line description (surfaced by --help). Config files are plain JSON
objects whose keys are exactly these dotted names; `key=value` overrides
apply last. Unknown keys are rejected loudly, never ignored.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

from semflow.autoencoder import AeConfig
from semflow.errors import ConfigError
from semflow.pipeline import StageConfig
from semflow.semantics import PretrainConfig, SemanticConfig
from semflow.synthdata import CorpusConfig


@dataclass(frozen=True)
class _Key:
    default: object
    kind: str  # int | float | str | bool | ints
    help: str


def _k(default, kind, help) -> _Key:
    return _Key(default, kind, help)


REGISTRY: dict[str, _Key] = {
    # ------------------------------------------------------------- corpus
    "corpus.num_clips": _k(64, "int", "clips in the corpus"),
    "corpus.F": _k(16, "int", "frames per training clip"),
    "corpus.F_long": _k(128, "int", "frame budget long generation must cover"),
    "corpus.H": _k(32, "int", "frame height in pixels"),
    "corpus.W": _k(32, "int", "frame width in pixels"),
    "corpus.fps": _k(8.0, "float", "clip frame rate"),
    "corpus.texture_noise": _k(0.05, "float", "per-pixel texture noise amplitude"),
    "corpus.seed": _k(0, "int", "corpus generation seed"),
    # -------------------------------------------------------- autoencoder
    "ae.f_t": _k(2, "int", "temporal patch (frames per latent step)"),
    "ae.f_s": _k(4, "int", "spatial patch side"),
    "ae.c_z": _k(8, "int", "latent channels per token"),
    "ae.hidden": _k(128, "int", "autoencoder hidden width"),
    "ae.n_blocks": _k(2, "int", "residual blocks per autoencoder side"),
    "ae.steps": _k(3000, "int", "autoencoder training steps"),
    "ae.batch": _k(4, "int", "autoencoder batch size (clips)"),
    "ae.lr": _k(2e-3, "float", "autoencoder learning rate"),
    "ae.beta": _k(1e-4, "float", "autoencoder KL weight"),
    "ae.seed": _k(0, "int", "autoencoder training seed"),
    # --------------------------------------------------- semantic encoder
    "sem.d": _k(64, "int", "raw semantic token width"),
    "sem.p_s": _k(8, "int", "semantic spatial patch side"),
    "sem.fps_ratio": _k(4, "int", "clip fps over semantic fps"),
    "pretrain.steps": _k(5000, "int", "encoder pretraining steps"),
    "pretrain.batch": _k(16, "int", "encoder pretraining batch size"),
    "pretrain.lr": _k(3e-3, "float", "encoder pretraining learning rate"),
    "pretrain.holdout_fraction": _k(0.2, "float",
                                    "fraction of clips held out for probes"),
    "pretrain.consistency_weight": _k(35.0, "float",
                                      "two-view token consistency weight"),
    "pretrain.seed": _k(0, "int", "encoder pretraining seed"),
    # ---------------------------------------------------- generator stages
    "stage.steps": _k(400, "int", "generator training steps"),
    "stage.batch": _k(4, "int", "generator batch size (clips)"),
    "stage.lr": _k(1e-3, "float", "generator learning rate"),
    "stage.layout_mode": _k("full", "str",
                            "attention layout: full | swin_interleaved"),
    "stage.T_w": _k(4, "int", "temporal window width under windowed attention"),
    "stage.d_c": _k(16, "int", "compressed semantic channel width"),
    "stage.noise_level": _k(0.1, "float",
                            "semantic corruption level in [0, 1] at sampling"),
    "stage.lambda_kl": _k(1e-3, "float", "compressor KL weight (stage one)"),
    "stage.c_model": _k(64, "int", "velocity model width"),
    "stage.n_blocks": _k(4, "int", "velocity model depth"),
    "stage.n_heads": _k(4, "int", "attention heads"),
    "stage.mlp_ratio": _k(4, "int", "MLP expansion factor"),
    "stage.num_sample_steps": _k(50, "int", "Euler steps per sampling pass"),
    "stage.save_every": _k(0, "int",
                           "periodic checkpoint interval in steps (0 = final only)"),
    "stage.seed": _k(0, "int", "generator training seed"),
    # ------------------------------------------------------------ sampling
    "sample.count": _k(4, "int", "clips to sample"),
    "sample.frames": _k(0, "int", "frames per sampled clip (0 = corpus F)"),
    "sample.f_long": _k(0, "int", "frames for long sampling (0 = corpus F_long)"),
    "sample.seed": _k(0, "int", "sampling seed"),
    # ---------------------------------------------------------- evaluation
    "eval.n_eval": _k(8, "int", "clips generated per evaluation point"),
    "eval.n_ckpts": _k(4, "int", "checkpoints probed along each training run"),
    "eval.seeds": _k((0, 1, 2), "ints", "comma-separated training seeds"),
    "eval.d_cs": _k((), "ints",
                    "comma-separated channel widths (empty = d, d/4, d/16)"),
    "eval.n_clips": _k(4, "int", "long clips per system in the drift study"),
    "eval.fraction": _k(0.15, "float", "leading/trailing segment fraction"),
    "eval.spec_seed": _k(0, "int", "seed for evaluation factor draws"),
    # -------------------------------------------------------- run wiring
    "run.name": _k("", "str", "output run name (empty = verb default)"),
    "run.corpus": _k("corpus", "str", "corpus name to read or write"),
    "run.ae": _k("ae", "str", "autoencoder run to load"),
    "run.encoder": _k("encoder", "str", "semantic encoder run to load"),
    "run.latent": _k("latent_gen", "str", "stage-one (latent) run to load"),
    "run.sem": _k("sem_gen", "str", "stage-two (semantic) run to load"),
    "run.baselines": _k("baselines", "str", "baseline run group to read or write"),
    "run.reference": _k("", "str",
                        "run whose budget pins baseline fairness (empty = none)"),
    "baseline.which": _k("all", "str",
                         "baseline_ct | baseline_ct_swin | baseline_vae2stage | all"),
}


def defaults() -> dict:
    return {name: key.default for name, key in REGISTRY.items()}


def _parse_text(name: str, kind: str, text: str):
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "str":
            return text
        if kind == "bool":
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if kind == "ints":
            if text.strip() == "":
                return ()
            return tuple(int(p) for p in text.split(","))
    except ValueError as e:
        raise ConfigError(f"config key '{name}' expects {kind}: {e}") from e
    raise ConfigError(f"config key '{name}' has unknown kind '{kind}'")


def coerce(name: str, value) -> object:
    """Validate one key's value (from a JSON file or already-typed source)."""
    if name not in REGISTRY:
        raise ConfigError(f"unknown config key '{name}'")
    kind = REGISTRY[name].kind
    if isinstance(value, str):
        return _parse_text(name, kind, value)
    if kind == "int" and isinstance(value, int) and not isinstance(value, bool):
        return value
    if kind == "float" and isinstance(value, (int, float)) \
            and not isinstance(value, bool):
        return float(value)
    if kind == "bool" and isinstance(value, bool):
        return value
    if kind == "ints" and isinstance(value, (list, tuple)) \
            and all(isinstance(v, int) and not isinstance(v, bool) for v in value):
        return tuple(value)
    raise ConfigError(
        f"config key '{name}' expects {kind}, got {type(value).__name__} {value!r}"
    )


def load_file(path: str) -> dict:
    if not os.path.isfile(path):
        raise ConfigError(f"config file '{path}' does not exist")
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file '{path}' is not valid JSON: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"config file '{path}' must hold a JSON object")
    out = {}
    for name, value in raw.items():
        if isinstance(value, dict):
            raise ConfigError(
                f"config key '{name}' is nested; use flat dotted keys"
            )
        out[name] = coerce(name, value)
    return out


def parse_override(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise ConfigError(f"override '{text}' is not of the form key=value")
    name, value = text.split("=", 1)
    name = name.strip()
    if name not in REGISTRY:
        raise ConfigError(f"unknown config key '{name}'")
    return name, _parse_text(name, REGISTRY[name].kind, value.strip())


def resolve(path: str | None, overrides: list[str]) -> tuple[dict, set]:
    """Defaults <- file <- overrides. Returns (config, explicitly set keys)."""
    cfg = defaults()
    explicit: set[str] = set()
    if path is not None:
        for name, value in load_file(path).items():
            cfg[name] = value
            explicit.add(name)
    for text in overrides:
        name, value = parse_override(text)
        cfg[name] = value
        explicit.add(name)
    return cfg, explicit


def describe() -> str:
    width = max(len(n) for n in REGISTRY)
    lines = ["config keys (defaults in brackets):"]
    for name in REGISTRY:
        key = REGISTRY[name]
        if key.kind == "ints":
            shown = ",".join(str(v) for v in key.default) or "''"
        elif key.default == "":
            shown = "''"
        else:
            shown = key.default
        lines.append(f"  {name:<{width}}  {key.help} [{shown}]")
    return "\n".join(lines)


# ------------------------------------------------- dataclass constructors


def corpus_config(cfg: dict) -> CorpusConfig:
    c = CorpusConfig(
        num_clips=cfg["corpus.num_clips"], F=cfg["corpus.F"],
        F_long=cfg["corpus.F_long"], H=cfg["corpus.H"], W=cfg["corpus.W"],
        fps=cfg["corpus.fps"], texture_noise=cfg["corpus.texture_noise"],
        seed=cfg["corpus.seed"],
    )
    c.validate()
    return c


def ae_config(cfg: dict) -> AeConfig:
    a = AeConfig(
        f_t=cfg["ae.f_t"], f_s=cfg["ae.f_s"], c_z=cfg["ae.c_z"],
        hidden=cfg["ae.hidden"], n_blocks=cfg["ae.n_blocks"],
        steps=cfg["ae.steps"], batch=cfg["ae.batch"], lr=cfg["ae.lr"],
        beta=cfg["ae.beta"], seed=cfg["ae.seed"],
    )
    a.validate()
    return a


def pretrain_config(cfg: dict) -> PretrainConfig:
    # d_c here is a placeholder: the encoder trunk never consumes it, and the
    # generating stages build their own compressor at stage.d_c
    sem = SemanticConfig(d=cfg["sem.d"], d_c=cfg["sem.d"], p_s=cfg["sem.p_s"],
                         fps_ratio=cfg["sem.fps_ratio"])
    sem.validate()
    return PretrainConfig(
        steps=cfg["pretrain.steps"], batch=cfg["pretrain.batch"],
        lr=cfg["pretrain.lr"], seed=cfg["pretrain.seed"],
        holdout_fraction=cfg["pretrain.holdout_fraction"],
        consistency_weight=cfg["pretrain.consistency_weight"], sem=sem,
    )


def stage_config(cfg: dict) -> StageConfig:
    s = StageConfig(
        steps=cfg["stage.steps"], batch=cfg["stage.batch"], lr=cfg["stage.lr"],
        layout_mode=cfg["stage.layout_mode"], T_w=cfg["stage.T_w"],
        d_c=cfg["stage.d_c"], noise_level=cfg["stage.noise_level"],
        lambda_kl=cfg["stage.lambda_kl"], seed=cfg["stage.seed"],
        c_model=cfg["stage.c_model"], n_blocks=cfg["stage.n_blocks"],
        n_heads=cfg["stage.n_heads"], mlp_ratio=cfg["stage.mlp_ratio"],
        num_sample_steps=cfg["stage.num_sample_steps"],
        save_every=cfg["stage.save_every"],
    )
    s.validate()
    return s


def sampling_config(run_config: dict, cfg: dict, explicit: set) -> StageConfig:
    """Sampling settings come from the trained run's record; only keys the
    user explicitly set override them (so a windowed run samples windowed
    without re-stating its training config)."""
    fields = ("steps", "batch", "lr", "layout_mode", "T_w", "d_c",
              "noise_level", "lambda_kl", "seed", "c_model", "n_blocks",
              "n_heads", "mlp_ratio", "num_sample_steps", "save_every")
    merged = dict(cfg)
    for f in fields:
        key = f"stage.{f}"
        if key not in explicit and f in run_config:
            merged[key] = coerce(key, run_config[f])
    return stage_config(merged)
