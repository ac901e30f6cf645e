"""Command-line entry point.

Eleven verbs cover the whole workflow: render a corpus, train the frozen
pieces, train the generators and their matched baselines, sample short and
long clips, and run the three evaluation studies. Every verb reads a flat
dotted-key JSON config plus `--set key=value` overrides (overrides apply
last), writes its resolved config next to its outputs, and is safe to
re-run: finished work is reused, interrupted training resumes from its last
checkpoint.

Exit codes: 0 ok, 2 config error, 3 missing dependency (corpus or
checkpoint not trained yet), 4 numeric failure. Failures print one line to
stderr of the form `error category=<kind>: <message>`.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict

from semflow import config as cfgmod
from semflow.artifacts import (
    LossLog,
    artifact_root,
    run_dir,
    save_filmstrip,
    save_video_bin,
    write_config_snapshot,
)
from semflow.autoencoder import load_ae, save_ae, train_autoencoder
from semflow.errors import ConfigError, DependencyError, NumericError
from semflow.evaluation import (
    baseline_system,
    compression_ablation,
    convergence_experiment,
    drift_experiment,
    mean_luma,
    sample_spec,
    semantic_system,
)
from semflow.numerics import Rng
from semflow.pipeline import (
    generate,
    generate_long,
    load_run,
    train_baselines,
    train_latent_generator,
    train_semantic_generator,
)
from semflow.semantics import load_encoder, pretrain_semantic_encoder, save_encoder
from semflow.synthdata import (
    corpus_digest,
    load_corpus,
    load_corpus_config,
    make_corpus,
    save_corpus,
)

_VERB_HELP = {
    "make-corpus": "render the synthetic factor corpus",
    "train-ae": "train and freeze the video autoencoder",
    "pretrain-sem": "pretrain and freeze the semantic encoder",
    "train-latent-gen": "train stage one (latents conditioned on semantics)",
    "train-sem-gen": "train stage two (semantic grids from factors)",
    "train-baseline": "train matched-budget baselines",
    "sample": "generate short clips from trained checkpoints",
    "sample-long": "generate long clips under windowed attention",
    "eval-drift": "long-horizon drift study: semantic route vs windowed baseline",
    "ablate-compression": "sweep semantic channel widths at matched budgets",
    "compare-spaces": "grid-stage convergence: semantic vs pooled-latent space",
}

_SEED_KEY = {
    "make-corpus": "corpus.seed",
    "train-ae": "ae.seed",
    "pretrain-sem": "pretrain.seed",
    "train-latent-gen": "stage.seed",
    "train-sem-gen": "stage.seed",
    "train-baseline": "stage.seed",
    "sample": "sample.seed",
    "sample-long": "sample.seed",
    "eval-drift": "eval.spec_seed",
    "ablate-compression": "stage.seed",
    "compare-spaces": "stage.seed",
}

_EXIT_NOTE = ("exit codes: 0 ok, 2 config error, 3 missing dependency, "
              "4 numeric failure")


# ----------------------------------------------------------------- plumbing


def _corpus_path(name: str) -> str:
    return os.path.join(artifact_root(), "corpora", name)


def _need_corpus(name: str) -> str:
    path = _corpus_path(name)
    if not os.path.isfile(os.path.join(path, "header.json")):
        raise DependencyError(
            f"corpus '{name}' not found at {path}; run make-corpus first"
        )
    return path


def _load_ae_run(name: str):
    path = os.path.join(run_dir(name, create=False), "ckpt_final.bin")
    if not os.path.isfile(path):
        raise DependencyError(
            f"autoencoder run '{name}' has no checkpoint at {path}; "
            "run train-ae first"
        )
    return load_ae(path)


def _load_encoder_run(name: str):
    path = os.path.join(run_dir(name, create=False), "ckpt_final.bin")
    if not os.path.isfile(path):
        raise DependencyError(
            f"encoder run '{name}' has no checkpoint at {path}; "
            "run pretrain-sem first"
        )
    return load_encoder(path)


def _load_gen_run(name: str):
    return load_run(run_dir(name, create=False))


def _write_resolved(dir_path: str, cfg: dict) -> None:
    os.makedirs(dir_path, exist_ok=True)
    body = {k: list(v) if isinstance(v, tuple) else v for k, v in cfg.items()}
    with open(os.path.join(dir_path, "resolved.json"), "w") as fh:
        json.dump(body, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _jsonable(obj) -> dict:
    return json.loads(json.dumps(obj, sort_keys=True, default=list))


# -------------------------------------------------------------------- verbs


def cmd_make_corpus(cfg: dict, explicit: set) -> int:
    ccfg = cfgmod.corpus_config(cfg)
    name = cfg["run.corpus"]
    path = _corpus_path(name)
    if os.path.isfile(os.path.join(path, "header.json")):
        if asdict(load_corpus_config(path)) != asdict(ccfg):
            raise ConfigError(
                f"corpus '{name}' already exists with a different config; "
                "choose another run.corpus name"
            )
        print(f"corpus '{name}' already rendered; reusing")
    else:
        corpus = make_corpus(ccfg)
        save_corpus(path, ccfg, corpus)
        print(f"corpus '{name}': {len(corpus)} clips of "
              f"{ccfg.F}x3x{ccfg.H}x{ccfg.W}")
    _write_resolved(path, cfg)
    print(f"corpus digest {corpus_digest(path)}")
    return 0


def cmd_train_ae(cfg: dict, explicit: set) -> int:
    path = _need_corpus(cfg["run.corpus"])
    acfg = cfgmod.ae_config(cfg)
    name = cfg["run.name"] or "ae"
    rp = run_dir(name)
    _write_resolved(rp, cfg)
    ck = os.path.join(rp, "ckpt_final.bin")
    if os.path.isfile(ck):
        ae = load_ae(ck)
        if asdict(ae.cfg) != asdict(acfg):
            raise ConfigError(
                f"run '{name}' holds an autoencoder trained under a different "
                "config; choose another run.name"
            )
        print(f"autoencoder '{name}' already trained; reusing")
        return 0
    _, corpus = load_corpus(path)
    log = LossLog(os.path.join(rp, "loss.csv"), ("step", "loss", "recon", "kl"))
    ae, curve = train_autoencoder(corpus, acfg, log=log)
    log.flush()
    save_ae(ck, ae)
    write_config_snapshot(rp, {"kind": "ae", "name": name, **asdict(acfg)})
    print(f"autoencoder '{name}': {acfg.steps} steps, "
          f"final loss {curve[-1][1]:.5f}")
    return 0


def cmd_pretrain_sem(cfg: dict, explicit: set) -> int:
    path = _need_corpus(cfg["run.corpus"])
    pcfg = cfgmod.pretrain_config(cfg)
    name = cfg["run.name"] or "encoder"
    rp = run_dir(name)
    _write_resolved(rp, cfg)
    ck = os.path.join(rp, "ckpt_final.bin")
    snap = _jsonable(asdict(pcfg))
    if os.path.isfile(ck):
        with open(os.path.join(rp, "config.json")) as fh:
            stored = json.load(fh)
        if {k: stored.get(k) for k in snap} != snap:
            raise ConfigError(
                f"run '{name}' holds an encoder trained under a different "
                "config; choose another run.name"
            )
        _, metrics = load_encoder(ck)
        print(f"encoder '{name}' already trained; reusing")
    else:
        ccfg, corpus = load_corpus(path)
        enc, metrics = pretrain_semantic_encoder(corpus, ccfg, pcfg)
        save_encoder(ck, enc, metrics)
        write_config_snapshot(rp, {"kind": "sem_encoder", "name": name, **snap})
        print(f"encoder '{name}': {pcfg.steps} steps")
    for k in sorted(metrics):
        print(f"  holdout {k} {metrics[k]:.4f}")
    return 0


def cmd_train_latent_gen(cfg: dict, explicit: set) -> int:
    ccfg, corpus = load_corpus(_need_corpus(cfg["run.corpus"]))
    ae = _load_ae_run(cfg["run.ae"])
    enc, _ = _load_encoder_run(cfg["run.encoder"])
    scfg = cfgmod.stage_config(cfg)
    name = cfg["run.name"] or "latent_gen"
    rp = run_dir(name)
    _write_resolved(rp, cfg)
    _, _, art = train_latent_generator(corpus, ccfg, ae, enc, scfg,
                                       run_path=rp, resume=True)
    print(f"latent generator '{name}': {len(art.curve)} steps, "
          f"final loss {art.curve[-1][1]:.5f}")
    return 0


def cmd_train_sem_gen(cfg: dict, explicit: set) -> int:
    ccfg, corpus = load_corpus(_need_corpus(cfg["run.corpus"]))
    enc, _ = _load_encoder_run(cfg["run.encoder"])
    lat = _load_gen_run(cfg["run.latent"])
    comp = lat.models.get("comp")
    if comp is None:
        raise ConfigError(
            f"run '{cfg['run.latent']}' carries no compressor; point "
            "run.latent at a finished stage-one run"
        )
    scfg = cfgmod.stage_config(cfg)
    name = cfg["run.name"] or "sem_gen"
    rp = run_dir(name)
    _write_resolved(rp, cfg)
    _, art = train_semantic_generator(corpus, ccfg, enc, comp, scfg,
                                      run_path=rp, resume=True)
    print(f"semantic generator '{name}': {len(art.curve)} steps, "
          f"final loss {art.curve[-1][1]:.5f}")
    return 0


def cmd_train_baseline(cfg: dict, explicit: set) -> int:
    ccfg, corpus = load_corpus(_need_corpus(cfg["run.corpus"]))
    ae = _load_ae_run(cfg["run.ae"])
    which_cfg = cfg["baseline.which"]
    stages = ("baseline_ct", "baseline_ct_swin", "baseline_vae2stage")
    which = stages if which_cfg == "all" else (which_cfg,)
    ref = _load_gen_run(cfg["run.reference"]) if cfg["run.reference"] else None
    scfg = cfgmod.stage_config(cfg)
    name = cfg["run.name"] or cfg["run.baselines"]
    root = run_dir(name)
    _write_resolved(root, cfg)
    outs = train_baselines(corpus, ccfg, ae, scfg, reference=ref, which=which,
                           run_root=root, resume=True)
    for stage, art in outs.items():
        print(f"{stage}: final loss {art.curve[-1][1]:.5f}")
    return 0


def _sampling_inputs(cfg: dict, explicit: set):
    ccfg = load_corpus_config(_need_corpus(cfg["run.corpus"]))
    sem = _load_gen_run(cfg["run.sem"])
    lat = _load_gen_run(cfg["run.latent"])
    ae = _load_ae_run(cfg["run.ae"])
    scfg = cfgmod.sampling_config(lat.config, cfg, explicit)
    return ccfg, sem, lat, ae, scfg


def cmd_sample(cfg: dict, explicit: set) -> int:
    ccfg, sem, lat, ae, scfg = _sampling_inputs(cfg, explicit)
    frames = cfg["sample.frames"] or None
    name = cfg["run.name"] or "samples"
    rp = run_dir(name)
    _write_resolved(rp, cfg)
    seed = cfg["sample.seed"]
    for i in range(cfg["sample.count"]):
        spec = sample_spec(ccfg, Rng(seed).derive("spec").derive(i))
        video = generate(spec, ccfg, sem, lat, ae, scfg,
                         seed=seed + 101 * i, frames=frames)
        stem = os.path.join(rp, "samples", f"clip_{i}")
        save_video_bin(stem + ".bin", video)
        save_filmstrip(stem + ".png", video)
        print(f"clip {i}: shape={spec.shape_id} color={spec.color} "
              f"background={spec.background_id} motion={spec.motion_pattern} "
              f"mean_luma={mean_luma(video.frames):.4f}")
    print(f"wrote {cfg['sample.count']} clips under "
          f"{os.path.join(rp, 'samples')}")
    return 0


def cmd_sample_long(cfg: dict, explicit: set) -> int:
    ccfg, sem, lat, ae, scfg = _sampling_inputs(cfg, explicit)
    f_long = cfg["sample.f_long"] or None
    name = cfg["run.name"] or "samples_long"
    rp = run_dir(name)
    _write_resolved(rp, cfg)
    seed = cfg["sample.seed"]
    report = None
    for i in range(cfg["sample.count"]):
        spec = sample_spec(ccfg, Rng(seed).derive("spec").derive(i))
        video, report = generate_long(spec, ccfg, sem, lat, ae, scfg,
                                      f_long=f_long, seed=seed + 101 * i)
        stem = os.path.join(rp, "samples", f"clip_{i}")
        save_video_bin(stem + ".bin", video)
        save_filmstrip(stem + ".png", video)
        print(f"clip {i}: shape={spec.shape_id} motion={spec.motion_pattern} "
              f"frames={video.frames.shape[0]}")
    with open(os.path.join(rp, "token_report.json"), "w") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(f"token accounting: frames={report['frames']} "
          f"semantic={report['n_semantic']} latent={report['n_latent']} "
          f"ratio={report['token_ratio']:.4f}")
    return 0


def cmd_eval_drift(cfg: dict, explicit: set) -> int:
    ccfg = load_corpus_config(_need_corpus(cfg["run.corpus"]))
    sem = _load_gen_run(cfg["run.sem"])
    lat = _load_gen_run(cfg["run.latent"])
    ae = _load_ae_run(cfg["run.ae"])
    swin = load_run(os.path.join(run_dir(cfg["run.baselines"], create=False),
                                 "baseline_ct_swin"))
    systems = {
        "semantic": semantic_system(
            sem, lat, ae, ccfg, cfgmod.sampling_config(lat.config, cfg, explicit)),
        "ct_swin": baseline_system(
            swin, ae, ccfg, cfgmod.sampling_config(swin.config, cfg, explicit)),
    }
    name = cfg["run.name"] or "eval_drift"
    root = run_dir(name)
    _write_resolved(root, cfg)
    report = drift_experiment(
        systems, ccfg, n_clips=cfg["eval.n_clips"],
        f_long=cfg["sample.f_long"] or None, fraction=cfg["eval.fraction"],
        spec_seed=cfg["eval.spec_seed"], run_root=root,
    )
    for label, per_metric in report["summary"]["means"].items():
        for metric, value in per_metric.items():
            print(f"{label:>10} {metric:<18} mean drift {value:.5f}")
    print(f"report at {os.path.join(root, 'report.json')}")
    return 0


def cmd_ablate_compression(cfg: dict, explicit: set) -> int:
    ccfg, corpus = load_corpus(_need_corpus(cfg["run.corpus"]))
    ae = _load_ae_run(cfg["run.ae"])
    enc, _ = _load_encoder_run(cfg["run.encoder"])
    scfg = cfgmod.stage_config(cfg)
    name = cfg["run.name"] or "ablate_compression"
    root = run_dir(name)
    _write_resolved(root, cfg)
    report = compression_ablation(
        corpus, ccfg, ae, enc, scfg, d_cs=cfg["eval.d_cs"] or None,
        seeds=cfg["eval.seeds"], n_eval=cfg["eval.n_eval"], run_root=root,
    )
    for row in report["rows"]:
        print(f"seed {row['seed']} d_c={row['d_c']:>3}: "
              f"factor_match {row['factor_match']:.3f}, "
              f"bg_consistency {row['bg_consistency']:.4f}, "
              f"final loss {row['final_loss']:.4f}")
    s = report["summary"]
    print(f"gate: {s['gate']}")
    print(f"factor_match majority: {s['factor_match_majority']}; "
          f"bg_consistency majority: {s['bg_consistency_majority']}")
    print(f"report at {os.path.join(root, 'report.json')}")
    return 0


def cmd_compare_spaces(cfg: dict, explicit: set) -> int:
    ccfg, corpus = load_corpus(_need_corpus(cfg["run.corpus"]))
    ae = _load_ae_run(cfg["run.ae"])
    enc, _ = _load_encoder_run(cfg["run.encoder"])
    scfg = cfgmod.stage_config(cfg)
    name = cfg["run.name"] or "compare_spaces"
    root = run_dir(name)
    _write_resolved(root, cfg)
    report = convergence_experiment(
        corpus, ccfg, ae, enc, scfg, seeds=cfg["eval.seeds"],
        n_eval=cfg["eval.n_eval"], n_ckpts=cfg["eval.n_ckpts"], run_root=root,
    )
    for row in report["rows"]:
        print(f"seed {row['seed']} {row['system']:>9} step {row['step']:>5}: "
              f"factor_match {row['factor_match']:.3f}, loss {row['loss']:.4f}")
    s = report["summary"]
    print(f"gate: {s['gate']}")
    print(f"per-seed wins {s['wins']}; majority: {s['majority']}")
    print(f"report at {os.path.join(root, 'report.json')}")
    return 0


_DISPATCH = {
    "make-corpus": cmd_make_corpus,
    "train-ae": cmd_train_ae,
    "pretrain-sem": cmd_pretrain_sem,
    "train-latent-gen": cmd_train_latent_gen,
    "train-sem-gen": cmd_train_sem_gen,
    "train-baseline": cmd_train_baseline,
    "sample": cmd_sample,
    "sample-long": cmd_sample_long,
    "eval-drift": cmd_eval_drift,
    "ablate-compression": cmd_ablate_compression,
    "compare-spaces": cmd_compare_spaces,
}


# ------------------------------------------------------------------ parsing


def _build_parser() -> argparse.ArgumentParser:
    epilog = cfgmod.describe() + "\n\n" + _EXIT_NOTE
    top = argparse.ArgumentParser(
        prog="semflow",
        description="two-stage semantic video generation, desk scale",
        epilog=epilog,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = top.add_subparsers(dest="verb", metavar="verb", required=True)
    for verb in _DISPATCH:
        p = sub.add_parser(
            verb, help=_VERB_HELP[verb], description=_VERB_HELP[verb],
            epilog=epilog, formatter_class=argparse.RawDescriptionHelpFormatter,
        )
        p.add_argument("--config", metavar="FILE", default=None,
                       help="flat dotted-key JSON config file")
        p.add_argument("--set", metavar="KEY=VALUE", action="append",
                       dest="overrides", default=[],
                       help="config override, applied after --config "
                            "(repeatable)")
        p.add_argument("--seed", type=int, default=None,
                       help=f"shorthand for {_SEED_KEY[verb]}")
        p.add_argument("--run", default=None, metavar="NAME",
                       help="shorthand for run.name")
        p.add_argument("--artifacts", default=None, metavar="DIR",
                       help="artifact root (default $SEMFLOW_ARTIFACTS "
                            "or ./artifacts)")
    return top


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # argparse: --help exits 0, bad usage exits 2
        code = e.code if isinstance(e.code, int) else (0 if e.code is None else 2)
        return code
    if args.artifacts:
        os.environ["SEMFLOW_ARTIFACTS"] = args.artifacts
    try:
        cfg, explicit = cfgmod.resolve(args.config, args.overrides)
        if args.seed is not None:
            cfg[_SEED_KEY[args.verb]] = args.seed
            explicit.add(_SEED_KEY[args.verb])
        if args.run is not None:
            cfg["run.name"] = args.run
            explicit.add("run.name")
        return _DISPATCH[args.verb](cfg, explicit)
    except DependencyError as e:
        print(f"error category=dependency: {e}", file=sys.stderr)
        return 3
    except NumericError as e:
        print(f"error category=numeric: {e}", file=sys.stderr)
        return 4
    except ConfigError as e:
        print(f"error category=config: {e}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
