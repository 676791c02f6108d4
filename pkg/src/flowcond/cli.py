"""Operator surface: synth, train, sample, curate, eval subcommands.

Every artifact-producing command writes a machine-readable provenance
record (flags, seed, package version) next to its output, and a fixed
seed in single-thread mode reproduces output bytes exactly.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

from . import _thread_env

_thread_env.pin_threads()  # honor FLOWCOND_THREADS before numpy loads

import numpy as np

from . import __version__
from .curate import CurationPolicy, run_pipeline
from .features import (
    FeatureMatrix,
    FormatError,
    generate_corpus,
    load_feature_matrix,
    load_phonemes,
    store_feature_matrix,
    SYNTH_KINDS,
)
from .infill import NV_DIM, EMO_DIM
from .metrics import aggregate_seeds, frame_cosine_sim
from .sampler import GuidanceConfig, assemble_prompt, integrate
from .seqmodel import (
    ModelConfig,
    PRESETS,
    TrainingDivergedError,
    VectorFieldModel,
    load_checkpoint,
    make_field_fn,
)
from .training import TrainSettings, load_corpus, train_loop


class CliError(Exception):
    """User-facing command error; printed without a traceback."""


def _write_provenance(path: Path, command: str, args: dict) -> None:
    record = {
        "command": command,
        "args": {k: v for k, v in sorted(args.items())},
        "package_version": __version__,
    }
    path.write_text(json.dumps(record, sort_keys=True) + "\n")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# -- synth ---------------------------------------------------------------------


def cmd_synth(args) -> int:
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise CliError(f"output directory {out} is not empty; pass --force to overwrite")
    generate_corpus(
        out,
        args.kind,
        args.count,
        args.frames,
        args.seed,
        feature_dim=args.feature_dim,
        frames_per_second=args.fps,
        n_phonemes=args.n_phonemes,
    )
    _write_provenance(
        out / "provenance.json",
        "synth",
        {
            "kind": args.kind,
            "count": args.count,
            "frames": args.frames,
            "seed": args.seed,
            "feature_dim": args.feature_dim,
            "fps": args.fps,
            "n_phonemes": args.n_phonemes,
        },
    )
    print(f"wrote {args.count} examples to {out}")
    return 0


# -- train ---------------------------------------------------------------------

_CONFIG_KEYS = {
    "preset": str,
    "steps": int,
    "batch_frames": int,
    "peak_lr": float,
    "warmup_steps": int,
    "sigma_min": float,
    "mask_ratio_lo": float,
    "mask_ratio_hi": float,
    "p_drop": float,
    "checkpoint_every": int,
    "seed": int,
    "ratios": str,
    "manifests": str,
}


def parse_config_file(path: str | Path) -> dict:
    """Plain key = value lines; '#' starts a comment."""
    out: dict = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _CONFIG_KEYS:
            raise CliError(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            out[key] = _CONFIG_KEYS[key](value)
        except ValueError as exc:
            raise CliError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    return out


def cmd_train(args) -> int:
    cfg_file = parse_config_file(args.config) if args.config else {}

    def pick(flag_value, key, default):
        if flag_value is not None:
            return flag_value  # flag wins over config file
        return cfg_file.get(key, default)

    manifests = list(args.manifest or [])
    if not manifests and "manifests" in cfg_file:
        manifests = [m.strip() for m in cfg_file["manifests"].split(",") if m.strip()]
    if not manifests:
        raise CliError("no training manifests given (--manifest or config 'manifests')")

    ratios_raw = pick(args.ratios, "ratios", None)
    if ratios_raw is None:
        ratios = [1.0 / len(manifests)] * len(manifests)
    else:
        ratios = [float(r) for r in str(ratios_raw).split(",")]
    if len(ratios) != len(manifests):
        raise CliError(f"{len(ratios)} ratios for {len(manifests)} manifests")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise CliError(f"mixing ratios must sum to 1, got {ratios}")

    preset = pick(args.preset, "preset", "desk")
    if preset not in PRESETS:
        raise CliError(f"unknown preset {preset!r}; available: {sorted(PRESETS)}")
    corpora = [load_corpus(m) for m in manifests]
    for manifest, corpus in zip(manifests, corpora):
        if not corpus:
            raise CliError(f"manifest {manifest} contains no records")
    feature_dim = corpora[0][0].features.shape[0]
    model_cfg = ModelConfig(
        **{
            **PRESETS[preset].__dict__,
            "feature_dim": feature_dim,
        }
    )

    settings = TrainSettings(
        steps=int(pick(args.steps, "steps", 200)),
        batch_frames=int(pick(args.batch_frames, "batch_frames", 768)),
        peak_lr=float(pick(args.peak_lr, "peak_lr", 1e-3)),
        warmup_steps=int(pick(args.warmup, "warmup_steps", 20)),
        sigma_min=float(pick(args.sigma_min, "sigma_min", 1e-5)),
        mask_ratio_lo=float(pick(None, "mask_ratio_lo", 0.7)),
        mask_ratio_hi=float(pick(None, "mask_ratio_hi", 1.0)),
        p_drop=float(pick(args.p_drop, "p_drop", 0.2)),
        checkpoint_every=int(pick(args.checkpoint_every, "checkpoint_every", 0)),
        seed=int(pick(args.seed, "seed", 0)),
    )

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    checkpoint = out / "checkpoint.fmck"
    log_path = out / "loss_log.txt"

    with open(log_path, "w") as log:
        def on_step(step, loss, lr):
            log.write(f"{step} {loss:.10e} {lr:.10e}\n")

        try:
            _, history, _ = train_loop(
                model_cfg,
                corpora,
                ratios,
                settings,
                checkpoint_path=checkpoint,
                on_step=on_step,
            )
        except TrainingDivergedError as exc:
            log.flush()
            raise CliError(
                f"{exc}; last good checkpoint retained at {checkpoint}"
            ) from exc

    _write_provenance(
        out / "provenance.json",
        "train",
        {
            "manifests": manifests,
            "ratios": ratios,
            "preset": preset,
            "seed": settings.seed,
            "steps": settings.steps,
            "batch_frames": settings.batch_frames,
            "peak_lr": settings.peak_lr,
            "warmup_steps": settings.warmup_steps,
            "sigma_min": settings.sigma_min,
            "p_drop": settings.p_drop,
            "threads": args.threads,
        },
    )
    final_loss = history[-1][1] if history else float("nan")
    print(f"trained {settings.steps} steps; final loss {final_loss:.6f}; checkpoint {checkpoint}")
    return 0


# -- sample --------------------------------------------------------------------


def cmd_sample(args) -> int:
    ck_path = Path(args.checkpoint)
    model_cfg, params = load_checkpoint(ck_path)
    model = VectorFieldModel(model_cfg)

    text_tokens = load_phonemes(args.text_phonemes)
    t_text = text_tokens.shape[0]
    if t_text < 1:
        raise CliError(f"text phoneme file {args.text_phonemes} is empty")

    spk_args = (args.spk_features, args.spk_phonemes, args.spk_nv, args.spk_emo)
    if any(spk_args) and not all(spk_args):
        raise CliError(
            "speaker prompt needs all of --spk-features --spk-phonemes --spk-nv --spk-emo"
        )
    if all(spk_args):
        spk_feats = load_feature_matrix(args.spk_features).values.astype(np.float64)
        if spk_feats.shape[0] != model_cfg.feature_dim:
            raise CliError(
                f"feature dim mismatch: prompt file has {spk_feats.shape[0]} rows, "
                f"checkpoint expects {model_cfg.feature_dim}"
            )
        spk_tokens = load_phonemes(args.spk_phonemes)
        spk_nv = load_feature_matrix(args.spk_nv).values.astype(np.float64)
        spk_emo = load_feature_matrix(args.spk_emo).values.astype(np.float64)
    else:
        f = model_cfg.feature_dim
        spk_feats = np.zeros((f, 0))
        spk_tokens = np.zeros(0, dtype=np.int64)
        spk_nv = np.zeros((NV_DIM, 0))
        spk_emo = np.zeros((EMO_DIM, 0))

    if args.nv_prompt:
        nv_prompt = load_feature_matrix(args.nv_prompt).values.astype(np.float64)
    elif args.zero_nv:
        nv_prompt = np.zeros((NV_DIM, t_text))
    else:
        raise CliError(
            "no nonverbal stream: pass --nv-prompt <fmat>, or --zero-nv for a zero placeholder"
        )
    if args.emo_prompt:
        emo_prompt = load_feature_matrix(args.emo_prompt).values.astype(np.float64)
    elif args.zero_emo:
        emo_prompt = np.zeros((EMO_DIM, t_text))
    else:
        raise CliError(
            "no emotion stream: pass --emo-prompt <fmat>, or --zero-emo for a zero placeholder"
        )

    prompt = assemble_prompt(
        spk_feats, spk_tokens, spk_nv, spk_emo, text_tokens, nv_prompt, emo_prompt
    )
    guidance = GuidanceConfig(strength=args.guidance, nfe=args.nfe, solver=args.solver)
    rng = np.random.default_rng(args.seed)
    generated = integrate(make_field_fn(model, params), prompt, guidance, rng)

    out = Path(args.out)
    store_feature_matrix(
        FeatureMatrix(generated.astype(np.float32), model_cfg.frames_per_second), out
    )
    sidecar = {
        "command": "sample",
        "checkpoint": str(ck_path),
        "checkpoint_sha256": _sha256(ck_path),
        "guidance": args.guidance,
        "nfe": args.nfe,
        "solver": args.solver,
        "seed": args.seed,
        "text_phonemes": str(args.text_phonemes),
        "spk_features": str(args.spk_features) if args.spk_features else None,
        "spk_phonemes": str(args.spk_phonemes) if args.spk_phonemes else None,
        "spk_nv": str(args.spk_nv) if args.spk_nv else None,
        "spk_emo": str(args.spk_emo) if args.spk_emo else None,
        "nv_prompt": str(args.nv_prompt) if args.nv_prompt else "zero",
        "emo_prompt": str(args.emo_prompt) if args.emo_prompt else "zero",
        "package_version": __version__,
    }
    Path(str(out) + ".json").write_text(json.dumps(sidecar, sort_keys=True) + "\n")
    print(f"wrote {generated.shape[1]} generated frames to {out}")
    return 0


# -- curate / eval ----------------------------------------------------------------


def cmd_curate(args) -> int:
    policy = CurationPolicy(ovlr_min=args.ovlr_min)
    report = run_pipeline(args.inp, args.out, policy)
    if args.report:
        payload = report.to_dict()
        payload["command"] = "curate"
        payload["args"] = {"in": str(args.inp), "out": str(args.out), "ovlr_min": args.ovlr_min}
        payload["package_version"] = __version__
        Path(args.report).write_text(json.dumps(payload, sort_keys=True) + "\n")
    print(
        f"retained {report.retained}/{report.total} "
        f"(emotion {report.emotion_gate}, quality {report.quality_gate}, "
        f"speaker {report.speaker_gate})"
    )
    return 0


def _load_trajectory(path: str) -> np.ndarray:
    return load_feature_matrix(path).values.astype(np.float64)


def cmd_eval_emo_sim(args) -> int:
    score = frame_cosine_sim(_load_trajectory(args.a), _load_trajectory(args.b))
    print(f"{score:.6f}")
    return 0


def cmd_eval_aro_val_sim(args) -> int:
    from .metrics import aro_val_sim

    score = aro_val_sim(_load_trajectory(args.a), _load_trajectory(args.b))
    print(f"{score:.6f}")
    return 0


def cmd_eval_report(args) -> int:
    seeds = [s.strip() for s in args.seeds.split(",") if s.strip()]
    if not seeds:
        raise CliError("--seeds must name at least one seed")
    pairs = []
    with open(args.pairs) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                pairs.append((obj["a"], obj["b"]))
            except (json.JSONDecodeError, KeyError) as exc:
                raise CliError(f"{args.pairs}:{lineno}: bad pair record ({exc})") from exc
    if not pairs:
        raise CliError(f"no pairs in {args.pairs}")

    scores_by_seed = {}
    for seed in seeds:
        scores = []
        for a_tpl, b_tpl in pairs:
            a = _load_trajectory(a_tpl.replace("{seed}", seed))
            b = _load_trajectory(b_tpl.replace("{seed}", seed))
            scores.append(frame_cosine_sim(a, b))
        scores_by_seed[seed] = scores
    report = aggregate_seeds(scores_by_seed)
    payload = {
        "per_pair": report.per_pair,
        "per_seed_mean": report.per_seed_mean,
        "mean": report.mean,
        "std": report.std,
        "seeds": seeds,
        "pairs_file": str(args.pairs),
        "package_version": __version__,
    }
    Path(args.out).write_text(json.dumps(payload, sort_keys=True) + "\n")
    print(f"mean {report.mean:.6f} std {report.std:.6f} over {len(seeds)} seeds")
    return 0


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowcond",
        description="Conditional flow-matching engine for frame-sequence infilling",
    )
    default_threads = int(os.environ.get("FLOWCOND_THREADS") or "1")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic oracle corpus")
    p.add_argument("--kind", choices=list(SYNTH_KINDS) + ["mixed"], default="mixed")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--frames", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.add_argument("--feature-dim", type=int, default=8)
    p.add_argument("--fps", type=float, default=100.0)
    p.add_argument("--n-phonemes", type=int, default=16)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the vector-field model")
    p.add_argument("--config", help="key = value config file; flags override")
    p.add_argument("--manifest", action="append", help="training manifest (repeatable)")
    p.add_argument("--ratios", help="comma-separated mixing ratios, one per manifest")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-frames", type=int)
    p.add_argument("--peak-lr", type=float)
    p.add_argument("--warmup", type=int)
    p.add_argument("--sigma-min", type=float)
    p.add_argument("--p-drop", type=float)
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, default=default_threads)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="generate frames from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--text-phonemes", required=True)
    p.add_argument("--spk-features")
    p.add_argument("--spk-phonemes")
    p.add_argument("--spk-nv")
    p.add_argument("--spk-emo")
    p.add_argument("--nv-prompt")
    p.add_argument("--zero-nv", action="store_true")
    p.add_argument("--emo-prompt")
    p.add_argument("--zero-emo", action="store_true")
    p.add_argument("--nfe", type=int, default=32)
    p.add_argument("--guidance", type=float, default=1.0)
    p.add_argument("--solver", choices=["euler", "midpoint"], default="euler")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=default_threads)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("curate", help="filter a manifest through the gates")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ovlr-min", type=float, default=3.0)
    p.add_argument("--report")
    p.set_defaults(func=cmd_curate)

    p = sub.add_parser("eval", help="similarity metrics")
    esub = p.add_subparsers(dest="eval_command", required=True)
    e = esub.add_parser("emo-sim", help="cosine-trajectory similarity of two feature files")
    e.add_argument("--a", required=True)
    e.add_argument("--b", required=True)
    e.set_defaults(func=cmd_eval_emo_sim)
    e = esub.add_parser("aro-val-sim", help="arousal/valence trajectory similarity")
    e.add_argument("--a", required=True)
    e.add_argument("--b", required=True)
    e.set_defaults(func=cmd_eval_aro_val_sim)
    e = esub.add_parser("report", help="score pairs across seeds and aggregate")
    e.add_argument("--pairs", required=True, help="JSONL of {a, b} path templates; '{seed}' is substituted")
    e.add_argument("--seeds", required=True, help="comma-separated seed names")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
