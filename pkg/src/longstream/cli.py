"""Operator entry point: train, generate, serve, bench, ablate.

Every run resolves its configuration, writes a manifest (resolved
config plus the checkpoint content hash) into --out, and emits
machine-readable JSON/JSONL next to a short human summary on stdout.
Exit codes: 0 ok, 2 config error, 3 numeric failure, 4 missing artifact.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import checkpoint as ckpt
from .ablate import run_ablation
from .bench import run_bench
from .errors import (ConfigError, ContractError, LongstreamError,
                     MissingArtifactError, NumericFailure)
from .inference import DenoiseSchedule, SwitchPlan, interactive_generate
from .model import ModelConfig, init_params
from .toyworld import AnalyticTeacher
from .training import TrainConfig, build_prompt_pairs, streaming_train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_MISSING = 4


def _load_overrides(path):
    if path is None:
        return {}
    if not os.path.exists(path):
        raise MissingArtifactError(f"no config file at {path}")
    out = {}
    for line in open(path):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, val = line.partition("=")
        out[key.strip()] = val.strip()
    return out


def _coerce(cls_defaults, overrides):
    vals = {}
    for key, val in overrides.items():
        if key not in cls_defaults:
            raise ConfigError(f"unknown config key {key!r}")
        ref = cls_defaults[key]
        vals[key] = type(ref)(float(val)) if isinstance(ref, (int, float)) else val
    return vals


def _write_manifest(out_dir, command, config, checkpoint_path=None):
    os.makedirs(out_dir, exist_ok=True)
    manifest = {"command": command, "config": config}
    if checkpoint_path and os.path.exists(checkpoint_path):
        manifest["checkpoint_sha256"] = ckpt.content_hash(checkpoint_path)
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)


def _schedule(args):
    if getattr(args, "timesteps", None):
        return DenoiseSchedule(tuple(float(t) for t in args.timesteps.split(",")))
    return DenoiseSchedule()


def cmd_train(args):
    overrides = _load_overrides(args.config)
    train_keys = {f: getattr(TrainConfig(), f) for f in TrainConfig.__dataclass_fields__}
    model_keys = {f: getattr(ModelConfig(), f) for f in ModelConfig.__dataclass_fields__
                  if f != "layout"}
    model_keys.update({"window_frames": 9, "sink_frames": 3})
    train_over = _coerce(train_keys, {k: v for k, v in overrides.items() if k in train_keys})
    model_over = _coerce(model_keys, {k: v for k, v in overrides.items() if k in model_keys})
    unknown = set(overrides) - set(train_keys) - set(model_keys)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    tcfg = TrainConfig(**train_over)
    if args.seed is not None:
        tcfg.seed = args.seed
    if args.max_iters is not None:
        tcfg.max_iters = args.max_iters

    if args.resume:
        model = ckpt.load_model(args.resume)
    else:
        win = model_over.pop("window_frames", 9)
        sink = model_over.pop("sink_frames", 3)
        mcfg = ModelConfig(**model_over).with_layout(window_frames=win, sink_frames=sink)
        model = init_params(mcfg, tcfg.seed)

    schedule = _schedule(args)
    out = args.out
    os.makedirs(out, exist_ok=True)
    log_path = os.path.join(out, "train.jsonl")
    ckpt_path = os.path.join(out, "checkpoint.bin")
    teacher = AnalyticTeacher()
    pairs = build_prompt_pairs(64, seed=tcfg.seed + 10_000)

    log_f = open(log_path, "w")

    def on_iter(it, m, record):
        log_f.write(json.dumps(record) + "\n")
        if args.ckpt_every and (it + 1) % args.ckpt_every == 0:
            ckpt.save_model(m, os.path.join(out, f"checkpoint_iter{it + 1:06d}.bin"))

    try:
        records, _ = streaming_train(model, teacher, pairs, tcfg, schedule,
                                     on_iter=on_iter)
    except NumericFailure as e:
        log_f.close()
        np.savez(os.path.join(out, "nan_diagnostic.npz"), clip=e.clip)
        print(f"halted: {e} (diagnostic clip in nan_diagnostic.npz)", file=sys.stderr)
        return EXIT_NUMERIC
    log_f.close()
    ckpt.save_model(model, ckpt_path)
    _write_manifest(out, "train", {**train_over, "seed": tcfg.seed,
                                   "max_iters": tcfg.max_iters,
                                   "timesteps": list(schedule.timesteps)}, ckpt_path)
    losses = [r["loss"] for r in records]
    print(f"trained {len(records)} iters; loss first10={np.mean(losses[:10]):.5f} "
          f"last10={np.mean(losses[-10:]):.5f}")
    print(f"checkpoint: {ckpt_path}")
    return EXIT_OK


def cmd_generate(args):
    model = ckpt.load_model(args.checkpoint)
    schedule = _schedule(args)
    prompts = tuple(p.strip() for p in args.prompts.split(","))
    switches = tuple(int(s) for s in args.switch_frames.split(",")) if args.switch_frames else ()
    plan = SwitchPlan(prompts, switches, args.frames,
                      frames_per_chunk=model.config.frames_per_chunk)
    rng = np.random.default_rng(args.seed or 0)
    frames, events = interactive_generate(model, plan, schedule, args.strategy, rng)
    os.makedirs(args.out, exist_ok=True)
    np.savez(os.path.join(args.out, "frames.npz"), frames=frames)
    with open(os.path.join(args.out, "events.jsonl"), "w") as f:
        for e in events:
            f.write(json.dumps(e) + "\n")
    _write_manifest(args.out, "generate",
                    {"prompts": list(prompts), "switch_frames": list(switches),
                     "frames": args.frames, "strategy": args.strategy,
                     "seed": args.seed or 0}, args.checkpoint)
    chunk_lat = [e["latency_us"] for e in events if e["event"] == "chunk"]
    print(f"generated {args.frames} frames, median chunk latency "
          f"{np.median(chunk_lat) / 1000:.2f} ms, "
          f"{sum(e['event'] == 'recache' for e in events)} recache events")
    return EXIT_OK


def cmd_bench(args):
    model = ckpt.load_model(args.checkpoint)
    report = run_bench(model, _schedule(args), n_chunks=args.chunks,
                       seed=args.seed or 0, backends=not args.no_backends)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "bench.json"), "w") as f:
        json.dump(report, f, indent=2)
    _write_manifest(args.out, "bench", {"chunks": args.chunks, "seed": args.seed or 0},
                    args.checkpoint)
    w, fh = report["windowed"], report["full_history"]
    print(f"windowed   late/early = {w['late_over_early']:.2f} "
          f"(p50 {w['latency_us']['p50'] / 1000:.2f} ms, resident {w['resident_tokens_max']} tok)")
    print(f"full-hist  late/early = {fh['late_over_early']:.2f} "
          f"(p50 {fh['latency_us']['p50'] / 1000:.2f} ms, resident {fh['resident_tokens_max']} tok)")
    print(f"full/windowed at end  = {report['full_over_windowed_at_end']:.2f}")
    if "backends" in report and "numpy_over_numba" in report["backends"]:
        print(f"numpy/numba chunk time = {report['backends']['numpy_over_numba']:.2f}")
    return EXIT_OK


def cmd_ablate(args):
    model = ckpt.load_model(args.checkpoint)
    report = run_ablation(model, _schedule(args), n_seeds=args.seeds,
                          base_seed=args.seed or 0, grid_chunks=args.grid_chunks,
                          progress=lambda msg: print(f"  {msg}", file=sys.stderr))
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "ablation.json"), "w") as f:
        json.dump(report, f, indent=2)
    _write_manifest(args.out, "ablate", {"seeds": args.seeds, "seed": args.seed or 0},
                    args.checkpoint)
    print(f"{'cell':>24}  lag_med  jump_p90  drift_p90")
    for c in report["strategies"]:
        lag = "inf" if c["adherence_lag_median"] is None else f"{c['adherence_lag_median']:.1f}"
        print(f"{c['strategy']:>24}  {lag:>7}  {c['continuity_jump_p90']:.4f}    "
              f"{c['identity_drift_p90']:.4f}")
    for c in report["sink_window"]:
        name = f"W={c['window_frames']} S={c['sink_frames']}"
        print(f"{name:>24}  {'-':>7}  {'-':>8}  {c['identity_drift_p90']:.4f}")
    for k, v in report["summary"].items():
        print(f"summary.{k} = {v}")
    return EXIT_OK


def cmd_serve(args):
    from .service import serve
    registry_dir = args.checkpoint_dir or os.environ.get("LONGSTREAM_CHECKPOINT_DIR")
    if not registry_dir:
        raise ConfigError("need --checkpoint-dir or LONGSTREAM_CHECKPOINT_DIR")
    server = serve(registry_dir, args.bind)
    print(f"serving on tcp://{server.host}:{server.port} "
          f"and ws://{server.host}:{server.ws_port}")
    try:
        server.wait()
    except KeyboardInterrupt:
        server.stop()
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="longstream")
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp, checkpoint=True):
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", required=True)
        sp.add_argument("--config", default=None, help="key=value overrides file")
        sp.add_argument("--timesteps", default=None,
                        help="comma-separated descending denoise ladder")
        if checkpoint:
            sp.add_argument("--checkpoint", required=True)

    sp = sub.add_parser("train", help="streaming training run")
    common(sp, checkpoint=False)
    sp.add_argument("--max-iters", type=int, default=None)
    sp.add_argument("--resume", default=None, help="checkpoint to continue from")
    sp.add_argument("--ckpt-every", type=int, default=0)
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("generate", help="roll out a switch plan")
    common(sp)
    sp.add_argument("--prompts", required=True, help="comma-separated commands")
    sp.add_argument("--switch-frames", default="", help="comma-separated frame indices")
    sp.add_argument("--frames", type=int, required=True)
    sp.add_argument("--strategy", default="recache",
                    choices=("clear", "keep", "recache"))
    sp.set_defaults(fn=cmd_generate)

    sp = sub.add_parser("bench", help="latency/memory profile")
    common(sp)
    sp.add_argument("--chunks", type=int, default=200)
    sp.add_argument("--no-backends", action="store_true")
    sp.set_defaults(fn=cmd_bench)

    sp = sub.add_parser("ablate", help="strategy and sink/window ablations")
    common(sp)
    sp.add_argument("--seeds", type=int, default=64)
    sp.add_argument("--grid-chunks", type=int, default=60)
    sp.set_defaults(fn=cmd_ablate)

    sp = sub.add_parser("serve", help="interactive session server")
    sp.add_argument("--bind", default="127.0.0.1:8765")
    sp.add_argument("--checkpoint-dir", default=None)
    sp.set_defaults(fn=cmd_serve)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ContractError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifactError as e:
        print(f"missing artifact: {e}", file=sys.stderr)
        return EXIT_MISSING
    except NumericFailure as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except LongstreamError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
