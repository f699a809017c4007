"""Latency and memory profile of long rollouts.

Rolls a long single-prompt session under the sink+window layout and
under a full-history layout (no eviction), recording per-chunk latency
and resident K/V tokens.  The windowed path must stay flat while the
full-history baseline grows with position; the report also compares the
numba and numpy kernel backends on a short rollout.
"""

import time

import numpy as np

from . import kernels
from .attention import AttentionLayout
from .inference import DenoiseSchedule, SwitchPlan, interactive_generate
from .toyworld import VOCABULARY


def _percentiles(xs):
    xs = np.asarray(xs, dtype=np.float64)
    return {"p50": float(np.percentile(xs, 50)), "p90": float(np.percentile(xs, 90)),
            "p99": float(np.percentile(xs, 99)), "mean": float(xs.mean())}


def smoothed_latency(latencies, index, halfwidth=2):
    """Median over a small neighborhood; single samples are noisy."""
    lo = max(0, index - halfwidth)
    hi = min(len(latencies), index + halfwidth + 1)
    return float(np.median(latencies[lo:hi]))


def full_history_layout(config, n_chunks):
    """No eviction: the window covers the whole rollout, no pinned sink."""
    return AttentionLayout(frames_per_chunk=config.frames_per_chunk,
                           tokens_per_frame=config.tokens_per_frame,
                           window_frames=n_chunks * config.frames_per_chunk,
                           sink_frames=0)


def rollout_profile(model, schedule, n_chunks, seed, layout=None, prompt="right"):
    cfg = model.config
    plan = SwitchPlan((prompt,), (), n_chunks * cfg.frames_per_chunk,
                      frames_per_chunk=cfg.frames_per_chunk)
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    _, events = interactive_generate(model, plan, schedule, "keep", rng, layout=layout)
    wall = time.perf_counter() - t0
    chunk_events = [e for e in events if e["event"] == "chunk"]
    lat = [e["latency_us"] for e in chunk_events]
    tokens = [e["resident_tokens"] for e in chunk_events]
    return {"latencies_us": lat, "resident_tokens": tokens, "wall_s": wall}


def compare_backends(model, schedule, n_chunks=20, seed=0):
    """Mean per-chunk latency under each available kernel backend."""
    out = {}
    original = kernels.backend()
    try:
        for name in kernels.available_backends():
            kernels.set_backend(name)
            prof = rollout_profile(model, schedule, n_chunks, seed)
            out[name] = {"mean_chunk_us": float(np.mean(prof["latencies_us"])),
                         "chunks": n_chunks}
    finally:
        kernels.set_backend(original)
    if "numba" in out and "numpy" in out:
        out["numpy_over_numba"] = (out["numpy"]["mean_chunk_us"]
                                   / out["numba"]["mean_chunk_us"])
    return out


def run_bench(model, schedule=None, n_chunks=200, seed=0, backends=True):
    schedule = schedule or DenoiseSchedule()
    cfg = model.config
    lay = cfg.layout
    windowed = rollout_profile(model, schedule, n_chunks, seed)
    full = rollout_profile(model, schedule, n_chunks, seed,
                           layout=full_history_layout(cfg, n_chunks))
    w_lat, f_lat = windowed["latencies_us"], full["latencies_us"]
    probe_early, probe_late = 4, n_chunks - 1  # "chunk 5" and the last chunk
    report = {
        "chunks": n_chunks,
        "layout": {"window_frames": lay.window_frames, "sink_frames": lay.sink_frames,
                   "tokens_per_frame": lay.tokens_per_frame,
                   "frames_per_chunk": lay.frames_per_chunk},
        "windowed": {
            "latency_us": _percentiles(w_lat),
            "early_us": smoothed_latency(w_lat, probe_early),
            "late_us": smoothed_latency(w_lat, probe_late),
            "resident_tokens_max": max(windowed["resident_tokens"]),
            "resident_tokens_final": windowed["resident_tokens"][-1],
            "wall_s": windowed["wall_s"],
        },
        "full_history": {
            "latency_us": _percentiles(f_lat),
            "early_us": smoothed_latency(f_lat, probe_early),
            "late_us": smoothed_latency(f_lat, probe_late),
            "resident_tokens_max": max(full["resident_tokens"]),
            "wall_s": full["wall_s"],
        },
    }
    report["windowed"]["late_over_early"] = (
        report["windowed"]["late_us"] / report["windowed"]["early_us"])
    report["full_history"]["late_over_early"] = (
        report["full_history"]["late_us"] / report["full_history"]["early_us"])
    report["full_over_windowed_at_end"] = (
        report["full_history"]["late_us"] / report["windowed"]["late_us"])
    if backends:
        report["backends"] = compare_backends(model, schedule, seed=seed)
    return report
