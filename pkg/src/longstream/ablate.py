"""Cache-strategy and sink/window ablations over seeded rollouts.

Two families of cells: the three switch strategies evaluated on short
one-switch rollouts (adherence lag, continuity jump), and a grid of
(window, sink) layouts evaluated on long single-prompt rollouts
(identity drift).  Every cell runs the same per-seed prompt draws and
noise stream, so cells differ only in the thing being ablated.
"""

import numpy as np

from .attention import AttentionLayout
from .inference import STRATEGIES, SwitchPlan, interactive_generate
from .toyworld import (VOCABULARY, adherence_lag, continuity_jump,
                       evaluation_report, identity_drift)

STRATEGY_FRAMES = 48
STRATEGY_SWITCH = 24
GRID_CHUNKS = 60
WINDOW_GRID = (3, 6, 9, 15, 21)
SINK_GRID = (0, 3)


def _seed_rng(base_seed, index):
    return np.random.default_rng([base_seed, index])


def strategy_rollout(model, schedule, strategy, seed_index, base_seed=0,
                     n_frames=STRATEGY_FRAMES, switch_frame=STRATEGY_SWITCH):
    """One seeded one-switch rollout; same draws for every strategy."""
    rng = _seed_rng(base_seed, seed_index)
    p = VOCABULARY[int(rng.integers(len(VOCABULARY)))]
    others = [c for c in VOCABULARY if c != p]
    p_next = others[int(rng.integers(len(others)))]
    plan = SwitchPlan((p, p_next), (switch_frame,), n_frames,
                      frames_per_chunk=model.config.frames_per_chunk)
    frames, events = interactive_generate(model, plan, schedule, strategy, rng)
    return frames, p_next, events


def evaluate_strategy_cell(model, schedule, strategy, n_seeds, base_seed=0,
                           n_frames=STRATEGY_FRAMES, switch_frame=STRATEGY_SWITCH):
    lags, jumps, drifts = [], [], []
    for i in range(n_seeds):
        frames, p_next, _ = strategy_rollout(model, schedule, strategy, i, base_seed,
                                             n_frames, switch_frame)
        lags.append(adherence_lag(frames, switch_frame, p_next))
        jumps.append(continuity_jump(frames, switch_frame,
                                     model.config.frames_per_chunk))
        drifts.append(identity_drift(frames))
    report = evaluation_report(strategy, lags, jumps, drifts)
    report["lags"] = [None if not np.isfinite(v) else float(v) for v in lags]
    report["jumps"] = [float(v) for v in jumps]
    return report


def evaluate_sink_window_cell(model, schedule, window_frames, sink_frames, n_seeds,
                              base_seed=0, n_chunks=GRID_CHUNKS):
    cfg = model.config
    layout = AttentionLayout(frames_per_chunk=cfg.frames_per_chunk,
                             tokens_per_frame=cfg.tokens_per_frame,
                             window_frames=window_frames, sink_frames=sink_frames)
    moving = [c for c in VOCABULARY if c != "stop"]
    drifts = []
    for i in range(n_seeds):
        rng = _seed_rng(base_seed + 1000, i)
        prompt = moving[int(rng.integers(len(moving)))]
        plan = SwitchPlan((prompt,), (), n_chunks * cfg.frames_per_chunk,
                          frames_per_chunk=cfg.frames_per_chunk)
        frames, _ = interactive_generate(model, plan, schedule, "keep", rng,
                                         layout=layout)
        drifts.append(identity_drift(frames))
    report = evaluation_report("none", [], [], drifts)
    report.update({"window_frames": window_frames, "sink_frames": sink_frames,
                   "seeds": n_seeds})
    return report


def run_ablation(model, schedule, n_seeds=64, base_seed=0, window_grid=WINDOW_GRID,
                 sink_grid=SINK_GRID, grid_chunks=GRID_CHUNKS, progress=None):
    """The full ablation: strategy cells plus the (window, sink) grid."""
    strategies = []
    for s in STRATEGIES:
        strategies.append(evaluate_strategy_cell(model, schedule, s, n_seeds, base_seed))
        if progress:
            progress(f"strategy cell {s} done")
    grid = []
    for sink in sink_grid:
        for win in window_grid:
            grid.append(evaluate_sink_window_cell(model, schedule, win, sink, n_seeds,
                                                  base_seed, n_chunks=grid_chunks))
            if progress:
                progress(f"grid cell W={win} S={sink} done")
    return {"strategies": strategies, "sink_window": grid,
            "summary": summarize(strategies, grid)}


def _cell(grid, win, sink):
    for c in grid:
        if c["window_frames"] == win and c["sink_frames"] == sink:
            return c
    return None


def summarize(strategies, grid):
    """Qualitative pattern checks over the raw cell reports."""
    by_name = {c["strategy"]: c for c in strategies}
    out = {}
    if {"recache", "keep", "clear"} <= set(by_name):
        lag_r = by_name["recache"]["adherence_lag_median"]
        lag_k = by_name["keep"]["adherence_lag_median"]
        jump_r = by_name["recache"]["continuity_jump_p90"]
        jump_c = by_name["clear"]["continuity_jump_p90"]
        out["recache_beats_keep_on_adherence"] = (
            lag_r is not None and (lag_k is None or lag_r <= lag_k))
        out["recache_beats_clear_on_continuity"] = (
            jump_r is not None and jump_c is not None and jump_r <= jump_c)
        pairs = zip(by_name["recache"]["lags"], by_name["keep"]["lags"])
        wins = sum(1 for r, k in pairs
                   if (k is None and r is not None) or
                      (k is not None and r is not None and r < k))
        out["recache_adherence_win_fraction_vs_keep"] = wins / max(
            1, len(by_name["recache"]["lags"]))
    drifts_s0 = [(w, _cell(grid, w, 0)) for w in WINDOW_GRID if _cell(grid, w, 0)]
    if len(drifts_s0) >= 2:
        vals = [c["identity_drift_p90"] for _, c in drifts_s0]
        inversions = sum(1 for a, b in zip(vals, vals[1:]) if b > a)
        out["drift_vs_window_inversions_at_s0"] = inversions
    best = _cell(grid, 21, 0)
    sinky = _cell(grid, 9, 3)
    if best and sinky and best["identity_drift_p90"]:
        out["sink_drift_ratio_w9s3_over_w21s0"] = (
            sinky["identity_drift_p90"] / best["identity_drift_p90"])
    return out
