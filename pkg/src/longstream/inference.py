"""Chunk-wise interactive rollout.

Per chunk: start from pure noise, run the few-step denoise ladder
(re-noising with fresh noise between steps), then run the context pass
that appends the chunk's K/V.  At a prompt switch the caches are either
cleared, kept as-is, or rebuilt from the most recent window of generated
frames under the new prompt (recache) - the three strategies the
ablation compares.  Every chunk/switch/recache emits one event record.
"""

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, DimensionError
from .model import denoise_forward, kv_append_forward
from .tensor import Tensor

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DenoiseSchedule:
    """Descending few-step ladder; first step is pure noise (t=1)."""

    timesteps: tuple = (1.0, 0.75, 0.5, 0.25)

    def __post_init__(self):
        ts = tuple(float(t) for t in self.timesteps)
        object.__setattr__(self, "timesteps", ts)
        if not ts or ts[0] != 1.0:
            raise ConfigError(f"schedule must start at t=1.0, got {ts}")
        if any(not (0.0 < t <= 1.0) for t in ts):
            raise ConfigError(f"timesteps must lie in (0, 1]: {ts}")
        if any(a <= b for a, b in zip(ts, ts[1:])):
            raise ConfigError(f"timesteps must be strictly descending: {ts}")

    @property
    def n_steps(self):
        return len(self.timesteps)

    def index_of(self, t):
        """Embedding index of a timestep: 0 is the context pass, 1..T the ladder."""
        if t == 0.0:
            return 0
        for i, ti in enumerate(self.timesteps):
            if ti == t:
                return self.n_steps - i
        raise ContractError(f"timestep {t} not on the schedule {self.timesteps}")

    @staticmethod
    def uniform(n_steps):
        return DenoiseSchedule(tuple(1.0 - j / n_steps for j in range(n_steps)))


@dataclass(frozen=True)
class SwitchPlan:
    """Prompt texts plus the chunk-aligned frame indices where they change."""

    prompts: tuple
    switch_frames: tuple
    total_frames: int
    frames_per_chunk: int = 3

    def __post_init__(self):
        object.__setattr__(self, "prompts", tuple(self.prompts))
        object.__setattr__(self, "switch_frames", tuple(int(s) for s in self.switch_frames))
        if len(self.prompts) != len(self.switch_frames) + 1:
            raise ConfigError(
                f"{len(self.prompts)} prompts need {len(self.prompts) - 1} switch frames, "
                f"got {len(self.switch_frames)}")
        if self.total_frames % self.frames_per_chunk:
            raise ConfigError("total_frames must be chunk-aligned")
        prev = -1
        for s in self.switch_frames:
            if s % self.frames_per_chunk:
                raise ContractError(f"switch frame {s} is not chunk-aligned")
            if not prev < s < self.total_frames:
                raise ConfigError(f"switch frames must be increasing and < {self.total_frames}")
            prev = s


def renoise(clean, eps, t):
    """Forward-noising operator: linear interpolation toward fresh noise.

    x_t = (1 - t) * clean + t * eps;  t=1 returns eps exactly.
    """
    if not 0.0 < t <= 1.0:
        raise ContractError(f"t={t} outside (0, 1]")
    eps_t = eps if isinstance(eps, Tensor) else Tensor(eps)
    x = clean if isinstance(clean, Tensor) else Tensor(clean)
    if x.shape != eps_t.shape:
        raise DimensionError(f"renoise shapes disagree: {x.shape} vs {eps_t.shape}")
    return T.add(T.scale(x, 1.0 - t), T.scale(eps_t, t))


def generate_next_chunk(model, caches, prompt_vec, schedule, rng, live=False,
                        counters=None, capture=None):
    """One chunk of few-step sampling.

    Draws the initial noise and every re-noising eps from ``rng``,
    appends the chunk's K/V via the context pass, and returns the clean
    chunk (a tape tensor when ``live`` and a graph is active).  When
    ``capture`` is a dict, the initial pure-noise draw is stored under
    "init_noise" (the training loss anchors from-scratch clips on it).
    """
    cfg = model.config
    shape = (cfg.frames_per_chunk * cfg.tokens_per_frame, cfg.latent_dim)
    x = Tensor(rng.standard_normal(shape))
    if capture is not None:
        capture["init_noise"] = x.data.copy()
    clean = None
    ladder = schedule.timesteps
    for step, t in enumerate(ladder):
        clean = denoise_forward(model, x, schedule.index_of(t), caches, prompt_vec)
        if counters is not None:
            counters["denoise"] = counters.get("denoise", 0) + 1
        if step < len(ladder) - 1:
            eps = rng.standard_normal(shape)
            x = renoise(clean, eps, ladder[step + 1])
    kv_append_forward(model, clean, caches, prompt_vec, live=live)
    if counters is not None:
        counters["append"] = counters.get("append", 0) + 1
    return clean


def recache(model, recent_frames, prompt_vec, start_frame_index, layout=None):
    """Rebuild fresh caches from the retained frames under a new prompt.

    ``recent_frames``: (n_frames * tpf, latent_dim), chronological and
    chunk-aligned; ``start_frame_index`` is the global index of its first
    frame so position slots keep their global meaning.  The first frames
    refill the sink.  Empty input degrades to clear-cache semantics.
    """
    lay = layout or model.config.layout
    caches = model.new_caches(lay)
    frames = np.asarray(recent_frames, dtype=np.float64)
    if frames.size == 0:
        log.warning("recache with no retained frames: falling back to cache clear")
        return caches
    tpf = model.config.tokens_per_frame
    fpc = model.config.frames_per_chunk
    n_frames = frames.shape[0] // tpf
    if frames.shape[0] % tpf or n_frames % fpc:
        raise ContractError(f"recache frames must be chunk-aligned, got {frames.shape}")
    for c in caches:
        c.next_frame_index = start_frame_index
    chunk_tokens = fpc * tpf
    for lo in range(0, frames.shape[0], chunk_tokens):
        kv_append_forward(model, Tensor(frames[lo:lo + chunk_tokens]), caches, prompt_vec)
    return caches


def recache_window(n_available_frames, layout):
    """Frames retained across a switch: the last min(W, available), chunk-aligned up."""
    fpc = layout.frames_per_chunk
    keep = min(layout.window_frames, n_available_frames)
    keep = min(int(math.ceil(keep / fpc)) * fpc, n_available_frames)
    return keep


STRATEGIES = ("clear", "keep", "recache")


def interactive_generate(model, plan, schedule, strategy, rng, layout=None,
                         encode_prompt=None):
    """Roll out ``plan.total_frames`` frames, applying ``strategy`` at switches.

    Returns (frames, events): frames is (N * tpf, latent_dim); events is
    a list of dicts, one per chunk plus one per switch and one per
    recache, in the shape the event log and the service stats use.
    """
    if strategy not in STRATEGIES:
        raise ConfigError(f"strategy must be one of {STRATEGIES}, got {strategy!r}")
    if encode_prompt is None:
        from .toyworld import encode_prompt as encode_prompt  # default task vocabulary
    cfg = model.config
    lay = layout or cfg.layout
    tpf, fpc = cfg.tokens_per_frame, cfg.frames_per_chunk
    n_frames = plan.total_frames
    frames = np.zeros((n_frames * tpf, cfg.latent_dim))
    events = []
    caches = model.new_caches(lay)
    switch_at = dict(zip(plan.switch_frames, plan.prompts[1:]))
    active = plan.prompts[0]
    active_vec = encode_prompt(active).vec

    for chunk_idx, start in enumerate(range(0, n_frames, fpc)):
        if start in switch_at:
            active = switch_at[start]
            active_vec = encode_prompt(active).vec
            events.append(_event(chunk_idx, start, 0, caches, active, "switch"))
            if strategy == "clear":
                for c in caches:
                    c.clear()
            elif strategy == "recache":
                keep = recache_window(start, lay)
                t0 = time.perf_counter()
                caches = recache(model, frames[(start - keep) * tpf:start * tpf],
                                 active_vec, start - keep, lay)
                dt = int((time.perf_counter() - t0) * 1e6)
                events.append(_event(chunk_idx, start, dt, caches, active, "recache"))
        t0 = time.perf_counter()
        chunk = generate_next_chunk(model, caches, active_vec, schedule, rng)
        dt = int((time.perf_counter() - t0) * 1e6)
        frames[start * tpf:(start + fpc) * tpf] = chunk.data
        events.append(_event(chunk_idx, start, dt, caches, active, "chunk"))
    return frames, events


def _event(chunk_idx, frame_start, latency_us, caches, prompt, kind):
    _, _, tokens = caches[0].resident_size()
    return {"chunk": chunk_idx, "frame_start": frame_start, "latency_us": latency_us,
            "resident_tokens": tokens, "prompt": prompt, "event": kind}
