"""The two attention paths.

``windowed_sink_attention`` is the production path: queries of one chunk
attend a gathered key set = pinned sink frames + the tail of the rolling
window + the chunk itself.  ``full_attention_reference`` is the oracle: a
dense masked softmax attention over the whole sequence, kept independent
of the kernel backends so the two paths can check each other.

Receptive-field rule: a query in frame q sees sink frames plus the last
``window_frames`` frames up to and including its own frame.  Causality is
chunk-granular (a chunk is denoised jointly), so mask rows are built from
the chunk's *last* frame and the whole own chunk is always visible.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from . import tensor as T
from .errors import ConfigError, ContractError, DimensionError
from .tensor import Tensor


@dataclass(frozen=True)
class AttentionLayout:
    frames_per_chunk: int = 3
    tokens_per_frame: int = 4
    window_frames: int = 9
    sink_frames: int = 3

    def __post_init__(self):
        if self.frames_per_chunk < 1 or self.tokens_per_frame < 1 or self.window_frames < 1:
            raise ConfigError(f"layout sizes must be positive: {self}")
        if self.sink_frames < 0:
            raise ConfigError("sink_frames must be >= 0")


def allowed_keys(query_frame_index, layout, total_frames):
    """Frame indices attendable by a query at frame-level causality.

    {0..S-1} ∪ {max(S, q-W+1) .. q}, clipped to existing frames; ascending.
    """
    q = query_frame_index
    if not 0 <= q < total_frames:
        raise ContractError(f"query frame {q} outside [0, {total_frames})")
    s, w = layout.sink_frames, layout.window_frames
    sink = list(range(min(s, q + 1)))
    lo = max(s, q - w + 1)
    window = list(range(lo, q + 1)) if lo <= q else []
    return sink + window


def chunk_last_frame(frame_index, layout, total_frames):
    c0 = (frame_index // layout.frames_per_chunk) * layout.frames_per_chunk
    return min(c0 + layout.frames_per_chunk - 1, total_frames - 1)


def frame_mask(total_frames, layout):
    """(F, F) boolean mask at chunk-granular causality.

    Row q = allowed_keys(last frame of q's chunk) plus q's own chunk.
    """
    mask = np.zeros((total_frames, total_frames), dtype=bool)
    fpc = layout.frames_per_chunk
    for q in range(total_frames):
        c1 = chunk_last_frame(q, layout, total_frames)
        for f in allowed_keys(c1, layout, total_frames):
            mask[q, f] = True
        c0 = (q // fpc) * fpc
        mask[q, c0:min(c0 + fpc, total_frames)] = True
    return mask


def token_mask(total_frames, layout):
    """frame_mask expanded to token granularity."""
    tpf = layout.tokens_per_frame
    return np.kron(frame_mask(total_frames, layout), np.ones((tpf, tpf), dtype=bool))


def _attend_heads(q, k, v, n_heads):
    """Multi-head softmax attention over already-gathered keys.

    Composed from the primitive ops (per-head slices) in every mode, so
    training rollouts and served rollouts follow bit-identical numerics;
    the backend flag only swaps the row-kernel implementations shared by
    both.
    """
    dm = q.shape[-1]
    dh = dm // n_heads
    inv = 1.0 / math.sqrt(dh)
    outs = []
    for h in range(n_heads):
        qh = T.slice_axis(q, 1, h * dh, (h + 1) * dh)
        kh = T.slice_axis(k, 1, h * dh, (h + 1) * dh)
        vh = T.slice_axis(v, 1, h * dh, (h + 1) * dh)
        p = T.softmax_lastdim(T.scale(T.matmul(qh, kh, transpose_b=True), inv))
        outs.append(T.matmul(p, vh))
    return outs[0] if n_heads == 1 else T.concat(outs, axis=1)


def windowed_sink_attention(q, cache, cur_k, cur_v, n_heads=1):
    """Attention for the chunk being generated, over sink ∪ window tail ∪ chunk.

    ``q``, ``cur_k``, ``cur_v``: (chunk_tokens, d_model) tensors for the
    chunk at cache.next_frame_index.  The cache is read-only here.
    """
    dm = q.shape[-1]
    if dm != cur_k.shape[-1] or dm != cache.d_model or dm % n_heads != 0:
        raise DimensionError(
            f"head dims disagree: q {q.shape}, k {cur_k.shape}, "
            f"cache d_model {cache.d_model}, heads {n_heads}")
    lay = cache.layout
    tpf = lay.tokens_per_frame
    if q.shape[0] % tpf != 0 or q.shape[0] != cur_k.shape[0]:
        raise DimensionError(f"chunk token count {q.shape[0]} not a frame multiple of {tpf}")
    chunk_frames = q.shape[0] // tpf
    c0 = cache.next_frame_index
    c1 = c0 + chunk_frames - 1
    window_from = max(cache.sink_base + lay.sink_frames, c1 - lay.window_frames + 1)
    ctx_k, ctx_v, live = cache.context_arrays(window_from)
    ks = [Tensor(ctx_k)] if ctx_k.shape[0] else []
    vs = [Tensor(ctx_v)] if ctx_v.shape[0] else []
    for lk, lv in live:
        ks.append(lk)
        vs.append(lv)
    ks.append(cur_k)
    vs.append(cur_v)
    k_all = ks[0] if len(ks) == 1 else T.concat(ks, axis=0)
    v_all = vs[0] if len(vs) == 1 else T.concat(vs, axis=0)
    return _attend_heads(q, k_all, v_all, n_heads)


def full_attention_reference(q, k, v, mask, n_heads=1):
    """Dense masked attention oracle; plain numpy, no kernel dispatch.

    mask[i, j] is True iff query token i may attend key token j.  Every
    row must allow at least one key.
    """
    qd = q.data if isinstance(q, Tensor) else np.asarray(q, dtype=np.float64)
    kd = k.data if isinstance(k, Tensor) else np.asarray(k, dtype=np.float64)
    vd = v.data if isinstance(v, Tensor) else np.asarray(v, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (qd.shape[0], kd.shape[0]):
        raise DimensionError(f"mask shape {mask.shape} != ({qd.shape[0]}, {kd.shape[0]})")
    if not mask.any(axis=1).all():
        raise ContractError("mask has an all-false row")
    dm = qd.shape[-1]
    dh = dm // n_heads
    out = np.empty_like(qd)
    neg = np.where(mask, 0.0, -np.inf)
    for h in range(n_heads):
        sl = slice(h * dh, (h + 1) * dh)
        scores = qd[:, sl] @ kd[:, sl].T / math.sqrt(dh) + neg
        m = np.max(scores, axis=-1, keepdims=True)
        e = np.exp(scores - m)
        p = e / np.sum(e, axis=-1, keepdims=True)
        out[:, sl] = p @ vd[:, sl]
    return Tensor(out)
