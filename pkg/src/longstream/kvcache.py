"""Per-layer key/value store: pinned sink region + rolling window ring.

Inference appends land in the sink until it is full, then in a ring
buffer of ``window_frames`` capacity (FIFO eviction, whole frames, no
shifting).  During a training step the current clip's K/V live in a
separate tape-attached region so gradients can flow across the clip's
chunks; ``commit_live`` detaches them into the ring after the optimizer
step, restoring the steady-state resident bound of (S + W) frames.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError
from .tensor import Tensor


class LayerKVCache:
    def __init__(self, layout, d_model):
        self.layout = layout
        self.d_model = d_model
        s, w, tpf = layout.sink_frames, layout.window_frames, layout.tokens_per_frame
        self.sink_k = np.zeros((s * tpf, d_model))
        self.sink_v = np.zeros((s * tpf, d_model))
        self.sink_frames = 0
        self.sink_base = 0  # global index of the first sink frame
        self.win_k = np.zeros((w, tpf, d_model))
        self.win_v = np.zeros((w, tpf, d_model))
        self.win_start = 0
        self.win_count = 0
        self.next_frame_index = 0
        self.live_k = []
        self.live_v = []

    # -- write paths --------------------------------------------------------

    def _check_frame(self, k, v):
        tpf = self.layout.tokens_per_frame
        if k.shape != (tpf, self.d_model) or v.shape != (tpf, self.d_model):
            raise DimensionError(
                f"frame K/V must be ({tpf}, {self.d_model}), got {k.shape} / {v.shape}")

    def _push(self, k, v):
        """Store one detached frame into sink or ring. No counter bump."""
        tpf = self.layout.tokens_per_frame
        if self.sink_frames < self.layout.sink_frames:
            lo = self.sink_frames * tpf
            self.sink_k[lo:lo + tpf] = k
            self.sink_v[lo:lo + tpf] = v
            self.sink_frames += 1
            return
        w = self.layout.window_frames
        if self.win_count == w:
            slot = self.win_start
            self.win_start = (self.win_start + 1) % w
        else:
            slot = (self.win_start + self.win_count) % w
            self.win_count += 1
        self.win_k[slot] = k
        self.win_v[slot] = v

    def append_frame_kv(self, frame_k, frame_v):
        """Append one frame's detached K/V (numpy or constant Tensor)."""
        k = frame_k.data if isinstance(frame_k, Tensor) else np.asarray(frame_k, dtype=np.float64)
        v = frame_v.data if isinstance(frame_v, Tensor) else np.asarray(frame_v, dtype=np.float64)
        self._check_frame(k, v)
        if self.sink_frames == 0 and self.win_count == 0 and not self.live_k:
            self.sink_base = self.next_frame_index
        self._push(k.copy(), v.copy())
        self.next_frame_index += 1

    def append_live_frame(self, k_t, v_t):
        """Append one frame's tape-attached K/V (training clip)."""
        self._check_frame(k_t.data, v_t.data)
        if self.sink_frames == 0 and self.win_count == 0 and not self.live_k:
            self.sink_base = self.next_frame_index
        self.live_k.append(k_t)
        self.live_v.append(v_t)
        self.next_frame_index += 1

    def commit_live(self):
        """Detach the live clip into the ring; resident drops back to S+W."""
        for k_t, v_t in zip(self.live_k, self.live_v):
            self._push(k_t.data.copy(), v_t.data.copy())
        self.live_k = []
        self.live_v = []

    def clear(self):
        """Drop everything and restart frame accounting from zero."""
        self.sink_frames = 0
        self.sink_base = 0
        self.win_start = 0
        self.win_count = 0
        self.next_frame_index = 0
        self.live_k = []
        self.live_v = []

    # -- read paths ---------------------------------------------------------

    @property
    def _committed_end(self):
        return self.next_frame_index - len(self.live_k)

    def _window_order(self):
        """Ring slots of the committed window, oldest first."""
        w = self.layout.window_frames
        return [(self.win_start + i) % w for i in range(self.win_count)]

    def context_arrays(self, window_from_frame):
        """Gathered context for a chunk starting at next_frame_index.

        Returns (ctx_k, ctx_v, live): one numpy block holding the sink
        plus the committed window frames with global index >=
        ``window_from_frame``, and the list of live (k, v) Tensor pairs
        that are attendable: sink-destined live frames always, the rest
        by the window rule.  Live frames are globally newest, so the
        assembled order stays chronological either way.
        """
        tpf = self.layout.tokens_per_frame
        blocks_k = [self.sink_k[:self.sink_frames * tpf]]
        blocks_v = [self.sink_v[:self.sink_frames * tpf]]
        win_first = self._committed_end - self.win_count
        take_from = max(window_from_frame, win_first)
        if take_from < self._committed_end:
            order = self._window_order()[take_from - win_first:]
            blocks_k.append(self.win_k[order].reshape(-1, self.d_model))
            blocks_v.append(self.win_v[order].reshape(-1, self.d_model))
        ctx_k = np.concatenate(blocks_k, axis=0)
        ctx_v = np.concatenate(blocks_v, axis=0)
        live_first = self._committed_end
        sink_end = self.sink_base + self.layout.sink_frames
        live = [(k, v) for i, (k, v) in enumerate(zip(self.live_k, self.live_v))
                if live_first + i < sink_end or live_first + i >= window_from_frame]
        return ctx_k, ctx_v, live

    def resident_size(self):
        """(sink_frames, window_frames, total_tokens) currently stored."""
        win = self.win_count + len(self.live_k)
        tpf = self.layout.tokens_per_frame
        return self.sink_frames, win, (self.sink_frames + win) * tpf

    def window_frames_chrono(self):
        """Committed window K/V in chronological order, token-major."""
        order = self._window_order()
        return (self.win_k[order].reshape(-1, self.d_model),
                self.win_v[order].reshape(-1, self.d_model))

    # -- snapshot / restore -------------------------------------------------

    def snapshot(self):
        if self.live_k:
            raise ContractError("cannot snapshot a cache holding a live training clip")
        wk, wv = self.window_frames_chrono()
        return CacheSnapshot(
            layout=self.layout, d_model=self.d_model,
            sink_k=self.sink_k.copy(), sink_v=self.sink_v.copy(),
            sink_frames=self.sink_frames, sink_base=self.sink_base,
            win_k=wk.copy(), win_v=wv.copy(),
            win_count=self.win_count, next_frame_index=self.next_frame_index)

    def dump_arrays(self, prefix):
        """Debug dump as {name: array} in the checkpoint container layout."""
        wk, wv = self.window_frames_chrono()
        return {
            f"{prefix}.sink_k": self.sink_k[:self.sink_frames * self.layout.tokens_per_frame].copy(),
            f"{prefix}.sink_v": self.sink_v[:self.sink_frames * self.layout.tokens_per_frame].copy(),
            f"{prefix}.win_k": wk, f"{prefix}.win_v": wv,
            f"{prefix}.next_frame_index": np.array([float(self.next_frame_index)]),
        }


@dataclass(frozen=True)
class CacheSnapshot:
    """Deep copy of a cache; restore() rebuilds a bit-identical cache."""

    layout: object
    d_model: int
    sink_k: np.ndarray
    sink_v: np.ndarray
    sink_frames: int
    sink_base: int
    win_k: np.ndarray  # chronological, (count*tpf, d)
    win_v: np.ndarray
    win_count: int
    next_frame_index: int

    def restore(self):
        cache = LayerKVCache(self.layout, self.d_model)
        cache.sink_k = self.sink_k.copy()
        cache.sink_v = self.sink_v.copy()
        cache.sink_frames = self.sink_frames
        cache.sink_base = self.sink_base
        tpf = self.layout.tokens_per_frame
        for i in range(self.win_count):
            cache.win_k[i] = self.win_k[i * tpf:(i + 1) * tpf]
            cache.win_v[i] = self.win_v[i * tpf:(i + 1) * tpf]
        cache.win_start = 0
        cache.win_count = self.win_count
        cache.next_frame_index = self.next_frame_index
        return cache


def snapshot_all(caches):
    return [c.snapshot() for c in caches]


def restore_all(snapshots):
    return [s.restore() for s in snapshots]
