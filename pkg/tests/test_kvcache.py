import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from longstream.attention import AttentionLayout
from longstream.errors import ContractError, DimensionError
from longstream.kvcache import LayerKVCache
from longstream.tensor import Tensor


def make_cache(S=3, W=9, tpf=4, d=8):
    lay = AttentionLayout(frames_per_chunk=3, tokens_per_frame=tpf,
                          window_frames=W, sink_frames=S)
    return LayerKVCache(lay, d)


def frame_value(f, tpf=4, d=8):
    """A frame whose K/V entries are all its frame index (identifiable)."""
    return np.full((tpf, d), float(f))


def fill(cache, n, tpf=4, d=8):
    for f in range(cache.next_frame_index, cache.next_frame_index + n):
        cache.append_frame_kv(frame_value(f, tpf, d), -frame_value(f, tpf, d))


class TestAppendAndEviction:
    def test_first_append_fills_sink(self):
        c = make_cache()
        fill(c, 1)
        assert c.resident_size() == (1, 0, 4)

    def test_capacity_arithmetic(self):
        c = make_cache()
        fill(c, 12)
        assert c.resident_size() == (3, 9, 12 * 4)

    def test_eviction_replay_keeps_last_window(self):
        # derived by replaying the eviction rule: after 100 appends the
        # window must hold frames 91..99 in order, sink frames 0..2
        c = make_cache()
        fill(c, 100)
        assert c.resident_size() == (3, 9, 12 * 4)
        wk, _ = c.window_frames_chrono()
        np.testing.assert_array_equal(wk[:, 0], np.repeat(np.arange(91, 100), 4))
        np.testing.assert_array_equal(c.sink_k[:, 0], np.repeat([0, 1, 2], 4))

    def test_long_rollout_resident_flat(self):
        c = make_cache()
        fill(c, 1000)
        assert c.resident_size() == (3, 9, 12 * 4)

    def test_sink_contents_never_change(self):
        c = make_cache()
        fill(c, 3)
        sink_before = c.sink_k.copy()
        fill(c, 497)
        np.testing.assert_array_equal(c.sink_k, sink_before)

    def test_wrong_token_count(self):
        c = make_cache()
        with pytest.raises(DimensionError):
            c.append_frame_kv(np.zeros((3, 8)), np.zeros((3, 8)))

    @given(n=st.integers(0, 60), S=st.integers(0, 3), W=st.integers(1, 7))
    @settings(max_examples=60, deadline=None)
    def test_matches_bruteforce_reference(self, n, S, W):
        lay = AttentionLayout(frames_per_chunk=1, tokens_per_frame=2,
                              window_frames=W, sink_frames=S)
        c = LayerKVCache(lay, 4)
        for f in range(n):
            c.append_frame_kv(np.full((2, 4), float(f)), np.full((2, 4), float(f)))
        # brute-force model: first S frames pinned, then the last W of the rest
        sink_ref = list(range(min(S, n)))
        window_ref = list(range(min(S, n), n))[-W:]
        assert c.resident_size()[0] == len(sink_ref)
        assert c.resident_size()[1] == len(window_ref)
        wk, _ = c.window_frames_chrono()
        np.testing.assert_array_equal(wk[:, 0], np.repeat(window_ref, 2))


class TestResidentSize:
    def test_fresh(self):
        assert make_cache().resident_size() == (0, 0, 0)

    def test_partial_window(self):
        c = make_cache()
        fill(c, 5)
        assert c.resident_size() == (3, 2, 5 * 4)


class TestSnapshotRestore:
    def logical_state(self, c):
        wk, wv = c.window_frames_chrono()
        tpf = c.layout.tokens_per_frame
        return (c.sink_k[:c.sink_frames * tpf].tobytes(),
                c.sink_v[:c.sink_frames * tpf].tobytes(),
                wk.tobytes(), wv.tobytes(),
                c.sink_frames, c.sink_base, c.win_count, c.next_frame_index)

    def test_clear(self):
        c = make_cache()
        fill(c, 20)
        c.clear()
        assert c.resident_size() == (0, 0, 0)
        assert c.next_frame_index == 0

    def test_snapshot_mutate_restore_bitwise(self):
        c = make_cache()
        fill(c, 17)
        snap = c.snapshot()
        before = self.logical_state(c)
        fill(c, 9)
        assert self.logical_state(c) != before
        restored = snap.restore()
        assert self.logical_state(restored) == before

    def test_snapshot_rejects_live_clip(self):
        c = make_cache()
        c.append_live_frame(Tensor(np.zeros((4, 8))), Tensor(np.zeros((4, 8))))
        with pytest.raises(ContractError):
            c.snapshot()


class TestLiveRegion:
    def test_live_counts_and_commit(self):
        c = make_cache()
        fill(c, 12)
        for f in range(12, 24):
            c.append_live_frame(Tensor(frame_value(f)), Tensor(-frame_value(f)))
        assert c.resident_size() == (3, 9 + 12, (3 + 9 + 12) * 4)
        assert c.next_frame_index == 24
        c.commit_live()
        assert c.resident_size() == (3, 9, 12 * 4)
        wk, _ = c.window_frames_chrono()
        np.testing.assert_array_equal(wk[:, 0], np.repeat(np.arange(15, 24), 4))

    def test_live_frames_gathered_in_window(self):
        c = make_cache()
        fill(c, 12)
        for f in range(12, 18):
            c.append_live_frame(Tensor(frame_value(f)), Tensor(-frame_value(f)))
        # chunk at 18..20: window from max(3, 20-9+1) = 12 -> live only
        ctx_k, ctx_v, live = c.context_arrays(12)
        assert ctx_k.shape[0] == 3 * 4  # sink only
        assert len(live) == 6

    def test_sink_fill_via_live_commit(self):
        c = make_cache()
        for f in range(6):
            c.append_live_frame(Tensor(frame_value(f)), Tensor(-frame_value(f)))
        c.commit_live()
        assert c.resident_size() == (3, 3, 6 * 4)
        np.testing.assert_array_equal(c.sink_k[:, 0], np.repeat([0, 1, 2], 4))


class TestDump:
    def test_dump_names_and_counter(self):
        c = make_cache()
        fill(c, 14)
        d = c.dump_arrays("layer0")
        assert set(d) == {"layer0.sink_k", "layer0.sink_v", "layer0.win_k",
                          "layer0.win_v", "layer0.next_frame_index"}
        assert d["layer0.next_frame_index"][0] == 14.0
        assert d["layer0.win_k"].shape == (9 * 4, 8)
