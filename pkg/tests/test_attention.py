import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from longstream.attention import (AttentionLayout, allowed_keys, frame_mask,
                                  full_attention_reference, token_mask,
                                  windowed_sink_attention)
from longstream.errors import ContractError, DimensionError
from longstream.kvcache import LayerKVCache
from longstream.tensor import Tensor


def layout(S, W, fpc=3, tpf=2):
    return AttentionLayout(frames_per_chunk=fpc, tokens_per_frame=tpf,
                           window_frames=W, sink_frames=S)


class TestAllowedKeys:
    def test_short_prefix_is_plain_causal(self):
        assert allowed_keys(1, layout(3, 9), 30) == [0, 1]

    def test_steady_state_sink_plus_window(self):
        # 9 local frames plus 3 sink frames = 12 total
        got = allowed_keys(20, layout(3, 9), 30)
        assert got == [0, 1, 2] + list(range(12, 21))
        assert len(got) == 12

    def test_no_sink_reduces_to_sliding_window(self):
        assert allowed_keys(10, layout(0, 9), 30) == list(range(2, 11))

    def test_out_of_range_query(self):
        with pytest.raises(ContractError):
            allowed_keys(30, layout(3, 9), 30)

    @given(q=st.integers(0, 63), S=st.integers(0, 3), W=st.integers(1, 12))
    @settings(max_examples=200, deadline=None)
    def test_properties(self, q, S, W):
        got = allowed_keys(q, layout(S, W), 64)
        assert got == sorted(set(got))          # ascending, no duplicates
        assert all(0 <= f <= q for f in got)    # frame-level causal
        assert q in got                         # own frame always visible
        assert len(got) <= S + W


class TestReferenceAttention:
    def test_all_true_mask_outputs_are_convex_combinations(self):
        rng = np.random.default_rng(0)
        q = rng.standard_normal((4, 6))
        v = rng.standard_normal((5, 6))
        out = full_attention_reference(q, v, v, np.ones((4, 5), dtype=bool))
        assert np.all(out.data <= v.max(axis=0) + 1e-12)
        assert np.all(out.data >= v.min(axis=0) - 1e-12)

    def test_lower_triangular_equals_causal(self):
        rng = np.random.default_rng(1)
        q, k, v = rng.standard_normal((3, 6, 4))
        mask = np.tril(np.ones((6, 6), dtype=bool))
        out = full_attention_reference(q, k, v, mask)
        # row i must not depend on keys > i
        k2, v2 = k.copy(), v.copy()
        k2[3:] += 100.0
        v2[3:] += 100.0
        out2 = full_attention_reference(q, k2, v2, mask)
        np.testing.assert_array_equal(out.data[:3], out2.data[:3])

    def test_all_false_row_rejected(self):
        mask = np.ones((3, 3), dtype=bool)
        mask[1] = False
        with pytest.raises(ContractError):
            full_attention_reference(np.zeros((3, 4)), np.zeros((3, 4)),
                                     np.zeros((3, 4)), mask)

    def test_mask_shape_check(self):
        with pytest.raises(DimensionError):
            full_attention_reference(np.zeros((3, 4)), np.zeros((5, 4)),
                                     np.zeros((5, 4)), np.ones((3, 3), dtype=bool))


def replay_windowed(S, W, n_frames, seed, fpc=3, tpf=2, dm=8, heads=2):
    """Chunked windowed attention vs the dense masked oracle on random K/V."""
    lay = layout(S, W, fpc, tpf)
    rng = np.random.default_rng(seed)
    q_all = rng.standard_normal((n_frames * tpf, dm))
    k_all = rng.standard_normal((n_frames * tpf, dm))
    v_all = rng.standard_normal((n_frames * tpf, dm))
    cache = LayerKVCache(lay, dm)
    outs = []
    for c0 in range(0, n_frames, fpc):
        sl = slice(c0 * tpf, (c0 + fpc) * tpf)
        out = windowed_sink_attention(Tensor(q_all[sl]), cache,
                                      Tensor(k_all[sl]), Tensor(v_all[sl]), heads)
        outs.append(out.data)
        for f in range(c0, c0 + fpc):
            cache.append_frame_kv(k_all[f * tpf:(f + 1) * tpf],
                                  v_all[f * tpf:(f + 1) * tpf])
    ref = full_attention_reference(q_all, k_all, v_all, token_mask(n_frames, lay), heads)
    return np.concatenate(outs), ref.data, cache


class TestWindowedSinkAttention:
    def test_empty_cache_is_plain_self_attention(self):
        lay = layout(3, 9)
        rng = np.random.default_rng(2)
        q, k, v = rng.standard_normal((3, 6, 8))
        cache = LayerKVCache(lay, 8)
        out = windowed_sink_attention(Tensor(q), cache, Tensor(k), Tensor(v), 2)
        ref = full_attention_reference(q, k, v, np.ones((6, 6), dtype=bool), 2)
        np.testing.assert_allclose(out.data, ref.data, atol=1e-12)

    @pytest.mark.parametrize("S,W", [(0, 3), (0, 9), (1, 6), (2, 3), (3, 9), (3, 6)])
    @pytest.mark.parametrize("n_frames", [3, 12, 30])
    def test_matches_reference(self, S, W, n_frames):
        got, ref, _ = replay_windowed(S, W, n_frames, seed=S * 100 + W + n_frames)
        assert np.abs(got - ref).max() < 1e-10

    def test_output_independent_of_evicted_frames(self):
        lay = layout(3, 9)
        rng = np.random.default_rng(3)
        dm, tpf = 8, 2
        n = 21  # cache holds frames 0..17 before the chunk at 18
        kv = rng.standard_normal((2, n * tpf, dm))
        cache = LayerKVCache(lay, dm)
        for f in range(18):
            cache.append_frame_kv(kv[0, f * tpf:(f + 1) * tpf],
                                  kv[1, f * tpf:(f + 1) * tpf])
        q = Tensor(rng.standard_normal((3 * tpf, dm)))
        cur_k = Tensor(rng.standard_normal((3 * tpf, dm)))
        cur_v = Tensor(rng.standard_normal((3 * tpf, dm)))
        before = windowed_sink_attention(q, cache, cur_k, cur_v, 2).data
        # frames 3..8 are already evicted; 9..11 are resident but outside the
        # receptive field of the chunk ending at frame 20 -> perturb them
        for f in (9, 10, 11):
            slot = (cache.win_start + (f - 9)) % lay.window_frames
            cache.win_k[slot] += 1000.0
            cache.win_v[slot] -= 1000.0
        after = windowed_sink_attention(q, cache, cur_k, cur_v, 2).data
        np.testing.assert_array_equal(before, after)

    def test_gathered_cost_is_bounded(self):
        lay = layout(3, 9)
        _, _, cache = replay_windowed(3, 9, 60, seed=4)
        window_from = max(cache.sink_base + lay.sink_frames,
                          (cache.next_frame_index + 2) - lay.window_frames + 1)
        ctx_k, _, live = cache.context_arrays(window_from)
        gathered_tokens = ctx_k.shape[0] + 3 * lay.tokens_per_frame
        assert gathered_tokens <= (lay.sink_frames + lay.window_frames) * lay.tokens_per_frame

    def test_head_dim_mismatch(self):
        cache = LayerKVCache(layout(3, 9), 8)
        with pytest.raises(DimensionError):
            windowed_sink_attention(Tensor(np.zeros((6, 8))), cache,
                                    Tensor(np.zeros((6, 8))),
                                    Tensor(np.zeros((6, 8))), 3)


class TestMasks:
    def test_frame_mask_row_via_chunk_end(self):
        lay = layout(3, 9)
        m = frame_mask(24, lay)
        # query 19 is in chunk {18,19,20}: sees sink, frames 12..17, own chunk
        row = np.where(m[19])[0].tolist()
        assert row == [0, 1, 2] + list(range(12, 21))

    def test_token_mask_expansion(self):
        lay = layout(1, 3, fpc=1, tpf=2)
        fm = frame_mask(4, lay)
        tm = token_mask(4, lay)
        assert tm.shape == (8, 8)
        assert np.array_equal(tm[::2, ::2], fm)
