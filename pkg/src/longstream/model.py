"""The causal chunk-wise generator.

A small stack of blocks, each: windowed-sink self-attention -> cross
attention to the prompt tokens -> silu MLP, with pre-layernorms and
residual connections.  Conditioning enters three ways: a learned
embedding per discrete denoise step, a learned periodic frame-slot
position embedding, and the prompt exclusively through cross-attention
(zero the cross output projection and generation is prompt-blind, which
the tests rely on).

Two forward modes:
  * denoise_forward   - predict the clean chunk at some noise level;
                        caches are read-only.
  * kv_append_forward - run the clean chunk at the context step (t=0)
                        and append each layer's self-attention K/V.
A third, full_sequence_forward, re-runs a whole rollout as one dense
masked forward and is the oracle for cache correctness.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .attention import (AttentionLayout, full_attention_reference, token_mask,
                        windowed_sink_attention, _attend_heads)
from .errors import ConfigError, ContractError, DimensionError
from .kvcache import LayerKVCache
from .tensor import Tensor


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 4
    d_model: int = 64
    n_heads: int = 4
    d_prompt: int = 16
    tokens_per_frame: int = 4
    frames_per_chunk: int = 3
    latent_dim: int = 8
    prompt_tokens: int = 4
    n_timesteps: int = 4
    pos_period: int = 27  # covers the widest eval window (S=3, W=21, chunk=3)
    layout: AttentionLayout = field(default_factory=AttentionLayout)

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.layout.tokens_per_frame != self.tokens_per_frame:
            raise ConfigError("layout tokens_per_frame disagrees with model config")
        if self.layout.frames_per_chunk != self.frames_per_chunk:
            raise ConfigError("layout frames_per_chunk disagrees with model config")
        if self.pos_period < 1 or self.n_timesteps < 1:
            raise ConfigError("pos_period and n_timesteps must be positive")

    def with_layout(self, window_frames=None, sink_frames=None):
        lay = AttentionLayout(
            frames_per_chunk=self.frames_per_chunk,
            tokens_per_frame=self.tokens_per_frame,
            window_frames=self.layout.window_frames if window_frames is None else window_frames,
            sink_frames=self.layout.sink_frames if sink_frames is None else sink_frames)
        return replace(self, layout=lay)

    def to_text(self):
        lines = []
        for k in ("n_layers", "d_model", "n_heads", "d_prompt", "tokens_per_frame",
                  "frames_per_chunk", "latent_dim", "prompt_tokens", "n_timesteps",
                  "pos_period"):
            lines.append(f"{k}={getattr(self, k)}")
        lines.append(f"window_frames={self.layout.window_frames}")
        lines.append(f"sink_frames={self.layout.sink_frames}")
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_text(text):
        kv = {}
        for line in text.strip().splitlines():
            if not line.strip():
                continue
            key, _, val = line.partition("=")
            kv[key.strip()] = int(val)
        layout = AttentionLayout(
            frames_per_chunk=kv.pop("frames_per_chunk"),
            tokens_per_frame=kv.pop("tokens_per_frame"),
            window_frames=kv.pop("window_frames"),
            sink_frames=kv.pop("sink_frames"))
        return ModelConfig(layout=layout,
                           frames_per_chunk=layout.frames_per_chunk,
                           tokens_per_frame=layout.tokens_per_frame, **kv)


class GeneratorModel:
    def __init__(self, config, params):
        self.config = config
        self.params = params  # name -> Tensor, all requires_grad

    def param_count(self):
        return sum(p.size for p in self.params.values())

    def new_caches(self, layout=None):
        lay = layout or self.config.layout
        return [LayerKVCache(lay, self.config.d_model) for _ in range(self.config.n_layers)]


def init_params(config, seed):
    """Deterministic init: scaled-normal weights, zero biases, unit LN gains.

    Residual-output projections use std 0.02/sqrt(n_layers) so a fresh
    model is close to the identity map plus the unembed bias.
    """
    rng = np.random.default_rng(seed)
    std = 0.02
    std_res = 0.02 / np.sqrt(config.n_layers)
    d, dp = config.d_model, config.d_prompt
    hid = 4 * d
    params = {}

    def w(name, shape, s=std):
        params[name] = Tensor(rng.standard_normal(shape) * s, requires_grad=True)

    def zeros(name, shape):
        params[name] = Tensor(np.zeros(shape), requires_grad=True)

    def ones(name, shape):
        params[name] = Tensor(np.ones(shape), requires_grad=True)

    w("embed.w", (config.latent_dim, d))
    zeros("embed.b", (d,))
    w("time_embed", (config.n_timesteps + 1, d))
    w("pos_embed", (config.pos_period, d))
    w("prompt.w", (dp, config.prompt_tokens * d))
    zeros("prompt.b", (config.prompt_tokens * d,))
    for i in range(config.n_layers):
        b = f"block{i}"
        ones(f"{b}.ln1.g", (d,)); zeros(f"{b}.ln1.b", (d,))
        w(f"{b}.attn.wqkv", (d, 3 * d)); zeros(f"{b}.attn.bqkv", (3 * d,))
        w(f"{b}.attn.wo", (d, d), std_res); zeros(f"{b}.attn.bo", (d,))
        ones(f"{b}.ln2.g", (d,)); zeros(f"{b}.ln2.b", (d,))
        w(f"{b}.cross.wq", (d, d)); zeros(f"{b}.cross.bq", (d,))
        w(f"{b}.cross.wk", (d, d)); zeros(f"{b}.cross.bk", (d,))
        w(f"{b}.cross.wv", (d, d)); zeros(f"{b}.cross.bv", (d,))
        w(f"{b}.cross.wo", (d, d), std_res); zeros(f"{b}.cross.bo", (d,))
        ones(f"{b}.ln3.g", (d,)); zeros(f"{b}.ln3.b", (d,))
        w(f"{b}.mlp.w1", (d, hid)); zeros(f"{b}.mlp.b1", (hid,))
        w(f"{b}.mlp.w2", (hid, d), std_res); zeros(f"{b}.mlp.b2", (d,))
    ones("final.g", (d,)); zeros("final.b", (d,))
    w("unembed.w", (d, config.latent_dim))
    zeros("unembed.b", (config.latent_dim,))
    return GeneratorModel(config, params)


def _linear(x, pw, pb):
    return T.add(T.matmul(x, pw), pb)


def _prompt_token_matrix(model, prompt_vec):
    """Project the prompt embedding into a small matrix of prompt tokens."""
    cfg = model.config
    p = model.params
    pv = Tensor(np.asarray(prompt_vec, dtype=np.float64).reshape(1, cfg.d_prompt))
    flat = _linear(pv, p["prompt.w"], p["prompt.b"])  # (1, pt*d)
    toks = [T.slice_axis(flat, 1, j * cfg.d_model, (j + 1) * cfg.d_model)
            for j in range(cfg.prompt_tokens)]
    return T.concat(toks, axis=0) if len(toks) > 1 else toks[0]


def _forward_core(model, latents, t_index, frame_slots, prompt_vec, self_attend,
                  collect_hidden=False):
    """Shared block stack; self-attention is injected by the caller.

    latents: (tokens, latent_dim) Tensor; frame_slots: position-table row
    per frame.  Returns (prediction, per-layer (k, v), per-layer hidden).
    """
    cfg = model.config
    p = model.params
    n_tok = latents.shape[0]
    tpf = cfg.tokens_per_frame
    if n_tok % tpf or latents.shape[1] != cfg.latent_dim:
        raise DimensionError(f"latents {latents.shape} not (frames*{tpf}, {cfg.latent_dim})")
    if not 0 <= t_index <= cfg.n_timesteps:
        raise ContractError(f"timestep index {t_index} outside [0, {cfg.n_timesteps}]")

    h = _linear(latents, p["embed.w"], p["embed.b"])
    h = T.add(h, T.slice_axis(p["time_embed"], 0, t_index, t_index + 1))
    pos_rows = []
    for slot in frame_slots:
        row = T.slice_axis(p["pos_embed"], 0, slot, slot + 1)
        pos_rows.extend([row] * tpf)
    h = T.add(h, T.concat(pos_rows, axis=0))

    ptok = _prompt_token_matrix(model, prompt_vec)
    layer_kv = []
    hiddens = []
    for i in range(cfg.n_layers):
        b = f"block{i}"
        a = T.layernorm(h, p[f"{b}.ln1.g"], p[f"{b}.ln1.b"])
        qkv = _linear(a, p[f"{b}.attn.wqkv"], p[f"{b}.attn.bqkv"])
        d = cfg.d_model
        q = T.slice_axis(qkv, 1, 0, d)
        k = T.slice_axis(qkv, 1, d, 2 * d)
        v = T.slice_axis(qkv, 1, 2 * d, 3 * d)
        layer_kv.append((k, v))
        attn = self_attend(i, q, k, v)
        h = T.add(h, _linear(attn, p[f"{b}.attn.wo"], p[f"{b}.attn.bo"]))

        a = T.layernorm(h, p[f"{b}.ln2.g"], p[f"{b}.ln2.b"])
        cq = _linear(a, p[f"{b}.cross.wq"], p[f"{b}.cross.bq"])
        ck = _linear(ptok, p[f"{b}.cross.wk"], p[f"{b}.cross.bk"])
        cv = _linear(ptok, p[f"{b}.cross.wv"], p[f"{b}.cross.bv"])
        cross = _attend_heads(cq, ck, cv, cfg.n_heads)
        h = T.add(h, _linear(cross, p[f"{b}.cross.wo"], p[f"{b}.cross.bo"]))

        a = T.layernorm(h, p[f"{b}.ln3.g"], p[f"{b}.ln3.b"])
        m = _linear(T.silu(_linear(a, p[f"{b}.mlp.w1"], p[f"{b}.mlp.b1"])),
                    p[f"{b}.mlp.w2"], p[f"{b}.mlp.b2"])
        h = T.add(h, m)
        if collect_hidden:
            hiddens.append(h.data.copy())

    out = _linear(T.layernorm(h, p["final.g"], p["final.b"]),
                  p["unembed.w"], p["unembed.b"])
    return out, layer_kv, hiddens


def _chunk_slots(model, caches, n_frames):
    start = caches[0].next_frame_index
    return [(start + f) % model.config.pos_period for f in range(n_frames)]


def denoise_forward(model, noisy_chunk, t_index, caches, prompt_vec,
                    collect_hidden=False):
    """Predict the clean chunk from a noisy one.  Caches are not touched."""
    cfg = model.config
    n_frames = noisy_chunk.shape[0] // cfg.tokens_per_frame
    slots = _chunk_slots(model, caches, n_frames)

    def attend(i, q, k, v):
        return windowed_sink_attention(q, caches[i], k, v, cfg.n_heads)

    out, _, hid = _forward_core(model, noisy_chunk, t_index, slots, prompt_vec,
                                attend, collect_hidden)
    return (out, hid) if collect_hidden else out


def kv_append_forward(model, clean_chunk, caches, prompt_vec, live=False,
                      collect_hidden=False):
    """Context pass (t=0) over the final clean chunk; appends K/V per layer.

    With ``live=True`` (training) the appended K/V stay on the tape so
    gradients can flow from later chunks of the same clip.
    """
    cfg = model.config
    tpf = cfg.tokens_per_frame
    n_frames = clean_chunk.shape[0] // tpf
    slots = _chunk_slots(model, caches, n_frames)

    def attend(i, q, k, v):
        return windowed_sink_attention(q, caches[i], k, v, cfg.n_heads)

    out, layer_kv, hid = _forward_core(model, clean_chunk, 0, slots, prompt_vec,
                                       attend, collect_hidden)
    for cache, (k, v) in zip(caches, layer_kv):
        for f in range(n_frames):
            lo, hi = f * tpf, (f + 1) * tpf
            if live:
                cache.append_live_frame(T.slice_axis(k, 0, lo, hi),
                                        T.slice_axis(v, 0, lo, hi))
            else:
                cache.append_frame_kv(k.data[lo:hi], v.data[lo:hi])
    return (out, hid) if collect_hidden else out


def full_sequence_forward(model, frames_latents, prompt_vec, frame_offset=0,
                          layout=None, collect_hidden=False):
    """Dense masked forward over a whole rollout at the context step.

    The oracle for incremental decoding: per-layer K/V and hidden states
    must match what chunk-by-chunk generation wrote into the caches.
    ``frame_offset`` preserves global position slots when re-encoding a
    suffix (the recache case); sink/window roles are local to the given
    frames.
    """
    cfg = model.config
    lay = layout or cfg.layout
    tpf = cfg.tokens_per_frame
    n_frames = frames_latents.shape[0] // tpf
    mask = token_mask(n_frames, lay)
    slots = [(frame_offset + f) % cfg.pos_period for f in range(n_frames)]

    def attend(i, q, k, v):
        return full_attention_reference(q, k, v, mask, cfg.n_heads)

    x = frames_latents if isinstance(frames_latents, Tensor) else Tensor(frames_latents)
    out, layer_kv, hid = _forward_core(model, x, 0, slots, prompt_vec, attend,
                                       collect_hidden)
    kv_np = [(k.data.copy(), v.data.copy()) for k, v in layer_kv]
    return out, kv_np, hid
