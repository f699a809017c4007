"""Streaming training: extend the model's own rollout one clip at a time.

State across iterations is (caches, position l, prompt pair, switch
index).  Each iteration generates the next clip with gradients, scores
only that clip against the teacher's expected continuation, steps the
optimizer, then detaches the clip's K/V into the rolling context.  One
prompt switch per video sample triggers an in-loop recache, and from
that point the teacher is conditioned on the new prompt as well, so the
model trains under exactly the post-switch state it will see when
serving.  Resident K/V per layer never exceeds sink + window + one clip.
"""

import itertools
import logging
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, NumericFailure
from .inference import generate_next_chunk, recache, recache_window
from .tensor import Graph, Tensor
from .toyworld import encode_prompt

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    l_video: int = 96
    l_clip: int = 12
    learning_rate: float = 1e-3
    momentum: float = 0.9  # beta1 under adam
    optimizer: str = "adam"
    max_iters: int = 2000
    seed: int = 0
    ema_decay: float = 0.0  # 0 disables the shadow copy


def validate_train_config(cfg, model_config):
    fpc = model_config.frames_per_chunk
    if cfg.l_clip % fpc:
        raise ConfigError(f"l_clip {cfg.l_clip} not a multiple of chunk size {fpc}")
    if cfg.l_video % cfg.l_clip:
        raise ConfigError(f"l_clip {cfg.l_clip} does not divide l_video {cfg.l_video}")
    if cfg.l_video // cfg.l_clip < 2:
        raise ConfigError("need at least two clips per video to place a switch")


def sample_switch_index(l_video, l_clip, rng):
    """Uniform over clip boundaries {l_clip, 2*l_clip, ..., l_video - l_clip}."""
    n_clips = l_video // l_clip
    if n_clips < 2:
        raise ConfigError(f"l_video/l_clip = {n_clips} < 2")
    return int(rng.integers(1, n_clips)) * l_clip


def build_prompt_pairs(n_pairs=64, seed=1234):
    """Deterministic (p, p_next) dataset over the command vocabulary, p != p_next."""
    from .toyworld import VOCABULARY
    all_pairs = [(a, b) for a, b in itertools.product(VOCABULARY, VOCABULARY) if a != b]
    rng = np.random.default_rng(seed)
    idx = rng.permutation(len(all_pairs))[:n_pairs]
    return [all_pairs[i] for i in idx]


def data_rng(seed):
    return np.random.default_rng(np.random.SeedSequence(seed).spawn(2)[0])


def rollout_rng(seed):
    """The noise stream for clip generation; shared with inference replays."""
    return np.random.default_rng(np.random.SeedSequence(seed).spawn(2)[1])


class SGDMomentum:
    """Plain momentum SGD; kept selectable but not the default (see Adam)."""

    def __init__(self, params, lr, momentum=0.9):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.velocity = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self):
        for k, p in self.params.items():
            if p.grad is None:
                continue
            v = self.velocity[k]
            v *= self.momentum
            v += p.grad
            p.data -= self.lr * v

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


class Adam:
    """Adam without weight decay; beta1 doubles as the momentum setting.

    The default optimizer: per-parameter gradient scales here span ~300x
    (output head vs attention projections under a mean-reduced loss), so
    a single SGD rate cannot train both; sweep evidence in the repo
    history.  beta2/eps are the standard values.
    """

    def __init__(self, params, lr, momentum=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = momentum
        self.beta2 = beta2
        self.eps = eps
        self.mean = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.var = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            m, v = self.mean[k], self.var[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad ** 2
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


OPTIMIZERS = {"adam": Adam, "sgd": SGDMomentum}


def noise_anchor(init_noise):
    """Start state of a from-scratch video, read off the initial noise.

    The first chunk's pure-noise input doubles as the video's seed
    state: squash its observable dims into the box.  This keeps
    from-scratch starts diverse (no mean collapse under the MSE loss),
    which is what gives later clips position variance to track.
    """
    tok0 = np.asarray(init_noise)[0]
    return 0.8 * np.tanh(tok0[0:2]), 0.5 * np.tanh(tok0[2:6])


def surrogate_distill_loss(student_clip, context_last_frame, prompt_emb, teacher,
                           anchor=None):
    """MSE against the teacher's expected continuation (the default clip loss).

    With context: the target continues from the decoded state of the
    last context frame under the active prompt.  Without context (the
    first clip of a video) the target starts at ``anchor`` - the state
    derived from the clip's initial noise - and the student must realize
    that start and its continuation.  Returns None when the teacher
    cannot decode the context.
    """
    from .toyworld import TOKENS_PER_FRAME as tpf
    from .toyworld import make_frame
    n_frames = student_clip.shape[0] // tpf
    if context_last_frame is not None:
        state = teacher.decode(context_last_frame)
        if state is None:
            return None
        pos, ident = state
        target = teacher.expected_continuation(pos, ident, prompt_emb.command, n_frames)
    else:
        if anchor is None:
            raise ContractError("first clip of a video needs a noise anchor")
        pos, ident = anchor
        target = np.zeros_like(student_clip.data)
        target[:tpf] = make_frame(pos, ident)
        target[tpf:] = teacher.expected_continuation(pos, ident, prompt_emb.command,
                                                     n_frames - 1)
    return T.mse(student_clip, Tensor(target))


def streaming_train(model, teacher, prompt_pairs, cfg, schedule, loss_fn=None,
                    on_iter=None, update_params=True):
    """Run the streaming loop for cfg.max_iters iterations.

    Returns (records, state): one log record per iteration in the
    training-log schema, plus the final loop state (useful for tests and
    resumption).  ``update_params=False`` freezes the weights, which
    turns the loop into a pure cache-mechanics replay.
    """
    mcfg = model.config
    validate_train_config(cfg, mcfg)
    loss_fn = loss_fn or surrogate_distill_loss
    tpf, fpc = mcfg.tokens_per_frame, mcfg.frames_per_chunk
    d_rng = data_rng(cfg.seed)
    r_rng = rollout_rng(cfg.seed)
    if cfg.optimizer not in OPTIMIZERS:
        raise ConfigError(f"unknown optimizer {cfg.optimizer!r}; have {sorted(OPTIMIZERS)}")
    opt = OPTIMIZERS[cfg.optimizer](model.params, cfg.learning_rate, cfg.momentum)
    ema = ({k: p.data.copy() for k, p in model.params.items()}
           if cfg.ema_decay else None)

    caches = model.new_caches()
    video = np.zeros((cfg.l_video * tpf, mcfg.latent_dim))
    l = 0
    p, p_next = prompt_pairs[int(d_rng.integers(len(prompt_pairs)))]
    s = sample_switch_index(cfg.l_video, cfg.l_clip, d_rng)
    records = []

    for it in range(cfg.max_iters):
        if l >= cfg.l_video:
            caches = model.new_caches()
            video[:] = 0.0
            l = 0
            p, p_next = prompt_pairs[int(d_rng.integers(len(prompt_pairs)))]
            s = sample_switch_index(cfg.l_video, cfg.l_clip, d_rng)
        p_active = p if l < s else p_next
        emb = encode_prompt(p_active)
        switched = l == s
        if switched:
            keep = recache_window(l, mcfg.layout)
            caches = recache(model, video[(l - keep) * tpf:l * tpf], emb.vec,
                             l - keep)

        context_last = video[(l - 1) * tpf:l * tpf] if l > 0 else None
        with Graph() as g:
            capture = {}
            chunks = []
            for ci in range(cfg.l_clip // fpc):
                chunks.append(generate_next_chunk(
                    model, caches, emb.vec, schedule, r_rng, live=True,
                    capture=capture if ci == 0 else None))
            clip = T.concat(chunks, axis=0) if len(chunks) > 1 else chunks[0]
            anchor = noise_anchor(capture["init_noise"]) if l == 0 else None
            loss = loss_fn(clip, context_last, emb, teacher, anchor=anchor)
            if loss is not None:
                loss_val = loss.data.item()
                peak_tokens = caches[0].resident_size()[2]
                if not np.isfinite(loss_val):
                    err = NumericFailure(f"non-finite loss at iter {it} (l={l})")
                    err.clip = clip.data.copy()
                    err.iter = it
                    raise err
                g.backward(loss)
        if loss is None:
            log.warning("iter %d: teacher could not decode context; skipping sample", it)
            l = cfg.l_video  # force a fresh video next iteration
            continue
        if update_params:
            opt.step()
            if ema is not None:
                for k, sp in ema.items():
                    sp *= cfg.ema_decay
                    sp += (1.0 - cfg.ema_decay) * model.params[k].data
        opt.zero_grad()
        for c in caches:
            c.commit_live()
        video[l * tpf:(l + cfg.l_clip) * tpf] = clip.data
        record = {"iter": it, "l": l, "loss": loss_val, "switch": bool(switched),
                  "peak_tokens": int(peak_tokens)}
        records.append(record)
        if on_iter is not None:
            on_iter(it, model, record)
        l += cfg.l_clip

    state = {"caches": caches, "l": l, "prompts": (p, p_next), "switch": s,
             "video": video, "ema": ema}
    return records, state
