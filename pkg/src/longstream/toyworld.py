"""Synthetic moving-dot task: the measurable stand-in for video latents.

A frame is 4 tokens of 8 dims.  Token 0 carries the observable state:
dims 0-1 the dot position in [-1,1]^2, dims 2-5 a frozen identity code.
Everything else is texture nuisance.  Prompts are 9 motion commands; the
analytic teacher advances the dot by a fixed step along the commanded
unit velocity with reflecting walls, and its noise-free recursion is
the closed-form expectation the training loss targets.

Three metrics turn the qualitative claims into numbers: adherence lag
(frames until motion aligns with a new command), continuity jump (peak
frame-to-frame displacement across a switch boundary), and identity
drift (deviation of the identity code over a rollout).  All three read
only the frame sequence.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, UnknownPromptError

TOKENS_PER_FRAME = 4
LATENT_DIM = 8
STEP = 0.08
POSITION_NOISE = 0.005
NUISANCE_STD = 0.1
D_PROMPT = 16

NOT_ADHERED = math.inf

_SQ2 = math.sqrt(0.5)
COMMANDS = (
    ("right", (1.0, 0.0)),
    ("left", (-1.0, 0.0)),
    ("up", (0.0, 1.0)),
    ("down", (0.0, -1.0)),
    ("up-right", (_SQ2, _SQ2)),
    ("up-left", (-_SQ2, _SQ2)),
    ("down-right", (_SQ2, -_SQ2)),
    ("down-left", (-_SQ2, -_SQ2)),
    ("stop", (0.0, 0.0)),
)
VOCABULARY = tuple(name for name, _ in COMMANDS)


@dataclass(frozen=True)
class PromptEmbedding:
    command: str
    vec: np.ndarray       # (16,): velocity in dims 0-1, one-hot code in 2-10
    velocity: np.ndarray  # (2,)


CODE_AMPLITUDE = 4.0  # loud one-hot code: the command must punch through
                      # the generator's small-init prompt projection


def _build_table():
    table = {}
    for i, (name, vel) in enumerate(COMMANDS):
        vec = np.zeros(D_PROMPT)
        vec[0], vec[1] = vel
        vec[2 + i] = CODE_AMPLITUDE
        table[name] = PromptEmbedding(name, vec, np.array(vel))
    return table


_TABLE = _build_table()


def encode_prompt(text):
    """Table lookup for a command string; case-insensitive, trimmed."""
    key = str(text).strip().lower()
    if key not in _TABLE:
        raise UnknownPromptError(
            f"unknown command {text!r}; valid commands: {', '.join(VOCABULARY)}")
    return _TABLE[key]


def reflect_into_box(x):
    """Fold a coordinate back into [-1, 1] (reflecting walls)."""
    y = np.mod(np.asarray(x, dtype=np.float64) + 1.0, 4.0)
    y = np.where(y > 2.0, 4.0 - y, y)
    return y - 1.0


def make_frame(pos, identity, rng=None):
    """Assemble one latent frame; nuisance dims are noise (zeros if rng is None)."""
    frame = (rng.standard_normal((TOKENS_PER_FRAME, LATENT_DIM)) * NUISANCE_STD
             if rng is not None else np.zeros((TOKENS_PER_FRAME, LATENT_DIM)))
    frame[0, 0:2] = pos
    frame[0, 2:6] = identity
    return frame


def decode_frame(frame_tokens):
    """(position, identity) from one frame's tokens."""
    tok0 = np.asarray(frame_tokens)[0]
    return tok0[0:2].copy(), tok0[2:6].copy()


def frame_positions(frames_tokens):
    """(n_frames, 2) positions from a flat (n_frames*tpf, latent) array."""
    toks = np.asarray(frames_tokens).reshape(-1, TOKENS_PER_FRAME, LATENT_DIM)
    return toks[:, 0, 0:2]


def frame_identities(frames_tokens):
    toks = np.asarray(frames_tokens).reshape(-1, TOKENS_PER_FRAME, LATENT_DIM)
    return toks[:, 0, 2:6]


def teacher_rollout(start_position, identity, prompt, n_frames, rng=None):
    """Frames the analytic teacher produces after ``start_position``.

    With ``rng=None`` the rollout is the noise-free recursion, which is
    also the closed-form expectation used as the training target.
    """
    if n_frames < 1:
        raise ContractError("n_frames must be >= 1")
    emb = prompt if isinstance(prompt, PromptEmbedding) else encode_prompt(prompt)
    pos = np.asarray(start_position, dtype=np.float64).copy()
    ident = np.asarray(identity, dtype=np.float64)
    out = np.zeros((n_frames * TOKENS_PER_FRAME, LATENT_DIM))
    for i in range(n_frames):
        pos = reflect_into_box(pos + STEP * emb.velocity)
        if rng is not None:
            pos = pos + rng.normal(0.0, POSITION_NOISE, size=2)
        out[i * TOKENS_PER_FRAME:(i + 1) * TOKENS_PER_FRAME] = make_frame(pos, ident, rng)
    return out


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

GRID = 32
BLOB_SIGMA = 2.0
_ID_HASH_W = np.array([17.3, 9.7, 5.1, 2.9])


def identity_brightness(identity):
    """Smooth deterministic hash of the identity code into [0.4, 0.6]."""
    h = 0.5 * (1.0 + math.sin(float(np.dot(_ID_HASH_W, np.asarray(identity)))))
    return 0.5 * (1.0 + 0.4 * (h - 0.5))


def render(frame_tokens):
    """32x32 grayscale view of one frame: a Gaussian blob at the dot."""
    pos, ident = decode_frame(frame_tokens)
    x, y = np.clip(pos, -1.0, 1.0)
    col = (x + 1.0) / 2.0 * (GRID - 1)
    row = (1.0 - y) / 2.0 * (GRID - 1)
    rr, cc = np.mgrid[0:GRID, 0:GRID]
    img = identity_brightness(ident) * np.exp(
        -((rr - row) ** 2 + (cc - col) ** 2) / (2.0 * BLOB_SIGMA ** 2))
    return img


# ---------------------------------------------------------------------------
# metrics (pure functions of the frame sequence)
# ---------------------------------------------------------------------------

def adherence_lag(frames_tokens, switch_frame, new_prompt, frames_per_chunk=3):
    """Frames after the switch until motion matches the new command.

    Smallest k such that three consecutive per-frame displacements from
    frame switch_frame+k on all have cosine >= 0.9 with the commanded
    velocity (speed <= 0.02 for 'stop').  NOT_ADHERED if none.
    """
    pos = frame_positions(frames_tokens)
    n = len(pos)
    if not switch_frame < n - 6:
        raise ContractError(f"segment too short: switch {switch_frame}, {n} frames")
    emb = new_prompt if isinstance(new_prompt, PromptEmbedding) else encode_prompt(new_prompt)
    vel = emb.velocity
    vnorm = np.linalg.norm(vel)
    disp = np.diff(pos, axis=0)  # disp[m] = pos[m+1] - pos[m]

    def frame_ok(m):
        # displacement "at frame m" is pos[m] - pos[m-1]
        d = disp[m - 1]
        if vnorm == 0.0:
            return np.linalg.norm(d) <= 0.02
        dn = np.linalg.norm(d)
        if dn < 1e-12:
            return False
        return float(np.dot(d, vel)) / (dn * vnorm) >= 0.9

    start_k = 1 if switch_frame == 0 else 0
    for k in range(start_k, n - switch_frame - 2):
        if all(frame_ok(switch_frame + k + j) for j in range(3)):
            return k
    return NOT_ADHERED


def continuity_jump(frames_tokens, switch_frame, frames_per_chunk=3):
    """Max consecutive-frame displacement within +-1 chunk of the boundary."""
    pos = frame_positions(frames_tokens)
    lo = max(switch_frame - frames_per_chunk, 0)
    hi = min(switch_frame + frames_per_chunk, len(pos) - 1)
    if hi <= lo:
        raise ContractError("boundary window is empty")
    deltas = np.diff(pos[lo:hi + 1], axis=0)
    return float(np.max(np.linalg.norm(deltas, axis=1)))


def identity_drift(frames_tokens):
    """Max deviation of the identity code from its initial value."""
    ids = frame_identities(frames_tokens)
    return float(np.max(np.linalg.norm(ids - ids[0], axis=1)))


class AnalyticTeacher:
    """Closed-form stand-in for a pretrained teacher model.

    Decodes the observable state from a latent frame and produces the
    expected continuation under the active command (noise-free
    recursion, zero nuisance).
    """

    def decode(self, frame_tokens):
        pos, ident = decode_frame(frame_tokens)
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(ident))):
            return None
        return np.clip(pos, -1.0, 1.0), ident

    def expected_continuation(self, pos, identity, prompt, n_frames):
        return teacher_rollout(pos, identity, prompt, n_frames, rng=None)


def evaluation_report(strategy, lags, jumps, drifts):
    """The JSON report shape the ablation emits per cell."""

    def _f(x):
        return None if x is None or not np.isfinite(x) else float(x)

    return {
        "strategy": strategy,
        "seeds": max(len(lags), len(jumps), len(drifts)),
        "adherence_lag_median": _f(np.median(lags) if len(lags) else None),
        "continuity_jump_p90": _f(np.percentile(jumps, 90) if len(jumps) else None),
        "identity_drift_p90": _f(np.percentile(drifts, 90) if len(drifts) else None),
    }
