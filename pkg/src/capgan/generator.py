"""The caption policy: a noise-conditioned LSTM over the extended vocabulary.

The image feature and a Gaussian noise vector are projected (tanh) into the
initial hidden and cell states; each step embeds the previous word, advances
the LSTM, and projects the hidden state to logits over all words plus END.
Decoding modes: ancestral sampling, greedy argmax, and beam search with a
pluggable final-ranking scorer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .corpus import Sentence
from .errors import ShapeError
from .nn import (
    LstmState,
    ParamStore,
    affine,
    lstm_cell_backward,
    lstm_cell_forward,
    log_sum_exp,
    rng_from_seed,
    softmax,
)


@dataclass
class GeneratorParams:
    store: ParamStore
    vocab_size: int
    end_id: int
    bos_id: int
    embed_dim: int
    hidden_dim: int
    feat_dim: int
    noise_dim: int

    def hyperparams(self) -> dict:
        return {
            "kind": "generator",
            "vocab_size": self.vocab_size,
            "end_id": self.end_id,
            "bos_id": self.bos_id,
            "embed_dim": self.embed_dim,
            "hidden_dim": self.hidden_dim,
            "feat_dim": self.feat_dim,
            "noise_dim": self.noise_dim,
        }


class FrozenGeneratorParams(GeneratorParams):
    """Immutable snapshot of the policy taken at the start of an update round."""


def init_generator(
    vocab_size: int,
    end_id: int,
    bos_id: int,
    feat_dim: int,
    noise_dim: int = 16,
    embed_dim: int = 32,
    hidden_dim: int = 64,
    seed: int = 0,
    init_scale: float = 0.1,
) -> GeneratorParams:
    rng = rng_from_seed(seed)
    store = ParamStore(seed=seed)
    cond = feat_dim + noise_dim
    store.add("embed", rng.normal(0.0, init_scale, (vocab_size, embed_dim)))
    store.add("init_h_W", rng.normal(0.0, init_scale, (hidden_dim, cond)))
    store.add("init_h_b", np.zeros(hidden_dim))
    store.add("init_c_W", rng.normal(0.0, init_scale, (hidden_dim, cond)))
    store.add("init_c_b", np.zeros(hidden_dim))
    store.add("lstm_W", rng.normal(0.0, init_scale, (4 * hidden_dim, embed_dim + hidden_dim)))
    store.add("lstm_b", np.zeros(4 * hidden_dim))
    store.add("out_W", rng.normal(0.0, init_scale, (vocab_size, hidden_dim)))
    store.add("out_b", np.zeros(vocab_size))
    return GeneratorParams(
        store, vocab_size, end_id, bos_id, embed_dim, hidden_dim, feat_dim, noise_dim
    )


def save_generator(path, gen: GeneratorParams, vocab_hash: str | None = None):
    from .checkpoint import save_params

    save_params(path, gen.store, gen.hyperparams(), vocab_hash)


def load_generator(path, expect_vocab_hash: str | None = None) -> GeneratorParams:
    from .checkpoint import load_params

    store, header = load_params(path)
    hp = header["hyperparams"]
    if hp.get("kind") != "generator":
        raise ValueError(f"{path}: checkpoint is not a generator")
    if expect_vocab_hash is not None and header.get("vocab_hash") != expect_vocab_hash:
        raise ValueError(
            f"{path}: checkpoint vocabulary hash {header.get('vocab_hash')} "
            f"does not match the current vocabulary {expect_vocab_hash}"
        )
    return GeneratorParams(
        store,
        hp["vocab_size"],
        hp["end_id"],
        hp["bos_id"],
        hp["embed_dim"],
        hp["hidden_dim"],
        hp["feat_dim"],
        hp["noise_dim"],
    )


def freeze_generator(gen: GeneratorParams) -> FrozenGeneratorParams:
    return FrozenGeneratorParams(
        gen.store.freeze(),
        gen.vocab_size,
        gen.end_id,
        gen.bos_id,
        gen.embed_dim,
        gen.hidden_dim,
        gen.feat_dim,
        gen.noise_dim,
    )


def sample_noise(rng, noise_dim: int, sigma_z: float = 1.0) -> np.ndarray:
    return rng.normal(0.0, sigma_z, noise_dim)


def init_state(f, z, gen: GeneratorParams) -> LstmState:
    """h_0 = tanh(W_h [f; z] + b_h), c_0 = tanh(W_c [f; z] + b_c)."""
    f = np.asarray(f, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if f.shape != (gen.feat_dim,) or z.shape != (gen.noise_dim,):
        raise ShapeError(
            f"init_state: feature {f.shape} / noise {z.shape} do not match "
            f"({gen.feat_dim},) / ({gen.noise_dim},)"
        )
    u = np.concatenate([f, z])
    p = gen.store.params
    h0 = np.tanh(affine(u, p["init_h_W"], p["init_h_b"]))
    c0 = np.tanh(affine(u, p["init_c_W"], p["init_c_b"]))
    return LstmState(h0, c0, 0)


def _forward_rows(gen: GeneratorParams, h, c, prev_words):
    """One batched policy step. Returns (logits, h_new, c_new, cache)."""
    p = gen.store.params
    x = p["embed"][prev_words]
    h_new, c_new, cache = lstm_cell_forward(x, h, c, p["lstm_W"], p["lstm_b"])
    logits = h_new @ p["out_W"].T + p["out_b"]
    return logits, h_new, c_new, cache


def step_policy(state: LstmState, prev_word: int, gen: GeneratorParams):
    """Distribution over the extended vocabulary after consuming prev_word.

    Returns (dist, next_state); dist sums to 1.
    """
    if not 0 <= prev_word < gen.vocab_size:
        raise IndexError(f"token {prev_word} out of range for vocab {gen.vocab_size}")
    logits, h, c, _ = _forward_rows(
        gen, state.h[None, :], state.c[None, :], np.array([prev_word])
    )
    return softmax(logits[0]), LstmState(h[0], c[0], state.t + 1)


def _sample_rows(rng, probs):
    """Vectorized categorical draw per row."""
    u = rng.random(probs.shape[0])
    idx = (np.cumsum(probs, axis=1) < u[:, None]).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


def sample_sentence(
    f, z, gen: GeneratorParams, t_max: int = 16, temperature: float = 1.0, rng=None
) -> Sentence:
    """Ancestral sampling until END or t_max body tokens (then forced END)."""
    if t_max < 1:
        raise ValueError("t_max must be >= 1")
    if rng is None:
        raise ValueError("sample_sentence needs an explicit rng")
    state = init_state(f, z, gen)
    h, c = state.h[None, :], state.c[None, :]
    prev = gen.bos_id
    body = []
    for _ in range(t_max):
        logits, h, c, _ = _forward_rows(gen, h, c, np.array([prev]))
        probs = softmax(logits[0], temperature=temperature)
        w = int(_sample_rows(rng, probs[None, :])[0])
        if w == gen.end_id:
            return Sentence(tuple(body) + (gen.end_id,), truncated=False)
        body.append(w)
        prev = w
    return Sentence(tuple(body) + (gen.end_id,), truncated=True)


def greedy_sentence(f, z, gen: GeneratorParams, t_max: int = 16) -> Sentence:
    """Deterministic argmax decoding; ties resolve to the lowest token id."""
    state = init_state(f, z, gen)
    h, c = state.h[None, :], state.c[None, :]
    prev = gen.bos_id
    body = []
    for _ in range(t_max):
        logits, h, c, _ = _forward_rows(gen, h, c, np.array([prev]))
        w = int(np.argmax(logits[0]))
        if w == gen.end_id:
            return Sentence(tuple(body) + (gen.end_id,), truncated=False)
        body.append(w)
        prev = w
    return Sentence(tuple(body) + (gen.end_id,), truncated=True)


def rollout_continuations(
    gen, h, c, prev_words, body_lens, t_max, rng=None, temperature=1.0, greedy=False
):
    """Continue B chains until END or a t_max-token body; returns completed bodies.

    h, c are (B, H) states already advanced past each chain's prefix;
    prev_words holds each chain's last emitted token (or BOS); body_lens the
    current body lengths. Output: list of (body tuple, truncated flag).
    """
    h, c = np.array(h), np.array(c)
    B = h.shape[0]
    bodies = [[] for _ in range(B)]
    truncated = [False] * B
    active = np.arange(B)
    lens = np.asarray(body_lens).copy()
    prev = np.asarray(prev_words).copy()
    while active.size:
        logits, h_new, c_new, _ = _forward_rows(gen, h[active], c[active], prev[active])
        if greedy:
            words = np.argmax(logits, axis=1)
        else:
            words = _sample_rows(rng, softmax(logits, temperature=temperature))
        h[active], c[active] = h_new, c_new
        keep = []
        for row, w in zip(active, words):
            if w == gen.end_id:
                continue
            bodies[row].append(int(w))
            lens[row] += 1
            if lens[row] >= t_max:
                truncated[row] = True
            else:
                keep.append(row)
        prev[active] = words
        active = np.array(keep, dtype=int)
    return [(tuple(b), tr) for b, tr in zip(bodies, truncated)]


def decode_batch(gen, feats, zs, t_max, rng=None, temperature=1.0, greedy=False):
    """Decode one sentence per (feature, noise) row, batched."""
    feats = np.asarray(feats, dtype=np.float64)
    zs = np.asarray(zs, dtype=np.float64)
    _, h, c = _init_states_batch(gen, feats, zs)
    B = h.shape[0]
    out = rollout_continuations(
        gen,
        h,
        c,
        np.full(B, gen.bos_id),
        np.zeros(B, dtype=int),
        t_max,
        rng=rng,
        temperature=temperature,
        greedy=greedy,
    )
    return [Sentence(body + (gen.end_id,), truncated=tr) for body, tr in out]


def frozen_prefix_states(gen, f, z, actions):
    """States before each of the T actions, under this generator's parameters.

    Returns (h_list, c_list) of length T: entry t is the state after consuming
    BOS and actions[:t].
    """
    state = init_state(f, z, gen)
    h, c = state.h[None, :], state.c[None, :]
    hs, cs = [h[0]], [c[0]]
    prev = gen.bos_id
    for w in actions[:-1]:
        _, h, c, _ = _forward_rows(gen, h, c, np.array([prev]))
        hs.append(h[0])
        cs.append(c[0])
        prev = w
    return hs, cs


def policy_tape(gen, f, z, t_max, rng=None, temperature=1.0, force_tokens=None):
    """Roll one sentence (or replay force_tokens) recording the forward tape.

    The tape holds, per action, the cell cache, the input token, and the
    temperature-1 policy distribution, plus the initial-state cache; it is
    what policy_backward_from_tape consumes. Returns (sentence, tape).
    """
    f = np.asarray(f, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    u, h, c = _init_states_batch(gen, f[None, :], z[None, :])
    tape = {"u": u, "h0": h, "c0": c, "steps": []}
    body = []
    prev = gen.bos_id
    truncated = False
    replay = list(force_tokens) if force_tokens is not None else None
    if replay is not None:
        ends = [i for i, w in enumerate(replay) if w == gen.end_id]
        terminated = bool(ends) and ends == [len(replay) - 1]
        if ends and not terminated:
            raise ValueError("force_tokens: END may only appear as the final action")
        if not terminated and len(replay) != t_max:
            raise ValueError("force_tokens without END must have exactly t_max actions")
        if len(replay) > t_max:
            raise ValueError("force_tokens has more than t_max actions")
    for t in range(t_max):
        logits, h, c, cache = _forward_rows(gen, h, c, np.array([prev]))
        probs = softmax(logits[0])
        if replay is not None:
            w = replay[t] if t < len(replay) else gen.end_id
            sampled = t < len(replay)
        else:
            if temperature == 1.0:
                w = int(_sample_rows(rng, probs[None, :])[0])
            else:
                w = int(_sample_rows(rng, softmax(logits, temperature=temperature))[0])
            sampled = True
        if sampled:
            tape["steps"].append({"cache": cache, "input": prev, "probs": probs})
        if w == gen.end_id:
            if replay is not None and t < len(replay) - 1:
                raise ValueError("force_tokens contains END before its final position")
            break
        body.append(w)
        prev = w
    else:
        truncated = True
    sentence = Sentence(tuple(body) + (gen.end_id,), truncated=truncated)
    return sentence, tape


def policy_backward_from_tape(gen: GeneratorParams, tape, dlogits_steps, scale=1.0):
    """Accumulate d(objective)/d(theta) into gen.store.grads given per-step dlogits.

    dlogits_steps aligns with tape['steps']; None entries contribute no direct
    logit gradient but the recurrence still backpropagates through them.
    """
    p, g = gen.store.params, gen.store.grads
    steps = tape["steps"]
    H = gen.hidden_dim
    dh = np.zeros((1, H))
    dc = np.zeros((1, H))
    for t in reversed(range(len(steps))):
        step = steps[t]
        cache = step["cache"]
        dh_out = np.zeros((1, H))
        dl = dlogits_steps[t]
        if dl is not None:
            dl = (dl * scale)[None, :]
            h_step = cache[3] * cache[6]
            g["out_W"] += dl.T @ h_step
            g["out_b"] += dl[0]
            dh_out = dl @ p["out_W"]
        dx, dh, dc, dW, db = lstm_cell_backward(dh + dh_out, dc, cache, p["lstm_W"])
        g["lstm_W"] += dW
        g["lstm_b"] += db
        g["embed"][step["input"]] += dx[0]
    _init_states_backward(gen, tape["u"], tape["h0"], tape["c0"], dh, dc)


def sentence_log_likelihood(f, z, sentence: Sentence, gen: GeneratorParams) -> float:
    """log P(sentence | f, z) summed over all tokens including END."""
    state = init_state(f, z, gen)
    h, c = state.h[None, :], state.c[None, :]
    prev = gen.bos_id
    total = 0.0
    for w in sentence.tokens:
        logits, h, c, _ = _forward_rows(gen, h, c, np.array([prev]))
        total += float(logits[0, w] - log_sum_exp(logits[0]))
        prev = w
    return total


# --- teacher-forced NLL with backward (used by MLE pretraining) ---------------


def _init_states_batch(gen: GeneratorParams, feats, zs):
    p = gen.store.params
    u = np.concatenate([feats, zs], axis=1)
    h0 = np.tanh(u @ p["init_h_W"].T + p["init_h_b"])
    c0 = np.tanh(u @ p["init_c_W"].T + p["init_c_b"])
    return u, h0, c0


def _init_states_backward(gen: GeneratorParams, u, h0, c0, dh0, dc0):
    g = gen.store.grads
    da_h = dh0 * (1.0 - h0 * h0)
    da_c = dc0 * (1.0 - c0 * c0)
    g["init_h_W"] += da_h.T @ u
    g["init_h_b"] += da_h.sum(axis=0)
    g["init_c_W"] += da_c.T @ u
    g["init_c_b"] += da_c.sum(axis=0)


def nll_forward_backward(gen: GeneratorParams, feats, zs, sentences, backward=True):
    """Mean per-token NLL of the sentences under teacher forcing.

    Accumulates gradients of the mean NLL into gen.store.grads when backward
    is set. Returns (mean_nll, token_count).
    """
    p = gen.store.params
    B = len(sentences)
    if B == 0:
        raise ValueError("empty batch")
    lengths = np.array([len(s.tokens) for s in sentences])
    T = int(lengths.max())
    n_tokens = int(lengths.sum())

    inputs = np.full((B, T), gen.bos_id, dtype=int)
    targets = np.zeros((B, T), dtype=int)
    mask = np.zeros((B, T))
    for i, s in enumerate(sentences):
        toks = s.tokens
        targets[i, : len(toks)] = toks
        inputs[i, 1 : len(toks)] = toks[:-1]
        mask[i, : len(toks)] = 1.0

    u, h, c = _init_states_batch(gen, np.asarray(feats), np.asarray(zs))
    h0, c0 = h, c
    caches = []
    total = 0.0
    probs_steps = []
    for t in range(T):
        logits, h_new, c_new, cache = _forward_rows(gen, h, c, inputs[:, t])
        m = mask[:, t : t + 1]
        probs = softmax(logits)
        lse = log_sum_exp(logits)
        picked = logits[np.arange(B), targets[:, t]]
        total += float(((lse - picked) * mask[:, t]).sum())
        caches.append((cache, h, c))
        probs_steps.append(probs)
        h = m * h_new + (1.0 - m) * h
        c = m * c_new + (1.0 - m) * c
    mean_nll = total / n_tokens

    if backward:
        g = gen.store.grads
        dh = np.zeros_like(h)
        dc = np.zeros_like(c)
        for t in reversed(range(T)):
            cache, h_prev, c_prev = caches[t]
            m = mask[:, t : t + 1]
            dlogits = probs_steps[t].copy()
            dlogits[np.arange(B), targets[:, t]] -= 1.0
            dlogits *= mask[:, t : t + 1] / n_tokens
            h_step = cache[3] * cache[6]  # o * tanh(c), the cell output
            g["out_W"] += dlogits.T @ h_step
            g["out_b"] += dlogits.sum(axis=0)
            dh_out = dlogits @ p["out_W"]
            dx, dh_prev, dc_prev, dW, db = lstm_cell_backward(
                dh * m + dh_out, dc * m, cache, p["lstm_W"]
            )
            g["lstm_W"] += dW
            g["lstm_b"] += db
            np.add.at(g["embed"], inputs[:, t], dx)
            dh = dh_prev + dh * (1.0 - m)
            dc = dc_prev + dc * (1.0 - m)
        _init_states_backward(gen, u, h0, c0, dh, dc)
    return mean_nll, n_tokens


# --- beam search ----------------------------------------------------------------


def beam_search(f, z, gen: GeneratorParams, beam: int, scorer, t_max: int = 16) -> Sentence:
    """Beam expansion by cumulative log-probability; final pick by scorer.

    The beam keeps the `beam` best partial continuations per step. Hypotheses
    whose kept expansion is END complete; at t_max the rest are force-completed.
    Among all completed candidates the scorer (e.g. learned-evaluator reward or
    log-likelihood) selects the output. Fully deterministic.
    """
    if beam < 1:
        raise ValueError("beam must be >= 1")
    state = init_state(f, z, gen)
    # hypothesis: (body tuple, cum logprob, h, c, prev word)
    hyps = [((), 0.0, state.h, state.c, gen.bos_id)]
    completed = []
    for _ in range(t_max):
        if not hyps:
            break
        h = np.stack([hy[2] for hy in hyps])
        c = np.stack([hy[3] for hy in hyps])
        prev = np.array([hy[4] for hy in hyps])
        logits, h_new, c_new, _ = _forward_rows(gen, h, c, prev)
        logp = logits - log_sum_exp(logits)[:, None]
        candidates = []
        for i, (body, lp, _, _, _) in enumerate(hyps):
            for w in range(gen.vocab_size):
                candidates.append((lp + logp[i, w], i, w, body))
        candidates.sort(key=lambda item: (-item[0], item[1], item[2]))
        next_hyps = []
        for lp, i, w, body in candidates[:beam]:
            if w == gen.end_id:
                completed.append((Sentence(body + (gen.end_id,), truncated=False), lp))
            else:
                next_hyps.append((body + (w,), lp, h_new[i], c_new[i], w))
        hyps = next_hyps
    for body, lp, _, _, _ in hyps:
        completed.append((Sentence(body + (gen.end_id,), truncated=True), lp))
    best = None
    best_score = -math.inf
    for sentence, _ in completed:
        s = float(scorer(sentence))
        if s > best_score:
            best, best_score = sentence, s
    return best
