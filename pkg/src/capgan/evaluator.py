"""The learned caption critic.

An image branch (affine + tanh on the feature vector) and a sentence branch
(word embedding + LSTM, final hidden state through affine + tanh) map both
inputs into a shared space; compatibility is the sigmoid of their dot
product. Training maximizes log-score on matching references while
suppressing generated and mismatched descriptions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Sentence
from .errors import ShapeError
from .nn import ParamStore, lstm_cell_backward, lstm_cell_forward, rng_from_seed, sigmoid

LOG_CLAMP = 1e-12  # keeps the training loss finite when the critic saturates


@dataclass
class EvaluatorParams:
    store: ParamStore
    vocab_size: int
    end_id: int
    feat_dim: int
    embed_dim: int
    hidden_dim: int
    joint_dim: int

    def hyperparams(self) -> dict:
        return {
            "kind": "evaluator",
            "vocab_size": self.vocab_size,
            "end_id": self.end_id,
            "feat_dim": self.feat_dim,
            "embed_dim": self.embed_dim,
            "hidden_dim": self.hidden_dim,
            "joint_dim": self.joint_dim,
        }


@dataclass
class ScoreBreakdown:
    image_embedding: np.ndarray
    sentence_embedding: np.ndarray
    dot: float
    r: float


def init_evaluator(
    vocab_size: int,
    end_id: int,
    feat_dim: int,
    embed_dim: int = 32,
    hidden_dim: int = 64,
    joint_dim: int = 32,
    seed: int = 0,
    init_scale: float = 0.3,
) -> EvaluatorParams:
    # init_scale 0.3: smaller inits leave the branch dot products too weak for
    # the image-sentence association to train at desk scale.
    rng = rng_from_seed(seed)
    store = ParamStore(seed=seed)
    store.add("img_W", rng.normal(0.0, init_scale, (joint_dim, feat_dim)))
    store.add("img_b", np.zeros(joint_dim))
    store.add("embed", rng.normal(0.0, init_scale, (vocab_size, embed_dim)))
    store.add("lstm_W", rng.normal(0.0, init_scale, (4 * hidden_dim, embed_dim + hidden_dim)))
    store.add("lstm_b", np.zeros(4 * hidden_dim))
    store.add("sent_W", rng.normal(0.0, init_scale, (joint_dim, hidden_dim)))
    store.add("sent_b", np.zeros(joint_dim))
    return EvaluatorParams(store, vocab_size, end_id, feat_dim, embed_dim, hidden_dim, joint_dim)


def save_evaluator(path, ev: EvaluatorParams, vocab_hash: str | None = None):
    from .checkpoint import save_params

    save_params(path, ev.store, ev.hyperparams(), vocab_hash)


def load_evaluator(path, expect_vocab_hash: str | None = None) -> EvaluatorParams:
    """Load a critic checkpoint; refuses a vocabulary-hash mismatch."""
    from .checkpoint import load_params

    store, header = load_params(path)
    hp = header["hyperparams"]
    if hp.get("kind") != "evaluator":
        raise ValueError(f"{path}: checkpoint is not an evaluator")
    if expect_vocab_hash is not None and header.get("vocab_hash") != expect_vocab_hash:
        raise ValueError(
            f"{path}: checkpoint vocabulary hash {header.get('vocab_hash')} "
            f"does not match the current vocabulary {expect_vocab_hash}"
        )
    return EvaluatorParams(
        store,
        hp["vocab_size"],
        hp["end_id"],
        hp["feat_dim"],
        hp["embed_dim"],
        hp["hidden_dim"],
        hp["joint_dim"],
    )


def _clamp_unit_open(r):
    """Strictly inside (0, 1) even when float64 rounds the sigmoid to an endpoint."""
    return np.clip(r, 1e-300, 1.0 - 1e-16)


def _clamped_sigmoid(dot: float) -> float:
    return float(_clamp_unit_open(sigmoid(np.float64(dot))))


def _sentence_branch_forward(ev: EvaluatorParams, sentences):
    """Batched LSTM over token sequences; returns (final hidden, tape)."""
    p = ev.store.params
    B = len(sentences)
    lengths = np.array([len(s.tokens) for s in sentences])
    if (lengths < 1).any():
        raise ValueError("evaluator: sentences must contain at least END")
    T = int(lengths.max())
    tokens = np.zeros((B, T), dtype=int)
    mask = np.zeros((B, T))
    for i, s in enumerate(sentences):
        if min(s.tokens) < 0 or max(s.tokens) >= ev.vocab_size:
            raise IndexError(f"token id out of range for evaluator vocab {ev.vocab_size}")
        tokens[i, : len(s.tokens)] = s.tokens
        mask[i, : len(s.tokens)] = 1.0
    h = np.zeros((B, ev.hidden_dim))
    c = np.zeros((B, ev.hidden_dim))
    caches = []
    for t in range(T):
        h_new, c_new, cache = lstm_cell_forward(
            p["embed"][tokens[:, t]], h, c, p["lstm_W"], p["lstm_b"]
        )
        m = mask[:, t : t + 1]
        caches.append(cache)
        h = m * h_new + (1.0 - m) * h
        c = m * c_new + (1.0 - m) * c
    return h, (tokens, mask, caches)


def _sentence_branch_backward(ev: EvaluatorParams, dh_final, tape):
    p, g = ev.store.params, ev.store.grads
    tokens, mask, caches = tape
    dh = dh_final
    dc = np.zeros_like(dh_final)
    for t in reversed(range(tokens.shape[1])):
        m = mask[:, t : t + 1]
        dx, dh_prev, dc_prev, dW, db = lstm_cell_backward(
            dh * m, dc * m, caches[t], p["lstm_W"]
        )
        g["lstm_W"] += dW
        g["lstm_b"] += db
        np.add.at(g["embed"], tokens[:, t], dx)
        dh = dh_prev + dh * (1.0 - m)
        dc = dc_prev + dc * (1.0 - m)


def embed_sentence(sentence: Sentence, ev: EvaluatorParams) -> np.ndarray:
    """Sentence-branch embedding: LSTM final hidden state -> affine -> tanh."""
    p = ev.store.params
    h, _ = _sentence_branch_forward(ev, [sentence])
    return np.tanh(h @ p["sent_W"].T + p["sent_b"])[0]


def embed_image(f, ev: EvaluatorParams) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (ev.feat_dim,):
        raise ShapeError(f"feature {f.shape} does not match evaluator dim {ev.feat_dim}")
    p = ev.store.params
    return np.tanh(p["img_W"] @ f + p["img_b"])


def score(f, sentence: Sentence, ev: EvaluatorParams) -> ScoreBreakdown:
    """r = sigmoid(<image embedding, sentence embedding>), strictly in (0, 1)."""
    ei = embed_image(f, ev)
    es = embed_sentence(sentence, ev)
    dot = float(ei @ es)
    return ScoreBreakdown(ei, es, dot, _clamped_sigmoid(dot))


def score_many(ev: EvaluatorParams, feats, sentences) -> np.ndarray:
    """Scores for aligned (feature, sentence) pairs, batched.

    Rows are processed longest-first so short sentences drop out of the
    recurrence early; results come back in input order.
    """
    p = ev.store.params
    feats = np.asarray(feats, dtype=np.float64)
    B = len(sentences)
    lengths = np.array([len(s.tokens) for s in sentences])
    order = np.argsort(-lengths, kind="stable")
    sorted_lens = lengths[order]
    T = int(sorted_lens[0])
    tokens = np.zeros((B, T), dtype=int)
    for row, idx in enumerate(order):
        toks = sentences[idx].tokens
        tokens[row, : len(toks)] = toks
    if tokens.max() >= ev.vocab_size or tokens.min() < 0:
        raise IndexError(f"token id out of range for evaluator vocab {ev.vocab_size}")
    h = np.zeros((B, ev.hidden_dim))
    c = np.zeros((B, ev.hidden_dim))
    for t in range(T):
        k = int((sorted_lens > t).sum())
        h_new, c_new, _ = lstm_cell_forward(
            p["embed"][tokens[:k, t]], h[:k], c[:k], p["lstm_W"], p["lstm_b"]
        )
        h[:k] = h_new
        c[:k] = c_new
    es = np.tanh(h @ p["sent_W"].T + p["sent_b"])
    ei = np.tanh(feats @ p["img_W"].T + p["img_b"])
    dots = (ei[order] * es).sum(axis=1)
    out = np.empty(B)
    out[order] = _clamp_unit_open(sigmoid(dots))
    return out


def evaluator_loss_batch(ev: EvaluatorParams, items, alpha: float, beta: float, backward=True):
    """Mean three-term objective over images; to be ascended.

    items: list of (feature, refs, generated, mismatched) with non-empty
    sentence lists. Per image: mean log r over refs + alpha * mean log(1-r)
    over generated + beta * mean log(1-r) over mismatched. Gradients for
    ascent accumulate into ev.store.grads when backward is set.

    Returns (loss, diagnostics) where diagnostics has mean scores per group.
    """
    if not items:
        raise ValueError("empty batch")
    N = len(items)
    feats_rows = []
    sentences = []
    wts = []
    kinds = []
    for f, refs, gens, misms in items:
        for group, coeff, kind in ((refs, 1.0, 0), (gens, alpha, 1), (misms, beta, 2)):
            if not group:
                raise ValueError("evaluator_loss: every sentence group must be non-empty")
            for s in group:
                feats_rows.append(np.asarray(f, dtype=np.float64))
                sentences.append(s)
                wts.append(coeff / (N * len(group)))
                kinds.append(kind)
    feats = np.stack(feats_rows)
    wts = np.array(wts)
    kinds = np.array(kinds)

    p, g = ev.store.params, ev.store.grads
    ei = np.tanh(feats @ p["img_W"].T + p["img_b"])
    h_final, tape = _sentence_branch_forward(ev, sentences)
    es = np.tanh(h_final @ p["sent_W"].T + p["sent_b"])
    dots = (ei * es).sum(axis=1)
    r = _clamp_unit_open(sigmoid(dots))

    is_ref = kinds == 0
    logs = np.where(is_ref, np.log(np.maximum(r, LOG_CLAMP)), np.log(np.maximum(1.0 - r, LOG_CLAMP)))
    loss = float((wts * logs).sum())
    diagnostics = {
        "score_refs": float(r[kinds == 0].mean()),
        "score_gen": float(r[kinds == 1].mean()) if (kinds == 1).any() else float("nan"),
        "score_mism": float(r[kinds == 2].mean()) if (kinds == 2).any() else float("nan"),
    }

    if backward:
        # d/d(dot) of log sigma = 1 - r; of log(1 - sigma) = -r.
        ddots = wts * np.where(is_ref, 1.0 - r, -r)
        dei = ddots[:, None] * es
        des = ddots[:, None] * ei
        da_i = dei * (1.0 - ei * ei)
        g["img_W"] += da_i.T @ feats
        g["img_b"] += da_i.sum(axis=0)
        da_s = des * (1.0 - es * es)
        g["sent_W"] += da_s.T @ h_final
        g["sent_b"] += da_s.sum(axis=0)
        _sentence_branch_backward(ev, da_s @ p["sent_W"], tape)
    return loss, diagnostics


def evaluator_loss(f, refs, gens, misms, alpha: float, beta: float, ev: EvaluatorParams):
    """Single-image three-term loss; gradients (for ascent) land in ev.store.grads."""
    loss, _ = evaluator_loss_batch(ev, [(f, refs, gens, misms)], alpha, beta)
    return loss, ev.store.grads
