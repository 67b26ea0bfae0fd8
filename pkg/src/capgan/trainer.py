"""Learning procedures: likelihood pretraining, rollout-based reward
estimation, the full-vocabulary policy-gradient update, critic updates, the
alternating adversarial loop, and the fixed-generator critic baseline.

The policy update treats each emitted word as an action. For a sampled
sentence, every step's candidate values V(prefix + w) are estimated for all
words w under a frozen snapshot of the policy (taken at the start of the
update round), and the ascent direction sums grad pi(w) * V(prefix + w) over
the whole extended vocabulary. With a constant critic this direction is
exactly zero, which the tests pin down.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, replace

import numpy as np

from .corpus import CorpusRecord, Sentence, sample_mismatched_many
from .errors import ConfigError
from .evaluator import EvaluatorParams, evaluator_loss_batch, score, score_many
from .generator import (
    FrozenGeneratorParams,
    GeneratorParams,
    decode_batch,
    freeze_generator,
    frozen_prefix_states,
    nll_forward_backward,
    policy_backward_from_tape,
    policy_tape,
    rollout_continuations,
    sample_noise,
)
from .nn import ParamStore, lstm_cell_forward, rng_from_seed, spawn_seeds


@dataclass
class TrainConfig:
    batch_size: int = 64
    learning_rate: float = 0.0001
    rollout_count: int = 16
    t_max: int = 16
    alpha: float = 0.5
    beta: float = 0.5
    pretrain_epochs_g: int = 20
    pretrain_epochs_e: int = 5
    adversarial_iters: int = 100
    g_steps_per_iter: int = 1
    e_steps_per_iter: int = 1
    seed: int = 0
    temperature: float = 1.0
    noise_dim: int = 16
    sigma_z: float = 1.0
    momentum: float = 0.0
    rollout_stride: int = 1
    use_sampled_reinforce: bool = False
    e_refs_per_image: int = 2
    e_gen_per_image: int = 2
    e_mism_per_image: int = 2
    # Per-phase rate overrides; None falls back to learning_rate.
    mle_learning_rate: float | None = None
    g_learning_rate: float | None = None
    e_learning_rate: float | None = None

    def __post_init__(self):
        for name in (
            "batch_size",
            "rollout_count",
            "t_max",
            "rollout_stride",
            "e_refs_per_image",
            "e_gen_per_image",
            "e_mism_per_image",
        ):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        # Step counts admit 0 so the fixed-generator baseline can disable G-updates.
        for name in ("g_steps_per_iter", "e_steps_per_iter", "adversarial_iters",
                     "pretrain_epochs_g", "pretrain_epochs_e"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")

    @property
    def mle_lr(self) -> float:
        return self.mle_learning_rate if self.mle_learning_rate is not None else self.learning_rate

    @property
    def g_lr(self) -> float:
        return self.g_learning_rate if self.g_learning_rate is not None else self.learning_rate

    @property
    def e_lr(self) -> float:
        return self.e_learning_rate if self.e_learning_rate is not None else self.learning_rate

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RewardEstimate:
    """Mean critic score of completions; exact (zero variance) for complete inputs."""

    value: float
    n_rollouts: int
    std: float


class TrainReport:
    """Per-iteration training diagnostics, serializable as JSONL plus a CSV summary.

    Wall-clock timings live on the object (self.timings) but are not written
    into the serialized rows, so reports are byte-stable across reruns.
    """

    def __init__(self, seed: int, config: dict, phase: str):
        self.seed = seed
        self.config = dict(config)
        self.phase = phase
        self.rows: list[dict] = []
        self.timings: list[float] = []

    def add(self, wall_seconds: float | None = None, **row):
        self.rows.append(row)
        if wall_seconds is not None:
            self.timings.append(wall_seconds)

    def to_jsonl(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            header = {"phase": self.phase, "seed": self.seed, "config": self.config}
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for row in self.rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")

    def to_csv(self, path):
        keys: list[str] = []
        for row in self.rows:
            for k in row:
                if k not in keys:
                    keys.append(k)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=keys)
            writer.writeheader()
            for row in self.rows:
                writer.writerow(row)


def sgd_apply(store: ParamStore, lr: float, maximize: bool = False, momentum: float = 0.0,
              velocity: dict | None = None):
    """Plain SGD step from store.grads; optional heavy-ball momentum."""
    sign = 1.0 if maximize else -1.0
    for name, p in store.params.items():
        g = store.grads[name]
        if momentum > 0.0 and velocity is not None:
            v = velocity.setdefault(name, np.zeros_like(g))
            v *= momentum
            v += g
            g = v
        p += sign * lr * g
    store.assert_finite()


def _require_encoded(records):
    for rec in records:
        if rec.encoded_refs is None:
            raise ValueError("corpus records must be encoded first (encode_corpus)")


# --- MLE pretraining -----------------------------------------------------------


def evaluate_nll(gen: GeneratorParams, records, cfg: TrainConfig, rng) -> float:
    """Mean per-token NLL over all references, teacher-forced, fresh z per example."""
    _require_encoded(records)
    pairs = [(rec, s) for rec in records for s in rec.encoded_refs]
    total, count = 0.0, 0
    for start in range(0, len(pairs), cfg.batch_size):
        chunk = pairs[start : start + cfg.batch_size]
        feats = np.stack([rec.feature for rec, _ in chunk])
        zs = np.stack([sample_noise(rng, cfg.noise_dim, cfg.sigma_z) for _ in chunk])
        nll, n = nll_forward_backward(gen, feats, zs, [s for _, s in chunk], backward=False)
        total += nll * n
        count += n
    return total / count


def pretrain_mle(gen: GeneratorParams, records, cfg: TrainConfig, val_records=None) -> TrainReport:
    """Teacher-forced cross-entropy minimization with mini-batch SGD.

    Noise is resampled per example per epoch. The report carries one row per
    epoch (plus an iteration-0 row with the untrained NLL); the trajectory is
    fully determined by cfg.seed.
    """
    _require_encoded(records)
    if not records:
        raise ValueError("empty corpus")
    report = TrainReport(cfg.seed, cfg.to_dict(), "pretrain_g")
    rng = rng_from_seed(spawn_seeds(cfg.seed, 2)[0])
    velocity: dict = {}
    pairs = [(i, j) for i, rec in enumerate(records) for j in range(len(rec.encoded_refs))]

    def val_nll():
        if not val_records:
            return None
        return evaluate_nll(gen, val_records, cfg, rng_from_seed(cfg.seed + 99))

    t0 = time.perf_counter()
    nll0 = evaluate_nll(gen, records, cfg, rng_from_seed(cfg.seed + 98))
    report.add(iteration=0, nll_train=nll0, nll_val=val_nll(),
               wall_seconds=time.perf_counter() - t0)
    for epoch in range(1, cfg.pretrain_epochs_g + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(pairs))
        epoch_loss, epoch_tokens = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            batch = [pairs[k] for k in order[start : start + cfg.batch_size]]
            feats = np.stack([records[i].feature for i, _ in batch])
            zs = np.stack([sample_noise(rng, cfg.noise_dim, cfg.sigma_z) for _ in batch])
            sents = [records[i].encoded_refs[j] for i, j in batch]
            gen.store.zero_grads()
            nll, n = nll_forward_backward(gen, feats, zs, sents)
            sgd_apply(gen.store, cfg.mle_lr, momentum=cfg.momentum, velocity=velocity)
            epoch_loss += nll * n
            epoch_tokens += n
        report.add(
            iteration=epoch,
            nll_train=epoch_loss / epoch_tokens,
            nll_val=val_nll(),
            wall_seconds=time.perf_counter() - t0,
        )
    return report


# --- expected future reward ----------------------------------------------------


def _prefix_tokens(prefix) -> tuple:
    return tuple(prefix.tokens) if isinstance(prefix, Sentence) else tuple(prefix)


def expected_future_reward(
    f,
    z,
    prefix,
    frozen: GeneratorParams,
    ev: EvaluatorParams,
    n: int,
    rng=None,
    t_max: int = 16,
    temperature: float = 1.0,
) -> RewardEstimate:
    """Mean critic score over n frozen-policy completions of the prefix.

    A prefix that already ends with END (or has a full t_max-token body) is a
    complete sentence: its exact score is returned with zero variance and no
    simulation. std is the sample standard deviation of the rollout scores.
    """
    if n < 1:
        raise ConfigError("rollout count n must be >= 1")
    tokens = _prefix_tokens(prefix)
    if tokens and tokens[-1] == frozen.end_id:
        r = score(f, Sentence(tokens, truncated=False), ev).r
        return RewardEstimate(float(r), 0, 0.0)
    if len(tokens) >= t_max:
        sent = Sentence(tokens[:t_max] + (frozen.end_id,), truncated=True)
        return RewardEstimate(float(score(f, sent, ev).r), 0, 0.0)
    if rng is None:
        raise ValueError("expected_future_reward needs an rng for incomplete prefixes")
    hs, cs = frozen_prefix_states(frozen, f, z, tokens + (frozen.end_id,))
    # State after consuming the whole prefix = state before a hypothetical next action.
    h_last, c_last = hs[-1], cs[-1]
    prev = tokens[-1] if tokens else frozen.bos_id
    h = np.tile(h_last, (n, 1))
    c = np.tile(c_last, (n, 1))
    outs = rollout_continuations(
        frozen,
        h,
        c,
        np.full(n, prev),
        np.full(n, len(tokens), dtype=int),
        t_max,
        rng=rng,
        temperature=temperature,
    )
    sents = [Sentence(tokens + body + (frozen.end_id,), truncated=tr) for body, tr in outs]
    rs = score_many(ev, np.tile(np.asarray(f, dtype=np.float64), (n, 1)), sents)
    std = float(np.std(rs, ddof=1)) if n > 1 else 0.0
    return RewardEstimate(float(rs.mean()), n, std)


def candidate_action_values_batch(
    frozen: GeneratorParams,
    ev: EvaluatorParams,
    items,
    cfg: TrainConfig,
    rng,
) -> list:
    """V(prefix + w) for every word at every step, for a batch of sentences.

    items: list of (feature, noise, Sentence). All Monte Carlo chains for all
    (item, step, word) triples run as one batch under the frozen policy, and
    every completed sentence is scored in one critic pass. Steps skipped by
    rollout_stride get None. Statistically this matches calling
    expected_future_reward per (step, word); it only shares the batching.
    """
    p = frozen.store.params
    V = frozen.vocab_size
    all_words = np.arange(V)
    exact: list = []  # (item, t, w, Sentence)
    chain_key: list = []  # (item, t, w)
    chain_h: list = []
    chain_c: list = []
    chain_prev: list = []
    chain_len: list = []
    bodies = []
    for idx, (f, z, sentence) in enumerate(items):
        actions = list(sentence.tokens) if sentence.complete else list(sentence.body)
        body = sentence.body
        bodies.append(body)
        hs, cs = frozen_prefix_states(frozen, np.asarray(f, dtype=np.float64), z, actions)
        for t in range(len(actions)):
            if t % cfg.rollout_stride != 0:
                continue
            prefix = tuple(body[:t])
            h_next, c_next, _ = lstm_cell_forward(
                p["embed"][all_words],
                np.tile(hs[t], (V, 1)),
                np.tile(cs[t], (V, 1)),
                p["lstm_W"],
                p["lstm_b"],
            )
            for w in range(V):
                if w == frozen.end_id:
                    exact.append((idx, t, w, Sentence(prefix + (frozen.end_id,), truncated=False)))
                elif len(prefix) + 1 >= cfg.t_max:
                    exact.append((idx, t, w, Sentence(prefix + (w, frozen.end_id), truncated=True)))
                else:
                    chain_key.extend([(idx, t, w)] * cfg.rollout_count)
                    chain_h.extend([h_next[w]] * cfg.rollout_count)
                    chain_c.extend([c_next[w]] * cfg.rollout_count)
                    chain_prev.extend([w] * cfg.rollout_count)
                    chain_len.extend([t + 1] * cfg.rollout_count)

    sentences = [s for _, _, _, s in exact]
    keys = [(i, t, w) for i, t, w, _ in exact]
    if chain_key:
        outs = rollout_continuations(
            frozen,
            np.stack(chain_h),
            np.stack(chain_c),
            np.array(chain_prev),
            np.array(chain_len, dtype=int),
            cfg.t_max,
            rng=rng,
            temperature=cfg.temperature,
        )
        for (idx, t, w), (cont, tr) in zip(chain_key, outs):
            prefix = tuple(bodies[idx][:t])
            sentences.append(Sentence(prefix + (w,) + cont + (frozen.end_id,), truncated=tr))
            keys.append((idx, t, w))
    # The critic is deterministic, so each distinct (image, sentence) pair is
    # scored once and the result shared among duplicate rollouts.
    uniq_index: dict = {}
    uniq_sents: list = []
    uniq_item: list = []
    rows = np.empty(len(keys), dtype=int)
    for j, (key, s) in enumerate(zip(keys, sentences)):
        k2 = (key[0], s.tokens)
        pos = uniq_index.get(k2)
        if pos is None:
            pos = len(uniq_sents)
            uniq_index[k2] = pos
            uniq_sents.append(s)
            uniq_item.append(key[0])
        rows[j] = pos
    feats = np.stack([np.asarray(items[i][0], dtype=np.float64) for i in uniq_item])
    rs = score_many(ev, feats, uniq_sents)[rows]

    sums: dict = {}
    counts: dict = {}
    for key, r in zip(keys, rs):
        sums[key] = sums.get(key, 0.0) + r
        counts[key] = counts.get(key, 0) + 1
    out = []
    for idx, (f, z, sentence) in enumerate(items):
        actions = list(sentence.tokens) if sentence.complete else list(sentence.body)
        values: list = [None] * len(actions)
        for t in range(len(actions)):
            if t % cfg.rollout_stride != 0:
                continue
            vec = np.empty(V)
            for w in range(V):
                vec[w] = sums[(idx, t, w)] / counts[(idx, t, w)]
            values[t] = vec
        out.append(values)
    return out


def candidate_action_values(
    frozen: GeneratorParams,
    ev: EvaluatorParams,
    f,
    z,
    sentence: Sentence,
    cfg: TrainConfig,
    rng,
) -> list:
    """Single-sentence view of candidate_action_values_batch."""
    return candidate_action_values_batch(frozen, ev, [(f, z, sentence)], cfg, rng)[0]


def taken_action_values(
    frozen: GeneratorParams, ev: EvaluatorParams, f, z, sentence: Sentence,
    cfg: TrainConfig, rng,
) -> list:
    """Sampled-REINFORCE fallback: V(prefix including the taken word) per step."""
    actions = list(sentence.tokens) if sentence.complete else list(sentence.body)
    body = sentence.body
    values = []
    for t, _ in enumerate(actions):
        if t % cfg.rollout_stride != 0:
            values.append(None)
            continue
        prefix = body[: t + 1] if t < len(body) else sentence.tokens
        est = expected_future_reward(
            f, z, prefix, frozen, ev, cfg.rollout_count, rng, cfg.t_max, cfg.temperature
        )
        values.append(est.value)
    return values


# --- policy-gradient update ----------------------------------------------------


def sentence_action_gradient(gen: GeneratorParams, tape, values, scale: float = 1.0):
    """Ascent gradient for one trajectory given per-step candidate values.

    Per step, d logits = pi * (V - pi . V): the softmax pullback of
    sum_w pi(w) V(w). values entries may be None (skipped steps).
    """
    dlogits = []
    for step, vec in zip(tape["steps"], values):
        if vec is None:
            dlogits.append(None)
            continue
        pi = step["probs"]
        dlogits.append(pi * (vec - float(pi @ vec)))
    policy_backward_from_tape(gen, tape, dlogits, scale=scale)


def _reinforce_gradient(gen: GeneratorParams, tape, sentence, values, scale: float = 1.0):
    actions = list(sentence.tokens) if sentence.complete else list(sentence.body)
    dlogits = []
    for step, w, v in zip(tape["steps"], actions, values):
        if v is None:
            dlogits.append(None)
            continue
        pi = step["probs"]
        d = -pi * v
        d[w] += v
        dlogits.append(d)  # grad log pi(w) * V
    policy_backward_from_tape(gen, tape, dlogits, scale=scale)


def policy_gradient_step(
    gen: GeneratorParams,
    frozen: FrozenGeneratorParams,
    ev: EvaluatorParams,
    batch,
    cfg: TrainConfig,
    rng,
) -> dict:
    """One ascent step on the rollout-estimated expected reward.

    For each record: draw z, sample a sentence from the current policy, then
    estimate V(prefix + w) for all words at each step under the frozen
    snapshot and accumulate the full-vocabulary gradient. Updates gen in
    place; returns diagnostics.
    """
    if not batch:
        raise ValueError("empty batch")
    if gen.noise_dim != cfg.noise_dim:
        raise ConfigError("generator noise_dim does not match cfg.noise_dim")
    gen.store.zero_grads()
    scale = 1.0 / len(batch)
    items = []
    tapes = []
    for rec in batch:
        f = rec.feature if isinstance(rec, CorpusRecord) else np.asarray(rec)
        z = sample_noise(rng, cfg.noise_dim, cfg.sigma_z)
        sentence, tape = policy_tape(
            gen, f, z, cfg.t_max, rng=rng, temperature=cfg.temperature
        )
        items.append((f, z, sentence))
        tapes.append(tape)
    if cfg.use_sampled_reinforce:
        for (f, z, sentence), tape in zip(items, tapes):
            values = taken_action_values(frozen, ev, f, z, sentence, cfg, rng)
            _reinforce_gradient(gen, tape, sentence, values, scale=scale)
    else:
        all_values = candidate_action_values_batch(frozen, ev, items, cfg, rng)
        for (f, z, sentence), tape, values in zip(items, tapes, all_values):
            sentence_action_gradient(gen, tape, values, scale=scale)
    rewards = score_many(
        ev, np.stack([f for f, _, _ in items]), [s for _, _, s in items]
    )
    lengths = [len(s.body) for _, _, s in items]
    sgd_apply(gen.store, cfg.g_lr, maximize=True)
    return {
        "reward_mean": float(rewards.mean()),
        "sentence_len_mean": float(np.mean(lengths)),
    }


# --- critic update --------------------------------------------------------------


def evaluator_step(
    ev: EvaluatorParams,
    gen: GeneratorParams,
    corpus,
    batch,
    cfg: TrainConfig,
    rng,
) -> dict:
    """One ascent step on the three-term critic objective over a record batch.

    Per record: e_refs_per_image references, e_gen_per_image fresh generator
    samples (fresh z each), and e_mism_per_image mismatched references drawn
    uniformly from the other records of `corpus`.
    """
    if not batch:
        raise ValueError("empty batch")
    _require_encoded(batch)
    k_gen = cfg.e_gen_per_image
    feats = np.repeat(np.stack([rec.feature for rec in batch]), k_gen, axis=0)
    zs = np.stack(
        [sample_noise(rng, cfg.noise_dim, cfg.sigma_z) for _ in range(len(batch) * k_gen)]
    )
    gen_sents = decode_batch(gen, feats, zs, cfg.t_max, rng=rng, temperature=cfg.temperature)
    items = []
    for i, rec in enumerate(batch):
        k_ref = min(cfg.e_refs_per_image, len(rec.encoded_refs))
        ref_idx = rng.choice(len(rec.encoded_refs), size=k_ref, replace=False)
        refs = [rec.encoded_refs[int(j)] for j in ref_idx]
        gens = gen_sents[i * k_gen : (i + 1) * k_gen]
        misms = sample_mismatched_many(corpus, rec, rng, cfg.e_mism_per_image)
        items.append((rec.feature, refs, gens, misms))
    ev.store.zero_grads()
    loss, diag = evaluator_loss_batch(ev, items, cfg.alpha, cfg.beta)
    sgd_apply(ev.store, cfg.e_lr, maximize=True)
    diag["e_loss"] = loss
    return diag


def pretrain_evaluator(
    ev: EvaluatorParams, gen: GeneratorParams, records, cfg: TrainConfig
) -> TrainReport:
    """Supervised critic training against a fixed generator, by epochs."""
    _require_encoded(records)
    report = TrainReport(cfg.seed, cfg.to_dict(), "pretrain_e")
    rng = rng_from_seed(spawn_seeds(cfg.seed, 3)[1])
    for epoch in range(1, cfg.pretrain_epochs_e + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(records))
        agg: dict = {}
        n_batches = 0
        for start in range(0, len(order), cfg.batch_size):
            batch = [records[k] for k in order[start : start + cfg.batch_size]]
            diag = evaluator_step(ev, gen, records, batch, cfg, rng)
            for k, v in diag.items():
                agg[k] = agg.get(k, 0.0) + v
            n_batches += 1
        row = {k: v / n_batches for k, v in agg.items()}
        report.add(iteration=epoch, wall_seconds=time.perf_counter() - t0, **row)
    return report


# --- adversarial loop -----------------------------------------------------------


def train_adversarial(
    gen: GeneratorParams,
    ev: EvaluatorParams,
    records,
    cfg: TrainConfig,
) -> TrainReport:
    """Alternating updates: snapshot the policy, then per iteration run
    g_steps_per_iter policy-gradient steps followed by e_steps_per_iter critic
    steps, logging diagnostics per iteration."""
    _require_encoded(records)
    report = TrainReport(cfg.seed, cfg.to_dict(), "adversarial")
    seeds = spawn_seeds(cfg.seed, 4)
    g_rng = rng_from_seed(seeds[2])
    e_rng = rng_from_seed(seeds[3])
    n = len(records)
    for it in range(1, cfg.adversarial_iters + 1):
        t0 = time.perf_counter()
        row: dict = {"iteration": it}
        frozen = freeze_generator(gen)
        for _ in range(cfg.g_steps_per_iter):
            idx = g_rng.choice(n, size=min(cfg.batch_size, n), replace=False)
            diag = policy_gradient_step(gen, frozen, ev, [records[int(i)] for i in idx], cfg, g_rng)
            row.update(diag)
        for _ in range(cfg.e_steps_per_iter):
            idx = e_rng.choice(n, size=min(cfg.batch_size, n), replace=False)
            diag = evaluator_step(ev, gen, records, [records[int(i)] for i in idx], cfg, e_rng)
            row.update(diag)
        report.add(wall_seconds=time.perf_counter() - t0, **row)
    return report


def train_e_ngan(
    ev: EvaluatorParams,
    mle_gen: GeneratorParams,
    records,
    cfg: TrainConfig,
) -> TrainReport:
    """Critic baseline: the adversarial loop with generator updates disabled."""
    return train_adversarial(mle_gen, ev, records, replace(cfg, g_steps_per_iter=0))


# --- alpha/beta validation sweep -------------------------------------------------


def alpha_beta_sweep(
    gen: GeneratorParams,
    train_records,
    val_records,
    cfg: TrainConfig,
    alphas,
    betas,
    init_evaluator_fn,
    iters: int = 50,
) -> list:
    """Short critic trainings over an (alpha, beta) grid.

    Reports, per grid point, the held-out margin between reference scores and
    the larger of the generated/mismatched means. init_evaluator_fn(seed) must
    build a fresh critic.
    """
    _require_encoded(train_records)
    _require_encoded(val_records)
    results = []
    for alpha in alphas:
        for beta in betas:
            sweep_cfg = replace(cfg, alpha=alpha, beta=beta, adversarial_iters=iters)
            ev = init_evaluator_fn(cfg.seed)
            train_e_ngan(ev, gen, train_records, sweep_cfg)
            rng = rng_from_seed(cfg.seed + 7)
            refs, gens, misms = [], [], []
            for rec in val_records:
                refs.append(score(rec.feature, rec.encoded_refs[0], ev).r)
                z = sample_noise(rng, cfg.noise_dim, cfg.sigma_z)
                s = decode_batch(gen, rec.feature[None, :], z[None, :], cfg.t_max, rng=rng)[0]
                gens.append(score(rec.feature, s, ev).r)
                misms.append(
                    score(rec.feature, sample_mismatched_many(val_records, rec, rng, 1)[0], ev).r
                )
            margin = float(np.mean(refs) - max(np.mean(gens), np.mean(misms)))
            results.append({"alpha": alpha, "beta": beta, "val_margin": margin})
    return results
