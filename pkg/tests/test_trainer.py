"""Training procedures: teacher-forced pretraining, rollout value estimation,
the full-vocabulary policy gradient, critic updates, and the alternating loop.

The tiny-instance oracles here enumerate every trajectory of a 3-token-vocab,
2-step policy, so expectations and gradients have exact reference values.
"""

import itertools
from dataclasses import replace

import numpy as np
import pytest

from capgan.corpus import CorpusRecord, Sentence, encode_corpus, build_vocabulary
from capgan.errors import ConfigError
from capgan.evaluator import init_evaluator, score
from capgan.generator import (
    freeze_generator,
    init_generator,
    init_state,
    policy_tape,
    step_policy,
)
from capgan.nn import rng_from_seed
from capgan.trainer import (
    RewardEstimate,
    TrainConfig,
    TrainReport,
    candidate_action_values,
    evaluator_step,
    expected_future_reward,
    policy_gradient_step,
    pretrain_mle,
    pretrain_evaluator,
    sentence_action_gradient,
    train_adversarial,
    train_e_ngan,
)

V, END, BOS, TMAX = 3, 2, 0, 2


def tiny_gen(seed=11, scale=0.5):
    return init_generator(vocab_size=V, end_id=END, bos_id=BOS, feat_dim=3,
                          noise_dim=2, embed_dim=3, hidden_dim=4, seed=seed,
                          init_scale=scale)


def tiny_eval(seed=12, scale=0.5):
    return init_evaluator(vocab_size=V, end_id=END, feat_dim=3, embed_dim=3,
                          hidden_dim=4, joint_dim=3, seed=seed, init_scale=scale)


def constant_eval():
    """All-zero critic: every score is exactly sigmoid(0) = 0.5."""
    ev = tiny_eval(scale=0.0)
    return ev


@pytest.fixture
def fz():
    rng = rng_from_seed(13)
    return rng.normal(0, 1, 3), rng.normal(0, 1, 2)


def all_trajectories(t_max=TMAX):
    words = [w for w in range(V) if w != END]
    out = []
    for L in range(t_max):
        for body in itertools.product(words, repeat=L):
            out.append(tuple(body) + (END,))
    for body in itertools.product(words, repeat=t_max):
        out.append(tuple(body))
    return out


def traj_sentence(traj):
    if traj[-1] == END:
        return Sentence(traj, truncated=False)
    return Sentence(traj + (END,), truncated=True)


def step_dist(gen, f, z, prefix_actions):
    state = init_state(f, z, gen)
    prev = BOS
    dist = None
    for a in tuple(prefix_actions) + (None,):
        dist, state = step_policy(state, prev, gen)
        if a is None:
            break
        prev = a
    return dist


def traj_prob(gen, f, z, traj):
    p = 1.0
    for t, a in enumerate(traj):
        p *= step_dist(gen, f, z, traj[:t])[a]
    return float(p)


def exact_value(gen, ev, f, z, prefix, t_max=TMAX):
    """Enumerated expected completion reward V(prefix)."""
    prefix = tuple(prefix)
    if prefix and prefix[-1] == END:
        return score(f, Sentence(prefix), ev).r
    if len(prefix) >= t_max:
        return score(f, Sentence(prefix + (END,), truncated=True), ev).r
    dist = step_dist(gen, f, z, prefix)
    return sum(dist[a] * exact_value(gen, ev, f, z, prefix + (a,), t_max) for a in range(V))


def enumerated_expected_reward(gen, ev, f, z, t_max=TMAX):
    return sum(
        traj_prob(gen, f, z, tr) * score(f, traj_sentence(tr), ev).r
        for tr in all_trajectories(t_max)
    )


# --- expected_future_reward -------------------------------------------------------


def test_reward_of_complete_sentence_is_exact(fz):
    f, z = fz
    gen, ev = tiny_gen(), tiny_eval()
    s = Sentence((0, 1, END))
    est = expected_future_reward(f, z, s, gen, ev, n=16, rng=None)
    assert est.value == score(f, s, ev).r
    assert est.std == 0.0 and est.n_rollouts == 0


def test_reward_deterministic_policy_has_zero_std(fz):
    f, z = fz
    gen = tiny_gen(scale=0.0)
    gen.store.params["out_b"][:] = np.array([50.0, -50.0, -50.0])  # always word 0
    ev = tiny_eval()
    est = expected_future_reward(f, z, (1,), gen, ev, n=24, rng=rng_from_seed(3), t_max=4)
    assert est.std == 0.0
    forced = Sentence((1, 0, 0, 0, END), truncated=True)
    assert est.value == pytest.approx(score(f, forced, ev).r, abs=1e-15)


def test_reward_estimator_unbiased_on_tiny_instance(fz):
    f, z = fz
    gen, ev = tiny_gen(), tiny_eval()
    exact = exact_value(gen, ev, f, z, (0,))
    est = expected_future_reward(f, z, (0,), gen, ev, n=20_000, rng=rng_from_seed(5),
                                 t_max=TMAX)
    se = est.std / np.sqrt(est.n_rollouts)
    assert abs(est.value - exact) <= 3 * se


def test_reward_estimate_bounds(fz):
    f, z = fz
    gen, ev = tiny_gen(), tiny_eval()
    est = expected_future_reward(f, z, (1,), gen, ev, n=64, rng=rng_from_seed(9), t_max=TMAX)
    assert 0.0 <= est.value <= 1.0 and est.std >= 0.0


def test_reward_requires_positive_n(fz):
    f, z = fz
    with pytest.raises(ConfigError):
        expected_future_reward(f, z, (0,), tiny_gen(), tiny_eval(), n=0, rng=None)


def test_reward_estimator_variance_shrinks_with_n(fz):
    """Spread of repeated estimates: n=256 beats n=4 on >= 95% of instances."""
    f, z = fz
    wins = 0
    trials = 40
    for seed in range(trials):
        gen, ev = tiny_gen(seed=seed), tiny_eval(seed=seed + 100)
        rng = rng_from_seed(seed)
        reps = 12
        small = [expected_future_reward(f, z, (0,), gen, ev, 4, rng, TMAX).value
                 for _ in range(reps)]
        big = [expected_future_reward(f, z, (0,), gen, ev, 256, rng, TMAX).value
               for _ in range(reps)]
        if np.std(big) < np.std(small):
            wins += 1
    assert wins >= 0.95 * trials


# --- policy gradient ---------------------------------------------------------------


def test_constant_reward_gives_exactly_zero_gradient(fz):
    f, z = fz
    gen = tiny_gen()
    for tr in all_trajectories():
        _, tape = policy_tape(gen, f, z, TMAX, force_tokens=tr)
        gen.store.zero_grads()
        values = [np.full(V, 0.37) for _ in tr]
        sentence_action_gradient(gen, tape, values)
        for g in gen.store.grads.values():
            assert np.max(np.abs(g)) <= 1e-12


def test_constant_critic_zeroes_policy_gradient_step(fz):
    """All-zero critic scores everything 0.5; the update must be a no-op."""
    f, z = fz
    gen = tiny_gen()
    before = {k: v.copy() for k, v in gen.store.params.items()}
    cfg = TrainConfig(seed=3, batch_size=2, rollout_count=4, t_max=TMAX,
                      noise_dim=2, g_learning_rate=0.5)
    recs = [CorpusRecord("a", np.asarray(f), ["x"] * 5, "train"),
            CorpusRecord("b", np.asarray(f) * 0.5, ["y"] * 5, "train")]
    policy_gradient_step(gen, freeze_generator(gen), constant_eval(), recs, cfg,
                         rng_from_seed(4))
    for name, p in gen.store.params.items():
        assert np.max(np.abs(p - before[name])) <= 1e-12


def test_policy_gradient_matches_finite_differences_of_enumerated_reward(fz):
    """Exact expectation of the estimator vs central differences of J(theta)."""
    f, z = fz
    gen, ev = tiny_gen(), tiny_eval()

    gen.store.zero_grads()
    for tr in all_trajectories():
        p_tr = traj_prob(gen, f, z, tr)
        _, tape = policy_tape(gen, f, z, TMAX, force_tokens=tr)
        values = [
            np.array([exact_value(gen, ev, f, z, tuple(tr[:t]) + (w,)) for w in range(V)])
            for t in range(len(tr))
        ]
        sentence_action_gradient(gen, tape, values, scale=p_tr)
    analytic = {k: g.copy() for k, g in gen.store.grads.items()}

    eps = 1e-5
    worst = 0.0
    for name, p in gen.store.params.items():
        flat = p.reshape(-1)
        aflat = analytic[name].reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            fp = enumerated_expected_reward(gen, ev, f, z)
            flat[k] = orig - eps
            fm = enumerated_expected_reward(gen, ev, f, z)
            flat[k] = orig
            num = (fp - fm) / (2 * eps)
            worst = max(worst, abs(aflat[k] - num) / max(abs(aflat[k]), abs(num), 1e-8))
    assert worst < 1e-3


def test_gradient_step_increases_probability_of_rewarded_word(fz):
    """With a reward gap at step one, ascent raises the better word's probability."""
    f, z = fz
    gen = tiny_gen(seed=21)
    ev = tiny_eval(seed=22)
    cfg = TrainConfig(seed=5, batch_size=1, rollout_count=64, t_max=TMAX,
                      noise_dim=2, g_learning_rate=1.0)
    rec = CorpusRecord("a", np.asarray(f), ["x"] * 5, "train")

    vals = [exact_value(gen, ev, f, z, (w,)) for w in range(V)]
    best = int(np.argmax(vals))
    dist_before = step_dist(gen, f, z, ())

    # average several single-example steps from the same start to tame noise
    gains = []
    for seed in range(8):
        gen_i = tiny_gen(seed=21)
        policy_gradient_step(gen_i, freeze_generator(gen_i), ev, [rec], cfg,
                             rng_from_seed(seed))
        gains.append(step_dist(gen_i, f, z, ())[best] - dist_before[best])
    assert np.mean(gains) > 0.0


def test_candidate_values_match_expected_future_reward_statistically(fz):
    """The batched all-words estimator agrees with the per-prefix op."""
    f, z = fz
    gen, ev = tiny_gen(), tiny_eval()
    frozen = freeze_generator(gen)
    cfg = TrainConfig(seed=1, rollout_count=4000, t_max=TMAX, noise_dim=2)
    sentence = Sentence((0, 1, END))
    values = candidate_action_values(frozen, ev, f, z, sentence, cfg, rng_from_seed(2))
    for t in range(len(sentence.tokens)):
        prefix = sentence.body[:t]
        for w in range(V):
            direct = expected_future_reward(f, z, tuple(prefix) + (w,), frozen, ev,
                                            4000, rng_from_seed(3), TMAX)
            se = max(direct.std / np.sqrt(max(direct.n_rollouts, 1)), 1e-12)
            assert abs(values[t][w] - direct.value) <= 4 * se + 1e-9


def test_frozen_snapshot_unchanged_by_update_round(fz):
    f, z = fz
    gen, ev = tiny_gen(), tiny_eval()
    frozen = freeze_generator(gen)
    before = {k: v.copy() for k, v in frozen.store.params.items()}
    cfg = TrainConfig(seed=3, batch_size=2, rollout_count=8, t_max=TMAX,
                      noise_dim=2, g_learning_rate=0.8)
    recs = [CorpusRecord("a", np.asarray(f), ["x"] * 5, "train")]
    for _ in range(3):
        policy_gradient_step(gen, frozen, ev, recs, cfg, rng_from_seed(6))
    for name, p in frozen.store.params.items():
        assert np.array_equal(p, before[name])
    assert any(
        not np.array_equal(gen.store.params[k], before[k]) for k in before
    )


# --- teacher-forced pretraining ------------------------------------------------------


def make_tiny_corpus(n_records=4, seed=0):
    """Records over the tiny vocabulary with pre-encoded references."""
    rng = rng_from_seed(seed)
    recs = []
    for i in range(n_records):
        feature = rng.normal(0, 1, 3)
        sents = [Sentence((int(rng.integers(2)), int(rng.integers(2)), END))
                 for _ in range(5)]
        rec = CorpusRecord(f"r{i}", feature, ["ref"] * 5, "train")
        rec.encoded_refs = sents
        recs.append(rec)
    return recs


def test_pretrain_memorizes_single_example():
    rng = rng_from_seed(31)
    rec = CorpusRecord("r0", rng.normal(0, 1, 3), ["ref"] * 5, "train")
    rec.encoded_refs = [Sentence((0, 1, 0, 1, END))] * 5
    gen = init_generator(vocab_size=V, end_id=END, bos_id=BOS, feat_dim=3, noise_dim=2,
                         embed_dim=8, hidden_dim=16, seed=2)
    cfg = TrainConfig(seed=9, batch_size=8, pretrain_epochs_g=200,
                      mle_learning_rate=0.05, noise_dim=2, t_max=TMAX + 3)
    report = pretrain_mle(gen, [rec], cfg)
    assert report.rows[-1]["nll_train"] < 0.1


def test_pretrain_initial_nll_near_uniform():
    recs = make_tiny_corpus()
    gen = tiny_gen(scale=0.1)
    cfg = TrainConfig(seed=4, batch_size=4, pretrain_epochs_g=1, noise_dim=2, t_max=TMAX)
    report = pretrain_mle(gen, recs, cfg)
    assert report.rows[0]["iteration"] == 0
    assert report.rows[0]["nll_train"] == pytest.approx(np.log(V), rel=0.10)


def test_pretrain_trajectory_is_seed_deterministic():
    rows = []
    for _ in range(2):
        recs = make_tiny_corpus()
        gen = tiny_gen(seed=17)
        cfg = TrainConfig(seed=23, batch_size=4, pretrain_epochs_g=4,
                          mle_learning_rate=0.2, noise_dim=2, t_max=TMAX)
        report = pretrain_mle(gen, recs, cfg)
        rows.append([r["nll_train"] for r in report.rows])
    assert rows[0] == rows[1]


def test_pretrain_rejects_empty_corpus():
    gen = tiny_gen()
    with pytest.raises(ValueError):
        pretrain_mle(gen, [], TrainConfig(noise_dim=2))


# --- critic updates -------------------------------------------------------------------


def make_word_corpus(n=30, seed=3):
    """Distinct-feature records whose refs name their feature's sign pattern."""
    rng = rng_from_seed(seed)
    recs = []
    for i in range(n):
        feature = rng.normal(0, 1, 3)
        body = tuple(int(v > 0) for v in feature[:2])
        rec = CorpusRecord(f"r{i}", feature, ["ref"] * 5, "train")
        rec.encoded_refs = [Sentence(body + (END,))] * 5
        recs.append(rec)
    return recs


def test_evaluator_step_learns_to_separate():
    recs = make_word_corpus(50)
    gen = tiny_gen(seed=41, scale=0.1)  # near-uniform sampler, a poor generator
    ev = tiny_eval(seed=42, scale=0.3)
    cfg = TrainConfig(seed=6, batch_size=10, noise_dim=2, t_max=4,
                      e_learning_rate=0.8, alpha=0.5, beta=0.5)
    rng = rng_from_seed(7)
    for _ in range(60):
        idx = rng.choice(len(recs), size=10, replace=False)
        diag = evaluator_step(ev, gen, recs, [recs[int(i)] for i in idx], cfg, rng)
    assert diag["score_refs"] > diag["score_gen"]
    assert diag["score_refs"] > diag["score_mism"]


def test_evaluator_step_beta_zero_ignores_mismatched():
    recs = make_word_corpus(10)
    cfg = TrainConfig(seed=8, batch_size=4, noise_dim=2, t_max=4, beta=0.0,
                      e_learning_rate=0.5)
    results = []
    for trial in range(2):
        gen = tiny_gen(seed=50)
        ev = tiny_eval(seed=51)
        rng = rng_from_seed(60)
        # shuffle mismatched pools between trials: with beta=0 it cannot matter
        pool = recs if trial == 0 else list(reversed(recs))
        evaluator_step(ev, gen, pool, recs[:4], cfg, rng)
        results.append({k: v.copy() for k, v in ev.store.params.items()})
    for name in results[0]:
        assert np.allclose(results[0][name], results[1][name], atol=1e-12)


def test_evaluator_step_gradient_matches_finite_differences():
    """The batch objective after sampling is fixed passes the same grad check."""
    from capgan.evaluator import evaluator_loss_batch
    from capgan.nn import grad_check

    recs = make_word_corpus(6)
    gen = tiny_gen(seed=52)
    ev = tiny_eval(seed=53)
    rng = rng_from_seed(61)
    # one fixed batch of (refs, gen, mism) groups
    from capgan.corpus import sample_mismatched_many
    from capgan.generator import decode_batch

    items = []
    for rec in recs[:3]:
        gens = decode_batch(gen, rec.feature[None, :], rng.normal(0, 1, (1, 2)), 4, rng=rng)
        items.append((rec.feature, rec.encoded_refs[:2], gens,
                      sample_mismatched_many(recs, rec, rng, 2)))

    def f(store):
        return evaluator_loss_batch(ev, items, alpha=0.5, beta=0.5)[0]

    assert grad_check(f, ev.store) < 1e-4


# --- alternating loop ------------------------------------------------------------------


def test_zero_iterations_is_a_no_op():
    recs = make_word_corpus(8)
    gen, ev = tiny_gen(seed=70), tiny_eval(seed=71)
    g0 = {k: v.copy() for k, v in gen.store.params.items()}
    e0 = {k: v.copy() for k, v in ev.store.params.items()}
    cfg = TrainConfig(seed=2, adversarial_iters=0, batch_size=4, noise_dim=2, t_max=4)
    report = train_adversarial(gen, ev, recs, cfg)
    assert report.rows == []
    for k in g0:
        assert np.array_equal(gen.store.params[k], g0[k])
    for k in e0:
        assert np.array_equal(ev.store.params[k], e0[k])


def test_adversarial_loop_is_seed_deterministic():
    outs = []
    for _ in range(2):
        recs = make_word_corpus(8)
        gen, ev = tiny_gen(seed=72), tiny_eval(seed=73)
        cfg = TrainConfig(seed=15, adversarial_iters=2, batch_size=4, rollout_count=4,
                          noise_dim=2, t_max=3, g_learning_rate=0.3, e_learning_rate=0.3)
        report = train_adversarial(gen, ev, recs, cfg)
        outs.append(
            (report.rows, {k: v.copy() for k, v in gen.store.params.items()})
        )
    assert outs[0][0] == outs[1][0]
    for k in outs[0][1]:
        assert np.array_equal(outs[0][1][k], outs[1][1][k])


def test_engan_equals_adversarial_with_g_steps_zero():
    recs = make_word_corpus(8)
    cfg = TrainConfig(seed=25, adversarial_iters=3, batch_size=4, rollout_count=4,
                      noise_dim=2, t_max=3, e_learning_rate=0.4)
    gen1, ev1 = tiny_gen(seed=80), tiny_eval(seed=81)
    rep1 = train_e_ngan(ev1, gen1, recs, cfg)
    gen2, ev2 = tiny_gen(seed=80), tiny_eval(seed=81)
    rep2 = train_adversarial(gen2, ev2, recs, replace(cfg, g_steps_per_iter=0))
    assert rep1.rows == rep2.rows
    for k in ev1.store.params:
        assert np.array_equal(ev1.store.params[k], ev2.store.params[k])
    # generator untouched, report has no generator-update records
    base = tiny_gen(seed=80)
    for k in base.store.params:
        assert np.array_equal(gen1.store.params[k], base.store.params[k])
    assert all("reward_mean" not in row for row in rep1.rows)


def test_report_serialization(tmp_path):
    report = TrainReport(3, {"a": 1}, "phase")
    report.add(iteration=1, loss=0.5, wall_seconds=1.0)
    report.add(iteration=2, loss=0.25, extra="x", wall_seconds=2.0)
    j = tmp_path / "r.jsonl"
    c = tmp_path / "r.csv"
    report.to_jsonl(j)
    report.to_csv(c)
    lines = j.read_text().strip().split("\n")
    assert len(lines) == 3  # header + 2 rows
    assert "wall" not in lines[1] and "wall" not in lines[2]
    header = c.read_text().split("\n")[0]
    assert header == "iteration,loss,extra"
    assert report.timings == [1.0, 2.0]


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(rollout_count=0)
    cfg = TrainConfig(g_steps_per_iter=0)  # allowed: the critic-only baseline
    assert cfg.g_steps_per_iter == 0
