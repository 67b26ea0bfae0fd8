"""Evaluation protocols: the metric comparison table, caption-to-image
retrieval, noise-driven diversity probes, and near-duplicate-scene probes.

The "human" system follows the hold-out protocol: its caption for an image is
one of that image's references, and the remaining references alone serve as
the metric ground truth. Model systems are scored against all references.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import metrics
from .corpus import (
    CorpusRecord,
    Sentence,
    encode_sentence,
    mutate_scene,
    normalize_tokens,
    render_feature,
)
from .errors import ConfigError
from .evaluator import EvaluatorParams, score_many
from .generator import GeneratorParams, decode_batch, sentence_log_likelihood
from .nn import rng_from_seed


@dataclass
class RetrievalResult:
    criterion: str
    ks: tuple
    recalls: dict
    ranks: dict  # record id -> 1-based rank of the matching image

    def to_dict(self) -> dict:
        return {
            "criterion": self.criterion,
            "recalls": {str(k): self.recalls[k] for k in self.ks},
        }


def make_human_system(records, seed: int = 0) -> dict:
    """One reference sampled per image, standing in for a human 'system'."""
    rng = rng_from_seed(seed)
    return {rec.record_id: rec.refs[int(rng.integers(len(rec.refs)))] for rec in records}


def _reference_bodies(rec: CorpusRecord, vocab, t_max, exclude_text: str | None):
    """Encoded reference bodies; drops the first reference matching exclude_text."""
    refs = list(rec.refs)
    if exclude_text is not None:
        target = normalize_tokens(exclude_text)
        for i, ref in enumerate(refs):
            if normalize_tokens(ref) == target:
                del refs[i]
                break
    return [encode_sentence(ref, vocab, t_max).body for ref in refs]


def run_metric_table(
    systems: dict,
    records,
    vocab,
    evaluators: dict | None = None,
    t_max: int = 16,
) -> dict:
    """MetricReport per system over the given records.

    systems: name -> {record id -> caption text}. A system named "human" has
    its own caption held out of the reference set; no system's caption ever
    scores against itself.
    """
    evaluators = evaluators or {}
    reports = {}
    for name, captions in systems.items():
        missing = [rec.record_id for rec in records if rec.record_id not in captions]
        if missing:
            raise ValueError(f"system {name!r} lacks captions for {len(missing)} records"
                             f" (first: {missing[0]})")
        is_human = name.lower() == "human"
        cands = []
        refsets = []
        sentences = []
        for rec in records:
            text = captions[rec.record_id]
            sent = encode_sentence(text, vocab, t_max)
            sentences.append(sent)
            cands.append(sent.body)
            refsets.append(
                _reference_bodies(rec, vocab, t_max, text if is_human else None)
            )
        per_image_c = {rec.record_id: cand for rec, cand in zip(records, cands)}
        per_image_r = {rec.record_id: refs for rec, refs in zip(records, refsets)}
        _, cider_corpus = metrics.cider(per_image_c, per_image_r)
        extra = {}
        for ev_name, ev in evaluators.items():
            feats = np.stack([rec.feature for rec in records])
            extra[ev_name] = float(score_many(ev, feats, sentences).mean())
        reports[name] = metrics.MetricReport(
            system=name,
            bleu3=metrics.bleu_corpus(cands, refsets, max_n=3),
            bleu4=metrics.bleu_corpus(cands, refsets, max_n=4),
            rouge_l=float(np.mean([metrics.rouge_l(c, r) for c, r in zip(cands, refsets)])),
            cider=cider_corpus,
            distinct1=metrics.distinct_n(cands, 1),
            distinct2=metrics.distinct_n(cands, 2),
            extra=extra,
        )
    return reports


# --- retrieval -----------------------------------------------------------------


def make_similarity_scorer(ev: EvaluatorParams):
    def scorer(feature, sentence: Sentence) -> float:
        return float(score_many(ev, feature[None, :], [sentence])[0])

    return scorer


def make_loglik_scorer(gen: GeneratorParams):
    """Conditional log-likelihood of the caption given the image, with z = 0."""
    z = np.zeros(gen.noise_dim)

    def scorer(feature, sentence: Sentence) -> float:
        return sentence_log_likelihood(feature, z, sentence, gen)

    return scorer


def retrieval_recall(records, captions: dict, scorer, ks=(1, 3, 5, 10),
                     criterion: str = "similarity", vocab=None, t_max: int = 16) -> RetrievalResult:
    """Rank all images for each caption; recall@k is the fraction of captions
    whose own image lands in the top k. Ties break by record id."""
    ks = tuple(sorted(ks))
    m = len(records)
    if m < max(ks):
        raise ConfigError(f"retrieval needs at least max(ks)={max(ks)} records, got {m}")
    missing = [rec.record_id for rec in records if rec.record_id not in captions]
    if missing:
        raise ValueError(f"captions missing for {len(missing)} records (first: {missing[0]})")
    ranks = {}
    for rec in records:
        cap = captions[rec.record_id]
        sent = cap if isinstance(cap, Sentence) else encode_sentence(cap, vocab, t_max)
        scored = sorted(
            ((-scorer(other.feature, sent), other.record_id) for other in records),
        )
        ranks[rec.record_id] = 1 + [rid for _, rid in scored].index(rec.record_id)
    recalls = {k: sum(1 for r in ranks.values() if r <= k) / m for k in ks}
    return RetrievalResult(criterion, ks, recalls, ranks)


# --- diversity and near-duplicate probes -----------------------------------------


def diversity_probe(
    gen: GeneratorParams,
    records,
    z_draws: int = 10,
    sigma_values=(1.0, 0.0),
    t_max: int = 16,
    seed: int = 0,
) -> dict:
    """Greedy decodes under z_draws noise draws per image, per noise scale.

    Returns {"rows": [...], "summary": {sigma: mean distinct count}}; each row
    has the distinct sentence count and distinct-1/2 over the draws.
    """
    rows = []
    for sigma in sigma_values:
        rng = rng_from_seed(seed)
        feats = np.repeat(np.stack([r.feature for r in records]), z_draws, axis=0)
        zs = rng.normal(0.0, sigma, (len(records) * z_draws, gen.noise_dim))
        sents = decode_batch(gen, feats, zs, t_max, greedy=True)
        for i, rec in enumerate(records):
            outs = [s.tokens for s in sents[i * z_draws : (i + 1) * z_draws]]
            bodies = [s.body for s in sents[i * z_draws : (i + 1) * z_draws]]
            rows.append(
                {
                    "record_id": rec.record_id,
                    "sigma_z": sigma,
                    "z_draws": z_draws,
                    "distinct_sentences": len(set(outs)),
                    "distinct1": metrics.distinct_n(bodies, 1) if any(bodies) else 0.0,
                    "distinct2": metrics.distinct_n(bodies, 2) if any(bodies) else 0.0,
                }
            )
    summary = {}
    for sigma in sigma_values:
        vals = [r["distinct_sentences"] for r in rows if r["sigma_z"] == sigma]
        summary[sigma] = float(np.mean(vals))
    return {"rows": rows, "summary": summary}


def make_mutation_pairs(records, n_pairs: int, seed: int = 0, feature_dim: int | None = None):
    """Near-duplicate scene pairs: each original plus a single-attribute mutant."""
    rng = rng_from_seed(seed)
    usable = [r for r in records if r.scene is not None]
    pairs = []
    i = 0
    while len(pairs) < n_pairs and usable:
        rec = usable[i % len(usable)]
        mutant = mutate_scene(rec.scene, rng)
        dim = feature_dim if feature_dim is not None else len(rec.feature)
        pairs.append(
            {
                "base_id": rec.record_id,
                "mutant_id": mutant.scene_id,
                "base_feature": rec.feature,
                "mutant_feature": render_feature(mutant, dim),
            }
        )
        i += 1
    return pairs


def similarity_probe(gen: GeneratorParams, pairs, t_max: int = 16) -> dict:
    """Fraction of near-duplicate pairs with byte-identical greedy outputs (z = 0)."""
    if not pairs:
        return {"rows": [], "identical_fraction": None}
    z = np.zeros((len(pairs) * 2, gen.noise_dim))
    feats = np.stack(
        [f for p in pairs for f in (p["base_feature"], p["mutant_feature"])]
    )
    sents = decode_batch(gen, feats, z, t_max, greedy=True)
    rows = []
    same = 0
    for i, pair in enumerate(pairs):
        a, b = sents[2 * i], sents[2 * i + 1]
        identical = a.tokens == b.tokens
        same += identical
        rows.append(
            {
                "base_id": pair["base_id"],
                "mutant_id": pair["mutant_id"],
                "identical": bool(identical),
            }
        )
    return {"rows": rows, "identical_fraction": same / len(pairs)}
