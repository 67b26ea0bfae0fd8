"""Command-line entry point for corpus generation, training, decoding, and
evaluation. Every run resolves its configuration (defaults < config file <
flags), executes one batch job, and writes a manifest recording the resolved
config, inputs, and output hashes next to its primary artifact.

Exit codes: 0 success, 1 invariant violation or bad input data, 2 usage.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, corpus, harness, metrics, trainer, verify
from .errors import ConfigError, ParseError, ShapeError
from .evaluator import init_evaluator, load_evaluator, save_evaluator
from .generator import (
    beam_search,
    decode_batch,
    freeze_generator,
    init_generator,
    load_generator,
    save_generator,
)
from .nn import rng_from_seed
from .trainer import TrainConfig, expected_future_reward

MODEL_DEFAULTS = {
    "embed_dim": 32,
    "hidden_dim": 64,       # generator recurrence
    "eval_hidden_dim": 32,  # critic recurrence; smaller separates just as well
    "joint_dim": 32,
    "feature_dim": corpus.DEFAULT_FEATURE_DIM,
    "min_count": 5,
}

# Desk-scale defaults for the full pipeline; calibrated so `repro-all` finishes
# on a laptop while the trained models separate cleanly in the probes.
PIPELINE_DEFAULTS = {
    "scenes": 2000,
    "refs": 5,
    "mle_epochs": 20,
    "mle_lr": 0.3,
    "e_pretrain_epochs": 5,
    "e_lr": 0.5,
    "gan_iters": 60,
    "gan_batch": 16,
    "g_lr": 0.05,
    "gan_e_lr": 0.1,
    "rollout_count": 16,
    "beam": 5,
    "retrieval_m": 100,
    "z_draws": 10,
    "probe_pairs": 50,
}


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Manifest:
    """Run provenance: resolved config plus hashes of every artifact written."""

    def __init__(self, subcommand: str, config: dict, seed, threads: int):
        self.data = {
            "tool": "capgan",
            "version": __version__,
            "subcommand": subcommand,
            "seed": seed,
            "threads": threads,
            "config": config,
            "inputs": {},
            "outputs": {},
            "started_utc": _utc_now(),
        }

    def add_input(self, label: str, path):
        self.data["inputs"][label] = str(path)

    def add_output(self, label: str, path):
        self.data["outputs"][label] = {"path": str(path), "sha256": sha256_file(path)}

    def write(self, path):
        self.data["finished_utc"] = _utc_now()
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(self.data, sort_keys=True, indent=2) + "\n")


def emit_report(report, fmt: str, path):
    """Serialize a report with stable field order; UTF-8, newline-terminated."""
    if fmt == "json":
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(report, sort_keys=True, indent=2) + "\n")
    elif fmt == "csv":
        rows = report if isinstance(report, list) else [report]
        keys: list = []
        for row in rows:
            for k in row:
                if k not in keys:
                    keys.append(k)
        import csv as _csv

        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = _csv.DictWriter(fh, fieldnames=keys)
            writer.writeheader()
            for row in rows:
                writer.writerow(row)
    else:
        raise ConfigError(f"unknown report format {fmt!r}")


# --- config resolution ------------------------------------------------------------


def _resolve(args, extra_fields: dict | None = None) -> dict:
    """defaults < config file < explicit flags, over TrainConfig + model fields."""
    resolved = {**asdict(TrainConfig()), **MODEL_DEFAULTS, **(extra_fields or {})}
    cfg_path = getattr(args, "config", None)
    if cfg_path:
        with open(cfg_path, encoding="utf-8") as fh:
            file_cfg = json.load(fh)
        unknown = set(file_cfg) - set(resolved)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        resolved.update(file_cfg)
    for key in list(resolved):
        val = getattr(args, key, None)
        if val is not None:
            resolved[key] = val
    return resolved


def _train_config(resolved: dict) -> TrainConfig:
    fields = {k: resolved[k] for k in asdict(TrainConfig())}
    return TrainConfig(**fields)


def _load_corpus(args, resolved):
    records = corpus.load_dataset(args.dataset, feature_dim=None)
    vocab = corpus.Vocabulary.load(args.vocab)
    corpus.encode_corpus(records, vocab, resolved["t_max"])
    return records, vocab


def _split(records, name):
    out = corpus.split_records(records, name)
    if not out:
        raise ConfigError(f"dataset has no records in split {name!r}")
    return out


def _write_captions(path, captions: dict):
    with open(path, "w", encoding="utf-8") as fh:
        for rec_id in captions:
            fh.write(json.dumps({"id": rec_id, "text": captions[rec_id]},
                                sort_keys=True, separators=(",", ":")) + "\n")


def _read_captions(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                out[obj["id"]] = obj["text"]
            except (json.JSONDecodeError, KeyError) as exc:
                raise ParseError(f"{path}: line {lineno}: {exc}") from exc
    return out


def _parse_named(pairs, default_stem=True):
    """['name=path', 'path'] -> ordered dict name -> path."""
    out = {}
    for item in pairs:
        if "=" in item:
            name, path = item.split("=", 1)
        elif default_stem:
            name, path = Path(item).stem, item
        else:
            raise ConfigError(f"expected name=path, got {item!r}")
        out[name] = path
    return out


# --- subcommands -------------------------------------------------------------------


def cmd_gen_corpus(args) -> int:
    resolved = _resolve(args, {"scenes": 10, "refs": 5})
    seed = resolved["seed"]
    records = corpus.generate_corpus(
        seed, resolved["scenes"], resolved["refs"], resolved["feature_dim"]
    )
    corpus.save_dataset(records, args.out)
    manifest = Manifest("gen-corpus", resolved, seed, args.threads)
    manifest.add_output("dataset", args.out)
    if args.vocab_out:
        vocab = corpus.build_vocabulary(
            corpus.split_records(records, "train"), resolved["min_count"]
        )
        vocab.save(args.vocab_out)
        manifest.add_output("vocabulary", args.vocab_out)
    manifest.write(args.manifest or f"{args.out}.manifest.json")
    print(f"wrote {len(records)} records to {args.out}")
    return 0


def cmd_pretrain_g(args) -> int:
    resolved = _resolve(args)
    cfg = _train_config(resolved)
    records, vocab = _load_corpus(args, resolved)
    train = _split(records, "train")
    val = corpus.split_records(records, "val")
    gen = init_generator(
        vocab_size=vocab.size,
        end_id=vocab.end_id,
        bos_id=vocab.bos_id,
        feat_dim=len(train[0].feature),
        noise_dim=cfg.noise_dim,
        embed_dim=resolved["embed_dim"],
        hidden_dim=resolved["hidden_dim"],
        seed=cfg.seed,
    )
    report = trainer.pretrain_mle(gen, train, cfg, val_records=val)
    save_generator(args.out, gen, vocab.vocab_hash)
    report.to_jsonl(args.report)
    report.to_csv(str(args.report) + ".csv")
    manifest = Manifest("pretrain-g", resolved, cfg.seed, args.threads)
    manifest.add_input("dataset", args.dataset)
    manifest.add_input("vocabulary", args.vocab)
    manifest.add_output("checkpoint", args.out)
    manifest.add_output("report", args.report)
    manifest.write(args.manifest or f"{args.out}.manifest.json")
    final = report.rows[-1]
    print(f"pretrain-g done: train NLL {final['nll_train']:.4f} val NLL {final['nll_val']:.4f}")
    return 0


def cmd_pretrain_e(args) -> int:
    resolved = _resolve(args)
    cfg = _train_config(resolved)
    records, vocab = _load_corpus(args, resolved)
    train = _split(records, "train")
    gen = load_generator(args.gen_checkpoint, vocab.vocab_hash)
    ev = init_evaluator(
        vocab_size=vocab.size,
        end_id=vocab.end_id,
        feat_dim=len(train[0].feature),
        embed_dim=resolved["embed_dim"],
        hidden_dim=resolved["eval_hidden_dim"],
        joint_dim=resolved["joint_dim"],
        seed=cfg.seed + 1,
    )
    report = trainer.pretrain_evaluator(ev, gen, train, cfg)
    save_evaluator(args.out, ev, vocab.vocab_hash)
    report.to_jsonl(args.report)
    report.to_csv(str(args.report) + ".csv")
    manifest = Manifest("pretrain-e", resolved, cfg.seed, args.threads)
    manifest.add_input("dataset", args.dataset)
    manifest.add_input("generator", args.gen_checkpoint)
    manifest.add_output("checkpoint", args.out)
    manifest.add_output("report", args.report)
    manifest.write(args.manifest or f"{args.out}.manifest.json")
    print(f"pretrain-e done: final loss {report.rows[-1]['e_loss']:.4f}")
    return 0


def cmd_train_gan(args) -> int:
    resolved = _resolve(args)
    cfg = _train_config(resolved)
    records, vocab = _load_corpus(args, resolved)
    train = _split(records, "train")
    gen = load_generator(args.gen_checkpoint, vocab.vocab_hash)
    ev = load_evaluator(args.eval_checkpoint, vocab.vocab_hash)
    report = trainer.train_adversarial(gen, ev, train, cfg)
    save_generator(args.out_gen, gen, vocab.vocab_hash)
    save_evaluator(args.out_eval, ev, vocab.vocab_hash)
    report.to_jsonl(args.report)
    report.to_csv(str(args.report) + ".csv")
    manifest = Manifest("train-gan", resolved, cfg.seed, args.threads)
    manifest.add_input("dataset", args.dataset)
    manifest.add_input("generator", args.gen_checkpoint)
    manifest.add_input("evaluator", args.eval_checkpoint)
    manifest.add_output("generator", args.out_gen)
    manifest.add_output("evaluator", args.out_eval)
    manifest.add_output("report", args.report)
    manifest.write(args.manifest or f"{args.out_gen}.manifest.json")
    if report.rows:
        print(f"train-gan done: final reward {report.rows[-1].get('reward_mean', float('nan')):.4f}")
    else:
        print("train-gan done: no iterations requested")
    return 0


def cmd_train_engan(args) -> int:
    resolved = _resolve(args)
    cfg = _train_config(resolved)
    records, vocab = _load_corpus(args, resolved)
    train = _split(records, "train")
    gen = load_generator(args.gen_checkpoint, vocab.vocab_hash)
    ev = load_evaluator(args.eval_checkpoint, vocab.vocab_hash)
    report = trainer.train_e_ngan(ev, gen, train, cfg)
    save_evaluator(args.out_eval, ev, vocab.vocab_hash)
    report.to_jsonl(args.report)
    report.to_csv(str(args.report) + ".csv")
    manifest = Manifest("train-engan", resolved, cfg.seed, args.threads)
    manifest.add_input("dataset", args.dataset)
    manifest.add_input("generator", args.gen_checkpoint)
    manifest.add_input("evaluator", args.eval_checkpoint)
    manifest.add_output("evaluator", args.out_eval)
    manifest.add_output("report", args.report)
    manifest.write(args.manifest or f"{args.out_eval}.manifest.json")
    print("train-engan done")
    return 0


def _decode_captions(gen, records, vocab, resolved, args, ev=None) -> dict:
    cfg = _train_config(resolved)
    rng = rng_from_seed(cfg.seed)
    captions = {}
    if args.decode in ("greedy", "sample"):
        feats = np.stack([r.feature for r in records])
        zs = rng.normal(0.0, cfg.sigma_z, (len(records), gen.noise_dim))
        sents = decode_batch(
            gen, feats, zs, cfg.t_max, rng=rng,
            temperature=cfg.temperature, greedy=args.decode == "greedy",
        )
        for rec, s in zip(records, sents):
            captions[rec.record_id] = corpus.decode_sentence(s, vocab)
    elif args.decode == "beam":
        frozen = freeze_generator(gen)
        for rec in records:
            z = rng.normal(0.0, cfg.sigma_z, gen.noise_dim)
            if args.scorer == "egan":
                if ev is None:
                    raise ConfigError("--scorer egan needs --eval-checkpoint")

                def scorer(s, _f=rec.feature, _z=z):
                    return expected_future_reward(
                        _f, _z, s, frozen, ev, cfg.rollout_count, None, cfg.t_max
                    ).value

            else:

                def scorer(s, _f=rec.feature, _z=z):
                    from .generator import sentence_log_likelihood

                    return sentence_log_likelihood(_f, _z, s, gen)

            best = beam_search(rec.feature, z, gen, args.beam, scorer, cfg.t_max)
            captions[rec.record_id] = corpus.decode_sentence(best, vocab)
    else:
        raise ConfigError(f"unknown decode mode {args.decode!r}")
    return captions


def cmd_sample(args) -> int:
    resolved = _resolve(args)
    records, vocab = _load_corpus(args, resolved)
    subset = _split(records, args.split)
    gen = load_generator(args.gen_checkpoint, vocab.vocab_hash)
    ev = load_evaluator(args.eval_checkpoint, vocab.vocab_hash) if args.eval_checkpoint else None
    captions = _decode_captions(gen, subset, vocab, resolved, args, ev)
    _write_captions(args.out, captions)
    manifest = Manifest("sample", {**resolved, "decode": args.decode, "beam": args.beam,
                                   "scorer": args.scorer, "split": args.split},
                        resolved["seed"], args.threads)
    manifest.add_input("dataset", args.dataset)
    manifest.add_input("generator", args.gen_checkpoint)
    manifest.add_output("captions", args.out)
    manifest.write(args.manifest or f"{args.out}.manifest.json")
    print(f"wrote {len(captions)} captions to {args.out}")
    return 0


def cmd_metrics(args) -> int:
    resolved = _resolve(args)
    records, vocab = _load_corpus(args, resolved)
    subset = _split(records, args.split)
    systems = {name: _read_captions(path) for name, path in _parse_named(args.candidates).items()}
    evaluators = {
        name: load_evaluator(path, vocab.vocab_hash)
        for name, path in _parse_named(args.evaluator or [], default_stem=False).items()
    }
    reports = harness.run_metric_table(systems, subset, vocab, evaluators, resolved["t_max"])
    table = [reports[name].to_dict() for name in systems]
    emit_report(table, "json", args.out)
    if args.csv:
        emit_report(table, "csv", args.csv)
    manifest = Manifest("metrics", resolved, resolved["seed"], args.threads)
    manifest.add_input("dataset", args.dataset)
    for name, path in _parse_named(args.candidates).items():
        manifest.add_input(f"candidates:{name}", path)
    manifest.add_output("report", args.out)
    manifest.write(args.manifest or f"{args.out}.manifest.json")
    for row in table:
        print(json.dumps(row, sort_keys=True))
    return 0


def cmd_retrieve(args) -> int:
    resolved = _resolve(args)
    records, vocab = _load_corpus(args, resolved)
    subset = _split(records, args.split)
    subset = sorted(subset, key=lambda r: r.record_id)[: args.m]
    captions = _read_captions(args.candidates)
    ks = tuple(int(k) for k in args.ks.split(","))
    if args.criterion == "similarity":
        ev = load_evaluator(args.eval_checkpoint, vocab.vocab_hash)
        scorer = harness.make_similarity_scorer(ev)
    else:
        gen = load_generator(args.gen_checkpoint, vocab.vocab_hash)
        scorer = harness.make_loglik_scorer(gen)
    result = harness.retrieval_recall(
        subset, captions, scorer, ks, args.criterion, vocab, resolved["t_max"]
    )
    emit_report(result.to_dict(), "json", args.out)
    manifest = Manifest("retrieve", {**resolved, "criterion": args.criterion, "m": args.m},
                        resolved["seed"], args.threads)
    manifest.add_input("dataset", args.dataset)
    manifest.add_input("candidates", args.candidates)
    manifest.add_output("report", args.out)
    manifest.write(args.manifest or f"{args.out}.manifest.json")
    print(json.dumps(result.to_dict(), sort_keys=True))
    return 0


def cmd_probe_diversity(args) -> int:
    resolved = _resolve(args)
    records, vocab = _load_corpus(args, resolved)
    subset = _split(records, args.split)
    gen = load_generator(args.gen_checkpoint, vocab.vocab_hash)
    sigmas = tuple(float(s) for s in args.sigma_values.split(","))
    result = harness.diversity_probe(
        gen, subset, args.z_draws, sigmas, resolved["t_max"], resolved["seed"]
    )
    out = {"summary": {str(k): v for k, v in result["summary"].items()}, "rows": result["rows"]}
    emit_report(out, "json", args.out)
    manifest = Manifest("probe-diversity", {**resolved, "z_draws": args.z_draws,
                                            "sigma_values": sigmas}, resolved["seed"], args.threads)
    manifest.add_input("dataset", args.dataset)
    manifest.add_input("generator", args.gen_checkpoint)
    manifest.add_output("report", args.out)
    manifest.write(args.manifest or f"{args.out}.manifest.json")
    print(json.dumps(out["summary"], sort_keys=True))
    return 0


def cmd_probe_similarity(args) -> int:
    resolved = _resolve(args)
    records, vocab = _load_corpus(args, resolved)
    subset = _split(records, args.split)
    pairs = harness.make_mutation_pairs(subset, args.pairs, resolved["seed"])
    out = {}
    for name, path in _parse_named(args.gen_checkpoints, default_stem=False).items():
        gen = load_generator(path, vocab.vocab_hash)
        probe = harness.similarity_probe(gen, pairs, resolved["t_max"])
        out[name] = {"identical_fraction": probe["identical_fraction"], "rows": probe["rows"]}
    emit_report(out, "json", args.out)
    manifest = Manifest("probe-similarity", {**resolved, "pairs": args.pairs},
                        resolved["seed"], args.threads)
    manifest.add_input("dataset", args.dataset)
    manifest.add_output("report", args.out)
    manifest.write(args.manifest or f"{args.out}.manifest.json")
    print(json.dumps({k: v["identical_fraction"] for k, v in out.items()}, sort_keys=True))
    return 0


def cmd_grad_check(args) -> int:
    results = verify.grad_check_suite(args.seed, args.eps, args.seeds)
    worst = max(results.values())
    for name, err in sorted(results.items()):
        print(f"{name}: max relative error {err:.3e}")
    print(f"overall max relative error {worst:.3e} (tolerance {args.tol:.1e})")
    return 0 if worst <= args.tol else 1


def cmd_repro_all(args) -> int:
    resolved = {**PIPELINE_DEFAULTS}
    for key in list(resolved):
        val = getattr(args, key, None)
        if val is not None:
            resolved[key] = val
    summary = repro_all(args.out_dir, seed=args.seed, threads=args.threads, **resolved)
    print(json.dumps(summary["headline"], sort_keys=True))
    return 0


# --- the full pipeline ---------------------------------------------------------------


def repro_all(
    out_dir,
    seed: int = 7,
    threads: int = 1,
    scenes: int = PIPELINE_DEFAULTS["scenes"],
    refs: int = PIPELINE_DEFAULTS["refs"],
    mle_epochs: int = PIPELINE_DEFAULTS["mle_epochs"],
    mle_lr: float = PIPELINE_DEFAULTS["mle_lr"],
    e_pretrain_epochs: int = PIPELINE_DEFAULTS["e_pretrain_epochs"],
    e_lr: float = PIPELINE_DEFAULTS["e_lr"],
    gan_iters: int = PIPELINE_DEFAULTS["gan_iters"],
    gan_batch: int = PIPELINE_DEFAULTS["gan_batch"],
    g_lr: float = PIPELINE_DEFAULTS["g_lr"],
    gan_e_lr: float = PIPELINE_DEFAULTS["gan_e_lr"],
    rollout_count: int = PIPELINE_DEFAULTS["rollout_count"],
    beam: int = PIPELINE_DEFAULTS["beam"],
    retrieval_m: int = PIPELINE_DEFAULTS["retrieval_m"],
    z_draws: int = PIPELINE_DEFAULTS["z_draws"],
    probe_pairs: int = PIPELINE_DEFAULTS["probe_pairs"],
) -> dict:
    """Chain the whole desk-scale experiment; returns paths and headline numbers.

    Stages: corpus -> MLE generator -> critic pretraining -> fixed-generator
    critic baseline -> adversarial training -> caption files (human held-out,
    likelihood-trained greedy, adversarial beam) -> metric table -> retrieval
    -> diversity and near-duplicate probes. Single-threaded and seed-driven:
    rerunning with the same arguments reproduces every artifact byte for byte.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "dataset": out / "dataset.jsonl",
        "vocab": out / "vocab.txt",
        "gmle": out / "gen_mle.ckpt",
        "e_pre": out / "eval_pretrained.ckpt",
        "engan": out / "eval_engan.ckpt",
        "ggan": out / "gen_gan.ckpt",
        "egan": out / "eval_egan.ckpt",
        "captions_human": out / "captions_human.jsonl",
        "captions_gmle": out / "captions_gmle.jsonl",
        "captions_ggan": out / "captions_ggan.jsonl",
        "metrics": out / "metrics.json",
        "metrics_csv": out / "metrics.csv",
        "retrieval": out / "retrieval.json",
        "diversity": out / "diversity.json",
        "similarity": out / "similarity.json",
        "summary": out / "summary.json",
    }
    t_start = time.perf_counter()

    # stage 1: corpus + vocabulary
    records = corpus.generate_corpus(seed, scenes, refs, MODEL_DEFAULTS["feature_dim"])
    corpus.save_dataset(records, paths["dataset"])
    train = corpus.split_records(records, "train")
    val = corpus.split_records(records, "val")
    test = corpus.split_records(records, "test")
    vocab = corpus.build_vocabulary(train, MODEL_DEFAULTS["min_count"])
    vocab.save(paths["vocab"])
    base_cfg = TrainConfig(seed=seed, rollout_count=rollout_count)
    corpus.encode_corpus(records, vocab, base_cfg.t_max)

    # stage 2: likelihood pretraining (the G-MLE model)
    mle_cfg = TrainConfig(seed=seed, pretrain_epochs_g=mle_epochs, mle_learning_rate=mle_lr)
    gen = init_generator(
        vocab_size=vocab.size, end_id=vocab.end_id, bos_id=vocab.bos_id,
        feat_dim=MODEL_DEFAULTS["feature_dim"], noise_dim=mle_cfg.noise_dim,
        embed_dim=MODEL_DEFAULTS["embed_dim"], hidden_dim=MODEL_DEFAULTS["hidden_dim"],
        seed=seed,
    )
    mle_report = trainer.pretrain_mle(gen, train, mle_cfg, val_records=val)
    save_generator(paths["gmle"], gen, vocab.vocab_hash)
    mle_report.to_jsonl(out / "report_mle.jsonl")
    mle_report.to_csv(out / "report_mle.csv")

    # stage 3: critic pretraining against the fixed likelihood generator
    e_cfg = TrainConfig(seed=seed, pretrain_epochs_e=e_pretrain_epochs, e_learning_rate=e_lr)
    ev = init_evaluator(
        vocab_size=vocab.size, end_id=vocab.end_id,
        feat_dim=MODEL_DEFAULTS["feature_dim"], embed_dim=MODEL_DEFAULTS["embed_dim"],
        hidden_dim=MODEL_DEFAULTS["eval_hidden_dim"], joint_dim=MODEL_DEFAULTS["joint_dim"],
        seed=seed + 1,
    )
    pre_e_report = trainer.pretrain_evaluator(ev, gen, train, e_cfg)
    save_evaluator(paths["e_pre"], ev, vocab.vocab_hash)
    pre_e_report.to_jsonl(out / "report_pretrain_e.jsonl")

    # stage 4: fixed-generator critic baseline
    engan_cfg = TrainConfig(
        seed=seed, adversarial_iters=gan_iters, batch_size=gan_batch,
        e_learning_rate=gan_e_lr, rollout_count=rollout_count,
    )
    ev_ngan = load_evaluator(paths["e_pre"], vocab.vocab_hash)
    engan_report = trainer.train_e_ngan(ev_ngan, gen, train, engan_cfg)
    save_evaluator(paths["engan"], ev_ngan, vocab.vocab_hash)
    engan_report.to_jsonl(out / "report_engan.jsonl")

    # stage 5: adversarial training (G-GAN + E-GAN)
    gan_cfg = TrainConfig(
        seed=seed, adversarial_iters=gan_iters, batch_size=gan_batch,
        g_learning_rate=g_lr, e_learning_rate=gan_e_lr, rollout_count=rollout_count,
    )
    gen_gan = load_generator(paths["gmle"], vocab.vocab_hash)
    ev_gan = load_evaluator(paths["e_pre"], vocab.vocab_hash)
    gan_report = trainer.train_adversarial(gen_gan, ev_gan, train, gan_cfg)
    save_generator(paths["ggan"], gen_gan, vocab.vocab_hash)
    save_evaluator(paths["egan"], ev_gan, vocab.vocab_hash)
    gan_report.to_jsonl(out / "report_gan.jsonl")
    gan_report.to_csv(out / "report_gan.csv")

    # stage 6: caption files for the three systems
    human = harness.make_human_system(test, seed)
    _write_captions(paths["captions_human"], human)

    feats = np.stack([r.feature for r in test])
    gmle_sents = decode_batch(gen, feats, np.zeros((len(test), gen.noise_dim)),
                              base_cfg.t_max, greedy=True)
    gmle_caps = {r.record_id: corpus.decode_sentence(s, vocab) for r, s in zip(test, gmle_sents)}
    _write_captions(paths["captions_gmle"], gmle_caps)

    rng = rng_from_seed(seed + 5)
    frozen = freeze_generator(gen_gan)
    ggan_caps = {}
    for rec in test:
        z = rng.normal(0.0, 1.0, gen_gan.noise_dim)

        def scorer(s, _f=rec.feature, _z=z):
            return expected_future_reward(
                _f, _z, s, frozen, ev_gan, rollout_count, None, base_cfg.t_max
            ).value

        best = beam_search(rec.feature, z, gen_gan, beam, scorer, base_cfg.t_max)
        ggan_caps[rec.record_id] = corpus.decode_sentence(best, vocab)
    _write_captions(paths["captions_ggan"], ggan_caps)

    # stage 7: metric table
    systems = {"human": human, "gmle": gmle_caps, "ggan": ggan_caps}
    evaluators = {"egan": ev_gan, "engan": ev_ngan}
    reports = harness.run_metric_table(systems, test, vocab, evaluators, base_cfg.t_max)
    table = [reports[name].to_dict() for name in systems]
    emit_report(table, "json", paths["metrics"])
    emit_report(table, "csv", paths["metrics_csv"])

    # stage 8: retrieval with the adversarial critic as the ranker
    ret_records = sorted(test, key=lambda r: r.record_id)[:retrieval_m]
    retrieval = harness.retrieval_recall(
        ret_records, ggan_caps, harness.make_similarity_scorer(ev_gan),
        (1, 3, 5, 10), "similarity", vocab, base_cfg.t_max,
    )
    emit_report(retrieval.to_dict(), "json", paths["retrieval"])

    # stage 9: diversity probe (noise draws) for both generators
    div_gan = harness.diversity_probe(gen_gan, test, z_draws, (1.0, 0.0), base_cfg.t_max, seed)
    div_mle = harness.diversity_probe(gen, test, z_draws, (0.0,), base_cfg.t_max, seed)
    emit_report(
        {
            "ggan": {"summary": {str(k): v for k, v in div_gan["summary"].items()},
                      "rows": div_gan["rows"]},
            "gmle": {"summary": {str(k): v for k, v in div_mle["summary"].items()},
                      "rows": div_mle["rows"]},
        },
        "json",
        paths["diversity"],
    )

    # stage 10: near-duplicate probe for both generators
    pairs = harness.make_mutation_pairs(test, probe_pairs, seed)
    sim = {
        "gmle": harness.similarity_probe(gen, pairs, base_cfg.t_max)["identical_fraction"],
        "ggan": harness.similarity_probe(gen_gan, pairs, base_cfg.t_max)["identical_fraction"],
    }
    emit_report(sim, "json", paths["similarity"])

    headline = {
        "val_nll": mle_report.rows[-1]["nll_val"],
        "egan_scores": {row["system"]: row.get("egan") for row in table},
        "bleu3": {row["system"]: row["bleu3"] for row in table},
        "recall_at_1": retrieval.recalls[1],
        "diversity_mean_distinct": div_gan["summary"][1.0],
        "similarity_identical": sim,
    }
    emit_report(headline, "json", paths["summary"])

    manifest = Manifest(
        "repro-all",
        {
            "scenes": scenes, "refs": refs, "mle_epochs": mle_epochs, "mle_lr": mle_lr,
            "e_pretrain_epochs": e_pretrain_epochs, "e_lr": e_lr, "gan_iters": gan_iters,
            "gan_batch": gan_batch, "g_lr": g_lr, "gan_e_lr": gan_e_lr,
            "rollout_count": rollout_count, "beam": beam, "retrieval_m": retrieval_m,
            "z_draws": z_draws, "probe_pairs": probe_pairs,
            "wall_seconds": time.perf_counter() - t_start,
        },
        seed,
        threads,
    )
    for label, p in paths.items():
        if label != "summary":
            manifest.add_output(label, p)
    manifest.write(out / "manifest.json")
    return {"paths": {k: str(v) for k, v in paths.items()}, "headline": headline,
            "reports": {"mle": mle_report, "gan": gan_report}}


# --- argument parsing ---------------------------------------------------------------


def _add_common(p, dataset=True):
    p.add_argument("--threads", type=int, default=1,
                   help="1 forces the bit-reproducible single-threaded path")
    p.add_argument("--manifest", default=None, help="manifest path override")
    p.add_argument("--config", default=None, help="JSON config file")
    if dataset:
        p.add_argument("--dataset", required=True)
        p.add_argument("--vocab", required=True)


def _add_train_flags(p):
    for name, default in asdict(TrainConfig()).items():
        flag = "--" + name.replace("_", "-")
        if isinstance(default, bool):
            p.add_argument(flag, action="store_const", const=True, default=None)
        elif default is None or isinstance(default, float):
            p.add_argument(flag, type=float, default=None)
        else:
            p.add_argument(flag, type=int, default=None)
    for name in ("embed-dim", "hidden-dim", "eval-hidden-dim", "joint-dim",
                 "feature-dim", "min-count"):
        p.add_argument("--" + name, type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="capgan",
        description="Desk-scale adversarial caption generation: corpus, training, evaluation.",
    )
    parser.add_argument("--version", action="version", version=f"capgan {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("gen-corpus", help="generate the synthetic scene dataset")
    p.add_argument("--scenes", type=int, default=None)
    p.add_argument("--refs", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--vocab-out", default=None)
    _add_common(p, dataset=False)
    _add_train_flags(p)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("pretrain-g", help="likelihood-pretrain the generator")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_pretrain_g)

    p = sub.add_parser("pretrain-e", help="pretrain the critic against a fixed generator")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("--gen-checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_pretrain_e)

    p = sub.add_parser("train-gan", help="alternating adversarial training")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("--gen-checkpoint", required=True)
    p.add_argument("--eval-checkpoint", required=True)
    p.add_argument("--out-gen", required=True)
    p.add_argument("--out-eval", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_train_gan)

    p = sub.add_parser("train-engan", help="critic baseline with generator updates off")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("--gen-checkpoint", required=True)
    p.add_argument("--eval-checkpoint", required=True)
    p.add_argument("--out-eval", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_train_engan)

    p = sub.add_parser("sample", help="decode captions from a generator checkpoint")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("--gen-checkpoint", required=True)
    p.add_argument("--eval-checkpoint", default=None)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--decode", default="sample", choices=("greedy", "sample", "beam"))
    p.add_argument("--beam", type=int, default=5)
    p.add_argument("--scorer", default="egan", choices=("egan", "loglik"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("metrics", help="n-gram metric table over caption files")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("--candidates", action="append", required=True,
                   help="name=path (repeatable); bare path uses the file stem")
    p.add_argument("--evaluator", action="append", default=None,
                   help="name=checkpoint for learned-critic columns (repeatable)")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--out", required=True)
    p.add_argument("--csv", default=None)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("retrieve", help="caption-to-image retrieval recall@k")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("--candidates", required=True)
    p.add_argument("--criterion", default="similarity", choices=("similarity", "loglik"))
    p.add_argument("--eval-checkpoint", default=None)
    p.add_argument("--gen-checkpoint", default=None)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--m", type=int, default=100)
    p.add_argument("--ks", default="1,3,5,10")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("probe-diversity", help="distinct outputs under noise draws")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("--gen-checkpoint", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--z-draws", type=int, default=10)
    p.add_argument("--sigma-values", default="1.0,0.0")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_probe_diversity)

    p = sub.add_parser("probe-similarity", help="identical outputs on near-duplicate scenes")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("--gen-checkpoints", action="append", required=True,
                   help="name=checkpoint (repeatable)")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--pairs", type=int, default=50)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_probe_similarity)

    p = sub.add_parser("grad-check", help="finite-difference verification suite")
    p.add_argument("--seed", type=int, default=None,
                   help="base seed; default uses the screened instances")
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seeds", type=int, default=5)
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("repro-all", help="run the whole desk-scale pipeline")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--threads", type=int, default=1)
    for name, default in PIPELINE_DEFAULTS.items():
        flag = "--" + name.replace("_", "-")
        p.add_argument(flag, type=type(default), default=None)
    p.set_defaults(func=cmd_repro_all)

    return parser


def dispatch(argv) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ParseError, ShapeError, ValueError, FloatingPointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))
