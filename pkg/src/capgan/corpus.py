"""Synthetic scene corpus: scenes stand in for images, a small caption grammar
stands in for human annotators, and one-hot attribute features stand in for
CNN activations.

Everything here is a pure function of (seed, sizes): generating the same
corpus twice yields byte-identical JSONL files.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ParseError, ShapeError
from .nn import rng_from_seed

SHAPES = ("cube", "sphere", "pyramid", "cylinder")
COLORS = ("red", "blue", "green", "yellow", "black")
SIZES = ("small", "large")
RELATIONS = ("left-of", "on", "beside", "behind")
BACKGROUNDS = ("table", "floor", "grass", "sky")

SHAPE_WORDS = {
    "cube": ("cube", "box"),
    "sphere": ("sphere", "ball"),
    "pyramid": ("pyramid",),
    "cylinder": ("cylinder", "tube"),
}
SIZE_WORDS = {
    "small": ("small", "little", "tiny"),
    "large": ("large", "big", "huge"),
}
RELATION_WORDS = {
    "left-of": ("to the left of", "left of"),
    "on": ("on", "on top of"),
    "beside": ("beside", "next to"),
    "behind": ("behind",),
}

# Caption templates per object count. All render to at most 15 words, so every
# reference stays within the 16-word truncation limit.
TEMPLATES = {
    1: (
        "a {size1} {color1} {shape1} on the {bg}",
        "there is a {color1} {shape1} on the {bg}",
        "a {color1} {shape1} sits on the {bg}",
        "the {bg} holds a {size1} {color1} {shape1}",
        "a {color1} {shape1} stands on the {bg}",
    ),
    2: (
        "a {color1} {shape1} {rel} a {color2} {shape2}",
        "there is a {color1} {shape1} {rel} a {color2} {shape2}",
        "a {size1} {color1} {shape1} {rel} a {size2} {color2} {shape2} on the {bg}",
        "a {color1} {shape1} and a {color2} {shape2} on the {bg}",
        "the {color1} {shape1} is {rel} the {color2} {shape2}",
    ),
    3: (
        "a {color1} {shape1} a {color2} {shape2} and a {color3} {shape3}",
        "a {color1} {shape1} {rel} a {color2} {shape2} with a {color3} {shape3}",
        "there are a {color1} {shape1} a {color2} {shape2} and a {color3} {shape3} on the {bg}",
        "a {color1} {shape1} a {color2} {shape2} and a {color3} {shape3} on the {bg}",
    ),
}


def _template_literals():
    words = set()
    for group in TEMPLATES.values():
        for tpl in group:
            for w in re.sub(r"\{[a-z0-9]+\}", " ", tpl).split():
                words.add(w)
    return words


def grammar_terminals() -> frozenset:
    """Every word the caption grammar can emit."""
    words = set(_template_literals())
    words.update(COLORS)
    words.update(BACKGROUNDS)
    for pool in (*SHAPE_WORDS.values(), *SIZE_WORDS.values()):
        words.update(pool)
    for pool in RELATION_WORDS.values():
        for phrase in pool:
            words.update(phrase.split())
    return frozenset(words)


END_TOKEN = "<end>"
UNK_TOKEN = "<unk>"
BOS_TOKEN = "<bos>"
SPECIAL_TOKENS = (END_TOKEN, UNK_TOKEN, BOS_TOKEN)

DEFAULT_FEATURE_DIM = 48
MAX_OBJECTS = 3
_OBJECT_BLOCK = len(SHAPES) + len(COLORS) + len(SIZES)
_BASE_FEATURE_DIM = MAX_OBJECTS * _OBJECT_BLOCK + len(RELATIONS) + len(BACKGROUNDS)
FEATURE_JITTER = 0.01


@dataclass(frozen=True)
class SceneObject:
    shape: str
    color: str
    size: str


@dataclass(frozen=True)
class Scene:
    scene_id: str
    objects: tuple
    relation: str | None
    background: str

    def __post_init__(self):
        if not 1 <= len(self.objects) <= MAX_OBJECTS:
            raise ValueError(f"scene {self.scene_id}: needs 1..{MAX_OBJECTS} objects")
        if (self.relation is not None) != (len(self.objects) >= 2):
            raise ValueError(
                f"scene {self.scene_id}: relation must be present iff >=2 objects"
            )

    def attr_key(self) -> str:
        objs = ",".join(f"{o.shape}/{o.color}/{o.size}" for o in self.objects)
        return f"[{objs}]|{self.relation}|{self.background}"


@dataclass(frozen=True)
class Sentence:
    """Token ids terminated by the END id; truncated marks forced termination."""

    tokens: tuple
    truncated: bool = False

    @property
    def body(self):
        return self.tokens[:-1]

    @property
    def complete(self) -> bool:
        return not self.truncated

    def __len__(self):
        return len(self.tokens)


@dataclass
class CorpusRecord:
    record_id: str
    feature: np.ndarray
    refs: list
    split: str
    scene: Scene | None = None
    encoded_refs: list | None = field(default=None, repr=False)


def _scene_id(seed_token: str, attr_key: str) -> str:
    return hashlib.sha256(f"{seed_token}|{attr_key}".encode()).hexdigest()[:12]


def _pick(rng, seq):
    return seq[int(rng.integers(len(seq)))]


def _draw_scene_attrs(rng):
    k = int(rng.integers(1, MAX_OBJECTS + 1))
    objects = tuple(
        SceneObject(_pick(rng, SHAPES), _pick(rng, COLORS), _pick(rng, SIZES))
        for _ in range(k)
    )
    relation = _pick(rng, RELATIONS) if k >= 2 else None
    return objects, relation, _pick(rng, BACKGROUNDS)


def make_scene(seed_token: str, objects, relation, background) -> Scene:
    probe = Scene("?", tuple(objects), relation, background)
    return Scene(_scene_id(seed_token, probe.attr_key()), tuple(objects), relation, background)


def render_caption(scene: Scene, rng) -> str:
    tpl = _pick(rng, TEMPLATES[len(scene.objects)])
    slots = {"bg": scene.background}
    for idx, obj in enumerate(scene.objects, start=1):
        slots[f"shape{idx}"] = _pick(rng, SHAPE_WORDS[obj.shape])
        slots[f"color{idx}"] = obj.color
        slots[f"size{idx}"] = _pick(rng, SIZE_WORDS[obj.size])
    if scene.relation is not None:
        slots["rel"] = _pick(rng, RELATION_WORDS[scene.relation])
    # Unused slots are simply absent from the template.
    return tpl.format(**slots)


def render_feature(scene: Scene, feature_dim: int = DEFAULT_FEATURE_DIM) -> np.ndarray:
    """One-hot attribute blocks plus a small id-derived jitter, padded to feature_dim."""
    if feature_dim < _BASE_FEATURE_DIM:
        raise ShapeError(
            f"feature_dim {feature_dim} < one-hot layout size {_BASE_FEATURE_DIM}"
        )
    vec = np.zeros(feature_dim)
    for idx, obj in enumerate(scene.objects):
        off = idx * _OBJECT_BLOCK
        vec[off + SHAPES.index(obj.shape)] = 1.0
        vec[off + len(SHAPES) + COLORS.index(obj.color)] = 1.0
        vec[off + len(SHAPES) + len(COLORS) + SIZES.index(obj.size)] = 1.0
    off = MAX_OBJECTS * _OBJECT_BLOCK
    if scene.relation is not None:
        vec[off + RELATIONS.index(scene.relation)] = 1.0
    vec[off + len(RELATIONS) + BACKGROUNDS.index(scene.background)] = 1.0
    jitter_rng = rng_from_seed(int(scene.scene_id, 16))
    return vec + jitter_rng.uniform(-FEATURE_JITTER, FEATURE_JITTER, feature_dim)


def _split_of(scene_id: str) -> str:
    bucket = int(hashlib.sha256(f"{scene_id}:split".encode()).hexdigest(), 16) % 10
    if bucket < 8:
        return "train"
    return "val" if bucket == 8 else "test"


def generate_corpus(
    seed: int,
    n_scenes: int,
    refs_per_scene: int = 5,
    feature_dim: int = DEFAULT_FEATURE_DIM,
):
    """Deterministic corpus of distinct scenes, each with grammar-sampled references.

    References within one record are resampled a few times to avoid exact
    duplicates, so the wording varies between references of the same scene.
    """
    if refs_per_scene < 5:
        raise ConfigError("refs_per_scene must be >= 5")
    if n_scenes < 1:
        raise ConfigError("n_scenes must be >= 1")
    rng = rng_from_seed(seed)
    records = []
    seen = set()
    attempts = 0
    while len(records) < n_scenes:
        attempts += 1
        if attempts > 1000 * n_scenes:
            raise ConfigError(f"could not draw {n_scenes} distinct scenes")
        objects, relation, background = _draw_scene_attrs(rng)
        scene = make_scene(str(seed), objects, relation, background)
        if scene.attr_key() in seen:
            continue
        seen.add(scene.attr_key())
        refs = []
        for _ in range(refs_per_scene):
            cap = render_caption(scene, rng)
            for _ in range(20):
                if cap not in refs:
                    break
                cap = render_caption(scene, rng)
            refs.append(cap)
        records.append(
            CorpusRecord(
                record_id=scene.scene_id,
                feature=render_feature(scene, feature_dim),
                refs=refs,
                split=_split_of(scene.scene_id),
                scene=scene,
            )
        )
    return records


def mutate_scene(scene: Scene, rng) -> Scene:
    """A near-duplicate: one attribute redrawn to a different value."""
    objects = list(scene.objects)
    sites = [(i, f) for i in range(len(objects)) for f in ("shape", "color", "size")]
    sites.append((-1, "background"))
    if scene.relation is not None:
        sites.append((-1, "relation"))
    idx, fieldname = sites[int(rng.integers(len(sites)))]
    relation, background = scene.relation, scene.background

    def redraw(pool, current):
        alts = [v for v in pool if v != current]
        return alts[int(rng.integers(len(alts)))]

    if fieldname == "background":
        background = redraw(BACKGROUNDS, background)
    elif fieldname == "relation":
        relation = redraw(RELATIONS, relation)
    else:
        obj = objects[idx]
        pools = {"shape": SHAPES, "color": COLORS, "size": SIZES}
        new_val = redraw(pools[fieldname], getattr(obj, fieldname))
        objects[idx] = SceneObject(
            shape=new_val if fieldname == "shape" else obj.shape,
            color=new_val if fieldname == "color" else obj.color,
            size=new_val if fieldname == "size" else obj.size,
        )
    return make_scene(f"mut:{scene.scene_id}", objects, relation, background)


# --- tokenization and vocabulary ---------------------------------------------


def normalize_tokens(text: str):
    """Lowercase, drop non-alphabet characters, split on whitespace."""
    return re.sub(r"[^a-z\s]", "", text.lower()).split()


class Vocabulary:
    """Token <-> id map with END/UNK/BOS specials at ids 0/1/2."""

    def __init__(self, words, counts, min_count: int, corpus_hash: str):
        self.tokens = list(SPECIAL_TOKENS) + list(words)
        self.token_to_id = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self.token_to_id) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self.counts = dict(counts)
        self.min_count = min_count
        self.corpus_hash = corpus_hash

    end_id = 0
    unk_id = 1
    bos_id = 2

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def vocab_hash(self) -> str:
        payload = "\n".join(self.tokens) + f"\nmin_count={self.min_count}"
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, self.unk_id)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"#capgan-vocab min_count={self.min_count} corpus_hash={self.corpus_hash}\n")
            for tok in self.tokens:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().rstrip("\n")
            m = re.match(r"#capgan-vocab min_count=(\d+) corpus_hash=(\S+)", header)
            if not m:
                raise ParseError(f"{path}: line 1: bad vocabulary header")
            tokens = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
        if tokens[: len(SPECIAL_TOKENS)] != list(SPECIAL_TOKENS):
            raise ParseError(f"{path}: special tokens missing or out of order")
        return cls(tokens[len(SPECIAL_TOKENS) :], {}, int(m.group(1)), m.group(2))


def corpus_hash(records) -> str:
    payload = "\n".join(r.record_id + "\t" + "\t".join(r.refs) for r in records)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def build_vocabulary(records, min_count: int = 5) -> Vocabulary:
    """Count tokens over the given records' references; rare tokens map to UNK."""
    if not records:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    counts: dict = {}
    for rec in records:
        for ref in rec.refs:
            for tok in normalize_tokens(ref):
                counts[tok] = counts.get(tok, 0) + 1
    kept = sorted(tok for tok, c in counts.items() if c >= min_count)
    vocab_counts = {tok: counts[tok] for tok in kept}
    vocab_counts[UNK_TOKEN] = sum(c for tok, c in counts.items() if c < min_count)
    vocab_counts[END_TOKEN] = 0
    vocab_counts[BOS_TOKEN] = 0
    return Vocabulary(kept, vocab_counts, min_count, corpus_hash(records))


def encode_sentence(text, vocab: Vocabulary, t_max: int = 16) -> Sentence:
    """Normalize, map to ids (unknowns -> UNK), truncate the body to t_max, append END."""
    tokens = normalize_tokens(text if isinstance(text, str) else " ".join(text))
    ids = [vocab.id_of(tok) for tok in tokens]
    truncated = len(ids) > t_max
    return Sentence(tuple(ids[:t_max]) + (vocab.end_id,), truncated=truncated)


def decode_sentence(sentence: Sentence, vocab: Vocabulary) -> str:
    return " ".join(vocab.tokens[i] for i in sentence.body)


def encode_corpus(records, vocab: Vocabulary, t_max: int = 16):
    for rec in records:
        rec.encoded_refs = [encode_sentence(ref, vocab, t_max) for ref in rec.refs]
    return records


# --- mismatched-description sampling -----------------------------------------


def sample_mismatched_many(corpus, record: CorpusRecord, rng, k: int, vocab=None):
    """k references drawn uniformly from all references of records other than `record`."""
    others = [r for r in corpus if r.record_id != record.record_id]
    if not others:
        raise ValueError("sample_mismatched needs a corpus with >= 2 records")
    sizes = np.array([len(r.refs) for r in others])
    bounds = np.cumsum(sizes)
    draws = rng.integers(0, bounds[-1], size=k)
    out = []
    for d in draws:
        j = int(np.searchsorted(bounds, d, side="right"))
        ref_idx = int(d - (bounds[j - 1] if j else 0))
        rec = others[j]
        if rec.encoded_refs is not None:
            out.append(rec.encoded_refs[ref_idx])
        elif vocab is not None:
            out.append(encode_sentence(rec.refs[ref_idx], vocab))
        else:
            raise ValueError("records are not encoded and no vocabulary was given")
    return out


def sample_mismatched(corpus, record: CorpusRecord, rng, vocab=None) -> Sentence:
    return sample_mismatched_many(corpus, record, rng, 1, vocab)[0]


# --- dataset serialization ----------------------------------------------------


def record_to_json(rec: CorpusRecord) -> str:
    obj = {
        "id": rec.record_id,
        "feature": [float(v) for v in rec.feature],
        "refs": list(rec.refs),
        "split": rec.split,
    }
    if rec.scene is not None:
        obj["scene"] = {
            "objects": [
                {"shape": o.shape, "color": o.color, "size": o.size}
                for o in rec.scene.objects
            ],
            "relation": rec.scene.relation,
            "background": rec.scene.background,
        }
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def save_dataset(records, path):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(record_to_json(rec) + "\n")


def load_dataset(path, feature_dim: int | None = None):
    """Parse and validate a dataset JSONL file.

    Malformed lines raise ParseError with the line number; a feature of the
    wrong length raises ShapeError naming the record id.
    """
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}: line {lineno}: {exc}") from exc
            try:
                rec_id = obj["id"]
                feature = np.asarray(obj["feature"], dtype=np.float64)
                refs = list(obj["refs"])
                split = obj["split"]
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"{path}: line {lineno}: missing or bad field: {exc}") from exc
            if split not in ("train", "val", "test"):
                raise ParseError(f"{path}: line {lineno}: bad split {split!r}")
            if len(refs) < 5:
                raise ParseError(
                    f"{path}: line {lineno}: record {rec_id!r} has {len(refs)} refs, need >= 5"
                )
            if feature_dim is None:
                feature_dim = len(feature)
            if len(feature) != feature_dim:
                raise ShapeError(
                    f"record {rec_id!r}: feature length {len(feature)} != {feature_dim}"
                )
            scene = None
            if "scene" in obj and obj["scene"] is not None:
                s = obj["scene"]
                try:
                    objects = tuple(
                        SceneObject(o["shape"], o["color"], o["size"]) for o in s["objects"]
                    )
                    scene = Scene(rec_id, objects, s.get("relation"), s["background"])
                except (KeyError, ValueError) as exc:
                    raise ParseError(f"{path}: line {lineno}: bad scene: {exc}") from exc
            records.append(CorpusRecord(rec_id, feature, refs, split, scene))
    if not records:
        raise ParseError(f"{path}: empty dataset")
    return records


def split_records(records, split: str):
    return [r for r in records if r.split == split]
