"""Synthetic multimodal-sequence generators plus JSONL load/save and splits.

Two tasks are provided:

* ``generate_paired_dataset``: an image paired with a word list, binary
  label for whether they belong to the same concept. Words are ordered
  generic-first so information arrives gradually.
* ``generate_structured_arrival_dataset``: four base modalities in
  variable order where the structured element arrives three times, each
  arrival revealing more of its initially missing features.

Generators are pure functions of (config, seed): identical inputs give
byte-identical datasets.
"""

from __future__ import annotations

import itertools
import json
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

MISSING = -1
PAD_TOKEN = 0

# payload kinds understood by the peripherals
KIND_TOKENS = "tokens"
KIND_IMAGE = "image"
KIND_CATEGORICAL = "categorical"
KIND_VECTOR = "vector"

# canonical modality tag -> payload kind registry used by the loader
DEFAULT_MODALITIES = {
    "image": KIND_IMAGE,
    "text": KIND_TOKENS,
    "structured": KIND_CATEGORICAL,
    "imagesA": KIND_IMAGE,
    "imagesB": KIND_IMAGE,
    "vector": KIND_VECTOR,
}


@dataclass
class Element:
    """One sequence element: payload, modality tag and spatial extent."""

    payload: np.ndarray
    modality: str
    d_s: int
    kind: str

    def __post_init__(self):
        if self.d_s < 1:
            raise ValueError("d_s must be a positive integer")
        if self.d_s > 1 and self.kind != KIND_IMAGE:
            raise ValueError("d_s > 1 is only valid for image payloads")


@dataclass
class MultimodalSequence:
    """Ordered elements plus a one-hot label."""

    elements: list[Element]
    label: np.ndarray

    def __post_init__(self):
        self.label = np.asarray(self.label, dtype=np.float64)
        if len(self.elements) < 1:
            raise ValueError("sequence must contain at least one element")
        if self.label.ndim != 1 or self.label.size < 2:
            raise ValueError("label must be a one-hot vector with C > 1")
        if not _is_one_hot(self.label):
            raise ValueError("label must be one-hot (single 1, rest 0)")

    @property
    def T_end(self) -> int:
        return len(self.elements)

    @property
    def signature(self) -> tuple[str, ...]:
        return tuple(e.modality for e in self.elements)


def _is_one_hot(v: np.ndarray) -> bool:
    ones = np.isclose(v, 1.0)
    zeros = np.isclose(v, 0.0)
    return bool(ones.sum() == 1 and (ones | zeros).all())


@dataclass
class GeneratorConfig:
    """Knobs for both synthetic tasks; unused fields are ignored per task."""

    seed: int = 0
    n_samples: int = 1000

    # paired image/words task
    concept_count: int = 4
    generic_vocab: int = 20
    concept_vocab: int = 8  # tokens per concept, disjoint ranges
    grid_size: int = 8
    patch_size: int = 4
    noise: float = 0.35
    words_total: int = 7  # word elements per sequence (sequence length is 1 + this)
    generic_words: tuple[int, int] = (1, 2)  # inclusive range drawn per sample
    specific_words: tuple[int, int] = (3, 5)
    mismatch_probability: float = 0.5

    # structured-arrival task
    feature_tiers: tuple[str, ...] = ("none",) * 4 + ("low",) * 4 + ("high",) * 4
    feature_cardinality: int = 4
    missing_probs: dict = field(
        default_factory=lambda: {"none": 0.90, "low": 0.95, "high": 0.99}
    )
    reveal_probability: float = 0.20
    insertion_gap: int = 2
    base_orders: tuple[tuple[str, ...], ...] | None = None  # None = all permutations
    text_len: int = 6
    text_vocab: int = 24
    feature_flip: dict = field(
        default_factory=lambda: {"none": 1.0, "low": 0.45, "high": 0.15}
    )

    def validate_probabilities(self):
        probs = [self.mismatch_probability, self.reveal_probability]
        probs += list(self.missing_probs.values())
        for p in probs:
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probability {p} outside [0, 1]")


# ---------------------------------------------------------------------------
# paired image/words task


def concept_token_range(cfg: GeneratorConfig, concept: int) -> range:
    """Token-id range reserved for one concept (disjoint from generic ids)."""
    start = 1 + cfg.generic_vocab + concept * cfg.concept_vocab
    return range(start, start + cfg.concept_vocab)


def paired_vocab_size(cfg: GeneratorConfig) -> int:
    return 1 + cfg.generic_vocab + cfg.concept_count * cfg.concept_vocab


def concept_prototypes(cfg: GeneratorConfig) -> np.ndarray:
    """Deterministic 0/1 prototype grid per concept."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xA11CE]))
    return rng.integers(
        0, 2, size=(cfg.concept_count, cfg.grid_size, cfg.grid_size)
    ).astype(np.float64)


def generate_paired_dataset(cfg: GeneratorConfig) -> list[MultimodalSequence]:
    """Image/word-list pairing task with binary matched/mismatched labels.

    Each sequence is one image element followed by ``words_total`` word
    elements. The image is a concept prototype plus Gaussian noise. The
    word list mixes generic tokens with tokens specific to a concept;
    with ``mismatch_probability`` the words come from a different
    concept than the image (label class 1, otherwise class 0). Word
    elements are ordered generic tokens first, concept-specific tokens
    last, ties broken by ascending corpus frequency over the generated
    set, and the list is padded to a fixed length with PAD tokens.
    """
    cfg.validate_probabilities()
    if cfg.concept_count < 2:
        raise ValueError("concept_count must be at least 2")
    if cfg.grid_size % cfg.patch_size != 0:
        raise ValueError("grid_size must be divisible by patch_size")
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xB0B]))
    protos = concept_prototypes(cfg)
    d_s = (cfg.grid_size // cfg.patch_size) ** 2

    raw = []
    for _ in range(cfg.n_samples):
        concept = int(rng.integers(cfg.concept_count))
        pixels = protos[concept] + cfg.noise * rng.standard_normal(protos[concept].shape)

        word_concept = concept
        mismatched = rng.random() < cfg.mismatch_probability
        if mismatched:
            shift = 1 + int(rng.integers(cfg.concept_count - 1))
            word_concept = (concept + shift) % cfg.concept_count

        lo, hi = cfg.generic_words
        n_generic = int(rng.integers(lo, hi + 1))
        lo, hi = cfg.specific_words
        n_specific = int(rng.integers(lo, hi + 1))
        budget = cfg.words_total
        n_generic = min(n_generic, budget)
        n_specific = min(n_specific, budget - n_generic)

        generic = rng.integers(1, 1 + cfg.generic_vocab, size=n_generic)
        crange = concept_token_range(cfg, word_concept)
        specific = rng.integers(crange.start, crange.stop, size=n_specific)
        raw.append((pixels, list(generic), list(specific), mismatched))

    counts = Counter()
    for _, generic, specific, _ in raw:
        counts.update(generic)
        counts.update(specific)

    data = []
    for pixels, generic, specific, mismatched in raw:
        generic = sorted(generic, key=lambda t: (counts[t], t))
        specific = sorted(specific, key=lambda t: (counts[t], t))
        tokens = generic + specific
        tokens += [PAD_TOKEN] * (cfg.words_total - len(tokens))
        elements = [Element(pixels.copy(), "image", d_s, KIND_IMAGE)]
        elements += [
            Element(np.array([t], dtype=np.int64), "text", 1, KIND_TOKENS)
            for t in tokens
        ]
        label = np.array([0.0, 1.0]) if mismatched else np.array([1.0, 0.0])
        data.append(MultimodalSequence(elements, label))
    return data


# ---------------------------------------------------------------------------
# structured-arrival task


_BASE_MODALITIES = ("structured", "text", "imagesA", "imagesB")


def _all_base_orders():
    return tuple(itertools.permutations(_BASE_MODALITIES))


def _structured_profiles(cfg: GeneratorConfig):
    """Per-class preferred value for each feature and class token ranges."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xFEA7]))
    n_features = len(cfg.feature_tiers)
    prefs = rng.integers(0, cfg.feature_cardinality, size=(2, n_features))
    protos = rng.integers(0, 2, size=(2, 2, cfg.grid_size, cfg.grid_size)).astype(
        np.float64
    )  # indexed [bag, class]
    return prefs, protos


def generate_structured_arrival_dataset(cfg: GeneratorConfig) -> list[MultimodalSequence]:
    """Four-modality task where structured data arrives three times.

    The base sequence holds one structured, one text and two image-bag
    elements in an order drawn from ``base_orders``. The structured
    element is replaced by three arrivals: arrival 1 masks each feature
    to MISSING with its tier's probability, arrivals 2 and 3 each copy
    the previous arrival and reveal every still-missing value with
    ``reveal_probability``. Arrival 1 keeps the original position;
    arrivals 2 and 3 are inserted ``insertion_gap`` positions after the
    previous arrival when possible, otherwise immediately after it.
    """
    cfg.validate_probabilities()
    tiers = cfg.feature_tiers
    for tier in tiers:
        if tier not in cfg.missing_probs:
            raise ValueError(f"feature tier {tier!r} has no missing probability")
    orders = cfg.base_orders if cfg.base_orders is not None else _all_base_orders()
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x57AC]))
    prefs, protos = _structured_profiles(cfg)
    n_features = len(tiers)
    d_s = (cfg.grid_size // cfg.patch_size) ** 2
    half_vocab = cfg.text_vocab // 2

    data = []
    for _ in range(cfg.n_samples):
        klass = int(rng.integers(2))

        true_values = np.empty(n_features, dtype=np.int64)
        for f, tier in enumerate(tiers):
            if rng.random() < cfg.feature_flip[tier]:
                true_values[f] = rng.integers(cfg.feature_cardinality)
            else:
                true_values[f] = prefs[klass, f]

        arrival1 = true_values.copy()
        for f, tier in enumerate(tiers):
            if rng.random() < cfg.missing_probs[tier]:
                arrival1[f] = MISSING
        arrival2 = arrival1.copy()
        for f in range(n_features):
            if arrival2[f] == MISSING and rng.random() < cfg.reveal_probability:
                arrival2[f] = true_values[f]
        arrival3 = arrival2.copy()
        for f in range(n_features):
            if arrival3[f] == MISSING and rng.random() < cfg.reveal_probability:
                arrival3[f] = true_values[f]

        tokens = rng.integers(0, half_vocab, size=cfg.text_len)
        tokens = tokens + klass * half_vocab

        base = {}
        base["text"] = Element(tokens.astype(np.int64), "text", 1, KIND_TOKENS)
        for bag, tag in enumerate(("imagesA", "imagesB")):
            pixels = protos[bag, klass] + cfg.noise * rng.standard_normal(
                (cfg.grid_size, cfg.grid_size)
            )
            base[tag] = Element(pixels, tag, d_s, KIND_IMAGE)

        order = orders[int(rng.integers(len(orders)))]
        elements = []
        for tag in order:
            if tag == "structured":
                elements.append(
                    Element(arrival1, "structured", 1, KIND_CATEGORICAL)
                )
                anchor = len(elements) - 1
            else:
                elements.append(base[tag])
        for arrival in (arrival2, arrival3):
            target = anchor + cfg.insertion_gap
            if target > len(elements):
                target = anchor + 1
            elements.insert(
                target, Element(arrival, "structured", 1, KIND_CATEGORICAL)
            )
            anchor = target

        label = np.zeros(2)
        label[klass] = 1.0
        data.append(MultimodalSequence(elements, label))
    return data


# ---------------------------------------------------------------------------
# persistence and splitting


def save_jsonl(data: list[MultimodalSequence], path):
    """Write one JSON record per sequence; stable byte-for-byte output."""
    with open(path, "w", encoding="utf-8") as fh:
        for seq in data:
            fh.write(json.dumps(_to_record(seq), separators=(",", ":")))
            fh.write("\n")


def _to_record(seq: MultimodalSequence) -> dict:
    elements = []
    for e in seq.elements:
        if e.kind == KIND_IMAGE:
            h, w = e.payload.shape
            payload = {"h": h, "w": w, "pixels": [float(x) for x in e.payload.reshape(-1)]}
        elif e.kind in (KIND_TOKENS, KIND_CATEGORICAL):
            payload = [int(x) for x in e.payload]
        else:
            payload = [float(x) for x in e.payload]
        elements.append({"modality": e.modality, "d_s": e.d_s, "payload": payload})
    return {"label": [float(x) for x in seq.label], "elements": elements}


def load_jsonl(path, modalities=None) -> list[MultimodalSequence]:
    """Parse a JSONL dataset, validating every record's invariants.

    ``modalities`` maps modality tags to payload kinds; it defaults to
    the canonical registry. An element whose tag is not registered is
    rejected with the tag named; malformed lines are rejected with
    their line number.
    """
    registry = DEFAULT_MODALITIES if modalities is None else modalities
    data = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                data.append(_from_record(record, registry))
            except UnknownModalityError:
                raise
            except (ValueError, KeyError, TypeError) as err:
                raise ValueError(f"malformed record at line {lineno}: {err}") from err
    return data


class UnknownModalityError(ValueError):
    pass


def _from_record(record: dict, registry: dict) -> MultimodalSequence:
    elements = []
    for entry in record["elements"]:
        tag = entry["modality"]
        if tag not in registry:
            raise UnknownModalityError(f"unknown modality tag {tag!r}")
        kind = registry[tag]
        d_s = int(entry["d_s"])
        payload = entry["payload"]
        if kind == KIND_IMAGE:
            pixels = np.asarray(payload["pixels"], dtype=np.float64)
            arr = pixels.reshape(int(payload["h"]), int(payload["w"]))
        elif kind in (KIND_TOKENS, KIND_CATEGORICAL):
            arr = np.asarray(payload, dtype=np.int64)
            if arr.ndim != 1:
                raise ValueError(f"{kind} payload must be a flat integer array")
        else:
            arr = np.asarray(payload, dtype=np.float64)
            if arr.ndim != 1:
                raise ValueError("vector payload must be a flat float array")
        elements.append(Element(arr, tag, d_s, kind))
    return MultimodalSequence(elements, np.asarray(record["label"], dtype=np.float64))


def split(data, holdout_fraction, seed):
    """Seed-deterministic (train, validation) split.

    Validation size is round-half-up of ``holdout_fraction * len(data)``;
    the two parts are disjoint and exhaustive.
    """
    if not 0.0 < holdout_fraction < 1.0:
        raise ValueError("holdout_fraction must lie strictly inside (0, 1)")
    n = len(data)
    n_val = int(math.floor(holdout_fraction * n + 0.5))
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    val_idx = set(order[:n_val].tolist())
    train = [data[i] for i in range(n) if i not in val_idx]
    val = [data[i] for i in range(n) if i in val_idx]
    return train, val
