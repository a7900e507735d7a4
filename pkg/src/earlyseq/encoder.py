"""Modality peripherals and temporal/spatial cache construction.

Every element is projected to ``d_model`` by its modality's peripheral.
Spatial elements (images) contribute ``d_s`` rows to the spatial cache
and their row-mean to the temporal cache; everything else contributes
its single row to the temporal cache only. ``origin_map`` records which
temporal position each spatial row came from, which the gated attention
needs for its rescaling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .datagen import (
    KIND_CATEGORICAL,
    KIND_IMAGE,
    KIND_TOKENS,
    KIND_VECTOR,
    MISSING,
    Element,
)


@dataclass
class PeripheralSpec:
    """Feature extractor plus affine projector for one modality tag."""

    modality: str
    kind: str
    d_model: int
    proj_w: nc.Tensor
    proj_b: nc.Tensor
    # token-embedding
    vocab_size: int = 0
    emb_dim: int = 0
    embedding: nc.Tensor | None = None
    # patch-grid
    grid_h: int = 0
    grid_w: int = 0
    patch: int = 0
    # categorical-onehot
    cardinalities: tuple[int, ...] = ()
    # passthrough
    in_dim: int = 0

    @property
    def d_s(self) -> int:
        if self.kind == KIND_IMAGE:
            return (self.grid_h // self.patch) * (self.grid_w // self.patch)
        return 1

    def named_parameters(self):
        prefix = f"peripheral.{self.modality}"
        named = []
        if self.embedding is not None:
            named.append((f"{prefix}.embedding", self.embedding))
        named.append((f"{prefix}.proj_w", self.proj_w))
        named.append((f"{prefix}.proj_b", self.proj_b))
        return named


@dataclass
class CacheSet:
    """Temporal rows (one per element), spatial rows and their origins."""

    temporal: nc.Tensor
    spatial: nc.Tensor | None
    origin_map: list[int] = field(default_factory=list)

    @property
    def n_temporal(self) -> int:
        return self.temporal.shape[0]

    @property
    def n_spatial(self) -> int:
        return 0 if self.spatial is None else self.spatial.shape[0]


def _glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def make_peripheral(modality, kind, d_model, rng, *, vocab_size=0, emb_dim=0,
                    grid_h=0, grid_w=0, patch=0, cardinalities=(), in_dim=0):
    """Initialize a peripheral of the given kind with trainable tensors."""
    if kind == KIND_TOKENS:
        if vocab_size < 1 or emb_dim < 1:
            raise ValueError("token peripheral needs vocab_size and emb_dim")
        table = nc.Tensor(_glorot(rng, vocab_size, emb_dim), requires_grad=True)
        w = nc.Tensor(_glorot(rng, emb_dim, d_model), requires_grad=True)
        b = nc.Tensor(np.zeros(d_model), requires_grad=True)
        return PeripheralSpec(modality, kind, d_model, w, b,
                              vocab_size=vocab_size, emb_dim=emb_dim, embedding=table)
    if kind == KIND_IMAGE:
        if patch < 1 or grid_h % patch or grid_w % patch:
            raise ValueError("patch size must evenly divide the grid")
        w = nc.Tensor(_glorot(rng, patch * patch, d_model), requires_grad=True)
        b = nc.Tensor(np.zeros(d_model), requires_grad=True)
        return PeripheralSpec(modality, kind, d_model, w, b,
                              grid_h=grid_h, grid_w=grid_w, patch=patch)
    if kind == KIND_CATEGORICAL:
        if not cardinalities:
            raise ValueError("categorical peripheral needs feature cardinalities")
        onehot_dim = sum(v + 1 for v in cardinalities)  # +1 per feature for MISSING
        w = nc.Tensor(_glorot(rng, onehot_dim, d_model), requires_grad=True)
        b = nc.Tensor(np.zeros(d_model), requires_grad=True)
        return PeripheralSpec(modality, kind, d_model, w, b,
                              cardinalities=tuple(cardinalities))
    if kind == KIND_VECTOR:
        if in_dim < 1:
            raise ValueError("passthrough peripheral needs in_dim")
        w = nc.Tensor(_glorot(rng, in_dim, d_model), requires_grad=True)
        b = nc.Tensor(np.zeros(d_model), requires_grad=True)
        return PeripheralSpec(modality, kind, d_model, w, b, in_dim=in_dim)
    raise ValueError(f"unknown peripheral kind {kind!r}")


def apply_peripheral(element: Element, spec: PeripheralSpec) -> nc.Tensor:
    """Project one element to a (d_s, d_model) feature matrix."""
    if element.modality != spec.modality:
        raise ValueError(
            f"element modality {element.modality!r} does not match "
            f"peripheral {spec.modality!r}"
        )
    if spec.kind == KIND_TOKENS:
        ids = np.asarray(element.payload, dtype=np.int64)
        if (ids < 0).any() or (ids >= spec.vocab_size).any():
            raise ValueError(
                f"token id outside vocabulary of size {spec.vocab_size}"
            )
        rows = nc.take(spec.embedding, ids, axis=0)
        feat = nc.tmean(rows, axis=0, keepdims=True)
    elif spec.kind == KIND_IMAGE:
        feat = nc.as_tensor(_patches(element.payload, spec.patch))
    elif spec.kind == KIND_CATEGORICAL:
        feat = nc.as_tensor(_onehot_row(element.payload, spec.cardinalities))
    elif spec.kind == KIND_VECTOR:
        vec = np.asarray(element.payload, dtype=np.float64)
        if vec.shape != (spec.in_dim,):
            raise ValueError(f"expected vector of length {spec.in_dim}")
        feat = nc.as_tensor(vec[None, :])
    else:
        raise ValueError(f"unknown peripheral kind {spec.kind!r}")
    out = nc.linear(feat, spec.proj_w, spec.proj_b)
    if out.shape[0] != element.d_s:
        raise ValueError(
            f"element d_s={element.d_s} but peripheral produced {out.shape[0]} rows"
        )
    return out


def _patches(grid: np.ndarray, patch: int) -> np.ndarray:
    """Flatten non-overlapping patches row-major into a (d_s, patch^2) matrix."""
    h, w = grid.shape
    if h % patch or w % patch:
        raise ValueError("patch size must evenly divide the grid")
    hp, wp = h // patch, w // patch
    tiled = grid.reshape(hp, patch, wp, patch).transpose(0, 2, 1, 3)
    return tiled.reshape(hp * wp, patch * patch).astype(np.float64)


def _onehot_row(values: np.ndarray, cardinalities) -> np.ndarray:
    values = np.asarray(values, dtype=np.int64)
    if values.shape != (len(cardinalities),):
        raise ValueError(
            f"expected {len(cardinalities)} categorical features, got {values.shape}"
        )
    parts = []
    for value, card in zip(values, cardinalities):
        onehot = np.zeros(card + 1)
        if value == MISSING:
            onehot[card] = 1.0
        elif 0 <= value < card:
            onehot[value] = 1.0
        else:
            raise ValueError(f"categorical value {value} outside 0..{card - 1}")
        parts.append(onehot)
    return np.concatenate(parts)[None, :]


def build_caches(elements, specs) -> CacheSet:
    """Run every element through its peripheral and fill both caches."""
    if len(elements) < 1:
        raise ValueError("cannot build caches from an empty prefix")
    temporal_rows = []
    spatial_blocks = []
    origin_map = []
    for t, element in enumerate(elements):
        features = apply_peripheral(element, specs[element.modality])
        d_s = features.shape[0]
        if d_s > 1:
            spatial_blocks.append(features)
            origin_map.extend([t] * d_s)
        temporal_rows.append(nc.tmean(features, axis=0, keepdims=True))
    temporal = nc.concat(temporal_rows, axis=0)
    spatial = nc.concat(spatial_blocks, axis=0) if spatial_blocks else None
    return CacheSet(temporal, spatial, origin_map)


def extend_caches(cache: CacheSet | None, element: Element, specs) -> CacheSet:
    """Append one element to an existing cache set (incremental form).

    ``extend_caches(None, e, specs)`` starts a fresh cache; folding it
    over a sequence matches :func:`build_caches` on the same prefix.
    """
    features = apply_peripheral(element, specs[element.modality])
    d_s = features.shape[0]
    row = nc.tmean(features, axis=0, keepdims=True)
    if cache is None:
        spatial = features if d_s > 1 else None
        origins = [0] * d_s if d_s > 1 else []
        return CacheSet(row, spatial, origins)
    t = cache.n_temporal
    temporal = nc.concat([cache.temporal, row], axis=0)
    spatial = cache.spatial
    origin_map = list(cache.origin_map)
    if d_s > 1:
        spatial = (
            features if spatial is None else nc.concat([spatial, features], axis=0)
        )
        origin_map.extend([t] * d_s)
    return CacheSet(temporal, spatial, origin_map)


def infer_peripheral_specs(data, d_model, emb_dim, seed):
    """Build one peripheral per modality tag by inspecting a dataset.

    Token vocabularies and categorical cardinalities are sized from the
    maximum observed ids; image patch size is recovered from each image
    element's declared d_s.
    """
    kinds = {}
    vocab = {}
    grids = {}
    cards = {}
    vec_dims = {}
    for seq in data:
        for e in seq.elements:
            prior = kinds.setdefault(e.modality, e.kind)
            if prior != e.kind:
                raise ValueError(
                    f"modality {e.modality!r} used with conflicting payload kinds"
                )
            if e.kind == KIND_TOKENS:
                top = int(np.max(e.payload)) if e.payload.size else 0
                vocab[e.modality] = max(vocab.get(e.modality, 0), top + 1)
            elif e.kind == KIND_IMAGE:
                h, w = e.payload.shape
                key = (h, w, e.d_s)
                prev = grids.setdefault(e.modality, key)
                if prev != key:
                    raise ValueError(
                        f"modality {e.modality!r} has inconsistent image geometry"
                    )
            elif e.kind == KIND_CATEGORICAL:
                observed = cards.setdefault(e.modality, np.zeros(len(e.payload), dtype=np.int64))
                if len(e.payload) != observed.size:
                    raise ValueError(
                        f"modality {e.modality!r} has inconsistent feature counts"
                    )
                np.maximum(observed, np.asarray(e.payload), out=observed)
            else:
                vec_dims[e.modality] = len(e.payload)

    rng = np.random.default_rng(seed)
    specs = {}
    for tag in sorted(kinds):
        kind = kinds[tag]
        if kind == KIND_TOKENS:
            specs[tag] = make_peripheral(
                tag, kind, d_model, rng, vocab_size=vocab[tag], emb_dim=emb_dim
            )
        elif kind == KIND_IMAGE:
            h, w, d_s = grids[tag]
            specs[tag] = make_peripheral(
                tag, kind, d_model, rng, grid_h=h, grid_w=w,
                patch=_patch_from_extent(h, w, d_s),
            )
        elif kind == KIND_CATEGORICAL:
            cardinalities = tuple(int(v) + 1 for v in cards[tag])
            specs[tag] = make_peripheral(
                tag, kind, d_model, rng, cardinalities=cardinalities
            )
        else:
            specs[tag] = make_peripheral(tag, kind, d_model, rng, in_dim=vec_dims[tag])
    return specs


def _patch_from_extent(h, w, d_s) -> int:
    for patch in range(1, min(h, w) + 1):
        if h % patch == 0 and w % patch == 0 and (h // patch) * (w // patch) == d_s:
            return patch
    raise ValueError(f"no patch size gives {d_s} patches on a {h}x{w} grid")
