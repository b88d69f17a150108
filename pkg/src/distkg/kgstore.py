"""Triple ingestion, id dictionaries, adjacency and negative sampling."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

FORWARD, INVERSE, SELF = 0, 1, 2
MAX_RESAMPLE = 100


class KGFormatError(ValueError):
    pass


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int


def _as_triples(x):
    arr = np.asarray(x, dtype=np.int64)
    if arr.size == 0:
        return np.zeros((0, 3), dtype=np.int64)
    return arr.reshape(-1, 3)


@dataclass
class TripleStore:
    entity_names: list
    relation_names: list
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    _keys: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.train = _as_triples(self.train)
        self.valid = _as_triples(self.valid)
        self.test = _as_triples(self.test)
        for name in ("train", "valid", "test"):
            split = getattr(self, name)
            if len(split) and (
                split[:, [0, 2]].min() < 0
                or split[:, [0, 2]].max() >= self.n_entities
                or split[:, 1].min() < 0
                or split[:, 1].max() >= self.n_relations
            ):
                raise KGFormatError(f"{name} split references an unknown id")
        self._keys = np.unique(self.encode(self.all_triples()))
        overlap = len(self.train) + len(self.valid) + len(self.test) - len(self._keys)
        if overlap:
            logger.warning("%d duplicate triples within or across splits", overlap)
        self._tails = None
        self._heads = None

    @classmethod
    def from_arrays(cls, train, valid, test, n_entities, n_relations):
        return cls([str(i) for i in range(n_entities)],
                   [str(i) for i in range(n_relations)], train, valid, test)

    @property
    def n_entities(self):
        return len(self.entity_names)

    @property
    def n_relations(self):
        return len(self.relation_names)

    def split(self, name):
        if name not in ("train", "valid", "test"):
            raise KeyError(f"unknown split {name!r}")
        return getattr(self, name)

    def all_triples(self):
        return np.concatenate([self.train, self.valid, self.test], axis=0)

    @property
    def known_true(self):
        return {Triple(*map(int, t)) for t in self.all_triples()}

    def encode(self, triples):
        t = _as_triples(triples)
        return (t[:, 0] * self.n_relations + t[:, 1]) * self.n_entities + t[:, 2]

    def is_known(self, triples):
        """Vectorized membership test against the union of all splits."""
        keys = self.encode(triples)
        pos = np.searchsorted(self._keys, keys)
        pos = np.minimum(pos, len(self._keys) - 1)
        return self._keys[pos] == keys if len(self._keys) else np.zeros(len(keys), bool)

    def _build_filters(self):
        tails, heads = {}, {}
        for h, r, t in self.all_triples().tolist():
            tails.setdefault((h, r), set()).add(t)
            heads.setdefault((r, t), set()).add(h)
        self._tails = {k: np.fromiter(v, np.int64) for k, v in tails.items()}
        self._heads = {k: np.fromiter(v, np.int64) for k, v in heads.items()}

    def true_tails(self, h, r):
        if self._tails is None:
            self._build_filters()
        return self._tails.get((int(h), int(r)), np.zeros(0, np.int64))

    def true_heads(self, r, t):
        if self._heads is None:
            self._build_filters()
        return self._heads.get((int(r), int(t)), np.zeros(0, np.int64))

    def stats(self):
        return {
            "entities": self.n_entities,
            "relations": self.n_relations,
            "train": len(self.train),
            "valid": len(self.valid),
            "test": len(self.test),
        }


def _read_split(path, entities, relations):
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise KGFormatError(
                    f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}"
                )
            h, r, t = parts
            rows.append((entities.setdefault(h, len(entities)),
                         relations.setdefault(r, len(relations)),
                         entities.setdefault(t, len(entities))))
    if not rows:
        raise KGFormatError(f"{path}: file contains no triples")
    return np.asarray(rows, dtype=np.int64)


def load_triples(train_path, valid_path, test_path, entity_dict=None, relation_dict=None):
    """Read three TSV split files into a :class:`TripleStore`.

    Ids follow first appearance over train, valid, then test. Passing
    ``entity_dict`` / ``relation_dict`` (name -> id) pins existing ids.
    """
    entities = dict(entity_dict or {})
    relations = dict(relation_dict or {})
    splits = [_read_split(p, entities, relations) for p in (train_path, valid_path, test_path)]
    ent_names = [None] * len(entities)
    for name, i in entities.items():
        ent_names[i] = name
    rel_names = [None] * len(relations)
    for name, i in relations.items():
        rel_names[i] = name
    return TripleStore(ent_names, rel_names, *splits)


def load_dataset_dir(directory):
    return load_triples(*(os.path.join(directory, f"{s}.txt") for s in ("train", "valid", "test")))


def write_dictionaries(store, directory):
    os.makedirs(directory, exist_ok=True)
    for fname, names in (("entities.dict", store.entity_names),
                         ("relations.dict", store.relation_names)):
        with open(os.path.join(directory, fname), "w", encoding="utf-8") as fh:
            for i, name in enumerate(names):
                fh.write(f"{i}\t{name}\n")


def write_splits(store, directory):
    """Write the three splits as name-level TSV files (the ingestion format)."""
    os.makedirs(directory, exist_ok=True)
    ents, rels = store.entity_names, store.relation_names
    for name in ("train", "valid", "test"):
        with open(os.path.join(directory, f"{name}.txt"), "w", encoding="utf-8") as fh:
            for h, r, t in store.split(name).tolist():
                fh.write(f"{ents[h]}\t{rels[r]}\t{ents[t]}\n")


def read_dictionary(path):
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise KGFormatError(f"{path}:{lineno}: expected id<TAB>name")
            out[parts[1]] = int(parts[0])
    return out


@dataclass
class AdjacencyIndex:
    """Edge list with direction flags; messages flow from ``src`` to ``dst``.

    Relation ids are extended to ``2 * n_relations + 1``: forward ids keep
    their value, inverse edges use ``r + n_relations`` and the self loop
    uses ``2 * n_relations``.
    """

    n_entities: int
    n_relations: int
    src: np.ndarray
    dst: np.ndarray
    rel: np.ndarray
    direction: np.ndarray

    @property
    def n_extended_relations(self):
        return 2 * self.n_relations + 1

    @property
    def degree(self):
        return np.bincount(self.dst, minlength=self.n_entities)

    def neighbors(self, node):
        idx = np.flatnonzero(self.dst == node)
        return [(int(self.src[i]), int(self.rel[i]), int(self.direction[i])) for i in idx]

    def aggregation_matrix(self, edges=None, normalize=True):
        """Sparse (n_entities x n_edges) operator summing or averaging messages."""
        m = len(self.src)
        edges = np.arange(m) if edges is None else edges
        vals = np.ones(len(edges))
        if normalize:
            vals = vals / self.degree[self.dst[edges]]
        return sp.csr_matrix((vals, (self.dst[edges], np.arange(len(edges)))),
                             shape=(self.n_entities, len(edges)))


def build_adjacency(store):
    n, nr = store.n_entities, store.n_relations
    h, r, t = store.train[:, 0], store.train[:, 1], store.train[:, 2]
    nodes = np.arange(n, dtype=np.int64)
    src = np.concatenate([h, t, nodes])
    dst = np.concatenate([t, h, nodes])
    rel = np.concatenate([r, r + nr, np.full(n, 2 * nr, dtype=np.int64)])
    direction = np.concatenate([
        np.full(len(h), FORWARD), np.full(len(h), INVERSE), np.full(n, SELF)
    ]).astype(np.int64)
    return AdjacencyIndex(n, nr, src, dst, rel, direction)


def corrupt(triples, n, mode, rng, store):
    """Vectorized filtered corruption; ``n`` negatives per input triple.

    A corruption found in the known-true set is redrawn, up to
    ``MAX_RESAMPLE`` attempts in total; after that the last draw is kept.
    """
    if mode not in ("head", "tail", "both"):
        raise ValueError(f"mode must be head, tail or both, got {mode!r}")
    if n < 1:
        raise ValueError("n must be >= 1")
    if store.n_entities < 2:
        raise ValueError("corruption needs at least two entities")
    rng = np.random.default_rng(rng)
    base = np.repeat(_as_triples(triples), n, axis=0)
    m = len(base)
    if mode == "head":
        col = np.zeros(m, dtype=np.int64)
    elif mode == "tail":
        col = np.full(m, 2, dtype=np.int64)
    else:
        col = np.where(rng.random(m) < 0.5, 0, 2)
    out = base.copy()
    pending = np.arange(m)
    for _ in range(MAX_RESAMPLE):
        out[pending, col[pending]] = rng.integers(0, store.n_entities, size=len(pending))
        pending = pending[store.is_known(out[pending])]
        if len(pending) == 0:
            break
    return out


def sample_negatives(triple, n, mode, seed, store):
    negatives = corrupt([tuple(triple)], n, mode, seed, store)
    return [Triple(*map(int, t)) for t in negatives]
