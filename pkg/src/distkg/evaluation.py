"""Filtered entity ranking: MRR and Hits@{1,3,10}."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


@dataclass
class RankingReport:
    tail_ranks: np.ndarray
    head_ranks: np.ndarray
    mrr: float
    hits1: float
    hits3: float
    hits10: float

    @property
    def n_queries(self):
        return len(self.tail_ranks) + len(self.head_ranks)

    @property
    def ranks(self):
        return np.concatenate([self.tail_ranks, self.head_ranks])

    def metrics(self):
        return {"mrr": self.mrr, "hits1": self.hits1, "hits3": self.hits3,
                "hits10": self.hits10, "n_queries": self.n_queries}

    def to_json(self, path=None):
        text = json.dumps(self.metrics(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text + "\n")
        return text

    def write_ranks(self, path, triples):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("head\trelation\ttail\tside\trank\n")
            for (h, r, t), rank in zip(triples, self.tail_ranks):
                fh.write(f"{h}\t{r}\t{t}\ttail\t{rank:g}\n")
            for (h, r, t), rank in zip(triples, self.head_ranks):
                fh.write(f"{h}\t{r}\t{t}\thead\t{rank:g}\n")


def metrics_from_ranks(ranks):
    ranks = np.asarray(ranks, dtype=np.float64)
    if ranks.size == 0:
        raise ValueError("no ranks to summarize")
    return {
        "mrr": float(np.mean(1.0 / ranks)),
        "hits1": float(np.mean(ranks <= 1)),
        "hits3": float(np.mean(ranks <= 3)),
        "hits10": float(np.mean(ranks <= 10)),
    }


def rank_from_scores(scores, answer, filtered=()):
    """Filtered rank of ``answer`` with mean-rank tie handling.

    ``filtered`` lists candidates removed from the pool; the answer itself
    is never removed.
    """
    scores = np.asarray(scores, dtype=np.float64)
    keep = np.ones(len(scores), dtype=bool)
    keep[np.asarray(filtered, dtype=np.int64)] = False
    keep[answer] = False
    target = scores[answer]
    pool = scores[keep]
    return 1.0 + np.count_nonzero(pool > target) + 0.5 * np.count_nonzero(pool == target)


def rank_query(model, query, store):
    """Rank for one query ``(h, r, None)`` or ``(None, r, t)`` given its answer.

    ``query`` is a full triple plus a side: ``((h, r, t), 'tail')`` predicts
    the tail, ``((h, r, t), 'head')`` predicts the head.
    """
    (h, r, t), side = query
    if side == "tail":
        scores = model.score_candidates([h], [r], "tail")[0]
        return rank_from_scores(scores, t, store.true_tails(h, r))
    if side == "head":
        scores = model.score_candidates([t], [r], "head")[0]
        return rank_from_scores(scores, h, store.true_heads(r, t))
    raise ValueError(f"side must be 'head' or 'tail', got {side!r}")


def evaluate(model, store, split="test", triples=None, batch_size=256):
    """Rank the tail and head query of every triple in ``split``."""
    triples = store.split(split) if triples is None else np.asarray(triples, np.int64).reshape(-1, 3)
    if len(triples) == 0:
        raise ValueError(f"split {split!r} is empty")
    tail_ranks = np.empty(len(triples))
    head_ranks = np.empty(len(triples))
    for start in range(0, len(triples), batch_size):
        chunk = triples[start:start + batch_size]
        tails = model.score_candidates(chunk[:, 0], chunk[:, 1], "tail")
        heads = model.score_candidates(chunk[:, 2], chunk[:, 1], "head")
        for i, (h, r, t) in enumerate(chunk.tolist()):
            tail_ranks[start + i] = rank_from_scores(tails[i], t, store.true_tails(h, r))
            head_ranks[start + i] = rank_from_scores(heads[i], h, store.true_heads(r, t))
    m = metrics_from_ranks(np.concatenate([tail_ranks, head_ranks]))
    return RankingReport(tail_ranks, head_ranks, **m)
