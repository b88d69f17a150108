"""Synthetic knowledge graphs used by the tests and the toy experiments."""

from __future__ import annotations

import numpy as np

from .kgstore import TripleStore


def two_community_graph(community_size=20, p_intra=0.5, n_bridges=4, seed=0):
    """Two dense communities joined by a few bridge edges, one relation.

    Returns a store whose train split holds every edge (valid/test empty).
    """
    rng = np.random.default_rng(seed)
    n = 2 * community_size
    edges = []
    for block in range(2):
        offset = block * community_size
        for i in range(community_size):
            for j in range(i + 1, community_size):
                if rng.random() < p_intra:
                    edges.append((offset + i, 0, offset + j))
    left = rng.choice(community_size, size=n_bridges, replace=False)
    right = rng.choice(community_size, size=n_bridges, replace=False) + community_size
    edges.extend((int(a), 0, int(b)) for a, b in zip(left, right))
    return TripleStore.from_arrays(np.asarray(edges), [], [], n, 1)


def rule_kg(n_entities=200, n_relations=5, group_size=2, valid_frac=0.1, test_frac=0.1, seed=0):
    """Rule-generated KG over groups of interchangeable entities.

    Entities fall into groups of ``group_size``. Relations 0 and 1 are
    random permutations of the groups; every later relation composes the
    two before it (``sigma_r = sigma_{r-1} o sigma_{r-2}``). A triple
    ``(h, r, t)`` holds iff ``group(t) == sigma_r(group(h))`` and all such
    triples are emitted, then split at random.
    """
    rng = np.random.default_rng(seed)
    if n_entities % group_size:
        raise ValueError("n_entities must be a multiple of group_size")
    n_groups = n_entities // group_size
    perm = rng.permutation(n_entities)
    members = perm.reshape(n_groups, group_size)
    maps = [rng.permutation(n_groups), rng.permutation(n_groups)]
    while len(maps) < n_relations:
        maps.append(maps[-1][maps[-2]])
    triples = []
    for r in range(n_relations):
        for g in range(n_groups):
            for h in members[g]:
                for t in members[maps[r][g]]:
                    triples.append((int(h), r, int(t)))
    triples = np.asarray(triples, dtype=np.int64)
    triples = triples[rng.permutation(len(triples))]
    n_valid = int(round(valid_frac * len(triples)))
    n_test = int(round(test_frac * len(triples)))
    valid, test = triples[:n_valid], triples[n_valid:n_valid + n_test]
    train = triples[n_valid + n_test:]
    return TripleStore.from_arrays(train, valid, test, n_entities, n_relations)
