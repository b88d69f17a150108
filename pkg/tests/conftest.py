import os

import numpy as np
import pytest

from distkg.kgstore import TripleStore, load_dataset_dir

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")
TINY_DIR = os.path.join(FIXTURES, "tiny")

# Hand-counted from fixtures/tiny: 8 entities (a..h), 3 relations, 15/3/2 triples.
TINY_STATS = {"entities": 8, "relations": 3, "train": 15, "valid": 3, "test": 2}


@pytest.fixture
def tiny_store():
    return load_dataset_dir(TINY_DIR)


def write_split_files(directory, splits):
    """Write ``{name: [(h, r, t), ...]}`` as TSV split files; returns the paths."""
    paths = []
    for name in ("train", "valid", "test"):
        path = os.path.join(directory, f"{name}.txt")
        with open(path, "w", encoding="utf-8") as fh:
            for h, r, t in splits[name]:
                fh.write(f"{h}\t{r}\t{t}\n")
        paths.append(path)
    return paths


def random_store(rng, n_entities=12, n_relations=3, n_triples=30):
    keys = rng.choice(n_entities * n_relations * n_entities, size=n_triples, replace=False)
    h, rest = np.divmod(keys, n_relations * n_entities)
    r, t = np.divmod(rest, n_entities)
    triples = np.stack([h, r, t], axis=1)
    a, b = int(n_triples * 0.6), int(n_triples * 0.8)
    return TripleStore.from_arrays(triples[:a], triples[a:b], triples[b:], n_entities, n_relations)


def oracle_rank(scores, answer, known_alternatives):
    """Enumerate, filter, sort: mean rank of ``answer`` among surviving candidates."""
    survivors = [c for c in range(len(scores)) if c == answer or c not in known_alternatives]
    ordered = sorted(survivors, key=lambda c: -scores[c])
    target = scores[answer]
    first = next(i for i, c in enumerate(ordered) if scores[c] == target)
    last = max(i for i, c in enumerate(ordered) if scores[c] == target)
    return 1 + (first + last) / 2


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
