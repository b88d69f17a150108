"""scikit-learn style estimator over the training and ranking pipeline."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .distill import DistillSchedule
from .evaluation import evaluate
from .kgstore import TripleStore
from .mpnn import EncoderConfig
from .scorers import ApimSettings, assemble
from .trainer import Checkpoint, TrainConfig, train


def check_triples(X, n_entities=None, n_relations=None):
    """Validate an integer triple array of shape (n, 3) and return it as int64."""
    arr = np.asarray(X)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"expected triples of shape (n, 3), got {arr.shape}")
    if arr.dtype.kind not in "iu":
        if arr.dtype.kind == "f" and np.all(np.mod(arr, 1) == 0):
            arr = arr.astype(np.int64)
        else:
            raise ValueError("triple ids must be integers")
    arr = arr.astype(np.int64, copy=False)
    if len(arr) and arr.min() < 0:
        raise ValueError("triple ids must be non-negative")
    if n_entities is not None and len(arr) and arr[:, [0, 2]].max() >= n_entities:
        raise ValueError(f"entity id out of range (have {n_entities} entities)")
    if n_relations is not None and len(arr) and arr[:, 1].max() >= n_relations:
        raise ValueError(f"relation id out of range (have {n_relations} relations)")
    return arr


def check_is_fitted(est):
    if getattr(est, "model_", None) is None:
        raise NotFittedError(f"{type(est).__name__} is not fitted yet; call fit first")


class KGCompletion(BaseEstimator):
    """Link-prediction model with optional GNN encoder, distillation and APIM head.

    ``fit`` takes a :class:`TripleStore` (validation split drives early
    stopping) or a plain (n, 3) array of training triples. ``predict``
    returns ranking scores for triples, ``transform`` the final entity
    states and ``score`` the filtered MRR.
    """

    def __init__(self, variant="base", decoder="bilinear", encoder=None, layers=4,
                 input_dim=100, hidden_dim=200, bases=4, dim=100, distill_family="linear",
                 alpha_start=1.0, delta=0.2, gamma=0.74, rounds=3, mode_count=100,
                 retained_k=20, lambda_frob=1e-4, lambda_apim=1.0, epochs=100,
                 batch_size=256, learning_rate=1e-3, negatives=1, patience=20,
                 random_state=0):
        self.variant = variant
        self.decoder = decoder
        self.encoder = encoder
        self.layers = layers
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.bases = bases
        self.dim = dim
        self.distill_family = distill_family
        self.alpha_start = alpha_start
        self.delta = delta
        self.gamma = gamma
        self.rounds = rounds
        self.mode_count = mode_count
        self.retained_k = retained_k
        self.lambda_frob = lambda_frob
        self.lambda_apim = lambda_apim
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.negatives = negatives
        self.patience = patience
        self.random_state = random_state

    def _assembly(self):
        enc = None
        if self.encoder is not None:
            enc = EncoderConfig(self.encoder, self.layers, self.input_dim, self.hidden_dim,
                                None, self.bases)
        schedule = DistillSchedule(self.distill_family, self.alpha_start, self.delta,
                                   self.gamma, self.rounds)
        head = ApimSettings(self.mode_count, self.retained_k, self.lambda_frob)
        return assemble(self.variant, self.decoder, enc, head, schedule, self.lambda_apim, self.dim)

    def fit(self, X, y=None, n_entities=None, n_relations=None):
        if isinstance(X, TripleStore):
            store = X
        else:
            X = check_triples(X)
            n_e = n_entities or int(X[:, [0, 2]].max()) + 1
            n_r = n_relations or int(X[:, 1].max()) + 1
            store = TripleStore.from_arrays(X, [], [], n_e, n_r)
        config = TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                             learning_rate=self.learning_rate,
                             negatives_per_positive=self.negatives, seed=self.random_state,
                             patience=self.patience)
        self.checkpoint_ = train(store, self._assembly(), config)
        self.store_ = store
        self.model_ = self.checkpoint_.model(store)
        self.n_entities_ = store.n_entities
        self.n_relations_ = store.n_relations
        self.history_ = self.checkpoint_.history
        return self

    def predict(self, X):
        """Ranking scores (higher is more plausible) for each triple."""
        check_is_fitted(self)
        X = check_triples(X, self.n_entities_, self.n_relations_)
        return self.model_.score_triples(X)

    def transform(self, X=None):
        """Final entity states; ``X`` optionally selects entity ids."""
        check_is_fitted(self)
        states = self.model_.final_states()
        if X is None:
            return states.copy()
        ids = np.asarray(X, dtype=np.int64).reshape(-1)
        if len(ids) and (ids.min() < 0 or ids.max() >= self.n_entities_):
            raise ValueError("entity id out of range")
        return states[ids]

    def evaluate(self, split="test", triples=None):
        check_is_fitted(self)
        return evaluate(self.model_, self.store_, split, triples=triples)

    def score(self, X=None, y=None):
        """Filtered MRR on ``X`` (defaults to the store's test split)."""
        check_is_fitted(self)
        if X is None:
            return self.evaluate("test").mrr
        X = check_triples(X, self.n_entities_, self.n_relations_)
        return self.evaluate(triples=X).mrr

    def save(self, path):
        check_is_fitted(self)
        self.checkpoint_.save(path)

    @staticmethod
    def load_model(path, store):
        return Checkpoint.load(path).model(store)
