"""Abstract probabilistic interaction modeling (APIM).

Each entity state is projected to a signature over ``K`` latent modes,
sparsified to its ``retained_k`` strongest modes and scored against a
relation-specific, tanh-bounded mode transition matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numeric as nm


@dataclass
class ApimParams:
    W_a: nm.Tensor  # (K, d)
    Theta: nm.Tensor  # (n_relations, K, K)
    retained_k: int = 20
    lambda_frob: float = 1e-4

    def __post_init__(self):
        k = self.mode_count
        if self.W_a.ndim != 2:
            raise nm.ShapeError("ApimParams", self.W_a, self.Theta)
        if self.Theta.ndim != 3 or self.Theta.shape[1:] != (k, k):
            raise nm.ShapeError("ApimParams", self.W_a, self.Theta)
        if not 1 <= self.retained_k <= k:
            raise ValueError(f"retained_k must lie in [1, {k}]")
        if self.lambda_frob < 0:
            raise ValueError("lambda_frob must be >= 0")

    @property
    def mode_count(self):
        return self.W_a.shape[0]

    @property
    def input_dim(self):
        return self.W_a.shape[1]

    @classmethod
    def init(cls, input_dim, n_relations, mode_count=100, retained_k=20,
             lambda_frob=1e-4, seed=0):
        # Xavier-normal on the pre-activation Theta_r; P_r = tanh(Theta_r).
        rng = np.random.default_rng(seed)
        w_a = nm.xavier_normal_init(mode_count, input_dim, int(rng.integers(2**32)))
        theta = np.stack([
            nm.xavier_normal_init(mode_count, mode_count, int(rng.integers(2**32))).data
            for _ in range(n_relations)
        ])
        return cls(w_a, nm.Tensor(theta, requires_grad=True), retained_k, lambda_frob)

    def tensors(self):
        return {"apim.W_a": self.W_a, "apim.Theta": self.Theta}


def signature(h_e, params):
    """``sigmoid(W_a h_e)`` for one state vector or a row-stack of them."""
    h_e = nm.as_tensor(h_e)
    if h_e.shape[-1] != params.input_dim:
        raise nm.ShapeError("signature", h_e, params.W_a)
    if h_e.ndim == 1:
        return nm.sigmoid(nm.matmul(params.W_a, h_e))
    return nm.sigmoid(nm.matmul(h_e, nm.transpose(params.W_a)))


def topk_mask(a, retained_k):
    """Keep the ``retained_k`` largest modes (lower index wins ties)."""
    return nm.topk(a, retained_k)


def transition(theta_r):
    return nm.tanh(theta_r)


def apim_score(sig_h, P_r, sig_t):
    """``sig_h^T P_r sig_t``; batched when the signatures are row-stacks."""
    sig_h, P_r, sig_t = nm.as_tensor(sig_h), nm.as_tensor(P_r), nm.as_tensor(sig_t)
    if sig_h.ndim == 1:
        if P_r.shape != (sig_h.shape[0], sig_t.shape[0]):
            raise nm.ShapeError("apim_score", sig_h, P_r)
        return nm.tsum(nm.mul(sig_h, nm.matmul(P_r, sig_t)))
    return nm.bilinear(sig_h, P_r, sig_t)


def bce_with_logits(scores, labels):
    """Mean binary cross-entropy of ``sigmoid(scores)`` against 0/1 labels."""
    scores = nm.as_tensor(scores)
    labels = np.asarray(labels, dtype=np.float64).reshape(scores.shape)
    if scores.data.size == 0:
        raise ValueError("empty batch")
    # softplus(f) - y f == -[y log s(f) + (1 - y) log(1 - s(f))]
    return nm.mean(nm.sub(nm.softplus(scores), nm.mul(scores, labels)))


def apim_loss(scores, labels, P_batch, lambda_frob):
    """BCE over the batch plus ``lambda_frob`` times the mean ``||P_r||_F^2``.

    ``P_batch`` holds the transition matrices of the distinct relations in
    the batch: a list of (K, K) tensors or one stacked (n, K, K) tensor.
    """
    if nm.as_tensor(scores).data.size == 0:
        raise ValueError("empty batch")
    loss = bce_with_logits(scores, labels)
    if lambda_frob == 0:
        return loss
    if isinstance(P_batch, (list, tuple)):
        penalty = None
        for P in P_batch:
            term = nm.frob_sq(P)
            penalty = term if penalty is None else nm.add(penalty, term)
        count = len(P_batch)
    else:
        penalty, count = nm.frob_sq(P_batch), P_batch.shape[0]
    if count == 0:
        return loss
    return nm.add(loss, nm.scale(penalty, lambda_frob / count))


def triple_scores(params, states, triples):
    """APIM scores for a batch of triples plus the distinct-relation P stack."""
    triples = np.asarray(triples, dtype=np.int64)
    ents, inverse = np.unique(triples[:, [0, 2]], return_inverse=True)
    inverse = inverse.reshape(-1, 2)
    sig = topk_mask(signature(nm.gather(states, ents), params), params.retained_k)
    rels, rel_inverse = np.unique(triples[:, 1], return_inverse=True)
    P_used = transition(nm.gather(params.Theta, rels))
    scores = nm.grouped_bilinear(nm.gather(sig, inverse[:, 0]), P_used, rel_inverse.reshape(-1),
                                 nm.gather(sig, inverse[:, 1]))
    return scores, P_used


def masked_signatures(params, states):
    """Inference helper on plain arrays: (raw, masked) signatures."""
    states = np.asarray(states, dtype=np.float64)
    raw = signature(nm.Tensor(states), params).data
    return raw, raw * nm.topk_mask(raw, params.retained_k)
