"""Message-passing encoders with optional distillation of aggregated messages.

Three aggregation flavors are provided:

* ``compositional``: ``(h_j * r) @ W_dir`` with one weight per edge
  direction, mean aggregation;
* ``relational``: ``h_j @ sum_b c[r, b] V_b`` over shared bases, mean
  aggregation;
* ``attention``: a joint transform of ``(h_i, h_j, r)`` giving a message
  and a logit, softmax-weighted sum over the neighborhood.

Weights are stored as ``(d_in, d_out)`` and applied to row vectors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from . import numeric as nm
from .distill import DistillSchedule, distill_tensor
from .kgstore import FORWARD, INVERSE, SELF

FLAVORS = ("attention", "relational", "compositional")
_DIRECTIONS = {FORWARD: "fwd", INVERSE: "inv", SELF: "loop"}


@dataclass(frozen=True)
class EncoderConfig:
    flavor: str = "compositional"
    layers: int = 4
    input_dim: int = 100
    hidden_dim: int = 200
    distill: Optional[DistillSchedule] = None
    bases: int = 4

    def __post_init__(self):
        if self.flavor not in FLAVORS:
            raise ValueError(f"unknown encoder flavor {self.flavor!r}")
        if self.layers < 0:
            raise ValueError("layers must be >= 0")
        if self.input_dim < 1 or self.hidden_dim < 1 or self.bases < 1:
            raise ValueError("dimensions and bases must be >= 1")

    def dims(self):
        return [self.input_dim] + [self.hidden_dim] * self.layers

    @property
    def output_dim(self):
        return self.hidden_dim if self.layers else self.input_dim


def init_encoder_params(config, n_extended_relations, seed):
    rng = np.random.default_rng(seed)

    def xavier(rows, cols):
        return nm.xavier_normal_init(rows, cols, int(rng.integers(2**32)))

    params = {}
    dims = config.dims()
    for layer in range(1, config.layers + 1):
        d_in, d_out = dims[layer - 1], dims[layer]
        p = f"enc.{layer}."
        if config.flavor == "compositional":
            params[p + "rel"] = xavier(n_extended_relations, d_in)
            for name in _DIRECTIONS.values():
                params[p + f"W_{name}"] = xavier(d_in, d_out)
        elif config.flavor == "relational":
            for b in range(config.bases):
                params[p + f"basis.{b}"] = xavier(d_in, d_out)
                params[p + f"coef.{b}"] = xavier(n_extended_relations, 1)
        else:
            params[p + "rel"] = xavier(n_extended_relations, d_in)
            for name in ("W_dst", "W_src", "W_rel"):
                params[p + name] = xavier(d_in, d_out)
            params[p + "att"] = nm.Tensor(xavier(d_out, 1).data[:, 0], requires_grad=True)
        params[p + "W_self"] = xavier(d_in, d_out)
        params[p + "W_msg"] = xavier(d_out, d_out)
    return params


def propagation_params(config, n_extended_relations):
    """Identity weights and all-ones relation embeddings.

    With these the compositional encoder reduces to repeated mean
    propagation, ``h <- relu(h + mean of neighbors)``, which isolates the
    effect of the graph (and of distillation) from learned transforms.
    """
    if config.flavor != "compositional" or config.input_dim != config.hidden_dim:
        raise ValueError("propagation weights need a square compositional encoder")
    d = config.hidden_dim
    params = {}
    for layer in range(1, config.layers + 1):
        p = f"enc.{layer}."
        params[p + "rel"] = nm.Tensor(np.ones((n_extended_relations, d)), requires_grad=True)
        for name in ("W_fwd", "W_inv", "W_loop", "W_self", "W_msg"):
            params[p + name] = nm.Tensor(np.eye(d), requires_grad=True)
    return params


# ---------------------------------------------------------------- operators


def message(flavor, h_j, rel, weights, h_i=None):
    """Per-edge messages for a batch of edges (one row per edge).

    ``rel`` is the relation embedding rows (compositional, attention) or the
    per-basis coefficient columns (relational). Returns ``(messages, logits)``;
    logits are ``None`` except for the attention flavor.
    """
    if flavor == "compositional":
        return nm.matmul(nm.mul(h_j, rel), weights), None
    if flavor == "relational":
        out = None
        for coef, basis in zip(rel, weights):
            term = nm.mul(nm.matmul(h_j, basis), coef)
            out = term if out is None else nm.add(out, term)
        return out, None
    if flavor == "attention":
        w_dst, w_src, w_rel, att = weights
        c = nm.add(nm.add(nm.matmul(h_i, w_dst), nm.matmul(h_j, w_src)), nm.matmul(rel, w_rel))
        return c, nm.leaky_relu(nm.matmul(c, att))
    raise ValueError(f"unknown encoder flavor {flavor!r}")


def aggregate(messages, weights, flavor, segments=None, n_segments=None):
    """Permutation-invariant aggregation of edge messages into nodes.

    ``weights`` are attention logits (attention flavor) and are ignored
    otherwise. Without ``segments`` every message goes to a single node.
    """
    messages = nm.as_tensor(messages)
    m = messages.shape[0]
    if m == 0:
        raise ValueError("aggregate needs at least one message")
    segments = np.zeros(m, np.int64) if segments is None else np.asarray(segments, np.int64)
    n_segments = int(segments.max()) + 1 if n_segments is None else n_segments
    if flavor == "attention":
        alpha = nm.segment_softmax(weights, segments, n_segments)
        op = sp.csr_matrix((np.ones(m), (segments, np.arange(m))), shape=(n_segments, m))
        return nm.spmm(op, nm.mul(messages, nm.column(alpha)))
    counts = np.bincount(segments, minlength=n_segments)
    op = sp.csr_matrix((1.0 / counts[segments], (segments, np.arange(m))), shape=(n_segments, m))
    return nm.spmm(op, messages)


def update(h_prev, m_distilled, w_self, w_msg, last=False):
    """``relu(h_prev @ W_self + m @ W_msg)``; the last layer skips the relu."""
    z = nm.add(nm.matmul(h_prev, w_self), nm.matmul(m_distilled, w_msg))
    return z if last else nm.relu(z)


# ------------------------------------------------------------------ encoder


class _GraphOps:
    """Sparse aggregation operators precomputed for one adjacency."""

    def __init__(self, adj):
        self.adj = adj
        self.n = adj.n_entities
        deg = adj.degree.astype(np.float64)
        self.by_direction = {}
        for flag in _DIRECTIONS:
            idx = np.flatnonzero(adj.direction == flag)
            vals = 1.0 / deg[adj.dst[idx]]
            op = sp.csr_matrix((vals, (adj.dst[idx], np.arange(len(idx)))),
                               shape=(self.n, len(idx)))
            self.by_direction[flag] = (idx, op)
        m = len(adj.src)
        self.mean_all = sp.csr_matrix(
            (1.0 / deg[adj.dst], (adj.dst, np.arange(m))), shape=(self.n, m))
        self.sum_all = sp.csr_matrix((np.ones(m), (adj.dst, np.arange(m))), shape=(self.n, m))


def graph_ops(adj):
    cached = getattr(adj, "_ops", None)
    if cached is None:
        cached = _GraphOps(adj)
        adj._ops = cached
    return cached


def _aggregated_messages(h, adj, ops, config, params, layer):
    p = f"enc.{layer}."
    if config.flavor == "compositional":
        rel_table = params[p + "rel"]
        out = None
        for flag, name in _DIRECTIONS.items():
            idx, op = ops.by_direction[flag]
            if len(idx) == 0:
                continue
            msg, _ = message("compositional", nm.gather(h, adj.src[idx]),
                             nm.gather(rel_table, adj.rel[idx]), params[p + f"W_{name}"])
            term = nm.spmm(op, msg)
            out = term if out is None else nm.add(out, term)
        return out
    if config.flavor == "relational":
        coefs = [nm.gather(params[p + f"coef.{b}"], adj.rel) for b in range(config.bases)]
        bases = [params[p + f"basis.{b}"] for b in range(config.bases)]
        msg, _ = message("relational", nm.gather(h, adj.src), coefs, bases)
        return nm.spmm(ops.mean_all, msg)
    weights = tuple(params[p + k] for k in ("W_dst", "W_src", "W_rel", "att"))
    msg, logits = message("attention", nm.gather(h, adj.src), nm.gather(params[p + "rel"], adj.rel),
                          weights, h_i=nm.gather(h, adj.dst))
    alpha = nm.segment_softmax(logits, adj.dst, adj.n_entities)
    return nm.spmm(ops.sum_all, nm.mul(msg, nm.column(alpha)))


def encode(store, adjacency, initial_embeddings, config, params):
    """Run the encoder stack; returns the states for layers ``0..L``.

    Per layer and node: messages, aggregation, distillation (when a
    schedule is configured), update.
    """
    h = nm.as_tensor(initial_embeddings)
    if h.shape != (adjacency.n_entities, config.input_dim):
        raise nm.ShapeError("encode", h, np.zeros((adjacency.n_entities, config.input_dim)))
    if store is not None and store.n_entities != adjacency.n_entities:
        raise ValueError("adjacency does not match the triple store")
    ops = graph_ops(adjacency)
    states = [h]
    for layer in range(1, config.layers + 1):
        agg = _aggregated_messages(h, adjacency, ops, config, params, layer)
        if config.distill is not None:
            agg = distill_tensor(agg, config.distill)
        p = f"enc.{layer}."
        h = update(h, agg, params[p + "W_self"], params[p + "W_msg"], last=layer == config.layers)
        states.append(h)
    return states
