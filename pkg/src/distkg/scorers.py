"""Decoders, joint objectives and the assembled link-prediction model."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import apim as ap
from . import numeric as nm
from .distill import DistillSchedule
from .kgstore import build_adjacency
from .mpnn import EncoderConfig, encode, init_encoder_params

DECODERS = ("translational", "bilinear")
VARIANTS = ("base", "apim", "dist", "merg")


@dataclass(frozen=True)
class ApimSettings:
    mode_count: int = 100
    retained_k: int = 20
    lambda_frob: float = 1e-4

    def __post_init__(self):
        if not 1 <= self.retained_k <= self.mode_count:
            raise ValueError("retained_k must lie in [1, mode_count]")
        if self.lambda_frob < 0:
            raise ValueError("lambda_frob must be >= 0")


@dataclass(frozen=True)
class ModelAssembly:
    """What the model is made of. ``encoder=None`` means a pure embedding model."""

    encoder: Optional[EncoderConfig] = None
    decoder: Optional[str] = "bilinear"
    apim: Optional[ApimSettings] = None
    lambda_apim: float = 1.0
    dim: int = 100

    def __post_init__(self):
        if self.decoder is None and self.apim is None:
            raise ValueError("an assembly needs a decoder, an APIM head, or both")
        if self.decoder is not None and self.decoder not in DECODERS:
            raise ValueError(f"unknown decoder {self.decoder!r}")
        if self.lambda_apim < 0:
            raise ValueError("lambda_apim must be >= 0")

    @property
    def input_dim(self):
        return self.encoder.input_dim if self.encoder else self.dim

    @property
    def state_dim(self):
        return self.encoder.output_dim if self.encoder else self.dim

    @property
    def variant(self):
        dist = self.encoder is not None and self.encoder.distill is not None
        if self.apim is not None:
            return "merg" if dist else "apim"
        return "dist" if dist else "base"


def assemble(variant, decoder="bilinear", encoder=None, apim=None, schedule=None,
             lambda_apim=1.0, dim=100):
    """Build the assembly for one of the base / apim / dist / merg variants."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if variant in ("dist", "merg"):
        if encoder is None:
            raise ValueError(f"variant {variant!r} needs a GNN encoder")
        encoder = replace(encoder, distill=schedule or encoder.distill or DistillSchedule())
    elif encoder is not None:
        encoder = replace(encoder, distill=None)
    head = (apim or ApimSettings()) if variant in ("apim", "merg") else None
    return ModelAssembly(encoder, decoder, head, lambda_apim, dim)


# ---------------------------------------------------------------- scoring


def base_score(h, r, t, decoder):
    """Decoder score; rows are scored independently when given matrices."""
    h, r, t = nm.as_tensor(h), nm.as_tensor(r), nm.as_tensor(t)
    if not (h.shape == r.shape == t.shape):
        raise nm.ShapeError("base_score", h, t if h.shape != t.shape else r)
    single = h.ndim == 1
    if single:
        h, r, t = (_row(x) for x in (h, r, t))
    if decoder == "translational":
        out = nm.scale(nm.row_norm(nm.sub(nm.add(h, r), t)), -1.0)
    elif decoder == "bilinear":
        out = nm.tsum(nm.mul(nm.mul(h, r), t), axis=1)
    else:
        raise ValueError(f"unknown decoder {decoder!r}")
    return nm.tsum(out) if single else out


def _row(x):
    return nm.transpose(nm.column(x))


def base_loss(scores, labels):
    return ap.bce_with_logits(scores, labels)


def combined_loss(base, apim, lambda_apim):
    """``base + lambda_apim * apim``; ``base=None`` for an APIM-only model."""
    if lambda_apim < 0:
        raise ValueError("lambda_apim must be >= 0")
    if base is None:
        return nm.scale(apim, lambda_apim) if isinstance(apim, nm.Tensor) else lambda_apim * apim
    if apim is None or lambda_apim == 0:
        return base
    if isinstance(base, nm.Tensor) or isinstance(apim, nm.Tensor):
        return nm.add(base, nm.scale(apim, lambda_apim))
    return base + lambda_apim * apim


class KGModel:
    """Parameters plus forward passes for one :class:`ModelAssembly`."""

    def __init__(self, assembly, n_entities, n_relations, params, adjacency=None):
        self.assembly = assembly
        self.n_entities = n_entities
        self.n_relations = n_relations
        self.params = params
        self.adjacency = adjacency
        if assembly.encoder is not None and adjacency is None:
            raise ValueError("a GNN assembly needs an adjacency index")
        self._cache = None

    @classmethod
    def init(cls, assembly, store, seed=0):
        rng = np.random.default_rng(seed)

        def sub():
            return int(rng.integers(2**32))

        n_e, n_r = store.n_entities, store.n_relations
        params = {"ent": nm.xavier_normal_init(n_e, assembly.input_dim, sub())}
        adjacency = None
        if assembly.encoder is not None:
            adjacency = build_adjacency(store)
            params.update(init_encoder_params(assembly.encoder, adjacency.n_extended_relations, sub()))
        if assembly.decoder is not None:
            params["dec.rel"] = nm.xavier_normal_init(n_r, assembly.state_dim, sub())
        if assembly.apim is not None:
            s = assembly.apim
            head = ap.ApimParams.init(assembly.state_dim, n_r, s.mode_count, s.retained_k,
                                      s.lambda_frob, seed=sub())
            params.update(head.tensors())
        return cls(assembly, n_e, n_r, params, adjacency)

    # -- parameters

    def apim_params(self, params=None):
        params = self.params if params is None else params
        s = self.assembly.apim
        return ap.ApimParams(params["apim.W_a"], params["apim.Theta"], s.retained_k, s.lambda_frob)

    def invalidate(self):
        self._cache = None

    def frozen_params(self):
        return {k: nm.Tensor(v.data) for k, v in self.params.items()}

    # -- differentiable path

    def entity_states(self, params=None):
        params = self.params if params is None else params
        if self.assembly.encoder is None:
            return params["ent"]
        return encode(None, self.adjacency, params["ent"], self.assembly.encoder, params)[-1]

    def score_parts(self, triples, params=None, states=None):
        """(base scores, apim scores, distinct-relation P stack) as tensors."""
        params = self.params if params is None else params
        triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        states = self.entity_states(params) if states is None else states
        base = apim = P_used = None
        if self.assembly.decoder is not None:
            base = base_score(nm.gather(states, triples[:, 0]), nm.gather(params["dec.rel"], triples[:, 1]),
                              nm.gather(states, triples[:, 2]), self.assembly.decoder)
        if self.assembly.apim is not None:
            apim, P_used = ap.triple_scores(self.apim_params(params), states, triples)
        return base, apim, P_used

    def loss(self, triples, labels, params=None):
        base, apim, P_used = self.score_parts(triples, params)
        base_term = None if base is None else base_loss(base, labels)
        apim_term = None
        if apim is not None:
            apim_term = ap.apim_loss(apim, labels, P_used, self.assembly.apim.lambda_frob)
        return combined_loss(base_term, apim_term, self.assembly.lambda_apim)

    # -- inference path (plain arrays)

    def _inference(self):
        if self._cache is None:
            frozen = self.frozen_params()
            states = self.entity_states(frozen).data
            cache = {"states": states}
            if self.assembly.decoder is not None:
                cache["rel"] = frozen["dec.rel"].data
            if self.assembly.apim is not None:
                raw, masked_sig = ap.masked_signatures(self.apim_params(frozen), states)
                cache["sig"], cache["sig_masked"] = raw, masked_sig
                cache["P"] = np.tanh(frozen["apim.Theta"].data)
            self._cache = cache
        return self._cache

    def final_states(self):
        return self._inference()["states"]

    def signatures(self):
        return self._inference()["sig"]

    def transitions(self):
        return self._inference()["P"]

    def score_triples(self, triples):
        """Ranking scores of explicit triples."""
        triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        c = self._inference()
        frozen = self.frozen_params()
        base, apim, _ = self.score_parts(triples, frozen, nm.Tensor(c["states"]))
        return self._combine(None if base is None else base.data, None if apim is None else apim.data)

    def _combine(self, base, apim):
        if apim is None:
            return base
        if base is None:
            return apim
        return base + self.assembly.lambda_apim * apim

    def score_candidates(self, anchors, relations, side):
        """Scores of every entity filling the ``side`` slot ('head' or 'tail').

        ``anchors`` are the known heads (tail side) or known tails (head side).
        Returns an array of shape (len(anchors), n_entities).
        """
        anchors = np.asarray(anchors, dtype=np.int64).reshape(-1)
        relations = np.asarray(relations, dtype=np.int64).reshape(-1)
        c = self._inference()
        S = c["states"]
        base = apim = None
        dec = self.assembly.decoder
        if dec == "bilinear":
            base = (S[anchors] * c["rel"][relations]) @ S.T
        elif dec == "translational":
            base = np.empty((len(anchors), len(S)))
            step = max(1, int(2e7 // max(1, S.size)))
            for i in range(0, len(anchors), step):
                a, r = S[anchors[i:i + step]], c["rel"][relations[i:i + step]]
                if side == "tail":
                    diff = (a + r)[:, None, :] - S[None, :, :]
                else:
                    diff = (S[None, :, :] + r[:, None, :]) - a[:, None, :]
                base[i:i + step] = -np.sqrt(np.sum(diff * diff, axis=2))
        if self.assembly.apim is not None:
            A, P = c["sig_masked"], c["P"][relations]
            if side == "tail":
                left = np.einsum("bi,bij->bj", A[anchors], P)
            else:
                left = np.einsum("bij,bj->bi", P, A[anchors])
            apim = left @ A.T
        return self._combine(base, apim)


def model_score(model, entity_states, triple):
    """Ranking score of one triple from precomputed final entity states."""
    h, r, t = (int(x) for x in triple)
    frozen = model.frozen_params()
    states = nm.Tensor(np.asarray(entity_states, dtype=np.float64))
    base, apim, _ = model.score_parts([(h, r, t)], frozen, states)
    out = model._combine(None if base is None else base.data, None if apim is None else apim.data)
    return float(out[0])
