"""Minibatch training with Adam, early stopping and checkpoint files."""

from __future__ import annotations

import dataclasses
import io
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import numeric as nm
from .distill import DistillSchedule
from .evaluation import evaluate
from .kgstore import corrupt
from .mpnn import EncoderConfig
from .scorers import ApimSettings, KGModel, ModelAssembly

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = "DISTKG-CHECKPOINT"
CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 256
    learning_rate: float = 1e-3
    negatives_per_positive: int = 1
    corruption: str = "both"
    seed: int = 0
    patience: int = 20
    checkpoint_path: Optional[str] = None
    log_path: Optional[str] = None
    eval_every: int = 1

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")
        if self.negatives_per_positive < 1:
            raise ValueError("negatives_per_positive must be >= 1")


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g
            p.data -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


@dataclass
class Checkpoint:
    assembly: ModelAssembly
    params: dict
    n_entities: int
    n_relations: int
    epoch: int
    best_valid_mrr: float
    config: dict = field(default_factory=dict)
    history: list = field(default_factory=list)

    def model(self, store):
        if store.n_entities != self.n_entities or store.n_relations != self.n_relations:
            raise CheckpointError("checkpoint does not match the triple store dimensions")
        model = KGModel.init(self.assembly, store, seed=0)
        for k, v in self.params.items():
            if k not in model.params or model.params[k].shape != v.shape:
                raise CheckpointError(f"unexpected parameter {k!r} in checkpoint")
            model.params[k] = nm.Tensor(np.array(v, copy=True), requires_grad=True)
        model.invalidate()
        return model

    def save(self, path):
        header = {
            "format_version": CHECKPOINT_VERSION,
            "variant": self.assembly.variant,
            "n_entities": self.n_entities,
            "n_relations": self.n_relations,
            "state_dim": self.assembly.state_dim,
            "epoch": self.epoch,
            "best_valid_mrr": repr(float(self.best_valid_mrr)),
        }
        if self.assembly.apim is not None:
            header["mode_count"] = self.assembly.apim.mode_count
            header["retained_k"] = self.assembly.apim.retained_k
        buf = io.BytesIO()
        np.savez(buf, **self.params)
        with open(path, "wb") as fh:
            fh.write(f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\n".encode())
            for k, v in header.items():
                fh.write(f"{k}={v}\n".encode())
            fh.write(("assembly=" + json.dumps(assembly_to_dict(self.assembly), sort_keys=True) + "\n").encode())
            fh.write(("config=" + json.dumps(self.config, sort_keys=True) + "\n").encode())
            fh.write(b"END\n")
            fh.write(buf.getvalue())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            raw = fh.read()
        lines, offset = {}, 0
        first = True
        while True:
            end = raw.find(b"\n", offset)
            if end < 0:
                raise CheckpointError(f"{path}: truncated header")
            line = raw[offset:end].decode("utf-8")
            offset = end + 1
            if first:
                if not line.startswith(CHECKPOINT_MAGIC):
                    raise CheckpointError(f"{path}: not a checkpoint file")
                if int(line.split()[1]) != CHECKPOINT_VERSION:
                    raise CheckpointError(f"{path}: unsupported format version")
                first = False
                continue
            if line == "END":
                break
            key, _, value = line.partition("=")
            lines[key] = value
        with np.load(io.BytesIO(raw[offset:])) as blob:
            params = {k: blob[k] for k in blob.files}
        return cls(
            assembly=assembly_from_dict(json.loads(lines["assembly"])),
            params=params,
            n_entities=int(lines["n_entities"]),
            n_relations=int(lines["n_relations"]),
            epoch=int(lines["epoch"]),
            best_valid_mrr=float(lines["best_valid_mrr"]),
            config=json.loads(lines.get("config", "{}")),
        )


def assembly_to_dict(assembly):
    return dataclasses.asdict(assembly)


def assembly_from_dict(d):
    enc = d.get("encoder")
    if enc is not None:
        sched = enc.get("distill")
        enc = EncoderConfig(**{**enc, "distill": DistillSchedule(**sched) if sched else None})
    head = d.get("apim")
    return ModelAssembly(enc, d.get("decoder"), ApimSettings(**head) if head else None,
                         d.get("lambda_apim", 1.0), d.get("dim", 100))


def train(store, assembly, config, model=None):
    """Fit a model and return the checkpoint with the best validation MRR.

    Each epoch shuffles the training triples, pairs every batch with
    filtered negatives and takes one Adam step per batch. Without a
    validation split the final parameters are kept. ``patience=0`` turns
    early stopping off.
    """
    rng = np.random.default_rng(config.seed)
    if model is None:
        model = KGModel.init(assembly, store, seed=int(rng.integers(2**32)))
    opt = Adam(model.params, lr=config.learning_rate)
    n = len(store.train)
    if n == 0:
        raise ValueError("training split is empty")
    has_valid = len(store.valid) > 0
    best_mrr, best_epoch = -math.inf, 0
    best_params = None
    bad_epochs = 0
    history = []
    log = open(config.log_path, "w", encoding="utf-8") if config.log_path else None
    try:
        if log:
            log.write("epoch\ttrain_loss\tvalid_mrr\n")
        for epoch in range(1, config.epochs + 1):
            order = rng.permutation(n)
            total, steps = 0.0, 0
            for b, start in enumerate(range(0, n, config.batch_size), 1):
                pos = store.train[order[start:start + config.batch_size]]
                neg = corrupt(pos, config.negatives_per_positive, config.corruption, rng, store)
                batch = np.concatenate([pos, neg])
                labels = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
                opt.zero_grad()
                try:
                    loss = model.loss(batch, labels)
                    loss.backward()
                except nm.NonFiniteError as exc:
                    raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}: {exc}") from exc
                value = float(loss.data)
                if not math.isfinite(value):
                    raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
                opt.step()
                model.invalidate()
                total += value
                steps += 1
            mean_loss = total / steps
            valid_mrr = float("nan")
            if has_valid and (epoch % config.eval_every == 0 or epoch == config.epochs):
                valid_mrr = evaluate(model, store, "valid").mrr
            history.append({"epoch": epoch, "loss": mean_loss, "valid_mrr": valid_mrr, "steps": steps})
            if log:
                log.write(f"{epoch}\t{mean_loss:.10g}\t{valid_mrr:.10g}\n")
            logger.debug("epoch %d loss %.6f valid_mrr %.4f", epoch, mean_loss, valid_mrr)
            if not has_valid:
                best_epoch, best_params = epoch, None
                continue
            if math.isnan(valid_mrr):
                continue
            if valid_mrr > best_mrr:
                best_mrr, best_epoch, bad_epochs = valid_mrr, epoch, 0
                best_params = {k: v.data.copy() for k, v in model.params.items()}
            else:
                bad_epochs += 1
                if config.patience and bad_epochs >= config.patience:
                    break
    finally:
        if log:
            log.close()
    if best_params is None:
        best_params = {k: v.data.copy() for k, v in model.params.items()}
    ckpt = Checkpoint(
        assembly=model.assembly,
        params=best_params,
        n_entities=store.n_entities,
        n_relations=store.n_relations,
        epoch=best_epoch,
        best_valid_mrr=best_mrr if has_valid else float("nan"),
        config={"train": dataclasses.asdict(config), "assembly": assembly_to_dict(model.assembly)},
        history=history,
    )
    if config.checkpoint_path:
        ckpt.save(config.checkpoint_path)
    return ckpt
