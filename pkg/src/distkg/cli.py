"""Command-line entry point: ``distkg <command> [--config FILE] [flags]``.

Config files hold ``key = value`` lines; ``#`` starts a comment. Every flag
has a config key and flags win over the file. ``--set key=value`` reaches
any key.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .analysis import energy_curve, mode_importance, oversmoothing_profile, write_profile_csv
from .distill import DistillSchedule
from .evaluation import evaluate
from .kgstore import KGFormatError, load_triples
from .mpnn import EncoderConfig, encode
from .scorers import ApimSettings, assemble
from .trainer import Checkpoint, CheckpointError, TrainConfig, train

logger = logging.getLogger("distkg")

COMMANDS = ("train", "eval", "analyze-energy", "analyze-importance",
            "analyze-oversmoothing", "ingest-stats")

DEFAULTS = {
    "data.dir": "",
    "data.train": "",
    "data.valid": "",
    "data.test": "",
    "output.dir": "",
    "encoder.flavor": "none",
    "encoder.layers": "4",
    "encoder.input_dim": "100",
    "encoder.hidden_dim": "200",
    "encoder.bases": "4",
    "distill.family": "linear",
    "distill.alpha_start": "1.0",
    "distill.delta": "0.2",
    "distill.gamma": "0.74",
    "distill.rounds": "3",
    "apim.mode_count": "100",
    "apim.retained_k": "20",
    "apim.lambda_frob": "1e-4",
    "model.decoder": "bilinear",
    "model.variant": "base",
    "model.lambda_apim": "1.0",
    "model.dim": "100",
    "train.epochs": "100",
    "train.batch_size": "256",
    "train.learning_rate": "1e-3",
    "train.negatives": "1",
    "train.corruption": "both",
    "train.seed": "0",
    "train.seeds": "",
    "train.patience": "20",
    "eval.split": "test",
    "eval.checkpoint": "",
    "eval.dump_ranks": "false",
    "runtime.threads": "1",
}

FLAG_KEYS = {
    "seed": "train.seed",
    "seeds": "train.seeds",
    "out": "output.dir",
    "checkpoint": "eval.checkpoint",
    "threads": "runtime.threads",
    "split": "eval.split",
    "data": "data.dir",
}

REQUIRED = {
    "train": ("output.dir",),
    "eval": ("output.dir", "eval.checkpoint"),
    "analyze-energy": ("output.dir", "eval.checkpoint"),
    "analyze-importance": ("output.dir", "eval.checkpoint"),
    "analyze-oversmoothing": ("output.dir", "eval.checkpoint"),
    "ingest-stats": (),
}


class ConfigError(ValueError):
    """Bad or missing configuration (exit code 2)."""


class RunConfig(dict):
    def get_str(self, key):
        value = self.get(key, "")
        if value == "":
            raise ConfigError(f"missing config key: {key}")
        return value

    def get_int(self, key):
        try:
            return int(self.get_str(key))
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {self[key]!r}") from None

    def get_float(self, key):
        try:
            return float(self.get_str(key))
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {self[key]!r}") from None

    def get_bool(self, key):
        return self.get(key, "").strip().lower() in ("1", "true", "yes", "on")

    def echo(self):
        return "".join(f"{k} = {v}\n" for k, v in sorted(self.items()))


def parse_config_text(text, source="<config>"):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key = key.strip()
        if key not in DEFAULTS:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        values[key] = value.strip()
    return values


def load_run_config(path=None, overrides=()):
    cfg = RunConfig(DEFAULTS)
    if path:
        with open(path, encoding="utf-8") as fh:
            cfg.update(parse_config_text(fh.read(), path))
    for key, value in overrides:
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        cfg[key] = value
    base = cfg.get("data.dir", "")
    if base:
        for split in ("train", "valid", "test"):
            if not cfg[f"data.{split}"]:
                cfg[f"data.{split}"] = os.path.join(base, f"{split}.txt")
    return cfg


def build_parser():
    p = argparse.ArgumentParser(prog="distkg", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key (repeatable)")
    p.add_argument("--seed", help="train.seed")
    p.add_argument("--seeds", help="train.seeds, comma-separated; one run per seed")
    p.add_argument("--out", help="output.dir")
    p.add_argument("--checkpoint", help="eval.checkpoint")
    p.add_argument("--threads", help="runtime.threads")
    p.add_argument("--split", help="eval.split")
    p.add_argument("--data", help="data.dir holding train.txt, valid.txt, test.txt")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _overrides(args):
    out = []
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        out.append((key.strip(), value.strip()))
    for flag, key in FLAG_KEYS.items():
        value = getattr(args, flag)
        if value is not None:
            out.append((key, value))
    return out


# ------------------------------------------------------------- assembling


def schedule_from(cfg):
    return DistillSchedule(cfg.get_str("distill.family"), cfg.get_float("distill.alpha_start"),
                           cfg.get_float("distill.delta"), cfg.get_float("distill.gamma"),
                           cfg.get_int("distill.rounds"))


def assembly_from(cfg):
    flavor = cfg.get_str("encoder.flavor")
    encoder = None
    if flavor != "none":
        encoder = EncoderConfig(flavor, cfg.get_int("encoder.layers"), cfg.get_int("encoder.input_dim"),
                                cfg.get_int("encoder.hidden_dim"), None, cfg.get_int("encoder.bases"))
    decoder = cfg.get_str("model.decoder")
    head = ApimSettings(cfg.get_int("apim.mode_count"), cfg.get_int("apim.retained_k"),
                        cfg.get_float("apim.lambda_frob"))
    return assemble(cfg.get_str("model.variant"), None if decoder == "none" else decoder,
                    encoder, head, schedule_from(cfg), cfg.get_float("model.lambda_apim"),
                    cfg.get_int("model.dim"))


def train_config_from(cfg, seed, out_dir):
    return TrainConfig(
        epochs=cfg.get_int("train.epochs"),
        batch_size=cfg.get_int("train.batch_size"),
        learning_rate=cfg.get_float("train.learning_rate"),
        negatives_per_positive=cfg.get_int("train.negatives"),
        corruption=cfg.get_str("train.corruption"),
        seed=seed,
        patience=cfg.get_int("train.patience"),
        checkpoint_path=os.path.join(out_dir, "checkpoint.bin"),
        log_path=os.path.join(out_dir, "train.log"),
    )


def load_store(cfg):
    return load_triples(cfg.get_str("data.train"), cfg.get_str("data.valid"), cfg.get_str("data.test"))


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- commands


def cmd_train(cfg, out):
    store = load_store(cfg)
    assembly = assembly_from(cfg)
    seeds_text = cfg.get("train.seeds", "")
    seeds = [int(s) for s in seeds_text.split(",") if s.strip()] or [cfg.get_int("train.seed")]
    runs = {}
    for seed in seeds:
        run_dir = out if len(seeds) == 1 else os.path.join(out, f"seed_{seed}")
        os.makedirs(run_dir, exist_ok=True)
        ckpt = train(store, assembly, train_config_from(cfg, seed, run_dir))
        report = evaluate(ckpt.model(store), store, cfg.get_str("eval.split"))
        metrics = report.metrics()
        metrics.update(seed=seed, best_epoch=ckpt.epoch, variant=assembly.variant)
        if len(seeds) > 1:
            _write_json(os.path.join(run_dir, "metrics.json"), metrics)
        runs[seed] = metrics
        print(f"seed {seed}: mrr {metrics['mrr']:.4f} hits@10 {metrics['hits10']:.4f}")
    if len(seeds) == 1:
        summary = runs[seeds[0]]
    else:
        summary = {"variant": assembly.variant, "seeds": seeds, "runs": [runs[s] for s in seeds]}
        for key in ("mrr", "hits1", "hits3", "hits10"):
            vals = np.array([runs[s][key] for s in seeds])
            summary[key] = float(vals.mean())
            summary[key + "_std"] = float(vals.std())
    _write_json(os.path.join(out, "metrics.json"), summary)
    return 0


def _checkpoint_model(cfg):
    path = cfg.get_str("eval.checkpoint")
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    store = load_store(cfg)
    ckpt = Checkpoint.load(path)
    return store, ckpt, ckpt.model(store)


def cmd_eval(cfg, out):
    store, _, model = _checkpoint_model(cfg)
    split = cfg.get_str("eval.split")
    report = evaluate(model, store, split)
    report.to_json(os.path.join(out, "metrics.json"))
    if cfg.get_bool("eval.dump_ranks"):
        report.write_ranks(os.path.join(out, "ranks.tsv"), store.split(split).tolist())
    print(report.to_json())
    return 0


def cmd_energy(cfg, out):
    _, ckpt, model = _checkpoint_model(cfg)
    if ckpt.assembly.apim is None:
        raise ConfigError("checkpoint has no APIM head")
    report = energy_curve(model.signatures())
    report.write_csv(os.path.join(out, "energy.csv"))
    k = ckpt.assembly.apim.retained_k
    print(f"mean energy at k={k}: {report.at(k):.4f} (threshold 0.85)")
    return 0


def cmd_importance(cfg, out):
    _, ckpt, model = _checkpoint_model(cfg)
    if ckpt.assembly.apim is None:
        raise ConfigError("checkpoint has no APIM head")
    mode_importance(model.signatures(), model.transitions()).write_csv(
        os.path.join(out, "importance.csv"))
    return 0


def cmd_oversmoothing(cfg, out):
    _, ckpt, model = _checkpoint_model(cfg)
    if ckpt.assembly.encoder is None:
        raise ConfigError("checkpoint has no GNN encoder")
    frozen = model.frozen_params()
    states = encode(None, model.adjacency, frozen["ent"], ckpt.assembly.encoder, frozen)
    profile = oversmoothing_profile(states, seed=cfg.get_int("train.seed"))
    write_profile_csv(profile, os.path.join(out, "oversmoothing.csv"))
    for layer, v in enumerate(profile):
        print(f"layer {layer}: {v:.4f}")
    return 0


def cmd_ingest_stats(cfg, out):
    stats = load_store(cfg).stats()
    for key in ("entities", "relations", "train", "valid", "test"):
        print(f"{key}\t{stats[key]}")
    if out:
        _write_json(os.path.join(out, "stats.json"), stats)
    return 0


HANDLERS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "analyze-energy": cmd_energy,
    "analyze-importance": cmd_importance,
    "analyze-oversmoothing": cmd_oversmoothing,
    "ingest-stats": cmd_ingest_stats,
}


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_run_config(args.config, _overrides(args))
        for key in REQUIRED[args.command] + ("data.train", "data.valid", "data.test"):
            cfg.get_str(key)
        out = cfg.get("output.dir", "")
        if out:
            os.makedirs(out, exist_ok=True)
            with open(os.path.join(out, "config.echo"), "w", encoding="utf-8") as fh:
                fh.write(cfg.echo())
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=cfg.get_int("runtime.threads")):
            return HANDLERS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"distkg: {exc}", file=sys.stderr)
        return 2
    except (OSError, KGFormatError, CheckpointError) as exc:
        print(f"distkg: file error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # noqa: BLE001 - one-line diagnostic is the contract
        print(f"distkg: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
