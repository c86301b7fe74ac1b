"""Command-line entry point.

Settings are resolved in this order, later wins: built-in defaults, the
JSON document given by ``--config``, then explicit flags.  Every command
writes ``manifest.json`` into its output directory with the resolved
configuration, its hash, the seed and SHA-256 digests of all input files.
Failures print one JSON error record on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .encoders import ModelConfig
from .evaluation import Prediction, evaluate
from .inference import beam_search_parse
from .kb import KBError, load_kb
from .model import MODEL_KINDS, Scorer
from .optim import CheckpointError
from .semgraph import LinkedQuestion
from .text import EmbeddingError, EmbeddingTable
from .training import (
    TrainConfig,
    generate_weak_supervision,
    instance_from_record,
    instance_to_record,
    train_model,
)

logger = logging.getLogger("graphqa")

COMMANDS = ("ingest-kb", "gen-train", "train", "answer", "eval", "gradcheck", "synth")

# top-level keys a config file may carry
RUN_KEYS = {
    "kb", "embeddings", "data", "out", "model", "checkpoint", "predictions",
    "beam", "seed", "threads", "dtype", "question", "entities", "topk",
    "tolerance", "coords", "n_questions",
}
NESTED_KEYS = {"train": TrainConfig, "model_config": ModelConfig}

DEFAULTS = {"model": "ggnn", "beam": 10, "seed": 0, "threads": 1, "dtype": "f32", "topk": 10,
            "tolerance": 1e-4, "coords": 20, "n_questions": 300}


class UsageError(ValueError):
    """Bad flags or configuration."""


# -- config ---------------------------------------------------------------


def load_config_file(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise UsageError(f"config {path}: expected a JSON object")
    unknown = set(doc) - RUN_KEYS - set(NESTED_KEYS)
    if unknown:
        raise UsageError(f"config {path}: unknown keys {sorted(unknown)}")
    for key, cls in NESTED_KEYS.items():
        sub = doc.get(key, {})
        if not isinstance(sub, dict):
            raise UsageError(f"config {path}: '{key}' must be an object")
        bad = set(sub) - {f.name for f in fields(cls)}
        if bad:
            raise UsageError(f"config {path}: unknown {key} keys {sorted(bad)}")
    return doc


def resolve_config(args: argparse.Namespace) -> dict:
    """Merge defaults, config file and flags, then validate everything."""
    doc = load_config_file(args.config)
    cfg = dict(DEFAULTS)
    cfg.update({k: v for k, v in doc.items() if k in RUN_KEYS})
    for k in RUN_KEYS:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    if cfg["model"] not in MODEL_KINDS:
        raise UsageError(f"--model must be one of {MODEL_KINDS}")
    if cfg["beam"] is not None and int(cfg["beam"]) < 1:
        raise UsageError("--beam must be >= 1")
    if int(cfg["threads"]) < 1:
        raise UsageError("--threads must be >= 1")
    if cfg["dtype"] not in ("f32", "f64"):
        raise UsageError("dtype must be 'f32' or 'f64'")
    train_kw = dict(doc.get("train", {}))
    train_kw.setdefault("seed", int(cfg["seed"]))
    if getattr(args, "seed", None) is not None:
        train_kw["seed"] = int(args.seed)
    for k in ("epochs", "patience", "batch_size"):
        v = getattr(args, k, None)
        if v is not None:
            train_kw["max_epochs" if k == "epochs" else k] = v
    try:
        cfg["train"] = TrainConfig(**train_kw).to_dict()
        model_kw = dict(doc.get("model_config", {}))
        if getattr(args, "hidden", None) is not None:
            model_kw["hidden_size"] = model_kw["cnn_filters"] = args.hidden
        cfg["model_config"] = ModelConfig(**model_kw).to_dict()
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from exc
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, default=str).encode()).hexdigest()


def file_digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(out: Path, command: str, cfg: dict, inputs: Sequence[str], outputs: Sequence[str]) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    doc = {
        "command": command,
        "config": cfg,
        "config_sha256": config_hash(cfg),
        "seed": cfg["seed"],
        "inputs": {str(p): file_digest(p) for p in inputs},
        "outputs": sorted(str(p) for p in outputs),
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(doc, sort_keys=True, indent=2, default=str) + "\n")
    return path


def _require(cfg: dict, *keys: str) -> None:
    missing = [k for k in keys if not cfg.get(k)]
    if missing:
        raise UsageError("missing required setting(s): " + ", ".join("--" + k for k in missing))


def _dtype(cfg: dict):
    return np.float64 if cfg["dtype"] == "f64" else np.float32


def _out_dir(cfg: dict, command: str) -> Path:
    return Path(cfg.get("out") or f"runs/{command}")


def read_jsonl(path: str) -> list[dict]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise UsageError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
    return out


def write_jsonl(path: Path, records) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def load_dataset(path: str) -> list[LinkedQuestion]:
    try:
        return [LinkedQuestion.from_record(r, default_id=str(i)) for i, r in enumerate(read_jsonl(path))]
    except KeyError as exc:
        raise UsageError(f"{path}: record lacks field {exc}") from exc


# -- commands -------------------------------------------------------------


def cmd_ingest_kb(cfg: dict) -> dict:
    _require(cfg, "kb")
    kb = load_kb(cfg["kb"])
    out = _out_dir(cfg, "ingest-kb")
    out.mkdir(parents=True, exist_ok=True)
    kb.save(out / "kb.jsonl")
    stats = {
        "entities": len(kb.entities),
        "relations": len(kb.relations),
        "statements": len(kb.statements),
        "qualified_statements": sum(1 for s in kb.statements if s.qualifiers),
        "date_relations": sorted(kb.date_relations()),
    }
    (out / "kb_stats.json").write_text(json.dumps(stats, sort_keys=True, indent=2) + "\n")
    write_manifest(out, "ingest-kb", cfg, [cfg["kb"]], [out / "kb.jsonl", out / "kb_stats.json"])
    print(json.dumps(stats, sort_keys=True))
    return stats


def cmd_gen_train(cfg: dict) -> dict:
    _require(cfg, "kb", "data")
    kb = load_kb(cfg["kb"])
    dataset = load_dataset(cfg["data"])
    tc = TrainConfig(**cfg["train"])
    instances, stats = generate_weak_supervision(dataset, kb, tc)
    out = _out_dir(cfg, "gen-train")
    out.mkdir(parents=True, exist_ok=True)
    write_jsonl(out / "instances.jsonl", (instance_to_record(i) for i in instances))
    summary = {"questions": stats.questions, "kept": stats.kept, "dropped": stats.dropped, "graphs": stats.graphs}
    write_manifest(out, "gen-train", cfg, [cfg["kb"], cfg["data"]], [out / "instances.jsonl"])
    print(json.dumps(summary, sort_keys=True))
    return summary


def cmd_train(cfg: dict) -> dict:
    _require(cfg, "kb", "embeddings", "data")
    kb = load_kb(cfg["kb"])
    table = EmbeddingTable.load(cfg["embeddings"], dim=cfg["model_config"]["embedding_dim"], seed=cfg["seed"])
    tc = TrainConfig(**cfg["train"])
    records = read_jsonl(cfg["data"])
    if records and "positives" in records[0]:
        instances = [instance_from_record(r) for r in records]
    else:
        instances, _ = generate_weak_supervision([LinkedQuestion.from_record(r) for r in records], kb, tc)
    if len(instances) < 2:
        raise UsageError("training needs at least two questions with a positive graph")
    out = _out_dir(cfg, "train")
    out.mkdir(parents=True, exist_ok=True)
    res = train_model(
        instances, cfg["model"], ModelConfig(**cfg["model_config"]), table, kb, tc,
        log_path=out / "train_log.jsonl", dtype=_dtype(cfg),
    )
    ckpt = out / "checkpoint.json"
    res.model.save(ckpt, {"best_epoch": res.best_epoch, "best_dev_F": res.best_dev_f})
    write_manifest(out, "train", cfg, [cfg["kb"], cfg["embeddings"], cfg["data"]], [ckpt, out / "train_log.jsonl"])
    summary = {"checkpoint": str(ckpt), "best_epoch": res.best_epoch, "best_dev_F": res.best_dev_f}
    print(json.dumps(summary, sort_keys=True))
    return summary


def _load_model(cfg: dict) -> Scorer:
    _require(cfg, "checkpoint", "embeddings")
    ck = json.loads(Path(cfg["checkpoint"]).read_text())
    dim = ck.get("config", {}).get("model", {}).get("embedding_dim", 50)
    table = EmbeddingTable.load(cfg["embeddings"], dim=dim, seed=cfg["seed"])
    return Scorer.load(cfg["checkpoint"], table, _dtype(cfg))


def cmd_answer(cfg: dict) -> dict:
    _require(cfg, "kb")
    kb = load_kb(cfg["kb"])
    model = _load_model(cfg)
    out = _out_dir(cfg, "answer")
    out.mkdir(parents=True, exist_ok=True)
    inputs = [cfg["kb"], cfg["embeddings"], cfg["checkpoint"]]
    beam = int(cfg["beam"])
    if cfg.get("question"):
        ents = tuple(e for e in (cfg.get("entities") or "").split(",") if e)
        pred = beam_search_parse(LinkedQuestion(cfg["question"], ents, id="q"), kb, model, beam=beam, topk=int(cfg["topk"]))
        rec = pred.to_record()
        rec["answer_labels"] = [kb.label(a) for a in sorted(pred.answers)]
        (out / "answer.json").write_text(json.dumps(rec, sort_keys=True, indent=2) + "\n")
        write_manifest(out, "answer", cfg, inputs, [out / "answer.json"])
        print("answers: " + (", ".join(rec["answer_labels"]) or "(none)"))
        for i, s in enumerate(pred.topk, 1):
            print(f"{i:2d}. {s.score:+.4f}  {s.graph}")
        return rec
    _require(cfg, "data")
    dataset = load_dataset(cfg["data"])
    preds = [beam_search_parse(q, kb, model, beam=beam, topk=int(cfg["topk"])) for q in dataset]
    write_jsonl(out / "predictions.jsonl", (p.to_record() for p in preds))
    write_manifest(out, "answer", cfg, inputs + [cfg["data"]], [out / "predictions.jsonl"])
    summary = {"predictions": str(out / "predictions.jsonl"), "questions": len(preds)}
    print(json.dumps(summary, sort_keys=True))
    return summary


def cmd_eval(cfg: dict) -> dict:
    _require(cfg, "data", "predictions")
    dataset = load_dataset(cfg["data"])
    preds = {}
    for r in read_jsonl(cfg["predictions"]):
        p = Prediction.from_record(r)
        preds[p.id] = p
    report = evaluate(dataset, preds)
    out = _out_dir(cfg, "eval")
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json() + "\n")
    report.write_breakdown_csv(out / "breakdown.csv")
    write_manifest(out, "eval", cfg, [cfg["data"], cfg["predictions"]], [out / "report.json", out / "breakdown.csv"])
    summary = {"P": report.precision, "R": report.recall, "F": report.f1, "hit@10": report.hit_at_10}
    print(json.dumps(summary, sort_keys=True))
    return summary


def cmd_gradcheck(cfg: dict) -> dict:
    from .checks import COMPONENTS, run_gradchecks

    kind = cfg["model"]
    comps = [c for c in COMPONENTS if c not in ("gnn", "ggnn") or c == kind]
    if kind in ("single", "pooled"):
        comps = ["dcnn", "reward"]
    reports = run_gradchecks(comps, kind, int(cfg["seed"]), float(cfg["tolerance"]), int(cfg["coords"]))
    out = _out_dir(cfg, "gradcheck")
    out.mkdir(parents=True, exist_ok=True)
    doc = {k: {"passed": r.passed, "max_rel_error": r.max_rel_error, "coords": r.n_coords, "worst": r.worst}
           for k, r in reports.items()}
    (out / "gradcheck.json").write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    write_manifest(out, "gradcheck", cfg, [], [out / "gradcheck.json"])
    for k, r in reports.items():
        print(f"{k:8s} {r}")
    if not all(r.passed for r in reports.values()):
        raise GradientCheckFailed(f"gradient check failed for {sorted(k for k, r in reports.items() if not r.passed)}")
    return doc


def cmd_synth(cfg: dict) -> dict:
    from .synthetic import generate_corpus

    out = _out_dir(cfg, "synth")
    corpus = generate_corpus(n_questions=int(cfg["n_questions"]), seed=int(cfg["seed"]))
    paths = corpus.write(out, seed=int(cfg["seed"]))
    write_manifest(out, "synth", cfg, [], list(paths.values()))
    summary = {k: str(v) for k, v in paths.items()}
    print(json.dumps(summary, sort_keys=True))
    return summary


class GradientCheckFailed(RuntimeError):
    pass


HANDLERS = {
    "ingest-kb": cmd_ingest_kb,
    "gen-train": cmd_gen_train,
    "train": cmd_train,
    "answer": cmd_answer,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "synth": cmd_synth,
}


# -- argument parsing -----------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON settings file; flags override its values")
    common.add_argument("--kb", help="knowledge base JSONL")
    common.add_argument("--embeddings", help="word vectors in GloVe text format")
    common.add_argument("--data", help="question dataset (or training instances) JSONL")
    common.add_argument("--out", help="output directory (default runs/<command>)")
    common.add_argument("--model", choices=MODEL_KINDS, help="graph encoder kind (default ggnn)")
    common.add_argument("--checkpoint", help="trained model checkpoint")
    common.add_argument("--predictions", help="predictions JSONL for eval")
    common.add_argument("--beam", type=int, help="beam size (default 10)")
    common.add_argument("--seed", type=int, help="seed for all randomness (default 0)")
    common.add_argument("--threads", type=int, help="cap on BLAS worker threads (default 1)")
    prec = common.add_mutually_exclusive_group()
    prec.add_argument("--f32", dest="dtype", action="store_const", const="f32", help="32-bit floats (default)")
    prec.add_argument("--f64", dest="dtype", action="store_const", const="f64", help="64-bit floats")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="graphqa", description="Question answering over a KB with semantic graph encoders.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("ingest-kb", parents=[common], help="validate a KB file and write statistics")
    sub.add_parser("gen-train", parents=[common], help="label candidate graphs by executing them")
    t = sub.add_parser("train", parents=[common], help="train a scorer with the max-margin loss")
    t.add_argument("--epochs", type=int)
    t.add_argument("--patience", type=int)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--hidden", type=int, help="hidden size and CNN filter count")
    a = sub.add_parser("answer", parents=[common], help="parse one question or a dataset with beam search")
    a.add_argument("--question")
    a.add_argument("--entities", help="comma-separated linked entity ids")
    a.add_argument("--topk", type=int)
    sub.add_parser("eval", parents=[common], help="score predictions against gold answers")
    g = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of all gradients")
    g.add_argument("--tolerance", type=float)
    g.add_argument("--coords", type=int)
    s = sub.add_parser("synth", parents=[common], help="write a synthetic template corpus")
    s.add_argument("--n-questions", dest="n_questions", type=int)
    return p


def _error_record(exc: BaseException) -> dict:
    return {"error": type(exc).__name__, "message": str(exc)}


def _thread_limit(n: int):
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover - optional
        return contextlib.nullcontext()
    return threadpool_limits(limits=n)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        cfg["command"] = args.command
        with _thread_limit(int(cfg["threads"])):
            HANDLERS[args.command](cfg)
    except (UsageError, KBError, EmbeddingError, CheckpointError, GradientCheckFailed,
            FileNotFoundError, KeyError, ValueError) as exc:
        print(json.dumps(_error_record(exc), sort_keys=True), file=sys.stderr)
        return 2 if isinstance(exc, UsageError) else 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
