"""Weak supervision and max-margin training."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import tensor as T
from .evaluation import question_prf
from .kb import KnowledgeBase
from .model import Scorer
from .optim import AdamState, adam_step
from .semgraph import (
    DEFAULT_MAX_EDGES,
    DEFAULT_MAX_PATHS,
    LinkedQuestion,
    SemanticGraph,
    canonical_form,
    enumerate_states,
    graph_from_json,
    graph_to_json,
    unique_graphs,
)
from .tensor import Tensor

logger = logging.getLogger(__name__)

# 628 development questions beside 1945 training questions
DEV_FRACTION = 628 / (1945 + 628)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    margin: float = 0.5
    batch_size: int = 64
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_negatives: int = 100
    patience: int = 5
    max_epochs: int = 50
    seed: int = 0
    dev_fraction: float = DEV_FRACTION
    positive_threshold: float = 1.0
    max_edges: int = DEFAULT_MAX_EDGES
    max_paths: int = DEFAULT_MAX_PATHS
    max_states: Optional[int] = None
    chunk_questions: int = 16

    def __post_init__(self):
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.batch_size < 1 or self.chunk_questions < 1:
            raise ValueError("batch_size and chunk_questions must be >= 1")
        if not 0 < self.positive_threshold <= 1:
            raise ValueError("positive_threshold must be in (0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainingInstance:
    question: LinkedQuestion
    positives: list[SemanticGraph]
    negatives: list[SemanticGraph]
    positive_prf: list[tuple[float, float, float]] = field(default_factory=list)
    negative_prf: list[tuple[float, float, float]] = field(default_factory=list)

    def __post_init__(self):
        if not self.positives:
            raise ValueError("a training instance needs at least one positive graph")
        pos = {canonical_form(g) for g in self.positives}
        if any(canonical_form(g) in pos for g in self.negatives):
            raise ValueError("positive and negative graphs overlap")


@dataclass
class SupervisionStats:
    questions: int = 0
    kept: int = 0
    dropped: int = 0
    graphs: int = 0


def generate_weak_supervision(
    dataset: Sequence[LinkedQuestion], kb: KnowledgeBase, config: TrainConfig
) -> tuple[list[TrainingInstance], SupervisionStats]:
    """Label every constructible graph by executing it against the KB.

    Graphs whose answers reach F >= ``positive_threshold`` against the gold
    set are positives; the rest are negatives.  Questions without a positive
    are dropped.
    """
    out, stats = [], SupervisionStats()
    for q in dataset:
        stats.questions += 1
        if not q.answers:
            stats.dropped += 1
            continue
        ents = tuple(e for e in q.entities if kb.has_entity(e))
        states = enumerate_states(
            LinkedQuestion(q.utterance, ents), kb, config.max_edges, config.max_paths, config.max_states
        )
        pos, neg, pos_prf, neg_prf = [], [], [], []
        for g in unique_graphs(states):
            prf = question_prf(kb.evaluate_graph(g), q.answers)
            if prf[2] >= config.positive_threshold:
                pos.append(g)
                pos_prf.append(prf)
            else:
                neg.append(g)
                neg_prf.append(prf)
        stats.graphs += len(pos) + len(neg)
        if not pos:
            stats.dropped += 1
            continue
        stats.kept += 1
        out.append(TrainingInstance(q, pos, neg, pos_prf, neg_prf))
    logger.info("weak supervision: kept %d of %d questions", stats.kept, stats.questions)
    return out, stats


def split_dev(instances: Sequence[TrainingInstance], fraction: float, seed: int):
    rng = np.random.default_rng(seed)
    idx = rng.permutation(len(instances))
    n_dev = int(round(len(instances) * fraction))
    if len(instances) > 1:
        n_dev = min(max(n_dev, 1), len(instances) - 1)
    dev = sorted(idx[:n_dev])
    train = sorted(idx[n_dev:])
    return [instances[i] for i in train], [instances[i] for i in dev]


# -- loss -----------------------------------------------------------------


def pair_hinge(gammas: Tensor, pos_idx, neg_idx, margin: float) -> Tensor:
    """Sum of ``max(0, m - gamma[pos] + gamma[neg])`` over the given index pairs."""
    pos_idx = np.asarray(pos_idx, dtype=np.int64)
    neg_idx = np.asarray(neg_idx, dtype=np.int64)
    if len(pos_idx) == 0:
        return T.const(np.zeros((), dtype=gammas.dtype))
    diff = T.sub(T.take(gammas, neg_idx), T.take(gammas, pos_idx))
    return T.reduce_sum(T.relu(T.add_scalar(diff, margin)))


def hinge_from_rewards(pos: Tensor, neg: Tensor, margin: float) -> Tensor:
    """Loss over all (positive, negative) reward pairs of one question."""
    P, N = pos.shape[0], neg.shape[0]
    gam = T.concat([pos, neg], axis=0)
    pi, ni = np.meshgrid(np.arange(P), P + np.arange(N), indexing="ij")
    return pair_hinge(gam, pi.ravel(), ni.ravel(), margin)


def margin_loss(v_q: Tensor, v_pos: Tensor, v_negs: Sequence[Tensor], margin: float) -> Tensor:
    """``sum_neg max(0, m - cos(v_q, v_pos) + cos(v_q, v_neg))`` for one positive."""
    pos = T.reshape(T.cosine(v_q, v_pos), (1,))
    if not v_negs:
        return T.const(np.zeros((), dtype=v_q.dtype))
    neg = T.concat([T.reshape(T.cosine(v_q, v), (1,)) for v in v_negs], axis=0)
    return hinge_from_rewards(pos, neg, margin)


# -- training loop ----------------------------------------------------------


@dataclass
class TrainResult:
    model: Scorer
    history: list[dict]
    best_epoch: int
    best_dev_f: float


def _snapshot(model: Scorer) -> list[np.ndarray]:
    return [p.data.copy() for p in model.parameters()]


def _restore(model: Scorer, snap: list[np.ndarray]) -> None:
    for p, d in zip(model.parameters(), snap):
        p.data = d.copy()


def batch_loss(
    model: Scorer,
    kb: KnowledgeBase,
    items: Sequence[tuple[TrainingInstance, list[SemanticGraph]]],
    margin: float,
    train: bool,
    rng: Optional[np.random.Generator],
) -> Tensor:
    """Summed hinge loss for several questions, each with its sampled negatives."""
    graphs, rows, pos_idx, neg_idx = [], [], [], []
    for qi, (inst, negs) in enumerate(items):
        base = len(graphs)
        graphs += inst.positives + negs
        rows += [qi] * (len(inst.positives) + len(negs))
        P = len(inst.positives)
        for i in range(P):
            for j in range(len(negs)):
                pos_idx.append(base + i)
                neg_idx.append(base + P + j)
    vq = model.encode_questions([inst.question.utterance for inst, _ in items], train, rng)
    vg = model.encode_graphs(graphs, kb, train, rng)
    gam = model.rewards(vq, rows, vg)
    return pair_hinge(gam, pos_idx, neg_idx, margin)


def rerank_prf(model: Scorer, kb: KnowledgeBase, instances: Sequence[TrainingInstance]) -> tuple[float, float, float]:
    """Macro P/R/F when each question takes its top-scored candidate from the stored pool."""
    ps, rs, fs = [], [], []
    for inst in instances:
        cands = inst.positives + inst.negatives
        prfs = inst.positive_prf + inst.negative_prf
        if len(prfs) != len(cands):
            prfs = [question_prf(kb.evaluate_graph(g), inst.question.answers) for g in cands]
        gam = model.score(inst.question.utterance, cands, kb)
        keys = [canonical_form(g) for g in cands]
        best = min(range(len(cands)), key=lambda i: (-gam[i], keys[i]))
        p, r, f = prfs[best]
        ps.append(p)
        rs.append(r)
        fs.append(f)
    n = max(len(fs), 1)
    return sum(ps) / n, sum(rs) / n, sum(fs) / n


def train(
    model: Scorer,
    kb: KnowledgeBase,
    train_set: Sequence[TrainingInstance],
    dev_set: Sequence[TrainingInstance],
    config: TrainConfig,
    log_path: Optional[Union[str, Path]] = None,
) -> TrainResult:
    """Adam on the pairwise hinge loss with early stopping on dev F-score."""
    if not train_set:
        raise ValueError("no training instances")
    rng = np.random.default_rng(config.seed)
    params = model.parameters()
    state = AdamState(config.lr, config.beta1, config.beta2, config.eps)
    history: list[dict] = []
    best_f, best_epoch, best = -1.0, 0, _snapshot(model)
    stale = 0
    log = open(log_path, "w") if log_path else None
    try:
        for epoch in range(1, config.max_epochs + 1):
            t0 = time.perf_counter()
            order = rng.permutation(len(train_set))
            total = 0.0
            for b0 in range(0, len(order), config.batch_size):
                batch = [train_set[i] for i in order[b0 : b0 + config.batch_size]]
                model.zero_grad()
                for c0 in range(0, len(batch), config.chunk_questions):
                    items = []
                    for inst in batch[c0 : c0 + config.chunk_questions]:
                        k = min(config.max_negatives, len(inst.negatives))
                        pick = rng.choice(len(inst.negatives), size=k, replace=False) if k else []
                        items.append((inst, [inst.negatives[i] for i in sorted(pick)]))
                    try:
                        loss = batch_loss(model, kb, items, config.margin, True, rng)
                    except FloatingPointError as exc:
                        raise TrainingDiverged(f"epoch {epoch}: {exc}") from exc
                    total += loss.item()
                    if loss.requires_grad:
                        loss.backward()
                if not np.isfinite(total):
                    raise TrainingDiverged(f"epoch {epoch}: loss is {total}")
                adam_step(params, state)
            dev_p, dev_r, dev_f = rerank_prf(model, kb, dev_set) if dev_set else (0.0, 0.0, 0.0)
            rec = {
                "epoch": epoch,
                "train_loss": total,
                "dev_P": dev_p,
                "dev_R": dev_r,
                "dev_F": dev_f,
                "seconds": round(time.perf_counter() - t0, 3),
            }
            history.append(rec)
            logger.info("epoch %d loss %.4f dev F %.4f", epoch, total, dev_f)
            if log:
                log.write(json.dumps(rec) + "\n")
                log.flush()
            if dev_f > best_f:
                best_f, best_epoch, best = dev_f, epoch, _snapshot(model)
                stale = 0
            else:
                stale += 1
                if stale >= config.patience:
                    break
    finally:
        if log:
            log.close()
    _restore(model, best)
    return TrainResult(model, history, best_epoch, best_f)


def instance_to_record(inst: TrainingInstance) -> dict:
    return {
        "question": inst.question.to_record(),
        "positives": [graph_to_json(g) for g in inst.positives],
        "negatives": [graph_to_json(g) for g in inst.negatives],
        "positive_prf": [list(x) for x in inst.positive_prf],
        "negative_prf": [list(x) for x in inst.negative_prf],
    }


def instance_from_record(rec: dict) -> TrainingInstance:
    return TrainingInstance(
        question=LinkedQuestion.from_record(rec["question"]),
        positives=[graph_from_json(g) for g in rec["positives"]],
        negatives=[graph_from_json(g) for g in rec["negatives"]],
        positive_prf=[tuple(x) for x in rec.get("positive_prf", ())],
        negative_prf=[tuple(x) for x in rec.get("negative_prf", ())],
    )


def train_model(
    instances: Sequence[TrainingInstance],
    kind: str,
    model_config,
    table,
    kb: KnowledgeBase,
    config: TrainConfig,
    log_path: Optional[Union[str, Path]] = None,
    dtype=np.float32,
) -> TrainResult:
    """Split off a dev set, build a fresh scorer and train it."""
    train_set, dev_set = split_dev(instances, config.dev_fraction, config.seed)
    model = Scorer(kind, model_config, table, seed=config.seed, dtype=dtype)
    return train(model, kb, train_set, dev_set, config, log_path)
