"""Macro-averaged precision/recall/F, complexity breakdown and hit@10."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Union

from .semgraph import LinkedQuestion


def question_prf(predicted: Iterable[str], gold: Iterable[str]) -> tuple[float, float, float]:
    pred, gold = set(predicted), set(gold)
    hit = len(pred & gold)
    p = hit / len(pred) if pred else 0.0
    r = hit / len(gold) if gold else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f


@dataclass
class ScoredGraph:
    graph: str
    score: float
    answers: frozenset[str]


@dataclass
class Prediction:
    id: str
    graph: Optional[str]
    answers: frozenset[str]
    score: Optional[float]
    topk: list[ScoredGraph] = field(default_factory=list)

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "answers": sorted(self.answers),
            "graph": self.graph,
            "score": self.score,
            "topk": [{"graph": s.graph, "score": s.score, "answers": sorted(s.answers)} for s in self.topk],
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Prediction":
        return cls(
            id=str(rec["id"]),
            graph=rec.get("graph"),
            answers=frozenset(rec.get("answers", ())),
            score=rec.get("score"),
            topk=[ScoredGraph(t["graph"], t["score"], frozenset(t.get("answers", ()))) for t in rec.get("topk", ())],
        )


def bucket_of(n: Optional[int]) -> str:
    if n is None:
        return "unknown"
    return ">=4" if n >= 4 else str(n)


@dataclass
class EvalReport:
    per_question: dict[str, tuple[float, float, float]]
    precision: float
    recall: float
    f1: float
    buckets: dict[str, dict[str, float]]
    hit_at_10: float
    f_above_05: float
    f_above_00: float

    def to_dict(self) -> dict:
        return {
            "n_questions": len(self.per_question),
            "macro": {"P": self.precision, "R": self.recall, "F": self.f1},
            "buckets": self.buckets,
            "hit@10": self.hit_at_10,
            "F>0.5": self.f_above_05,
            "F>0.0": self.f_above_00,
            "per_question": {k: list(v) for k, v in self.per_question.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def write_breakdown_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["relations", "n", "P", "R", "F"])
            for key in sorted(self.buckets):
                b = self.buckets[key]
                w.writerow([key, int(b["n"]), b["P"], b["R"], b["F"]])


def _mean(xs: list[float]) -> float:
    return math.fsum(xs) / len(xs) if xs else 0.0


def evaluate(dataset: Iterable[LinkedQuestion], predictions: Mapping[str, Prediction], k: int = 10) -> EvalReport:
    """Score predictions against gold answers, one prediction per question id."""
    per_q: dict[str, tuple[float, float, float]] = {}
    by_bucket: dict[str, list[tuple[float, float, float]]] = {}
    hits = []
    for q in dataset:
        if q.id not in predictions:
            raise KeyError(f"no prediction for question {q.id!r}")
        if not q.answers:
            raise ValueError(f"question {q.id!r} has no gold answers")
        pred = predictions[q.id]
        prf = question_prf(pred.answers, q.answers)
        per_q[q.id] = prf
        by_bucket.setdefault(bucket_of(q.n_relations), []).append(prf)
        hits.append(any(question_prf(s.answers, q.answers)[2] == 1.0 for s in pred.topk[:k]))
    fs = [v[2] for v in per_q.values()]
    buckets = {
        key: {
            "n": float(len(vals)),
            "P": _mean([v[0] for v in vals]),
            "R": _mean([v[1] for v in vals]),
            "F": _mean([v[2] for v in vals]),
        }
        for key, vals in sorted(by_bucket.items())
    }
    return EvalReport(
        per_question=per_q,
        precision=_mean([v[0] for v in per_q.values()]),
        recall=_mean([v[1] for v in per_q.values()]),
        f1=_mean(fs),
        buckets=buckets,
        hit_at_10=_mean([float(h) for h in hits]),
        f_above_05=_mean([float(f > 0.5) for f in fs]),
        f_above_00=_mean([float(f > 0.0) for f in fs]),
    )
