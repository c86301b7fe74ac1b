"""Beam-search parsing: expand, score, keep the best states, repeat."""

from __future__ import annotations

from typing import Optional

from .evaluation import Prediction, ScoredGraph
from .kb import KnowledgeBase
from .model import Scorer
from .semgraph import (
    DEFAULT_MAX_EDGES,
    DEFAULT_MAX_PATHS,
    LinkedQuestion,
    expand,
    initial_state,
)


def beam_search_parse(
    question: LinkedQuestion,
    kb: KnowledgeBase,
    model: Scorer,
    beam: Optional[int] = 10,
    max_edges: int = DEFAULT_MAX_EDGES,
    max_paths: int = DEFAULT_MAX_PATHS,
    topk: int = 10,
) -> Prediction:
    """Parse a question; ``beam=None`` keeps every state (exhaustive search).

    Every graph produced at any step is scored, partial or not; the answer
    comes from the highest-reward graph seen, ties broken by canonical form.
    """
    entities = [e for e in question.entities if kb.has_entity(e)]
    if not entities:
        return Prediction(question.id, None, frozenset(), None, [])
    vq = model.encode_questions([question.utterance])
    scores: dict[str, float] = {}
    graphs = {}
    states = [initial_state(LinkedQuestion(question.utterance, tuple(entities)))]
    while states:
        succ = {}
        for st in states:
            for s2 in expand(st, kb, max_edges, max_paths):
                succ.setdefault(s2.key(), s2)
        if not succ:
            break
        fresh = {}
        for key, st in succ.items():
            c = key[0]
            if c not in scores and c not in fresh:
                fresh[c] = st.graph
        if fresh:
            keys = sorted(fresh)
            gl = [fresh[c] for c in keys]
            for i in range(0, len(gl), 512):
                vg = model.encode_graphs(gl[i : i + 512], kb)
                rows = [0] * len(vg.data)
                for c, s in zip(keys[i : i + 512], model.rewards(vq, rows, vg).data):
                    scores[c] = float(s)
            graphs.update(fresh)
        ranked = sorted(succ.items(), key=lambda kv: (-scores[kv[0][0]], kv[0]))
        if beam is not None:
            ranked = ranked[:beam]
        states = [st for _, st in ranked]
    if not scores:
        return Prediction(question.id, None, frozenset(), None, [])
    order = sorted(scores, key=lambda c: (-scores[c], c))
    top = [ScoredGraph(c, scores[c], frozenset(kb.evaluate_graph(graphs[c]))) for c in order[:topk]]
    best = top[0]
    return Prediction(question.id, best.graph, best.answers, best.score, top)


def exhaustive_parse(question: LinkedQuestion, kb: KnowledgeBase, model: Scorer, **kw) -> Prediction:
    return beam_search_parse(question, kb, model, beam=None, **kw)

