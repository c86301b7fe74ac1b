"""Ready-made gradient checks for every encoder on a small fixture corpus."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from . import encoders as enc
from . import tensor as T
from .gradcheck import GradCheckReport, grad_check
from .model import Scorer
from .semgraph import LinkedQuestion, enumerate_states, unique_graphs
from .synthetic import generate_corpus
from .text import tokenize

COMPONENTS = ("dcnn", "label", "gnn", "ggnn", "reward")


def _projection(out: T.Tensor, rng: np.random.Generator) -> T.Tensor:
    # a fixed random projection makes every output coordinate matter
    R = rng.standard_normal(out.shape)
    return T.reduce_sum(T.mul(out, T.const(R, out.dtype)))


def fixture(seed: int = 0, n_graphs: int = 6):
    corpus = generate_corpus(n_questions=12, seed=seed, n_families=2)
    q = corpus.questions[0]
    graphs = unique_graphs(enumerate_states(LinkedQuestion(q.utterance, q.entities), corpus.kb, max_states=200))
    graphs = sorted(graphs, key=len, reverse=True)[:n_graphs]
    return corpus, q, graphs


def run_gradchecks(
    components: Sequence[str] = COMPONENTS,
    model_kind: str = "ggnn",
    seed: int = 0,
    tolerance: float = 1e-4,
    n_coords: int = 20,
    config: Optional[enc.ModelConfig] = None,
) -> dict[str, GradCheckReport]:
    """Grad-check each requested component in float64; returns one report per component.

    ``reward`` checks the whole question/graph scoring pipeline of a
    ``model_kind`` scorer through a hinge loss.
    """
    unknown = set(components) - set(COMPONENTS)
    if unknown:
        raise ValueError(f"unknown components {sorted(unknown)}")
    corpus, q, graphs = fixture(seed)
    kb, table = corpus.kb, corpus.embeddings
    cfg = config or enc.ModelConfig(hidden_size=8, cnn_filters=8, cnn_layers=2, steps=3, dropout=0.0)
    rng = np.random.default_rng(seed)
    reports = {}
    for name in components:
        prng = np.random.default_rng(seed + 1)
        if name == "dcnn":
            p = enc.DcnnParams(cfg, prng, "dcnn", np.float64)
            seqs = [tokenize(q.utterance), tokenize("who is the father of x")]
            out_rng = np.random.default_rng(seed + 2)
            R = out_rng.standard_normal((len(seqs), cfg.hidden_size))
            fn = lambda: T.reduce_sum(T.mul(enc.dcnn_encode(p, table, seqs), T.const(R, np.float64)))
            params = p.parameters()
        elif name == "label":
            p = enc.LabelEncoderParams(cfg, prng, "label", np.float64)
            labels = [tuple(tokenize(kb.label(e))) for e in sorted(kb.entities)[:4]]
            R = np.random.default_rng(seed + 2).standard_normal((len(labels), cfg.hidden_size))
            fn = lambda: T.reduce_sum(T.mul(enc.encode_labels(p, table, labels), T.const(R, np.float64)))
            params = p.parameters()
        elif name in ("gnn", "ggnn"):
            lp = enc.LabelEncoderParams(cfg, prng, "label", np.float64)
            gp = enc.GgnnParams(cfg, prng, name, np.float64, gated=name == "ggnn")
            mats = [enc.build_graph_matrices(g, kb) for g in graphs]
            R = np.random.default_rng(seed + 2).standard_normal((len(mats), cfg.hidden_size))
            fn = lambda: T.reduce_sum(
                T.mul(enc.graph_encode(gp, lp, table, mats, cfg.steps), T.const(R, np.float64))
            )
            params = lp.parameters() + gp.parameters()
        else:
            from .training import batch_loss, TrainingInstance

            model = Scorer(model_kind, cfg, table, seed=seed, dtype=np.float64)
            inst = TrainingInstance(q, graphs[:1], graphs[1:])
            # large margin keeps every hinge active so the loss is smooth at the check point
            fn = lambda: batch_loss(model, kb, [(inst, graphs[1:])], 5.0, False, None)
            params = model.parameters()
        reports[name] = grad_check(fn, params, tolerance, n_coords, rng=rng)
    return reports
