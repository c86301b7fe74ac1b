"""Question/graph scorer combining the DCNN with one of the graph encoders."""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import encoders as enc
from . import tensor as T
from .encoders import DcnnParams, GgnnParams, LabelEncoderParams, ModelConfig
from .optim import load_params_into, read_checkpoint, save_checkpoint
from .semgraph import SemanticGraph
from .tensor import Parameter, Tensor
from .text import EmbeddingTable, tokenize

MODEL_KINDS = ("single", "pooled", "gnn", "ggnn")


class Scorer:
    """Scores candidate graphs for a question by cosine similarity of encodings."""

    def __init__(
        self,
        kind: str,
        config: ModelConfig,
        table: EmbeddingTable,
        seed: int = 0,
        dtype=np.float32,
    ):
        if kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")
        if table.dim != config.embedding_dim:
            raise ValueError(f"embedding dim {table.dim} != config.embedding_dim {config.embedding_dim}")
        self.kind = kind
        self.config = config
        self.table = table
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.question = DcnnParams(config, rng, "question", dtype)
        self.edge_dcnn = self.label = self.gnn = None
        if kind in ("single", "pooled"):
            self.edge_dcnn = DcnnParams(config, rng, "edge", dtype)
        else:
            self.label = LabelEncoderParams(config, rng, "label", dtype)
            self.gnn = GgnnParams(config, rng, kind, dtype, gated=kind == "ggnn")
        self._mats: dict[tuple[int, SemanticGraph], enc.GraphMatrices] = {}

    def parameters(self) -> list[Parameter]:
        ps = self.question.parameters()
        for part in (self.edge_dcnn, self.label, self.gnn):
            if part is not None:
                ps += part.parameters()
        return ps

    @property
    def dtype(self):
        return self.question.H.dtype

    def astype(self, dtype) -> "Scorer":
        for p in self.parameters():
            p.astype(dtype)
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    # -- encoding --------------------------------------------------------

    def encode_questions(self, utterances: Sequence[Union[str, Sequence[str]]], train=False, rng=None) -> Tensor:
        seqs = [tokenize(u) if isinstance(u, str) else list(u) for u in utterances]
        return enc.dcnn_encode(self.question, self.table, seqs, self.config.dropout, train, rng)

    def matrices(self, g: SemanticGraph, kb) -> enc.GraphMatrices:
        key = (id(kb), g)
        m = self._mats.get(key)
        if m is None:
            if len(self._mats) > 200_000:
                self._mats.clear()
            m = self._mats[key] = enc.build_graph_matrices(g, kb)
        return m

    def encode_graphs(self, graphs: Sequence[SemanticGraph], kb, train=False, rng=None) -> Tensor:
        p = self.config.dropout
        if self.kind == "single":
            return enc.single_edge_encode(self.edge_dcnn, self.table, graphs, kb, p, train, rng)
        if self.kind == "pooled":
            return enc.pooled_edges_encode(self.edge_dcnn, self.table, graphs, kb, p, train, rng)
        mats = [self.matrices(g, kb) for g in graphs]
        return enc.graph_encode(self.gnn, self.label, self.table, mats, self.config.steps, dropout=p, train=train, rng=rng)

    def rewards(self, vq: Tensor, question_rows: Sequence[int], vg: Tensor) -> Tensor:
        return enc.batch_reward(T.take(vq, np.asarray(question_rows, dtype=np.int64)), vg)

    def score(self, utterance: Union[str, Sequence[str]], graphs: Sequence[SemanticGraph], kb, chunk: int = 512) -> np.ndarray:
        """Reward of each graph for one question (inference mode, float64 result)."""
        if not graphs:
            return np.zeros(0)
        vq = self.encode_questions([utterance])
        out = []
        for i in range(0, len(graphs), chunk):
            part = graphs[i : i + chunk]
            vg = self.encode_graphs(part, kb)
            out.append(self.rewards(vq, np.zeros(len(part), dtype=np.int64), vg).data.astype(np.float64))
        return np.concatenate(out)

    # -- persistence -----------------------------------------------------

    def config_dict(self) -> dict:
        return {"kind": self.kind, "model": self.config.to_dict(), "seed": self.seed}

    def save(self, path: Union[str, Path], extra: Optional[dict] = None) -> None:
        cfg = self.config_dict()
        if extra:
            cfg.update(extra)
        save_checkpoint(path, cfg, self.parameters())

    @classmethod
    def load(cls, path: Union[str, Path], table: EmbeddingTable, dtype=np.float32) -> "Scorer":
        doc = read_checkpoint(path)
        cfg = doc["config"]
        model = cls(cfg["kind"], ModelConfig(**cfg["model"]), table, cfg.get("seed", 0), dtype)
        load_params_into(doc, model.parameters())
        return model
