"""Question and semantic-graph encoders.

Questions go through a deep CNN (DCNN).  Graphs are encoded by one of four
models: the DCNN over the first edge's label (single), the DCNN over every
edge label followed by pooling (pooled), or a graph neural network over node
and relation label vectors, with (ggnn) or without (gnn) GRU-style gates.

All batch entry points take lists so that every candidate graph for a
question is scored in one tape; nodes of different graphs never exchange
messages because aggregation is a scatter over per-graph edge lists.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .optim import glorot, zeros
from .semgraph import ENTITY, Q, SORT, VAR, ARGMAX, GraphEdge, Node, SemanticGraph
from .tensor import Parameter, Tensor
from .text import ARGMAX_TOKEN, ARGMIN_TOKEN, END, QNODE, START, VARNODE, EmbeddingTable, tokenize


@dataclass
class ModelConfig:
    hidden_size: int = 256
    cnn_layers: int = 2
    cnn_filters: int = 256
    kernel: int = 3
    pooling: str = "max"
    steps: int = 5
    dropout: float = 0.2
    embedding_dim: int = 50

    def __post_init__(self):
        if self.pooling not in ("max", "avg", "sum"):
            raise ValueError(f"pooling must be max, avg or sum, not {self.pooling!r}")
        if self.cnn_layers < 1 or self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError("need at least one CNN layer and an odd kernel width")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


def _param(rng, name, fan_in, fan_out, dtype):
    return Parameter(glorot(rng, fan_in, fan_out, dtype), name)


def _bias(name, n, dtype):
    return Parameter(zeros(n, dtype), name)


def _dense(x: Tensor, w: Parameter, b: Parameter) -> Tensor:
    return T.add(T.matmul(x, w), b)


# -- DCNN ---------------------------------------------------------------


class DcnnParams:
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, prefix: str = "dcnn", dtype=np.float32):
        self.kernel = cfg.kernel
        self.pooling = cfg.pooling
        self.layers = []
        d_in = cfg.embedding_dim
        for i in range(cfg.cnn_layers):
            w = _param(rng, f"{prefix}.conv{i}.W", cfg.kernel * d_in, cfg.cnn_filters, dtype)
            self.layers.append((w, _bias(f"{prefix}.conv{i}.b", cfg.cnn_filters, dtype)))
            d_in = cfg.cnn_filters
        self.H = _param(rng, f"{prefix}.H", cfg.cnn_filters, cfg.hidden_size, dtype)
        self.bH = _bias(f"{prefix}.bH", cfg.hidden_size, dtype)

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers for p in layer] + [self.H, self.bH]


def dcnn_encode(
    params: DcnnParams,
    table: EmbeddingTable,
    sequences: Sequence[Sequence[str]],
    dropout: float = 0.0,
    train: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Encode token sequences to ``(B, hidden)``; each is framed by start/end tokens."""
    dtype = params.H.dtype
    framed = [[START, *seq, END] for seq in sequences]
    B = len(framed)
    L = max(len(s) for s in framed)
    lengths = np.array([len(s) for s in framed])
    emb = np.zeros((B, L, table.dim), dtype=dtype)
    for i, seq in enumerate(framed):
        emb[i, : len(seq)] = table.lookup(seq, dtype)
    mask = (np.arange(L)[None, :] < lengths[:, None]).astype(dtype)
    x = T.dropout(T.const(emb, dtype), dropout, train, rng)
    for w, b in params.layers:
        d_in = x.shape[2]
        win = T.reshape(T.windows(x, params.kernel), (B * L, params.kernel * d_in))
        h = T.relu(_dense(win, w, b))
        # padding positions must look like zero padding to the next layer
        h = T.mul(h, T.const(np.repeat(mask.reshape(-1, 1), h.shape[1], axis=1), dtype))
        x = T.reshape(h, (B, L, h.shape[1]))
    pooled = T.masked_pool_time(x, lengths, params.pooling)
    pooled = T.dropout(pooled, dropout, train, rng)
    return T.relu(_dense(pooled, params.H, params.bH))


# -- label encoder ------------------------------------------------------


class LabelEncoderParams:
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, prefix: str = "label", dtype=np.float32):
        self.W = _param(rng, f"{prefix}.W", cfg.embedding_dim, cfg.hidden_size, dtype)
        self.b = _bias(f"{prefix}.b", cfg.hidden_size, dtype)

    def parameters(self) -> list[Parameter]:
        return [self.W, self.b]


def encode_labels(
    params: LabelEncoderParams,
    table: EmbeddingTable,
    labels: Sequence[Sequence[str]],
    dropout: float = 0.0,
    train: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """``tanh(W_l . sum(embeddings) + b_l)`` for each label, as rows."""
    dtype = params.W.dtype
    sums = np.stack([table.sum_vectors(list(l), dtype) for l in labels])
    x = T.dropout(T.const(sums, dtype), dropout, train, rng)
    return T.tanh(_dense(x, params.W, params.b))


def encode_label(params: LabelEncoderParams, table: EmbeddingTable, tokens: Sequence[str]) -> Tensor:
    return T.reshape(encode_labels(params, table, [tokens]), (params.b.shape[0],))


# -- graph matrices -----------------------------------------------------


def node_tokens(n: Node, kb) -> tuple[str, ...]:
    if n.kind == Q:
        return (QNODE,)
    if n.kind == VAR:
        return (VARNODE,)
    if n.kind == SORT:
        return (ARGMAX_TOKEN if n.ref == ARGMAX else ARGMIN_TOKEN,)
    return tuple(tokenize(kb.label(n.ref)))


def relation_tokens(rel: str, kb) -> tuple[str, ...]:
    return tuple(tokenize(kb.relation(rel).label))


@dataclass
class GraphMatrices:
    """Structure of one graph: nodes (q first), relation types and typed edges.

    ``edges`` holds ``(source, target, relation)`` index triples.  The dense
    adjacency ``A`` (``|V| x 2|V|``) and relation incidence ``A_rel``
    (``|V| x 2|R|``) are derived from it; the first half of each records
    incoming edges, the second half outgoing ones.
    """

    nodes: list[Node]
    relations: list[str]
    node_labels: list[tuple[str, ...]]
    relation_labels: list[tuple[str, ...]]
    edges: list[tuple[int, int, int]]
    q_index: int = 0

    @property
    def A(self) -> np.ndarray:
        n = len(self.nodes)
        a = np.zeros((n, 2 * n))
        for s, t, _ in self.edges:
            a[t, s] += 1
            a[s, n + t] += 1
        return a

    @property
    def A_rel(self) -> np.ndarray:
        n, r = len(self.nodes), len(self.relations)
        a = np.zeros((n, 2 * r))
        for s, t, k in self.edges:
            a[t, k] += 1
            a[s, r + k] += 1
        return a

    def permuted(self, node_perm: Sequence[int], rel_perm: Sequence[int]) -> "GraphMatrices":
        """Reorder nodes/relations: new position ``i`` holds old ``perm[i]``."""
        n_inv = {old: new for new, old in enumerate(node_perm)}
        r_inv = {old: new for new, old in enumerate(rel_perm)}
        return GraphMatrices(
            nodes=[self.nodes[i] for i in node_perm],
            relations=[self.relations[i] for i in rel_perm],
            node_labels=[self.node_labels[i] for i in node_perm],
            relation_labels=[self.relation_labels[i] for i in rel_perm],
            edges=[(n_inv[s], n_inv[t], r_inv[k]) for s, t, k in self.edges],
            q_index=n_inv[self.q_index],
        )


def build_graph_matrices(g: SemanticGraph, kb) -> GraphMatrices:
    """Index a graph for the GNN encoders.

    A qualifier ``(r2, e2)`` on any edge becomes an extra ``r2``-typed edge
    from ``e2`` into the q-node.
    """
    nodes = g.nodes()
    if not nodes:
        raise ValueError("cannot encode an empty graph")
    node_idx = {n: i for i, n in enumerate(nodes)}
    rels: dict[str, int] = {}
    edges = []
    for e in g.edges:
        k = rels.setdefault(e.relation, len(rels))
        edges.append((node_idx[e.source], node_idx[e.target], k))
        if e.qualifier is not None:
            r2, val = e.qualifier
            k2 = rels.setdefault(r2, len(rels))
            edges.append((node_idx[val], node_idx[nodes[0]], k2))
    rel_list = list(rels)
    return GraphMatrices(
        nodes=nodes,
        relations=rel_list,
        node_labels=[node_tokens(n, kb) for n in nodes],
        relation_labels=[relation_tokens(r, kb) for r in rel_list],
        edges=edges,
        q_index=0,
    )


# -- graph neural networks ----------------------------------------------


class GgnnParams:
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, prefix: str = "ggnn", dtype=np.float32, gated: bool = True):
        d = cfg.hidden_size
        self.gated = gated
        self.W_fwd = _param(rng, f"{prefix}.W_fwd", d, d, dtype)
        self.W_bwd = _param(rng, f"{prefix}.W_bwd", d, d, dtype)
        if gated:
            self.Wz = _param(rng, f"{prefix}.Wz", d, d, dtype)
            self.Uz = _param(rng, f"{prefix}.Uz", d, d, dtype)
            self.bz = _bias(f"{prefix}.bz", d, dtype)
            self.Wr = _param(rng, f"{prefix}.Wr", d, d, dtype)
            self.Ur = _param(rng, f"{prefix}.Ur", d, d, dtype)
            self.br = _bias(f"{prefix}.br", d, dtype)
        self.W = _param(rng, f"{prefix}.W", d, d, dtype)
        self.U = _param(rng, f"{prefix}.U", d, d, dtype)
        self.b = _bias(f"{prefix}.b", d, dtype)
        self.W_out = _param(rng, f"{prefix}.W_out", d, d, dtype)
        self.b_out = _bias(f"{prefix}.b_out", d, dtype)

    def parameters(self) -> list[Parameter]:
        names = ["W_fwd", "W_bwd"]
        if self.gated:
            names += ["Wz", "Uz", "bz", "Wr", "Ur", "br"]
        names += ["W", "U", "b", "W_out", "b_out"]
        return [getattr(self, n) for n in names]


def GnnParams(cfg: ModelConfig, rng: np.random.Generator, prefix: str = "gnn", dtype=np.float32) -> GgnnParams:
    return GgnnParams(cfg, rng, prefix, dtype, gated=False)


def graph_encode(
    params: GgnnParams,
    label_params: LabelEncoderParams,
    table: EmbeddingTable,
    mats: Sequence[GraphMatrices],
    steps: int = 5,
    dropout: float = 0.0,
    train: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Run the (gated) propagation on a batch of graphs; returns ``(G, hidden)``.

    Per step, node ``v`` gathers
    ``a_v = sum_in h_u + sum_out h_u + sum_in W_bwd h_r + sum_out W_fwd h_r``
    and is updated by the GRU-style gates (or by ``tanh(W a + U h + b)``
    when ungated).  Relation vectors stay fixed across steps.
    """
    labels: dict[tuple[str, ...], int] = {}
    node_lab, rel_lab, q_rows = [], [], []
    src, dst, rel_ids = [], [], []
    n_off = r_off = 0
    for m in mats:
        node_lab += [labels.setdefault(l, len(labels)) for l in m.node_labels]
        rel_lab += [labels.setdefault(l, len(labels)) for l in m.relation_labels]
        for s, t, k in m.edges:
            src.append(s + n_off)
            dst.append(t + n_off)
            rel_ids.append(k + r_off)
        q_rows.append(m.q_index + n_off)
        n_off += len(m.nodes)
        r_off += len(m.relations)
    N, R = n_off, r_off
    lab_vecs = encode_labels(label_params, table, list(labels), dropout, train, rng)
    H = T.take(lab_vecs, node_lab)
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    rel_ids = np.asarray(rel_ids, dtype=np.int64)
    # incoming edges carry the backward-direction embedding, outgoing the forward one
    msg_src = np.concatenate([src, dst])
    msg_dst = np.concatenate([dst, src])
    if len(rel_ids):
        rel_vecs = T.take(lab_vecs, rel_lab)
        directional = T.concat([T.matmul(rel_vecs, params.W_bwd), T.matmul(rel_vecs, params.W_fwd)], axis=0)
        rel_msg = T.index_add(T.take(directional, np.concatenate([rel_ids, rel_ids + R])), msg_dst, N)
    else:
        rel_msg = T.const(np.zeros((N, params.b.shape[0]), dtype=params.b.dtype))
    for _ in range(steps):
        if len(msg_src):
            a = T.add(T.gather_sum(H, msg_src, msg_dst, N), rel_msg)
        else:
            a = rel_msg
        if params.gated:
            z = T.sigmoid(T.add(T.add(T.matmul(a, params.Wz), T.matmul(H, params.Uz)), params.bz))
            r = T.sigmoid(T.add(T.add(T.matmul(a, params.Wr), T.matmul(H, params.Ur)), params.br))
            cand = T.tanh(T.add(T.add(T.matmul(a, params.W), T.matmul(T.mul(r, H), params.U)), params.b))
            H = T.add(H, T.mul(z, T.sub(cand, H)))
        else:
            H = T.tanh(T.add(T.add(T.matmul(a, params.W), T.matmul(H, params.U)), params.b))
    hq = T.dropout(T.take(H, q_rows), dropout, train, rng)
    return T.relu(_dense(hq, params.W_out, params.b_out))


def ggnn_encode(params, label_params, table, mats, steps=5, **kw) -> Tensor:
    if not params.gated:
        raise ValueError("ggnn_encode needs gated parameters")
    return graph_encode(params, label_params, table, mats, steps, **kw)


def gnn_encode(params, label_params, table, mats, steps=5, **kw) -> Tensor:
    if params.gated:
        raise ValueError("gnn_encode needs ungated parameters")
    return graph_encode(params, label_params, table, mats, steps, **kw)


# -- edge-label baselines -----------------------------------------------

_KIND_ORDER = {VAR: 0, ENTITY: 1, SORT: 1}


def edge_tokens(e: GraphEdge, kb) -> tuple[str, ...]:
    """Relation label followed by the labels of its non-q endpoints.

    Endpoints are listed in a fixed order that ignores edge direction, so
    the edge baselines see direction only through label wording.
    """
    toks = list(relation_tokens(e.relation, kb))
    ends = sorted((n for n in (e.source, e.target) if n.kind != Q), key=lambda n: (_KIND_ORDER[n.kind], n.ref))
    for n in ends:
        toks += node_tokens(n, kb)
    if e.qualifier is not None:
        toks += relation_tokens(e.qualifier[0], kb)
        toks += node_tokens(e.qualifier[1], kb)
    return tuple(toks)


def _encode_unique(params, table, seqs, dropout, train, rng):
    uniq: dict[tuple[str, ...], int] = {}
    rows = [uniq.setdefault(s, len(uniq)) for s in seqs]
    enc = dcnn_encode(params, table, list(uniq), dropout, train, rng)
    return T.take(enc, rows)


def single_edge_encode(
    params: DcnnParams, table: EmbeddingTable, graphs: Sequence[SemanticGraph], kb,
    dropout: float = 0.0, train: bool = False, rng=None,
) -> Tensor:
    if any(not g.edges for g in graphs):
        raise ValueError("cannot encode an empty graph")
    return _encode_unique(params, table, [edge_tokens(g.edges[0], kb) for g in graphs], dropout, train, rng)


def pooled_edges_encode(
    params: DcnnParams, table: EmbeddingTable, graphs: Sequence[SemanticGraph], kb,
    dropout: float = 0.0, train: bool = False, rng=None,
) -> Tensor:
    if any(not g.edges for g in graphs):
        raise ValueError("cannot encode an empty graph")
    seqs, seg = [], []
    for i, g in enumerate(graphs):
        for e in g.edges:
            seqs.append(edge_tokens(e, kb))
            seg.append(i)
    enc = _encode_unique(params, table, seqs, dropout, train, rng)
    if params.pooling == "max":
        return T.segment_max(enc, seg, len(graphs))
    total = T.index_add(enc, seg, len(graphs))
    if params.pooling == "sum":
        return total
    counts = np.bincount(seg, minlength=len(graphs)).astype(enc.dtype)
    return T.mul(total, T.const(np.repeat((1 / counts)[:, None], enc.shape[1], axis=1), enc.dtype))


# -- reward -------------------------------------------------------------


def reward(v_q, v_g) -> float:
    """Cosine similarity of two vectors; 0 when either is the zero vector."""
    u = np.asarray(getattr(v_q, "data", v_q), dtype=np.float64)
    v = np.asarray(getattr(v_g, "data", v_g), dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"reward: shape {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return 0.0
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def batch_reward(vq_rows: Tensor, vg: Tensor) -> Tensor:
    """Differentiable cosine between matching rows."""
    return T.row_cosine(vq_rows, vg)
