"""Semantic graphs and their staged construction.

A semantic graph is a conjunction of KB relations around a single answer
variable ``q``.  Graphs are built step by step from a question's linked
entities by three actions: add an entity edge (optionally via a two-step
path through an intermediate variable), qualify the last edge with a
modifier, and add an argmax/argmin date constraint.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Optional

if TYPE_CHECKING:
    from .kb import KnowledgeBase

Q = "q"
ENTITY = "ent"
VAR = "var"
SORT = "sort"
ARGMAX = "argmax"
ARGMIN = "argmin"

DEFAULT_MAX_EDGES = 4
DEFAULT_MAX_PATHS = 100


class GraphError(ValueError):
    """Raised for malformed semantic graphs."""


@dataclass(frozen=True, order=True)
class Node:
    kind: str
    ref: str = ""

    @property
    def index(self) -> int:
        if self.kind != VAR:
            raise GraphError(f"{self} is not an intermediate node")
        return int(self.ref)

    def __str__(self) -> str:
        if self.kind == Q:
            return "?q"
        if self.kind == VAR:
            return f"?v{self.ref}"
        if self.kind == SORT:
            return self.ref.upper()
        return self.ref


QVAR = Node(Q)


def entity(eid: str) -> Node:
    return Node(ENTITY, eid)


def var(i: int) -> Node:
    return Node(VAR, str(i))


def sort_node(kind: str) -> Node:
    if kind not in (ARGMAX, ARGMIN):
        raise GraphError(f"unknown sort kind {kind!r}")
    return Node(SORT, kind)


@dataclass(frozen=True)
class GraphEdge:
    """``relation(source, target)``, optionally qualified as a ternary edge."""

    relation: str
    source: Node
    target: Node
    qualifier: Optional[tuple[str, Node]] = None

    @property
    def is_sort(self) -> bool:
        return self.target.kind == SORT

    def nodes(self) -> tuple[Node, ...]:
        if self.qualifier is None:
            return (self.source, self.target)
        return (self.source, self.target, self.qualifier[1])

    def render(self, rename: Optional[dict[Node, Node]] = None) -> str:
        rn = rename or {}
        s = f"{self.relation}({rn.get(self.source, self.source)},{rn.get(self.target, self.target)})"
        if self.qualifier is not None:
            s += f"[{self.qualifier[0]}={self.qualifier[1]}]"
        return s

    def flipped(self) -> "GraphEdge":
        return GraphEdge(self.relation, self.target, self.source, self.qualifier)


@dataclass(frozen=True)
class SemanticGraph:
    edges: tuple[GraphEdge, ...] = ()

    def __len__(self) -> int:
        return len(self.edges)

    def __bool__(self) -> bool:
        return bool(self.edges)

    @property
    def last_edge(self) -> Optional[GraphEdge]:
        return self.edges[-1] if self.edges else None

    def nodes(self) -> list[Node]:
        """Nodes in order of first appearance, ``q`` first."""
        seen: dict[Node, None] = {}
        if self.edges:
            seen[QVAR] = None
        for e in self.edges:
            for n in e.nodes():
                seen.setdefault(n, None)
        return list(seen)

    def grounded_entities(self) -> set[str]:
        return {n.ref for n in self.nodes() if n.kind == ENTITY}

    def intermediates(self) -> list[Node]:
        return [n for n in self.nodes() if n.kind == VAR]

    def has_sort(self) -> bool:
        return any(e.is_sort for e in self.edges)

    def relations(self) -> set[str]:
        rels = set()
        for e in self.edges:
            rels.add(e.relation)
            if e.qualifier is not None:
                rels.add(e.qualifier[0])
        return rels

    def n_relations(self) -> int:
        """Edge count with each qualifier counted as one extra relation."""
        return sum(1 + (e.qualifier is not None) for e in self.edges)

    def with_edges(self, *new: GraphEdge) -> "SemanticGraph":
        return SemanticGraph(self.edges + tuple(new))

    def validate(self, kb: Optional["KnowledgeBase"] = None, max_edges: Optional[int] = None) -> None:
        """Raise GraphError unless the graph is well formed."""
        if max_edges is not None and len(self.edges) > max_edges:
            raise GraphError(f"{len(self.edges)} edges exceed max_edges={max_edges}")
        if not self.edges:
            return
        nodes = self.nodes()
        if QVAR not in {n for e in self.edges for n in (e.source, e.target)}:
            raise GraphError("q-node missing")
        idx = sorted(n.index for n in nodes if n.kind == VAR)
        if idx != list(range(len(idx))):
            raise GraphError(f"intermediate indices not dense: {idx}")
        n_sort = 0
        for e in self.edges:
            if e.source == e.target:
                raise GraphError(f"self loop in {e.render()}")
            if e.source.kind == SORT:
                raise GraphError(f"sort node used as source in {e.render()}")
            if e.is_sort:
                n_sort += 1
                if e.source != QVAR:
                    raise GraphError("sort constraints attach to the q-node only")
                if e.qualifier is not None:
                    raise GraphError("sort edges take no qualifier")
                if kb is not None and not kb.relation(e.relation).date_valued:
                    raise GraphError(f"sort edge on non-date relation {e.relation}")
            if e.qualifier is not None and e.qualifier[1].kind != ENTITY:
                raise GraphError("qualifier values must be grounded entities")
            if kb is not None:
                kb.relation(e.relation)
                if e.qualifier is not None:
                    kb.relation(e.qualifier[0])
                for n in e.nodes():
                    if n.kind == ENTITY:
                        kb.label(n.ref)
        if n_sort > 1:
            raise GraphError("at most one sort constraint per graph")
        # connectivity over main-edge endpoints; qualifier values hang off their edge
        adj: dict[Node, set[Node]] = {}
        for e in self.edges:
            adj.setdefault(e.source, set()).add(e.target)
            adj.setdefault(e.target, set()).add(e.source)
        seen = {QVAR}
        stack = [QVAR]
        while stack:
            for m in adj.get(stack.pop(), ()):
                if m not in seen:
                    seen.add(m)
                    stack.append(m)
        if seen != set(adj):
            raise GraphError("graph is not connected to the q-node")


def canonical_form(g: SemanticGraph) -> str:
    """Deterministic string key for a graph.

    All edges except the last are sorted; the last edge keeps its position
    because qualifier actions attach to it.  Intermediate variables are
    renamed to the numbering that gives the smallest string.
    """
    if not g.edges:
        return ""
    vars_ = g.intermediates()
    best = None
    for perm in itertools.permutations(range(len(vars_))):
        rename = {v: var(p) for v, p in zip(vars_, perm)}
        head = sorted(e.render(rename) for e in g.edges[:-1])
        s = " & ".join(head + [g.edges[-1].render(rename)])
        if best is None or s < best:
            best = s
    return best


@dataclass(frozen=True)
class LinkedQuestion:
    utterance: str
    entities: tuple[str, ...] = ()
    answers: Optional[frozenset[str]] = None
    id: str = ""
    n_relations: Optional[int] = None

    @classmethod
    def from_record(cls, rec: dict, default_id: str = "") -> "LinkedQuestion":
        answers = rec.get("answers")
        return cls(
            utterance=rec["utterance"],
            entities=tuple(rec.get("entities", ())),
            answers=frozenset(answers) if answers is not None else None,
            id=str(rec.get("id", default_id)),
            n_relations=rec.get("relations"),
        )

    def to_record(self) -> dict:
        rec = {"id": self.id, "utterance": self.utterance, "entities": list(self.entities)}
        if self.answers is not None:
            rec["answers"] = sorted(self.answers)
        if self.n_relations is not None:
            rec["relations"] = self.n_relations
        return rec


@dataclass(frozen=True)
class ConstructionState:
    graph: SemanticGraph = field(default_factory=SemanticGraph)
    free: tuple[str, ...] = ()

    def key(self) -> tuple[str, tuple[str, ...]]:
        return canonical_form(self.graph), self.free


def initial_state(q: LinkedQuestion) -> ConstructionState:
    return ConstructionState(SemanticGraph(), tuple(dict.fromkeys(q.entities)))


def _two_step_paths(kb: "KnowledgeBase", e: str, limit: int) -> list[tuple[str, bool, str, bool]]:
    """Relation pairs realised in the KB on some path q - d - e.

    Each tuple is ``(r_qd, q_is_subject, r_de, d_is_subject)``.
    """
    paths = set()
    for s1 in kb.statements_touching(e):
        rel1 = kb.relation(s1.relation)
        if rel1.date_valued:
            continue
        d = s1.obj if s1.subject == e else s1.subject
        if d == e:
            continue
        d_is_subject = s1.subject == d
        for s2 in kb.statements_touching(d):
            if s2 is s1 or kb.relation(s2.relation).date_valued:
                continue
            other = s2.obj if s2.subject == d else s2.subject
            if other == d or other == e:
                continue
            paths.add((s2.relation, s2.subject == other, s1.relation, d_is_subject))
    return sorted(paths)[:limit]


def add_entity_action(
    s: ConstructionState,
    kb: "KnowledgeBase",
    max_edges: int = DEFAULT_MAX_EDGES,
    max_paths: int = DEFAULT_MAX_PATHS,
) -> list[ConstructionState]:
    out = []
    for e in s.free:
        rest = tuple(f for f in s.free if f != e)
        en = entity(e)
        if len(s.graph) + 1 <= max_edges:
            for rel, direction in sorted(kb.relations_of(e)):
                if direction == "out":
                    if kb.relation(rel).date_valued:
                        continue  # q would bind to a date
                    edge = GraphEdge(rel, en, QVAR)
                else:
                    edge = GraphEdge(rel, QVAR, en)
                out.append(ConstructionState(s.graph.with_edges(edge), rest))
        if len(s.graph) + 2 <= max_edges:
            d = var(len(s.graph.intermediates()))
            for r_qd, q_subj, r_de, d_subj in _two_step_paths(kb, e, max_paths):
                e1 = GraphEdge(r_de, d, en) if d_subj else GraphEdge(r_de, en, d)
                e2 = GraphEdge(r_qd, QVAR, d) if q_subj else GraphEdge(r_qd, d, QVAR)
                out.append(ConstructionState(s.graph.with_edges(e1, e2), rest))
    return out


def add_constraint_action(s: ConstructionState, kb: "KnowledgeBase") -> list[ConstructionState]:
    last = s.graph.last_edge
    if last is None or not s.free or last.qualifier is not None or last.is_sort:
        return []
    out = []
    head = s.graph.edges[:-1]
    for e2 in s.free:
        rest = tuple(f for f in s.free if f != e2)
        for r2 in sorted(kb.qualifier_relations_of(e2)):
            edge = GraphEdge(last.relation, last.source, last.target, (r2, entity(e2)))
            out.append(ConstructionState(SemanticGraph(head + (edge,)), rest))
    return out


def add_sort_action(
    s: ConstructionState, kb: "KnowledgeBase", max_edges: int = DEFAULT_MAX_EDGES
) -> list[ConstructionState]:
    if not s.graph or s.graph.has_sort() or len(s.graph) + 1 > max_edges:
        return []
    out = []
    for rel in sorted(kb.date_relations()):
        for kind in (ARGMAX, ARGMIN):
            edge = GraphEdge(rel, QVAR, sort_node(kind))
            out.append(ConstructionState(s.graph.with_edges(edge), s.free))
    return out


def expand(
    s: ConstructionState,
    kb: "KnowledgeBase",
    max_edges: int = DEFAULT_MAX_EDGES,
    max_paths: int = DEFAULT_MAX_PATHS,
) -> list[ConstructionState]:
    """All distinct successor states, sorted by canonical form."""
    found: dict[tuple, ConstructionState] = {}
    for succ in itertools.chain(
        add_entity_action(s, kb, max_edges, max_paths),
        add_constraint_action(s, kb),
        add_sort_action(s, kb, max_edges),
    ):
        found.setdefault(succ.key(), succ)
    return [found[k] for k in sorted(found)]


def enumerate_states(
    q: LinkedQuestion,
    kb: "KnowledgeBase",
    max_edges: int = DEFAULT_MAX_EDGES,
    max_paths: int = DEFAULT_MAX_PATHS,
    max_states: Optional[int] = None,
) -> list[ConstructionState]:
    """Every non-empty state reachable from the initial state (breadth first)."""
    seen: dict[tuple, ConstructionState] = {}
    frontier = [initial_state(q)]
    while frontier:
        nxt = []
        for st in frontier:
            for succ in expand(st, kb, max_edges, max_paths):
                k = succ.key()
                if k not in seen:
                    seen[k] = succ
                    nxt.append(succ)
                    if max_states is not None and len(seen) >= max_states:
                        return list(seen.values())
        frontier = nxt
    return list(seen.values())


def unique_graphs(states: Iterable[ConstructionState]) -> list[SemanticGraph]:
    out: dict[str, SemanticGraph] = {}
    for st in states:
        out.setdefault(canonical_form(st.graph), st.graph)
    return [out[k] for k in sorted(out)]


def graph_to_json(g: SemanticGraph) -> list:
    """Plain-list encoding: ``[[rel, [kind, ref], [kind, ref], qualifier|None], ...]``."""
    out = []
    for e in g.edges:
        q = None if e.qualifier is None else [e.qualifier[0], [e.qualifier[1].kind, e.qualifier[1].ref]]
        out.append([e.relation, [e.source.kind, e.source.ref], [e.target.kind, e.target.ref], q])
    return out


def graph_from_json(data: list) -> SemanticGraph:
    edges = []
    for rel, src, tgt, q in data:
        qual = None if q is None else (q[0], Node(*q[1]))
        edges.append(GraphEdge(rel, Node(*src), Node(*tgt), qual))
    return SemanticGraph(tuple(edges))
