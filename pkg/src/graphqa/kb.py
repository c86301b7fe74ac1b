"""In-memory knowledge base and semantic-graph execution.

The KB file is UTF-8 JSON Lines with three line kinds::

    {"type": "entity", "id": "Q1", "label": "Leia"}
    {"type": "relation", "id": "P1", "label": "home world", "date_valued": false}
    {"type": "statement", "rel": "P1", "subj": "Q1", "obj": "Q2",
     "qualifiers": [{"rel": "P2", "val": "Q3"}]}

Statement and qualifier objects of date-valued relations are written as
``{"date": "YYYY-MM-DD"}``.  Coarser dates (``YYYY`` or ``YYYY-MM``) are
normalised to the first day of the period.  Entities and relations must be
declared before any statement uses them.
"""

from __future__ import annotations

import datetime as dt
import json
import logging
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional, Union

from .semgraph import ARGMAX, ENTITY, QVAR, GraphEdge, Node, SemanticGraph

logger = logging.getLogger(__name__)

Value = Union[str, dt.date]


class KBError(ValueError):
    """Malformed KB input."""

    def __init__(self, msg: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line is not None else msg)


class DanglingIdError(KBError):
    def __init__(self, ident: str, line: Optional[int] = None):
        self.ident = ident
        super().__init__(f"unknown id {ident!r}", line)


class UnknownIdError(KeyError):
    pass


@dataclass(frozen=True)
class Relation:
    id: str
    label: str
    date_valued: bool = False


@dataclass(frozen=True)
class Statement:
    relation: str
    subject: str
    obj: Value
    qualifiers: tuple[tuple[str, Value], ...] = ()


def parse_date(s: str) -> dt.date:
    parts = s.split("-")
    try:
        if len(parts) == 1:
            return dt.date(int(parts[0]), 1, 1)
        if len(parts) == 2:
            return dt.date(int(parts[0]), int(parts[1]), 1)
        if len(parts) == 3:
            return dt.date(int(parts[0]), int(parts[1]), int(parts[2]))
    except ValueError:
        pass
    raise ValueError(f"bad date {s!r}")


def _dump_value(v: Value):
    return {"date": v.isoformat()} if isinstance(v, dt.date) else v


class KnowledgeBase:
    """Immutable indexed store of entities, relations and statements."""

    def __init__(
        self,
        entities: dict[str, str],
        relations: Iterable[Relation],
        statements: Iterable[Statement],
    ):
        self._labels = dict(entities)
        self._relations = {r.id: r for r in relations}
        for eid, label in self._labels.items():
            if not eid or not label:
                raise KBError(f"entity {eid!r} needs a non-empty id and label")
        for r in self._relations.values():
            if not r.id or not r.label:
                raise KBError(f"relation {r.id!r} needs a non-empty id and label")
        self.statements: tuple[Statement, ...] = tuple(statements)
        for st in self.statements:
            self._check_statement(st)

        self._by_subj: dict[str, list[Statement]] = defaultdict(list)
        self._by_obj: dict[str, list[Statement]] = defaultdict(list)
        self._by_subj_rel: dict[tuple[str, str], list[Statement]] = defaultdict(list)
        self._by_obj_rel: dict[tuple[str, str], list[Statement]] = defaultdict(list)
        self._by_rel: dict[str, list[Statement]] = defaultdict(list)
        self._qual_of: dict[str, set[str]] = defaultdict(set)
        self._qual_rels: set[str] = set()
        for st in self.statements:
            self._by_subj[st.subject].append(st)
            self._by_subj_rel[st.subject, st.relation].append(st)
            self._by_rel[st.relation].append(st)
            if isinstance(st.obj, str):
                self._by_obj[st.obj].append(st)
                self._by_obj_rel[st.obj, st.relation].append(st)
            for qr, qv in st.qualifiers:
                self._qual_rels.add(qr)
                if isinstance(qv, str):
                    self._qual_of[qv].add(qr)
        self._rels_of: dict[str, set[tuple[str, str]]] = defaultdict(set)
        for st in self.statements:
            self._rels_of[st.subject].add((st.relation, "out"))
            if isinstance(st.obj, str):
                self._rels_of[st.obj].add((st.relation, "in"))

    def _check_statement(self, st: Statement, line: Optional[int] = None) -> None:
        if st.relation not in self._relations:
            raise DanglingIdError(st.relation, line)
        if st.subject not in self._labels:
            raise DanglingIdError(st.subject, line)
        for rel, val in ((st.relation, st.obj), *st.qualifiers):
            if rel not in self._relations:
                raise DanglingIdError(rel, line)
            if self._relations[rel].date_valued:
                if not isinstance(val, dt.date):
                    raise KBError(f"date-valued relation {rel!r} has non-date value {val!r}", line)
            elif isinstance(val, dt.date):
                raise KBError(f"relation {rel!r} is not date-valued but has a date", line)
            elif val not in self._labels:
                raise DanglingIdError(val, line)

    # -- lookups -------------------------------------------------------

    @property
    def entities(self) -> list[str]:
        return list(self._labels)

    @property
    def relations(self) -> list[Relation]:
        return list(self._relations.values())

    def label(self, eid: str) -> str:
        try:
            return self._labels[eid]
        except KeyError:
            raise UnknownIdError(eid) from None

    def has_entity(self, eid: str) -> bool:
        return eid in self._labels

    def relation(self, rid: str) -> Relation:
        try:
            return self._relations[rid]
        except KeyError:
            raise UnknownIdError(rid) from None

    def relations_of(self, e: str) -> set[tuple[str, str]]:
        """``(relation, "out"|"in")`` pairs for statements with ``e`` as subject/object."""
        self.label(e)
        return set(self._rels_of.get(e, ()))

    def qualifier_relations_of(self, e: str) -> set[str]:
        """Qualifier relations under which ``e`` appears as a qualifier value."""
        self.label(e)
        return set(self._qual_of.get(e, ()))

    @property
    def qualifier_relations(self) -> set[str]:
        return set(self._qual_rels)

    def date_relations(self) -> set[str]:
        return {r.id for r in self._relations.values() if r.date_valued}

    def statements_touching(self, e: str) -> list[Statement]:
        return self._by_subj.get(e, []) + self._by_obj.get(e, [])

    def find(
        self, relation: Optional[str] = None, subject: Optional[str] = None, obj: Optional[Value] = None
    ) -> list[Statement]:
        """Statements matching every given field (indexed where possible)."""
        if subject is not None and relation is not None:
            cands = self._by_subj_rel.get((subject, relation), [])
        elif isinstance(obj, str) and relation is not None:
            cands = self._by_obj_rel.get((obj, relation), [])
        elif subject is not None:
            cands = self._by_subj.get(subject, [])
        elif isinstance(obj, str):
            cands = self._by_obj.get(obj, [])
        elif relation is not None:
            cands = self._by_rel.get(relation, [])
        else:
            cands = self.statements
        return [
            s
            for s in cands
            if (relation is None or s.relation == relation)
            and (subject is None or s.subject == subject)
            and (obj is None or s.obj == obj)
        ]

    def __repr__(self) -> str:
        return f"KnowledgeBase(|E|={len(self._labels)}, |R|={len(self._relations)}, |I|={len(self.statements)})"

    # -- execution -----------------------------------------------------

    def evaluate_graph(self, g: SemanticGraph) -> set[str]:
        """Entities that can stand in for ``q`` so that every edge holds."""
        if not g.edges:
            return set()
        for e in g.edges:
            self.relation(e.relation)
            if e.qualifier is not None:
                self.relation(e.qualifier[0])
            for n in e.nodes():
                if n.kind == ENTITY:
                    self.label(n.ref)
        main = [e for e in g.edges if not e.is_sort]
        sorts = [e for e in g.edges if e.is_sort]
        if main:
            cands = {b[QVAR] for b in self._bindings(main) if QVAR in b}
        else:
            cands = set(self._labels)
        for e in sorts:
            cands = self._apply_sort(cands, e.relation, e.target.ref == ARGMAX)
        return cands

    def _apply_sort(self, cands: set[str], rel: str, take_max: bool) -> set[str]:
        best: dict[str, dt.date] = {}
        for c in cands:
            vals = [s.obj for s in self._by_subj_rel.get((c, rel), ())]
            if vals:
                best[c] = max(vals) if take_max else min(vals)
        if not best:
            return set()
        target = max(best.values()) if take_max else min(best.values())
        return {c for c, v in best.items() if v == target}

    def _bindings(self, edges: list[GraphEdge]) -> list[dict[Node, str]]:
        remaining = list(edges)
        bindings: list[dict[Node, str]] = [{}]
        while remaining and bindings:
            bound = set(bindings[0])
            # prefer edges touching a constant or an already-bound variable
            def rank(e: GraphEdge) -> int:
                return -sum(n.kind == ENTITY or n in bound for n in (e.source, e.target))

            edge = min(remaining, key=rank)
            remaining.remove(edge)
            out = {}
            for b in bindings:
                for nb in self._extend(b, edge):
                    out.setdefault(tuple(sorted(nb.items())), nb)
            bindings = list(out.values())
        return bindings

    def _extend(self, b: dict[Node, str], e: GraphEdge) -> Iterator[dict[Node, str]]:
        def resolve(n: Node) -> Optional[str]:
            return n.ref if n.kind == ENTITY else b.get(n)

        s_val, o_val = resolve(e.source), resolve(e.target)
        for st in self.find(e.relation, s_val, o_val):
            if not isinstance(st.obj, str):
                continue
            if e.qualifier is not None:
                qr, qn = e.qualifier
                if (qr, qn.ref) not in st.qualifiers:
                    continue
            nb = dict(b)
            if s_val is None:
                nb[e.source] = st.subject
            if o_val is None:
                if e.target in nb and nb[e.target] != st.obj:
                    continue
                nb[e.target] = st.obj
            yield nb

    # -- io ------------------------------------------------------------

    def to_records(self) -> list[dict]:
        recs = [{"type": "entity", "id": e, "label": l} for e, l in self._labels.items()]
        recs += [
            {"type": "relation", "id": r.id, "label": r.label, "date_valued": r.date_valued}
            for r in self._relations.values()
        ]
        for st in self.statements:
            rec = {"type": "statement", "rel": st.relation, "subj": st.subject, "obj": _dump_value(st.obj)}
            if st.qualifiers:
                rec["qualifiers"] = [{"rel": r, "val": _dump_value(v)} for r, v in st.qualifiers]
            recs.append(rec)
        return recs

    def save(self, path: Union[str, Path]) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.to_records():
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def _parse_value(raw, line: int) -> Value:
    if isinstance(raw, dict):
        if set(raw) != {"date"}:
            raise KBError(f"bad value object {raw!r}", line)
        try:
            return parse_date(raw["date"])
        except (ValueError, TypeError) as exc:
            raise KBError(str(exc), line) from None
    if not isinstance(raw, str) or not raw:
        raise KBError(f"bad value {raw!r}", line)
    return raw


def load_kb(path: Union[str, Path]) -> KnowledgeBase:
    """Read and index a JSON Lines KB file."""
    labels: dict[str, str] = {}
    relations: dict[str, Relation] = {}
    statements: list[Statement] = []
    probe = KnowledgeBase({}, [], [])
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            if not raw.strip():
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise KBError(f"invalid JSON ({exc.msg})", lineno) from None
            kind = rec.get("type") if isinstance(rec, dict) else None
            try:
                if kind == "entity":
                    eid, label = rec["id"], rec["label"]
                    if not eid or not label:
                        raise KBError("entity needs non-empty id and label", lineno)
                    if eid in labels:
                        raise KBError(f"duplicate entity {eid!r}", lineno)
                    labels[eid] = label
                elif kind == "relation":
                    rid, label = rec["id"], rec["label"]
                    if not rid or not label:
                        raise KBError("relation needs non-empty id and label", lineno)
                    if rid in relations:
                        raise KBError(f"duplicate relation {rid!r}", lineno)
                    relations[rid] = Relation(rid, label, bool(rec.get("date_valued", False)))
                elif kind == "statement":
                    quals = tuple(
                        (q["rel"], _parse_value(q["val"], lineno)) for q in rec.get("qualifiers", ())
                    )
                    st = Statement(rec["rel"], rec["subj"], _parse_value(rec["obj"], lineno), quals)
                    probe._labels, probe._relations = labels, relations
                    probe._check_statement(st, lineno)
                    statements.append(st)
                else:
                    raise KBError(f"unknown line type {kind!r}", lineno)
            except KeyError as exc:
                raise KBError(f"missing field {exc.args[0]!r}", lineno) from None
    kb = KnowledgeBase(labels, relations.values(), statements)
    logger.info("loaded %s entities, %s relations, %s statements", len(labels), len(relations), len(statements))
    return kb
