"""Seeded synthetic KB and template-question corpus.

The KB has families (a ``father`` relation in both directions), places,
films with qualified cast statements, albums, and two date-valued
relations.  Questions come from templates of one to three relations; many
differ only in the direction of a relation, which models that ignore graph
structure cannot separate.
"""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .kb import KnowledgeBase, Relation, Statement
from .semgraph import LinkedQuestion
from .text import EmbeddingTable, tokenize

RELATIONS = [
    Relation("P19", "place of birth"),
    Relation("P17", "country"),
    Relation("P36", "capital"),
    Relation("P22", "father"),
    Relation("P57", "director"),
    Relation("P161", "cast member"),
    Relation("P175", "performer"),
    Relation("P31", "instance of"),
    Relation("P136", "genre"),
    Relation("P453", "character role"),
    Relation("P577", "publication date", date_valued=True),
    Relation("P569", "date of birth", date_valued=True),
]

_CONS = "bcdfghjklmnprstvz"
_VOWELS = "aeiou"

# template id -> (relation count, phrasings)
TEMPLATES = {
    "father": (1, ["who is the father of {p}", "who is {p} s father", "name the father of {p}"]),
    "children": (1, ["who are the children of {p}", "who is a child of {p}", "name the kids of {p}"]),
    "birthplace": (1, ["where was {p} born", "what is the birth place of {p}", "in which city was {p} born"]),
    "director": (1, ["who directed {f}", "who is the director of {f}", "who made the film {f}"]),
    "performer": (1, ["who performed {a}", "who is the performer of {a}", "which artist recorded {a}"]),
    "city_country": (1, ["which country is {c} in", "in what country is {c}"]),
    "capital": (1, ["what is the capital of {k}", "which city is the capital of {k}"]),
    "films_by": (2, ["which films did {p} direct", "what films were directed by {p}"]),
    "birth_country": (2, ["in which country was {p} born", "what country was {p} born in"]),
    "role": (2, ["who played {ch} in {f}", "which actor played {ch} in {f}"]),
    "grandfather": (2, ["who is the grandfather of {p}", "who is {p} s grandfather"]),
    "grandchildren": (2, ["who are the grandchildren of {p}", "name the grandkids of {p}"]),
    "oldest_child": (2, ["who is the oldest child of {p}", "who is the first born child of {p}"]),
    "youngest_child": (2, ["who is the youngest child of {p}", "who is the last born child of {p}"]),
    "first_album": (3, ["what was the first album of {p}", "what is the earliest album by {p}"]),
    "latest_film": (3, ["what is the latest film directed by {p}", "what was the most recent film by {p}"]),
    "oldest_grandchild": (3, ["who is the oldest grandchild of {p}", "who is the first born grandchild of {p}"]),
}


@dataclass
class Corpus:
    kb: KnowledgeBase
    questions: list[LinkedQuestion]
    embeddings: EmbeddingTable

    def split(self, train_fraction: float = 0.8, seed: int = 0):
        rng = np.random.default_rng(seed)
        idx = rng.permutation(len(self.questions))
        n = int(round(len(idx) * train_fraction))
        return [self.questions[i] for i in sorted(idx[:n])], [self.questions[i] for i in sorted(idx[n:])]

    def write(self, out_dir: Union[str, Path], train_fraction: float = 0.8, seed: int = 0) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {k: out / f for k, f in [("kb", "kb.jsonl"), ("embeddings", "embeddings.txt"),
                                        ("train", "train.jsonl"), ("test", "test.jsonl")]}
        self.kb.save(paths["kb"])
        self.embeddings.save(paths["embeddings"])
        tr, te = self.split(train_fraction, seed)
        for key, qs in (("train", tr), ("test", te)):
            with open(paths[key], "w") as fh:
                for q in qs:
                    fh.write(json.dumps(q.to_record()) + "\n")
        return paths


class _Builder:
    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.labels: dict[str, str] = {}
        self.statements: list[Statement] = []
        self.words: set[str] = set()

    def word(self, syllables: int) -> str:
        while True:
            w = "".join(self.rng.choice(list(_CONS)) + self.rng.choice(list(_VOWELS)) for _ in range(syllables))
            if w not in self.words:
                self.words.add(w)
                return w

    def entity(self, label: str) -> str:
        eid = f"E{len(self.labels)}"
        self.labels[eid] = label
        return eid

    def add(self, rel, s, o, quals=()):
        self.statements.append(Statement(rel, s, o, tuple(quals)))

    def date(self, lo: int, hi: int) -> dt.date:
        return dt.date(int(self.rng.integers(lo, hi)), int(self.rng.integers(1, 13)), int(self.rng.integers(1, 29)))


def generate_corpus(n_questions: int = 300, seed: int = 0, n_families: int = 8) -> Corpus:
    rng = np.random.default_rng(seed)
    b = _Builder(rng)
    cls = {name: b.entity(name) for name in ("human", "film", "album", "city", "country")}

    countries = [b.entity(b.word(3)) for _ in range(6)]
    cities = []
    for k in countries:
        for i in range(3):
            c = b.entity(b.word(2) + " " + b.word(1))
            cities.append(c)
            b.add("P17", c, k)
            b.add("P31", c, cls["city"])
            if i == 0:
                b.add("P36", k, c)
        b.add("P31", k, cls["country"])

    genres = [b.entity(g) for g in ("drama", "comedy", "horror", "jazz", "rock", "folk")]
    first_names = [b.word(2) for _ in range(40)]
    used_names: set[str] = set()

    def person(last: str, born: tuple[int, int]) -> str:
        while True:
            name = f"{rng.choice(first_names)} {last}"
            if name not in used_names:
                used_names.add(name)
                break
        p = b.entity(name)
        b.add("P31", p, cls["human"])
        b.add("P19", p, cities[int(rng.integers(len(cities)))])
        dob = b.date(*born)
        while any(s.relation == "P569" and s.obj == dob for s in b.statements):
            dob = b.date(*born)
        b.add("P569", p, dob)
        return p

    fathers_of: dict[str, str] = {}
    children_of: dict[str, list[str]] = {}
    gen0, gen1, gen2 = [], [], []
    for _ in range(n_families):
        last = b.word(2)
        g0 = person(last, (1900, 1930))
        gen0.append(g0)
        for _ in range(2):
            g1 = person(last, (1935, 1960))
            gen1.append(g1)
            b.add("P22", g1, g0)
            fathers_of[g1] = g0
            children_of.setdefault(g0, []).append(g1)
            for _ in range(int(rng.integers(1, 4))):
                g2 = person(last, (1965, 2000))
                gen2.append(g2)
                b.add("P22", g2, g1)
                fathers_of[g2] = g1
                children_of.setdefault(g1, []).append(g2)
    others = [person(b.word(2), (1940, 1990)) for _ in range(12)]
    people = gen0 + gen1 + gen2 + others

    characters = [b.entity(b.word(2) + " " + b.word(2)) for _ in range(20)]
    film_creators = list(rng.choice(gen1 + gen2 + others, size=12, replace=False))
    films_by: dict[str, list[str]] = {}
    films, cast_roles = [], []
    char_pool = list(characters)
    for d in film_creators:
        for _ in range(int(rng.integers(2, 4))):
            f = b.entity(b.word(2) + " " + b.word(2))
            films.append(f)
            films_by.setdefault(d, []).append(f)
            b.add("P31", f, cls["film"])
            b.add("P57", f, d)
            b.add("P136", f, genres[int(rng.integers(3))])
            b.add("P577", f, b.date(1960, 2020))
            actors = rng.choice([p for p in people if p != d], size=2, replace=False)
            for a in actors:
                ch = char_pool[int(rng.integers(len(char_pool)))]
                b.add("P161", f, str(a), [("P453", ch)])
                cast_roles.append((f, ch, str(a)))
    artists = list(rng.choice([p for p in people if p not in film_creators], size=8, replace=False))
    albums_by: dict[str, list[str]] = {}
    for a in artists:
        for _ in range(int(rng.integers(2, 4))):
            al = b.entity(b.word(2) + " " + b.word(1))
            albums_by.setdefault(a, []).append(al)
            b.add("P31", al, cls["album"])
            b.add("P175", al, a)
            b.add("P136", al, genres[3 + int(rng.integers(3))])
            b.add("P577", al, b.date(1960, 2020))

    kb = KnowledgeBase(b.labels, RELATIONS, b.statements)

    def dob(p):
        return kb.find("P569", p)[0].obj

    def pub(x):
        return kb.find("P577", x)[0].obj

    # unique (film, character) pairs only
    role_count: dict[tuple[str, str], list[str]] = {}
    for f, ch, a in cast_roles:
        role_count.setdefault((f, ch), []).append(a)
    roles = [(f, ch, a[0]) for (f, ch), a in role_count.items() if len(a) == 1]
    grandparents = [g for g in gen0]
    parents_multi = [p for p, cs in children_of.items() if len(cs) >= 2]
    grand_multi = [g for g in gen0 if sum(len(children_of.get(c, [])) for c in children_of[g]) >= 2]

    def make(tid: str):
        n_rel, phrasings = TEMPLATES[tid]
        text = phrasings[int(rng.integers(len(phrasings)))]
        pick = lambda xs: xs[int(rng.integers(len(xs)))]  # noqa: E731
        if tid == "father":
            p = pick(gen1 + gen2)
            return text.format(p=kb.label(p)), [p], {fathers_of[p]}
        if tid == "children":
            p = pick(gen0 + gen1)
            return text.format(p=kb.label(p)), [p], set(children_of[p])
        if tid == "birthplace":
            p = pick(people)
            return text.format(p=kb.label(p)), [p], {kb.find("P19", p)[0].obj}
        if tid == "director":
            f = pick(films)
            return text.format(f=kb.label(f)), [f], {kb.find("P57", f)[0].obj}
        if tid == "performer":
            a = pick([al for als in albums_by.values() for al in als])
            return text.format(a=kb.label(a)), [a], {kb.find("P175", a)[0].obj}
        if tid == "city_country":
            c = pick(cities)
            return text.format(c=kb.label(c)), [c], {kb.find("P17", c)[0].obj}
        if tid == "capital":
            k = pick(countries)
            return text.format(k=kb.label(k)), [k], {kb.find("P36", k)[0].obj}
        if tid == "films_by":
            d = pick(film_creators)
            return text.format(p=kb.label(d)), [d, cls["film"]], set(films_by[d])
        if tid == "birth_country":
            p = pick(people)
            city = kb.find("P19", p)[0].obj
            return text.format(p=kb.label(p)), [p], {kb.find("P17", city)[0].obj}
        if tid == "role":
            f, ch, a = pick(roles)
            return text.format(ch=kb.label(ch), f=kb.label(f)), [f, ch], {a}
        if tid == "grandfather":
            p = pick(gen2)
            return text.format(p=kb.label(p)), [p], {fathers_of[fathers_of[p]]}
        if tid == "grandchildren":
            g = pick(grandparents)
            return text.format(p=kb.label(g)), [g], {c2 for c in children_of[g] for c2 in children_of.get(c, [])}
        if tid in ("oldest_child", "youngest_child"):
            p = pick(parents_multi)
            f = min if tid == "oldest_child" else max
            return text.format(p=kb.label(p)), [p], {f(children_of[p], key=dob)}
        if tid == "first_album":
            a = pick(artists)
            return text.format(p=kb.label(a)), [a, cls["album"]], {min(albums_by[a], key=pub)}
        if tid == "latest_film":
            d = pick(film_creators)
            return text.format(p=kb.label(d)), [d, cls["film"]], {max(films_by[d], key=pub)}
        if tid == "oldest_grandchild":
            g = pick(grand_multi)
            gcs = [c2 for c in children_of[g] for c2 in children_of.get(c, [])]
            return text.format(p=kb.label(g)), [g], {min(gcs, key=dob)}
        raise KeyError(tid)

    tids = list(TEMPLATES)
    questions = []
    for i in range(n_questions):
        tid = tids[i % len(tids)]
        text, ents, answers = make(tid)
        questions.append(LinkedQuestion(text, tuple(ents), frozenset(answers), id=f"q{i:04d}", n_relations=TEMPLATES[tid][0]))
    order = rng.permutation(len(questions))
    questions = [questions[i] for i in order]

    vocab = set()
    for label in kb.to_records():
        if "label" in label:
            vocab.update(tokenize(label["label"]))
    for _, phr in TEMPLATES.values():
        for p in phr:
            vocab.update(tokenize(p.replace("{", "").replace("}", "")))
    words = sorted(vocab)
    vecs = np.random.default_rng(seed + 1).normal(0, 0.4, size=(len(words), 50))
    return Corpus(kb, questions, EmbeddingTable(words, vecs, seed=seed))
