"""Shared fixtures: three hand-written KBs and a tiny embedding table."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from graphqa.encoders import ModelConfig
from graphqa.kb import load_kb
from graphqa.text import EmbeddingTable


def write_jsonl(path: Path, records) -> Path:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r) + "\n")
    return path


def ent(i, label):
    return {"type": "entity", "id": i, "label": label}


def rel(i, label, date=False):
    return {"type": "relation", "id": i, "label": label, "date_valued": date}


def st(r, s, o, quals=()):
    rec = {"type": "statement", "rel": r, "subj": s, "obj": o}
    if quals:
        rec["qualifiers"] = [{"rel": qr, "val": qv} for qr, qv in quals]
    return rec


STARWARS = [
    ent("Leia", "Leia Organa"),
    ent("Alderaan", "Alderaan"),
    ent("Tatooine", "Tatooine"),
    ent("Luke", "Luke Skywalker"),
    ent("planet", "planet"),
    rel("hw", "home world"),
    rel("io", "instance of"),
    st("hw", "Leia", "Alderaan"),
    st("hw", "Luke", "Tatooine"),
    st("io", "Alderaan", "planet"),
    st("io", "Tatooine", "planet"),
    st("hw", "Luke", "Alderaan"),
]

ALBUMS = [
    ent("TSwift", "Taylor Swift"),
    ent("A1", "Taylor Swift debut"),
    ent("A2", "Fearless"),
    ent("A3", "Speak Now"),
    ent("S1", "Tim McGraw"),
    ent("album", "album"),
    ent("single", "single"),
    ent("Dixie", "Dixie Chicks"),
    rel("performer", "performer"),
    rel("io", "instance of"),
    rel("pubdate", "publication date", date=True),
    rel("haspart", "has part"),
    rel("influenced", "influenced by"),
    st("performer", "A1", "TSwift"),
    st("performer", "A2", "TSwift"),
    st("performer", "A3", "TSwift"),
    st("performer", "S1", "TSwift"),
    st("io", "A1", "album"),
    st("io", "A2", "album"),
    st("io", "A3", "album"),
    st("io", "S1", "single"),
    st("pubdate", "A1", {"date": "2006-10-24"}),
    st("pubdate", "A2", {"date": "2008-11"}),
    st("pubdate", "A3", {"date": "2010"}),
    st("pubdate", "S1", {"date": "2005-06-19"}),
    st("haspart", "Dixie", "TSwift"),
    st("influenced", "Dixie", "TSwift"),
]

FILMS = [
    ent("StarWars", "Star Wars"),
    ent("CarrieFisher", "Carrie Fisher"),
    ent("MarkHamill", "Mark Hamill"),
    ent("LeiaRole", "Princess Leia"),
    ent("LukeRole", "Luke Skywalker"),
    ent("Lucas", "George Lucas"),
    rel("cast", "cast member"),
    rel("role", "character role"),
    rel("director", "director"),
    st("cast", "StarWars", "CarrieFisher", [("role", "LeiaRole")]),
    st("cast", "StarWars", "MarkHamill", [("role", "LukeRole")]),
    st("director", "StarWars", "Lucas"),
]


@pytest.fixture
def starwars_path(tmp_path):
    return write_jsonl(tmp_path / "starwars.jsonl", STARWARS)


@pytest.fixture
def starwars(starwars_path):
    return load_kb(starwars_path)


@pytest.fixture
def albums(tmp_path):
    return load_kb(write_jsonl(tmp_path / "albums.jsonl", ALBUMS))


@pytest.fixture
def films(tmp_path):
    return load_kb(write_jsonl(tmp_path / "films.jsonl", FILMS))


VOCAB = (
    "who what was the first album of is home world planet instance leia luke organa skywalker "
    "alderaan tatooine taylor swift debut fearless speak now tim mcgraw single performer publication "
    "date has part influenced by dixie chicks star wars carrie fisher mark hamill princess george lucas "
    "cast member character role director played in"
).split()


@pytest.fixture
def table():
    rng = np.random.default_rng(7)
    return EmbeddingTable(VOCAB, rng.normal(0, 0.5, (len(VOCAB), 10)), seed=7)


@pytest.fixture
def small_cfg():
    return ModelConfig(hidden_size=12, cnn_filters=12, cnn_layers=2, steps=3, dropout=0.0, embedding_dim=10)


# -- acceptance summary ------------------------------------------------------------

ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
