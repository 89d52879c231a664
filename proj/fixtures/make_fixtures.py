#!/usr/bin/env python3
"""Regenerates the committed test fixtures.

Run from anywhere: python3 fixtures/make_fixtures.py
Outputs are deterministic; the expected_* files are written by hand and are not touched here.
"""

import json
import random
import struct
from pathlib import Path

import numpy as np

HERE = Path(__file__).resolve().parent


def write_embk(path, rows):
    """rows: list of (token, vector)."""
    dim = len(rows[0][1])
    with open(path, "wb") as f:
        f.write(b"EMBK")
        f.write(struct.pack("<III", 1, len(rows), dim))
        for token, vec in rows:
            raw = token.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<%df" % dim, *[float(x) for x in vec]))


def sentence(sid, text, spec, task="SR1"):
    tokens = []
    for i, item in enumerate(spec.split()):
        parts = item.split("/")
        surface, lemma, pos = parts[0], parts[1], parts[2]
        entity = parts[3] if len(parts) > 3 else "NONE"
        tokens.append({"surface": surface, "lemma": lemma, "pos": pos, "entity": entity, "position": i})
    return {"sentence_id": sid, "task": task, "text": text, "tokens": tokens}


def vocab6():
    out = HERE / "vocab6"
    out.mkdir(exist_ok=True)
    rows = [
        sentence("v6-1", "The film was good.", "The/the/OTHER film/film/NOUN was/be/VERB good/good/ADJ"),
        sentence("v6-2", "A movie about the river and its music.",
                 "A/a/OTHER movie/movie/NOUN about/about/OTHER the/the/OTHER river/river/NOUN and/and/OTHER "
                 "its/its/OTHER music/music/NOUN"),
        sentence("v6-3", "Good music by the river at night in 2005.",
                 "Good/good/ADJ music/music/NOUN by/by/OTHER the/the/OTHER river/river/NOUN at/at/OTHER "
                 "night/night/NOUN in/in/OTHER 2005/2005/NOUN"),
        sentence("v6-4", "The movie with Obama was bad.",
                 "The/the/OTHER movie/movie/NOUN with/with/OTHER Obama/obama/PROPN/PERSON was/be/VERB bad/bad/ADJ"),
        sentence("v6-5", "A good film in March.",
                 "A/a/OTHER good/good/ADJ film/film/NOUN in/in/OTHER March/march/PROPN/NONPERSON_ENTITY"),
        sentence("v6-6", "It was good in XIV.",
                 "It/it/OTHER was/be/VERB good/good/ADJ in/in/OTHER XIV/xiv/PROPN/NONPERSON_ENTITY"),
    ]
    with open(out / "sentences.jsonl", "w") as f:
        for r in rows:
            f.write(json.dumps(r) + "\n")
    s = 1 / np.sqrt(3)
    write_embk(out / "word_bank.embk", [
        ("film", [1, 0, 0]),
        ("movie", [0.99, 0.141, 0]),
        ("good", [0, 1, 0]),
        ("river", [0, 0, 1]),
        ("music", [s, s, s]),
        ("bad", [0, -1, 0]),
    ])


NOUNS = ["film", "river", "music", "city", "teacher", "garden", "ocean", "story"]
ADJS = ["quiet", "famous", "old", "bright", "strange"]
VERBS = [("visited", "visit"), ("described", "describe"), ("changed", "change"), ("followed", "follow"),
         ("remembered", "remember")]
MONTHS = ["January", "March", "October"]
NAMES = ["Smith", "Garcia", "Chen"]


def toy():
    rng = random.Random(3)
    rows = []
    for i in range(30):
        adj = rng.choice(ADJS)
        n1, n2 = rng.sample(NOUNS, 2)
        surf, lemma = rng.choice(VERBS)
        extra = rng.random()
        words = [("The", "the", "OTHER", "NONE"), (adj, adj, "ADJ", "NONE"), (n1, n1, "NOUN", "NONE"),
                 (surf, lemma, "VERB", "NONE"), ("the", "the", "OTHER", "NONE"), (n2, n2, "NOUN", "NONE")]
        if extra < 0.3:
            m = rng.choice(MONTHS)
            words += [("in", "in", "OTHER", "NONE"), (m, m.lower(), "PROPN", "NONPERSON_ENTITY")]
        elif extra < 0.5:
            name = rng.choice(NAMES)
            words += [("with", "with", "OTHER", "NONE"), (name, name.lower(), "PROPN", "PERSON")]
        text = " ".join(w[0] for w in words) + "."
        spec = " ".join("/".join(w) for w in words)
        rows.append(sentence("toy-%02d" % (i + 1), text, spec))
    with open(HERE / "toy.jsonl", "w") as f:
        for r in rows:
            f.write(json.dumps(r) + "\n")
    gen = np.random.default_rng(11)
    lemmas = NOUNS + ADJS + [v[1] for v in VERBS]
    bank = []
    for lemma in lemmas:
        v = gen.standard_normal(300)
        bank.append((lemma, v / np.linalg.norm(v)))
    write_embk(HERE / "word_bank.embk", bank)
    # Two anchor sequences for the remote-protocol dry run.
    anchors = [
        {"sentence_id": rows[0]["sentence_id"], "subject_id": "S01", "m": 3,
         "entries": [{"keyword_id": 0, "keyword": t["lemma"], "position": t["position"], "confidence": 0.9}
                     for t in rows[0]["tokens"] if t["pos"] in ("ADJ", "NOUN", "VERB")][:3]},
        {"sentence_id": rows[1]["sentence_id"], "subject_id": "S01", "m": 3,
         "entries": [{"keyword_id": 0, "keyword": t["lemma"], "position": t["position"], "confidence": 0.8}
                     for t in rows[1]["tokens"] if t["pos"] in ("ADJ", "NOUN", "VERB")][:3]},
    ]
    with open(HERE / "toy_anchors.jsonl", "w") as f:
        for a in anchors:
            f.write(json.dumps(a) + "\n")


def corpus_small():
    rows = [
        sentence("c-1", "Birds sing.", "Birds/bird/NOUN sing/sing/VERB"),
        sentence("c-2", "The sea is calm.", "The/the/OTHER sea/sea/NOUN is/be/VERB calm/calm/ADJ", task="NR1"),
        sentence("c-3", "Paris sleeps.", "Paris/paris/PROPN/NONPERSON_ENTITY sleeps/sleep/VERB", task="TSR1"),
    ]
    gen = np.random.default_rng(5)
    with open(HERE / "corpus_small.jsonl", "w") as f:
        for subject in ("S01", "S02"):
            for r in rows:
                line = dict(r)
                line["subject_id"] = subject
                line["segments"] = [{"position": t["position"], "features": [round(float(x), 4) for x in
                                                                             gen.standard_normal(4)]}
                                    for t in r["tokens"] if t["pos"] != "OTHER"]
                f.write(json.dumps(line) + "\n")


if __name__ == "__main__":
    vocab6()
    toy()
    corpus_small()
