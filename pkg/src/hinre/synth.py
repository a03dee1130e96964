"""Deterministic synthetic corpora with cross-sentence relation evidence.

Each relation r owns two trigger tokens, ``head_trigger(r)`` and
``tail_trigger(r)``.  An entity is *head-marked* for r when one of its
mentions is immediately followed by the head trigger, and *tail-marked* when
one of its mentions is immediately preceded by the tail trigger.  The label
rule is

    (h, t, r) holds  <=>  h head-marked for r, t tail-marked for r, h != t

Head markers are only planted in even sentences and tail markers only in odd
ones, so the evidence of every fact spans at least two sentences.
Distractor sentences carry unmarked entity mentions and lone triggers that
are always separated from mentions by filler tokens.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Document, Entity, LabelIndex, Mention, RelationFact
from .seeding import substream

TYPES = ("PER", "ORG", "LOC", "TIME", "NUM", "MISC")


@dataclass
class SynthSpec:
    documents: int = 32
    entities: int = 4
    relations: int = 4
    sentences: int = 6
    vocab: int = 200
    seed: int = 7
    max_facts: int = 2  # planted facts per document (at least one)
    distractor_rate: float = 0.5


def relation_names(n: int) -> list[str]:
    return [f"R{i}" for i in range(n)]


def head_trigger(r: int) -> str:
    return f"w{2 * r}"


def tail_trigger(r: int) -> str:
    return f"w{2 * r + 1}"


def labels_from_content(doc: Document, n_relations: int) -> dict[tuple[int, int, int], list[int]]:
    """Apply the trigger rule to a document; returns (h, t, r) -> evidence."""
    head_trig = {head_trigger(r): r for r in range(n_relations)}
    tail_trig = {tail_trigger(r): r for r in range(n_relations)}
    heads: dict[int, dict[int, set]] = {}
    tails: dict[int, dict[int, set]] = {}
    for e, ent in enumerate(doc.entities):
        for m in ent.mentions:
            sent = doc.sentences[m.sent_id]
            if m.end < len(sent) and sent[m.end] in head_trig:
                heads.setdefault(head_trig[sent[m.end]], {}).setdefault(e, set()).add(m.sent_id)
            if m.start > 0 and sent[m.start - 1] in tail_trig:
                tails.setdefault(tail_trig[sent[m.start - 1]], {}).setdefault(e, set()).add(m.sent_id)
    out = {}
    for r in range(n_relations):
        for h, hs in heads.get(r, {}).items():
            for t, ts in tails.get(r, {}).items():
                if h != t:
                    out[(h, t, r)] = sorted(hs | ts)
    return out


def gen_synthetic(spec: SynthSpec, prefix: str = "synth") -> tuple[list[Document], LabelIndex]:
    if min(spec.documents, spec.entities, spec.relations, spec.sentences, spec.vocab) < 1:
        raise ValueError("synthetic spec values must all be >= 1")
    if spec.entities < 2:
        raise ValueError("synthetic documents need at least 2 entities")
    if spec.sentences < 2:
        raise ValueError("cross-sentence evidence needs at least 2 sentences per document")
    n_reserved = 2 * spec.relations
    if spec.vocab < n_reserved + spec.entities + 2:
        raise ValueError(
            f"vocabulary of {spec.vocab} cannot hold {n_reserved} triggers, {spec.entities} entity names "
            "and filler words")
    rng = substream(spec.seed, "synth")
    relations = LabelIndex(relation_names(spec.relations))
    docs = [_gen_document(spec, rng, f"{prefix}-{spec.seed}-{i:04d}") for i in range(spec.documents)]
    return docs, relations


def _gen_document(spec: SynthSpec, rng: np.random.Generator, doc_id: str) -> Document:
    m, R, L = spec.entities, spec.relations, spec.sentences
    n_reserved = 2 * R
    pool = np.arange(n_reserved, spec.vocab)
    names = [f"w{i}" for i in rng.choice(pool, size=m, replace=False)]
    fillers = [f"w{i}" for i in pool if f"w{i}" not in names]
    types = [TYPES[i] for i in rng.integers(0, len(TYPES), size=m)]

    n_facts = int(rng.integers(1, spec.max_facts + 1))
    planted = set()
    while len(planted) < n_facts:
        h, t = rng.choice(m, size=2, replace=False)
        planted.add((int(h), int(t), int(rng.integers(0, R))))

    # segments per sentence: ("ent", e) / ("head", e, r) / ("tail", e, r) / ("trig", token)
    segments: list[list[tuple]] = [[] for _ in range(L)]
    even = list(range(0, L, 2))
    odd = list(range(1, L, 2))
    for h, t, r in sorted(planted):
        segments[int(rng.choice(even))].append(("head", h, r))
        segments[int(rng.choice(odd))].append(("tail", t, r))
    mentioned = {e for seg in segments for s in seg for e in [s[1]]}
    for e in range(m):
        if e not in mentioned:
            segments[int(rng.integers(0, L))].append(("ent", e))
    for j in range(L):
        if rng.random() < spec.distractor_rate:
            segments[j].append(("ent", int(rng.integers(0, m))))
        if rng.random() < spec.distractor_rate:
            r = int(rng.integers(0, R))
            segments[j].append(("trig", head_trigger(r) if rng.random() < 0.5 else tail_trigger(r)))
        if not segments[j]:
            segments[j].append(("ent", int(rng.integers(0, m))))
        order = rng.permutation(len(segments[j]))
        segments[j] = [segments[j][k] for k in order]

    sentences: list[list[str]] = []
    mentions: list[list[Mention]] = [[] for _ in range(m)]

    def filler(k):
        return [fillers[i] for i in rng.integers(0, len(fillers), size=k)]

    for j, segs in enumerate(segments):
        toks = filler(int(rng.integers(0, 3)))
        for s in segs:
            toks += filler(int(rng.integers(1, 3)))
            kind = s[0]
            if kind == "trig":
                toks.append(s[1])
                continue
            e = s[1]
            if kind == "tail":
                toks.append(tail_trigger(s[2]))
            mentions[e].append(Mention(j, len(toks), len(toks) + 1, names[e], types[e]))
            toks.append(names[e])
            if kind == "head":
                toks.append(head_trigger(s[2]))
        toks += filler(int(rng.integers(1, 3)))
        sentences.append(toks)

    doc = Document(doc_id, sentences, [Entity(ms) for ms in mentions])
    doc.facts = [RelationFact(h, t, r, ev) for (h, t, r), ev in sorted(labels_from_content(doc, R).items())]
    return doc
