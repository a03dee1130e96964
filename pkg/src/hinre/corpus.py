"""DocRED-schema documents: ingestion, vocabularies, candidate pairs, distances."""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

PAD, UNK = 0, 1
NONE_TYPE = "<none>"

DISTANCE_BUCKETS = 19  # signed buckets -9..9


class IngestionError(ValueError):
    pass


@dataclass
class Mention:
    sent_id: int
    start: int  # token offset inside the sentence
    end: int  # exclusive
    name: str
    type: str


@dataclass
class Entity:
    mentions: list[Mention]

    @property
    def type(self) -> str:
        return self.mentions[0].type

    @property
    def names(self) -> frozenset[str]:
        return frozenset(m.name for m in self.mentions)


@dataclass
class RelationFact:
    head: int
    tail: int
    relation: int
    evidence: list[int] = field(default_factory=list)


@dataclass
class Document:
    id: str
    sentences: list[list[str]]
    entities: list[Entity]
    facts: list[RelationFact] = field(default_factory=list)
    labeled: bool = True

    @property
    def n_tokens(self) -> int:
        return sum(len(s) for s in self.sentences)

    def sentence_offsets(self) -> list[int]:
        offsets, total = [], 0
        for s in self.sentences:
            offsets.append(total)
            total += len(s)
        return offsets

    def mention_span(self, m: Mention) -> tuple[int, int]:
        """Document-level token span [start, end)."""
        off = self.sentence_offsets()[m.sent_id]
        return off + m.start, off + m.end

    def first_mention_start(self, entity: int) -> int:
        return min(self.mention_span(m)[0] for m in self.entities[entity].mentions)

    def tokens(self) -> list[str]:
        return [tok for s in self.sentences for tok in s]


class LabelIndex:
    """Dense string -> id map; grows on lookup unless frozen."""

    def __init__(self, names=(), frozen=False):
        self.names: list[str] = []
        self._ids: dict[str, int] = {}
        for n in names:
            self.add(n)
        self.frozen = frozen

    def add(self, name: str) -> int:
        if name not in self._ids:
            self._ids[name] = len(self.names)
            self.names.append(name)
        return self._ids[name]

    def id(self, name: str) -> int:
        if name in self._ids:
            return self._ids[name]
        if self.frozen:
            raise KeyError(name)
        return self.add(name)

    def get(self, name, default=None):
        return self._ids.get(name, default)

    def __len__(self):
        return len(self.names)

    def __contains__(self, name):
        return name in self._ids


# ---------------------------------------------------------------------------
# DocRED schema
# ---------------------------------------------------------------------------


def load_docred(path, relations: LabelIndex) -> list[Document]:
    path = Path(path)
    try:
        records = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise IngestionError(f"{path}: no such file") from None
    except json.JSONDecodeError as err:
        raise IngestionError(f"{path}: not valid JSON ({err})") from None
    return parse_docred(records, relations, source=str(path))


def parse_docred(records, relations: LabelIndex, source="<records>") -> list[Document]:
    if not isinstance(records, list):
        raise IngestionError(f"{source}: top level must be a list of records")
    return [_parse_record(rec, i, relations, source) for i, rec in enumerate(records)]


def _parse_record(rec, idx, relations, source) -> Document:
    def fail(where, msg):
        raise IngestionError(f"{source} record {idx}: {where}: {msg}")

    for key in ("title", "sents", "vertexSet"):
        if key not in rec:
            fail(key, "missing field")
    sents = rec["sents"]
    if not isinstance(sents, list) or not all(isinstance(s, list) for s in sents):
        fail("sents", "must be a list of token lists")

    # drop empty sentences and remap ids
    keep = [i for i, s in enumerate(sents) if len(s) > 0]
    if len(keep) < len(sents):
        log.warning("%s record %d: dropping %d empty sentence(s)", source, idx, len(sents) - len(keep))
    remap = {old: new for new, old in enumerate(keep)}
    sentences = [[str(t) for t in sents[i]] for i in keep]

    entities = []
    for e, mentions in enumerate(rec["vertexSet"]):
        if not mentions:
            fail(f"vertexSet[{e}]", "entity has no mentions")
        parsed = []
        for j, m in enumerate(mentions):
            where = f"vertexSet[{e}][{j}]"
            try:
                sid, pos = int(m["sent_id"]), m["pos"]
                start, end = int(pos[0]), int(pos[1])
            except (KeyError, TypeError, ValueError, IndexError):
                fail(where, "mention needs sent_id and pos = [start, end]")
            if not 0 <= sid < len(sents):
                fail(f"{where}.sent_id", f"{sid} outside {len(sents)} sentences")
            if sid not in remap:
                fail(f"{where}.sent_id", f"mention points at empty sentence {sid}")
            n = len(sents[sid])
            if not 0 <= start < end <= n:
                fail(f"{where}.pos", f"[{start}, {end}) outside sentence {sid} of length {n}")
            parsed.append(Mention(remap[sid], start, end, str(m.get("name", "")), str(m.get("type", NONE_TYPE))))
        if len({m.type for m in parsed}) > 1:
            log.warning("%s record %d: vertexSet[%d] mixes types %s; using %s", source, idx, e,
                        sorted({m.type for m in parsed}), parsed[0].type)
        entities.append(Entity(parsed))

    labeled = "labels" in rec
    facts = []
    for k, lab in enumerate(rec.get("labels", [])):
        where = f"labels[{k}]"
        try:
            h, t, r = int(lab["h"]), int(lab["t"]), lab["r"]
        except (KeyError, TypeError, ValueError):
            fail(where, "label needs h, t and r")
        for key, v in (("h", h), ("t", t)):
            if not 0 <= v < len(entities):
                fail(f"{where}.{key}", f"{v} outside {len(entities)} entities")
        if h == t:
            fail(where, "head equals tail")
        try:
            rid = relations.id(str(r))
        except KeyError:
            fail(f"{where}.r", f"unknown relation {r!r}")
        evidence = []
        for s in lab.get("evidence", []):
            s = int(s)
            if not 0 <= s < len(sents) or s not in remap:
                fail(f"{where}.evidence", f"sentence {s} invalid")
            evidence.append(remap[s])
        facts.append(RelationFact(h, t, rid, evidence))
    return Document(str(rec["title"]), sentences, entities, facts, labeled)


def serialize_docred(documents: list[Document], relations: LabelIndex) -> list[dict]:
    out = []
    for doc in documents:
        rec = {
            "title": doc.id,
            "sents": [list(s) for s in doc.sentences],
            "vertexSet": [
                [{"name": m.name, "sent_id": m.sent_id, "pos": [m.start, m.end], "type": m.type}
                 for m in ent.mentions]
                for ent in doc.entities
            ],
        }
        if doc.labeled:
            rec["labels"] = [
                {"h": f.head, "t": f.tail, "r": relations.names[f.relation], "evidence": list(f.evidence)}
                for f in doc.facts
            ]
        out.append(rec)
    return out


def write_docred(path, documents, relations):
    Path(path).write_text(json.dumps(serialize_docred(documents, relations), ensure_ascii=False),
                          encoding="utf-8")


# ---------------------------------------------------------------------------
# Vocabulary
# ---------------------------------------------------------------------------


@dataclass
class Vocabulary:
    words: LabelIndex
    types: LabelIndex
    relations: LabelIndex
    pretrained: np.ndarray | None = None  # [len(words) x d_w]
    pretrained_mask: np.ndarray | None = None  # rows copied from a vector file
    coverage: dict = field(default_factory=dict)

    def word_id(self, token: str) -> int:
        return self.words.get(token, UNK)

    def type_id(self, name: str) -> int:
        return self.types.get(name, 0)

    def to_json(self) -> dict:
        return {"words": self.words.names, "types": self.types.names, "relations": self.relations.names}

    @classmethod
    def from_json(cls, obj) -> "Vocabulary":
        return cls(LabelIndex(obj["words"], frozen=True), LabelIndex(obj["types"], frozen=True),
                   LabelIndex(obj["relations"], frozen=True))


def load_vectors(path, dim: int | None = None) -> dict[str, np.ndarray]:
    vectors = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            tok, vals = parts[0], parts[1:]
            if dim is None:
                dim = len(vals)
            if len(vals) != dim:
                raise IngestionError(f"{path} line {lineno}: expected {dim} values, got {len(vals)}")
            vectors[tok] = np.array(vals, dtype=np.float64)
    return vectors


def build_vocab(documents, relations: LabelIndex, pretrained: dict[str, np.ndarray] | None = None,
                min_count: int = 1, dim: int | None = None) -> Vocabulary:
    counts = Counter(tok for doc in documents for s in doc.sentences for tok in s)
    words = LabelIndex(["<pad>", "<unk>"])
    for doc in documents:
        for s in doc.sentences:
            for tok in s:
                if counts[tok] >= min_count:
                    words.add(tok)
    words.frozen = True
    types = LabelIndex([NONE_TYPE])
    for doc in documents:
        for ent in doc.entities:
            for m in ent.mentions:
                types.add(m.type)
    types.frozen = True
    vocab = Vocabulary(words, types, relations)
    if pretrained is not None:
        widths = {len(v) for v in pretrained.values()}
        if len(widths) > 1:
            raise IngestionError(f"pretrained vectors have mixed widths {sorted(widths)}")
        width = widths.pop() if widths else dim
        if dim is not None and width != dim:
            raise IngestionError(f"pretrained vectors have width {width}, model expects {dim}")
        table = np.zeros((len(words), width))
        mask = np.zeros(len(words), dtype=bool)
        exact = lower = 0
        for i, tok in enumerate(words.names[2:], start=2):
            if tok in pretrained:
                table[i], mask[i] = pretrained[tok], True
                exact += 1
            elif tok.lower() in pretrained:
                table[i], mask[i] = pretrained[tok.lower()], True
                lower += 1
        vocab.pretrained, vocab.pretrained_mask = table, mask
        vocab.coverage = {"file_rows": len(pretrained), "vocab_tokens": len(words) - 2,
                          "matched": exact + lower, "matched_exact": exact, "matched_lowercase": lower}
    return vocab


# ---------------------------------------------------------------------------
# Candidate pairs and distances
# ---------------------------------------------------------------------------


def distance_bucket(x: int) -> int:
    """Signed log-style bucket: exact up to 4, then 5..9 for 5-7, 8-15, 16-31, 32-63, 64+."""
    a = abs(int(x))
    if a <= 4:
        b = a
    elif a <= 7:
        b = 5
    elif a <= 15:
        b = 6
    elif a <= 31:
        b = 7
    elif a <= 63:
        b = 8
    else:
        b = 9
    return b if x >= 0 else -b


def bucket_index(bucket: int) -> int:
    return bucket + DISTANCE_BUCKETS // 2


def relative_distance_buckets(doc: Document, a: int, b: int) -> tuple[int, int]:
    d_ab = doc.first_mention_start(a) - doc.first_mention_start(b)
    return distance_bucket(d_ab), distance_bucket(-d_ab)


@dataclass
class PairExample:
    doc_id: str
    head: int
    tail: int
    labels: np.ndarray  # {0,1}^l
    distance: tuple[int, int]  # (bucket(d_ab), bucket(d_ba))


def enumerate_pairs(doc: Document, n_relations: int) -> list[PairExample]:
    m = len(doc.entities)
    gold: dict[tuple[int, int], set[int]] = {}
    for f in doc.facts:
        gold.setdefault((f.head, f.tail), set()).add(f.relation)
    pairs = []
    for a in range(m):
        for b in range(m):
            if a == b:
                continue
            y = np.zeros(n_relations, dtype=np.int8)
            for r in gold.get((a, b), ()):
                y[r] = 1
            pairs.append(PairExample(doc.id, a, b, y, relative_distance_buckets(doc, a, b)))
    return pairs


def coreference_ids(doc: Document) -> list[int]:
    """Entity id (1-based) by order of first appearance in the document."""
    order = sorted(range(len(doc.entities)), key=lambda e: (doc.first_mention_start(e), e))
    ids = [0] * len(doc.entities)
    for rank, e in enumerate(order, start=1):
        ids[e] = rank
    return ids


@dataclass
class DocFeatures:
    """Integer inputs of one document, all aligned to document tokens."""

    word_ids: np.ndarray
    type_ids: np.ndarray
    coref_ids: np.ndarray
    sentence_spans: list[tuple[int, int]]
    entity_spans: list[list[tuple[int, int]]]  # per entity, document-level mention spans
    first_starts: list[int]


def document_features(doc: Document, vocab: Vocabulary, max_entities: int) -> DocFeatures:
    if len(doc.entities) > max_entities:
        raise IngestionError(f"document {doc.id!r} has {len(doc.entities)} entities, limit is {max_entities}")
    n = doc.n_tokens
    words = np.array([vocab.word_id(t) for t in doc.tokens()], dtype=np.int64)
    types = np.zeros(n, dtype=np.int64)
    coref = np.zeros(n, dtype=np.int64)
    cids = coreference_ids(doc)
    spans = []
    for e, ent in enumerate(doc.entities):
        es = []
        for m in ent.mentions:
            s, t = doc.mention_span(m)
            types[s:t] = vocab.type_id(m.type)
            coref[s:t] = cids[e]
            es.append((s, t))
        spans.append(es)
    offs = doc.sentence_offsets()
    sent_spans = [(o, o + len(s)) for o, s in zip(offs, doc.sentences)]
    return DocFeatures(words, types, coref, sent_spans, spans,
                       [doc.first_mention_start(e) for e in range(len(doc.entities))])
