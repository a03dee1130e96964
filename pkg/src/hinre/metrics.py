"""Threshold selection and F1 / Ign F1 scoring over ranked relation predictions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Container, Mapping

import numpy as np

from .corpus import Document

NO_THRESHOLD = math.inf  # predict nothing
EVIDENCE_BUCKETS = ("1", "2", "3", "4", "5", "6", ">=7")


@dataclass(frozen=True)
class PredictionRecord:
    doc_id: str
    head: int
    tail: int
    relation: int
    score: float

    @property
    def key(self):
        return (self.doc_id, self.head, self.tail, self.relation)


def gold_facts(documents: list[Document]) -> dict[tuple, list[int]]:
    """(doc, head, tail, relation) -> evidence sentence ids."""
    gold = {}
    for doc in documents:
        for f in doc.facts:
            gold[(doc.id, f.head, f.tail, f.relation)] = list(f.evidence)
    return gold


class IgnoreIndex:
    """Facts whose (head name, tail name, relation) also occurs in training.

    Names are the surface forms of all mentions, so a fact is ignored when any
    head-name x tail-name combination matches a training fact.
    """

    def __init__(self, train_documents: list[Document], documents: list[Document]):
        self.train_triples = set()
        for doc in train_documents:
            for f in doc.facts:
                for hn in doc.entities[f.head].names:
                    for tn in doc.entities[f.tail].names:
                        self.train_triples.add((hn, tn, f.relation))
        self.names = {(d.id, e): ent.names for d in documents for e, ent in enumerate(d.entities)}

    def __contains__(self, key) -> bool:
        doc_id, h, t, r = key
        hn, tn = self.names.get((doc_id, h), ()), self.names.get((doc_id, t), ())
        return any((a, b, r) in self.train_triples for a in hn for b in tn)


def prf(n_pred: int, n_gold: int, n_correct: int) -> tuple[float, float, float]:
    p = n_correct / n_pred if n_pred else 0.0
    r = n_correct / n_gold if n_gold else 0.0
    # 2PR/(P+R) written over counts: one correctly rounded division
    f = 2 * n_correct / (n_pred + n_gold) if n_correct else 0.0
    return p, r, f


def _ranked(records):
    return sorted(records, key=lambda rec: (-rec.score, rec.key))


def select_threshold(records: list[PredictionRecord], gold: Container) -> float:
    """Confidence cut maximizing F1 when predicting every record scored above it.

    Cuts are only placed between distinct scores, so the chosen prefix is
    reproduced exactly by ``score > delta``.  Equal F1 favours the longer
    prefix.  Returns :data:`NO_THRESHOLD` when no cut reaches F1 > 0.
    """
    n_gold = len(gold)
    if not records or n_gold == 0:
        return NO_THRESHOLD
    ranked = _ranked(records)
    best_f1, best_score = 0.0, None
    tp = 0
    for i, rec in enumerate(ranked):
        tp += rec.key in gold
        if i + 1 < len(ranked) and ranked[i + 1].score == rec.score:
            continue
        f1 = 2 * tp / (i + 1 + n_gold)
        if f1 > 0 and f1 >= best_f1:
            best_f1, best_score = f1, rec.score
    if best_score is None:
        return NO_THRESHOLD
    return float(np.nextafter(best_score, -np.inf))


@dataclass
class EvalReport:
    precision: float
    recall: float
    f1: float
    ign_precision: float
    ign_recall: float
    ign_f1: float
    threshold: float
    n_pred: int
    n_gold: int
    n_correct: int
    recall_by_evidence: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = dict(self.__dict__)
        out["threshold"] = None if math.isinf(self.threshold) else self.threshold
        return out

    def table(self) -> str:
        lines = [
            f"threshold  {'inf' if math.isinf(self.threshold) else f'{self.threshold:.9f}'}",
            f"precision  {self.precision:.4f}",
            f"recall     {self.recall:.4f}",
            f"F1         {self.f1:.4f}",
            f"Ign F1     {self.ign_f1:.4f}",
            f"predicted {self.n_pred}  gold {self.n_gold}  correct {self.n_correct}",
        ]
        if self.recall_by_evidence:
            lines.append("")
            lines.append("evidence  facts  recall")
            for b, row in self.recall_by_evidence.items():
                rec = "-" if row["recall"] is None else f"{row['recall']:.4f}"
                lines.append(f"{b:>8}  {row['count']:>5}  {rec}")
        return "\n".join(lines) + "\n"


def predicted_keys(records, delta: float) -> set:
    return {rec.key for rec in records if rec.score > delta}


def evaluate_f1(records: list[PredictionRecord], gold: Mapping, delta: float,
                ignore: Container | None = None) -> EvalReport:
    pred = predicted_keys(records, delta)
    correct = pred & set(gold)
    p, r, f = prf(len(pred), len(gold), len(correct))
    if ignore is None:
        ip, ir, i_f = p, r, f
    else:
        pred_i = {k for k in pred if k not in ignore}
        gold_i = {k for k in gold if k not in ignore}
        ip, ir, i_f = prf(len(pred_i), len(gold_i), len(pred_i & gold_i))
    table = recall_by_evidence(records, gold, delta) if isinstance(gold, Mapping) else {}
    return EvalReport(p, r, f, ip, ir, i_f, delta, len(pred), len(gold), len(correct), table)


def evidence_bucket(n: int) -> str:
    if n <= 0:
        return "0"
    return str(n) if n < 7 else ">=7"


def recall_by_evidence(records, gold: Mapping, delta: float) -> dict:
    """Recall over gold facts grouped by evidence count.

    Buckets 1..6 and >=7 always appear; facts with no evidence are reported
    under "0" only when present.
    """
    pred = predicted_keys(records, delta)
    counts = {b: [0, 0] for b in EVIDENCE_BUCKETS}
    for key, evidence in gold.items():
        b = evidence_bucket(len(set(evidence)))
        hit = counts.setdefault(b, [0, 0])
        hit[0] += 1
        hit[1] += key in pred
    table = {}
    for b in ("0",) + EVIDENCE_BUCKETS:
        if b not in counts:
            continue
        n, found = counts[b]
        table[b] = {"count": n, "recalled": found, "recall": found / n if n else None}
    return table
