"""BCE training with Adam, dev-tuned thresholds and the ablation harness."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterSet, Tensor
from .corpus import Document, DocFeatures, Vocabulary, document_features, enumerate_pairs
from .metrics import (EvalReport, IgnoreIndex, PredictionRecord, evaluate_f1, gold_facts,
                      select_threshold)
from .model import ABLATIONS, HinModel, ModelConfig, PairRef, parameter_count
from .seeding import substream

log = logging.getLogger(__name__)

REPORT_FLOOR = 1e-4


class DivergenceError(RuntimeError):
    def __init__(self, message, batch):
        super().__init__(message)
        self.batch = batch


@dataclass
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 12
    epochs: int = 10
    seed: int = 0
    negative_rate: float = 1.0  # fraction of all-negative pairs kept each epoch
    clip_norm: float | None = None

    def __post_init__(self):
        if self.lr < 0 or not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1 or self.eps <= 0:
            raise ValueError("invalid Adam hyperparameters")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if not 0 < self.negative_rate <= 1:
            raise ValueError("negative_rate must lie in (0, 1]")

    def to_json(self):
        return asdict(self)

    @classmethod
    def from_json(cls, obj):
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**obj)


# -- loss and optimizer --------------------------------------------------------


def bce_loss(probs: Tensor, y) -> Tensor:
    """Binary cross entropy summed over relations (and any leading axes)."""
    return ad.bce(probs, y)


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: ParameterSet, state: AdamState, cfg: TrainConfig):
    trainable = params.trainable()
    for name, p in trainable.items():
        if p.grad is None:
            raise ValueError(f"no gradient for trainable parameter {name!r}")
    if cfg.clip_norm is not None:
        norm = np.sqrt(sum(float((p.grad ** 2).sum()) for p in trainable.values()))
        if norm > cfg.clip_norm:
            for p in trainable.values():
                p.grad *= cfg.clip_norm / norm
    state.t += 1
    c1 = 1.0 - cfg.beta1 ** state.t
    c2 = 1.0 - cfg.beta2 ** state.t
    for name, p in trainable.items():
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        p.data -= cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)


# -- scoring --------------------------------------------------------------------


def score_documents(model: HinModel, docs: list[Document], feats: list[DocFeatures],
                    floor: float = REPORT_FLOOR) -> list[PredictionRecord]:
    """Eval-mode scores for every ordered pair and relation above ``floor``."""
    records = []
    order = sorted(range(len(docs)), key=lambda i: docs[i].id)
    with ad.no_tape():
        for i in order:
            doc, f = docs[i], feats[i]
            m = len(doc.entities)
            if m < 2:
                continue
            pairs = [PairRef(0, a, b) for a in range(m) for b in range(m) if a != b]
            probs = model.forward(model.encode([f]), pairs).probs.data
            for q, row in zip(pairs, probs):
                for r in np.nonzero(row >= floor)[0]:
                    records.append(PredictionRecord(doc.id, q.head, q.tail, int(r), float(row[r])))
    return records


def evaluate(model, docs, feats, delta=None, train_docs=None) -> tuple[EvalReport, list[PredictionRecord]]:
    """Score ``docs``; when ``delta`` is None it is tuned on these documents."""
    records = score_documents(model, docs, feats)
    gold = gold_facts(docs)
    if delta is None:
        delta = select_threshold(records, gold)
    ignore = IgnoreIndex(train_docs, docs) if train_docs else None
    return evaluate_f1(records, gold, delta, ignore), records


# -- training loop ------------------------------------------------------------------


@dataclass
class EpochLog:
    epoch: int
    loss: float
    precision: float
    recall: float
    f1: float
    ign_f1: float
    threshold: float

    def line(self) -> str:
        th = "inf" if np.isinf(self.threshold) else f"{self.threshold:.9f}"
        return (f"{self.epoch}\t{self.loss:.9f}\t{self.precision:.6f}\t{self.recall:.6f}\t"
                f"{self.f1:.6f}\t{self.ign_f1:.6f}\t{th}")


LOG_HEADER = "epoch\tloss\tdev_p\tdev_r\tdev_f1\tdev_ign_f1\tthreshold"


@dataclass
class TrainResult:
    model: HinModel
    log: list[EpochLog]
    threshold: float
    best_epoch: int
    batch_losses: list[float] = field(default_factory=list)


def featurize(docs, vocab: Vocabulary, cfg: ModelConfig) -> list[DocFeatures]:
    return [document_features(d, vocab, cfg.max_entities) for d in docs]


def train_loop(train_docs: list[Document], dev_docs: list[Document], vocab: Vocabulary,
               model_cfg: ModelConfig, cfg: TrainConfig, on_epoch=None) -> TrainResult:
    if not train_docs:
        raise ValueError("empty training split")
    model = HinModel.create(model_cfg, substream(cfg.seed, "init"), vocab)
    feats = featurize(train_docs, vocab, model_cfg)
    dev_feats = featurize(dev_docs, vocab, model_cfg)
    examples = [(i, p) for i, doc in enumerate(train_docs)
                for p in enumerate_pairs(doc, model_cfg.n_relations)]
    if not examples:
        raise ValueError("training split has no candidate pairs")
    shuffle_rng = substream(cfg.seed, "shuffle")
    dropout_rng = substream(cfg.seed, "dropout")
    state = AdamState()
    best = (-1.0, model.params.snapshot(), np.inf, 0)
    history, batch_losses = [], []

    for epoch in range(1, cfg.epochs + 1):
        keep = [ex for ex in examples
                if ex[1].labels.any() or cfg.negative_rate >= 1.0 or shuffle_rng.random() < cfg.negative_rate]
        order = shuffle_rng.permutation(len(keep))
        total, n_seen = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            batch = [keep[j] for j in order[start:start + cfg.batch_size]]
            doc_ids = sorted({i for i, _ in batch})
            slot = {i: k for k, i in enumerate(doc_ids)}
            model.params.zero_grad()
            with ad.Tape() as tape:
                enc = model.encode([feats[i] for i in doc_ids], train=True, rng=dropout_rng)
                out = model.forward(enc, [PairRef(slot[i], p.head, p.tail) for i, p in batch],
                                    train=True, rng=dropout_rng)
                y = np.stack([p.labels for _, p in batch])
                loss = ad.mul(bce_loss(out.probs, y), 1.0 / len(batch))
            value = loss.item()
            if not np.isfinite(value):
                ids = [(train_docs[i].id, p.head, p.tail) for i, p in batch]
                raise DivergenceError(f"loss became {value} at epoch {epoch}; batch {ids}", ids)
            ad.backward(loss, model.params.trainable().values(), tape=tape)
            adam_step(model.params, state, cfg)
            total += value * len(batch)
            n_seen += len(batch)
            batch_losses.append(value)
        report, _ = evaluate(model, dev_docs, dev_feats, train_docs=train_docs)
        entry = EpochLog(epoch, total / max(n_seen, 1), report.precision, report.recall, report.f1,
                         report.ign_f1, report.threshold)
        history.append(entry)
        log.info(entry.line())
        if on_epoch is not None:
            on_epoch(entry)
        if report.f1 > best[0]:
            best = (report.f1, model.params.snapshot(), report.threshold, epoch)

    if history:
        model.params.restore(best[1])
    threshold = best[2] if history else np.inf
    return TrainResult(model, history, threshold, best[3], batch_losses)


# -- ablation ------------------------------------------------------------------------


def _lstm_count(n_in, h):
    return 2 * (4 * h * n_in + 4 * h * h + 4 * h)


def expected_param_delta(cfg: ModelConfig, flag: str) -> int:
    """Closed-form parameter-count change from switching ``flag`` on."""
    if flag not in ABLATIONS:
        raise ValueError(f"unknown ablation flag {flag!r}; choose from {', '.join(ABLATIONS)}")
    if getattr(cfg, flag):
        return 0
    d, K, ds, h = cfg.d, cfg.n_spaces, cfg.space_dim, cfg.hidden
    if flag == "no_bilinear":
        return -K * ds ** 3
    if flag == "no_translation":
        return 0
    if flag == "single_space":
        proj = (d * d + d * d) - K * (d * d + d * ds)
        bil = 0 if cfg.no_bilinear else d ** 3 - K * ds ** 3
        g_e = d * ((4 * d) - 4 * K * ds)
        return proj + bil + g_e
    g_s = 0 if cfg.no_sentence_inference else (4 * d * d + d + d * d + d)
    if flag == "no_sentence_inference":
        return 0 if cfg.flat_document else -g_s
    # flat_document
    removed = _lstm_count(cfg.input_dim, h) + (d + d * d + d) + g_s + _lstm_count(d, h) + (d + d * d + d)
    return _lstm_count(cfg.input_dim, h) - removed


@dataclass
class AblationResult:
    flag: str
    base: EvalReport
    ablated: EvalReport
    base_params: int
    ablated_params: int


def run_ablation(train_docs, dev_docs, vocab, base_cfg: ModelConfig, flag: str,
                 cfg: TrainConfig) -> AblationResult:
    expected = expected_param_delta(base_cfg, flag)
    ablated_cfg = base_cfg.replace(**{flag: True})
    n_base, n_abl = parameter_count(base_cfg), parameter_count(ablated_cfg)
    if n_abl - n_base != expected:
        raise AssertionError(f"{flag}: parameter delta {n_abl - n_base} != closed form {expected}")
    reports = []
    for mc in (base_cfg, ablated_cfg):
        res = train_loop(train_docs, dev_docs, vocab, mc, cfg)
        report, _ = evaluate(res.model, dev_docs, featurize(dev_docs, vocab, mc), res.threshold, train_docs)
        reports.append(report)
    return AblationResult(flag, reports[0], reports[1], n_base, n_abl)
