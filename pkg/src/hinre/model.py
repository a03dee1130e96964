"""Relation classifier that combines entity, sentence and document evidence.

The forward pass is batched: :meth:`HinModel.encode` embeds and encodes a
list of documents once (token states, entity vectors, sentence vectors), and
:meth:`HinModel.forward` scores any number of ordered entity pairs drawn from
those documents.  Pair-independent work is never repeated per pair.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import autodiff as ad
from . import layers
from .autodiff import ParameterSet, Tensor
from .corpus import DISTANCE_BUCKETS, DocFeatures, Vocabulary, bucket_index, distance_bucket

ABLATIONS = ("no_translation", "no_bilinear", "single_space", "no_sentence_inference", "flat_document")


@dataclass
class ModelConfig:
    vocab_size: int = 1000
    n_types: int = 7
    n_relations: int = 96
    max_entities: int = 64
    word_dim: int = 100
    type_dim: int = 20
    coref_dim: int = 20
    dist_dim: int = 20
    hidden: int = 128  # per LSTM direction
    subspaces: int = 2
    subspace_dim: int | None = None  # defaults to d // subspaces
    dropout: float = 0.2
    freeze_words: bool = True
    no_translation: bool = False
    no_bilinear: bool = False
    single_space: bool = False
    no_sentence_inference: bool = False
    flat_document: bool = False

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, int) and not isinstance(v, bool) and f.name != "subspace_dim" and v < 1:
                raise ValueError(f"ModelConfig.{f.name} must be >= 1, got {v}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"ModelConfig.dropout must lie in [0, 1), got {self.dropout}")
        if self.subspace_dim is not None and self.subspace_dim < 1:
            raise ValueError("ModelConfig.subspace_dim must be >= 1")

    @property
    def d(self) -> int:
        return 2 * self.hidden

    @property
    def n_spaces(self) -> int:
        return 1 if self.single_space else self.subspaces

    @property
    def space_dim(self) -> int:
        if self.single_space:
            return self.d
        return self.subspace_dim or max(1, self.d // self.subspaces)

    @property
    def input_dim(self) -> int:
        return self.word_dim + self.type_dim + self.coref_dim

    @property
    def entity_input_width(self) -> int:
        """Width of the G_e input; ablated blocks are kept as zero columns."""
        return self.n_spaces * 4 * self.space_dim + self.dist_dim

    @property
    def live_entity_input_width(self) -> int:
        dropped = int(self.no_translation) + int(self.no_bilinear)
        return self.entity_input_width - dropped * self.n_spaces * self.space_dim

    def replace(self, **changes) -> "ModelConfig":
        return ModelConfig(**{**asdict(self), **changes})

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**obj)


def param_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    """Name -> shape for every parameter; a pure function of the config."""
    d, ds = cfg.d, cfg.space_dim
    s = {
        "emb.word": (cfg.vocab_size, cfg.word_dim),
        "emb.type": (cfg.n_types, cfg.type_dim),
        "emb.coref": (cfg.max_entities + 1, cfg.coref_dim),
        "emb.dist": (DISTANCE_BUCKETS, cfg.dist_dim),
    }
    s.update(layers.lstm_shapes("lstm_e", cfg.input_dim, cfg.hidden))
    for k in range(cfg.n_spaces):
        s[f"proj.{k}.w0"] = (d, d)
        s[f"proj.{k}.w1"] = (ds, d)
        if not cfg.no_bilinear:
            s[f"biaffine.{k}"] = (ds, ds, ds)
    s.update(layers.ffnn_shapes("g_e", [cfg.entity_input_width, d, d]))
    if cfg.flat_document:
        s.update(layers.lstm_shapes("lstm_flat", cfg.input_dim, cfg.hidden))
    else:
        s.update(layers.lstm_shapes("lstm_s", cfg.input_dim, cfg.hidden))
        s.update(layers.attention_shapes("word_att", d))
        if not cfg.no_sentence_inference:
            s.update(layers.ffnn_shapes("g_s", [4 * d, d, d]))
        s.update(layers.lstm_shapes("lstm_d", d, cfg.hidden))
        s.update(layers.attention_shapes("sent_att", d))
    s["out.w"] = (cfg.n_relations, 2 * d)
    s["out.b"] = (cfg.n_relations,)
    return s


def parameter_count(cfg: ModelConfig) -> int:
    return int(sum(int(np.prod(shape)) for shape in param_shapes(cfg).values()))


def projection_count(cfg: ModelConfig) -> int:
    return int(sum(int(np.prod(shape)) for name, shape in param_shapes(cfg).items()
                   if name.startswith("proj.")))


def init_params(cfg: ModelConfig, rng: np.random.Generator, vocab: Vocabulary | None = None) -> ParameterSet:
    params = ParameterSet()
    for name, shape in param_shapes(cfg).items():
        arr = layers.init_array(name, shape, rng)
        if name == "emb.word" and vocab is not None and vocab.pretrained is not None:
            if vocab.pretrained.shape != shape:
                raise ValueError(f"pretrained table {vocab.pretrained.shape} does not match {shape}")
            arr[vocab.pretrained_mask] = vocab.pretrained[vocab.pretrained_mask]
        frozen = name == "emb.word" and cfg.freeze_words
        params.add(name, arr, frozen=frozen)
    return params


# ---------------------------------------------------------------------------
# Forward structures
# ---------------------------------------------------------------------------


@dataclass
class DocumentEncoding:
    docs: list[DocFeatures]
    inputs: Tensor  # [D x N x input_dim]
    token_states: Tensor  # [D x N x d]
    entities: Tensor  # [total entities x d]
    entity_offset: list[int]
    sentence_vectors: Tensor | None = None  # [total sentences x d]
    word_weights: Tensor | None = None  # [total sentences x T]
    sentence_offset: list[int] = field(default_factory=list)
    doc_vectors: Tensor | None = None  # flat_document only


@dataclass
class PairRef:
    doc: int  # index into DocumentEncoding.docs
    head: int
    tail: int


@dataclass
class PairForward:
    entity_blocks: Tensor  # [P x entity_input_width], the G_e input
    entity_inference: Tensor  # I_e [P x d]
    sentence_inference: Tensor | None  # I_s [P x L x d]
    document_inference: Tensor  # I_d [P x d]
    sentence_weights: Tensor | None  # [P x L]
    sentence_mask: np.ndarray | None  # [P x L]
    probs: Tensor  # [P x l]


# ---------------------------------------------------------------------------
# Components
# ---------------------------------------------------------------------------


def embed_input(feats: DocFeatures, params: ParameterSet) -> Tensor:
    """[n x (d_w + d_t + d_c)] rows of word, type and coreference embeddings."""
    return ad.concat([
        layers.EmbeddingTable("emb.word", params["emb.word"]).lookup(feats.word_ids),
        layers.EmbeddingTable("emb.type", params["emb.type"]).lookup(feats.type_ids),
        layers.EmbeddingTable("emb.coref", params["emb.coref"]).lookup(feats.coref_ids),
    ])


def averaging_matrix(entity_spans: list[list[tuple[int, int]]], n_tokens: int) -> np.ndarray:
    """Row e averages the token means of entity e's mentions."""
    if any(not spans for spans in entity_spans):
        raise ValueError("entity with no mentions")
    a = np.zeros((len(entity_spans), n_tokens))
    for e, spans in enumerate(entity_spans):
        for s, t in spans:
            if not 0 <= s < t <= n_tokens:
                raise ValueError(f"mention span [{s}, {t}) outside {n_tokens} tokens")
            a[e, s:t] += 1.0 / ((t - s) * len(spans))
    return a


def entity_representation(token_states: Tensor, mention_spans: list[tuple[int, int]]) -> Tensor:
    """Mean over mentions of the mean hidden state inside each mention."""
    a = averaging_matrix([mention_spans], token_states.shape[0])
    return ad.reshape(ad.matmul(Tensor(a), token_states), (token_states.shape[1],))


def entity_inference(e_a: Tensor, e_b: Tensor, dist_ab, dist_ba, params: ParameterSet,
                     cfg: ModelConfig, train=False, rng=None):
    """Entity-level inference for a batch of pairs.

    ``e_a``/``e_b`` are [P x d]; ``dist_ab``/``dist_ba`` are signed distance
    buckets.  Returns ``(I_e [P x d], G_e input [P x width])``.
    """
    P, ds = e_a.shape[0], cfg.space_dim
    zeros = Tensor(np.zeros((P, ds)))
    blocks = []
    for k in range(cfg.n_spaces):
        w0, w1 = params[f"proj.{k}.w0"], params[f"proj.{k}.w1"]
        a_k = ad.linear(ad.relu(ad.linear(e_a, w0)), w1)
        b_k = ad.linear(ad.relu(ad.linear(e_b, w0)), w1)
        bil = zeros if cfg.no_bilinear else ad.biaffine(a_k, b_k, params[f"biaffine.{k}"])
        trans = zeros if cfg.no_translation else ad.sub(b_k, a_k)
        blocks += [bil, trans, a_k, b_k]
    dist = params["emb.dist"]
    idx_ab = np.array([bucket_index(x) for x in np.atleast_1d(dist_ab)])
    idx_ba = np.array([bucket_index(x) for x in np.atleast_1d(dist_ba)])
    blocks.append(ad.sub(ad.take(dist, idx_ba), ad.take(dist, idx_ab)))
    g_in = ad.concat(blocks)
    return layers.ffnn_relu(g_in, params, "g_e", 2, cfg.dropout, train, rng), g_in


def sentence_inference(sentences: Tensor, i_e: Tensor, params: ParameterSet, cfg: ModelConfig,
                       train=False, rng=None) -> Tensor:
    """[P x L x d] sentence vectors matched against I_e [P x d]."""
    if cfg.no_sentence_inference:
        return sentences
    P, L = sentences.shape[:2]
    i_e_rep = ad.take(i_e, np.repeat(np.arange(P)[:, None], L, axis=1))
    match = ad.concat([sentences, i_e_rep, ad.sub(sentences, i_e_rep), ad.mul(sentences, i_e_rep)])
    return layers.ffnn_relu(match, params, "g_s", 2, cfg.dropout, train, rng)


def document_inference(i_s: Tensor, lengths, params: ParameterSet):
    """BiLSTM over sentence inference vectors, then sentence attention.

    ``i_s`` is [P x L x d] padded to ``lengths``; returns ``(I_d, weights)``.
    """
    lengths = np.asarray(lengths)
    mask = np.arange(i_s.shape[1])[None, :] < lengths[:, None]
    c = layers.bilstm(i_s, lengths, params, "lstm_d")
    return layers.additive_attention_pool(c, params, "sent_att", mask)


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------


class HinModel:
    def __init__(self, cfg: ModelConfig, params: ParameterSet):
        shapes = param_shapes(cfg)
        missing = set(shapes) ^ set(params.names())
        if missing:
            raise ValueError(f"parameter set does not match config: {sorted(missing)[:5]}")
        for name, shape in shapes.items():
            if params[name].shape != tuple(shape):
                raise ValueError(f"parameter {name!r} has shape {params[name].shape}, config expects {shape}")
        self.cfg = cfg
        self.params = params
        self._cache: dict[int, DocumentEncoding] = {}

    @classmethod
    def create(cls, cfg: ModelConfig, rng: np.random.Generator, vocab: Vocabulary | None = None):
        return cls(cfg, init_params(cfg, rng, vocab))

    def clear_cache(self):
        self._cache.clear()

    # -- per-document work ----------------------------------------------------

    def encode(self, docs: list[DocFeatures], train=False, rng=None) -> DocumentEncoding:
        cfg, p = self.cfg, self.params
        D = len(docs)
        lengths = np.array([len(f.word_ids) for f in docs])
        N = int(lengths.max())

        def pad(arrs):
            out = np.zeros((D, N), dtype=np.int64)
            for i, a in enumerate(arrs):
                out[i, :len(a)] = a
            return out

        x = ad.concat([
            layers.EmbeddingTable("emb.word", p["emb.word"]).lookup(pad([f.word_ids for f in docs])),
            layers.EmbeddingTable("emb.type", p["emb.type"]).lookup(pad([f.type_ids for f in docs])),
            layers.EmbeddingTable("emb.coref", p["emb.coref"]).lookup(pad([f.coref_ids for f in docs])),
        ])
        x = layers.dropout_apply(x, cfg.dropout, train, rng)
        h = layers.bilstm(x, lengths, p, "lstm_e")

        # entity vectors for all documents through one averaging matrix
        ent_offset, rows = [], []
        for i, f in enumerate(docs):
            ent_offset.append(sum(len(r) for r in rows))
            a = averaging_matrix(f.entity_spans, N)
            rows.append(np.pad(a, ((0, 0), (i * N, (D - 1 - i) * N))))
        avg = np.concatenate(rows, axis=0)
        entities = ad.matmul(Tensor(avg), ad.reshape(h, (D * N, cfg.d)))
        enc = DocumentEncoding(docs, x, h, entities, ent_offset)

        x_flat = ad.reshape(x, (D * N, cfg.input_dim))
        if cfg.flat_document:
            doc_states = layers.bilstm(x, lengths, p, "lstm_flat")
            mask = np.arange(N)[None, :] < lengths[:, None]
            enc.doc_vectors = layers.masked_mean(doc_states, mask)
            return enc

        spans = []
        for i, f in enumerate(docs):
            enc.sentence_offset.append(len(spans))
            spans += [(i * N + s, t - s) for s, t in f.sentence_spans]
        sl = np.array([n for _, n in spans])
        T = int(sl.max())
        idx = np.array([[s + (t if t < n else 0) for t in range(T)] for s, n in spans])
        sent_in = ad.take(x_flat, idx)
        sent_h = layers.bilstm(sent_in, sl, p, "lstm_s")
        smask = np.arange(T)[None, :] < sl[:, None]
        enc.sentence_vectors, enc.word_weights = layers.additive_attention_pool(sent_h, p, "word_att", smask)
        return enc

    # -- per-pair work ----------------------------------------------------------

    def forward(self, enc: DocumentEncoding, pairs: list[PairRef], train=False, rng=None) -> PairForward:
        cfg, p = self.cfg, self.params
        P = len(pairs)
        heads = np.array([enc.entity_offset[q.doc] + q.head for q in pairs])
        tails = np.array([enc.entity_offset[q.doc] + q.tail for q in pairs])
        for q in pairs:
            if q.head == q.tail:
                raise ValueError("pair entities must be distinct")
        starts = [enc.docs[q.doc].first_starts for q in pairs]
        d_ab = np.array([s[q.head] - s[q.tail] for s, q in zip(starts, pairs)])
        b_ab = [distance_bucket(x) for x in d_ab]
        b_ba = [distance_bucket(-x) for x in d_ab]
        i_e, blocks = entity_inference(ad.take(enc.entities, heads), ad.take(enc.entities, tails),
                                       b_ab, b_ba, p, cfg, train, rng)

        if cfg.flat_document:
            i_d = ad.take(enc.doc_vectors, [q.doc for q in pairs])
            i_s = weights = mask = None
        else:
            n_sent = np.array([len(enc.docs[q.doc].sentence_spans) for q in pairs])
            L = int(n_sent.max())
            idx = np.array([[enc.sentence_offset[q.doc] + (j if j < n else 0) for j in range(L)]
                            for q, n in zip(pairs, n_sent)])
            mask = np.arange(L)[None, :] < n_sent[:, None]
            sents = ad.take(enc.sentence_vectors, idx)
            i_s = sentence_inference(sents, i_e, p, cfg, train, rng)
            i_d, weights = document_inference(i_s, n_sent, p)

        logits = ad.linear(ad.concat([i_e, i_d]), p["out.w"], p["out.b"])
        probs = ad.sigmoid(logits)
        assert probs.shape == (P, cfg.n_relations)
        return PairForward(blocks, i_e, i_s, i_d, weights, mask, probs)

    def forward_pair(self, feats: DocFeatures, head: int, tail: int, train=False, rng=None) -> PairForward:
        if train:
            enc = self.encode([feats], True, rng)
        else:
            enc = self._cache.get(id(feats))
            if enc is None or enc.docs[0] is not feats:
                enc = self._cache[id(feats)] = self.encode([feats])
        return self.forward(enc, [PairRef(0, head, tail)], train, rng)
