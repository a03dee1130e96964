"""Parameterized building blocks: embeddings, BiLSTM, attention pooling, FFNN,
bi-affine scoring and inverted dropout.

Layers are plain functions of (input, parameters[, rng]).  Parameter groups
live in a :class:`~hinre.autodiff.ParameterSet` under dotted prefixes, e.g.
``lstm_e.fwd.w_ih``; the ``*_shapes`` helpers list the names and shapes a
layer expects so that model construction and parameter accounting agree.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, ParameterSet, Tensor


# -- initialization ---------------------------------------------------------


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def lstm_shapes(prefix: str, n_in: int, hidden: int) -> dict[str, tuple]:
    out = {}
    for direction in ("fwd", "bwd"):
        out[f"{prefix}.{direction}.w_ih"] = (4 * hidden, n_in)
        out[f"{prefix}.{direction}.w_hh"] = (4 * hidden, hidden)
        out[f"{prefix}.{direction}.b"] = (4 * hidden,)
    return out


def attention_shapes(prefix: str, d: int) -> dict[str, tuple]:
    return {f"{prefix}.u": (d,), f"{prefix}.w": (d, d), f"{prefix}.b": (d,)}


def ffnn_shapes(prefix: str, widths) -> dict[str, tuple]:
    out = {}
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        out[f"{prefix}.{i}.w"] = (b, a)
        out[f"{prefix}.{i}.b"] = (b,)
    return out


def init_array(name: str, shape, rng: np.random.Generator) -> np.ndarray:
    """Initial value for a parameter, chosen by its name suffix.

    Weight matrices and bi-affine tensors are uniform in +-sqrt(1/fan_in);
    biases are zero except LSTM forget gates, which start at 1.0.
    """
    leaf = name.rsplit(".", 1)[-1]
    if name.startswith("emb."):
        table = rng.standard_normal(shape)
        if leaf == "word":
            table[0] = 0.0  # PAD
        return table
    if leaf == "b":
        b = np.zeros(shape)
        if ".fwd." in name or ".bwd." in name:
            h = shape[0] // 4
            b[h:2 * h] = 1.0
        return b
    if len(shape) == 1:  # attention query
        return uniform_init(rng, shape, shape[0])
    if len(shape) == 3:
        return uniform_init(rng, shape, shape[0])
    return uniform_init(rng, shape, shape[1])


# -- embeddings ---------------------------------------------------------------


class EmbeddingTable:
    """A lookup table backed by a (possibly frozen) parameter tensor."""

    def __init__(self, name: str, weights: Tensor):
        self.name = name
        self.weights = weights

    @property
    def rows(self):
        return self.weights.shape[0]

    @property
    def dim(self):
        return self.weights.shape[1]

    @property
    def frozen(self):
        return not self.weights.requires_grad

    def lookup(self, ids) -> Tensor:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.rows):
            bad = ids[(ids < 0) | (ids >= self.rows)][0]
            raise IndexError(f"embedding table {self.name!r}: id {bad} outside [0, {self.rows})")
        return ad.take(self.weights, ids)


def embedding_lookup(table: EmbeddingTable, ids) -> Tensor:
    return table.lookup(ids)


# -- recurrent ------------------------------------------------------------------


def bilstm(x: Tensor, lengths, params: ParameterSet, prefix: str) -> Tensor:
    """Bidirectional LSTM over a padded batch [B x T x in] -> [B x T x 2h].

    Position t holds the forward state after tokens 0..t next to the
    backward state after tokens len-1..t.  Padded positions are zero.
    """
    fwd = ad.lstm(x, lengths, params[f"{prefix}.fwd.w_ih"], params[f"{prefix}.fwd.w_hh"],
                  params[f"{prefix}.fwd.b"])
    rev = ad.reverse_sequences(x, lengths)
    bwd = ad.lstm(rev, lengths, params[f"{prefix}.bwd.w_ih"], params[f"{prefix}.bwd.w_hh"],
                  params[f"{prefix}.bwd.b"])
    return ad.concat([fwd, ad.reverse_sequences(bwd, lengths)], axis=-1)


def bilstm_forward(seq: Tensor, params: ParameterSet, prefix: str) -> Tensor:
    """Single sequence [n x in] -> [n x 2h]."""
    if seq.ndim != 2 or seq.shape[0] == 0:
        raise DimensionError(f"bilstm_forward needs a nonempty [n x in] sequence, got {seq.shape}")
    n = seq.shape[0]
    out = bilstm(ad.reshape(seq, (1,) + seq.shape), [n], params, prefix)
    return ad.reshape(out, out.shape[1:])


# -- attention -------------------------------------------------------------------


def additive_attention_pool(h: Tensor, params: ParameterSet, prefix: str, mask=None):
    """Pool [..., n, d] rows with weights softmax_t(u . tanh(W h_t + b)).

    Returns ``(pooled [..., d], weights [..., n])``.
    """
    u = params[f"{prefix}.u"]
    if h.shape[-1] != u.shape[0]:
        raise DimensionError(f"attention {prefix!r}: width {u.shape[0]} vs states {h.shape}")
    hidden = ad.tanh(ad.linear(h, params[f"{prefix}.w"], params[f"{prefix}.b"]))
    scores = ad.linear(hidden, ad.reshape(u, (1, u.shape[0])))
    scores = ad.reshape(scores, scores.shape[:-1])
    if mask is None:
        mask = np.ones(scores.shape, dtype=bool)
    weights = ad.masked_softmax(scores, mask)
    return ad.weighted_sum(weights, h), weights


def masked_mean(h: Tensor, mask) -> Tensor:
    """Mean of valid rows of [..., n, d] as a constant-weight sum."""
    m = np.asarray(mask, dtype=np.float64)
    counts = m.sum(axis=-1, keepdims=True)
    if (counts == 0).any():
        raise ad.DegenerateMaskError("masked_mean: no valid position")
    return ad.weighted_sum(Tensor(m / counts), h)


# -- feed-forward -------------------------------------------------------------------


def ffnn_relu(x: Tensor, params: ParameterSet, prefix: str, depth: int,
              dropout_p: float = 0.0, train: bool = False, rng=None) -> Tensor:
    """Affine+ReLU on every layer but the last, which is affine only."""
    for i in range(depth):
        w = params[f"{prefix}.{i}.w"]
        if x.shape[-1] != w.shape[1]:
            raise DimensionError(f"ffnn {prefix!r} layer {i}: input {x.shape} vs weight {w.shape}")
        x = ad.linear(x, w, params[f"{prefix}.{i}.b"])
        if i < depth - 1:
            x = dropout_apply(ad.relu(x), dropout_p, train, rng)
    return x


# -- bi-affine -------------------------------------------------------------------------


def biaffine(e_a: Tensor, e_b: Tensor, r: Tensor) -> Tensor:
    """One output coordinate per slice: out_i = e_a^T R[:, :, i] e_b."""
    return ad.biaffine(e_a, e_b, r)


# -- dropout ------------------------------------------------------------------------------


def dropout_apply(x: Tensor, p: float, train: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity in eval mode or when p == 0."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    if not train or p == 0.0:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return ad.mul(x, Tensor(keep))
