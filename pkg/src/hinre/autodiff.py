"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every differentiable operation is a module-level function that computes its
output with numpy and, when a :class:`Tape` is active and an input requires a
gradient, appends a record holding the closure that maps the output gradient
to input gradients.  :func:`backward` walks the records of one tape exactly
once, newest first.

Binary elementwise ops require equal shapes.  The only implicit broadcast is
scalar-by-tensor (a Python number or a shape-``()`` tensor).
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np


class DimensionError(ValueError):
    pass


class DegenerateMaskError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


class Tensor:
    """An n-dimensional double-precision array that may carry a gradient."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_record")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._record = None  # (tape, index) for op outputs, None for leaves

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, requires_grad=False, name=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------


class Record:
    __slots__ = ("op", "inputs", "output", "backward")

    def __init__(self, op, inputs, output, backward):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward = backward


_active_tapes: list = []


class Tape:
    """Ordered log of differentiable operations.

    Use as a context manager; operations executed inside the block are
    recorded when at least one input requires a gradient.
    """

    def __init__(self):
        self.records: list[Record] = []

    def __enter__(self):
        _active_tapes.append(self)
        return self

    def __exit__(self, *exc):
        _active_tapes.remove(self)
        return False

    def __len__(self):
        return len(self.records)

    def ops(self) -> list[str]:
        return [r.op for r in self.records]


def current_tape():
    return _active_tapes[-1] if _active_tapes else None


@contextlib.contextmanager
def no_tape():
    """Temporarily stop recording (evaluation, finite differences)."""
    saved = _active_tapes[:]
    _active_tapes.clear()
    try:
        yield
    finally:
        _active_tapes.extend(saved)


# op name -> factor applied to that op's parameter gradients (fault injection)
_faults: dict[str, float] = {}


@contextlib.contextmanager
def inject_backward_fault(op: str, factor: float = 1.5):
    """Scale the leaf gradients produced by ``op``'s backward rule.

    Only for testing that gradient checking notices a broken rule.
    """
    _faults[op] = factor
    try:
        yield
    finally:
        _faults.pop(op, None)


def _emit(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._record = None
    tape = current_tape()
    needs = any(t.requires_grad for t in inputs)
    out.requires_grad = needs and tape is not None
    if out.requires_grad:
        tape.records.append(Record(op, tuple(inputs), out, backward_fn))
        out._record = (tape, len(tape.records) - 1)
    return out


def backward(loss: Tensor, params: Iterable[Tensor] | None = None, tape: Tape | None = None):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires_grad leaf.

    ``params``, when given, are guaranteed a (possibly zero) ``.grad`` array
    afterwards, so tensors that did not participate read as zero.
    """
    if loss.data.shape != ():
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    if params is not None:
        for p in params:
            if p.requires_grad and p.grad is None:
                p.grad = np.zeros_like(p.data)
    if loss._record is None:
        if not loss.requires_grad:
            raise TapeError("loss was not produced on a tape and does not require grad")
        _accumulate_leaf(loss, np.ones(()))
        return
    owner, index = loss._record
    if tape is not None and owner is not tape:
        raise TapeError("loss is not on the given tape")
    grads = {id(loss): np.ones(())}
    for rec in reversed(owner.records[: index + 1]):
        g = grads.pop(id(rec.output), None)
        if g is None:
            continue
        in_grads = rec.backward(g)
        for inp, gi in zip(rec.inputs, in_grads):
            if gi is None or not inp.requires_grad:
                continue
            if inp._record is None:
                if rec.op in _faults:
                    gi = gi * _faults[rec.op]
                _accumulate_leaf(inp, gi)
            else:
                key = id(inp)
                prev = grads.get(key)
                grads[key] = gi if prev is None else prev + gi


def _accumulate_leaf(t: Tensor, g):
    g = np.asarray(g, dtype=np.float64)
    if g.shape != t.data.shape:
        raise DimensionError(f"gradient shape {g.shape} does not match tensor shape {t.shape}")
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad += g


# ---------------------------------------------------------------------------
# Elementwise and structural ops
# ---------------------------------------------------------------------------


def _binary_operands(a, b, op):
    a = as_tensor(a)
    b = as_tensor(b)
    if a.shape != b.shape and a.shape != () and b.shape != ():
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")
    return a, b


def _unbroadcast(g, shape):
    return np.asarray(g.sum()) if shape == () and g.shape != () else g


def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "add")
    return _emit("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "sub")
    return _emit("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    """Hadamard product (or scalar scaling)."""
    a, b = _binary_operands(a, b, "mul")
    return _emit("mul", a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


hadamard = mul


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _emit("tanh", y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)
    return _emit("sigmoid", y, (x,), lambda g: (g * y * (1.0 - y),))


def _sigmoid(z):
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class _KinkMonitor:
    """Tracks, while active, the smallest |input| seen by relu and the
    on/off pattern of every relu unit."""

    active = False
    closest = np.inf
    pattern: list = []


@contextlib.contextmanager
def watch_relu_kinks():
    _KinkMonitor.active = True
    _KinkMonitor.closest = np.inf
    _KinkMonitor.pattern = []
    try:
        yield _KinkMonitor
    finally:
        _KinkMonitor.active = False


def relu(x: Tensor) -> Tensor:
    # subgradient 0 at exactly 0
    pos = x.data > 0
    if _KinkMonitor.active and x.data.size:
        _KinkMonitor.closest = min(_KinkMonitor.closest, float(np.abs(x.data).min()))
        _KinkMonitor.pattern.append(np.packbits(pos).tobytes())
    return _emit("relu", np.where(pos, x.data, 0.0), (x,), lambda g: (g * pos,))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _emit("exp", y, (x,), lambda g: (g * y,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return _emit("matmul", a.data @ b.data, (a, b),
                 lambda g: (g @ b.data.T, a.data.T @ g))


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w.T + b`` over the last axis of ``x``; ``w`` is [out x in]."""
    if w.ndim != 2 or x.ndim < 1 or x.shape[-1] != w.shape[1]:
        raise DimensionError(f"linear: input {x.shape} incompatible with weight {w.shape}")
    if b is not None and b.shape != (w.shape[0],):
        raise DimensionError(f"linear: bias {b.shape} incompatible with weight {w.shape}")
    y = x.data @ w.data.T
    if b is not None:
        y = y + b.data
    xs = x.data

    def bw(g):
        gx = g @ w.data
        gw = g.reshape(-1, g.shape[-1]).T @ xs.reshape(-1, xs.shape[-1])
        gb = g.reshape(-1, g.shape[-1]).sum(axis=0) if b is not None else None
        return (gx, gw, gb) if b is not None else (gx, gw)

    inputs = (x, w, b) if b is not None else (x, w)
    return _emit("linear", y, inputs, bw)


def sum(x: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    y = np.asarray(x.data.sum(axis=axis))
    shape = x.shape

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _emit("sum", y, (x,), bw)


def mean(x: Tensor, axis=None) -> Tensor:
    n = x.size if axis is None else x.shape[axis]
    if n == 0:
        raise DimensionError(f"mean over empty axis of shape {x.shape}")
    return mul(sum(x, axis), 1.0 / n)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat of nothing")
    ax = axis % tensors[0].ndim
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or t.shape[:ax] + t.shape[ax + 1:] != ref[:ax] + ref[ax + 1:]:
            raise DimensionError(f"concat: shapes {ref} and {t.shape} disagree off axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)
    y = np.concatenate([t.data for t in tensors], axis=ax)

    def bw(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(tensors)))

    return _emit("concat", y, tensors, bw)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        y = x.data.reshape(shape)
    except ValueError as err:
        raise DimensionError(f"reshape: {x.shape} -> {shape}") from err
    old = x.shape
    return _emit("reshape", y, (x,), lambda g: (g.reshape(old),))


def take(x: Tensor, index) -> Tensor:
    """Gather rows (axis 0) of ``x``; output shape is index.shape + x.shape[1:]."""
    idx = np.asarray(index, dtype=np.int64)
    n = x.shape[0] if x.ndim else 0
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"take: index out of range for {n} rows")
    y = x.data[idx]
    shape = x.shape

    def bw(g):
        gx = np.zeros(shape)
        np.add.at(gx, idx.reshape(-1), g.reshape((-1,) + shape[1:]))
        return (gx,)

    return _emit("take", y, (x,), bw)


def masked_softmax(scores: Tensor, mask=None) -> Tensor:
    """Softmax over the last axis with invalid positions forced to exactly 0."""
    s = scores.data
    if mask is None:
        m = np.ones(s.shape, dtype=bool)
    else:
        m = np.asarray(mask, dtype=bool)
        if m.shape != s.shape:
            raise DimensionError(f"masked_softmax: mask {m.shape} vs scores {s.shape}")
    if s.ndim == 0:
        raise DimensionError("masked_softmax needs at least one axis")
    if not m.any(axis=-1).all():
        raise DegenerateMaskError("masked_softmax: every position is masked")
    top = np.where(m, s, -np.inf).max(axis=-1, keepdims=True)
    e = np.where(m, np.exp(np.where(m, s - top, 0.0)), 0.0)
    w = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (w * (g - (w * g).sum(axis=-1, keepdims=True)),)

    return _emit("masked_softmax", w, (scores,), bw)


def weighted_sum(weights: Tensor, values: Tensor) -> Tensor:
    """out[..., :] = sum_t weights[..., t] * values[..., t, :]."""
    if values.ndim != weights.ndim + 1 or values.shape[:-1] != weights.shape:
        raise DimensionError(f"weighted_sum: weights {weights.shape} vs values {values.shape}")
    w, v = weights.data, values.data
    y = np.einsum("...t,...td->...d", w, v)
    return _emit("weighted_sum", y, (weights, values),
                 lambda g: (np.einsum("...d,...td->...t", g, v), np.einsum("...t,...d->...td", w, g)))


def biaffine(a: Tensor, b: Tensor, r: Tensor) -> Tensor:
    """out[..., i] = sum_jk a[..., j] r[j, k, i] b[..., k]."""
    if r.ndim != 3 or a.shape != b.shape or a.shape[-1] != r.shape[0] or b.shape[-1] != r.shape[1]:
        raise DimensionError(f"biaffine: a {a.shape}, b {b.shape}, tensor {r.shape}")
    ad, bd, rd = a.data, b.data, r.data
    y = np.einsum("...j,jki,...k->...i", ad, rd, bd)

    def bw(g):
        ga = np.einsum("...i,jki,...k->...j", g, rd, bd)
        gb = np.einsum("...i,jki,...j->...k", g, rd, ad)
        n = ad.shape[-1]
        gr = np.einsum("pj,pk,pi->jki", ad.reshape(-1, n), bd.reshape(-1, n), g.reshape(-1, g.shape[-1]))
        return ga, gb, gr

    return _emit("biaffine", y, (a, b, r), bw)


def bce(probs: Tensor, target) -> Tensor:
    """Summed binary cross entropy, log arguments clamped at 1e-12."""
    y = np.asarray(target, dtype=np.float64)
    if y.shape != probs.shape:
        raise DimensionError(f"bce: probabilities {probs.shape} vs labels {y.shape}")
    p = probs.data
    lo, hi = 1e-12, 1.0 - 1e-12
    pc = np.clip(p, lo, hi)
    loss = -(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc)).sum()
    inside = (p >= lo) & (p <= hi)

    def bw(g):
        return (g * np.where(inside, -y / pc + (1.0 - y) / (1.0 - pc), 0.0),)

    return _emit("bce", np.asarray(loss), (probs,), bw)


def reverse_sequences(x: Tensor, lengths) -> Tensor:
    """Reverse each row's first ``lengths[b]`` steps along axis 1; padding stays put."""
    lengths = np.asarray(lengths, dtype=np.int64)
    if x.ndim < 2 or lengths.shape != (x.shape[0],):
        raise DimensionError(f"reverse_sequences: data {x.shape}, lengths {lengths.shape}")
    t = np.arange(x.shape[1])
    src = np.where(t[None, :] < lengths[:, None], lengths[:, None] - 1 - t[None, :], t[None, :])
    rows = np.arange(x.shape[0])[:, None]
    y = x.data[rows, src]

    def bw(g):
        gx = np.empty_like(g)
        gx[rows, src] = g  # src is a permutation per row
        return (gx,)

    return _emit("reverse_sequences", y, (x,), bw)


def lstm(x: Tensor, lengths, w_ih: Tensor, w_hh: Tensor, bias: Tensor) -> Tensor:
    """Unidirectional LSTM over a padded batch [B x T x in] from zero state.

    Gate order (input, forget, cell, output).  Outputs at t >= lengths[b] are
    zero.  Backpropagation through time is done in one fused record.
    """
    if x.ndim != 3:
        raise DimensionError(f"lstm: expected [batch x time x in], got {x.shape}")
    B, T, n_in = x.shape
    h = w_hh.shape[1]
    if w_ih.shape != (4 * h, n_in) or w_hh.shape != (4 * h, h) or bias.shape != (4 * h,):
        raise DimensionError(
            f"lstm: input {x.shape} vs weights {w_ih.shape}, {w_hh.shape}, bias {bias.shape}")
    lengths = np.asarray(lengths, dtype=np.int64)
    if T == 0 or lengths.shape != (B,) or (lengths < 1).any() or (lengths > T).any():
        raise DimensionError("lstm: every sequence needs 1 <= length <= padded time")
    xd, Wi, Wh = x.data, w_ih.data, w_hh.data
    xw = xd @ Wi.T + bias.data
    hs = np.zeros((T + 1, B, h), dtype=xw.dtype)
    cs = np.zeros((T + 1, B, h), dtype=xw.dtype)
    acts = np.empty((T, B, 4 * h), dtype=xw.dtype)
    for t in range(T):
        z = xw[:, t] + hs[t] @ Wh.T
        a = acts[t]
        a[:, :2 * h] = _sigmoid(z[:, :2 * h])
        a[:, 2 * h:3 * h] = np.tanh(z[:, 2 * h:3 * h])
        a[:, 3 * h:] = _sigmoid(z[:, 3 * h:])
        cs[t + 1] = a[:, h:2 * h] * cs[t] + a[:, :h] * a[:, 2 * h:3 * h]
        hs[t + 1] = a[:, 3 * h:] * np.tanh(cs[t + 1])
    mask = (np.arange(T)[None, :] < lengths[:, None]).astype(np.float64)[:, :, None]
    y = hs[1:].transpose(1, 0, 2) * mask

    def bw(g):
        gh = (g * mask).transpose(1, 0, 2)
        dz_all = np.empty((T, B, 4 * h))
        dh_next = np.zeros((B, h))
        dc_next = np.zeros((B, h))
        for t in range(T - 1, -1, -1):
            a = acts[t]
            i, f, c_hat, o = a[:, :h], a[:, h:2 * h], a[:, 2 * h:3 * h], a[:, 3 * h:]
            dh = gh[t] + dh_next
            tc = np.tanh(cs[t + 1])
            dc = dh * o * (1.0 - tc * tc) + dc_next
            dz = dz_all[t]
            dz[:, :h] = dc * c_hat * i * (1.0 - i)
            dz[:, h:2 * h] = dc * cs[t] * f * (1.0 - f)
            dz[:, 2 * h:3 * h] = dc * i * (1.0 - c_hat * c_hat)
            dz[:, 3 * h:] = dh * tc * o * (1.0 - o)
            dc_next = dc * f
            dh_next = dz @ Wh
        dz_bt = dz_all.transpose(1, 0, 2)
        gx = dz_bt @ Wi
        g_wi = dz_bt.reshape(-1, 4 * h).T @ xd.reshape(-1, n_in)
        g_wh = dz_all.reshape(-1, 4 * h).T @ hs[:-1].reshape(-1, h)
        g_b = dz_all.reshape(-1, 4 * h).sum(axis=0)
        return gx, g_wi, g_wh, g_b

    return _emit("lstm", y, (x, w_ih, w_hh, bias), bw)


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


class ParameterSet:
    """Named tensors, iterated in insertion order.

    Frozen entries are stored with ``requires_grad=False`` and never touched by
    optimizers.
    """

    def __init__(self):
        self._tensors: dict[str, Tensor] = {}

    def add(self, name: str, data, frozen=False) -> Tensor:
        if name in self._tensors:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(data, requires_grad=not frozen, name=name)
        self._tensors[name] = t
        return t

    def __getitem__(self, name) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name):
        return name in self._tensors

    def __iter__(self):
        return iter(self._tensors)

    def __len__(self):
        return len(self._tensors)

    def names(self) -> list[str]:
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def trainable(self) -> dict[str, Tensor]:
        return {k: t for k, t in self._tensors.items() if t.requires_grad}

    def count(self) -> int:
        return int(np.sum([t.size for t in self._tensors.values()], dtype=np.int64))

    def zero_grad(self):
        for t in self._tensors.values():
            if t.requires_grad:
                t.zero_grad()

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self._tensors.items()}

    def restore(self, arrays: dict[str, np.ndarray]):
        for k, arr in arrays.items():
            self._tensors[k].data = np.array(arr, dtype=np.float64)


# ---------------------------------------------------------------------------
# Finite-difference oracle
# ---------------------------------------------------------------------------


def _rel_error(fd: float, ad: float) -> float:
    return abs(fd - ad) / max(1e-8, abs(fd) + abs(ad))


# x87 extended precision where the platform has it, float64 otherwise
PROBE_DTYPE = np.longdouble if np.finfo(np.longdouble).eps < np.finfo(np.float64).eps else np.float64


def finite_diff_check(
    f: Callable[[], Tensor],
    params: dict[str, Tensor],
    eps: float = 1e-5,
    max_elements: int = 64,
    seed: int = 0,
    kink_tol: float = 1e-6,
    probe_dtype=PROBE_DTYPE,
) -> dict[str, float]:
    """Compare tape gradients of ``f`` with central differences.

    ``f`` rebuilds a scalar loss from the current parameter values.  Up to
    ``max_elements`` entries per parameter are probed (a fixed-seed sample
    when the tensor is larger).  Probes that bring any relu input within
    ``kink_tol`` of zero, or flip any relu unit relative to the unperturbed
    point, are replaced by another element.

    The tape gradient is computed in float64.  Probe evaluations run with
    the checked parameters widened to ``probe_dtype`` so that the difference
    quotient can resolve gradients far below one ulp of the loss.
    Returns the max relative error per parameter name.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    for t in params.values():
        t.grad = None
    with Tape() as tape:
        loss = f()
    backward(loss, params.values(), tape=tape)
    analytic = {k: t.grad.copy() for k, t in params.items()}

    def probe():
        with no_tape(), watch_relu_kinks() as mon:
            val = f().data
        if not np.isfinite(val):
            raise FloatingPointError("finite_diff_check: loss is not finite at a probe point")
        return val, mon.closest, mon.pattern

    saved = {k: t.data for k, t in params.items()}
    rng = np.random.default_rng(seed)
    report = {}
    try:
        for t in params.values():
            t.data = t.data.astype(probe_dtype)
        _, _, base_pattern = probe()
        for name, t in params.items():
            flat = t.data.reshape(-1)
            order = np.arange(flat.size) if flat.size <= max_elements else rng.permutation(flat.size)
            worst, probed = 0.0, 0
            for j in order:
                if probed >= max_elements:
                    break
                orig = flat[j]
                flat[j] = orig + eps
                up, k_up, p_up = probe()
                flat[j] = orig - eps
                down, k_down, p_down = probe()
                flat[j] = orig
                if min(k_up, k_down) < kink_tol or p_up != base_pattern or p_down != base_pattern:
                    continue  # probe touches or crosses a relu kink
                fd = float((up - down) / (2 * probe_dtype(eps)))
                worst = max(worst, _rel_error(fd, float(analytic[name].reshape(-1)[j])))
                probed += 1
            report[name] = worst
    finally:
        for k, t in params.items():
            t.data = saved[k]
    return report
