"""Small fp64 neural-network kernel with hand-written reverse-mode gradients.

Every differentiable op comes as a ``*_forward`` returning its output plus a
cache, and a matching ``*_backward`` consuming the upstream gradient and that
cache.  Batched tensors are laid out batch x time x feature.  Sequences carry
explicit lengths; steps past a row's length are never mixed into its state.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, fields

import numpy as np

from .errors import FormatError, ShapeError

CHECKPOINT_MAGIC = b"DCKPT1"


def sigmoid(x):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# ---------------------------------------------------------------------------
# Parameter containers
# ---------------------------------------------------------------------------


@dataclass
class GruParams:
    W_z: np.ndarray
    W_r: np.ndarray
    W_h: np.ndarray
    U_z: np.ndarray
    U_r: np.ndarray
    U_h: np.ndarray
    b_z: np.ndarray
    b_r: np.ndarray
    b_h: np.ndarray

    def __post_init__(self):
        n_in, hidden = self.W_z.shape
        for name in ("W_r", "W_h"):
            if getattr(self, name).shape != (n_in, hidden):
                raise ShapeError(f"{name} has shape {getattr(self, name).shape}, expected {(n_in, hidden)}")
        for name in ("U_z", "U_r", "U_h"):
            if getattr(self, name).shape != (hidden, hidden):
                raise ShapeError(f"{name} must be {hidden}x{hidden}")
        for name in ("b_z", "b_r", "b_h"):
            if getattr(self, name).shape != (hidden,):
                raise ShapeError(f"{name} must have length {hidden}")

    @property
    def in_dim(self) -> int:
        return self.W_z.shape[0]

    @property
    def hidden(self) -> int:
        return self.W_z.shape[1]

    @classmethod
    def names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def from_dict(cls, params: dict, prefix: str) -> "GruParams":
        return cls(**{n: params[f"{prefix}.{n}"] for n in cls.names()})

    def to_dict(self, prefix: str) -> dict:
        return {f"{prefix}.{n}": getattr(self, n) for n in self.names()}

    @classmethod
    def zeros(cls, in_dim: int, hidden: int) -> "GruParams":
        w = {n: np.zeros((in_dim, hidden)) for n in ("W_z", "W_r", "W_h")}
        u = {n: np.zeros((hidden, hidden)) for n in ("U_z", "U_r", "U_h")}
        b = {n: np.zeros(hidden) for n in ("b_z", "b_r", "b_h")}
        return cls(**w, **u, **b)


@dataclass
class DenseParams:
    M: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        if self.M.ndim != 2 or self.b.shape != (self.M.shape[1],):
            raise ShapeError(f"dense weight {self.M.shape} and bias {self.b.shape} disagree")

    @classmethod
    def from_dict(cls, params: dict, prefix: str) -> "DenseParams":
        return cls(params[f"{prefix}.M"], params[f"{prefix}.b"])

    def to_dict(self, prefix: str) -> dict:
        return {f"{prefix}.M": self.M, f"{prefix}.b": self.b}


def zeros_like_params(params: dict) -> dict:
    """A gradient store: one zero tensor per parameter, same names and shapes."""
    return {name: np.zeros_like(value) for name, value in params.items()}


# ---------------------------------------------------------------------------
# Initializers
# ---------------------------------------------------------------------------


def _as_rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def orthogonal_init(rows: int, cols: int, seed) -> np.ndarray:
    """Orthogonal matrix from the QR factorization of a seeded Gaussian draw.

    Columns of Q are flipped so that diag(R) > 0, which makes the result a
    deterministic function of the draw.  Wide shapes return the transpose
    of the tall case, so rows (not columns) are orthonormal.
    """
    rng = _as_rng(seed)
    tall = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(tall)
    signs = np.where(np.diag(r) < 0, -1.0, 1.0)
    q = q * signs
    return q if rows >= cols else q.T


def glorot_uniform(rows: int, cols: int, seed) -> np.ndarray:
    rng = _as_rng(seed)
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


def init_gru(in_dim: int, hidden: int, rng) -> GruParams:
    rng = _as_rng(rng)
    return GruParams(
        W_z=glorot_uniform(in_dim, hidden, rng),
        W_r=glorot_uniform(in_dim, hidden, rng),
        W_h=glorot_uniform(in_dim, hidden, rng),
        U_z=orthogonal_init(hidden, hidden, rng),
        U_r=orthogonal_init(hidden, hidden, rng),
        U_h=orthogonal_init(hidden, hidden, rng),
        b_z=np.zeros(hidden),
        b_r=np.zeros(hidden),
        b_h=np.zeros(hidden),
    )


def init_dense(in_dim: int, out_dim: int, rng) -> DenseParams:
    return DenseParams(glorot_uniform(in_dim, out_dim, _as_rng(rng)), np.zeros(out_dim))


# ---------------------------------------------------------------------------
# GRU
# ---------------------------------------------------------------------------


def _fused(p: GruParams):
    w = np.concatenate([p.W_z, p.W_r, p.W_h], axis=1)
    u = np.concatenate([p.U_z, p.U_r], axis=1)
    b = np.concatenate([p.b_z, p.b_r, p.b_h])
    return w, u, b


def _step(h_prev, x, w, u, u_h, b, hidden):
    xw = x @ w + b
    hu = h_prev @ u
    z = sigmoid(xw[..., :hidden] + hu[..., :hidden])
    r = sigmoid(xw[..., hidden : 2 * hidden] + hu[..., hidden:])
    rh = r * h_prev
    cand = np.tanh(xw[..., 2 * hidden :] + rh @ u_h)
    h = (1.0 - z) * h_prev + z * cand
    return h, z, r, rh, cand


def gru_step(h_prev: np.ndarray, x: np.ndarray, p: GruParams) -> np.ndarray:
    """One GRU update; works on single vectors or on batch rows."""
    if np.shape(x)[-1] != p.in_dim or np.shape(h_prev)[-1] != p.hidden:
        raise ShapeError(f"gru_step: x dim {np.shape(x)[-1]} / h dim {np.shape(h_prev)[-1]} vs params {p.in_dim}/{p.hidden}")
    w, u, b = _fused(p)
    return _step(np.asarray(h_prev, float), np.asarray(x, float), w, u, p.U_h, b, p.hidden)[0]


@dataclass
class GruCache:
    inputs: np.ndarray
    lengths: np.ndarray
    steps: list


def gru_forward(inputs: np.ndarray, lengths: np.ndarray, p: GruParams, h0=None):
    """Run a GRU over a padded batch.

    Returns ``(states, last, cache)``: ``states`` is B x T x H with zeros past
    each row's length, ``last`` is each row's state at its own length.
    """
    batch, steps, n_in = inputs.shape
    if n_in != p.in_dim:
        raise ShapeError(f"GRU input dim {n_in} != {p.in_dim}")
    lengths = np.asarray(lengths)
    hidden = p.hidden
    w, u, b = _fused(p)
    h = np.zeros((batch, hidden)) if h0 is None else np.array(h0, dtype=float)
    states = np.zeros((batch, steps, hidden))
    cache = []
    for t in range(steps):
        live = t < lengths
        h_prev = h
        h_new, z, r, rh, cand = _step(h_prev, inputs[:, t], w, u, p.U_h, b, hidden)
        h = np.where(live[:, None], h_new, h_prev)
        states[live, t] = h[live]
        cache.append((h_prev, z, r, rh, cand, live))
    return states, h, GruCache(inputs, lengths, cache)


def gru_backward(d_states, d_last, cache: GruCache, p: GruParams):
    """Gradients wrt inputs and parameters; ``d_states``/``d_last`` may be None."""
    inputs = cache.inputs
    batch, steps, _ = inputs.shape
    hidden = p.hidden
    w, u, _ = _fused(p)
    dw = np.zeros_like(w)
    du = np.zeros_like(u)
    du_h = np.zeros_like(p.U_h)
    db = np.zeros(3 * hidden)
    d_inputs = np.zeros_like(inputs)
    dh = np.zeros((batch, hidden)) if d_last is None else np.array(d_last, dtype=float)
    for t in reversed(range(steps)):
        h_prev, z, r, rh, cand, live = cache.steps[t]
        mask = live[:, None]
        if d_states is not None:
            dh = dh + np.where(mask, d_states[:, t], 0.0)
        d_step = np.where(mask, dh, 0.0)
        d_cand_pre = d_step * z * (1.0 - cand**2)
        dz_pre = d_step * (cand - h_prev) * z * (1.0 - z)
        d_rh = d_cand_pre @ p.U_h.T
        dr_pre = d_rh * h_prev * r * (1.0 - r)
        d_gates_h = np.concatenate([dz_pre, dr_pre], axis=1)
        d_gates_x = np.concatenate([dz_pre, dr_pre, d_cand_pre], axis=1)

        du_h += rh.T @ d_cand_pre
        du += h_prev.T @ d_gates_h
        dw += inputs[:, t].T @ d_gates_x
        db += d_gates_x.sum(axis=0)
        d_inputs[:, t] = d_gates_x @ w.T

        dh_prev = d_step * (1.0 - z) + d_rh * r + d_gates_h @ u.T
        dh = np.where(mask, dh_prev, dh)
    grads = GruParams(
        W_z=dw[:, :hidden], W_r=dw[:, hidden : 2 * hidden], W_h=dw[:, 2 * hidden :],
        U_z=du[:, :hidden], U_r=du[:, hidden:], U_h=du_h,
        b_z=db[:hidden], b_r=db[hidden : 2 * hidden], b_h=db[2 * hidden :],
    )
    return d_inputs, grads


def gru_stack_forward(inputs, lengths, layers):
    """Stacked GRU: each layer reads the (masked) state sequence of the one below."""
    caches = []
    x = inputs
    last = None
    for p in layers:
        x, last, cache = gru_forward(x, lengths, p)
        caches.append(cache)
    return x, last, caches


def gru_stack_backward(d_states, d_last, caches, layers):
    grads = [None] * len(layers)
    for i in reversed(range(len(layers))):
        d_states, grads[i] = gru_backward(d_states, d_last, caches[i], layers[i])
        d_last = None
    return d_states, grads


def gru_encode(seq: np.ndarray, true_len: int, p, h0=None):
    """Encode one T x in sequence; returns (T x H states, state at ``true_len``).

    ``p`` is a GruParams or a list of them (stacked layers).  States past
    ``true_len`` are reported as zeros and never computed into the result.
    """
    seq = np.asarray(seq, dtype=float)
    if not 1 <= true_len <= seq.shape[0]:
        raise ValueError(f"true_len {true_len} outside [1, {seq.shape[0]}]")
    layers = [p] if isinstance(p, GruParams) else list(p)
    x = seq[None, :true_len]
    lengths = np.array([true_len])
    last = None
    for i, layer in enumerate(layers):
        x, last, _ = gru_forward(x, lengths, layer, h0 if i == 0 else None)
    states = np.zeros((seq.shape[0], layers[-1].hidden))
    states[:true_len] = x[0]
    return states, last[0]


# ---------------------------------------------------------------------------
# Dense, softmax, attention, dropout
# ---------------------------------------------------------------------------


def dense_forward(x, p: DenseParams, activation: str = "none"):
    if x.shape[-1] != p.M.shape[0]:
        raise ShapeError(f"dense input dim {x.shape[-1]} != {p.M.shape[0]}")
    y = x @ p.M + p.b
    if activation == "tanh":
        y = np.tanh(y)
    elif activation != "none":
        raise ValueError(f"unknown activation {activation!r}")
    return y, (x, y, activation)


def dense_backward(dy, cache, p: DenseParams):
    x, y, activation = cache
    if activation == "tanh":
        dy = dy * (1.0 - y**2)
    return dy @ p.M.T, DenseParams(x.T @ dy, dy.sum(axis=0))


def dense(x, p: DenseParams, activation: str = "none"):
    return dense_forward(np.asarray(x, dtype=float), p, activation)[0]


def softmax(logits):
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits):
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax_xent(logits, label: int):
    """Class probabilities and negative log-likelihood of ``label``."""
    logits = np.asarray(logits, dtype=float)
    if logits.shape[-1] < 2:
        raise ValueError("need at least two classes")
    if not 0 <= label < logits.shape[-1]:
        raise ValueError(f"label {label} out of range for {logits.shape[-1]} classes")
    return softmax(logits), float(-log_softmax(logits)[label])


def xent_forward(logits, labels):
    """Mean negative log-likelihood over the batch."""
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise ValueError("label out of range")
    logp = log_softmax(logits)
    loss = -logp[np.arange(len(labels)), labels].mean()
    return np.exp(logp), float(loss)


def xent_backward(probs, labels):
    grad = probs.copy()
    grad[np.arange(len(labels)), labels] -= 1.0
    return grad / len(labels)


def attention_forward(context, states, lengths):
    """Dot-product attention of ``context`` (B x H) over ``states`` (B x T x H)."""
    if context.shape[-1] != states.shape[-1]:
        raise ShapeError(f"context dim {context.shape[-1]} != state dim {states.shape[-1]}")
    valid = np.arange(states.shape[1])[None, :] < np.asarray(lengths)[:, None]
    scores = np.einsum("bth,bh->bt", states, context)
    top = np.max(np.where(valid, scores, -np.inf), axis=1, keepdims=True)
    e = np.where(valid, np.exp(np.where(valid, scores - top, 0.0)), 0.0)
    weights = e / e.sum(axis=1, keepdims=True)
    summary = np.einsum("bt,bth->bh", weights, states)
    return weights, summary, (context, states, weights)


def attention_backward(d_summary, cache):
    context, states, weights = cache
    d_weights = np.einsum("bh,bth->bt", d_summary, states)
    d_scores = weights * (d_weights - np.sum(weights * d_weights, axis=1, keepdims=True))
    d_states = weights[:, :, None] * d_summary[:, None, :] + d_scores[:, :, None] * context[:, None, :]
    d_context = np.einsum("bt,bth->bh", d_scores, states)
    return d_context, d_states


def attention(context, states, true_len: int):
    """Single-sequence attention: returns (weights over T, weighted summary)."""
    states = np.asarray(states, dtype=float)
    if true_len < 1:
        raise ValueError("attention needs at least one valid position")
    w, z, _ = attention_forward(np.asarray(context, float)[None], states[None], [true_len])
    return w[0], z[0]


def dropout_forward(x, rate: float, rng):
    if rate <= 0.0:
        return x, None
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * keep, keep


def dropout_backward(dy, keep):
    return dy if keep is None else dy * keep


# ---------------------------------------------------------------------------
# Optimization
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    step: int = 0
    m: dict = None
    v: dict = None


def adam_step(params: dict, grads: dict, state: AdamState, lr: float = 1e-3,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8, skip=()) -> AdamState:
    """Bias-corrected Adam update applied in place to ``params``."""
    if state.m is None:
        state.m = zeros_like_params(params)
        state.v = zeros_like_params(params)
    state.step += 1
    corr1 = 1.0 - beta1**state.step
    corr2 = 1.0 - beta2**state.step
    for name, g in grads.items():
        if name in skip:
            continue
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        params[name] -= lr * (m / corr1) / (np.sqrt(v / corr2) + eps)
    return state


def global_norm(grads: dict) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_grad_norm(grads: dict, max_norm: float) -> float:
    """Rescale all gradients together so their global L2 norm is at most ``max_norm``."""
    norm = global_norm(grads)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path, config: dict, tensors: dict) -> None:
    """Write ``DCKPT1 | u32 len | JSON | u32 count | tensors``.

    Each tensor is ``u32 name_len | name | u32 rank | rank x u32 dims |
    float64 data`` (row-major, little endian).  Tensor order is the dict
    order, so round trips are bit-exact.
    """
    blob = json.dumps(config, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(tensors)))
        for name, value in tensors.items():
            arr = np.array(value, dtype="<f8", order="C")
            key = name.encode()
            fh.write(struct.pack("<I", len(key)))
            fh.write(key)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path):
    """Return (config dict, ordered name -> float64 array)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:6] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint (magic {data[:6]!r})")
    try:
        off = 6
        (n,) = struct.unpack_from("<I", data, off)
        off += 4
        config = json.loads(data[off : off + n])
        off += n
        (count,) = struct.unpack_from("<I", data, off)
        off += 4
        tensors = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<I", data, off)
            off += 4
            name = data[off : off + n].decode()
            off += n
            (rank,) = struct.unpack_from("<I", data, off)
            off += 4
            shape = struct.unpack_from(f"<{rank}I", data, off)
            off += 4 * rank
            size = int(np.prod(shape, dtype=np.int64))
            if off + 8 * size > len(data):
                raise FormatError(f"{path}: truncated tensor {name!r}")
            tensors[name] = np.frombuffer(data, dtype="<f8", count=size, offset=off).reshape(shape).copy()
            off += 8 * size
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt checkpoint ({exc})") from exc
    return config, tensors
