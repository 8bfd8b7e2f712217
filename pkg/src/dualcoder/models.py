"""ARE, TRE, MDRE and MDREA classifiers assembled from :mod:`dualcoder.nn_core`.

ARE    logits = [h_audio, prosody] M + b
TRE    logits = h_text M + b
MDRE   A = tanh([h_audio, prosody] Wa + ba), T = tanh(h_text Wt + bt)
       logits = [A, T] M + b
MDREA  A as in MDRE; q = [h_audio, prosody] Wq + bq (projection to text size)
       a = softmax_t(q . h_t) over non-pad text steps, Z = sum_t a_t h_t
       logits = [Z, A] M + b
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import nn_core as nn
from .errors import ShapeError, StateError
from .text_pipeline import PAD_ID

VARIANTS = ("ARE", "TRE", "MDRE", "MDREA")
MFCC_DIM = 39
PROSODY_DIM = 35


@dataclass
class ModelConfig:
    variant: str = "MDRE"
    audio_hidden: int = 32
    text_hidden: int = 32
    fusion_dim: int = 32
    num_classes: int = 4
    max_audio_steps: int = 750
    max_text_steps: int = 128
    audio_layers: int = 1
    text_layers: int = 1
    embed_dim: int = 300
    vocab_size: int = 2  # _PAD_ and _UNK_; training sets the real size
    dropout: float = 0.0
    train_embeddings: bool = True
    seed: int = 0

    def __post_init__(self):
        self.variant = self.variant.upper()
        self.validate()

    @property
    def uses_audio(self) -> bool:
        return self.variant != "TRE"

    @property
    def uses_text(self) -> bool:
        return self.variant != "ARE"

    def validate(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.num_classes < 2:
            raise ValueError("num_classes must be at least 2")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        required = ["max_audio_steps", "max_text_steps"]
        if self.uses_audio:
            required += ["audio_hidden", "audio_layers"]
        if self.uses_text:
            required += ["text_hidden", "text_layers", "embed_dim", "vocab_size"]
        if self.variant in ("MDRE", "MDREA"):
            required.append("fusion_dim")
        for name in required:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive for {self.variant}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in data.items() if k in known})


@dataclass
class Batch:
    """Padded inputs for B utterances; unused modalities may be None."""

    mfcc: np.ndarray | None = None  # B x Ta x 39
    audio_len: np.ndarray | None = None
    prosody: np.ndarray | None = None  # B x 35
    tokens: np.ndarray | None = None  # B x Tt int
    text_len: np.ndarray | None = None
    labels: np.ndarray | None = None

    def __len__(self):
        for arr in (self.labels, self.audio_len, self.text_len):
            if arr is not None:
                return len(arr)
        return 0


def init_params(config: ModelConfig, embeddings: np.ndarray | None = None) -> dict:
    """Fresh parameters in a fixed order, all drawn from one seeded generator."""
    rng = np.random.default_rng(config.seed)
    params: dict[str, np.ndarray] = {}
    audio_out = text_out = 0
    if config.uses_audio:
        n_in = MFCC_DIM
        for layer in range(config.audio_layers):
            params.update(nn.init_gru(n_in, config.audio_hidden, rng).to_dict(f"audio_gru{layer}"))
            n_in = config.audio_hidden
        audio_out = config.audio_hidden + PROSODY_DIM
    if config.uses_text:
        if embeddings is None:
            embeddings = rng.uniform(-0.05, 0.05, size=(config.vocab_size, config.embed_dim))
            embeddings[PAD_ID] = 0.0
        if embeddings.shape != (config.vocab_size, config.embed_dim):
            raise ShapeError(f"embedding table {embeddings.shape} != ({config.vocab_size}, {config.embed_dim})")
        params["embedding"] = np.array(embeddings, dtype=float)
        n_in = config.embed_dim
        for layer in range(config.text_layers):
            params.update(nn.init_gru(n_in, config.text_hidden, rng).to_dict(f"text_gru{layer}"))
            n_in = config.text_hidden
        text_out = config.text_hidden

    variant = config.variant
    if variant == "ARE":
        cls_in = audio_out
    elif variant == "TRE":
        cls_in = text_out
    elif variant == "MDRE":
        params.update(nn.init_dense(audio_out, config.fusion_dim, rng).to_dict("audio_fc"))
        params.update(nn.init_dense(text_out, config.fusion_dim, rng).to_dict("text_fc"))
        cls_in = 2 * config.fusion_dim
    else:
        params.update(nn.init_dense(audio_out, config.fusion_dim, rng).to_dict("audio_fc"))
        params.update(nn.init_dense(audio_out, config.text_hidden, rng).to_dict("context_proj"))
        cls_in = config.text_hidden + config.fusion_dim
    params.update(nn.init_dense(cls_in, config.num_classes, rng).to_dict("classifier"))
    return params


class Model:
    """One model variant: parameters plus the forward/backward graph.

    ``loss`` records the forward pass; ``backward`` consumes it and returns a
    gradient store shaped like ``params``.  One instance must not be trained
    from two threads at once.
    """

    def __init__(self, config: ModelConfig, params: dict | None = None, embeddings=None):
        self.config = config
        self.params = init_params(config, embeddings) if params is None else params
        self._check_params()
        self._tape = None
        self.last_attention = None

    def _check_params(self):
        expected = init_params_shapes(self.config)
        got = {k: v.shape for k, v in self.params.items()}
        if got != expected:
            missing = set(expected) ^ set(got)
            raise ShapeError(f"parameters do not match config {self.config.variant}: {sorted(missing) or 'shape mismatch'}")

    @property
    def frozen(self) -> set:
        return set() if self.config.train_embeddings else {"embedding"}

    def _gru_layers(self, prefix, count):
        return [nn.GruParams.from_dict(self.params, f"{prefix}{i}") for i in range(count)]

    def _dense(self, prefix):
        return nn.DenseParams.from_dict(self.params, prefix)

    # -- branches ----------------------------------------------------------

    def _audio_forward(self, batch: Batch):
        lengths = np.minimum(np.asarray(batch.audio_len), self.config.max_audio_steps)
        if lengths.min() < 1:
            raise ValueError("audio sequence of length 0 has no representative state")
        if batch.mfcc.shape[-1] != MFCC_DIM or batch.prosody.shape[-1] != PROSODY_DIM:
            raise ShapeError("audio inputs must be B x T x 39 and B x 35")
        steps = int(lengths.max())
        layers = self._gru_layers("audio_gru", self.config.audio_layers)
        _, last, caches = nn.gru_stack_forward(batch.mfcc[:, :steps], lengths, layers)
        encoding = np.concatenate([last, batch.prosody], axis=1)
        return encoding, (layers, caches)

    def _audio_backward(self, d_encoding, tape, grads):
        layers, caches = tape
        d_last = d_encoding[:, : self.config.audio_hidden]
        _, layer_grads = nn.gru_stack_backward(None, d_last, caches, layers)
        for i, g in enumerate(layer_grads):
            _accumulate(grads, g.to_dict(f"audio_gru{i}"))

    def _text_forward(self, batch: Batch):
        lengths = np.asarray(batch.text_len)
        if lengths.min() < 1:
            raise ValueError("all-pad token sequence has no representative state")
        steps = int(lengths.max())
        ids = np.asarray(batch.tokens)[:, :steps]
        embedded = self.params["embedding"][ids]
        layers = self._gru_layers("text_gru", self.config.text_layers)
        states, last, caches = nn.gru_stack_forward(embedded, lengths, layers)
        return states, last, lengths, (ids, layers, caches)

    def _text_backward(self, d_states, d_last, tape, grads):
        ids, layers, caches = tape
        d_embedded, layer_grads = nn.gru_stack_backward(d_states, d_last, caches, layers)
        for i, g in enumerate(layer_grads):
            _accumulate(grads, g.to_dict(f"text_gru{i}"))
        if "embedding" not in self.frozen:
            d_table = np.zeros_like(self.params["embedding"])
            np.add.at(d_table, ids.reshape(-1), d_embedded.reshape(-1, d_embedded.shape[-1]))
            d_table[PAD_ID] = 0.0
            grads["embedding"] += d_table

    # -- full graph -------------------------------------------------------

    def forward(self, batch: Batch, training: bool = False, rng=None) -> np.ndarray:
        """Logits (B x C).  Records the tape used by :meth:`backward`."""
        variant = self.config.variant
        tape = {}
        if self.config.uses_audio:
            encoding, tape["audio"] = self._audio_forward(batch)
        if self.config.uses_text:
            text_states, text_last, text_len, tape["text"] = self._text_forward(batch)

        if variant == "ARE":
            features = encoding
        elif variant == "TRE":
            features = text_last
        elif variant == "MDRE":
            a_vec, tape["audio_fc"] = nn.dense_forward(encoding, self._dense("audio_fc"), "tanh")
            t_vec, tape["text_fc"] = nn.dense_forward(text_last, self._dense("text_fc"), "tanh")
            features = np.concatenate([a_vec, t_vec], axis=1)
        else:
            a_vec, tape["audio_fc"] = nn.dense_forward(encoding, self._dense("audio_fc"), "tanh")
            context, tape["context_proj"] = nn.dense_forward(encoding, self._dense("context_proj"))
            weights, summary, tape["attention"] = nn.attention_forward(context, text_states, text_len)
            features = np.concatenate([summary, a_vec], axis=1)
            full = np.zeros(np.shape(batch.tokens))
            full[:, : weights.shape[1]] = weights
            self.last_attention = full

        if training and self.config.dropout > 0:
            features, tape["dropout"] = nn.dropout_forward(features, self.config.dropout, rng)
        logits, tape["classifier"] = nn.dense_forward(features, self._dense("classifier"))
        self._tape = tape
        return logits

    def loss(self, batch: Batch, training: bool = False, rng=None) -> float:
        logits = self.forward(batch, training, rng)
        probs, value = nn.xent_forward(logits, batch.labels)
        self._tape["xent"] = (probs, np.asarray(batch.labels))
        self.last_probs = probs
        return value

    def backward(self) -> dict:
        """Exact gradients of the last recorded mean loss wrt every parameter."""
        if self._tape is None or "xent" not in self._tape:
            raise StateError("backward() called without a recorded loss; call loss() first")
        tape, self._tape = self._tape, None
        grads = nn.zeros_like_params(self.params)
        variant = self.config.variant

        d_logits = nn.xent_backward(*tape["xent"])
        d_features, g = nn.dense_backward(d_logits, tape["classifier"], self._dense("classifier"))
        _accumulate(grads, g.to_dict("classifier"))
        d_features = nn.dropout_backward(d_features, tape.get("dropout"))

        d_encoding = d_text_last = d_text_states = None
        if variant == "ARE":
            d_encoding = d_features
        elif variant == "TRE":
            d_text_last = d_features
        elif variant == "MDRE":
            fd = self.config.fusion_dim
            d_encoding, g = nn.dense_backward(d_features[:, :fd], tape["audio_fc"], self._dense("audio_fc"))
            _accumulate(grads, g.to_dict("audio_fc"))
            d_text_last, g = nn.dense_backward(d_features[:, fd:], tape["text_fc"], self._dense("text_fc"))
            _accumulate(grads, g.to_dict("text_fc"))
        else:
            th = self.config.text_hidden
            d_context, d_text_states = nn.attention_backward(d_features[:, :th], tape["attention"])
            d_encoding, g = nn.dense_backward(d_features[:, th:], tape["audio_fc"], self._dense("audio_fc"))
            _accumulate(grads, g.to_dict("audio_fc"))
            d_enc2, g = nn.dense_backward(d_context, tape["context_proj"], self._dense("context_proj"))
            _accumulate(grads, g.to_dict("context_proj"))
            d_encoding = d_encoding + d_enc2

        if d_encoding is not None:
            self._audio_backward(d_encoding, tape["audio"], grads)
        if d_text_last is not None or d_text_states is not None:
            self._text_backward(d_text_states, d_text_last, tape["text"], grads)
        return grads

    def predict_batch(self, batch: Batch):
        logits = self.forward(batch)
        self._tape = None
        return np.argmax(logits, axis=1), nn.softmax(logits)


def _accumulate(grads: dict, update: dict):
    for name, value in update.items():
        grads[name] += value


def init_params_shapes(config: ModelConfig) -> dict:
    """Parameter name -> shape for ``config``, without drawing random numbers."""
    shapes = {}
    audio_out = config.audio_hidden + PROSODY_DIM
    if config.uses_audio:
        n_in = MFCC_DIM
        for layer in range(config.audio_layers):
            shapes.update(_gru_shapes(f"audio_gru{layer}", n_in, config.audio_hidden))
            n_in = config.audio_hidden
    if config.uses_text:
        shapes["embedding"] = (config.vocab_size, config.embed_dim)
        n_in = config.embed_dim
        for layer in range(config.text_layers):
            shapes.update(_gru_shapes(f"text_gru{layer}", n_in, config.text_hidden))
            n_in = config.text_hidden
    v = config.variant
    if v == "ARE":
        cls_in = audio_out
    elif v == "TRE":
        cls_in = config.text_hidden
    elif v == "MDRE":
        shapes.update({"audio_fc.M": (audio_out, config.fusion_dim), "audio_fc.b": (config.fusion_dim,)})
        shapes.update({"text_fc.M": (config.text_hidden, config.fusion_dim), "text_fc.b": (config.fusion_dim,)})
        cls_in = 2 * config.fusion_dim
    else:
        shapes.update({"audio_fc.M": (audio_out, config.fusion_dim), "audio_fc.b": (config.fusion_dim,)})
        shapes.update({"context_proj.M": (audio_out, config.text_hidden), "context_proj.b": (config.text_hidden,)})
        cls_in = config.text_hidden + config.fusion_dim
    shapes.update({"classifier.M": (cls_in, config.num_classes), "classifier.b": (config.num_classes,)})
    return shapes


def _gru_shapes(prefix, n_in, hidden):
    out = {}
    for n in ("W_z", "W_r", "W_h"):
        out[f"{prefix}.{n}"] = (n_in, hidden)
    for n in ("U_z", "U_r", "U_h"):
        out[f"{prefix}.{n}"] = (hidden, hidden)
    for n in ("b_z", "b_r", "b_h"):
        out[f"{prefix}.{n}"] = (hidden,)
    return out


# ---------------------------------------------------------------------------
# Single-utterance entry points
# ---------------------------------------------------------------------------


def _single(mfcc=None, prosody=None, tokens=None) -> Batch:
    batch = Batch()
    if mfcc is not None:
        mfcc = np.asarray(mfcc, dtype=float)
        batch.mfcc = mfcc[None]
        batch.audio_len = np.array([mfcc.shape[0]])
        batch.prosody = np.asarray(prosody, dtype=float)[None]
    if tokens is not None:
        batch.tokens = np.asarray(tokens.ids)[None]
        batch.text_len = np.array([tokens.true_len])
    return batch


def _expect(model: Model, variant: str):
    if model.config.variant != variant:
        raise ValueError(f"model is {model.config.variant}, not {variant}")


def are_forward(mfcc, prosody, model: Model) -> np.ndarray:
    _expect(model, "ARE")
    return model.forward(_single(mfcc, prosody))[0]


def tre_forward(tokens, model: Model) -> np.ndarray:
    _expect(model, "TRE")
    return model.forward(_single(tokens=tokens))[0]


def mdre_forward(mfcc, prosody, tokens, model: Model) -> np.ndarray:
    _expect(model, "MDRE")
    return model.forward(_single(mfcc, prosody, tokens))[0]


def mdrea_forward(mfcc, prosody, tokens, model: Model):
    """Logits and the attention weights over all (padded) text positions."""
    _expect(model, "MDREA")
    logits = model.forward(_single(mfcc, prosody, tokens))[0]
    return logits, model.last_attention[0]


def predict(logits):
    """Arg-max class (lowest index wins ties) and the softmax probabilities."""
    logits = np.asarray(logits, dtype=float)
    return int(np.argmax(logits)), nn.softmax(logits)
