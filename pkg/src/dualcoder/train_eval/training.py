"""Per-fold data preparation, the training loop and trained-model checkpoints."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .. import CLASSES
from .. import nn_core as nn
from ..dsp_features import FrameSpec, extract_corpus
from ..errors import FormatError, TrainingError
from ..models import Batch, Model, ModelConfig
from ..text_pipeline import Vocabulary, build_vocab, encode, load_embeddings, tokenize
from .metrics import weighted_average_precision

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 32
    clip_norm: float = 5.0
    max_epochs: int = 100
    patience: int = 10
    global_vocab: bool = False
    embeddings_path: str | None = None
    track_train_acc: bool = False
    stop_at_train_acc: float | None = None

    def __post_init__(self):
        if self.lr < 0 or self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("lr >= 0, batch_size, max_epochs and patience >= 1 required")

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        return cls(**{k: v for k, v in data.items() if k in cls.__dataclass_fields__})


@dataclass
class Normalizer:
    """Per-dimension z-scoring fitted on training utterances only."""

    mfcc_mean: np.ndarray
    mfcc_std: np.ndarray
    prosody_mean: np.ndarray
    prosody_std: np.ndarray

    @classmethod
    def fit(cls, features) -> "Normalizer":
        frames = np.concatenate([f.mfcc for f in features], axis=0)
        prosody = np.stack([f.prosody for f in features])
        return cls(frames.mean(0), _safe_std(frames), prosody.mean(0), _safe_std(prosody))

    def to_tensors(self) -> dict:
        return {f"norm.{k}": v for k, v in asdict(self).items()}

    @classmethod
    def from_tensors(cls, tensors: dict) -> "Normalizer":
        return cls(**{k: tensors[f"norm.{k}"] for k in cls.__dataclass_fields__})


def _safe_std(x):
    std = x.std(axis=0)
    return np.where(std < 1e-8, 1.0, std)


@dataclass
class Encoded:
    """Model-ready inputs for one utterance."""

    mfcc: np.ndarray
    prosody: np.ndarray
    ids: np.ndarray
    text_len: int
    label: int


def encode_utterance(record, feats, vocab: Vocabulary, norm: Normalizer, config: ModelConfig) -> Encoded:
    mfcc = (feats.mfcc[: config.max_audio_steps] - norm.mfcc_mean) / norm.mfcc_std
    prosody = (feats.prosody - norm.prosody_mean) / norm.prosody_std
    seq = encode(tokenize(record.transcript), vocab, config.max_text_steps)
    return Encoded(mfcc, prosody, seq.ids, seq.true_len, CLASSES.index(record.label))


def collate(items: list[Encoded]) -> Batch:
    """Stack utterances, zero-padding MFCCs and trimming token ids to the batch maximum."""
    audio_len = np.array([it.mfcc.shape[0] for it in items])
    text_len = np.array([it.text_len for it in items])
    mfcc = np.zeros((len(items), int(audio_len.max()), items[0].mfcc.shape[1]))
    for i, it in enumerate(items):
        mfcc[i, : audio_len[i]] = it.mfcc
    width = max(1, int(text_len.max()))
    return Batch(
        mfcc=mfcc,
        audio_len=audio_len,
        prosody=np.stack([it.prosody for it in items]),
        tokens=np.stack([it.ids[:width] for it in items]),
        text_len=text_len,
        labels=np.array([it.label for it in items]),
    )


@dataclass
class TrainedModel:
    model: Model
    vocab: Vocabulary
    normalizer: Normalizer
    train_config: TrainConfig
    log: list = field(default_factory=list)
    best_epoch: int = 0
    best_dev_wap: float = 0.0
    info: dict = field(default_factory=dict)

    def encode(self, record, feats) -> Encoded:
        return encode_utterance(record, feats, self.vocab, self.normalizer, self.model.config)

    def predict(self, records, features: dict, batch_size: int = 64) -> np.ndarray:
        items = [self.encode(r, features[r.id]) for r in records]
        return predict_items(self.model, items, batch_size)


def predict_items(model: Model, items: list[Encoded], batch_size: int = 64) -> np.ndarray:
    preds = []
    for start in range(0, len(items), batch_size):
        classes, _ = model.predict_batch(collate(items[start : start + batch_size]))
        preds.append(classes)
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def features_for(records, features: dict | None, spec: FrameSpec = FrameSpec(), threads: int = 1) -> dict:
    """Return ``features`` or extract any that are missing, keyed by record id."""
    features = dict(features or {})
    missing = [r for r in records if r.id not in features]
    if missing:
        extracted = extract_corpus([r.wav for r in missing], spec, threads)
        features.update({r.id: f for r, f in zip(missing, extracted)})
    return features


def train(records, fold, model_config: ModelConfig, run_seed: int,
          train_config: TrainConfig = TrainConfig(), features: dict | None = None) -> TrainedModel:
    """Train one model on ``fold.train`` with early stopping on dev WAP.

    The returned model holds the parameters of the best dev epoch.  All
    randomness (init, shuffling, dropout) derives from ``run_seed``.
    """
    by_id = {r.id: r for r in records}
    features = features_for(records, features)
    train_recs = [by_id[i] for i in fold.train]
    dev_recs = [by_id[i] for i in fold.dev] or train_recs

    vocab_source = records if train_config.global_vocab else train_recs
    vocab = build_vocab(tokenize(r.transcript) for r in vocab_source)
    config = replace(model_config, vocab_size=len(vocab), seed=int(run_seed))
    embeddings = None
    if config.uses_text:
        embeddings = load_embeddings(train_config.embeddings_path, vocab, seed=int(run_seed), dim=config.embed_dim)
    model = Model(config, embeddings=embeddings)
    norm = Normalizer.fit([features[r.id] for r in train_recs])

    train_items = [encode_utterance(r, features[r.id], vocab, norm, config) for r in train_recs]
    dev_items = [encode_utterance(r, features[r.id], vocab, norm, config) for r in dev_recs]
    dev_labels = [it.label for it in dev_items]

    rng = np.random.default_rng([int(run_seed), 1])
    state = nn.AdamState()
    best_params = {k: v.copy() for k, v in model.params.items()}
    best_wap, best_epoch, waited = -1.0, 0, 0
    history = []
    for epoch in range(1, train_config.max_epochs + 1):
        order = rng.permutation(len(train_items))
        losses = []
        for b, start in enumerate(range(0, len(order), train_config.batch_size)):
            chunk = [train_items[i] for i in order[start : start + train_config.batch_size]]
            loss = model.loss(collate(chunk), training=True, rng=rng)
            if not np.isfinite(loss):
                ids = [train_recs[i].id for i in order[start : start + train_config.batch_size]]
                raise TrainingError(f"non-finite loss {loss} at epoch {epoch}, batch {b} (ids {ids[:5]}...)")
            grads = model.backward()
            nn.clip_grad_norm(grads, train_config.clip_norm)
            nn.adam_step(model.params, grads, state, lr=train_config.lr, skip=model.frozen)
            losses.append(loss)

        dev_wap = weighted_average_precision(predict_items(model, dev_items), dev_labels, config.num_classes)
        entry = {"epoch": epoch, "loss": float(np.mean(losses)), "dev_wap": dev_wap}
        if train_config.track_train_acc or train_config.stop_at_train_acc is not None:
            preds = predict_items(model, train_items)
            entry["train_acc"] = float(np.mean(preds == np.array([it.label for it in train_items])))
        history.append(entry)
        log.debug("epoch %d %s", epoch, entry)

        if dev_wap > best_wap:
            best_wap, best_epoch, waited = dev_wap, epoch, 0
            best_params = {k: v.copy() for k, v in model.params.items()}
        else:
            waited += 1
        target = train_config.stop_at_train_acc
        if target is not None and entry["train_acc"] >= target:
            best_params = {k: v.copy() for k, v in model.params.items()}
            best_epoch = epoch
            break
        if waited >= train_config.patience:
            break

    model.params = best_params
    return TrainedModel(model, vocab, norm, train_config, history, best_epoch, max(best_wap, 0.0),
                        info={"fold": fold.fold, "run_seed": int(run_seed)})


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_trained(path, trained: TrainedModel, extra: dict | None = None) -> None:
    config = {
        "model": trained.model.config.to_dict(),
        "train": asdict(trained.train_config),
        "vocab": list(trained.vocab.tokens),
        "best_epoch": trained.best_epoch,
        "best_dev_wap": trained.best_dev_wap,
        "log": trained.log,
        **trained.info,
        **(extra or {}),
    }
    tensors = dict(trained.model.params)
    tensors.update(trained.normalizer.to_tensors())
    nn.save_checkpoint(path, config, tensors)


def load_trained(path) -> TrainedModel:
    config, tensors = nn.load_checkpoint(path)
    try:
        model_config = ModelConfig.from_dict(config["model"])
        vocab = Vocabulary(tuple(config["vocab"]))
        norm = Normalizer.from_tensors(tensors)
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: checkpoint is missing model metadata ({exc})") from exc
    params = {k: v for k, v in tensors.items() if not k.startswith("norm.")}
    model = Model(model_config, params=params)
    info = {k: v for k, v in config.items() if k not in ("model", "train", "vocab", "best_epoch", "best_dev_wap", "log")}
    return TrainedModel(model, vocab, norm, TrainConfig.from_dict(config.get("train", {})), config.get("log", []),
                        config.get("best_epoch", 0), config.get("best_dev_wap", 0.0), info)
