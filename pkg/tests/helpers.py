"""Independent oracles used across the test modules."""

import cmath
import math

import numpy as np

from dualcoder.models import Batch


def naive_dft(x, nfft):
    """O(N^2) DFT of the zero-padded frame, straight from the definition."""
    x = list(x) + [0.0] * (nfft - len(x))
    out = []
    for k in range(nfft // 2 + 1):
        acc = 0j
        for n, v in enumerate(x):
            acc += v * cmath.exp(-2j * math.pi * k * n / nfft)
        out.append(acc)
    return np.array(out)


def naive_power(x, nfft):
    """One-sided power with the package's scaling (interior bins doubled, / nfft)."""
    spec = naive_dft(x, nfft)
    power = np.abs(spec) ** 2 / nfft
    power[1 : (nfft + 1) // 2] *= 2.0
    return power


def dft_matrix_power(frames, nfft):
    """Vectorized direct-summation DFT (still O(N^2), no FFT)."""
    n = np.arange(nfft)
    k = np.arange(nfft // 2 + 1)
    basis = np.exp(-2j * np.pi * np.outer(n, k) / nfft)
    padded = np.zeros((frames.shape[0], nfft))
    padded[:, : frames.shape[1]] = frames
    power = np.abs(padded @ basis) ** 2 / nfft
    power[:, 1 : (nfft + 1) // 2] *= 2.0
    return power


def sig(v):
    return 1.0 / (1.0 + math.exp(-v))


def gru_step_oracle(h, x, p):
    """Scalar-loop GRU step from the gate equations."""
    hidden = len(h)

    def row(vec, mat, j):
        return sum(vec[i] * mat[i][j] for i in range(len(vec)))

    z = [sig(row(x, p.W_z, j) + row(h, p.U_z, j) + p.b_z[j]) for j in range(hidden)]
    r = [sig(row(x, p.W_r, j) + row(h, p.U_r, j) + p.b_r[j]) for j in range(hidden)]
    rh = [r[j] * h[j] for j in range(hidden)]
    cand = [math.tanh(row(x, p.W_h, j) + row(rh, p.U_h, j) + p.b_h[j]) for j in range(hidden)]
    return np.array([(1 - z[j]) * h[j] + z[j] * cand[j] for j in range(hidden)])


def finite_difference_check(model, batch, step=1e-5, floor=1e-6):
    """Max elementwise relative error between backward() and central differences.

    Relative error is |a - n| / max(|a|, |n|, floor); the floor keeps
    exactly-zero and round-off-sized gradients from dominating.
    """
    model.loss(batch)
    analytic = model.backward()
    worst = 0.0
    for name, param in model.params.items():
        for idx in np.ndindex(param.shape):
            orig = param[idx]
            param[idx] = orig + step
            up = model.loss(batch)
            param[idx] = orig - step
            down = model.loss(batch)
            param[idx] = orig
            numeric = (up - down) / (2 * step)
            a = analytic[name][idx]
            worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), floor))
    model._tape = None
    return worst


def random_batch(rng, batch=2, t_audio=5, t_text=4, vocab=7, audio_len=None, text_len=None, labels=None):
    audio_len = np.array(audio_len if audio_len is not None else rng.integers(1, t_audio + 1, size=batch))
    text_len = np.array(text_len if text_len is not None else rng.integers(1, t_text + 1, size=batch))
    tokens = np.zeros((batch, t_text), dtype=np.int64)
    mfcc = np.zeros((batch, t_audio, 39))
    for b in range(batch):
        tokens[b, : text_len[b]] = rng.integers(1, vocab, size=text_len[b])
        mfcc[b, : audio_len[b]] = rng.normal(size=(audio_len[b], 39))
    return Batch(
        mfcc=mfcc,
        audio_len=audio_len,
        prosody=rng.normal(size=(batch, 35)),
        tokens=tokens,
        text_len=text_len,
        labels=np.array(labels if labels is not None else rng.integers(0, 4, size=batch)),
    )


def with_padding(batch, extra_audio, extra_text, rng, junk=True):
    """Append frames/tokens past every row's length without changing lengths."""
    b = len(batch)
    pad_frames = rng.normal(size=(b, extra_audio, 39)) if junk else np.zeros((b, extra_audio, 39))
    return Batch(
        mfcc=np.concatenate([batch.mfcc, pad_frames], axis=1),
        audio_len=batch.audio_len.copy(),
        prosody=batch.prosody.copy(),
        tokens=np.concatenate([batch.tokens, np.zeros((b, extra_text), dtype=np.int64)], axis=1),
        text_len=batch.text_len.copy(),
        labels=batch.labels.copy(),
    )
