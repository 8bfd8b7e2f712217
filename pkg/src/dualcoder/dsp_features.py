"""Acoustic front end: WAV loading, framing, 39-dim MFCCs and 35-dim prosody.

MFCC layout per frame (39 columns)::

    [c1 .. c12, logE,  d(c1) .. d(c12), d(logE),  dd(c1) .. dd(c12), dd(logE)]

Prosody layout (35 values): five blocks of seven statistics, in order
F0, voicing probability, loudness, F0 delta, loudness delta.  Each block
is ``mean, std, min, max, range, slope, iqr``.  F0 blocks are computed
over voiced frames only; the other three over all frames.
"""

from __future__ import annotations

import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
import scipy.fft
from scipy.io import wavfile

from .errors import EmptyAudioError, FormatError, TooShortError

N_MEL_BANDS = 26
N_CEPSTRA = 12
N_MFCC = 39
N_PROSODY = 35
DELTA_WINDOW = 2
LOG_FLOOR = 1e-10

F0_MIN_HZ = 50.0
F0_MAX_HZ = 500.0
VOICING_THRESHOLD = 0.5
# a later peak must reach this fraction of the best one to win over an earlier one
OCTAVE_PEAK_RATIO = 0.9

STAT_NAMES = ("mean", "std", "min", "max", "range", "slope", "iqr")
PROSODY_BLOCKS = ("f0", "voicing", "loudness", "f0_delta", "loudness_delta")

FEATURE_MAGIC = b"DCF1"


@dataclass(frozen=True)
class AudioBuffer:
    """Mono waveform with amplitudes in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise FormatError(f"expected mono samples, got shape {samples.shape}")
        if samples.size == 0:
            raise EmptyAudioError("audio buffer has zero samples")
        if not np.all(np.isfinite(samples)):
            raise FormatError("audio contains non-finite samples")
        if int(self.sample_rate) < 8000:
            raise FormatError(f"sample rate {self.sample_rate} Hz is below 8000 Hz")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class FrameSpec:
    frame_len_ms: float = 25.0
    hop_ms: float = 10.0
    window: str = "hamming"

    def __post_init__(self):
        if not self.frame_len_ms > self.hop_ms > 0:
            raise ValueError("frame spec requires frame_len_ms > hop_ms > 0")
        if self.window != "hamming":
            raise ValueError(f"unsupported window {self.window!r}")

    def frame_samples(self, sample_rate: int) -> int:
        return int(round(sample_rate * self.frame_len_ms / 1000.0))

    def hop_samples(self, sample_rate: int) -> int:
        return int(round(sample_rate * self.hop_ms / 1000.0))


class UtteranceFeatures(NamedTuple):
    mfcc: np.ndarray  # T x 39
    prosody: np.ndarray  # 35
    sample_rate: int


# ---------------------------------------------------------------------------
# WAV input / output
# ---------------------------------------------------------------------------


def load_wav(path) -> AudioBuffer:
    """Read a 16-bit PCM or 32-bit float WAV file and downmix to mono."""
    try:
        sample_rate, data = wavfile.read(str(path))
    except FileNotFoundError:
        raise
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise FormatError(f"{path}: unsupported sample type {data.dtype}; need int16 or float32")
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    if samples.size == 0:
        raise EmptyAudioError(f"{path}: file contains zero samples")
    return AudioBuffer(samples, sample_rate)


def write_wav(path, samples: np.ndarray, sample_rate: int) -> None:
    """Write mono samples in [-1, 1] as 16-bit PCM."""
    pcm = np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype(np.int16)
    wavfile.write(str(path), int(sample_rate), pcm)


# ---------------------------------------------------------------------------
# Framing and spectra
# ---------------------------------------------------------------------------


def num_frames(length: int, frame_len: int, hop: int) -> int:
    if length < frame_len:
        raise TooShortError(f"signal of {length} samples is shorter than one frame ({frame_len})")
    return (length - frame_len) // hop + 1


def hamming(n: int) -> np.ndarray:
    if n == 1:
        return np.ones(1)
    k = np.arange(n)
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * k / (n - 1))


def _raw_frames(samples: np.ndarray, frame_len: int, hop: int) -> np.ndarray:
    count = num_frames(samples.size, frame_len, hop)
    idx = np.arange(frame_len)[None, :] + hop * np.arange(count)[:, None]
    return samples[idx]


def frame_signal(audio: AudioBuffer, spec: FrameSpec = FrameSpec()) -> np.ndarray:
    """Split audio into overlapping Hamming-windowed frames (T x W)."""
    frame_len = spec.frame_samples(audio.sample_rate)
    hop = spec.hop_samples(audio.sample_rate)
    return _raw_frames(audio.samples, frame_len, hop) * hamming(frame_len)


def next_pow2(n: int) -> int:
    return 1 << max(0, int(n - 1).bit_length())


def power_spectrum(frames: np.ndarray, nfft: int) -> np.ndarray:
    """One-sided power spectrum scaled so that each row sums to the frame energy.

    ``P[k] = c_k * |X[k]|^2 / nfft`` with ``c_k = 1`` at DC and Nyquist and
    ``c_k = 2`` elsewhere; ``X`` is the unnormalized DFT of the zero-padded
    frame.  With this scaling Parseval reads ``sum_k P[k] == sum_n x[n]^2``.
    """
    spec = np.fft.rfft(frames, n=nfft, axis=-1)
    power = (spec.real**2 + spec.imag**2) / nfft
    power[..., 1 : (nfft + 1) // 2] *= 2.0
    return power


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_edges(sample_rate: int, n_bands: int = N_MEL_BANDS) -> np.ndarray:
    """Edge/centre frequencies in Hz: ``n_bands + 2`` points from 0 to Nyquist."""
    mels = np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_bands + 2)
    return mel_to_hz(mels)


def mel_filterbank(sample_rate: int, nfft: int, n_bands: int = N_MEL_BANDS) -> np.ndarray:
    """Triangular filters (n_bands x nfft//2+1), unit peak at each centre frequency."""
    edges = mel_band_edges(sample_rate, n_bands)
    freqs = np.arange(nfft // 2 + 1) * sample_rate / nfft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    return np.clip(np.minimum(rising, falling), 0.0, None)


def compute_deltas(static: np.ndarray, window_n: int = DELTA_WINDOW) -> np.ndarray:
    """Regression deltas over time with edge replication.

    ``d_t = sum_n n * (c_{t+n} - c_{t-n}) / (2 * sum_n n^2)`` for n = 1..N.
    """
    static = np.asarray(static, dtype=np.float64)
    if static.ndim == 1:
        return compute_deltas(static[:, None], window_n)[:, 0]
    n_frames = static.shape[0]
    if n_frames < 1:
        raise ValueError("need at least one frame")
    padded = np.pad(static, ((window_n, window_n), (0, 0)), mode="edge")
    denom = 2.0 * sum(n * n for n in range(1, window_n + 1))
    out = np.zeros_like(static)
    for n in range(1, window_n + 1):
        ahead = padded[window_n + n : window_n + n + n_frames]
        behind = padded[window_n - n : window_n - n + n_frames]
        out += n * (ahead - behind)
    return out / denom


def _log_floor(x):
    return np.log(np.maximum(x, LOG_FLOOR))


def compute_mfcc(audio: AudioBuffer, spec: FrameSpec = FrameSpec()) -> np.ndarray:
    """39-dim MFCC sequence: 12 cepstra, log-energy, deltas and accelerations."""
    frames = frame_signal(audio, spec)
    nfft = next_pow2(frames.shape[1])
    power = power_spectrum(frames, nfft)
    band_energy = power @ mel_filterbank(audio.sample_rate, nfft).T
    cepstra = scipy.fft.dct(_log_floor(band_energy), type=2, norm="ortho", axis=1)
    log_energy = _log_floor(np.sum(frames**2, axis=1))
    static = np.column_stack([cepstra[:, 1 : N_CEPSTRA + 1], log_energy])
    delta = compute_deltas(static)
    accel = compute_deltas(delta)
    return np.hstack([static, delta, accel])


# ---------------------------------------------------------------------------
# Prosody
# ---------------------------------------------------------------------------


def normalized_autocorrelation(frames: np.ndarray, max_lag: int) -> np.ndarray:
    """Normalized cross-correlation of each frame with its lagged self.

    Entry ``[t, k]`` is ``sum x[n] x[n+k] / sqrt(sum x[n]^2 * sum x[n+k]^2)``,
    sums over the ``W - k`` overlapping samples.  Zero where either energy
    vanishes.
    """
    frames = frames - frames.mean(axis=1, keepdims=True)
    width = frames.shape[1]
    nfft = next_pow2(2 * width)
    spec = np.fft.rfft(frames, n=nfft, axis=1)
    acf = np.fft.irfft(spec.real**2 + spec.imag**2, n=nfft, axis=1)[:, : max_lag + 1]

    sq = np.concatenate([np.zeros((frames.shape[0], 1)), np.cumsum(frames**2, axis=1)], axis=1)
    lags = np.arange(max_lag + 1)
    head = sq[:, width - lags]  # energy of x[0 : W-k]
    tail = sq[:, width : width + 1] - sq[:, lags]  # energy of x[k : W]
    denom = np.sqrt(np.maximum(head * tail, 0.0))
    out = np.zeros_like(acf)
    ok = denom > 1e-12
    out[ok] = acf[ok] / denom[ok]
    return out


def _pick_period(curve: np.ndarray, min_lag: int) -> tuple[float, float]:
    """Return (fractional lag, peak height) for one frame's search region."""
    best = curve[min_lag:].max()
    if best <= 0.0:
        return 0.0, 0.0
    lag = int(np.argmax(curve[min_lag:])) + min_lag
    last = curve.size - 1
    for k in range(min_lag + 1, last):
        if curve[k] >= OCTAVE_PEAK_RATIO * best and curve[k] >= curve[k - 1] and curve[k] >= curve[k + 1]:
            lag = k
            break
    frac = float(lag)
    if min_lag < lag < last:
        a, b, c = curve[lag - 1], curve[lag], curve[lag + 1]
        denom = a - 2.0 * b + c
        if denom < 0.0:
            frac += 0.5 * (a - c) / denom
    return frac, float(curve[lag])


def pitch_track(audio: AudioBuffer, spec: FrameSpec = FrameSpec()):
    """Per-frame F0 (Hz, 0 when unvoiced), voicing probability and voiced mask."""
    sr = audio.sample_rate
    frame_len = spec.frame_samples(sr)
    frames = _raw_frames(audio.samples, frame_len, spec.hop_samples(sr))
    min_lag = max(1, int(np.floor(sr / F0_MAX_HZ)))
    max_lag = min(int(np.ceil(sr / F0_MIN_HZ)), frame_len - 2)
    nccf = normalized_autocorrelation(frames, max_lag)

    f0 = np.zeros(frames.shape[0])
    voicing = np.zeros(frames.shape[0])
    for t in range(frames.shape[0]):
        lag, height = _pick_period(nccf[t], min_lag)
        voicing[t] = min(max(height, 0.0), 1.0)
        if lag > 0:
            f0[t] = sr / lag
    voiced = (voicing >= VOICING_THRESHOLD) & (f0 > 0)
    f0[~voiced] = 0.0
    return f0, voicing, voiced


def contour_stats(values: np.ndarray) -> np.ndarray:
    """mean, std, min, max, range, slope (per frame), inter-quartile range."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return np.zeros(len(STAT_NAMES))
    lo, hi = values.min(), values.max()
    slope = 0.0
    if values.size > 1:
        t = np.arange(values.size, dtype=np.float64)
        t -= t.mean()
        slope = float(t @ (values - values.mean()) / (t @ t))
    q25, q75 = np.percentile(values, [25.0, 75.0])
    return np.array([values.mean(), values.std(), lo, hi, hi - lo, slope, q75 - q25])


def compute_prosody(audio: AudioBuffer, spec: FrameSpec = FrameSpec()) -> np.ndarray:
    f0, voicing, voiced = pitch_track(audio, spec)
    loudness = _log_floor(np.sum(frame_signal(audio, spec) ** 2, axis=1))
    voiced_f0 = f0[voiced]
    f0_delta = compute_deltas(voiced_f0) if voiced_f0.size else voiced_f0
    blocks = [voiced_f0, voicing, loudness, f0_delta, compute_deltas(loudness)]
    return np.concatenate([contour_stats(b) for b in blocks])


def extract_features(audio: AudioBuffer, spec: FrameSpec = FrameSpec()) -> UtteranceFeatures:
    """MFCC and prosody, rounded to float32 precision as stored on disk."""
    mfcc = compute_mfcc(audio, spec).astype(np.float32).astype(np.float64)
    prosody = compute_prosody(audio, spec).astype(np.float32).astype(np.float64)
    return UtteranceFeatures(mfcc, prosody, audio.sample_rate)


def extract_corpus(wav_paths, spec: FrameSpec = FrameSpec(), threads: int = 1) -> list[UtteranceFeatures]:
    """Extract features for many files; output order follows the input order."""

    def one(path):
        return extract_features(load_wav(path), spec)

    if threads <= 1:
        return [one(p) for p in wav_paths]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, wav_paths))


# ---------------------------------------------------------------------------
# Feature files
# ---------------------------------------------------------------------------


def write_feature_file(path, feats: UtteranceFeatures, spec: FrameSpec = FrameSpec()) -> None:
    """Binary layout (little endian)::

        b"DCF1" | u32 T | u32 39 | T*39 f32 | u32 35 | 35 f32 | u32 n | n bytes JSON

    The JSON trailer records the sample rate and framing used.
    """
    mfcc = np.ascontiguousarray(feats.mfcc, dtype="<f4")
    prosody = np.ascontiguousarray(feats.prosody, dtype="<f4")
    if mfcc.ndim != 2 or mfcc.shape[1] != N_MFCC or prosody.shape != (N_PROSODY,):
        raise FormatError("feature shapes must be T x 39 and 35")
    meta = json.dumps(
        {"sample_rate": int(feats.sample_rate), "frame_len_ms": spec.frame_len_ms, "hop_ms": spec.hop_ms},
        sort_keys=True,
    ).encode()
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<II", mfcc.shape[0], N_MFCC))
        fh.write(mfcc.tobytes())
        fh.write(struct.pack("<I", N_PROSODY))
        fh.write(prosody.tobytes())
        fh.write(struct.pack("<I", len(meta)))
        fh.write(meta)


def read_feature_file(path) -> UtteranceFeatures:
    data = Path(path).read_bytes()
    if data[:4] != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}")
    try:
        n_frames, width = struct.unpack_from("<II", data, 4)
        if width != N_MFCC:
            raise FormatError(f"{path}: MFCC width {width}, expected {N_MFCC}")
        off = 12
        mfcc = np.frombuffer(data, dtype="<f4", count=n_frames * width, offset=off).reshape(n_frames, width)
        off += 4 * n_frames * width
        (n_prosody,) = struct.unpack_from("<I", data, off)
        if n_prosody != N_PROSODY:
            raise FormatError(f"{path}: prosody width {n_prosody}, expected {N_PROSODY}")
        off += 4
        prosody = np.frombuffer(data, dtype="<f4", count=N_PROSODY, offset=off)
        off += 4 * N_PROSODY
        sample_rate = 0
        if off < len(data):
            (n_meta,) = struct.unpack_from("<I", data, off)
            sample_rate = json.loads(data[off + 4 : off + 4 + n_meta])["sample_rate"]
    except (struct.error, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"{path}: truncated feature file") from exc
    return UtteranceFeatures(mfcc.astype(np.float64), prosody.astype(np.float64), sample_rate)
