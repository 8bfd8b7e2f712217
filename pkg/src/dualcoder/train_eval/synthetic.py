"""Synthetic bimodal corpus where neither modality alone identifies the class.

Each utterance has a pitch cue (low or high base frequency of a short tone
sequence) and a text cue (one of two keywords hidden among filler words).
The class is the (pitch, keyword) cell::

    (low, amber)  -> angry     (low, cobalt)  -> happy
    (high, amber) -> sad       (high, cobalt) -> neutral

so audio alone separates {angry, happy} from {sad, neutral} and text alone
separates {angry, sad} from {happy, neutral}.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import CLASSES
from ..dsp_features import write_wav
from .data import UtteranceRecord, write_manifest

SAMPLE_RATE = 16000
BASE_PITCH_HZ = (130.0, 240.0)
KEYWORDS = ("amber", "cobalt")
FILLERS = (
    "the", "a", "we", "they", "it", "was", "is", "just", "maybe", "then",
    "over", "there", "about", "this", "that", "really", "so", "and",
    "well", "today", "again", "around", "with", "some",
)
ENDINGS = ("", ".", "!", "?")


@dataclass
class SyntheticCorpus:
    manifest: Path
    records: list[UtteranceRecord]
    cues: list[tuple[int, int]]  # (pitch 0/1, keyword 0/1) per record


def _tone_sequence(rng, base_hz: float, sample_rate: int) -> np.ndarray:
    duration = rng.uniform(0.45, 0.7)
    n = int(duration * sample_rate)
    n_notes = int(rng.integers(2, 4))
    bounds = np.linspace(0, n, n_notes + 1).astype(int)
    out = np.zeros(n)
    for start, stop in zip(bounds[:-1], bounds[1:]):
        f0 = base_hz * 2.0 ** (rng.uniform(-1.0, 1.0) / 12.0)
        t = np.arange(stop - start) / sample_rate
        note = sum(amp * np.sin(2 * np.pi * k * f0 * t) for k, amp in ((1, 1.0), (2, 0.5), (3, 0.25)))
        ramp = min(160, (stop - start) // 4)
        env = np.ones(stop - start)
        env[:ramp] = np.linspace(0.0, 1.0, ramp)
        env[-ramp:] = np.linspace(1.0, 0.0, ramp)
        out[start:stop] = note * env
    out /= np.max(np.abs(out))
    out *= rng.uniform(0.4, 0.8)
    out += rng.normal(0.0, 0.01, size=n)
    return np.clip(out, -1.0, 1.0)


def _sentence(rng, keyword: str) -> str:
    words = [FILLERS[i] for i in rng.integers(0, len(FILLERS), size=int(rng.integers(3, 8)))]
    words.insert(int(rng.integers(0, len(words) + 1)), keyword)
    text = " ".join(words) + ENDINGS[int(rng.integers(0, len(ENDINGS)))]
    return text[0].upper() + text[1:]


def gen_synthetic(num_utterances: int, seed: int, out_dir, noise: float = 0.05,
                  sample_rate: int = SAMPLE_RATE) -> SyntheticCorpus:
    """Write ``num_utterances`` WAVs plus ``manifest.jsonl`` into ``out_dir``.

    Classes are balanced (cells cycle then shuffle); a fraction ``noise`` of
    labels is replaced by a different, uniformly chosen class.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    cells = rng.permutation(np.arange(num_utterances) % 4)
    records, cues = [], []
    for i, cell in enumerate(cells):
        pitch, keyword = int(cell) // 2, int(cell) % 2
        label = int(cell)
        if rng.random() < noise:
            label = int((label + rng.integers(1, 4)) % 4)
        wav_path = out_dir / f"utt{i:04d}.wav"
        write_wav(wav_path, _tone_sequence(rng, BASE_PITCH_HZ[pitch], sample_rate), sample_rate)
        records.append(
            UtteranceRecord(
                id=f"utt{i:04d}",
                wav=str(wav_path.resolve()),
                transcript=_sentence(rng, KEYWORDS[keyword]),
                label=CLASSES[label],
                speaker=f"spk{i % 10}",
                session=f"Ses0{i % 5 + 1}",
            )
        )
        cues.append((pitch, keyword))
    manifest = out_dir / "manifest.jsonl"
    write_manifest(records, manifest)
    return SyntheticCorpus(manifest, records, cues)
