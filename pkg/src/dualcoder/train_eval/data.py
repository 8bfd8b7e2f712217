"""Manifest records and cross-validation splits."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import CLASSES
from ..errors import ParseError

REQUIRED_FIELDS = ("id", "wav", "transcript", "label")
DEFAULT_RATIOS = (8.0, 0.5, 1.5)


@dataclass(frozen=True)
class UtteranceRecord:
    id: str
    wav: str  # absolute path after loading
    transcript: str
    label: str
    speaker: str | None = None
    session: str | None = None

    @property
    def label_index(self) -> int:
        return CLASSES.index(self.label)


def load_manifest(path, check_wav: bool = True) -> list[UtteranceRecord]:
    """Read a JSONL manifest.  Relative ``wav`` paths resolve against its directory."""
    path = Path(path)
    base = path.parent.resolve()
    records: list[UtteranceRecord] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", lineno) from None
            if not isinstance(row, dict):
                raise ParseError("record must be a JSON object", lineno)
            for name in REQUIRED_FIELDS:
                if name not in row:
                    raise ParseError(f"missing field {name!r}", lineno)
            if row["label"] not in CLASSES:
                raise ParseError(f"unknown label {row['label']!r}; expected one of {CLASSES}", lineno)
            rec_id = str(row["id"])
            if rec_id in seen:
                raise ParseError(f"duplicate id {rec_id!r}", lineno)
            seen.add(rec_id)
            wav = Path(row["wav"])
            wav = wav if wav.is_absolute() else base / wav
            if check_wav and not wav.is_file():
                raise ParseError(f"wav file not found: {wav}", lineno)
            records.append(
                UtteranceRecord(
                    id=rec_id,
                    wav=str(wav),
                    transcript=str(row["transcript"]),
                    label=row["label"],
                    speaker=_opt_str(row.get("speaker")),
                    session=_opt_str(row.get("session")),
                )
            )
    return records


def _opt_str(value):
    return None if value is None else str(value)


def write_manifest(records, path) -> None:
    """Write records as JSONL with wav paths relative to the manifest when possible."""
    path = Path(path)
    base = path.parent.resolve()
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            wav = Path(rec.wav)
            try:
                wav = wav.resolve().relative_to(base)
            except ValueError:
                pass
            row = {"id": rec.id, "wav": wav.as_posix(), "transcript": rec.transcript, "label": rec.label}
            if rec.speaker is not None:
                row["speaker"] = rec.speaker
            if rec.session is not None:
                row["session"] = rec.session
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


@dataclass(frozen=True)
class FoldSplit:
    fold: int
    train: tuple[str, ...]
    dev: tuple[str, ...]
    test: tuple[str, ...]


def _apportion(total: int, sizes: list[int]) -> list[int]:
    """Split ``total`` across groups proportionally to ``sizes`` (largest remainder)."""
    n = sum(sizes)
    quotas = [total * s / n for s in sizes]
    counts = [int(np.floor(q)) for q in quotas]
    order = sorted(range(len(sizes)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[: total - sum(counts)]:
        counts[i] += 1
    return counts


def _round_table(sizes: list[int], parts: list[int]) -> list[list[int]]:
    """Integer class x part table with exact margins, each cell within 1 of its share.

    Cell (c, j) is the floor or ceiling of ``sizes[c] * parts[j] / N``.  Such a
    rounding always exists when both margins are integers; among the valid
    ones the cells with the largest fractional parts are rounded up.
    """
    n = sum(sizes)
    floors = [[s * p // n for p in parts] for s in sizes]
    fracs = [[s * p % n for p in parts] for s in sizes]
    row_need = [s - sum(row) for s, row in zip(sizes, floors)]
    col_need = [p - sum(col) for p, col in zip(parts, zip(*floors))]
    options = [
        list(itertools.combinations([j for j, f in enumerate(fr) if f], need))
        for fr, need in zip(fracs, row_need)
    ]
    best, best_score = None, -1
    for choice in itertools.product(*options):
        cols = [0] * len(parts)
        for picked in choice:
            for j in picked:
                cols[j] += 1
        if cols != col_need:
            continue
        score = sum(fracs[c][j] for c, picked in enumerate(choice) for j in picked)
        if score > best_score:
            best, best_score = choice, score
    table = [row[:] for row in floors]
    for c, picked in enumerate(best):
        for j in picked:
            table[c][j] += 1
    return table


def split_counts(n: int, ratios=DEFAULT_RATIOS) -> tuple[int, int, int]:
    """(train, dev, test) sizes: floors of the ratio shares, remainder to train."""
    whole = sum(ratios)
    test = int(np.floor(n * ratios[2] / whole + 1e-9))
    dev = int(np.floor(n * ratios[1] / whole + 1e-9))
    return n - dev - test, dev, test


def split_folds(records, k: int = 5, ratios=DEFAULT_RATIOS, seed: int = 0, by_session: bool = False) -> list[FoldSplit]:
    """Stratified k-fold train/dev/test splits.

    Each class's ids are shuffled once; fold ``f`` rotates every class list
    by ``f * n_c // k`` and takes its test slice, then its dev slice, from the
    front.  Per-class slice sizes round the class x split table jointly, so
    the totals are exact and every class stays within one sample of its
    share in train, dev and test alike.  With ``by_session`` the test set is instead every record
    whose session falls in fold ``f`` (sessions dealt round-robin in sorted
    order), and dev is carved from the rest.
    """
    records = list(records)
    if len(records) < k:
        raise ValueError(f"need at least {k} records for {k}-fold splits, got {len(records)}")
    rng = np.random.default_rng(seed)
    if by_session:
        return _split_by_session(records, k, ratios, rng)

    by_class = _shuffled_by_class(records, rng)
    sizes = [len(ids) for ids in by_class]
    _, n_dev, n_test = split_counts(len(records), ratios)
    table = _round_table(sizes, [n_test, n_dev, len(records) - n_test - n_dev])
    folds = []
    for f in range(k):
        train, dev, test = [], [], []
        for ids, (nt, nd, _) in zip(by_class, table):
            shift = f * len(ids) // k
            rotated = ids[shift:] + ids[:shift]
            test += rotated[:nt]
            dev += rotated[nt : nt + nd]
            train += rotated[nt + nd :]
        folds.append(FoldSplit(f, tuple(train), tuple(dev), tuple(test)))
    return folds


def _shuffled_by_class(records, rng) -> list[list[str]]:
    groups = []
    for label in CLASSES:
        ids = [r.id for r in records if r.label == label]
        groups.append([ids[i] for i in rng.permutation(len(ids))])
    return groups


def _split_by_session(records, k, ratios, rng) -> list[FoldSplit]:
    sessions = sorted({r.session for r in records if r.session is not None})
    if len(sessions) < k or any(r.session is None for r in records):
        raise ValueError(f"by-session splits need a session on every record and at least {k} sessions")
    fold_of = {s: i % k for i, s in enumerate(sessions)}
    folds = []
    for f in range(k):
        test = [r.id for r in records if fold_of[r.session] == f]
        rest = [r for r in records if fold_of[r.session] != f]
        groups = _shuffled_by_class(rest, rng)
        _, n_dev, _ = split_counts(len(records), ratios)
        dev_c = _apportion(min(n_dev, len(rest)), [len(g) for g in groups])
        dev = [i for g, nd in zip(groups, dev_c) for i in g[:nd]]
        train = [i for g, nd in zip(groups, dev_c) for i in g[nd:]]
        folds.append(FoldSplit(f, tuple(train), tuple(dev), tuple(test)))
    return folds
