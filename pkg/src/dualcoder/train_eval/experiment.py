"""Repeated k-fold experiments and their reports."""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .. import CLASSES
from ..errors import TrainingError
from ..models import ModelConfig
from .data import split_folds
from .metrics import confusion_counts, confusion_matrix, mean_std, normalize_rows, weighted_average_precision
from .training import TrainConfig, features_for, train

log = logging.getLogger(__name__)

THREADS_ENV = "DUALCODER_THREADS"


def thread_cap(default: int = 1) -> int:
    value = os.environ.get(THREADS_ENV)
    if not value:
        return default
    try:
        return max(1, int(value))
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be an integer, got {value!r}") from None


def run_seed_for(seed: int, fold: int, run: int) -> int:
    return int(np.random.SeedSequence([seed, fold, run]).generate_state(1)[0])


@dataclass
class EvalReport:
    """Per-run WAP and confusion matrices plus aggregates.

    ``mean_wap``/``std_wap`` (headline) are over per-run WAPs, each run being
    scored on its own fold's test set; the std is the population std.
    ``pooled_wap`` and ``pooled_confusion`` use all test predictions at once.
    """

    variant: str
    runs: list = field(default_factory=list)
    mean_wap: float = 0.0
    std_wap: float = 0.0
    pooled_wap: float = 0.0
    pooled_confusion: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def format_table(self) -> str:
        lines = [
            f"{'Model':<10} {'WAP (mean)':>10} {'std':>7} {'runs':>5}",
            f"{self.variant:<10} {self.mean_wap:>10.3f} {self.std_wap:>7.3f} {len(self.runs):>5}",
            "",
            f"Pooled WAP {self.pooled_wap:.3f}; std is population std over runs.",
            "",
            "Confusion matrix (%), rows = true class, columns = predicted:",
        ]
        lines.append(" " * 9 + "".join(f"{c:>9}" for c in CLASSES))
        for name, row in zip(CLASSES, self.pooled_confusion):
            lines.append(f"{name:>9}" + "".join(f"{v:>9.2f}" for v in row))
        return "\n".join(lines) + "\n"


def _run_job(job):
    records, split, model_config, run_seed, train_config, features, run = job
    try:
        trained = train(records, split, model_config, run_seed, train_config, features)
    except Exception as exc:
        raise TrainingError(f"fold {split.fold} run {run}: {exc}") from exc
    by_id = {r.id: r for r in records}
    test = [by_id[i] for i in split.test]
    preds = trained.predict(test, features)
    labels = np.array([r.label_index for r in test])
    return {
        "fold": split.fold,
        "run": run,
        "seed": run_seed,
        "best_epoch": trained.best_epoch,
        "epochs": len(trained.log),
        "wap": weighted_average_precision(preds, labels),
        "confusion": confusion_matrix(preds, labels).tolist(),
        "preds": preds.tolist(),
        "labels": labels.tolist(),
    }


def run_experiment(records, model_config: ModelConfig, train_config: TrainConfig = TrainConfig(),
                   folds: int = 5, repeats: int = 10, seed: int = 0, features: dict | None = None,
                   threads: int | None = None, by_session: bool = False) -> EvalReport:
    """Train and test ``repeats`` times on each of ``folds`` folds.

    Jobs may run in parallel processes (``threads``, default from
    ``DUALCODER_THREADS``); results are reduced in (fold, run) order, so the
    report does not depend on completion order.
    """
    threads = thread_cap() if threads is None else threads
    features = features_for(records, features, threads=threads)
    splits = split_folds(records, k=folds, seed=seed, by_session=by_session)
    jobs = [
        (records, split, model_config, run_seed_for(seed, split.fold, run), train_config, features, run)
        for split in splits
        for run in range(repeats)
    ]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_job, jobs))
    else:
        results = []
        for job in jobs:
            results.append(_run_job(job))
            r = results[-1]
            log.info("%s fold %d run %d: WAP %.4f (best epoch %d)", model_config.variant, r["fold"], r["run"], r["wap"], r["best_epoch"])
    results.sort(key=lambda r: (r["fold"], r["run"]))

    waps = [r["wap"] for r in results]
    mean, std = mean_std(waps)
    all_preds = [p for r in results for p in r.pop("preds")]
    all_labels = [y for r in results for y in r.pop("labels")]
    return EvalReport(
        variant=model_config.variant,
        runs=results,
        mean_wap=mean,
        std_wap=std,
        pooled_wap=weighted_average_precision(all_preds, all_labels),
        pooled_confusion=normalize_rows(confusion_counts(all_preds, all_labels)).tolist(),
        config={
            "model": model_config.to_dict(),
            "train": asdict(train_config),
            "folds": folds,
            "repeats": repeats,
            "seed": seed,
            "by_session": by_session,
            "std": "population",
        },
    )
