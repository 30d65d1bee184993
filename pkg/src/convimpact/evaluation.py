"""Metrics: Pearson correlation, Concordance Index, pair accuracy, kappa.

All metrics are pure functions over immutable inputs. The Concordance
Index treats binary utterance annotations as a partial order: over every
(issue, non_issue) pair it credits 1 when the non-issue utterance scored
higher, 0.5 on an exact tie, and 0 otherwise, so random scoring sits at
0.5 in expectation.
"""

from __future__ import annotations

import math
from bisect import bisect_left, bisect_right
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError, DegenerateEvaluationError, UndefinedMetricError

ISSUE = "issue"
NON_ISSUE = "non_issue"

# annotation vocabulary -> ranking classes
_LABEL_TO_CLASS = {"bad": ISSUE, "good": NON_ISSUE}


@dataclass
class RankedUtterance:
    utterance_id: str
    score: float
    label: str  # "issue" | "non_issue"


def ranked_from_annotation(utterance_id: str, score: float, annotation: str) -> RankedUtterance:
    """Map a good/bad annotation onto the ranking classes."""
    try:
        label = _LABEL_TO_CLASS[annotation]
    except KeyError:
        raise ContractError(
            f"annotation must be 'good' or 'bad', got {annotation!r}"
        ) from None
    return RankedUtterance(utterance_id, float(score), label)


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """Sample Pearson correlation; undefined on constant sequences."""
    if len(x) != len(y):
        raise ContractError(f"pearson: length mismatch {len(x)} vs {len(y)}")
    if len(x) < 2:
        raise ContractError("pearson: need at least 2 observations")
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    xc = xa - xa.mean()
    yc = ya - ya.mean()
    sx = float(np.sqrt((xc * xc).sum()))
    sy = float(np.sqrt((yc * yc).sum()))
    if sx == 0.0 or sy == 0.0:
        raise UndefinedMetricError("pearson undefined: a sequence is constant")
    return float((xc * yc).sum()) / (sx * sy)


def c_index(entries: Iterable[RankedUtterance]) -> float:
    """Concordance of scores with the issue/non-issue partial order.

    Sort-based counting, equivalent to enumerating all cross-class pairs.
    """
    issues, non_issues = [], []
    for e in entries:
        if e.label == ISSUE:
            issues.append(e.score)
        elif e.label == NON_ISSUE:
            non_issues.append(e.score)
        else:
            raise ContractError(f"unknown ranking label {e.label!r}")
    if not issues or not non_issues:
        raise DegenerateEvaluationError(
            f"c_index needs both classes, got {len(issues)} issues "
            f"and {len(non_issues)} non-issues"
        )
    non_issues.sort()
    total = 0.0
    for s in issues:
        lo = bisect_left(non_issues, s)
        hi = bisect_right(non_issues, s)
        total += (len(non_issues) - hi) + 0.5 * (hi - lo)
    return total / (len(issues) * len(non_issues))


def pair_accuracy(judgments: Sequence[tuple[str, str, str]]) -> float:
    """Fraction of (model_low, model_high, human_choice) agreeing with the model.

    human_choice names the member the judge found worse; agreement means it
    matches the model's low-scored member.
    """
    if not judgments:
        raise DegenerateEvaluationError("pair_accuracy: no judgments")
    agree = 0
    for low_id, high_id, choice in judgments:
        if choice not in (low_id, high_id):
            raise ContractError(
                f"judgment {choice!r} names neither pair member "
                f"({low_id!r}, {high_id!r})"
            )
        if choice == low_id:
            agree += 1
    return agree / len(judgments)


def cohens_kappa(a: Sequence, b: Sequence) -> float:
    """Cohen's kappa with marginal-product chance agreement."""
    if len(a) != len(b):
        raise ContractError(f"cohens_kappa: length mismatch {len(a)} vs {len(b)}")
    if len(a) == 0:
        raise ContractError("cohens_kappa: empty sequences")
    n = len(a)
    observed = sum(1 for x, y in zip(a, b) if x == y) / n
    classes = set(a) | set(b)
    expected = 0.0
    for c in classes:
        pa = sum(1 for x in a if x == c) / n
        pb = sum(1 for y in b if y == c) / n
        expected += pa * pb
    if expected == 1.0:
        raise UndefinedMetricError(
            "kappa undefined: chance agreement is 1 (identical constant annotators)"
        )
    return (observed - expected) / (1.0 - expected)


def summarize_seed_metrics(per_seed: list[dict]) -> dict:
    """Mean of each finite numeric field across per-seed metric entries."""
    mean: dict[str, float] = {}
    if not per_seed:
        return mean
    keys = [
        k for k, v in per_seed[0].items()
        if k != "seed" and isinstance(v, (int, float))
    ]
    for k in keys:
        values = [e[k] for e in per_seed if isinstance(e.get(k), (int, float))]
        values = [v for v in values if math.isfinite(v)]
        if values:
            mean[k] = float(np.mean(values))
    return mean


def build_metrics_report(
    model_variant: str,
    dataset: str,
    split: str,
    per_seed: list[dict],
    n_issue: int | None = None,
    n_non_issue: int | None = None,
) -> dict:
    """Assemble the metrics document: per-seed values plus their mean."""
    return {
        "model_variant": model_variant,
        "dataset": dataset,
        "split": split,
        "seeds": [e.get("seed") for e in per_seed],
        "n_issue": n_issue,
        "n_non_issue": n_non_issue,
        "per_seed": per_seed,
        "mean": summarize_seed_metrics(per_seed),
    }
