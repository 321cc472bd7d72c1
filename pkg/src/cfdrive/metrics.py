"""Evaluation harness: open-loop planning metrics, counterfactual keyword
precision/recall, caption similarity and the weighted QA composite score.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .checklist import CATEGORIES, check_collision, check_drivable
from .cider import cider  # noqa: F401  (re-exported as part of the metrics surface)
from .config import RuleConfig
from .scene import Scene, Trajectory

HORIZONS = (1.0, 2.0, 3.0)


def l2_at_horizons(pred: Trajectory, gt: Trajectory, horizons: Sequence[float] = HORIZONS) -> dict[float, float]:
    """Euclidean error at the waypoint closest to each horizon time."""
    if not np.allclose(pred.times(), gt.times(), atol=1e-9):
        raise ValueError("prediction and ground truth must share period/horizon")
    times = pred.times()
    pxy, gxy = pred.xy(), gt.xy()
    out = {}
    for horizon in horizons:
        i = int(np.argmin(np.abs(times - horizon)))
        out[horizon] = float(np.linalg.norm(pxy[i] - gxy[i]))
    return out


def _rate_from_violations(
    first_violation_times: Sequence[float | None], horizons: Sequence[float]
) -> dict[float, float]:
    n = len(first_violation_times)
    out = {}
    for horizon in horizons:
        hits = sum(1 for t in first_violation_times if t is not None and t <= horizon + 1e-9)
        out[horizon] = 100.0 * hits / n if n else float("nan")
    return out


def collision_rate(
    samples: Sequence[tuple[Scene, Trajectory]],
    config: RuleConfig | None = None,
    horizons: Sequence[float] = HORIZONS,
) -> dict[float, float]:
    """Percent of samples whose trajectory collides within each horizon."""
    config = config or RuleConfig()
    firsts = []
    for scene, traj in samples:
        violations = check_collision(scene, traj, config)
        firsts.append(min((v.time for v in violations), default=None))
    return _rate_from_violations(firsts, horizons)


def intersection_rate(
    samples: Sequence[tuple[Scene, Trajectory]],
    config: RuleConfig | None = None,
    horizons: Sequence[float] = HORIZONS,
) -> dict[float, float]:
    """Percent of samples leaving the drivable area within each horizon."""
    config = config or RuleConfig()
    firsts = []
    for scene, traj in samples:
        violations = check_drivable(scene, traj, config)
        firsts.append(min((v.time for v in violations), default=None))
    return _rate_from_violations(firsts, horizons)


@dataclass(frozen=True)
class OpenLoopReport:
    l2: dict[float, float]
    collision: dict[float, float]
    intersection: dict[float, float]
    sample_count: int

    @property
    def l2_avg(self) -> float:
        return float(np.mean(list(self.l2.values())))

    @property
    def collision_avg(self) -> float:
        return float(np.mean(list(self.collision.values())))

    @property
    def intersection_avg(self) -> float:
        return float(np.mean(list(self.intersection.values())))

    def has_undefined(self) -> bool:
        values = [*self.l2.values(), *self.collision.values(), *self.intersection.values()]
        return any(math.isnan(v) for v in values) or self.sample_count == 0

    def to_dict(self) -> dict:
        return {
            "sample_count": self.sample_count,
            "l2": {f"{h:g}s": v for h, v in self.l2.items()},
            "l2_avg": self.l2_avg,
            "collision": {f"{h:g}s": v for h, v in self.collision.items()},
            "collision_avg": self.collision_avg,
            "intersection": {f"{h:g}s": v for h, v in self.intersection.items()},
            "intersection_avg": self.intersection_avg,
        }

    def render_table(self) -> str:
        horizons = sorted(self.l2)
        header_groups = [("L2 (m)", self.l2, self.l2_avg),
                         ("Collision (%)", self.collision, self.collision_avg),
                         ("Intersection (%)", self.intersection, self.intersection_avg)]
        head1 = ["        "]
        head2 = ["samples "]
        row = [f"{self.sample_count:<8d}"]
        for title, values, avg in header_groups:
            cells = [f"{h:g}s" for h in horizons] + ["Avg."]
            head1.append(f"{title:<{7 * (len(horizons) + 1)}}")
            head2.append("".join(f"{c:<7}" for c in cells))
            row.append("".join(f"{values[h]:<7.2f}" for h in horizons) + f"{avg:<7.2f}")
        return "\n".join(" | ".join(part) for part in (head1, head2, row))


def open_loop_report(
    samples: Sequence[tuple[Scene, Trajectory, Trajectory]],
    config: RuleConfig | None = None,
    horizons: Sequence[float] = HORIZONS,
) -> OpenLoopReport:
    """Full open-loop evaluation of (scene, predicted, ground-truth) samples."""
    config = config or RuleConfig()
    per_sample = [l2_at_horizons(pred, gt, horizons) for _, pred, gt in samples]
    l2 = {
        h: float(np.mean([s[h] for s in per_sample])) if per_sample else float("nan")
        for h in horizons
    }
    pairs = [(scene, pred) for scene, pred, _ in samples]
    return OpenLoopReport(
        l2=l2,
        collision=collision_rate(pairs, config, horizons),
        intersection=intersection_rate(pairs, config, horizons),
        sample_count=len(samples),
    )


# --- counterfactual keyword evaluation ------------------------------------

# Documented synonym table: any phrase match (case-insensitive, word-bounded)
# marks its category as mentioned.
KEYWORD_SYNONYMS: dict[str, tuple[str, ...]] = {
    "safety": ("safe", "safety", "safely"),
    "collision": ("collision", "collisions", "collide", "collides", "colliding",
                  "crash", "crashes", "crashing"),
    "red light": ("red light", "red lights", "red-light"),
    "drivable area": ("drivable area", "out of the drivable", "road boundary",
                      "road boundaries"),
}

_KEYWORD_RES = {
    category: [re.compile(rf"\b{re.escape(phrase)}\b", re.IGNORECASE) for phrase in phrases]
    for category, phrases in KEYWORD_SYNONYMS.items()
}


def extract_keywords(answer: str) -> set[str]:
    """Outcome categories mentioned in an answer (deterministic matcher)."""
    found = set()
    for category, patterns in _KEYWORD_RES.items():
        if any(p.search(answer) for p in patterns):
            found.add(category)
    return found


@dataclass(frozen=True)
class CategoryPR:
    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float | None:
        return self.tp / (self.tp + self.fp) if (self.tp + self.fp) else None

    @property
    def recall(self) -> float | None:
        return self.tp / (self.tp + self.fn) if (self.tp + self.fn) else None

    def to_dict(self) -> dict:
        return {
            "tp": self.tp, "fp": self.fp, "fn": self.fn,
            "precision": self.precision, "recall": self.recall,
            "precision_undefined": self.precision is None,
            "recall_undefined": self.recall is None,
        }


@dataclass(frozen=True)
class CounterfactualPR:
    per_category: dict[str, CategoryPR]

    def has_undefined(self) -> bool:
        return any(
            pr.precision is None or pr.recall is None for pr in self.per_category.values()
        )

    def to_dict(self) -> dict:
        return {cat: pr.to_dict() for cat, pr in self.per_category.items()}


def counterfactual_pr(
    preds: Sequence[set[str]], gts: Sequence[set[str]], categories: Sequence[str] = CATEGORIES
) -> CounterfactualPR:
    """Micro TP/FP/FN per outcome category over aligned prediction/truth sets."""
    if len(preds) != len(gts):
        raise ValueError("predictions and ground truths must align")
    counts = {cat: [0, 0, 0] for cat in categories}
    for pred, gt in zip(preds, gts):
        for cat in categories:
            in_pred, in_gt = cat in pred, cat in gt
            if in_pred and in_gt:
                counts[cat][0] += 1
            elif in_pred:
                counts[cat][1] += 1
            elif in_gt:
                counts[cat][2] += 1
    return CounterfactualPR({cat: CategoryPR(*c) for cat, c in counts.items()})


def composite_score(gpt: float, language: float, match: float, accuracy: float) -> float:
    """Weighted QA benchmark score: 0.4*gpt + 0.2*(language + match + accuracy)."""
    return 0.4 * gpt + 0.2 * (language + match + accuracy)


def evaluate_answers(
    answers: Mapping[str, str], verdict_categories: Mapping[str, set[str]]
) -> CounterfactualPR:
    """Keyword-extract each answer and score it against the verdict categories."""
    ids = sorted(set(answers) & set(verdict_categories))
    preds = [extract_keywords(answers[i]) for i in ids]
    gts = [set(verdict_categories[i]) for i in ids]
    return counterfactual_pr(preds, gts)
