"""Retrieval and navigation metrics, report files, and the variant matrix.

A prediction is correct at tolerance e when the predicted exemplar lies
within e metres of the true closest exemplar (exact-id match at e = 0).
Recall-distance fixes e at 0.5 m and bins queries by how far they are
from their true closest exemplar. Navigation statistics aggregate
episodes: success rate over all, average steps over successes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import dataset as D
from . import mapstore as MS
from .model import OmniEncoder, train

__all__ = [
    "Prediction",
    "MetricReport",
    "recall_tolerance",
    "recall_distance",
    "nav_stats",
    "spearman",
    "evaluate_retrieval",
    "run_matrix",
    "VARIANTS",
    "DEFAULT_TOLERANCES",
    "DEFAULT_DISTANCE_BINS",
]

DEFAULT_TOLERANCES = tuple(np.round(np.arange(0.0, 1.0 + 1e-9, 0.1), 3))
DEFAULT_DISTANCE_BINS = ((0.0, 0.5), (0.5, 1.0), (1.0, 1.5), (1.5, 2.0))

# ablation toggles: circular padding, rolling retrieval, continuous loss
VARIANTS = {
    "L": dict(circular=False, roll=False, continuous=False),
    "LC": dict(circular=True, roll=False, continuous=False),
    "LCR": dict(circular=True, roll=True, continuous=False),
    "CLCR": dict(circular=True, roll=True, continuous=True),
}


@dataclass(frozen=True)
class Prediction:
    query_id: int
    predicted_id: int
    gt_id: int
    error: float       # metres between predicted and true closest exemplar
    query_distance: float = 0.0  # metres from query to its true closest exemplar

    def __post_init__(self):
        if self.error < 0:
            raise ValueError("prediction error cannot be negative")


@dataclass
class MetricReport:
    recall_tolerance: list = field(default_factory=list)   # (e, recall)
    recall_distance: list = field(default_factory=list)    # ((m, M), recall | None)
    nav: tuple | None = None                                # (success_rate, avg_steps | None)
    variant: str = ""
    seed: int = 0
    config_hash: str = ""

    # -- serialisation ------------------------------------------------------

    def to_jsonl(self):
        rows = [json.dumps({"metric": "meta", "variant": self.variant, "seed": self.seed,
                            "config_hash": self.config_hash}, sort_keys=True)]
        for e, r in self.recall_tolerance:
            rows.append(json.dumps({"metric": "recall_tolerance", "e": e, "recall": r},
                                   sort_keys=True))
        for (lo, hi), r in self.recall_distance:
            rows.append(json.dumps({"metric": "recall_distance", "lo": lo, "hi": hi,
                                    "recall": r}, sort_keys=True))
        if self.nav is not None:
            rows.append(json.dumps({"metric": "nav", "success_rate": self.nav[0],
                                    "avg_steps": self.nav[1]}, sort_keys=True))
        return "\n".join(rows) + "\n"

    @classmethod
    def from_jsonl(cls, text):
        report = cls()
        for line in text.splitlines():
            if not line.strip():
                continue
            row = json.loads(line)
            kind = row.pop("metric")
            if kind == "meta":
                report.variant = row.get("variant", "")
                report.seed = row.get("seed", 0)
                report.config_hash = row.get("config_hash", "")
            elif kind == "recall_tolerance":
                report.recall_tolerance.append((row["e"], row["recall"]))
            elif kind == "recall_distance":
                report.recall_distance.append(((row["lo"], row["hi"]), row["recall"]))
            elif kind == "nav":
                report.nav = (row["success_rate"], row["avg_steps"])
            else:
                raise ValueError(f"unknown metric row {kind!r}")
        return report

    def to_table(self):
        lines = [f"variant {self.variant or '-'}  seed {self.seed}  config {self.config_hash or '-'}"]
        if self.recall_tolerance:
            lines.append(f"  {'tolerance (m)':>14}  recall")
            for e, r in self.recall_tolerance:
                lines.append(f"  {e:>14.2f}  {r:.3f}")
        if self.recall_distance:
            lines.append(f"  {'distance bin':>14}  recall@0.5m")
            for (lo, hi), r in self.recall_distance:
                shown = "-" if r is None else f"{r:.3f}"
                lines.append(f"  ({lo:.1f}, {hi:.1f}]{'':>3}  {shown}")
        if self.nav is not None:
            rate, steps = self.nav
            shown = "-" if steps is None else f"{steps:.2f}"
            lines.append(f"  nav success {rate:.2%}  avg steps {shown}")
        return "\n".join(lines) + "\n"


# -- metric computations -------------------------------------------------------


def recall_tolerance(predictions, tolerances=DEFAULT_TOLERANCES):
    """Fraction of predictions within e metres of the true closest place.

    At e = 0 a prediction counts only as an exact id match.
    """
    if not predictions:
        raise ValueError("no predictions to score")
    curve = []
    for e in tolerances:
        if e == 0:
            hits = sum(p.predicted_id == p.gt_id for p in predictions)
        else:
            hits = sum(p.error <= e for p in predictions)
        curve.append((float(e), hits / len(predictions)))
    return curve


def recall_distance(predictions, bins=DEFAULT_DISTANCE_BINS, tolerance=0.5):
    """Recall at the fixed tolerance, binned by query-to-closest distance.

    Bins are half-open (m, M]; empty bins report None rather than 0.
    """
    if not predictions:
        raise ValueError("no predictions to score")
    out = []
    for lo, hi in bins:
        members = [p for p in predictions if lo < p.query_distance <= hi]
        if not members:
            out.append(((lo, hi), None))
        else:
            hits = sum(p.error <= tolerance for p in members)
            out.append(((lo, hi), hits / len(members)))
    return out


def nav_stats(episodes):
    """(success rate over all episodes, mean steps over successful ones)."""
    if not episodes:
        raise ValueError("no episodes to score")
    successes = [ep for ep in episodes if ep.success]
    rate = len(successes) / len(episodes)
    avg = float(np.mean([ep.steps for ep in successes])) if successes else None
    return rate, avg


def _average_ranks(values):
    values = np.asarray(values, dtype=float)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0
        i = j + 1
    return ranks


def spearman(x, y):
    """Rank correlation with average ranks for ties."""
    if len(x) != len(y) or len(x) < 2:
        raise ValueError("need two equal-length sequences of at least 2 values")
    rx, ry = _average_ranks(x), _average_ranks(y)
    rx = rx - rx.mean()
    ry = ry - ry.mean()
    denom = np.sqrt((rx ** 2).sum() * (ry ** 2).sum())
    if denom == 0:
        return 0.0
    return float((rx * ry).sum() / denom)


# -- retrieval evaluation ---------------------------------------------------------


def evaluate_retrieval(model, map_index, queries, tolerances=DEFAULT_TOLERANCES,
                       bins=DEFAULT_DISTANCE_BINS):
    """Query every sample against the map; returns (predictions, report)."""
    preds = []
    for q in queries:
        feat = model.extract(q.pixels)
        res = map_index.query(feat, use_roll=model.config.roll)
        predicted = map_index.record(res.best_id)
        gt = map_index.record(q.extra["gt_id"])
        preds.append(
            Prediction(
                query_id=q.image_id,
                predicted_id=res.best_id,
                gt_id=gt.id,
                error=float(np.hypot(*(predicted.position - gt.position))),
                query_distance=float(q.extra["gt_dist"]),
            )
        )
    report = MetricReport(
        recall_tolerance=recall_tolerance(preds, tolerances),
        recall_distance=recall_distance(preds, bins),
    )
    return preds, report


def run_matrix(train_samples, map_samples, query_samples, base_config, seeds,
               variants=("L", "LC", "LCR", "CLCR"), iterations=None,
               include_random_baseline=True, tolerances=DEFAULT_TOLERANCES,
               progress=None):
    """Train and evaluate every variant with identical data and seeds.

    Returns {variant: [MetricReport, one per seed]}. The random baseline
    is the untrained CLCR architecture.
    """
    results = {}
    jobs = list(variants) + (["random"] if include_random_baseline else [])
    for variant in jobs:
        flags = VARIANTS["CLCR"] if variant == "random" else VARIANTS[variant]
        reports = []
        for seed in seeds:
            config = replace(base_config, seed=int(seed), **flags)
            model = OmniEncoder(config)
            if variant != "random":
                train(model, train_samples, iterations=iterations, log_every=0)
            index = MS.build_map(model, map_samples)
            _, report = evaluate_retrieval(model, index, query_samples, tolerances)
            report.variant = variant
            report.seed = int(seed)
            reports.append(report)
            if progress is not None:
                progress(variant, seed, report)
        results[variant] = reports
    return results


def mean_recall_at(reports, max_e):
    """Seed-averaged mean recall over tolerances up to max_e."""
    vals = []
    for rep in reports:
        points = [r for e, r in rep.recall_tolerance if e <= max_e + 1e-9]
        vals.append(float(np.mean(points)))
    return float(np.mean(vals))
