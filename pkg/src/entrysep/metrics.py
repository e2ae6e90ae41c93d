"""Exact-match evaluation for boundary and entity predictions.

A prediction counts only if its position (and kind) equals the gold one
exactly; there is no tolerance window and no matching step. The 0/0 cases
of precision, recall and F are defined as 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .corpus import EntryAnnotation, LineRecord
from .labeling import EBEGIN, EBOTH, EEND, OUTSIDE

BOUNDARY_CLASSES = (EBEGIN, EEND)


class MetricsError(Exception):
    pass


def harmonic(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


@dataclass(frozen=True)
class ClassReport:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f: float

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int) -> "ClassReport":
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        # algebraically the harmonic mean of precision and recall
        f = 2 * tp / (2 * tp + fp + fn) if 2 * tp + fp + fn else 0.0
        return cls(tp=tp, fp=fp, fn=fn, precision=precision, recall=recall, f=f)

    def to_dict(self) -> dict:
        return {
            "tp": self.tp, "fp": self.fp, "fn": self.fn,
            "precision": self.precision, "recall": self.recall, "f": self.f,
        }


def _mark_positions(marks: Sequence[str]) -> dict[str, set[int]]:
    positions: dict[str, set[int]] = {EBEGIN: set(), EEND: set()}
    for i, mark in enumerate(marks):
        if mark in (EBEGIN, EBOTH):
            positions[EBEGIN].add(i)
        if mark in (EEND, EBOTH):
            positions[EEND].add(i)
    return positions


def boundary_metrics(
    pred: Sequence[str], gold: Sequence[str]
) -> dict[str, ClassReport]:
    """Positional exact match of EBEGIN and EEND marks (EBOTH counts as both)."""
    if len(pred) != len(gold):
        raise MetricsError(f"length mismatch: pred {len(pred)} vs gold {len(gold)}")
    pred_pos = _mark_positions(pred)
    gold_pos = _mark_positions(gold)
    out = {}
    for cls in BOUNDARY_CLASSES:
        tp = len(pred_pos[cls] & gold_pos[cls])
        out[cls] = ClassReport.from_counts(
            tp=tp, fp=len(pred_pos[cls]) - tp, fn=len(gold_pos[cls]) - tp
        )
    return out


Entity = tuple[str, int, int]


def ner_metrics(
    pred: Iterable[Entity], gold: Iterable[Entity]
) -> tuple[dict[str, ClassReport], ClassReport]:
    """Entity-level exact match: kind, start and end must all be equal."""
    pred_set = set(pred)
    gold_set = set(gold)
    kinds = sorted({e[0] for e in pred_set | gold_set})
    per_kind = {}
    for kind in kinds:
        p = {e for e in pred_set if e[0] == kind}
        g = {e for e in gold_set if e[0] == kind}
        tp = len(p & g)
        per_kind[kind] = ClassReport.from_counts(tp=tp, fp=len(p) - tp, fn=len(g) - tp)
    tp = len(pred_set & gold_set)
    micro = ClassReport.from_counts(tp=tp, fp=len(pred_set) - tp, fn=len(gold_set) - tp)
    return per_kind, micro


@dataclass
class EvalReport:
    """Per-class boundary and entity scores plus cross-class aggregates.

    For a single run the per-class precision/recall obey the counts; in a
    report aggregated over runs they are means over the runs and the
    F-scores are harmonic means of those averaged values.
    """

    boundary: dict[str, ClassReport]
    entities: dict[str, ClassReport] = field(default_factory=dict)
    ner_micro: ClassReport | None = None
    counters: dict[str, int] = field(default_factory=dict)
    n_runs: int = 1

    @property
    def macro_boundary_precision(self) -> float:
        reports = [self.boundary[c] for c in BOUNDARY_CLASSES]
        return sum(r.precision for r in reports) / len(reports)

    @property
    def macro_boundary_recall(self) -> float:
        reports = [self.boundary[c] for c in BOUNDARY_CLASSES]
        return sum(r.recall for r in reports) / len(reports)

    @property
    def macro_boundary_f(self) -> float:
        return harmonic(self.macro_boundary_precision, self.macro_boundary_recall)

    def to_dict(self) -> dict:
        return {
            "boundary": {c: r.to_dict() for c, r in self.boundary.items()},
            "entities": {k: r.to_dict() for k, r in self.entities.items()},
            "ner_micro": self.ner_micro.to_dict() if self.ner_micro else None,
            "macro_boundary_precision": self.macro_boundary_precision,
            "macro_boundary_recall": self.macro_boundary_recall,
            "macro_boundary_f": self.macro_boundary_f,
            "counters": dict(self.counters),
            "n_runs": self.n_runs,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def evaluate_boundaries(
    pred: Sequence[str],
    gold: Sequence[str],
    counters: dict[str, int] | None = None,
) -> EvalReport:
    return EvalReport(boundary=boundary_metrics(pred, gold), counters=counters or {})


def _mean_report(reports: list[ClassReport]) -> ClassReport:
    n = len(reports)
    p = sum(r.precision for r in reports) / n
    r_ = sum(r.recall for r in reports) / n
    return ClassReport(
        tp=sum(r.tp for r in reports),
        fp=sum(r.fp for r in reports),
        fn=sum(r.fn for r in reports),
        precision=p,
        recall=r_,
        f=harmonic(p, r_),
    )


def aggregate_runs(reports: Sequence[EvalReport]) -> EvalReport:
    """Average precision and recall per class over runs; F from the averages."""
    if not reports:
        raise MetricsError("nothing to aggregate")
    boundary_classes = set(reports[0].boundary)
    entity_kinds = set(reports[0].entities)
    for report in reports[1:]:
        if set(report.boundary) != boundary_classes or set(report.entities) != entity_kinds:
            raise MetricsError("cannot aggregate reports with different label schemes")
    boundary = {
        c: _mean_report([r.boundary[c] for r in reports]) for c in sorted(boundary_classes)
    }
    entities = {
        k: _mean_report([r.entities[k] for r in reports]) for k in sorted(entity_kinds)
    }
    micros = [r.ner_micro for r in reports if r.ner_micro is not None]
    micro = _mean_report(micros) if len(micros) == len(reports) and micros else None
    counters: dict[str, int] = {}
    for report in reports:
        for key, value in report.counters.items():
            counters[key] = counters.get(key, 0) + value
    return EvalReport(
        boundary=boundary,
        entities=entities,
        ner_micro=micro,
        counters=counters,
        n_runs=sum(r.n_runs for r in reports),
    )


def dummy_baseline(lines: Sequence[LineRecord]) -> list[str]:
    """Predict an entry boundary at every line: each line begins and ends one."""
    return [EBOTH] * len(lines)


def gold_line_marks(
    lines: Sequence[LineRecord], entries: Sequence[EntryAnnotation]
) -> list[str]:
    """Line-level gold marks: EBEGIN on first lines, EEND on last lines."""
    marks = [OUTSIDE] * len(lines)
    for entry in entries:
        if entry.start_line == entry.end_line:
            marks[entry.start_line] = EBOTH
        else:
            marks[entry.start_line] = EBEGIN
            marks[entry.end_line] = EEND
    return marks
