"""Data model and JSONL I/O for OCR line collections, entry annotations and splits."""

from __future__ import annotations

import json
import random
import unicodedata
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

# Fraction of column width a line bbox may stick out horizontally before
# it is rejected instead of clamped.
CONTAINMENT_TOLERANCE = 0.02

BBox = tuple[float, float, float, float]
PageId = tuple[str, int]


class CorpusError(Exception):
    """Base class for corpus loading problems."""


class ParseError(CorpusError):
    """Malformed JSON or missing fields in an input file."""


class ValidationError(CorpusError):
    """A record violates an invariant of the data model."""


@dataclass(frozen=True)
class LineRecord:
    """One OCR text line with its geometry and reading-order position."""

    doc_id: str
    page: int
    column: int
    order: int
    text: str
    line_bbox: BBox
    column_bbox: BBox

    @property
    def key(self) -> tuple[str, int, int, int]:
        return (self.doc_id, self.page, self.column, self.order)

    @property
    def page_id(self) -> PageId:
        return (self.doc_id, self.page)

    @property
    def column_key(self) -> tuple[str, int, int]:
        return (self.doc_id, self.page, self.column)

    @property
    def column_width(self) -> float:
        return self.column_bbox[2] - self.column_bbox[0]


@dataclass(frozen=True)
class EntitySpan:
    """Half-open character span of one entity inside an entry's text."""

    kind: str
    start: int
    end: int


@dataclass(frozen=True)
class EntryAnnotation:
    """One directory entry: an inclusive range of global line indices plus entities."""

    doc_id: str
    start_line: int
    end_line: int
    entities: tuple[EntitySpan, ...] = ()


@dataclass(frozen=True)
class DatasetSplit:
    """Disjoint page-identifier sets covering a corpus."""

    train: frozenset[PageId]
    test: frozenset[PageId]
    validation: frozenset[PageId]

    def all_pages(self) -> frozenset[PageId]:
        return self.train | self.test | self.validation


def _check_bbox(bbox: Sequence[float], what: str, where: str) -> BBox:
    if len(bbox) != 4:
        raise ValidationError(f"{where}: {what} must have 4 coordinates")
    x0, y0, x1, y1 = (float(v) for v in bbox)
    if not (x0 < x1 and y0 < y1):
        raise ValidationError(f"{where}: degenerate {what} [{x0}, {y0}, {x1}, {y1}]")
    return (x0, y0, x1, y1)


def make_line(
    doc_id: str,
    page: int,
    column: int,
    order: int,
    text: str,
    line_bbox: Sequence[float],
    column_bbox: Sequence[float],
    where: str = "record",
) -> LineRecord:
    """Validate raw field values and build a LineRecord.

    The line bbox is clamped horizontally into the column bbox; overhang
    beyond ``CONTAINMENT_TOLERANCE`` of the column width is an error.
    Text is NFC-normalized so character offsets are stable downstream.
    """
    key = (doc_id, page, column, order)
    where = f"{where} {key}"
    if page < 0 or column < 0 or order < 0:
        raise ValidationError(f"{where}: page/column/order must be >= 0")
    lb = _check_bbox(line_bbox, "line bbox", where)
    cb = _check_bbox(column_bbox, "column bbox", where)
    width = cb[2] - cb[0]
    tol = CONTAINMENT_TOLERANCE * width
    if lb[0] < cb[0] - tol or lb[2] > cb[2] + tol:
        raise ValidationError(f"{where}: line bbox outside column bbox beyond tolerance")
    lb = (max(lb[0], cb[0]), lb[1], min(lb[2], cb[2]), lb[3])
    return LineRecord(
        doc_id=str(doc_id),
        page=int(page),
        column=int(column),
        order=int(order),
        text=unicodedata.normalize("NFC", text),
        line_bbox=lb,
        column_bbox=cb,
    )


def _validate_collection(records: list[LineRecord]) -> None:
    seen: set[tuple] = set()
    for rec in records:
        if rec.key in seen:
            raise ValidationError(f"duplicate line key {rec.key}")
        seen.add(rec.key)
    # order must be dense from 0 within each column
    by_column: dict[tuple, list[int]] = {}
    for rec in records:
        by_column.setdefault(rec.column_key, []).append(rec.order)
    for colkey, orders in by_column.items():
        if sorted(orders) != list(range(len(orders))):
            raise ValidationError(f"column {colkey}: order indices not dense from 0")


def load_lines(path: str | Path) -> list[LineRecord]:
    """Load a JSONL line-record file, sorted by (doc, page, column, order)."""
    path = Path(path)
    records: list[LineRecord] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            try:
                records.append(
                    make_line(
                        obj["doc"], obj["page"], obj["column"], obj["order"],
                        obj["text"], obj["bbox"], obj["column_bbox"],
                        where=f"{path}:{lineno}",
                    )
                )
            except KeyError as exc:
                raise ParseError(f"{path}:{lineno}: missing field {exc}") from exc
    records.sort(key=lambda r: r.key)
    _validate_collection(records)
    return records


def save_lines(records: Iterable[LineRecord], path: str | Path) -> None:
    """Canonical JSONL writer; keys emitted in schema order."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            obj = {
                "doc": rec.doc_id,
                "page": rec.page,
                "column": rec.column,
                "order": rec.order,
                "text": rec.text,
                "bbox": list(rec.line_bbox),
                "column_bbox": list(rec.column_bbox),
            }
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def entry_text(lines: Sequence[LineRecord], entry: EntryAnnotation) -> str:
    """The entry's text: its lines' texts joined by a single newline."""
    return "\n".join(lines[i].text for i in range(entry.start_line, entry.end_line + 1))


def _validate_entry(entry: EntryAnnotation, lines: Sequence[LineRecord] | None, where: str) -> None:
    if entry.start_line < 0 or entry.start_line > entry.end_line:
        raise ValidationError(f"{where}: bad line range [{entry.start_line}, {entry.end_line}]")
    prev_end = -1
    for span in entry.entities:
        if span.start < 0 or span.start >= span.end:
            raise ValidationError(f"{where}: bad entity span [{span.start}, {span.end})")
        if span.start < prev_end:
            raise ValidationError(f"{where}: overlapping entity spans")
        prev_end = span.end
    if lines is not None:
        if entry.end_line >= len(lines):
            raise ValidationError(f"{where}: end_line {entry.end_line} beyond line collection")
        text = entry_text(lines, entry)
        for span in entry.entities:
            if span.end > len(text):
                raise ValidationError(
                    f"{where}: entity span end {span.end} beyond entry text of length {len(text)}"
                )


def load_annotations(
    path: str | Path, lines: Sequence[LineRecord] | None = None
) -> list[EntryAnnotation]:
    """Load JSONL entry annotations, sorted and checked for overlap.

    When ``lines`` is given, entity spans are also validated against the
    entry text they index into.
    """
    path = Path(path)
    entries: list[EntryAnnotation] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            try:
                spans = tuple(
                    EntitySpan(kind=e["kind"], start=int(e["start"]), end=int(e["end"]))
                    for e in obj.get("entities", [])
                )
                entry = EntryAnnotation(
                    doc_id=obj["doc"],
                    start_line=int(obj["start_line"]),
                    end_line=int(obj["end_line"]),
                    entities=tuple(sorted(spans, key=lambda s: s.start)),
                )
            except KeyError as exc:
                raise ParseError(f"{path}:{lineno}: missing field {exc}") from exc
            _validate_entry(entry, lines, where=f"{path}:{lineno}")
            entries.append(entry)
    entries.sort(key=lambda e: (e.doc_id, e.start_line))
    prev: EntryAnnotation | None = None
    for entry in entries:
        if prev is not None and prev.doc_id == entry.doc_id and entry.start_line <= prev.end_line:
            raise ValidationError(
                f"entries [{prev.start_line},{prev.end_line}] and "
                f"[{entry.start_line},{entry.end_line}] of {entry.doc_id} overlap"
            )
        prev = entry
    return entries


def save_annotations(entries: Iterable[EntryAnnotation], path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for entry in entries:
            obj = {
                "doc": entry.doc_id,
                "start_line": entry.start_line,
                "end_line": entry.end_line,
                "entities": [
                    {"kind": s.kind, "start": s.start, "end": s.end} for s in entry.entities
                ],
            }
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def split_dataset(
    pages: Iterable[PageId],
    ratios: tuple[float, float, float] = (0.80, 0.15, 0.05),
    seed: int = 0,
) -> DatasetSplit:
    """Deterministically partition pages into train/test/validation.

    Test and validation sizes are rounded to the nearest integer; train
    takes the remainder so counts always sum to the page count.
    """
    pages = sorted(set(pages))
    if not pages:
        raise ValidationError("cannot split an empty page set")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValidationError(f"split ratios {ratios} do not sum to 1")
    rng = random.Random(seed)
    rng.shuffle(pages)
    n = len(pages)
    n_test = min(n, int(n * ratios[1] + 0.5))
    n_val = min(n - n_test, int(n * ratios[2] + 0.5))
    test = frozenset(pages[:n_test])
    validation = frozenset(pages[n_test:n_test + n_val])
    train = frozenset(pages[n_test + n_val:])
    return DatasetSplit(train=train, test=test, validation=validation)


def select_pages(
    lines: Sequence[LineRecord],
    entries: Sequence[EntryAnnotation],
    pages: Iterable[PageId],
) -> tuple[list[LineRecord], list[EntryAnnotation], list[int]]:
    """Restrict a corpus to a page set, keeping entries whole.

    A line belongs to the selection if its page is selected, except that
    lines inside an entry follow the page of the entry's first line, so an
    entry is never cut by a split boundary. Entry line indices are remapped
    to the returned sub-collection. Also returns the kept global indices
    (useful to subset per-line sidecar data).
    """
    pages = set(pages)
    owner: dict[int, EntryAnnotation] = {}
    for entry in entries:
        for i in range(entry.start_line, entry.end_line + 1):
            owner[i] = entry
    kept: list[int] = []
    for i, line in enumerate(lines):
        entry = owner.get(i)
        anchor = lines[entry.start_line].page_id if entry is not None else line.page_id
        if anchor in pages:
            kept.append(i)
    remap = {g: local for local, g in enumerate(kept)}
    out_lines = [lines[g] for g in kept]
    out_entries = [
        replace(e, start_line=remap[e.start_line], end_line=remap[e.end_line])
        for e in entries
        if lines[e.start_line].page_id in pages
    ]
    return out_lines, out_entries, kept
