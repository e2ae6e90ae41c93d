"""Per-token label sequences: projection from annotations, alignment, decoding.

Boundary marks are EBEGIN/EEND (plus a fused EBOTH for a token that is both
the first and last of its entry). Entity labels use IOB. Under the joint
policy a label is the product of an entity part and an optional mark, e.g.
"B-ACT+EBEGIN".
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

from .corpus import EntryAnnotation
from .stream import JOINT, POLICIES, SPACE_TOKENS, TokenKind
from .tokenizer import EncodedStream

EBEGIN = "EBEGIN"
EEND = "EEND"
EBOTH = "EBOTH"
OUTSIDE = "O"
MARKS = (EBEGIN, EEND, EBOTH)

DEFAULT_ENTITY_KINDS = ("PER", "ACT", "TITLE", "LOC", "CARDINAL")


class LabelingError(Exception):
    pass


@dataclass(frozen=True)
class LabelScheme:
    """Finite label inventory for one policy and entity set."""

    policy: str
    entity_kinds: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.policy not in POLICIES:
            raise LabelingError(f"unknown policy {self.policy!r}")
        if self.policy == JOINT and not self.entity_kinds:
            raise LabelingError("joint policy needs entity kinds")

    @cached_property
    def entity_parts(self) -> tuple[str, ...]:
        parts = [OUTSIDE]
        for kind in self.entity_kinds:
            parts.extend((f"B-{kind}", f"I-{kind}"))
        return tuple(parts)

    @cached_property
    def labels(self) -> tuple[str, ...]:
        if self.policy == JOINT:
            out = []
            for part in self.entity_parts:
                out.append(part)
                out.extend(self.compose(part, mark) for mark in MARKS)
            return tuple(out)
        out = [OUTSIDE, EBEGIN, EEND, EBOTH]
        out.extend(p for p in self.entity_parts if p != OUTSIDE)
        return tuple(out)

    @cached_property
    def _label_index(self) -> dict[str, int]:
        return {label: i for i, label in enumerate(self.labels)}

    def compose(self, entity_part: str, mark: str | None) -> str:
        if mark is None:
            return entity_part
        if self.policy != JOINT:
            if entity_part != OUTSIDE:
                raise LabelingError(
                    f"cannot put {mark} on an entity token under {self.policy}"
                )
            return mark
        return f"{entity_part}+{mark}"

    def decompose(self, label: str) -> tuple[str, str | None]:
        """(entity part, boundary mark or None)."""
        if label in MARKS:
            return OUTSIDE, label
        if "+" in label:
            part, mark = label.rsplit("+", 1)
            return part, mark
        return label, None

    def id_of(self, label: str) -> int:
        try:
            return self._label_index[label]
        except KeyError:
            raise LabelingError(f"label {label!r} not in scheme") from None

    def label_of(self, label_id: int) -> str:
        return self.labels[label_id]

    def __len__(self) -> int:
        return len(self.labels)

    def to_dict(self) -> dict:
        return {"policy": self.policy, "entity_kinds": list(self.entity_kinds)}

    @classmethod
    def from_dict(cls, obj: dict) -> "LabelScheme":
        return cls(policy=obj["policy"], entity_kinds=tuple(obj.get("entity_kinds", ())))


@dataclass(frozen=True)
class LabeledStream:
    """An encoded stream plus one label id per token id."""

    encoded: EncodedStream
    label_ids: tuple[int, ...]
    scheme: LabelScheme
    counters: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if len(self.label_ids) != len(self.encoded.ids):
            raise LabelingError("label/id length mismatch")

    def label_strings(self) -> list[str]:
        return [self.scheme.label_of(i) for i in self.label_ids]

    def boundary_marks(self) -> list[str]:
        return boundary_marks_of(self.label_ids, self.scheme)


def boundary_marks_of(label_ids: Sequence[int], scheme: LabelScheme) -> list[str]:
    """Per position: EBEGIN/EEND/EBOTH, or O when the token carries no mark."""
    out = []
    for label_id in label_ids:
        _, mark = scheme.decompose(scheme.label_of(label_id))
        out.append(mark if mark is not None else OUTSIDE)
    return out


def _position_layout(encoded: EncodedStream):
    """Per encoded position: stream token, kind, line; plus per-line indexes."""
    tokens = encoded.stream.tokens
    first_text: dict[int, int] = {}
    last_text: dict[int, int] = {}
    lhspace: dict[int, int] = {}
    rhspace: dict[int, int] = {}
    lines: list[int] = []
    kinds: list[TokenKind] = []
    for pos, (ti, _span) in enumerate(encoded.origin):
        tok = tokens[ti]
        lines.append(tok.line)
        kinds.append(tok.kind)
        if tok.kind == TokenKind.TEXT:
            first_text.setdefault(tok.line, pos)
            last_text[tok.line] = pos
        elif tok.kind == TokenKind.LHSPACE:
            lhspace[tok.line] = pos
        elif tok.kind == TokenKind.RHSPACE:
            rhspace[tok.line] = pos
    return lines, kinds, first_text, last_text, lhspace, rhspace


def _boundary_positions(
    encoded: EncodedStream, entries: Sequence[EntryAnnotation], policy: str
) -> tuple[list[tuple[int, int]], int]:
    """(first, last) encoded position per entry; skipped entries counted."""
    _, _, first_text, last_text, lhspace, rhspace = _position_layout(encoded)
    positions: list[tuple[int, int]] = []
    skipped = 0
    for entry in entries:
        if policy == SPACE_TOKENS:
            begin = lhspace.get(entry.start_line)
            end = rhspace.get(entry.end_line)
            if begin is None or end is None:
                raise LabelingError(
                    "space-token policy on a stream without left/right space tokens"
                )
            positions.append((begin, end))
        else:
            begin = min(
                (first_text[l] for l in range(entry.start_line, entry.end_line + 1)
                 if l in first_text),
                default=None,
            )
            end = max(
                (last_text[l] for l in range(entry.start_line, entry.end_line + 1)
                 if l in last_text),
                default=None,
            )
            if begin is None or end is None:
                skipped += 1
                continue
            positions.append((begin, end))
    return positions, skipped


def project_boundary_labels(
    encoded: EncodedStream,
    entries: Sequence[EntryAnnotation],
    scheme: LabelScheme,
) -> LabeledStream:
    """Exactly one EBEGIN and one EEND per entry, on policy-selected tokens."""
    marks: dict[int, str] = {}
    positions, skipped = _boundary_positions(encoded, entries, scheme.policy)
    for begin, end in positions:
        if begin == end:
            marks[begin] = EBOTH
        else:
            marks[begin] = EBEGIN
            marks[end] = EEND
    labels = [
        scheme.id_of(scheme.compose(OUTSIDE, marks.get(pos)))
        for pos in range(len(encoded.ids))
    ]
    return LabeledStream(
        encoded=encoded,
        label_ids=tuple(labels),
        scheme=scheme,
        counters={"skipped_entries": skipped},
    )


def needleman_wunsch(clean: str, noisy: str) -> list[tuple[int | None, bool]]:
    """Global alignment; per clean index: (aligned noisy index or None, matched).

    Scores: match +1, mismatch -1, gap -1.
    """
    nc, nn = len(clean), len(noisy)
    prev = list(range(0, -(nn + 1), -1))
    trace: list[list[int]] = []  # 0 diag, 1 up (skip clean), 2 left (skip noisy)
    rows = [prev]
    for i in range(1, nc + 1):
        cur = [-i] + [0] * nn
        tr = [1] + [0] * nn
        for j in range(1, nn + 1):
            s = 1 if clean[i - 1] == noisy[j - 1] else -1
            diag = rows[i - 1][j - 1] + s
            up = rows[i - 1][j] - 1
            left = cur[j - 1] - 1
            best = max(diag, up, left)
            cur[j] = best
            tr[j] = 0 if best == diag else (1 if best == up else 2)
        rows.append(cur)
        trace.append(tr)
    out: list[tuple[int | None, bool]] = [(None, False)] * nc
    i, j = nc, nn
    while i > 0 or j > 0:
        if i > 0 and j > 0 and trace[i - 1][j] == 0:
            out[i - 1] = (j - 1, clean[i - 1] == noisy[j - 1])
            i -= 1
            j -= 1
        elif i > 0 and (j == 0 or trace[i - 1][j] == 1):
            out[i - 1] = (None, False)
            i -= 1
        else:
            j -= 1
    return out


def align_annotations(
    clean: str,
    noisy: str,
    spans: Sequence[tuple[int, int]],
    drop_threshold: float = 0.5,
) -> list[tuple[int, int] | None]:
    """Project clean-text char spans onto noisy text through a global alignment.

    A span maps to the smallest covering noisy span; it is dropped (None)
    when fewer than ``drop_threshold`` of its characters survive as matches.
    """
    if clean == noisy:
        return [(s, e) for s, e in spans]
    alignment = needleman_wunsch(clean, noisy)
    out: list[tuple[int, int] | None] = []
    for start, end in spans:
        targets = [alignment[i][0] for i in range(start, end) if alignment[i][0] is not None]
        matches = sum(1 for i in range(start, end) if alignment[i][1])
        if not targets or matches / (end - start) < drop_threshold:
            out.append(None)
        else:
            out.append((min(targets), max(targets) + 1))
    return out


def _entity_positions(
    encoded: EncodedStream,
    entries: Sequence[EntryAnnotation],
    clean_line_texts: Sequence[str] | None,
    drop_threshold: float,
) -> tuple[list[tuple[str, list[int]]], int]:
    """Encoded positions covered by each entity; dropped entities counted."""
    tokens = encoded.stream.tokens
    # per line: TEXT subword (position, char span) pairs, and the stream text
    line_subwords: dict[int, list[tuple[int, tuple[int, int]]]] = {}
    line_text: dict[int, str] = {}
    for pos, (ti, span) in enumerate(encoded.origin):
        tok = tokens[ti]
        if tok.kind == TokenKind.TEXT:
            line_subwords.setdefault(tok.line, []).append((pos, span))
            line_text[tok.line] = tok.payload
    for tok in tokens:
        if tok.kind == TokenKind.TEXT:
            line_text.setdefault(tok.line, tok.payload)

    alignment_cache: dict[int, list] = {}

    def project_piece(line: int, a: int, b: int) -> tuple[int, int] | None:
        clean = clean_line_texts[line] if clean_line_texts is not None else line_text.get(line, "")
        noisy = line_text.get(line, "")
        if clean == noisy:
            return (a, b)
        if line not in alignment_cache:
            alignment_cache[line] = needleman_wunsch(clean, noisy)
        alignment = alignment_cache[line]
        targets = [alignment[i][0] for i in range(a, b) if alignment[i][0] is not None]
        matches = sum(1 for i in range(a, b) if alignment[i][1])
        if not targets or matches / (b - a) < drop_threshold:
            return None
        return (min(targets), max(targets) + 1)

    results: list[tuple[str, list[int]]] = []
    dropped = 0
    for entry in entries:
        entry_lines = list(range(entry.start_line, entry.end_line + 1))
        if clean_line_texts is not None:
            texts = [clean_line_texts[l] for l in entry_lines]
        else:
            texts = [line_text.get(l, "") for l in entry_lines]
        offsets = []
        off = 0
        for text in texts:
            offsets.append(off)
            off += len(text) + 1  # joining newline
        for span in entry.entities:
            positions: list[int] = []
            any_piece = False
            for line, text, off in zip(entry_lines, texts, offsets):
                a = max(span.start, off) - off
                b = min(span.end, off + len(text)) - off
                if a >= b:
                    continue
                any_piece = True
                projected = project_piece(line, a, b)
                if projected is None:
                    continue
                pa, pb = projected
                for pos, (u, v) in line_subwords.get(line, []):
                    if u < pb and pa < v:
                        positions.append(pos)
            if positions:
                results.append((span.kind, sorted(positions)))
            elif any_piece:
                dropped += 1
    return results, dropped


def project_entity_labels(
    encoded: EncodedStream,
    entries: Sequence[EntryAnnotation],
    scheme: LabelScheme,
    clean_line_texts: Sequence[str] | None = None,
    base: LabeledStream | None = None,
    drop_threshold: float = 0.5,
) -> LabeledStream:
    """IOB entity labels on text subwords, fused with boundary marks if joint.

    ``clean_line_texts`` (indexed by global line) carries the text the
    entity offsets refer to; where it differs from the stream's (noisy)
    text, spans are projected through a character alignment. Existing
    boundary marks from ``base`` are preserved.
    """
    if not scheme.entity_kinds:
        raise LabelingError("scheme has no entity kinds")
    n = len(encoded.ids)
    marks: list[str | None] = [None] * n
    counters = {"dropped_entities": 0, "skipped_entries": 0}
    if base is not None:
        if base.encoded is not encoded and base.encoded.ids != encoded.ids:
            raise LabelingError("base labels come from a different stream")
        for pos, label_id in enumerate(base.label_ids):
            _, mark = scheme.decompose(scheme.label_of(label_id))
            marks[pos] = mark
        counters.update(base.counters)

    parts = [OUTSIDE] * n
    entity_positions, dropped = _entity_positions(
        encoded, entries, clean_line_texts, drop_threshold
    )
    counters["dropped_entities"] = counters.get("dropped_entities", 0) + dropped
    for kind, positions in entity_positions:
        for rank, pos in enumerate(positions):
            parts[pos] = f"{'B' if rank == 0 else 'I'}-{kind}"

    labels = [
        scheme.id_of(scheme.compose(parts[pos], marks[pos])) for pos in range(n)
    ]
    return LabeledStream(
        encoded=encoded, label_ids=tuple(labels), scheme=scheme, counters=counters
    )


def project_labels(
    encoded: EncodedStream,
    entries: Sequence[EntryAnnotation],
    scheme: LabelScheme,
    clean_line_texts: Sequence[str] | None = None,
    with_entities: bool | None = None,
) -> LabeledStream:
    """Boundary labels plus, when the scheme carries entity kinds, entity labels."""
    boundary = project_boundary_labels(encoded, entries, scheme)
    if with_entities is None:
        with_entities = bool(scheme.entity_kinds)
    if not with_entities:
        return boundary
    return project_entity_labels(
        encoded, entries, scheme, clean_line_texts=clean_line_texts, base=boundary
    )


def decode_entries(labeled: LabeledStream) -> tuple[list[tuple[int, int]], int]:
    """Matched (begin, end) position pairs; unmatched or crossing marks counted."""
    return decode_entry_spans(labeled.label_ids, labeled.scheme)


def decode_entry_spans(
    label_ids: Sequence[int], scheme: LabelScheme
) -> tuple[list[tuple[int, int]], int]:
    entries: list[tuple[int, int]] = []
    malformed = 0
    open_pos: int | None = None
    for pos, mark in enumerate(boundary_marks_of(label_ids, scheme)):
        if mark == EBEGIN:
            if open_pos is not None:
                malformed += 1
            open_pos = pos
        elif mark == EEND:
            if open_pos is None:
                malformed += 1
            else:
                entries.append((open_pos, pos))
                open_pos = None
        elif mark == EBOTH:
            if open_pos is not None:
                malformed += 1
                open_pos = None
            entries.append((pos, pos))
    if open_pos is not None:
        malformed += 1
    return entries, malformed


def decode_entities(labeled: LabeledStream) -> list[tuple[str, int, int]]:
    """(kind, first position, last position) triples from IOB entity parts."""
    return decode_entity_triples(labeled.label_ids, labeled.scheme)


def decode_entity_triples(
    label_ids: Sequence[int], scheme: LabelScheme
) -> list[tuple[str, int, int]]:
    out: list[tuple[str, int, int]] = []
    current_kind: str | None = None
    start = 0
    prev = -1
    for pos, label_id in enumerate(label_ids):
        part, _ = scheme.decompose(scheme.label_of(label_id))
        if part == OUTSIDE:
            if current_kind is not None:
                out.append((current_kind, start, prev))
                current_kind = None
            continue
        prefix, kind = part.split("-", 1)
        if prefix == "B" or current_kind != kind:
            if current_kind is not None:
                out.append((current_kind, start, prev))
            current_kind = kind
            start = pos
        prev = pos
    if current_kind is not None:
        out.append((current_kind, start, prev))
    return out


def entry_line_range(labeled: LabeledStream, span: tuple[int, int]) -> tuple[int, int]:
    """Map decoded (begin, end) positions to the line indices they live on."""
    tokens = labeled.encoded.stream.tokens
    begin_line = tokens[labeled.encoded.origin[span[0]][0]].line
    end_line = tokens[labeled.encoded.origin[span[1]][0]].line
    return begin_line, end_line


def save_labeled(labeled: LabeledStream, path: str | Path) -> None:
    obj = {
        "ids": list(labeled.encoded.ids),
        "labels": list(labeled.label_ids),
        "scheme": labeled.scheme.to_dict(),
        "counters": dict(labeled.counters),
        "vocab_fingerprint": labeled.encoded.vocab_fingerprint,
    }
    Path(path).write_text(json.dumps(obj, ensure_ascii=False) + "\n", encoding="utf-8")


def load_label_file(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))
