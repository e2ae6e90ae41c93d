"""Visual measures, categorical encoding and the mixed visual+textual token stream."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict
from enum import Enum
from pathlib import Path
from typing import Sequence

from .corpus import LineRecord


class StreamError(Exception):
    """Invalid geometry or configuration while building a stream."""


class ConfigError(StreamError):
    """An ExperimentConfig violates its invariants."""


class TokenKind(Enum):
    TEXT = "text"
    BREAK = "break"
    LHSPACE = "lhspace"
    RHSPACE = "rhspace"
    TEXTLINE = "textline"
    # Representable but never emitted by this pipeline.
    GRAPHICAL = "graphical"
    PRESENTATIONAL = "presentational"


SPECIAL_KINDS = (TokenKind.BREAK, TokenKind.LHSPACE, TokenKind.RHSPACE, TokenKind.TEXTLINE)

BREAK_MARKER = "<break>"
TEXTLINE_MARKER = "<textline>"

LEFT_NONE, LEFT_ABSOLUTE, LEFT_RELATIVE = "none", "absolute", "relative"
RIGHT_NONE, RIGHT_ABSOLUTE = "none", "absolute"
TEXT_TOKENS, SPACE_TOKENS, JOINT = "text_tokens", "space_tokens", "joint"
POLICIES = (TEXT_TOKENS, SPACE_TOKENS, JOINT)


@dataclass(frozen=True)
class SpaceMeasures:
    """Horizontal spaces of a line, as fractions of its column width."""

    left_abs: float
    right_abs: float
    left_rel: float


@dataclass(frozen=True)
class QuantizerBins:
    """Sorted right-open intervals covering a value domain.

    ``breakpoints`` has one more element than there are bins; bin i covers
    [breakpoints[i], breakpoints[i+1]). With ``closed_top`` the last bin
    also contains the final breakpoint.
    """

    breakpoints: tuple[float, ...]
    closed_top: bool = False

    def __post_init__(self) -> None:
        if len(self.breakpoints) < 3:
            raise StreamError("need at least 2 bins")
        if list(self.breakpoints) != sorted(self.breakpoints):
            raise StreamError("breakpoints must be sorted")

    @property
    def n_bins(self) -> int:
        return len(self.breakpoints) - 1


REL_LEFT_BINS = QuantizerBins((-math.inf, -0.01, 0.01, math.inf))
ABS_LEFT_BINS = QuantizerBins((0.0, 0.02, 0.08, 1.0), closed_top=True)
ABS_RIGHT_BINS = QuantizerBins((0.0, 0.05, 0.08, 1.0), closed_top=True)


def quantize(value: float, bins: QuantizerBins) -> int:
    """Index of the bin containing ``value``; error when outside the domain."""
    bp = bins.breakpoints
    if value < bp[0]:
        raise StreamError(f"value {value} below bin domain [{bp[0]}, {bp[-1]}]")
    for i in range(bins.n_bins):
        if value < bp[i + 1]:
            return i
    if bins.closed_top and value == bp[-1]:
        return bins.n_bins - 1
    raise StreamError(f"value {value} above bin domain [{bp[0]}, {bp[-1]}]")


def compute_spaces(line: LineRecord, prev: LineRecord | None = None) -> SpaceMeasures:
    """Left/right absolute spaces and the left offset versus the previous line."""
    width = line.column_width
    if width <= 0:
        raise StreamError(f"line {line.key}: zero column width")
    if prev is not None and prev.column_key != line.column_key:
        raise StreamError(f"line {line.key}: prev line {prev.key} is from another column")

    def _left_abs(rec: LineRecord) -> float:
        w = rec.column_bbox[2] - rec.column_bbox[0]
        return min(1.0, max(0.0, (rec.line_bbox[0] - rec.column_bbox[0]) / w))

    left_abs = _left_abs(line)
    right_abs = min(1.0, max(0.0, (line.column_bbox[2] - line.line_bbox[2]) / width))
    left_rel = left_abs - _left_abs(prev) if prev is not None else 0.0
    return SpaceMeasures(left_abs=left_abs, right_abs=right_abs, left_rel=left_rel)


@dataclass(frozen=True)
class ExperimentConfig:
    """Feature flags selecting which tokens and labels a run uses."""

    use_text: bool = True
    use_breaks: bool = False
    left_mode: str = LEFT_NONE
    right_mode: str = RIGHT_NONE
    ner: bool = False
    boundary_policy: str = TEXT_TOKENS

    def validate(self) -> None:
        if self.left_mode not in (LEFT_NONE, LEFT_ABSOLUTE, LEFT_RELATIVE):
            raise ConfigError(f"bad left_mode {self.left_mode!r}")
        if self.right_mode not in (RIGHT_NONE, RIGHT_ABSOLUTE):
            raise ConfigError(f"bad right_mode {self.right_mode!r}")
        if self.boundary_policy not in POLICIES:
            raise ConfigError(f"bad boundary_policy {self.boundary_policy!r}")
        if not self.use_text and not self.use_breaks:
            raise ConfigError("a text-free stream requires breaks")
        if self.boundary_policy == SPACE_TOKENS and (
            self.left_mode == LEFT_NONE or self.right_mode == RIGHT_NONE
        ):
            raise ConfigError("space-token boundary labels need left and right spaces")
        if self.boundary_policy == JOINT and not self.ner:
            raise ConfigError("joint labels are products with entity labels; enable ner")
        if self.ner and not self.use_text:
            raise ConfigError("ner requires text tokens")
        if self.ner and self.boundary_policy == TEXT_TOKENS:
            raise ConfigError(
                "ner with text-token boundaries needs the joint policy; "
                "one token cannot carry separate boundary and entity labels"
            )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        allowed = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - allowed
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        config = cls(**obj)
        config.validate()
        return config

    def special_markers(self) -> list[str]:
        """Canonical marker strings this configuration can emit."""
        markers: list[str] = []
        if self.use_breaks:
            markers.append(BREAK_MARKER)
        if self.left_mode != LEFT_NONE:
            markers.extend(lhspace_marker(i) for i in range(3))
        if self.right_mode != RIGHT_NONE:
            markers.extend(rhspace_marker(i) for i in range(3))
        if not self.use_text:
            markers.append(TEXTLINE_MARKER)
        return markers


def lhspace_marker(bin_index: int) -> str:
    return f"<lhspace-{bin_index}>"


def rhspace_marker(bin_index: int) -> str:
    return f"<rhspace-{bin_index}>"


ALL_MARKERS = (
    [BREAK_MARKER]
    + [lhspace_marker(i) for i in range(3)]
    + [rhspace_marker(i) for i in range(3)]
    + [TEXTLINE_MARKER]
)

PRESETS: dict[str, ExperimentConfig] = {
    "xp-1.1": ExperimentConfig(use_text=True),
    "xp-1.2": ExperimentConfig(use_text=True, use_breaks=True),
    "xp-1.3": ExperimentConfig(use_text=True, use_breaks=True, left_mode=LEFT_ABSOLUTE),
    "xp-1.4": ExperimentConfig(use_text=True, use_breaks=True, left_mode=LEFT_RELATIVE),
    "xp-1.5": ExperimentConfig(
        use_text=True, use_breaks=True, left_mode=LEFT_ABSOLUTE, right_mode=RIGHT_ABSOLUTE
    ),
    "xp-1.6": ExperimentConfig(
        use_text=True, use_breaks=True, left_mode=LEFT_RELATIVE, right_mode=RIGHT_ABSOLUTE
    ),
    "xp-1.7": ExperimentConfig(
        use_text=False, use_breaks=True, left_mode=LEFT_RELATIVE,
        right_mode=RIGHT_ABSOLUTE, boundary_policy=SPACE_TOKENS,
    ),
    "xp-2.1": ExperimentConfig(
        use_text=True, use_breaks=True, left_mode=LEFT_RELATIVE,
        right_mode=RIGHT_ABSOLUTE, ner=True, boundary_policy=SPACE_TOKENS,
    ),
    "xp-2.2": ExperimentConfig(
        use_text=True, use_breaks=True, left_mode=LEFT_RELATIVE,
        right_mode=RIGHT_ABSOLUTE, ner=True, boundary_policy=JOINT,
    ),
}


def get_preset(name: str) -> ExperimentConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(
            f"unknown preset {name!r}; valid presets: {', '.join(sorted(PRESETS))}"
        ) from None


@dataclass(frozen=True)
class StreamToken:
    """One element of the mixed stream with provenance back to its line."""

    kind: TokenKind
    payload: str
    line: int
    bin: int | None = None
    span: tuple[int, int] | None = None
    grain: str | None = None  # break granularity: line | column | page

    @property
    def marker(self) -> str:
        """Canonical marker string for non-text kinds."""
        if self.kind == TokenKind.BREAK:
            return BREAK_MARKER
        if self.kind == TokenKind.LHSPACE:
            return lhspace_marker(self.bin)
        if self.kind == TokenKind.RHSPACE:
            return rhspace_marker(self.bin)
        if self.kind == TokenKind.TEXTLINE:
            return TEXTLINE_MARKER
        raise StreamError(f"{self.kind} has no marker")


@dataclass(frozen=True)
class TokenStream:
    tokens: tuple[StreamToken, ...]
    n_lines: int

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)


def _break_grain(line: LineRecord, nxt: LineRecord | None) -> str:
    if nxt is None:
        return "page"
    if nxt.column_key == line.column_key:
        return "line"
    if nxt.page_id == line.page_id:
        return "column"
    return "page"


def build_stream(lines: Sequence[LineRecord], config: ExperimentConfig) -> TokenStream:
    """Emit, per line: LHSPACE, text (or <textline>), RHSPACE, BREAK.

    Space tokens are emitted whenever their mode is active, even for a
    null space; one BREAK covers line, column and page transitions, with
    the granularity kept in the token's provenance.
    """
    config.validate()
    tokens: list[StreamToken] = []
    prev_in_column: dict[tuple, LineRecord] = {}
    for i, line in enumerate(lines):
        prev = prev_in_column.get(line.column_key)
        measures = None
        if config.left_mode != LEFT_NONE or config.right_mode != RIGHT_NONE:
            measures = compute_spaces(line, prev)
        if config.left_mode == LEFT_ABSOLUTE:
            b = quantize(measures.left_abs, ABS_LEFT_BINS)
            tokens.append(StreamToken(TokenKind.LHSPACE, lhspace_marker(b), i, bin=b))
        elif config.left_mode == LEFT_RELATIVE:
            b = quantize(measures.left_rel, REL_LEFT_BINS)
            tokens.append(StreamToken(TokenKind.LHSPACE, lhspace_marker(b), i, bin=b))
        if config.use_text:
            tokens.append(
                StreamToken(TokenKind.TEXT, line.text, i, span=(0, len(line.text)))
            )
        else:
            tokens.append(StreamToken(TokenKind.TEXTLINE, TEXTLINE_MARKER, i))
        if config.right_mode == RIGHT_ABSOLUTE:
            b = quantize(measures.right_abs, ABS_RIGHT_BINS)
            tokens.append(StreamToken(TokenKind.RHSPACE, rhspace_marker(b), i, bin=b))
        if config.use_breaks:
            nxt = lines[i + 1] if i + 1 < len(lines) else None
            tokens.append(
                StreamToken(TokenKind.BREAK, BREAK_MARKER, i, grain=_break_grain(line, nxt))
            )
        prev_in_column[line.column_key] = line
    return TokenStream(tokens=tuple(tokens), n_lines=len(lines))


def save_stream(stream: TokenStream, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for tok in stream:
            obj: dict = {"kind": tok.kind.value, "line": tok.line}
            if tok.bin is not None:
                obj["bin"] = tok.bin
            if tok.kind == TokenKind.TEXT:
                obj["text"] = tok.payload
            if tok.span is not None:
                obj["span"] = list(tok.span)
            if tok.grain is not None:
                obj["grain"] = tok.grain
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def load_stream(path: str | Path) -> TokenStream:
    path = Path(path)
    tokens: list[StreamToken] = []
    max_line = -1
    with path.open("r", encoding="utf-8") as fh:
        for raw in fh:
            if not raw.strip():
                continue
            obj = json.loads(raw)
            kind = TokenKind(obj["kind"])
            bin_index = obj.get("bin")
            if kind == TokenKind.TEXT:
                payload = obj["text"]
            elif kind == TokenKind.BREAK:
                payload = BREAK_MARKER
            elif kind == TokenKind.LHSPACE:
                payload = lhspace_marker(bin_index)
            elif kind == TokenKind.RHSPACE:
                payload = rhspace_marker(bin_index)
            else:
                payload = TEXTLINE_MARKER
            span = tuple(obj["span"]) if "span" in obj else None
            tokens.append(
                StreamToken(kind, payload, obj["line"], bin=bin_index,
                            span=span, grain=obj.get("grain"))
            )
            max_line = max(max_line, obj["line"])
    return TokenStream(tokens=tuple(tokens), n_lines=max_line + 1)


def save_config(config: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2) + "\n", encoding="utf-8")


def load_config(path: str | Path) -> ExperimentConfig:
    return ExperimentConfig.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
