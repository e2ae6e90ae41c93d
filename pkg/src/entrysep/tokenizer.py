"""Subword tokenization with an extensible special-token registry.

Text chunks are segmented by greedy longest match against a vocabulary
trained with byte-pair style merges (or a character-level fallback).
Special tokens map to exactly one id and are never produced from text: any
"<" inside a text payload is escaped on ingestion and unescaped on decode.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .stream import TokenKind, TokenStream

PAD, UNK, BOS, EOS = 0, 1, 2, 3
CONTROL_SURFACES = ("<pad>", "<unk>", "<s>", "</s>")
KIND_BASE, KIND_SPECIAL, KIND_CONTROL = "base", "special", "control"

MIN_VOCAB_SIZE = 300


class TokenizerError(Exception):
    pass


def escape_text(text: str) -> str:
    """Make marker strings impossible inside text: backslash-escape '<'."""
    return text.replace("\\", "\\\\").replace("<", "\\<")


def unescape_text(text: str) -> str:
    out: list[str] = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "\\" and i + 1 < len(text):
            out.append(text[i + 1])
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def escape_with_map(text: str) -> tuple[str, list[int]]:
    """Escaped text plus, per escaped char, the index of its source char."""
    chars: list[str] = []
    src: list[int] = []
    for i, ch in enumerate(text):
        if ch in ("\\", "<"):
            chars.append("\\")
            src.append(i)
        chars.append(ch)
        src.append(i)
    return "".join(chars), src


@dataclass(frozen=True)
class SubwordVocab:
    """Dense id space: controls, then base subwords, then registered specials."""

    surfaces: tuple[str, ...]
    kinds: tuple[str, ...]
    _base_ids: dict[str, int] = field(default_factory=dict, repr=False, compare=False)
    _special_ids: dict[str, int] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        base: dict[str, int] = {}
        special: dict[str, int] = {}
        for i, (surface, kind) in enumerate(zip(self.surfaces, self.kinds)):
            table = special if kind == KIND_SPECIAL else base
            if surface in table:
                raise TokenizerError(f"duplicate surface {surface!r}")
            if kind != KIND_CONTROL:
                table[surface] = i
        object.__setattr__(self, "_base_ids", base)
        object.__setattr__(self, "_special_ids", special)

    def __len__(self) -> int:
        return len(self.surfaces)

    @property
    def max_base_len(self) -> int:
        return max((len(s) for s in self._base_ids), default=0)

    def base_id(self, surface: str) -> int | None:
        return self._base_ids.get(surface)

    def special_id(self, marker: str) -> int | None:
        return self._special_ids.get(marker)

    def surface(self, token_id: int) -> str:
        return self.surfaces[token_id]

    def kind(self, token_id: int) -> str:
        return self.kinds[token_id]

    def serialize(self) -> str:
        rows = []
        for i, (surface, kind) in enumerate(zip(self.surfaces, self.kinds)):
            enc = surface.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n").replace("\r", "\\r")
            rows.append(f"{i}\t{enc}\t{kind}")
        return "\n".join(rows) + "\n"

    def fingerprint(self) -> str:
        return hashlib.sha256(self.serialize().encode("utf-8")).hexdigest()

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.serialize(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "SubwordVocab":
        surfaces: list[str] = []
        kinds: list[str] = []
        for row in Path(path).read_text(encoding="utf-8").splitlines():
            if not row:
                continue
            token_id, enc, kind = row.split("\t")
            if int(token_id) != len(surfaces):
                raise TokenizerError(f"non-dense id {token_id} in vocabulary file")
            surfaces.append(_unescape_tsv(enc))
            kinds.append(kind)
        return cls(surfaces=tuple(surfaces), kinds=tuple(kinds))


def _unescape_tsv(enc: str) -> str:
    out: list[str] = []
    i = 0
    mapping = {"t": "\t", "n": "\n", "r": "\r", "\\": "\\"}
    while i < len(enc):
        if enc[i] == "\\" and i + 1 < len(enc) and enc[i + 1] in mapping:
            out.append(mapping[enc[i + 1]])
            i += 2
        else:
            out.append(enc[i])
            i += 1
    return "".join(out)


def train_tokenizer(
    corpus: Iterable[str], vocab_size: int, mode: str = "bpe"
) -> SubwordVocab:
    """Train a subword vocabulary over escaped corpus text.

    ``mode="bpe"`` does greedy pair merging over whitespace-separated words
    until the vocabulary reaches ``vocab_size`` or no pair repeats;
    ``mode="char"`` stops at the character inventory. The escape characters
    are always part of the inventory so any escaped text stays encodable.
    """
    if vocab_size < MIN_VOCAB_SIZE:
        raise TokenizerError(f"vocab_size must be >= {MIN_VOCAB_SIZE}")
    if mode not in ("bpe", "char"):
        raise TokenizerError(f"unknown mode {mode!r}")
    texts = [escape_text(t) for t in corpus]
    if not texts:
        raise TokenizerError("empty corpus")
    inventory = sorted(set("".join(texts)) | {"\\", "<"})
    if vocab_size < len(CONTROL_SURFACES) + len(inventory):
        raise TokenizerError(
            f"vocab_size {vocab_size} smaller than character inventory "
            f"({len(inventory)} chars + {len(CONTROL_SURFACES)} controls)"
        )
    surfaces = list(CONTROL_SURFACES) + inventory
    kinds = [KIND_CONTROL] * len(CONTROL_SURFACES) + [KIND_BASE] * len(inventory)

    if mode == "bpe":
        words = Counter()
        for text in texts:
            for word in text.split():
                words[tuple(word)] += 1
        words = dict(words)
        while len(surfaces) < vocab_size:
            pairs: Counter = Counter()
            for symbols, freq in words.items():
                for a, b in zip(symbols, symbols[1:]):
                    pairs[(a, b)] += freq
            if not pairs:
                break
            best, count = min(pairs.items(), key=lambda kv: (-kv[1], kv[0]))
            if count < 2:
                break
            merged = best[0] + best[1]
            surfaces.append(merged)
            kinds.append(KIND_BASE)
            new_words: dict[tuple, int] = {}
            for symbols, freq in words.items():
                out: list[str] = []
                i = 0
                while i < len(symbols):
                    if i + 1 < len(symbols) and (symbols[i], symbols[i + 1]) == best:
                        out.append(merged)
                        i += 2
                    else:
                        out.append(symbols[i])
                        i += 1
                key = tuple(out)
                new_words[key] = new_words.get(key, 0) + freq
            words = new_words
    return SubwordVocab(surfaces=tuple(surfaces), kinds=tuple(kinds))


def register_specials(vocab: SubwordVocab, markers: Sequence[str]) -> SubwordVocab:
    """Append marker strings with fresh ids; existing ids are unchanged."""
    seen: set[str] = set()
    for marker in markers:
        if marker in seen:
            raise TokenizerError(f"duplicate marker {marker!r}")
        seen.add(marker)
        if vocab.special_id(marker) is not None:
            raise TokenizerError(f"marker {marker!r} already registered")
        if vocab.base_id(marker) is not None:
            raise TokenizerError(f"marker {marker!r} collides with a base subword")
    return SubwordVocab(
        surfaces=vocab.surfaces + tuple(markers),
        kinds=vocab.kinds + (KIND_SPECIAL,) * len(markers),
    )


@dataclass(frozen=True)
class EncodedStream:
    """Token ids plus, per id, the stream token it came from.

    ``origin`` holds (stream token index, char span) pairs; the span is in
    the coordinates of the original (unescaped) text payload, or None for
    non-text tokens.
    """

    ids: tuple[int, ...]
    origin: tuple[tuple[int, tuple[int, int] | None], ...]
    stream: TokenStream
    vocab_fingerprint: str

    def __len__(self) -> int:
        return len(self.ids)


def _segment(vocab: SubwordVocab, escaped: str) -> list[tuple[int, int, int]]:
    """Greedy longest-match segmentation: (id, start, end) in escaped coords."""
    out: list[tuple[int, int, int]] = []
    max_len = vocab.max_base_len
    pos = 0
    n = len(escaped)
    while pos < n:
        match_id = None
        match_len = 0
        for length in range(min(max_len, n - pos), 0, -1):
            candidate = vocab.base_id(escaped[pos:pos + length])
            if candidate is not None:
                match_id, match_len = candidate, length
                break
        if match_id is None:
            out.append((UNK, pos, pos + 1))
            pos += 1
        else:
            out.append((match_id, pos, pos + match_len))
            pos += match_len
    return out


def encode(vocab: SubwordVocab, stream: TokenStream) -> EncodedStream:
    """Specials map to exactly one id; text is segmented losslessly."""
    ids: list[int] = []
    origin: list[tuple[int, tuple[int, int] | None]] = []
    for ti, tok in enumerate(stream):
        if tok.kind == TokenKind.TEXT:
            if not tok.payload:
                continue
            escaped, src = escape_with_map(tok.payload)
            for token_id, start, end in _segment(vocab, escaped):
                ids.append(token_id)
                origin.append((ti, (src[start], src[end - 1] + 1)))
        else:
            marker = tok.marker
            token_id = vocab.special_id(marker)
            if token_id is None:
                raise TokenizerError(f"unregistered special {marker!r}")
            ids.append(token_id)
            origin.append((ti, None))
    return EncodedStream(
        ids=tuple(ids),
        origin=tuple(origin),
        stream=stream,
        vocab_fingerprint=vocab.fingerprint(),
    )


def decode_payloads(vocab: SubwordVocab, encoded: EncodedStream) -> dict[int, str]:
    """Reconstruct each text token's payload from its subword ids."""
    pieces: dict[int, list[str]] = {}
    for token_id, (ti, span) in zip(encoded.ids, encoded.origin):
        if span is None:
            continue
        pieces.setdefault(ti, []).append(vocab.surface(token_id))
    return {ti: unescape_text("".join(parts)) for ti, parts in pieces.items()}
