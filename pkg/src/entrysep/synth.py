"""Synthetic directory corpora: line geometry, entry text, entities, OCR noise."""

from __future__ import annotations

import random
import string
from dataclasses import dataclass, field

from .corpus import EntitySpan, EntryAnnotation, LineRecord, make_line

SURNAMES = (
    "Bailly", "Batton", "Moreau", "Lefèvre", "Durand", "Petit", "Girard",
    "Dubois", "Fournier", "Mercier", "Renard", "Chevalier", "Lambert",
    "Bonnet", "Marchand", "Roussel", "Garnier", "Faure", "Noël", "Perrot",
    "Colin", "Vidal", "Caron", "Picard", "Gauthier", "Delorme", "Huet",
    "Tessier", "Baudry", "Chapuis", "Masson", "Leclerc", "Aubert", "Hamel",
    "Guérin", "Barbier", "Carpentier", "Delacroix", "Poirier", "Vasseur",
)
ACTIVITIES = (
    "coutelier", "professeur", "marchand de vins", "épicier", "tailleur",
    "horloger", "imprimeur", "serrurier", "menuisier", "chapelier",
    "bijoutier", "libraire", "pharmacien", "notaire", "architecte",
    "graveur", "tapissier", "fondeur", "relieur", "doreur", "passementier",
    "quincaillier", "chaudronnier", "ébéniste", "papetier", "gantier",
    "parfumeur", "tourneur", "vernisseur", "armurier",
)
TITLES = (
    "officier", "docteur", "avocat", "ancien notaire", "membre du jury",
    "chevalier", "expert", "adjoint",
)
STREETS = (
    "S.Honoré", "Saint-Georges", "Richelieu", "Montmartre", "S.Denis",
    "Vivienne", "Rivoli", "Temple", "S.Martin", "Bondy", "Grenelle",
    "Rambuteau", "Sévigné", "Caumartin", "Mazarine", "Tournon",
    "S.Antoine", "Popincourt", "Chaillot", "Vaugirard", "Beaubourg",
    "Lepic", "Oberkampf", "Ménilmontant", "Charonne", "Panoyaux",
    "Turenne", "Bretagne", "Amelot", "Charlot",
)

# Visually confusable substitutions used by the noise model. Every entry
# maps to something different from the key.
CONFUSIONS: dict[str, str] = {
    "a": "à", "à": "a", "â": "a", "b": "h", "c": "e", "ç": "c", "d": "cl",
    "e": "c", "é": "e", "è": "e", "ê": "e", "f": "t", "g": "q", "h": "b",
    "i": "l", "î": "i", "j": "i", "k": "lc", "l": "i", "m": "rn", "n": "ri",
    "o": "u", "ô": "o", "p": "n", "q": "g", "r": "t", "s": "5", "t": "f",
    "u": "o", "û": "u", "ù": "u", "v": "y", "w": "vv", "x": "z", "y": "v",
    "z": "x",
    "A": "À", "B": "R", "C": "G", "D": "O", "E": "F", "F": "E", "G": "C",
    "H": "Il", "I": "l", "J": "I", "K": "R", "L": "I", "M": "N", "N": "M",
    "O": "0", "P": "F", "Q": "O", "R": "B", "S": "5", "T": "I", "U": "V",
    "V": "U", "W": "VV", "X": "K", "Y": "V", "Z": "2",
    "0": "O", "1": "l", "2": "Z", "3": "8", "4": "1", "5": "S", "6": "b",
    "7": "1", "8": "3", "9": "g",
    ".": ",", ",": ".", "-": ".", "(": "{", ")": "}", "'": ",", " ": ".",
}

NOISE_OPS = ("substitute", "delete", "insert")

PAGE_WIDTH = 1000.0
PAGE_MARGIN = 50.0
COLUMN_GUTTER = 40.0
LINE_HEIGHT = 22.0
TOP_MARGIN = 60.0


@dataclass(frozen=True)
class SynthParams:
    """Knobs controlling corpus statistics."""

    n_pages: int = 10
    columns_per_page: int = 2
    target_lines_per_column: int = 40
    mean_lines_per_entry: float = 1.4
    hanging_indent: float = 0.05
    indent_jitter: float = 0.005
    inconsistency_rate: float = 0.1
    noise_rate: float = 0.03
    surnames: tuple[str, ...] = SURNAMES
    activities: tuple[str, ...] = ACTIVITIES
    titles: tuple[str, ...] = TITLES
    streets: tuple[str, ...] = STREETS

    def validate(self) -> None:
        if self.n_pages < 1 or self.columns_per_page < 1 or self.target_lines_per_column < 1:
            raise ValueError("page/column/line counts must be >= 1")
        if self.mean_lines_per_entry < 1.0:
            raise ValueError("mean_lines_per_entry must be >= 1")
        for name in ("inconsistency_rate", "noise_rate"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        for name in ("surnames", "activities", "titles", "streets"):
            if not getattr(self, name):
                raise ValueError(f"empty lexicon: {name}")


@dataclass
class SynthCorpus:
    """Generated lines (noisy text), gold entries and the clean text sidecar."""

    lines: list[LineRecord]
    annotations: list[EntryAnnotation]
    clean_texts: list[str] = field(default_factory=list)


def apply_ocr_noise(
    text: str,
    rate: float,
    rng: random.Random,
    ops: tuple[str, ...] = NOISE_OPS,
) -> str:
    """Corrupt each character with probability ``rate``.

    A corrupted character is substituted from the confusion table, deleted,
    or followed by an inserted random letter (op chosen uniformly among
    ``ops``). Newlines are never touched.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError("noise rate must be in [0, 1]")
    if rate == 0.0 or not text:
        return text
    for op in ops:
        if op not in NOISE_OPS:
            raise ValueError(f"unknown noise op {op!r}")
    out: list[str] = []
    letters = string.ascii_lowercase
    for ch in text:
        if ch == "\n" or rng.random() >= rate:
            out.append(ch)
            continue
        op = ops[rng.randrange(len(ops))]
        if op == "substitute":
            repl = CONFUSIONS.get(ch)
            if repl is None:
                repl = rng.choice([c for c in letters if c != ch])
            out.append(repl)
        elif op == "insert":
            out.append(ch)
            out.append(rng.choice(letters))
        # delete: emit nothing
    return "".join(out)


def _initials(rng: random.Random) -> str:
    caps = "ABCDEFGHJLMPRSTV"
    if rng.random() < 0.4:
        return f"{rng.choice(caps)}.-{rng.choice(caps)}."
    return f"{rng.choice(caps)}."


def _make_entry_text(
    params: SynthParams, rng: random.Random
) -> tuple[str, list[EntitySpan]]:
    """One entry following 'Name (initials), activity, street, number.'

    A share of entries drops the initials so an entry start reads like any
    capitalized word followed by a comma; separating those from wrapped
    continuation lines then genuinely needs the layout.
    """
    surname = rng.choice(params.surnames)
    initials = _initials(rng) if rng.random() >= 0.45 else None
    activity = rng.choice(params.activities)
    # some streets carry person names, as Paris streets do
    street_pool = params.streets if rng.random() >= 0.15 else params.surnames
    street = rng.choice(street_pool)
    number = str(rng.randrange(1, 1000))
    title = rng.choice(params.titles) if rng.random() < 0.3 else None

    spans: list[EntitySpan] = []
    head = surname if initials is None else f"{surname} ({initials})"
    spans.append(EntitySpan("PER", 0, len(head)))
    text = head
    if title is not None:
        text += ", "
        spans.append(EntitySpan("TITLE", len(text), len(text) + len(title)))
        text += title
    text += ", "
    spans.append(EntitySpan("ACT", len(text), len(text) + len(activity)))
    text += activity + ", "
    spans.append(EntitySpan("LOC", len(text), len(text) + len(street)))
    text += street + ", "
    spans.append(EntitySpan("CARDINAL", len(text), len(text) + len(number)))
    text += number + "."
    return text, spans


def _split_into_lines(text: str, k: int, rng: random.Random) -> list[str]:
    """Split at k-1 spaces (replaced by newlines), keeping chunks even-ish.

    Wrap points prefer spaces right after a comma, which is where printers
    broke these entries; the continuation line then starts with a
    capitalized field just like an entry does. Joining the result with a
    newline reproduces ``text`` with those spaces swapped for newlines, so
    entity offsets stay valid.
    """
    if k <= 1:
        return [text]
    space_positions = [i for i, ch in enumerate(text) if ch == " "]
    k = min(k, len(space_positions) + 1)
    if k == 1:
        return [text]
    chosen: list[int] = []
    for j in range(1, k):
        target = j * len(text) / k
        candidates = [p for p in space_positions if p not in chosen]
        field_breaks = [p for p in candidates if text[p - 1] == ","]
        if field_breaks and rng.random() < 0.7:
            candidates = field_breaks
        chosen.append(min(candidates, key=lambda p: abs(p - target)))
    chosen.sort()
    chars = list(text)
    for p in chosen:
        chars[p] = "\n"
    return "".join(chars).split("\n")


def _sample_entry_lines(mean: float, rng: random.Random) -> int:
    """Number of lines: 1 + Geometric(p) with expectation ``mean``."""
    p = 1.0 / mean
    k = 1
    while rng.random() >= p:
        k += 1
    return k


def generate_corpus(params: SynthParams, seed: int) -> SynthCorpus:
    """Generate a deterministic synthetic corpus.

    Pages are generated independently, each from an RNG derived from
    (seed, page index), so the result does not depend on generation order.
    Entries never cross a page boundary; they may cross columns inside a
    page.
    """
    params.validate()
    doc_id = "synth"
    lines: list[LineRecord] = []
    clean_texts: list[str] = []
    annotations: list[EntryAnnotation] = []

    n_cols = params.columns_per_page
    usable = PAGE_WIDTH - 2 * PAGE_MARGIN - (n_cols - 1) * COLUMN_GUTTER
    col_width = usable / n_cols
    col_x0 = [PAGE_MARGIN + c * (col_width + COLUMN_GUTTER) for c in range(n_cols)]

    global_line = 0
    for page in range(params.n_pages):
        rng = random.Random(f"{seed}:{page}")
        inverted = rng.random() < params.inconsistency_rate
        capacity = n_cols * params.target_lines_per_column

        page_entries: list[tuple[list[str], list[EntitySpan]]] = []
        used = 0
        while True:
            k = _sample_entry_lines(params.mean_lines_per_entry, rng)
            text, spans = _make_entry_text(params, rng)
            chunks = _split_into_lines(text, k, rng)
            if used + len(chunks) > capacity:
                break
            page_entries.append((chunks, spans))
            used += len(chunks)

        local = 0
        for chunks, spans in page_entries:
            start_line = global_line
            for li, chunk in enumerate(chunks):
                first = li == 0
                flush = first != inverted  # inverted pages indent the first line
                if flush:
                    indent = rng.uniform(0.0, 0.01)
                else:
                    indent = params.hanging_indent + rng.uniform(
                        -params.indent_jitter, params.indent_jitter
                    )
                last = li == len(chunks) - 1
                right = rng.uniform(0.05, 0.55) if last else rng.uniform(0.0, 0.02)

                col = local // params.target_lines_per_column
                order = local % params.target_lines_per_column
                cx0 = col_x0[col]
                y0 = TOP_MARGIN + order * LINE_HEIGHT
                x0 = cx0 + indent * col_width
                x1 = cx0 + col_width - right * col_width
                noisy = apply_ocr_noise(chunk, params.noise_rate, rng)
                lines.append(
                    make_line(
                        doc_id, page, col, order, noisy,
                        (x0, y0, x1, y0 + LINE_HEIGHT * 0.8),
                        (cx0, TOP_MARGIN, cx0 + col_width,
                         TOP_MARGIN + params.target_lines_per_column * LINE_HEIGHT),
                    )
                )
                clean_texts.append(chunk)
                local += 1
                global_line += 1
            annotations.append(
                EntryAnnotation(
                    doc_id=doc_id,
                    start_line=start_line,
                    end_line=global_line - 1,
                    entities=tuple(spans),
                )
            )
    return SynthCorpus(lines=lines, annotations=annotations, clean_texts=clean_texts)
