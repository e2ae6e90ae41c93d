import random

import pytest

from entrysep import synth
from entrysep.corpus import entry_text
from entrysep.synth import SynthParams, apply_ocr_noise, generate_corpus


class TestNoise:
    def test_rate_zero_is_identity(self):
        rng = random.Random(0)
        assert apply_ocr_noise("Bailly, coutelier.", 0.0, rng) == "Bailly, coutelier."

    def test_rate_one_substitution_alters_everything(self):
        out = apply_ocr_noise("Honoré", 1.0, random.Random(3), ops=("substitute",))
        assert out == "".join(synth.CONFUSIONS[ch] for ch in "Honoré")
        for ch, repl in synth.CONFUSIONS.items():
            assert repl != ch

    def test_monte_carlo_rate(self):
        # alphabet restricted to 1-to-1 confusions so positions are stable
        src_rng = random.Random(2)
        text = "".join(src_rng.choice("oueca") for _ in range(100_000))
        noisy = apply_ocr_noise(text, 0.03, random.Random(1), ops=("substitute",))
        assert len(noisy) == len(text)
        frac = sum(1 for a, b in zip(text, noisy) if a != b) / len(text)
        assert abs(frac - 0.03) <= 0.005

    def test_newlines_never_corrupted(self):
        out = apply_ocr_noise("ab\ncd\nef", 1.0, random.Random(0), ops=("delete",))
        assert out == "\n\n"

    def test_determinism(self):
        a = apply_ocr_noise("Moreau, horloger, Rivoli, 41.", 0.3, random.Random(9))
        b = apply_ocr_noise("Moreau, horloger, Rivoli, 41.", 0.3, random.Random(9))
        assert a == b

    def test_bad_rate(self):
        with pytest.raises(ValueError):
            apply_ocr_noise("x", 1.5, random.Random(0))


class TestGenerateCorpus:
    def test_mean_one_gives_single_line_entries(self):
        params = SynthParams(n_pages=4, mean_lines_per_entry=1.0, noise_rate=0.0)
        c = generate_corpus(params, seed=1)
        assert all(e.start_line == e.end_line for e in c.annotations)

    def test_mean_lines_monte_carlo(self):
        params = SynthParams(n_pages=92, noise_rate=0.0)
        c = generate_corpus(params, seed=0)
        assert len(c.annotations) >= 5000
        mean = len(c.lines) / len(c.annotations)
        assert abs(mean - 1.4) <= 0.05

    def test_determinism(self):
        params = SynthParams(n_pages=3)
        a = generate_corpus(params, seed=4)
        b = generate_corpus(params, seed=4)
        assert a.lines == b.lines
        assert a.annotations == b.annotations
        assert a.clean_texts == b.clean_texts

    def test_different_seeds_differ(self):
        params = SynthParams(n_pages=3)
        assert generate_corpus(params, seed=0).lines != generate_corpus(params, seed=1).lines

    def test_empty_lexicon_error(self):
        with pytest.raises(ValueError, match="lexicon"):
            generate_corpus(SynthParams(surnames=()), seed=0)

    def test_lines_inside_columns(self):
        c = generate_corpus(SynthParams(n_pages=2), seed=5)
        for line in c.lines:
            assert line.column_bbox[0] <= line.line_bbox[0] < line.line_bbox[2] <= line.column_bbox[2]

    def test_gold_refers_to_clean_text(self):
        params = SynthParams(n_pages=2, noise_rate=0.2)
        c = generate_corpus(params, seed=6)
        assert len(c.clean_texts) == len(c.lines)
        for entry in c.annotations:
            clean = "\n".join(c.clean_texts[i] for i in range(entry.start_line, entry.end_line + 1))
            for span in entry.entities:
                assert 0 <= span.start < span.end <= len(clean)
                # spans cut real content, not padding
                assert clean[span.start:span.end].strip()

    def test_noiseless_annotations_match_line_text(self):
        c = generate_corpus(SynthParams(n_pages=2, noise_rate=0.0), seed=7)
        for entry in c.annotations:
            assert entry_text(c.lines, entry) == "\n".join(
                c.clean_texts[i] for i in range(entry.start_line, entry.end_line + 1)
            )

    def test_entries_cover_all_lines(self):
        c = generate_corpus(SynthParams(n_pages=2, noise_rate=0.0), seed=8)
        covered = set()
        for e in c.annotations:
            covered.update(range(e.start_line, e.end_line + 1))
        assert covered == set(range(len(c.lines)))
