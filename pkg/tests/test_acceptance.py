"""Acceptance gate: one test per criterion, each printing a PASS line.

Run with `pytest -s tests/test_acceptance.py` to see the per-criterion
lines; the full run trains 9 models (3 presets x 3 seeds) and takes
roughly 15-25 minutes on a laptop CPU.
"""

import random
import time

import numpy as np
import pytest
import torch

from entrysep import cli
from entrysep.corpus import entry_text
from entrysep.labeling import (
    EBEGIN,
    EBOTH,
    EEND,
    LabelScheme,
    align_annotations,
    decode_entries,
    entry_line_range,
    project_labels,
)
from entrysep.metrics import boundary_metrics, dummy_baseline, gold_line_marks, ner_metrics
from entrysep.model import (
    EarlyStopper,
    ModelConfig,
    TrainHyper,
    init_model,
    masked_loss,
)
from entrysep.stream import (
    ABS_LEFT_BINS,
    ABS_RIGHT_BINS,
    REL_LEFT_BINS,
    StreamToken,
    TokenKind,
    TokenStream,
    build_stream,
    compute_spaces,
    get_preset,
    quantize,
)
from entrysep.synth import SynthParams, generate_corpus
from entrysep.tokenizer import (
    decode_payloads,
    encode,
    register_specials,
    train_tokenizer,
)
from entrysep.corpus import make_line


def report(criterion: str, detail: str) -> None:
    print(f"\nACCEPTANCE {criterion}: PASS — {detail}")


def test_01_dummy_baseline_arithmetic():
    started = time.time()
    corpus = generate_corpus(SynthParams(n_pages=92, noise_rate=0.0), seed=0)
    E, L = len(corpus.annotations), len(corpus.lines)
    assert E >= 5000
    reports = boundary_metrics(
        dummy_baseline(corpus.lines), gold_line_marks(corpus.lines, corpus.annotations)
    )
    f = reports[EBEGIN].f
    assert f == 2 * E / (L + E), "dummy F must equal 2E/(L+E) exactly"
    assert abs(f - 0.833) <= 0.007
    elapsed = time.time() - started
    assert elapsed < 10
    report("1", f"dummy EBEGIN F = {100 * f:.2f}% = 2E/(L+E), E={E}, L={L}, {elapsed:.1f}s")


def test_02_running_example_fidelity():
    line = make_line("d", 0, 0, 0, "Bailly, coutelier. S.Honuré, 416.",
                     (102.8, 10, 425.5, 20), (100, 0, 600, 800))
    measures = compute_spaces(line)
    assert round(measures.left_abs, 4) == 0.0056
    assert round(measures.right_abs, 4) == 0.3490
    assert quantize(measures.left_abs, ABS_LEFT_BINS) == 0
    assert quantize(measures.right_abs, ABS_RIGHT_BINS) == 2
    report("2", "spaces (0.0056, 0.3490) -> bins (0, 2)")


def test_03_bin_thresholds():
    cases = [
        (-0.011, REL_LEFT_BINS, 0), (-0.01, REL_LEFT_BINS, 1), (0.0, REL_LEFT_BINS, 1),
        (0.009, REL_LEFT_BINS, 1), (0.01, REL_LEFT_BINS, 2),
        (0.0, ABS_LEFT_BINS, 0), (0.019, ABS_LEFT_BINS, 0), (0.02, ABS_LEFT_BINS, 1),
        (0.08, ABS_LEFT_BINS, 2), (1.0, ABS_LEFT_BINS, 2),
        (0.0, ABS_RIGHT_BINS, 0), (0.049, ABS_RIGHT_BINS, 0), (0.05, ABS_RIGHT_BINS, 1),
        (0.08, ABS_RIGHT_BINS, 2), (1.0, ABS_RIGHT_BINS, 2),
    ]
    assert len(cases) == 15
    for value, bins, expected in cases:
        assert quantize(value, bins) == expected, (value, expected)
    report("3", "15 boundary cases, left-closed right-open")


def test_04_metric_oracle_equivalence():
    started = time.time()
    marks = ("O", EBEGIN, EEND, EBOTH)
    rng = random.Random(13)
    for _ in range(1000):
        n = rng.randrange(1, 65)
        pred = [rng.choice(marks) for _ in range(n)]
        gold = [rng.choice(marks) for _ in range(n)]
        reports = boundary_metrics(pred, gold)
        for cls in (EBEGIN, EEND):
            tp = fp = fn = 0
            for p, g in zip(pred, gold):
                p_has = p in (cls, EBOTH)
                g_has = g in (cls, EBOTH)
                tp += p_has and g_has
                fp += p_has and not g_has
                fn += g_has and not p_has
            r = reports[cls]
            assert (r.tp, r.fp, r.fn) == (tp, fp, fn)
            assert r.precision == (tp / (tp + fp) if tp + fp else 0.0)
            assert r.recall == (tp / (tp + fn) if tp + fn else 0.0)

    kinds = ("PER", "ACT", "LOC")
    for _ in range(1000):
        def sample():
            return {
                (rng.choice(kinds), rng.randrange(8), rng.randrange(8, 16))
                for _ in range(rng.randrange(0, 9))
            }
        pred, gold = sample(), sample()
        _, micro = ner_metrics(pred, gold)
        tp = sum(1 for p in pred if p in gold)
        assert micro.tp == tp
        assert micro.precision == (tp / len(pred) if pred else 0.0)
        assert micro.recall == (tp / len(gold) if gold else 0.0)
    elapsed = time.time() - started
    assert elapsed < 30
    report("4", f"1000 boundary + 1000 entity random cases vs brute force, {elapsed:.1f}s")


def test_05_round_trip_property():
    started = time.time()
    policy_configs = {
        "text_tokens": get_preset("xp-1.2"),
        "space_tokens": get_preset("xp-2.1"),
        "joint": get_preset("xp-2.2"),
    }
    for seed in range(100):
        corpus = generate_corpus(
            SynthParams(n_pages=1, target_lines_per_column=12, noise_rate=0.0),
            seed=seed,
        )
        vocab_base = train_tokenizer([l.text for l in corpus.lines], 400, mode="char")
        for policy, config in policy_configs.items():
            stream = build_stream(corpus.lines, config)
            vocab = register_specials(vocab_base, config.special_markers())
            encoded = encode(vocab, stream)
            kinds = ("PER", "ACT", "TITLE", "LOC", "CARDINAL") if config.ner else ()
            scheme = LabelScheme(policy=policy, entity_kinds=kinds)
            labeled = project_labels(
                encoded, corpus.annotations, scheme,
                clean_line_texts=corpus.clean_texts,
            )
            spans, malformed = decode_entries(labeled)
            assert malformed == 0, (policy, seed)
            assert len(spans) == len(corpus.annotations), (policy, seed)
            for span, entry in zip(spans, corpus.annotations):
                assert entry_line_range(labeled, span) == (
                    entry.start_line, entry.end_line,
                ), (policy, seed)
    elapsed = time.time() - started
    assert elapsed < 60
    report("5", f"100 corpora x 3 policies decode to exact gold entries, {elapsed:.1f}s")


def test_06_gradient_check():
    started = time.time()
    torch.manual_seed(0)
    config = ModelConfig(
        vocab_size=30, n_labels=5, d_model=16, n_heads=2, n_layers=2,
        d_ff=32, max_seq_len=32, dropout=0.1,
    )
    model = init_model(config, seed=1).double()
    model.eval()  # loss must be a deterministic function of the parameters
    gen = torch.Generator().manual_seed(2)
    ids = torch.randint(0, 30, (2, 12), generator=gen)
    labels = torch.randint(0, 5, (2, 12), generator=gen)
    mask = torch.ones(2, 12, dtype=torch.bool)
    mask[1, 9:] = False

    def loss_value():
        return masked_loss(model(ids, mask), labels, mask)

    loss_value().backward()
    rng = np.random.default_rng(0)
    eps = 1e-6
    worst = 0.0
    groups = 0
    for name, param in model.named_parameters():
        groups += 1
        flat = param.data.view(-1)
        for i in rng.choice(flat.numel(), size=min(4, flat.numel()), replace=False):
            original = flat[i].item()
            flat[i] = original + eps
            hi = loss_value().item()
            flat[i] = original - eps
            lo = loss_value().item()
            flat[i] = original
            numeric = (hi - lo) / (2 * eps)
            analytic = param.grad.view(-1)[i].item()
            rel = abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-8)
            assert rel < 1e-4, (name, rel)
            worst = max(worst, rel)
    elapsed = time.time() - started
    assert elapsed < 60
    report("6", f"{groups} parameter groups, worst rel err {worst:.2e}, {elapsed:.1f}s")


def test_07_training_protocol_conformance():
    hyper = TrainHyper()
    assert hyper.learning_rate == 1e-4
    assert hyper.weight_decay == 1e-5
    assert (hyper.max_steps, hyper.eval_every, hyper.patience) == (7500, 300, 5)

    def run(trace):
        """Replays train()'s schedule: evals at 300, 600, ..., capped at 7500."""
        stopper = EarlyStopper(hyper.patience)
        best_step = 0
        last_step = 0
        for k, value in enumerate(trace, start=1):
            step = k * hyper.eval_every
            if step > hyper.max_steps:
                break
            last_step = step
            if stopper.update(value):
                best_step = step
            if stopper.should_stop:
                break
        return last_step, best_step

    flat = [0.5, 0.8] + [0.8] * 10
    assert run(flat) == (2100, 600)  # best at eval 2, stop after eval 7
    rising = [i / 100 for i in range(1, 40)]
    assert run(rising) == (7500, 7500)  # improvement every eval: runs to the cap
    early = [0.9] + [0.4] * 10
    assert run(early) == (1800, 300)  # best at eval 1, stop after eval 6
    recovery = [0.5, 0.4, 0.4, 0.4, 0.4, 0.6] + [0.5] * 10
    assert run(recovery) == (3300, 1800)  # reset at eval 6, stop 5 evals later
    late = [i / 1000 for i in range(24)] + [0.9, 0.9]
    assert run(late) == (7500, 7500)  # still improving when the cap hits
    report("7", "5 scripted traces: stop steps and kept checkpoints exact")


@pytest.fixture(scope="module")
def desk_scale_results(tmp_path_factory):
    started = time.time()
    out = tmp_path_factory.mktemp("experiments")
    corpus = generate_corpus(
        SynthParams(n_pages=50, inconsistency_rate=0.1, noise_rate=0.03), seed=0
    )
    assert len(corpus.annotations) >= 2000
    splits = cli.split_corpus(corpus.lines, corpus.annotations, corpus.clean_texts)
    vocab = cli.build_vocab(splits["train"].lines, vocab_size=500)
    overrides = dict(d_model=64, n_heads=4, d_ff=128, max_seq_len=128)
    hyper = TrainHyper(batch_size=4)
    results = {}
    for preset in ("xp-1.6", "xp-1.1", "xp-2.1"):
        config = get_preset(preset)
        results[preset], _ = cli.run_experiment(
            preset, config, splits, seeds=(0, 1, 2), out_dir=out / preset,
            vocab=vocab, model_overrides=overrides, hyper=hyper,
        )
    return results, time.time() - started


def test_08_desk_scale_experiment_ordering(desk_scale_results):
    results, elapsed = desk_scale_results
    f16 = results["xp-1.6"].macro_boundary_f
    f11 = results["xp-1.1"].macro_boundary_f
    f21 = results["xp-2.1"].macro_boundary_f
    ner = results["xp-2.1"].ner_micro.f
    assert f16 >= 0.95, f"xp-1.6 macro F {f16:.4f} < 0.95"
    assert f16 >= f11, f"xp-1.6 {f16:.4f} below text-only {f11:.4f}"
    assert abs(f21 - f16) <= 0.01, f"xp-2.1 {f21:.4f} not within 1pt of xp-1.6 {f16:.4f}"
    assert ner >= 0.85, f"xp-2.1 entity micro F {ner:.4f} < 0.85"
    assert elapsed < 1800
    report(
        "8",
        f"3 seeds each: xp-1.6 F={100 * f16:.2f}%, xp-1.1 F={100 * f11:.2f}%, "
        f"xp-2.1 F={100 * f21:.2f}% (NER {100 * ner:.2f}%), {elapsed / 60:.1f} min",
    )


def test_09_alignment_projection():
    started = time.time()
    corpus = generate_corpus(
        SynthParams(n_pages=20, noise_rate=0.03, inconsistency_rate=0.1), seed=4
    )
    total = 0
    dropped = 0
    for entry in corpus.annotations:
        clean = "\n".join(
            corpus.clean_texts[i] for i in range(entry.start_line, entry.end_line + 1)
        )
        noisy = entry_text(corpus.lines, entry)
        spans = [(s.start, s.end) for s in entry.entities]
        projected = align_annotations(clean, noisy, spans)
        total += len(spans)
        dropped += sum(1 for p in projected if p is None)
        kept = [p for p in projected if p is not None]
        starts = [a for a, _ in kept]
        assert starts == sorted(starts), "projection must be monotone"
    survival = 1 - dropped / total
    assert survival >= 0.95
    elapsed = time.time() - started
    assert elapsed < 60
    report(
        "9",
        f"{total} spans, {100 * survival:.2f}% projected, monotone, {elapsed:.1f}s",
    )


def test_10_special_token_atomicity_fuzz():
    started = time.time()
    alphabet = "ab<\\>breaklinhspctx012- é,."
    vocab = train_tokenizer([alphabet], 300, mode="char")
    markers = ["<break>", "<textline>"] + [
        f"<{side}hspace-{b}>" for side in "lr" for b in range(3)
    ]
    vocab = register_specials(vocab, markers)
    rng = random.Random(99)
    kinds = (TokenKind.BREAK, TokenKind.LHSPACE, TokenKind.RHSPACE,
             TokenKind.TEXTLINE, TokenKind.TEXT)
    nasty = ("<break>", "\\<break>", "<lhspace-0>", "\\", "<", "a<b", "")
    for _ in range(10_000):
        tokens = []
        for line in range(rng.randrange(1, 7)):
            kind = kinds[rng.randrange(len(kinds))]
            if kind == TokenKind.TEXT:
                text = (nasty[rng.randrange(len(nasty))] if rng.random() < 0.4
                        else "".join(rng.choice(alphabet) for _ in range(rng.randrange(12))))
                tokens.append(StreamToken(kind, text, line, span=(0, len(text))))
            elif kind in (TokenKind.LHSPACE, TokenKind.RHSPACE):
                b = rng.randrange(3)
                marker = f"<{'l' if kind == TokenKind.LHSPACE else 'r'}hspace-{b}>"
                tokens.append(StreamToken(kind, marker, line, bin=b))
            elif kind == TokenKind.BREAK:
                tokens.append(StreamToken(kind, "<break>", line, grain="line"))
            else:
                tokens.append(StreamToken(kind, "<textline>", line))
        stream = TokenStream(tokens=tuple(tokens), n_lines=6)
        encoded = encode(vocab, stream)
        id_counts = {}
        for token_id in encoded.ids:
            id_counts[token_id] = id_counts.get(token_id, 0) + 1
        for marker in markers:
            expected = sum(
                1 for t in stream
                if t.kind != TokenKind.TEXT and t.marker == marker
            )
            assert id_counts.get(vocab.special_id(marker), 0) == expected
        payloads = decode_payloads(vocab, encoded)
        for ti, tok in enumerate(stream.tokens):
            if tok.kind == TokenKind.TEXT:
                assert payloads.get(ti, "") == tok.payload
    elapsed = time.time() - started
    assert elapsed < 60
    report("10", f"10000 fuzzed streams: counts exact, payloads byte-exact, {elapsed:.1f}s")
