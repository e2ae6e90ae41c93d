import json

import pytest
from hypothesis import given, settings, strategies as st

from entrysep.corpus import (
    EntitySpan,
    EntryAnnotation,
    ParseError,
    ValidationError,
    entry_text,
    load_annotations,
    load_lines,
    make_line,
    save_annotations,
    save_lines,
    select_pages,
    split_dataset,
)


def line_obj(doc="d", page=0, column=0, order=0, text="abc",
             bbox=(10, 10, 90, 20), column_bbox=(0, 0, 100, 500)):
    return {
        "doc": doc, "page": page, "column": column, "order": order,
        "text": text, "bbox": list(bbox), "column_bbox": list(column_bbox),
    }


def write_jsonl(path, objs):
    path.write_text("\n".join(json.dumps(o) for o in objs) + "\n", encoding="utf-8")


class TestLoadLines:
    def test_two_valid_records_sorted(self, tmp_path):
        path = tmp_path / "lines.jsonl"
        write_jsonl(path, [line_obj(order=1, text="b"), line_obj(order=0, text="a")])
        records = load_lines(path)
        assert len(records) == 2
        assert [r.order for r in records] == [0, 1]
        assert [r.text for r in records] == ["a", "b"]

    def test_degenerate_box_rejected(self, tmp_path):
        path = tmp_path / "lines.jsonl"
        write_jsonl(path, [line_obj(bbox=(90, 10, 10, 20))])
        with pytest.raises(ValidationError):
            load_lines(path)

    def test_duplicate_key_rejected(self, tmp_path):
        path = tmp_path / "lines.jsonl"
        write_jsonl(path, [line_obj(text="a"), line_obj(text="b")])
        with pytest.raises(ValidationError, match="duplicate"):
            load_lines(path)

    def test_malformed_json_reports_line_number(self, tmp_path):
        path = tmp_path / "lines.jsonl"
        path.write_text(json.dumps(line_obj()) + "\n{not json\n", encoding="utf-8")
        with pytest.raises(ParseError, match=":2"):
            load_lines(path)

    def test_order_must_be_dense(self, tmp_path):
        path = tmp_path / "lines.jsonl"
        write_jsonl(path, [line_obj(order=0), line_obj(order=2)])
        with pytest.raises(ValidationError, match="dense"):
            load_lines(path)

    def test_overhang_within_tolerance_is_clamped(self):
        # 2% of a 100-wide column is 2 units of slack
        rec = make_line("d", 0, 0, 0, "x", (-1.5, 10, 101, 20), (0, 0, 100, 500))
        assert rec.line_bbox[0] == 0.0
        assert rec.line_bbox[2] == 100.0

    def test_overhang_beyond_tolerance_rejected(self):
        with pytest.raises(ValidationError, match="tolerance"):
            make_line("d", 0, 0, 0, "x", (-3, 10, 90, 20), (0, 0, 100, 500))

    def test_roundtrip_is_byte_identical(self, tmp_path):
        records = [
            make_line("d", 0, 0, i, f"text {i} é", (10.5, 10, 90.25, 20), (0, 0, 100, 500))
            for i in range(3)
        ]
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        save_lines(records, p1)
        save_lines(load_lines(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()


class TestAnnotations:
    def lines(self):
        return [make_line("d", 0, 0, i, f"line{i}", (10, 10, 90, 20), (0, 0, 100, 500))
                for i in range(5)]

    def test_two_disjoint_entries_accepted(self, tmp_path):
        path = tmp_path / "ann.jsonl"
        write_jsonl(path, [
            {"doc": "d", "start_line": 0, "end_line": 1, "entities": []},
            {"doc": "d", "start_line": 2, "end_line": 4, "entities": []},
        ])
        assert len(load_annotations(path)) == 2

    def test_shared_line_is_overlap(self, tmp_path):
        path = tmp_path / "ann.jsonl"
        write_jsonl(path, [
            {"doc": "d", "start_line": 0, "end_line": 2, "entities": []},
            {"doc": "d", "start_line": 2, "end_line": 4, "entities": []},
        ])
        with pytest.raises(ValidationError, match="overlap"):
            load_annotations(path)

    def test_entity_beyond_entry_text(self, tmp_path):
        path = tmp_path / "ann.jsonl"
        write_jsonl(path, [
            {"doc": "d", "start_line": 0, "end_line": 0,
             "entities": [{"kind": "PER", "start": 0, "end": 99}]},
        ])
        with pytest.raises(ValidationError, match="beyond"):
            load_annotations(path, lines=self.lines())

    def test_entry_text_joins_with_newline(self):
        entry = EntryAnnotation("d", 1, 3)
        assert entry_text(self.lines(), entry) == "line1\nline2\nline3"

    def test_roundtrip(self, tmp_path):
        entries = [
            EntryAnnotation("d", 0, 1, (EntitySpan("PER", 0, 5),)),
            EntryAnnotation("d", 2, 2),
        ]
        path = tmp_path / "ann.jsonl"
        save_annotations(entries, path)
        assert load_annotations(path) == entries


class TestSplitDataset:
    def test_80_pages_default_ratios(self):
        pages = {("d", i) for i in range(80)}
        split = split_dataset(pages)
        assert (len(split.train), len(split.test), len(split.validation)) == (64, 12, 4)

    def test_single_page_goes_to_train(self):
        split = split_dataset({("d", 0)})
        assert (len(split.train), len(split.test), len(split.validation)) == (1, 0, 0)

    def test_same_seed_identical(self):
        pages = {("d", i) for i in range(37)}
        assert split_dataset(pages, seed=5) == split_dataset(pages, seed=5)

    def test_empty_pages_error(self):
        with pytest.raises(ValidationError):
            split_dataset(set())

    def test_bad_ratios_error(self):
        with pytest.raises(ValidationError):
            split_dataset({("d", 0)}, ratios=(0.5, 0.5, 0.5))

    @given(n=st.integers(1, 200), seed=st.integers(0, 1000))
    @settings(max_examples=50, deadline=None)
    def test_partition_property(self, n, seed):
        pages = {("d", i) for i in range(n)}
        split = split_dataset(pages, seed=seed)
        assert split.train | split.test | split.validation == pages
        assert not split.train & split.test
        assert not split.train & split.validation
        assert not split.test & split.validation


class TestSelectPages:
    def test_entry_follows_start_page(self):
        lines = [
            make_line("d", 0, 0, 0, "a", (10, 10, 90, 20), (0, 0, 100, 500)),
            make_line("d", 0, 0, 1, "b", (10, 30, 90, 40), (0, 0, 100, 500)),
            make_line("d", 1, 0, 0, "c", (10, 10, 90, 20), (0, 0, 100, 500)),
        ]
        # entry crosses from page 0 into page 1
        entries = [EntryAnnotation("d", 1, 2)]
        sub_lines, sub_entries, kept = select_pages(lines, entries, {("d", 0)})
        assert kept == [0, 1, 2]  # page-1 line follows its entry into the selection
        assert sub_entries == [EntryAnnotation("d", 1, 2)]
        sub_lines2, sub_entries2, kept2 = select_pages(lines, entries, {("d", 1)})
        assert kept2 == []
        assert sub_entries2 == []

    def test_remapping(self):
        lines = [
            make_line("d", p, 0, 0, f"p{p}", (10, 10, 90, 20), (0, 0, 100, 500))
            for p in range(3)
        ]
        entries = [EntryAnnotation("d", 2, 2)]
        sub_lines, sub_entries, kept = select_pages(lines, entries, {("d", 2)})
        assert kept == [2]
        assert sub_entries[0].start_line == 0
