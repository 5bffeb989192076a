import json

import numpy as np
import pytest

from skelgen import datakit as dk
from skelgen.graphs import (DatasetRecord, ParseError, SkeletonGraph,
                            read_manifest, record_to_json, write_manifest)
from skelgen.synth import toy_dataset
from skelgen.util import canon_json


def chain_skeleton(n=4, category="character"):
    t = np.linspace(-0.8, 0.8, n)
    joints = np.stack([t, np.zeros(n), np.zeros(n)], axis=1)
    return SkeletonGraph(joints, [(i, i + 1) for i in range(n - 1)],
                         category=category)


def record_line(record):
    return canon_json(record_to_json(record))


def make_record(n=4, category="character", caption="a character", tags=(),
                source_id="r0"):
    return DatasetRecord(chain_skeleton(n, category), caption, tuple(tags),
                         source_id)


class TestFilterRecords:
    def test_all_valid_is_identity_with_zero_rejections(self, rng):
        records = toy_dataset(rng, 10)
        lines = [record_line(r) for r in records]
        crit = dk.FilterCriteria(categories=None)
        kept, stats = dk.filter_records(lines, crit)
        assert [record_to_json(k) for k in kept] == [record_to_json(r)
                                                     for r in records]
        assert stats == {"input": 10, "kept": 10, "rejected": {}}

    def test_node_count_bound(self):
        lines = [record_line(make_record(31)), record_line(make_record(30))]
        kept, stats = dk.filter_records(lines)
        assert len(kept) == 1 and kept[0].skeleton.n_joints == 30
        assert stats["rejected"] == {"NODE_COUNT": 1}

    def test_off_whitelist_category_rejected(self):
        doc = record_to_json(make_record())
        doc["skeleton"]["category"] = "vehicle"
        kept, stats = dk.filter_records([canon_json(doc)])
        assert kept == []
        assert stats["rejected"] == {dk.CATEGORY: 1}

    def test_missing_category_rejected_under_whitelist(self):
        rec = make_record(category=None)
        kept, stats = dk.filter_records([record_line(rec)])
        assert kept == []
        assert stats["rejected"] == {dk.CATEGORY: 1}

    def test_whitelist_disabled(self):
        rec = make_record(category=None)
        kept, stats = dk.filter_records([record_line(rec)],
                                        dk.FilterCriteria(categories=None))
        assert len(kept) == 1 and stats["rejected"] == {}

    def test_unreadable_line_counted_in_lax_mode(self):
        lines = ["{not json", record_line(make_record())]
        kept, stats = dk.filter_records(lines)
        assert len(kept) == 1
        assert stats["rejected"] == {dk.UNREADABLE: 1}

    def test_unreadable_line_raises_in_strict_mode(self):
        with pytest.raises((ParseError, json.JSONDecodeError)):
            dk.filter_records(["{not json"], lax=False)

    def test_empty_caption_rejected_by_default(self):
        rec = make_record(caption="   ")
        kept, stats = dk.filter_records([record_line(rec)])
        assert kept == []
        assert stats["rejected"] == {dk.NO_CAPTION: 1}
        crit = dk.FilterCriteria(require_caption=False)
        kept, _ = dk.filter_records([record_line(rec)], crit)
        assert len(kept) == 1

    def test_disconnected_skeleton_rejected(self):
        skel = SkeletonGraph(np.zeros((3, 3)), [(0, 1)], category="animal")
        rec = DatasetRecord(skel, "a broken thing")
        kept, stats = dk.filter_records([record_line(rec)])
        assert kept == []
        assert stats["rejected"] == {"DISCONNECTED": 1}

    def test_counts_sum_to_input_minus_output(self, rng):
        lines = ([record_line(r) for r in toy_dataset(rng, 8)]
                 + [record_line(make_record(31)), "garbage",
                    record_line(make_record(caption=""))])
        kept, stats = dk.filter_records(lines, dk.FilterCriteria(categories=None))
        assert stats["input"] - stats["kept"] == sum(stats["rejected"].values())
        assert stats["input"] == len(lines)

    def test_order_independent(self, rng):
        lines = [record_line(r) for r in toy_dataset(rng, 9)]
        lines.insert(3, record_line(make_record(31)))
        crit = dk.FilterCriteria(categories=None)
        kept_fwd, stats_fwd = dk.filter_records(lines, crit)
        kept_rev, stats_rev = dk.filter_records(list(reversed(lines)), crit)
        assert stats_fwd == stats_rev
        assert ([record_to_json(r) for r in kept_fwd]
                == [record_to_json(r) for r in reversed(kept_rev)])

    def test_blank_lines_ignored(self):
        kept, stats = dk.filter_records(["", "  ", record_line(make_record())])
        assert stats["input"] == 1 and len(kept) == 1

    def test_bad_criteria_rejected(self):
        with pytest.raises(ValueError):
            dk.FilterCriteria(min_joints=0)
        with pytest.raises(ValueError):
            dk.FilterCriteria(min_joints=5, max_joints=4)


class TestFilterManifest:
    def test_writes_filtered_jsonl(self, tmp_path, rng):
        records = toy_dataset(rng, 6) + [make_record(31, source_id="big")]
        src = tmp_path / "all.jsonl"
        dst = tmp_path / "kept.jsonl"
        write_manifest(records, src)
        stats = dk.filter_manifest(src, dst, dk.FilterCriteria(categories=None))
        assert stats["kept"] == 6 and stats["rejected"] == {"NODE_COUNT": 1}
        back = read_manifest(dst)
        assert [r.source_id for r in back] == [r.source_id for r in records[:6]]


class TestHasTexture:
    def test_texture_map_present(self):
        assert dk.has_texture({"texture_maps": ["albedo.png"]})

    def test_vertex_colors_only(self):
        assert dk.has_texture({"vertex_colors": True, "texture_maps": []})

    def test_neither(self):
        assert not dk.has_texture({"vertex_colors": False, "texture_maps": []})
        assert not dk.has_texture({})


class TestCaptioning:
    def test_request_payload(self):
        rec = make_record(category="plant")
        job = dk.caption_request(rec, {"front": "f.png", "side": "s.png",
                                       "top": "t.png"})
        assert job.record is rec
        assert list(job.payload["views"]) == ["front", "side", "top"]
        assert job.payload["instruction"] == dk.CAPTION_INSTRUCTION
        assert job.payload["category"] == "plant"

    def test_mock_client_answers_from_category(self):
        rec = make_record(category="plant")
        job = dk.caption_request(rec, {"front": "f.png"})
        assert dk.MockVLMClient().caption(job.payload) == \
            "a plant in a generic pose"

    def test_mock_client_without_category(self):
        job = dk.caption_request(make_record(category=None), {})
        assert dk.MockVLMClient().caption(job.payload) == \
            "an object in a generic pose"

    def test_mock_satisfies_client_protocol(self):
        assert isinstance(dk.MockVLMClient(), dk.VLMClient)

    def test_ingest_attaches_caption_and_tags(self):
        rec = make_record(tags=("symmetric",))
        job = dk.caption_request(rec, {})
        out = dk.ingest_caption(job, "a character in a T-pose ",
                                extra_tags=("T-pose",))
        assert out.caption == "a character in a T-pose"
        assert out.tags == ("symmetric", "T-pose")
        assert out.source_id == rec.source_id

    def test_empty_caption_rejected(self):
        job = dk.caption_request(make_record(), {})
        with pytest.raises(ValueError):
            dk.ingest_caption(job, "")
        with pytest.raises(ValueError):
            dk.ingest_caption(job, "   ")

    def test_tags_survive_manifest_roundtrip(self, tmp_path):
        job = dk.caption_request(make_record(), {})
        out = dk.ingest_caption(job, "a character standing",
                                extra_tags=("T-pose", "symmetry"))
        path = tmp_path / "m.jsonl"
        write_manifest([out], path)
        back = read_manifest(path)[0]
        assert back.tags == ("T-pose", "symmetry")
        assert back.caption == out.caption
