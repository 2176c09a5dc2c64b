import random

import pytest

from mitoforge.errors import ImageTooSmall, InsufficientRecords
from mitoforge.geometry import BBox
from mitoforge.tiler import (
    Annotation,
    Label,
    PatchRecord,
    annotations_from_json,
    build_tile_grid,
    filter_nonempty,
    project_annotations,
    record_from_json,
    record_to_json,
    split_random,
)


def make_records(n):
    return [
        PatchRecord(
            image_id="img",
            origin=(i * 512, 0),
            annotations=[Annotation(BBox(1, 1, 5, 5), Label.MITOSIS, "img")],
        )
        for i in range(n)
    ]


class TestTileGrid:
    def test_exact_fit_counts(self):
        grid = build_tile_grid((2048, 1536), 512, 512)
        assert len(grid.origins) == 12

    def test_overlapping_counts(self):
        grid = build_tile_grid((2048, 1536), 512, 256)
        assert len(grid.origins) == 35

    def test_single_tile(self):
        for stride in (1, 100, 512):
            grid = build_tile_grid((512, 512), 512, stride)
            assert grid.origins == ((0, 0),)

    def test_too_small(self):
        with pytest.raises(ImageTooSmall):
            build_tile_grid((500, 2048), 512)

    def test_edge_anchoring(self):
        grid = build_tile_grid((1000, 700), 512, 512)
        xs = sorted({o[0] for o in grid.origins})
        ys = sorted({o[1] for o in grid.origins})
        assert xs == [0, 488]
        assert ys == [0, 188]

    def test_coverage(self):
        rng = random.Random(0)
        for _ in range(50):
            w = rng.randint(512, 3000)
            h = rng.randint(512, 3000)
            stride = rng.randint(1, 512)
            grid = build_tile_grid((w, h), 512, stride)
            xs = {o[0] for o in grid.origins}
            ys = {o[1] for o in grid.origins}
            # 1-D coverage per axis suffices: the grid is a product set.
            for extent, anchors in ((w, xs), (h, ys)):
                covered = sorted(anchors)
                assert covered[0] == 0
                last_reach = 0
                for a in covered:
                    assert a <= last_reach  # no gap
                    last_reach = max(last_reach, a + 512)
                assert last_reach >= extent


class TestProjection:
    def grid(self):
        return build_tile_grid((1024, 512), 512, 512)

    def test_fully_inside(self):
        anns = [Annotation(BBox(600, 100, 650, 150), Label.MITOSIS, "img")]
        records = project_annotations(anns, self.grid())
        by_origin = {r.origin: r for r in records}
        local = by_origin[(512, 0)].annotations
        assert len(local) == 1
        assert local[0].box == BBox(88, 100, 138, 150)
        assert by_origin[(0, 0)].annotations == []

    def test_straddling_dropped_below_threshold(self):
        grid = build_tile_grid((1024, 1024), 512, 512)
        anns = [Annotation(BBox(500, 500, 530, 530), Label.MITOSIS, "img")]
        records = project_annotations(anns, grid)
        by_origin = {r.origin: r for r in records}
        # Top-left tile clips it to 12x12: 144/900 = 0.16 < 0.3 -> dropped
        assert by_origin[(0, 0)].annotations == []
        # Edge tiles see 18x12 or 12x18 (0.24): still dropped
        assert by_origin[(512, 0)].annotations == []
        assert by_origin[(0, 512)].annotations == []
        # Bottom-right tile keeps 18x18: 324/900 = 0.36 >= 0.3
        assert len(by_origin[(512, 512)].annotations) == 1

    def test_local_boxes_within_tile(self):
        rng = random.Random(1)
        anns = [
            Annotation(
                BBox(x := rng.uniform(0, 1000), y := rng.uniform(0, 490),
                     x + rng.uniform(1, 50), y + rng.uniform(1, 20)),
                Label.HARD_NEGATIVE,
                "img",
            )
            for _ in range(50)
        ]
        for rec in project_annotations(anns, self.grid()):
            for a in rec.annotations:
                assert 0 <= a.box.x_min < a.box.x_max <= 512
                assert 0 <= a.box.y_min < a.box.y_max <= 512

    def test_never_invents_annotations(self):
        anns = [Annotation(BBox(100, 100, 140, 140), Label.MITOSIS, "img")]
        records = project_annotations(anns, self.grid(), min_visible_iou=0.0)
        total = sum(len(r.annotations) for r in records)
        assert total <= len(records)  # one annotation, at most one per tile


class TestFilter:
    def test_keeps_mitosis(self):
        recs = make_records(1)
        assert filter_nonempty(recs) == recs

    def test_drops_empty(self):
        rec = PatchRecord("img", (0, 0), [])
        assert filter_nonempty([rec]) == []

    def test_keeps_hard_negative_only(self):
        rec = PatchRecord(
            "img", (0, 0), [Annotation(BBox(1, 1, 5, 5), Label.HARD_NEGATIVE, "img")]
        )
        assert filter_nonempty([rec]) == [rec]


class TestSplit:
    def test_deterministic(self):
        recs = make_records(10)
        s1 = split_random(recs, seed=7, train_count=6, val_count=4)
        s2 = split_random(recs, seed=7, train_count=6, val_count=4)
        assert s1.train == s2.train and s1.val == s2.val

    def test_partition(self):
        recs = make_records(20)
        s = split_random(recs, seed=3, train_count=12, val_count=8)
        ids = lambda part: {id(r) for r in part}
        assert ids(s.train) & ids(s.val) == set()
        assert ids(s.train) | ids(s.val) == ids(recs)

    def test_exact_paper_counts(self):
        recs = make_records(4985)
        s = split_random(recs, seed=0, train_count=3072, val_count=1913)
        assert len(s.train) == 3072 and len(s.val) == 1913

    def test_discards_surplus(self):
        recs = make_records(10)
        s = split_random(recs, seed=0, train_count=4, val_count=3)
        assert len(s.train) == 4 and len(s.val) == 3

    def test_insufficient(self):
        with pytest.raises(InsufficientRecords):
            split_random(make_records(4), seed=0, train_count=3, val_count=2)

    def test_fraction_mode(self):
        s = split_random(make_records(10), seed=0, train_fraction=0.7)
        assert len(s.train) == 7 and len(s.val) == 3


class TestSerialization:
    def test_annotation_file(self):
        text = """{"image_id": "a", "width": 1024, "height": 512,
            "annotations": [{"bbox": [1, 2, 11, 12], "label": "mitosis"},
                            {"bbox": [5, 5, 9, 9], "label": "hard_negative"}]}"""
        image_id, size, anns = annotations_from_json(text)
        assert image_id == "a" and size == (1024, 512)
        assert anns[0].label is Label.MITOSIS
        assert anns[1].box == BBox(5, 5, 9, 9)

    def test_unknown_label_rejected(self):
        text = '{"image_id": "a", "width": 1, "height": 1, "annotations": [{"bbox": [0,0,1,1], "label": "tumor"}]}'
        with pytest.raises(ValueError, match="annotations\\[0\\].label"):
            annotations_from_json(text)

    def test_missing_key_rejected(self):
        with pytest.raises(ValueError, match="width"):
            annotations_from_json('{"image_id": "a", "height": 1, "annotations": []}')

    def test_record_round_trip(self):
        rec = make_records(1)[0]
        assert record_from_json(record_to_json(rec)) == rec
