import math
from datetime import datetime, timedelta, timezone

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trafficpm import aggregation
from trafficpm.aggregation import BinCounts, bin_counts, count_vehicles, read_counts_csv, write_counts_csv
from trafficpm.detection import Detection, ImageDetections
from trafficpm.errors import ParseError


def utc(*args):
    return datetime(*args, tzinfo=timezone.utc)


def image(ts, labels, camera_id="cam01", ref="r"):
    dets = tuple(Detection(lbl, 0.9, (float(10 * i), 0.0, 8.0, 6.0)) for i, lbl in enumerate(labels))
    return ImageDetections(camera_id=camera_id, image_timestamp=ts, image_ref=ref, detections=dets)


class TestCountVehicles:
    def test_counts_three_classes_only(self):
        item = image(utc(2026, 2, 20, 13), ["car", "car", "truck", "bus", "motorcycle", "dog"])
        counts = count_vehicles(item)
        assert (counts.car, counts.truck, counts.bus) == (2, 1, 1)
        assert counts.total == 4  # motorcycle and unknown labels excluded

    def test_empty_image(self):
        counts = count_vehicles(image(utc(2026, 2, 20, 13), []))
        assert counts.total == 0


class TestBinCounts:
    def test_mean_not_sum(self):
        # two images in the same 300 s bin: 3 cars and 1 car -> mean 2.0
        items = [
            image(utc(2026, 2, 20, 13, 1), ["car"] * 3),
            image(utc(2026, 2, 20, 13, 4, 59), ["car"]),
        ]
        bins = bin_counts(items, "cam01")
        assert len(bins) == 1
        b = bins[0]
        assert b.bin_start == utc(2026, 2, 20, 13, 0)
        assert b.n_images == 2
        assert b.car == 2.0
        assert b.total_mean == 2.0

    def test_bin_edges_floor(self):
        items = [
            image(utc(2026, 2, 20, 13, 4, 59, 999999), ["car"]),
            image(utc(2026, 2, 20, 13, 5, 0), ["car", "car"]),
        ]
        bins = bin_counts(items, "cam01")
        assert [b.bin_start for b in bins] == [utc(2026, 2, 20, 13, 0), utc(2026, 2, 20, 13, 5)]
        assert [b.car for b in bins] == [1.0, 2.0]

    def test_zero_detection_images_count(self):
        items = [
            image(utc(2026, 2, 20, 13, 1), ["car", "car"]),
            image(utc(2026, 2, 20, 13, 2), []),
        ]
        b = bin_counts(items, "cam01")[0]
        assert b.n_images == 2
        assert b.car == 1.0

    def test_other_cameras_ignored(self):
        items = [
            image(utc(2026, 2, 20, 13, 1), ["car"], camera_id="cam01"),
            image(utc(2026, 2, 20, 13, 1), ["car"] * 5, camera_id="cam02"),
        ]
        bins = bin_counts(items, "cam01")
        assert len(bins) == 1
        assert bins[0].car == 1.0

    def test_empty_bins_absent(self):
        items = [
            image(utc(2026, 2, 20, 13, 1), ["car"]),
            image(utc(2026, 2, 20, 13, 21), ["car"]),
        ]
        bins = bin_counts(items, "cam01")
        assert len(bins) == 2

    def test_interval_validated(self):
        with pytest.raises(ValueError):
            bin_counts([], "cam01", interval_s=10)

    @given(
        st.lists(
            st.tuples(st.integers(0, 3599), st.integers(0, 9), st.integers(0, 3), st.integers(0, 2)),
            min_size=1,
            max_size=40,
        )
    )
    @settings(max_examples=60)
    def test_against_direct_means(self, rows):
        base = utc(2026, 2, 20, 13)
        items = [
            image(base + timedelta(seconds=sec), ["car"] * c + ["truck"] * t + ["bus"] * b)
            for sec, c, t, b in rows
        ]
        bins = bin_counts(items, "cam01")
        # oracle: group by integer epoch, plain fsum means
        groups = {}
        for sec, c, t, b in rows:
            key = (int(base.timestamp()) + sec) // 300 * 300
            groups.setdefault(key, []).append((c, t, b))
        assert len(bins) == len(groups)
        for bin_row in bins:
            members = groups[int(bin_row.bin_start.timestamp())]
            assert bin_row.n_images == len(members)
            assert bin_row.car == math.fsum(m[0] for m in members) / len(members)
            assert bin_row.truck == math.fsum(m[1] for m in members) / len(members)
            assert bin_row.bus == math.fsum(m[2] for m in members) / len(members)
            assert bin_row.total_mean == math.fsum(sum(m) for m in members) / len(members)


class TestCountsCsv:
    def rows(self):
        return [
            BinCounts("cam02", utc(2026, 2, 20, 13, 0), 2, 1.5, 0.5, 0.0, 2.0),
            BinCounts("cam01", utc(2026, 2, 20, 13, 5), 1, 3.0, 0.0, 1.0, 4.0),
            BinCounts("cam01", utc(2026, 2, 20, 13, 0), 3, 1 / 3, 0.0, 0.0, 1 / 3),
        ]

    def test_header_and_order(self, tmp_path):
        path = tmp_path / "counts.csv"
        write_counts_csv(path, self.rows())
        lines = path.read_text().splitlines()
        assert lines[0] == "camera_id,bin_start,n_images,car,truck,bus,total_mean"
        assert [ln.split(",")[0] for ln in lines[1:]] == ["cam01", "cam01", "cam02"]

    def test_floats_round_trip_exactly(self, tmp_path):
        path = tmp_path / "counts.csv"
        write_counts_csv(path, self.rows())
        again = read_counts_csv(path)
        assert again == sorted(self.rows(), key=lambda r: (r.camera_id, r.bin_start))
        third = [r for r in again if r.n_images == 3][0]
        assert third.car == 1 / 3  # bitwise, through repr

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "counts.csv"
        path.write_text("a,b\n")
        with pytest.raises(ParseError):
            read_counts_csv(path)
