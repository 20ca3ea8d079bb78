import math
from datetime import date, datetime, timezone
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from trafficpm import analysis, util
from trafficpm.aggregation import BinCounts
from trafficpm.analysis import (
    PmRow,
    bin_pm,
    build_day_points,
    correlate_days,
    daily_boxplot_rows,
    five_number,
    parse_pm_csv,
    pearson_r,
)
from trafficpm.errors import ParseError, UndefinedCorrelationError

HEADER = "timestamp,location_id,pm1_ugm3,pm25_ugm3,rh_pct,temp_c"


def utc(*args):
    return datetime(*args, tzinfo=timezone.utc)


def write_csv(tmp_path, rows):
    path = tmp_path / "pm.csv"
    path.write_text(HEADER + "\n" + "".join(r + "\n" for r in rows))
    return path


class TestParsePmCsv:
    def test_clean_rows(self, tmp_path):
        path = write_csv(
            tmp_path,
            [
                "2026-02-20T13:00:00Z,L1,15.5,21.0,55.0,4.0",
                "2026-02-20T13:00:05Z,L2,12.5,18.0,54.0,4.1",
            ],
        )
        result = parse_pm_csv(path)
        assert result.total_rows == 2
        assert len(result.rows) == 2
        assert result.dropped == {}
        assert result.flagged == 0
        assert result.rows[0].pm1 == 15.5
        assert result.rows[0].location_id == "L1"

    def test_drop_reasons_tallied(self, tmp_path):
        path = write_csv(
            tmp_path,
            [
                "2026-02-20T13:00:00Z,L1,15.5,21.0,55.0,4.0",
                "not-a-time,L1,15.5,21.0,55.0,4.0",
                "2026-02-20T13:00:10Z,,15.5,21.0,55.0,4.0",
                "2026-02-20T13:00:15Z,L1,abc,21.0,55.0,4.0",
                "2026-02-20T13:00:20Z,L1,-1.0,21.0,55.0,4.0",
                "2026-02-20T13:00:25Z,L1,15.5,-0.1,55.0,4.0",
                "2026-02-20T13:00:30Z,L1,15.5,21.0,150.0,4.0",
                "2026-02-20T13:00:35Z,L1,15.5,21.0,-3.0,4.0",
                "2026-02-20T13:00:40Z,L1,15.5,21.0",
                "2026-02-20T13:00:45Z,L1,inf,21.0,55.0,4.0",
            ],
        )
        result = parse_pm_csv(path)
        assert result.total_rows == 10
        assert len(result.rows) == 1
        assert result.dropped == {
            "bad_timestamp": 1,
            "missing_location": 1,
            "bad_number": 2,
            "negative_pm": 2,
            "rh_out_of_range": 2,
            "wrong_field_count": 1,
        }

    def test_pm25_below_pm1_kept_but_flagged(self, tmp_path):
        path = write_csv(
            tmp_path,
            [
                "2026-02-20T13:00:00Z,L1,15.5,15.0,55.0,4.0",
                "2026-02-20T13:00:05Z,L1,15.5,15.5,55.0,4.0",
            ],
        )
        result = parse_pm_csv(path)
        assert len(result.rows) == 2
        assert result.flagged == 1
        assert result.rows[0].flagged and not result.rows[1].flagged

    def test_wrong_header_rejected(self, tmp_path):
        path = tmp_path / "pm.csv"
        path.write_text("time,loc,pm1\n")
        with pytest.raises(ParseError):
            parse_pm_csv(path)


class TestBinPm:
    def test_means_per_location(self):
        rows = [
            PmRow(utc(2026, 2, 20, 13, 0, 0), "L1", 10.0, 12.0, 50.0, 4.0),
            PmRow(utc(2026, 2, 20, 13, 4, 59), "L1", 20.0, 24.0, 50.0, 4.0),
            PmRow(utc(2026, 2, 20, 13, 0, 30), "L2", 5.0, 6.0, 50.0, 4.0),
            PmRow(utc(2026, 2, 20, 13, 5, 0), "L1", 99.0, 99.0, 50.0, 4.0),
        ]
        bins = bin_pm(rows)
        by_key = {(b.location_id, b.bin_start): b for b in bins}
        first = by_key[("L1", utc(2026, 2, 20, 13, 0))]
        assert first.pm1_mean == 15.0
        assert first.pm25_mean == 18.0
        assert first.n == 2
        assert by_key[("L2", utc(2026, 2, 20, 13, 0))].pm1_mean == 5.0
        assert by_key[("L1", utc(2026, 2, 20, 13, 5))].pm1_mean == 99.0


class TestFiveNumber:
    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=60))
    def test_against_numpy_percentile(self, values):
        lo, q1, med, q3, hi = five_number(values)
        arr = np.asarray(values, dtype=np.float64)
        assert lo == arr.min()
        assert hi == arr.max()
        assert med == pytest.approx(np.percentile(arr, 50), rel=0, abs=1e-9)
        assert q1 == pytest.approx(np.percentile(arr, 25), rel=0, abs=1e-9)
        assert q3 == pytest.approx(np.percentile(arr, 75), rel=0, abs=1e-9)

    def test_single_value(self):
        assert five_number([7.0]) == (7.0, 7.0, 7.0, 7.0, 7.0)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            five_number([])


class TestDailyBoxplot:
    def test_rows_per_day_location_channel(self):
        bins = [
            analysis.PmBin("L1", utc(2026, 2, 20, 13, 0), 10.0, 12.0, 3),
            analysis.PmBin("L1", utc(2026, 2, 20, 13, 5), 20.0, 22.0, 3),
            analysis.PmBin("L2", utc(2026, 2, 20, 13, 0), 5.0, 6.0, 3),
            analysis.PmBin("L1", utc(2026, 2, 21, 13, 0), 7.0, 8.0, 3),
        ]
        rows = daily_boxplot_rows(bins)
        keys = {(r.date, r.location_id, r.channel) for r in rows}
        assert len(rows) == 6  # 3 day/location pairs x 2 channels
        assert (date(2026, 2, 20), "L1", "pm1_ugm3") in keys
        day_l1_pm1 = next(
            r for r in rows if r.date == date(2026, 2, 20) and r.location_id == "L1" and r.channel == "pm1_ugm3"
        )
        assert day_l1_pm1.minimum == 10.0
        assert day_l1_pm1.maximum == 20.0
        assert day_l1_pm1.median == 15.0
        assert day_l1_pm1.n == 2


class TestPearson:
    def test_perfect_line(self):
        xs = [1.0, 2.0, 3.0, 4.0]
        assert pearson_r(xs, [2 * x + 1 for x in xs]) == 1.0
        assert pearson_r(xs, [-x for x in xs]) == -1.0

    def test_hand_computed(self):
        # xs=[1,2,3], ys=[1,3,2]: Sxy=1, Sxx=2, Syy=2 -> r=0.5
        assert pearson_r([1.0, 2.0, 3.0], [1.0, 3.0, 2.0]) == 0.5

    def test_constant_series_undefined(self):
        with pytest.raises(UndefinedCorrelationError):
            pearson_r([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])

    def test_too_few_points(self):
        with pytest.raises(UndefinedCorrelationError):
            pearson_r([1.0], [2.0])

    @given(
        st.lists(
            st.tuples(st.integers(-1000, 1000), st.integers(-1000, 1000)),
            min_size=2,
            max_size=30,
        )
    )
    @settings(max_examples=100)
    def test_against_exact_rational_oracle(self, pairs):
        xs = [float(p[0]) for p in pairs]
        ys = [float(p[1]) for p in pairs]
        fx = [Fraction(p[0]) for p in pairs]
        fy = [Fraction(p[1]) for p in pairs]
        n = len(pairs)
        mx, my = sum(fx) / n, sum(fy) / n
        sxx = sum((x - mx) ** 2 for x in fx)
        syy = sum((y - my) ** 2 for y in fy)
        sxy = sum((x - mx) * (y - my) for x, y in zip(fx, fy))
        assume(sxx != 0 and syy != 0)
        expected = (1 if sxy >= 0 else -1) * math.sqrt(float(sxy * sxy / (sxx * syy)))
        assert pearson_r(xs, ys) == pytest.approx(expected, rel=0, abs=1e-12)

    @given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)), min_size=2, max_size=30))
    @settings(max_examples=100)
    def test_bounded(self, pairs):
        xs = [p[0] for p in pairs]
        ys = [p[1] for p in pairs]
        try:
            r = pearson_r(xs, ys)
        except UndefinedCorrelationError:
            return
        assert -1.0 <= r <= 1.0


def count_bin(ts, total, camera_id="cam01"):
    return BinCounts(camera_id, ts, 1, total, 0.0, 0.0, total)


def pm_bin(loc, ts, pm1):
    return analysis.PmBin(loc, ts, pm1, pm1 + 5.0, 60)


class TestBuildDayPoints:
    def test_paired_bins_only(self):
        d = utc(2026, 2, 20, 13, 0)
        count_bins = [count_bin(utc(2026, 2, 20, 13, 0), 4.0), count_bin(utc(2026, 2, 20, 13, 5), 6.0)]
        pm_bins = [
            pm_bin("L1", utc(2026, 2, 20, 13, 0), 20.0),
            pm_bin("L2", utc(2026, 2, 20, 13, 0), 12.0),
            pm_bin("L1", utc(2026, 2, 20, 13, 5), 30.0),
            pm_bin("L2", utc(2026, 2, 20, 13, 5), 14.0),
            # unpaired readings must not contribute
            pm_bin("L1", utc(2026, 2, 20, 13, 10), 99.0),
        ]
        built = build_day_points(count_bins, pm_bins, roadside="L1", background="L2")
        assert built.skipped == []
        assert len(built.points) == 1
        p = built.points[0]
        assert p.date == date(2026, 2, 20)
        assert p.delta_pm1 == ((20.0 - 12.0) + (30.0 - 14.0)) / 2
        assert p.mean_count == 5.0

    def test_counts_outside_sensor_window_ignored(self):
        count_bins = [
            count_bin(utc(2026, 2, 20, 12, 55), 100.0),  # before window
            count_bin(utc(2026, 2, 20, 13, 0), 4.0),
            count_bin(utc(2026, 2, 20, 13, 5), 0.0),  # inside, last paired bin
            count_bin(utc(2026, 2, 20, 13, 10), 100.0),  # after window end
        ]
        pm_bins = [
            pm_bin("L1", utc(2026, 2, 20, 13, 0), 20.0),
            pm_bin("L2", utc(2026, 2, 20, 13, 0), 12.0),
            pm_bin("L1", utc(2026, 2, 20, 13, 5), 30.0),
            pm_bin("L2", utc(2026, 2, 20, 13, 5), 14.0),
        ]
        built = build_day_points(count_bins, pm_bins, roadside="L1", background="L2")
        assert built.points[0].mean_count == 2.0  # (4+0)/2

    def test_skip_reasons(self):
        # day 1: sensors never concurrent; day 2: no camera coverage
        pm_bins = [
            pm_bin("L1", utc(2026, 2, 20, 13, 0), 20.0),
            pm_bin("L2", utc(2026, 2, 20, 13, 5), 12.0),
            pm_bin("L1", utc(2026, 2, 21, 13, 0), 20.0),
            pm_bin("L2", utc(2026, 2, 21, 13, 0), 12.0),
        ]
        built = build_day_points([], pm_bins, roadside="L1", background="L2")
        assert built.points == []
        assert [d for d, _ in built.skipped] == [date(2026, 2, 20), date(2026, 2, 21)]
        assert "concurrent" in built.skipped[0][1]
        assert "camera" in built.skipped[1][1]

    def test_other_locations_ignored(self):
        pm_bins = [
            pm_bin("L1", utc(2026, 2, 20, 13, 0), 20.0),
            pm_bin("L2", utc(2026, 2, 20, 13, 0), 12.0),
            pm_bin("L9", utc(2026, 2, 20, 13, 0), 999.0),
        ]
        built = build_day_points([count_bin(utc(2026, 2, 20, 13, 0), 3.0)], pm_bins, roadside="L1", background="L2")
        assert built.points[0].delta_pm1 == 8.0


class TestCorrelateDays:
    def points(self):
        return [
            analysis.DayPoint(date(2026, 2, 20), 6.0, 2.0),
            analysis.DayPoint(date(2026, 2, 21), 9.0, 3.1),
            analysis.DayPoint(date(2026, 2, 22), 4.0, 1.2),
            analysis.DayPoint(date(2026, 2, 23), 14.0, 0.5),  # breaks the trend
            analysis.DayPoint(date(2026, 2, 24), 11.0, 3.9),
        ]

    def test_exclusion_changes_r(self):
        pts = self.points()
        report = correlate_days(pts, [date(2026, 2, 23)])
        assert report.n_days == 4
        assert report.excluded_dates == [date(2026, 2, 23)]
        r_without = pearson_r([6, 9, 4, 11], [2.0, 3.1, 1.2, 3.9])
        assert report.r == r_without
        assert report.r_all_days == pearson_r([6, 9, 4, 14, 11], [2.0, 3.1, 1.2, 0.5, 3.9])
        assert report.r > report.r_all_days

    def test_no_exclusions(self):
        report = correlate_days(self.points())
        assert report.r == report.r_all_days
        assert report.excluded_dates == []
        assert report.n_days == 5

    def test_exclusion_of_absent_date_not_reported(self):
        report = correlate_days(self.points(), [date(2030, 1, 1)])
        assert report.excluded_dates == []
        assert report.n_days == 5

    def test_too_few_days(self):
        with pytest.raises(UndefinedCorrelationError):
            correlate_days(self.points()[:3], [d.date for d in self.points()[:2]])


class TestWriters:
    def test_scatter_csv(self, tmp_path):
        path = tmp_path / "scatter.csv"
        analysis.write_scatter_csv(
            path,
            [
                analysis.DayPoint(date(2026, 2, 21), 9.0, 3.09375),
                analysis.DayPoint(date(2026, 2, 20), 6.0, 2.796875),
            ],
        )
        lines = path.read_text().splitlines()
        assert lines[0] == "date,mean_count,delta_pm1_ugm3"
        assert lines[1] == "2026-02-20,6.0,2.796875"
        assert lines[2] == "2026-02-21,9.0,3.09375"

    def test_boxplot_csv_header(self, tmp_path):
        path = tmp_path / "box.csv"
        analysis.write_boxplot_csv(
            path,
            [analysis.BoxplotRow(date(2026, 2, 20), "L1", "pm1_ugm3", 1.0, 2.0, 3.0, 4.0, 5.0, 12)],
        )
        lines = path.read_text().splitlines()
        assert lines[0] == "date,location_id,channel,min,q1,median,q3,max,n"
        assert lines[1] == "2026-02-20,L1,pm1_ugm3,1.0,2.0,3.0,4.0,5.0,12"

    def test_report_json_shape(self, tmp_path):
        import json

        path = tmp_path / "report.json"
        report = correlate_days(
            [
                analysis.DayPoint(date(2026, 2, 20), 6.0, 2.0),
                analysis.DayPoint(date(2026, 2, 21), 9.0, 3.0),
                analysis.DayPoint(date(2026, 2, 22), 4.0, 1.0),
            ],
            [date(2026, 2, 22)],
        )
        analysis.write_report_json(path, report)
        payload = json.loads(path.read_text())
        assert set(payload) == {"r", "r_all_days", "n_days", "excluded_dates", "days"}
        assert payload["n_days"] == 2
        assert payload["excluded_dates"] == ["2026-02-22"]
        assert payload["days"][0] == {"date": "2026-02-20", "mean_count": 6.0, "delta_pm1_ugm3": 2.0}
        assert len(payload["days"]) == 3
