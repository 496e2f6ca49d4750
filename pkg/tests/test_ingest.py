import datetime as dt
import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_shot
from gedicrop.errors import ConfigError, ParseError, ValidationError
from gedicrop.ingest import (RH_COLUMNS, LabelRaster, OpticalObservation, OpticalSeries, attach_labels,
                             drop_fractions, month_filter, parse_optical_series, parse_shot_records,
                             qc_filter, read_label_raster, sample_label, sample_labels, write_label_raster,
                             write_optical_series, write_shot_records)


def _csv(shots):
    buf = io.StringIO()
    write_shot_records(shots, buf)
    return buf.getvalue()


def _assert_same_shots(a, b):
    assert len(a) == len(b)
    for x, y in zip(a, b):
        assert (x.shot_id, x.orbit_id, x.lon, x.lat, x.date, x.quality_flag, x.degrade_flag) == \
               (y.shot_id, y.orbit_id, y.lon, y.lat, y.date, y.quality_flag, y.degrade_flag)
        np.testing.assert_array_equal(x.rh, y.rh)


# ---------------------------------------------------------------- parsing

def test_flat_curve_parses():
    shots = parse_shot_records(_csv([make_shot(rh=np.zeros(101))]).encode())
    assert len(shots) == 1
    assert np.all(shots[0].rh == 0.0)


def test_negative_rh_is_legal():
    rh = np.linspace(-1.0, 2.1, 101)
    rh[50] = -0.3
    rh[:50] = np.minimum(rh[:50], -0.3)
    shots = parse_shot_records(_csv([make_shot(rh=rh)]).encode())
    assert shots[0].rh[50] == -0.3 and shots[0].rh[100] == 2.1


def test_non_monotone_rejected_with_id():
    rh = np.linspace(0.0, 2.0, 101)
    rh[40], rh[41] = 1.0, 0.5
    text = _csv([make_shot("good"), make_shot("bad-one", rh=rh)])
    with pytest.raises(ValidationError, match="bad-one"):
        parse_shot_records(text.encode())


def test_malformed_row_names_line_and_field():
    lines = _csv([make_shot("a"), make_shot("b")]).splitlines()
    fields = lines[2].split(",")
    fields[2] = "east"
    lines[2] = ",".join(fields)
    with pytest.raises(ParseError) as exc:
        parse_shot_records(("\n".join(lines) + "\n").encode())
    assert exc.value.line == 3
    assert exc.value.field == "lon"


def test_bad_date_and_missing_column():
    text = _csv([make_shot()]).replace("2019-08-01", "2019-13-01")
    with pytest.raises(ParseError, match="date"):
        parse_shot_records(text.encode())
    header = "shot_id,orbit_id,lon,lat,date,quality_flag," + ",".join(RH_COLUMNS) + "\n"
    with pytest.raises(ValidationError):
        parse_shot_records(header.encode())


def test_empty_stream_gives_no_shots():
    assert parse_shot_records(b"") == []


def test_ndjson_round_trip():
    shots = [make_shot(f"s{i}", lon=10 + i / 7, lat=-3.25 - i, top=1 + i) for i in range(4)]
    buf = io.StringIO()
    write_shot_records(shots, buf, format="ndjson")
    _assert_same_shots(shots, parse_shot_records(buf.getvalue().encode(), format="ndjson"))


finite = st.floats(-5, 50, allow_nan=False, allow_infinity=False)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(-180, 180), st.floats(-90, 90),
                          st.lists(finite, min_size=101, max_size=101),
                          st.integers(0, 1), st.integers(0, 3),
                          st.dates(dt.date(2000, 1, 1), dt.date(2030, 12, 31))), max_size=5))
def test_csv_round_trip(rows):
    shots = [make_shot(f"id{i}", rh=np.sort(rh), lon=lon, lat=lat, date=d, quality=q, degrade=g)
             for i, (lon, lat, rh, q, g, d) in enumerate(rows)]
    _assert_same_shots(shots, parse_shot_records(_csv(shots).encode()))


@settings(max_examples=25, deadline=None)
@given(st.lists(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1),
                                   st.floats(0, 1), st.floats(0, 1)), max_size=6), max_size=4))
def test_optical_round_trip(data):
    series = [OpticalSeries(f"loc{i}", 1.5 * i, -2.0 * i, [OpticalObservation(*o) for o in obs])
              for i, obs in enumerate(data)]
    buf = io.StringIO()
    write_optical_series(series, buf)
    back = parse_optical_series(buf.getvalue().encode())
    assert [s.location_id for s in back] == [s.location_id for s in series]
    for a, b in zip(series, back):
        assert (a.lon, a.lat) == (b.lon, b.lat)
        assert a.observations == b.observations


def test_optical_series_sorted_by_t():
    s = OpticalSeries("x", 0, 0, [OpticalObservation(t, .1, .2, .3, .4, 0) for t in (0.9, 0.1, 0.5)])
    assert [o.t for o in s.observations] == [0.1, 0.5, 0.9]


def test_label_raster_round_trip(raster_2x2):
    grid, legend = io.StringIO(), io.StringIO()
    write_label_raster(raster_2x2, grid, legend)
    back = read_label_raster(io.StringIO(grid.getvalue()), io.StringIO(legend.getvalue()))
    assert back.header == raster_2x2.header
    np.testing.assert_array_equal(back.cells, raster_2x2.cells)
    assert back.legend == raster_2x2.legend and back.nodata == raster_2x2.nodata


def test_raster_code_missing_from_legend():
    grid = "ncols 2\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n1 7\n"
    with pytest.raises(ValidationError, match="7"):
        read_label_raster(io.StringIO(grid), io.StringIO("1,maize\n"))


def test_raster_value_count_mismatch():
    grid = "ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n1 1\n1\n"
    with pytest.raises(ValidationError):
        read_label_raster(io.StringIO(grid), io.StringIO("1,maize\n"))


# ---------------------------------------------------------------- QC

def _qc_fixture():
    shots = [make_shot(f"s{i:03d}", orbit=f"o{i % 4}") for i in range(100)]
    shots[7].quality_flag = 0
    shots[23].degrade_flag = 2
    shots[61].rh = np.linspace(0.0, 12.0, 101)
    return shots


def _rule_check(s, max_rh100, orbits):
    # independent restatement of the four rules
    rules = [("quality", s.quality_flag == 1), ("degrade", s.degrade_flag == 0),
             ("rh100", s.rh[-1] <= max_rh100), ("orbit", s.orbit_id not in orbits)]
    for name, ok in rules:
        if not ok:
            return name
    return None


def test_qc_fixture_partition():
    shots = _qc_fixture()
    kept, log = qc_filter(shots)
    assert len(kept) == 97 and len(log) == 3
    assert log == [("s007", "quality"), ("s023", "degrade"), ("s061", "rh100")]
    expected = [s.shot_id for s in shots if _rule_check(s, 10.0, set()) is None]
    assert [s.shot_id for s in kept] == expected


def test_qc_first_failing_rule_and_orbits():
    s = make_shot("multi", quality=0, degrade=1, top=15.0)
    kept, log = qc_filter([s, make_shot("orb", orbit="bad")], dropped_orbits={"bad"})
    assert kept == [] and log == [("multi", "quality"), ("orb", "orbit")]


def test_qc_rh100_boundary_inclusive():
    kept, _ = qc_filter([make_shot(top=10.0)])
    assert len(kept) == 1


def test_qc_empty_and_bad_threshold():
    assert qc_filter([]) == ([], [])
    with pytest.raises(ConfigError):
        qc_filter([], max_rh100_m=0)


def test_drop_fractions():
    fr = drop_fractions(100, qc_filter(_qc_fixture())[1])
    assert fr == pytest.approx({"quality": .01, "degrade": .01, "rh100": .01, "orbit": 0.0, "total": .03})
    assert drop_fractions(0, [])["total"] == 0.0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 2), st.floats(0, 15), st.sampled_from("abc")),
                max_size=30),
       st.floats(0.5, 12), st.sets(st.sampled_from("abc")))
def test_qc_properties(rows, max_rh100, orbits):
    shots = [make_shot(f"s{i}", quality=q, degrade=d, top=top, orbit=o) for i, (q, d, top, o) in enumerate(rows)]
    kept, log = qc_filter(shots, max_rh100, orbits)
    assert len(kept) + len(log) == len(shots)
    assert {s.shot_id for s in kept}.isdisjoint(i for i, _ in log)
    for s in shots:
        reason = _rule_check(s, max_rh100, orbits)
        assert ((s.shot_id, reason) in log) if reason else (s in kept)
    again, log2 = qc_filter(kept, max_rh100, orbits)
    assert again == kept and log2 == []


# ---------------------------------------------------------------- labels

def test_sample_label_basic(raster_2x2):
    assert sample_label(raster_2x2, 0.5, 1.5) == 1
    assert sample_label(raster_2x2, 2.5, 1.5) == -9999
    assert sample_label(raster_2x2, -0.5, 1.5) == -9999
    # edges belong to the cell east / south
    assert sample_label(raster_2x2, 1.0, 1.5) == 5
    assert sample_label(raster_2x2, 0.5, 1.0) == 0
    # the west and north edges are inside, the east and south edges are outside
    assert sample_label(raster_2x2, 0.0, 2.0) == 1
    assert sample_label(raster_2x2, 2.0, 1.5) == -9999
    assert sample_label(raster_2x2, 0.5, 0.0) == -9999


def _scan(raster, lon, lat):
    # containment test against every cell: west/north edges closed, east/south open
    for r in range(raster.n_rows):
        for c in range(raster.n_cols):
            west = raster.origin_lon + c * raster.cell_size
            north = raster.origin_lat - r * raster.cell_size
            if west <= lon < west + raster.cell_size and north - raster.cell_size < lat <= north:
                return int(raster.cells[r, c])
    return raster.nodata


def test_sample_label_vs_scan():
    rng = np.random.default_rng(3)
    cells = rng.integers(0, 4, size=(7, 9))
    r = LabelRaster.from_origin(-3.0, 5.0, 0.25, cells, -1, {0: "a", 1: "b", 2: "c", 3: "d"})
    lon = rng.uniform(-3.5, -0.5, 1000)
    lat = rng.uniform(2.9, 5.4, 1000)
    # include exact edge points
    lon[:50] = -3.0 + 0.25 * rng.integers(0, 10, 50)
    lat[50:100] = 5.0 - 0.25 * rng.integers(0, 8, 50)
    got = sample_labels(r, lon, lat)
    assert [int(g) for g in got] == [_scan(r, a, b) for a, b in zip(lon, lat)]


def test_attach_labels_fixture(raster_2x2):
    pts = {"m1": (0.2, 1.8), "m2": (0.9, 1.1), "s1": (1.5, 1.5), "s2": (1.0, 2.0), "n1": (0.5, 0.5),
           "n2": (0.0, 0.1), "nd": (1.5, 0.5), "out1": (3.0, 1.0), "out2": (0.5, 2.5), "edge": (1.0, 1.0)}
    shots = [make_shot(k, lon=x, lat=y) for k, (x, y) in pts.items()]
    labeled = attach_labels(shots, raster_2x2, maize_code=1)
    # by hand: maize cell holds m1, m2; soybean holds s1, s2; (1.0, 1.0) falls in the nodata cell
    assert [ls.shot.shot_id for ls in labeled] == ["m1", "m2", "s1", "s2"]
    assert [ls.is_maize for ls in labeled] == [True, True, False, False]
    assert [ls.crop_code for ls in labeled] == [1, 1, 5, 5]


def test_attach_labels_bad_maize_code(raster_2x2):
    with pytest.raises(ConfigError):
        attach_labels([make_shot()], raster_2x2, maize_code=9)


def test_month_filter():
    months = [7] * 9 + [8] * 13 + [9] * 8
    shots = [make_shot(f"s{i}", date=dt.date(2019, m, 1 + i % 28)) for i, m in enumerate(months)]
    assert len(month_filter(shots, {7})) == 9
    assert len(month_filter(shots, {8})) == 13
    assert len(month_filter(shots, {9})) == 8
    assert len(month_filter(shots, {7, 9})) == 17
    assert month_filter(shots, {7, 8, 9}) == shots
    assert [s.month for s in month_filter(shots, [8])] == [8] * 13
    for bad in ({6}, set(), {8, 10}):
        with pytest.raises(ConfigError):
            month_filter(shots, bad)
