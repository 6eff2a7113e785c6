import datetime as dt
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tprnn.timeseries_data import (
    MINUTES_PER_WEEK,
    ImputationError,
    LoadSeries,
    NormalizationParams,
    ParseError,
    RawRecord,
    RawRecords,
    concat_series,
    denormalize,
    export_series_csv,
    impute_missing,
    normalize,
    parse_ucihpc_csv,
    slice_weeks,
)

HEADER = ("Date;Time;Global_active_power;Global_reactive_power;Voltage;"
          "Global_intensity;Sub_metering_1;Sub_metering_2;Sub_metering_3")


def write_rows(tmp_path, rows, header=HEADER):
    path = tmp_path / "hpc.txt"
    path.write_text("\n".join([header, *rows]) + "\n" if header is not None else "")
    return path


def rec(day, minute, gap):
    return RawRecord(dt.date(2007, 1, 1) + dt.timedelta(days=day), minute, gap)


# ---------------------------------------------------------------- parsing

def test_first_documented_row(tmp_path):
    path = write_rows(tmp_path, ["16/12/2006;17:24:00;4.216;0.418;234.840;18.400;0.000;1.000;17.000"])
    records = parse_ucihpc_csv(path)
    assert len(records) == 1
    r = records[0]
    assert r.date == dt.date(2006, 12, 16)
    assert r.time == 1044
    assert r.gap == 4.216


def test_question_mark_is_absent(tmp_path):
    path = write_rows(tmp_path, ["16/12/2006;17:24:00;4.216;0.418;234.840;18.400;0.000;1.000;17.000",
                                 "28/4/2007;00:21:00;?;?;?;?;?;?;"])
    records = parse_ucihpc_csv(path)
    assert records[1].gap is None
    assert records[1].date == dt.date(2007, 4, 28)
    assert records[1].time == 21
    assert records.n_missing == 1


def test_rows_in_file_order(tmp_path):
    rows = [f"1/1/2007;00:0{k}:00;{k}.5;0;0;0;0;0;0" for k in (3, 1, 2)]
    records = parse_ucihpc_csv(write_rows(tmp_path, rows))
    assert [r.time for r in records] == [3, 1, 2]
    assert [r.gap for r in records] == [3.5, 1.5, 2.5]


@pytest.mark.parametrize("row, lineno, needle", [
    ("1/1/2007;00:00:00;1.0;0;0", 2, "fields"),
    ("31/2/2007;00:00:00;1.0;0;0;0;0;0;0", 2, "date"),
    ("1/1/2007;25:00:00;1.0;0;0;0;0;0;0", 2, "time"),
    ("1/1/2007;00:00;1.0;0;0;0;0;0;0", 2, "time"),
    ("1/1/2007;00:00:00;abc;0;0;0;0;0;0", 2, "GAP"),
    ("1/1/2007;00:00:00;-1.0;0;0;0;0;0;0", 2, "GAP"),
])
def test_malformed_row_names_line(tmp_path, row, lineno, needle):
    with pytest.raises(ParseError) as err:
        parse_ucihpc_csv(write_rows(tmp_path, [row]))
    assert err.value.lineno == lineno
    assert needle in str(err.value)
    assert f":{lineno}:" in str(err.value)


def test_error_line_counts_past_good_rows(tmp_path):
    rows = ["1/1/2007;00:00:00;1.0;0;0;0;0;0;0"] * 4 + ["1/1/2007;xx;1.0;0;0;0;0;0;0"]
    with pytest.raises(ParseError) as err:
        parse_ucihpc_csv(write_rows(tmp_path, rows))
    assert err.value.lineno == 6


def test_empty_file(tmp_path):
    path = tmp_path / "empty.txt"
    path.write_text("")
    with pytest.raises(ParseError, match="empty"):
        parse_ucihpc_csv(path)


def test_header_only(tmp_path):
    with pytest.raises(ParseError):
        parse_ucihpc_csv(write_rows(tmp_path, []))


def test_bad_header(tmp_path):
    with pytest.raises(ParseError, match="header"):
        parse_ucihpc_csv(write_rows(tmp_path, ["1/1/2007;00:00:00;1.0"], header="a;b;c"))


def test_synthetic_file_counts(uci_file):
    records = parse_ucihpc_csv(uci_file["path"])
    assert len(records) == uci_file["rows"]
    assert records.n_missing == uci_file["missing"]


def test_raw_record_invariants():
    with pytest.raises(ValueError):
        RawRecord(dt.date(2007, 1, 1), 1440, 1.0)
    with pytest.raises(ValueError):
        RawRecord(dt.date(2007, 1, 1), 0, -0.5)
    with pytest.raises(ValueError):
        RawRecord(dt.date(2007, 1, 1), 0, math.inf)


# ---------------------------------------------------------------- imputation

def test_minute_of_day_mean():
    records = [rec(0, 600, 2.0), rec(1, 600, 4.0), rec(2, 600, None)]
    series = impute_missing(records)
    # minute 600 of day 2 sits 2 * 1440 minutes after the first record
    assert series.values[2 * 1440] == 3.0
    assert series.imputed_mask[2 * 1440]
    assert series.values[0] == 2.0 and series.values[1440] == 4.0


def test_complete_input_is_identity():
    vals = [1.0, 2.5, 0.3, 4.0]
    series = impute_missing([rec(0, k, v) for k, v in enumerate(vals)])
    assert series.values.tolist() == vals
    assert not series.imputed_mask.any()
    assert series.start == dt.datetime(2007, 1, 1)


def test_single_value_fills_everything():
    records = [rec(0, 0, None), rec(0, 1, 5.0), rec(0, 5, None), rec(1, 100, None)]
    series = impute_missing(records)
    assert len(series) == 1440 + 100 + 1
    assert np.all(series.values == 5.0)
    assert series.imputed_mask.sum() == len(series) - 1


def test_absent_rows_count_as_missing():
    # minutes 1..3 have no row at all
    series = impute_missing([rec(0, 0, 1.0), rec(0, 4, 3.0), rec(1, 1, 7.0)])
    assert len(series) == 1440 + 2
    assert series.values[1] == 7.0  # minute-of-day 1 has one present value
    assert series.values[2] == pytest.approx((1.0 + 3.0 + 7.0) / 3)  # global fallback
    assert series.imputed_mask[1:4].all()


def test_nothing_to_average():
    with pytest.raises(ImputationError, match="nothing to average"):
        impute_missing([rec(0, 0, None), rec(0, 1, None)])


def test_duplicate_timestamp_rejected():
    with pytest.raises(ValueError, match="duplicate"):
        impute_missing([rec(0, 0, 1.0), rec(0, 0, 2.0)])


def test_unsorted_rejected():
    with pytest.raises(ValueError, match="sorted"):
        impute_missing([rec(0, 5, 1.0), rec(0, 2, 2.0)])


@st.composite
def record_lists(draw):
    n = draw(st.integers(1, 300))
    minutes = sorted(draw(st.sets(st.integers(0, 4000), min_size=n, max_size=n)))
    gaps = draw(st.lists(st.one_of(st.none(), st.floats(0, 10, allow_nan=False)),
                         min_size=len(minutes), max_size=len(minutes)))
    if all(g is None for g in gaps):
        gaps[0] = 1.25
    return RawRecords([730000 + m // 1440 for m in minutes], [m % 1440 for m in minutes],
                      [np.nan if g is None else g for g in gaps])


@settings(max_examples=60, deadline=None)
@given(record_lists())
def test_imputation_properties(records):
    series = impute_missing(records)
    idx = records.minute_index
    assert len(series) == idx[-1] - idx[0] + 1
    assert np.all(np.isfinite(series.values))
    present = ~np.isnan(records.gap)
    pos = idx - idx[0]
    # present values are never touched, and only missing minutes are flagged
    assert np.array_equal(series.values[pos[present]], records.gap[present])
    assert not series.imputed_mask[pos[present]].any()
    assert series.imputed_mask.sum() == len(series) - present.sum()
    # idempotence: a complete series is returned unchanged
    again = impute_missing(RawRecords(
        [730000 + (idx[0] + k) // 1440 for k in range(len(series))],
        [(idx[0] + k) % 1440 for k in range(len(series))],
        series.values))
    assert np.array_equal(again.values, series.values)
    assert not again.imputed_mask.any()


def test_parse_impute_round_trip(uci_file):
    records = parse_ucihpc_csv(uci_file["path"])
    series = impute_missing(records)
    assert len(series) == uci_file["minutes"]
    assert series.imputed_mask.sum() == uci_file["missing"] + uci_file["dropped"]
    truth = uci_file["values"]
    keep = ~series.imputed_mask
    assert np.allclose(series.values[keep], truth[keep], atol=5e-4)


def test_load_series_is_read_only():
    s = LoadSeries(dt.datetime(2007, 1, 1), [1.0, 2.0], [False, False])
    with pytest.raises(ValueError):
        s.values[0] = 3.0
    with pytest.raises(ValueError):
        LoadSeries(dt.datetime(2007, 1, 1), [1.0, math.nan], [False, False])


# ---------------------------------------------------------------- normalization

def test_normalize_examples():
    p = NormalizationParams(0.0, 8.0)
    assert normalize(0.0, p) == 0.0
    assert normalize(8.0, p) == 1.0
    assert normalize(4.216, p) == pytest.approx(0.527, abs=1e-15)
    q = NormalizationParams(0.076, 11.122)
    assert normalize(0.076, q) == 0.0
    assert normalize(11.122, q) == 1.0


@pytest.mark.parametrize("lo, hi", [(1.0, 1.0), (2.0, 1.0), (0.0, math.nan)])
def test_bad_bounds(lo, hi):
    with pytest.raises(ValueError):
        NormalizationParams(lo, hi)


@settings(max_examples=200, deadline=None)
@given(st.floats(-1e3, 1e3), st.floats(1e-3, 1e3),
       st.lists(st.floats(-1e4, 1e4), min_size=1, max_size=50))
def test_normalize_round_trip(lo, width, xs):
    p = NormalizationParams(lo, lo + width)
    x = np.array(xs)
    back = denormalize(normalize(x, p), p)
    scale = np.maximum(np.abs(x), max(abs(lo), abs(lo + width)))
    assert np.all(np.abs(back - x) <= 1e-12 * scale + 1e-12 * width)


def test_normalize_series_keeps_mask():
    s = LoadSeries(dt.datetime(2007, 1, 1), [1.0, 3.0], [True, False])
    n = normalize(s, NormalizationParams.fit(s.values))
    assert n.values.tolist() == [0.0, 1.0]
    assert n.imputed_mask.tolist() == [True, False]
    assert n.start == s.start


# ---------------------------------------------------------------- weeks

def long_series(start=dt.datetime(2006, 12, 16, 17, 24), days=30):
    n = days * 1440
    return LoadSeries(start, np.arange(n, dtype=float), np.zeros(n, bool))


def test_two_weeks_from_fig_start():
    s = long_series()
    weeks = slice_weeks(s, dt.date(2006, 12, 18), 2)
    assert len(weeks) == 2
    assert weeks[0].start == dt.datetime(2006, 12, 18)
    assert weeks[1].start == dt.datetime(2006, 12, 25)
    assert weeks[1].end == dt.datetime(2007, 1, 1)
    assert weeks[1].timestamp(MINUTES_PER_WEEK - 1).date() == dt.date(2006, 12, 31)
    assert all(len(w) == MINUTES_PER_WEEK for w in weeks)
    assert weeks[0].values[-1] + 1 == weeks[1].values[0]


def test_one_week_and_zero_weeks():
    s = long_series()
    assert len(slice_weeks(s, dt.date(2006, 12, 18), 1)[0]) == 10_080
    assert slice_weeks(s, dt.date(2006, 12, 18), 0) == []


@pytest.mark.parametrize("start, n", [(dt.date(2006, 12, 16), 1), (dt.date(2006, 12, 18), 5),
                                      (dt.date(2006, 12, 10), 1)])
def test_out_of_range(start, n):
    with pytest.raises(IndexError):
        slice_weeks(long_series(), start, n)


def test_concat_and_export(tmp_path):
    s = long_series(days=2)
    parts = [s.window(0, 100), s.window(100, 50)]
    joined = concat_series(parts)
    assert np.array_equal(joined.values, s.values[:150])
    with pytest.raises(ValueError):
        concat_series([parts[1], parts[0]])
    out = tmp_path / "s.csv"
    export_series_csv(joined, out)
    lines = out.read_text().splitlines()
    assert lines[0] == "timestamp_iso8601,gap_kw"
    assert lines[1] == "2006-12-16T17:24:00,0.0"
    assert len(lines) == 151
