import io
from datetime import date, datetime

import numpy as np
import pytest

from wavediff.errors import DataError
from wavediff.ingest import (
    ColumnMap,
    MinuteBar,
    TradingDay,
    derive_series,
    filter_complete_days,
    parse_minute_bars,
    session_minutes,
    write_minute_bars,
    write_rejections,
)


def make_csv(day_rows):
    """day_rows: list of (date, minutes-to-include) tuples -> CSV text."""
    lines = ["timestamp,bid_close,ask_close,volume"]
    for day, minutes in day_rows:
        stamps = session_minutes(day)
        for m in minutes:
            ts = stamps[m]
            lines.append(f"{ts.isoformat(sep=' ')},100.00,100.02,{10 + m}")
    return "\n".join(lines) + "\n"


class TestParse:
    def test_groups_rows_into_days(self):
        text = make_csv([(date(2020, 1, 6), range(390)), (date(2020, 1, 7), range(390))])
        result = parse_minute_bars(io.StringIO(text))
        assert [d.date for d in result.days] == [date(2020, 1, 6), date(2020, 1, 7)]
        assert all(len(d.bars) == 390 for d in result.days)
        assert result.row_errors == []

    def test_mid_and_spread_from_a_row(self):
        text = "timestamp,bid_close,ask_close,volume\n2020-01-06 09:30:00,100.00,100.02,5\n"
        result = parse_minute_bars(io.StringIO(text))
        bar = result.days[0].bars[0]
        assert (bar.bid_close + bar.ask_close) / 2 == pytest.approx(100.01)
        assert bar.ask_close - bar.bid_close == pytest.approx(0.02)

    def test_malformed_row_reported_with_line_number(self):
        text = (
            "timestamp,bid_close,ask_close,volume\n"
            "2020-01-06 09:30:00,100.0,100.1,5\n"
            "2020-01-06 09:31:00,not_a_price,100.1,5\n"
            "2020-01-06 09:32:00,100.0,100.1,-3\n"
        )
        result = parse_minute_bars(io.StringIO(text))
        lines = [e.line for e in result.row_errors]
        assert lines == [3, 4]

    def test_crossed_quote_is_a_row_error(self):
        text = (
            "timestamp,bid_close,ask_close,volume\n"
            "2020-01-06 09:30:00,100.10,100.00,5\n"
        )
        result = parse_minute_bars(io.StringIO(text))
        assert len(result.row_errors) == 1
        assert "ask" in result.row_errors[0].reason

    def test_rows_outside_session_are_discarded(self):
        text = (
            "timestamp,bid_close,ask_close,volume\n"
            "2020-01-06 09:29:00,100.0,100.1,5\n"
            "2020-01-06 16:00:00,100.0,100.1,5\n"
            "2020-01-06 09:30:00,100.0,100.1,5\n"
        )
        result = parse_minute_bars(io.StringIO(text))
        assert len(result.days) == 1
        assert len(result.days[0].bars) == 1
        assert result.row_errors == []

    def test_bad_header_is_fatal(self):
        with pytest.raises(DataError):
            parse_minute_bars(io.StringIO("time,bid,ask\n1,2,3\n"))

    def test_schema_mapping(self):
        text = "ts,b,a,v\n2020-01-06 09:30:00,1.0,2.0,3\n"
        schema = ColumnMap(timestamp="ts", bid_close="b", ask_close="a", volume="v")
        result = parse_minute_bars(io.StringIO(text), schema)
        assert result.days[0].bars[0].volume == 3.0


class TestFilter:
    def test_incomplete_days_rejected_and_logged(self):
        rows = [(date(2020, 1, 6 + i), range(390)) for i in range(8)]
        rows.append((date(2020, 1, 20), range(389)))          # one minute short
        rows.append((date(2020, 1, 21), list(range(200)) + list(range(201, 390))))
        parsed = parse_minute_bars(io.StringIO(make_csv(rows)))
        kept, rejected = filter_complete_days(parsed.days)
        assert len(kept) == 8
        assert len(rejected) == 2
        assert {r.date for r in rejected} == {date(2020, 1, 20), date(2020, 1, 21)}

    def test_zero_volume_minute_is_still_present(self):
        day = date(2020, 1, 6)
        bid = np.full(390, 100.0)
        ask = np.full(390, 100.02)
        vol = np.ones(390)
        vol[17] = 0.0
        kept, rejected = filter_complete_days([TradingDay.from_arrays(day, bid, ask, vol)])
        assert len(kept) == 1 and not rejected

    def test_empty_input(self):
        kept, rejected = filter_complete_days([])
        assert kept == [] and rejected == []


class TestDerive:
    def test_small_example(self):
        day = TradingDay.from_arrays(
            date(2020, 1, 6),
            np.concatenate([[10.0, 10.0], np.full(388, 10.0)]),
            np.concatenate([[12.0, 14.0], np.full(388, 12.0)]),
            np.zeros(390),
        )
        series = derive_series(day)
        assert series.mid[0] == 11.0 and series.mid[1] == 12.0
        assert series.spread[0] == 2.0 and series.spread[1] == 4.0

    def test_zero_spread(self):
        day = TradingDay.from_arrays(date(2020, 1, 6), np.full(390, 50.0),
                                     np.full(390, 50.0), np.ones(390))
        assert np.all(derive_series(day).spread == 0.0)

    def test_spread_matches_direct_recomputation(self, rng):
        bid = rng.uniform(10, 500, 390)
        spread = rng.uniform(0, 0.5, 390)
        day = TradingDay.from_arrays(date(2020, 1, 6), bid, bid + spread, rng.integers(0, 99, 390))
        series = derive_series(day)
        expect = np.array([b.ask_close - b.bid_close for b in day.bars])
        assert np.array_equal(series.spread, expect)

    def test_recombination_recovers_quotes_to_one_ulp(self, rng):
        # (b+a)/2 +- (a-b)/2 rounds twice, so demand 1-ulp agreement rather
        # than bitwise equality.
        bid = rng.uniform(10, 500, 390)
        ask = bid + rng.uniform(0, 0.5, 390)
        day = TradingDay.from_arrays(date(2020, 1, 6), bid, ask, np.ones(390))
        series = derive_series(day)
        re_bid = series.mid - series.spread / 2
        re_ask = series.mid + series.spread / 2
        np.testing.assert_allclose(re_bid, bid, rtol=3e-16, atol=0)
        np.testing.assert_allclose(re_ask, ask, rtol=3e-16, atol=0)


class TestRoundtrip:
    def test_write_then_parse_is_lossless(self, tmp_path, reference_days):
        path = tmp_path / "days.csv"
        write_minute_bars(path, reference_days[:5])
        parsed = parse_minute_bars(path)
        kept, rejected = filter_complete_days(parsed.days)
        assert not rejected and len(kept) == 5
        for orig, back in zip(reference_days, kept):
            for a, b in zip(orig.bars, back.bars):
                assert (a.timestamp, a.bid_close, a.ask_close, a.volume) == (
                    b.timestamp, b.bid_close, b.ask_close, b.volume)

    def test_rejection_log_format(self, tmp_path):
        from wavediff.ingest import Rejection
        path = tmp_path / "rej.csv"
        write_rejections(path, [Rejection(date(2020, 1, 6), "385 of 390 minutes present")])
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "date,reason"
        assert lines[1].startswith("2020-01-06,")


class TestInvariants:
    def test_every_retained_day_is_valid(self, reference_days):
        for day in reference_days:
            day.check()
            for bar in day.bars:
                assert bar.ask_close >= bar.bid_close

    def test_bar_validation_rejects_bad_values(self):
        ts = datetime(2020, 1, 6, 9, 30)
        with pytest.raises(DataError):
            MinuteBar(ts, -1.0, 1.0, 0.0).check()
        with pytest.raises(DataError):
            MinuteBar(ts, 1.0, 1.0, -5.0).check()
        with pytest.raises(DataError):
            MinuteBar(ts, 1.0, float("nan"), 0.0).check()
