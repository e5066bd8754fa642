import json
from datetime import timedelta

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from windgp.errors import SchemaMismatch
from windgp.scada import (
    Category,
    FilterAudit,
    ScadaRecord,
    StatusEvent,
    filter_operational,
    parse_events,
    parse_scada,
    parse_timestamp,
)

DAY = 86400
T0 = parse_timestamp("2016-01-03 00:00")


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


SCHEMA = {"timestamp": "time", "wind_speed": "wind", "active_power": "power"}


def test_parse_single_row(tmp_path):
    p = _write(tmp_path, "s.csv", "time,wind,power\n2016-01-03 00:00, 7.2, 812.5\n")
    res = parse_scada(p, SCHEMA)
    assert res.records == [ScadaRecord(T0, 7.2, 812.5)]
    assert res.dropped_malformed == 0


def test_parse_drops_malformed(tmp_path):
    text = ("time,wind,power\n"
            "2016-01-03 00:00,7.2,\n"        # empty power
            "not a date,7.0,100\n"
            "2016-01-03 00:20,abc,100\n"
            "2016-01-03 00:30,6.0,500\n")
    res = parse_scada(_write(tmp_path, "s.csv", text), SCHEMA)
    assert len(res.records) == 1 and res.dropped_malformed == 3


def test_parse_tab_delimited_and_iso(tmp_path):
    text = "time\twind\tpower\n2016-01-03T00:10:00Z\t5\t300\n2016-01-03T00:00:00+00:00\t4\t200\n"
    res = parse_scada(_write(tmp_path, "s.tsv", text), SCHEMA)
    # row order preserved
    assert [r.timestamp for r in res.records] == [T0 + 600, T0]


def test_parse_skips_preamble(tmp_path):
    text = ("# Turbine export, produced by some system\n# Timezone: UTC\n\n"
            "# Date and time,Wind speed (m/s),Power (kW)\n2016-01-03 00:00,7.2,812.5\n")
    res = parse_scada(_write(tmp_path, "k.csv", text))
    assert res.records == [ScadaRecord(T0, 7.2, 812.5)]


def test_parse_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        parse_scada(tmp_path / "missing.csv", SCHEMA)
    p = _write(tmp_path, "s.csv", "time,wind\n2016-01-03 00:00,7\n")
    with pytest.raises(SchemaMismatch) as exc:
        parse_scada(p, SCHEMA)
    assert exc.value.column == "power"


def test_parse_many_rows_preserves_order(tmp_path):
    n = 20000
    lines = ["time,wind,power"] + [
        f"2016-01-03T00:00:00+00:00,{i % 20},{i}" for i in range(n)]
    res = parse_scada(_write(tmp_path, "big.csv", "\n".join(lines)), SCHEMA)
    assert len(res.records) == n
    assert [r.active_power for r in res.records[:5]] == [0, 1, 2, 3, 4]


EVENTS = {"start": "start", "end": "end", "labels": ("status",)}


def test_parse_events(tmp_path):
    text = ("start,end,status\n"
            "2016-01-03 02:00,2016-01-03 03:00,Grid curtailment\n"
            "2016-01-03 00:00,2016-01-03 01:00,Stop\n"
            "2016-01-03 00:30,2016-01-03 01:30,Warning\n")
    ev = parse_events(_write(tmp_path, "e.csv", text), None, EVENTS)
    assert [e.category for e in ev] == [Category.STOP, Category.WARNING, Category.OTHER]
    assert ev[0] == StatusEvent(T0, T0 + 3600, Category.STOP, "Stop")
    # overlapping events both retained
    assert ev[1].start < ev[0].end


def test_parse_events_custom_map(tmp_path):
    text = "start,end,status\n2016-01-03 00:00,2016-01-03 01:00,Grid curtailment\n"
    ev = parse_events(_write(tmp_path, "e.csv", text), {"Grid curtailment": "Stop"}, EVENTS)
    assert ev[0].category is Category.STOP


def test_parse_events_schema_mismatch(tmp_path):
    with pytest.raises(SchemaMismatch):
        parse_events(_write(tmp_path, "e.csv", "begin,end,status\n"), None, EVENTS)
    with pytest.raises(FileNotFoundError):
        parse_events(tmp_path / "nope.csv")


def _records(times):
    return [ScadaRecord(int(t), 5.0, 100.0) for t in times]


def test_filter_rule_a_standby():
    recs = _records([T0, T0 + 600, T0 + 1200])
    ev = [StatusEvent(T0 + 600, T0 + 1200, Category.STANDBY)]
    kept, audit = filter_operational(recs, ev)
    # half-open: the record at the event end is kept
    assert [r.timestamp for r in kept] == [T0, T0 + 1200]
    assert audit.removed_by_event == 1 and audit.removed_pre_outage == 0


def test_filter_rule_b_pre_outage():
    outage = T0 + 10 * DAY
    recs = _records([outage - 8 * DAY, outage - 3 * DAY, outage, outage + 600])
    kept, audit = filter_operational(recs, [StatusEvent(outage, outage + 3600,
                                                        Category.FORCED_OUTAGE)])
    assert [r.timestamp for r in kept] == [outage - 8 * DAY, outage, outage + 600]
    assert audit.removed_pre_outage == 1


def test_filter_keeps_unrelated_records():
    recs = _records([T0])
    kept, audit = filter_operational(recs, [StatusEvent(T0 + DAY, T0 + 2 * DAY, Category.STOP),
                                            StatusEvent(T0 - DAY, T0, Category.NORMAL)])
    assert kept == recs and audit.kept_rows == 1


def test_double_count_goes_to_rule_a():
    outage = T0 + DAY
    recs = _records([T0])
    ev = [StatusEvent(T0, T0 + 600, Category.WARNING),
          StatusEvent(outage, outage + 600, Category.FORCED_OUTAGE)]
    _, audit = filter_operational(recs, ev)
    assert (audit.removed_by_event, audit.removed_pre_outage) == (1, 0)


def test_filter_empty_and_window_override():
    kept, audit = filter_operational([], [])
    assert kept == [] and audit.balanced()
    outage = T0 + DAY
    kept, _ = filter_operational(_records([outage - 7200]), [
        StatusEvent(outage, outage, Category.FORCED_OUTAGE)], pre_outage_window=timedelta(hours=1))
    assert len(kept) == 1


def test_unsorted_records_rejected():
    with pytest.raises(ValueError):
        filter_operational(_records([T0 + 600, T0]), [])


def test_audit_json_round_trip():
    a = FilterAudit(10, 6, 3, 1, 2)
    d = json.loads(a.to_json())
    assert list(d) == ["input_rows", "kept_rows", "removed_by_event", "removed_pre_outage",
                       "dropped_malformed"]
    assert FilterAudit.from_json(a.to_json()) == a


event_st = st.builds(
    lambda s, dur, cat: StatusEvent(T0 + 600 * s, T0 + 600 * (s + dur), cat),
    st.integers(-2000, 3000), st.integers(0, 50),
    st.sampled_from(list(Category)))


@given(st.lists(st.integers(0, 3000), max_size=200, unique=True), st.lists(event_st, max_size=15))
def test_filter_properties(idx, events):
    recs = _records(T0 + 600 * np.sort(np.array(idx, dtype=np.int64)))
    kept, audit = filter_operational(recs, events)
    assert audit.balanced()
    assert set(kept) <= set(recs)
    assert [r.timestamp for r in kept] == sorted(r.timestamp for r in kept)
    again, audit2 = filter_operational(kept, events)
    assert again == kept and audit2.kept_rows == audit2.input_rows
