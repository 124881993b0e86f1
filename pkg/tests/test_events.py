import json

import pytest

from rollupbench import events as ev


def test_line_format_is_fixed():
    r = ev.EventRecord(ev.INCLUDED, 1.5, tx_id="0xab", miniblock=3)
    assert r.to_line() == '{"kind": "included", "t": 1.500000, "miniblock": 3, "tx_id": "0xab"}'
    assert ev.EventRecord(ev.SEQUENCER_FAILED, 2.0).to_line() == \
        '{"kind": "sequencer_failed", "t": 2.000000}'


def test_record_validation():
    with pytest.raises(ev.UnknownEventKind):
        ev.EventRecord("mined", 0.0)
    with pytest.raises(ValueError):
        ev.EventRecord(ev.SENT, -1.0, tx_id="x")
    with pytest.raises(ValueError):
        ev.EventRecord(ev.INCLUDED, 1.0, tx_id="x")


def test_roundtrip_and_sorting(tmp_path):
    recs = [ev.EventRecord(ev.SENT, float(i % 7), tx_id=f"t{i}", payload={"instance": i % 5})
            for i in range(1000)]
    path = tmp_path / "log.jsonl"
    ev.write_event_log(path, recs)
    back = ev.parse_event_log(path)
    assert len(back) == 1000
    assert [r.t for r in back] == sorted(r.t for r in recs)
    # stable: equal t keeps file order
    zeros = [r.tx_id for r in back if r.t == 0.0]
    assert zeros == [f"t{i}" for i in range(0, 1000, 7)]


def test_truncated_line_reports_line_number(tmp_path):
    path = tmp_path / "bad.jsonl"
    good = ev.EventRecord(ev.SENT, 0.0, tx_id="a").to_line()
    path.write_text(good + "\n" + good[:-5] + "\n")
    with pytest.raises(ev.MalformedLine) as info:
        ev.parse_event_log(path)
    assert info.value.line_no == 2


@pytest.mark.parametrize("line,exc", [
    ('{"kind": "bogus", "t": 1}', ev.UnknownEventKind),
    ('{"t": 1}', ev.MalformedLine),
    ('{"kind": "sent", "t": 1, "tx_id": "a", "extra": 1}', ev.MalformedLine),
    ('{"kind": "included", "t": 1, "tx_id": "a"}', ev.MalformedLine),
    ('[1, 2]', ev.MalformedLine),
])
def test_strict_parse(line, exc):
    with pytest.raises(exc):
        ev.parse_event_line(line, 1)


def test_blank_lines_skipped(tmp_path):
    path = tmp_path / "log.jsonl"
    path.write_text("\n" + json.dumps({"kind": "sent", "t": 0.25, "tx_id": "a"}) + "\n\n")
    assert len(ev.parse_event_log(path)) == 1
