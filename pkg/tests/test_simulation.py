import json

import pytest

from rollupbench import events as ev
from rollupbench.simulation import (SEED_ENV, load_scenario, paper_repro, run_scenario,
                                    saturating_scenario, scenario_from_dict, scenario_to_dict,
                                    sweep_scenario)
from rollupbench.workload import ConfigInvalid


def kinds(records):
    out = {}
    for r in records:
        out[r.kind] = out.get(r.kind, 0) + 1
    return out


def test_paper_repro_counts(repro):
    k = kinds(repro.events)
    assert k[ev.SENT] == k[ev.INCLUDED] == 1000
    assert k[ev.BATCH_SEALED] == k[ev.COMMIT] == k[ev.PROVE] == k[ev.EXECUTE] == len(repro.batches)
    assert ev.SEQUENCER_FAILED not in k
    assert [r.t for r in repro.events] == sorted(r.t for r in repro.events)


def test_causality_chain(repro):
    sent = {r.tx_id: r.t for r in repro.events if r.kind == ev.SENT}
    included = {r.tx_id: (r.t, r.miniblock) for r in repro.events if r.kind == ev.INCLUDED}
    mb_batch = {mb: b.number for b in repro.batches for mb in b.miniblocks}
    by_number = {b.number: b for b in repro.batches}
    for tx, (t_inc, mb) in included.items():
        b = by_number[mb_batch[mb]]
        assert sent[tx] <= t_inc <= b.sealed_at <= b.committed_at <= b.proved_at <= b.executed_at


def test_every_miniblock_in_one_batch(repro):
    listed = [mb for b in repro.batches for mb in b.miniblocks]
    assert sorted(listed) == [mb.number for mb in repro.miniblocks]


def test_seed_changes_jitter_not_counts():
    a, b = paper_repro(), paper_repro()
    b.seed = 7
    ra, rb = run_scenario(a), run_scenario(b)
    assert kinds(ra.events) == kinds(rb.events)
    assert [r.t for r in ra.events if r.kind == ev.SENT] != [r.t for r in rb.events if r.kind == ev.SENT]


def test_finalize_pause_marked_on_batch(repro):
    sealed = [r for r in repro.events if r.kind == ev.BATCH_SEALED]
    marked = [r for r in sealed if "finalize_pause" in r.payload]
    assert len(marked) == len(repro.finalize_windows) >= 1
    start, end = marked[0].payload["finalize_pause"]
    assert end - start == pytest.approx(0.5)


def test_saturating_scenario_fails():
    res = run_scenario(saturating_scenario(6))
    assert res.failed
    k = kinds(res.events)
    assert k[ev.SEQUENCER_FAILED] == 1
    assert all(r.t <= res.failed_at for r in res.events if r.kind in (ev.COMMIT, ev.EXECUTE))


def test_five_instance_saturating_load_survives():
    assert not run_scenario(saturating_scenario(5)).failed


def test_sweep_scenarios_totals():
    for n in (1, 3, 5):
        res = run_scenario(sweep_scenario(n))
        assert kinds(res.events)[ev.INCLUDED] == 200 * n


def test_dotted_and_nested_keys():
    cfg = scenario_from_dict({"sequencer.warmup": 1.5, "generator": {"instances": 3},
                              "pipeline.time_scale": 1.0, "seed": 9})
    assert cfg.sequencer.warmup == 1.5
    assert cfg.generator.instances == 3
    assert cfg.pipeline.time_scale == 1.0
    cfg.validate()
    assert cfg.generator.seed == 9


@pytest.mark.parametrize("raw", [
    {"sequencer.bogus": 1}, {"nonsense": 1}, {"pools": [{"tokens": ["A"]}]},
    {"pools": [{"colour": "red"}]}, {"generator": 5},
])
def test_bad_config_keys(raw):
    with pytest.raises(ConfigInvalid):
        scenario_from_dict(raw).validate()


def test_load_scenario_file_and_seed_env(tmp_path, monkeypatch):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"seed": 3, "generator.instances": 2}))
    assert load_scenario(path).seed == 3
    monkeypatch.setenv(SEED_ENV, "11")
    assert load_scenario(path).seed == 11
    monkeypatch.setenv(SEED_ENV, "x")
    with pytest.raises(ConfigInvalid):
        load_scenario(path)


def test_load_scenario_rejects_bad_json(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text("{not json")
    with pytest.raises(ConfigInvalid):
        load_scenario(path)
    path.write_text("[]")
    with pytest.raises(ConfigInvalid):
        load_scenario(path)


def test_defaults_roundtrip():
    d = scenario_to_dict(paper_repro())
    assert d["generator"]["instances"] == 5
    assert d["sequencer"]["block_capacity"] == 300
    again = scenario_from_dict({k: v for k, v in d.items()})
    assert scenario_to_dict(again) == d


def test_dip_detector_sees_pause_during_backlog():
    from rollupbench.acceptance import utilization_dips_in_pause
    cfg = paper_repro()
    cfg.pipeline.miniblocks_per_batch = 2
    res = run_scenario(cfg)
    sizes = [len(mb.txs) for mb in res.miniblocks]
    dips = utilization_dips_in_pause(res.events, 300)
    # batch 1 seals on block 2 while the burst backlog is still draining
    assert sizes[1] == 300 and sizes[2] < 300
    assert 3 in dips
