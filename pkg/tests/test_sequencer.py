import math

import pytest

from rollupbench import events as ev
from rollupbench.amm import AmmState, SwapTx, create_pool
from rollupbench.sequencer import (MempoolFull, NothingToSeal, Phase, Sequencer, SequencerConfig,
                                   SequencerFailed, effective_service_rate)
from rollupbench.workload import ConfigInvalid, derive_accounts, fund_and_approve


def world(n_accounts):
    s = AmmState()
    s.open_account("lp")
    s.mint("lp", "TOKA", 10**24)
    s.mint("lp", "TOKB", 10**24)
    create_pool(s, "lp", "TOKA", "TOKB", 10**24, 10**24)
    accts = derive_accounts(3, n_accounts)
    for a in accts:
        s.open_account(a.address)
    fund_and_approve(s, accts, {"TOKA": 10**21, "TOKB": 10**21})
    return s, [a.address for a in accts]


def txs(addresses, **kw):
    return [SwapTx(f"tx{i}", a, "TOKA", "TOKB", 10**18, 0, 1e9, kw.get("nonce", 0))
            for i, a in enumerate(addresses)]


def fast(**kw):
    base = dict(warmup=0.0, base_service_rate=1000.0, contention_alpha=0.0)
    base.update(kw)
    return SequencerConfig(**base)


def sizes(seq):
    return [len(mb.txs) for mb in seq.miniblocks]


def test_service_rate_law():
    cfg = SequencerConfig(base_service_rate=300, contention_alpha=0.5)
    assert effective_service_rate(0, cfg) == effective_service_rate(2, cfg) == 300
    assert effective_service_rate(4, cfg) == pytest.approx(150)
    rates = [effective_service_rate(n, cfg) for n in range(10)]
    assert rates == sorted(rates, reverse=True)
    flat = SequencerConfig(base_service_rate=300, contention_alpha=0.0)
    assert {effective_service_rate(n, flat) for n in range(10)} == {300}


def test_650_at_once_seals_300_300_50():
    state, addrs = world(650)
    seq = Sequencer(fast(), state)
    for tx in txs(addrs):
        assert seq.submit(tx, 0.0).accepted
    seq.run_until_idle()
    assert sizes(seq) == [300, 300, 50]
    assert all(len(mb.txs) <= 300 for mb in seq.miniblocks)
    # the last block waits for the deadline, measured from the previous seal
    assert seq.miniblocks[2].sealed_at == pytest.approx(seq.miniblocks[1].sealed_at + 1.0)


def test_deadline_seal_with_partial_block():
    state, addrs = world(75)
    seq = Sequencer(fast(), state)
    for tx in txs(addrs):
        seq.submit(tx, 0.0)
    seq.run_until_idle()
    assert sizes(seq) == [75]
    assert seq.miniblocks[0].sealed_at == pytest.approx(1.0)


def test_no_empty_blocks():
    state, _ = world(1)
    seq = Sequencer(fast(), state)
    seq.step(10.0)
    assert seq.miniblocks == []
    with pytest.raises(NothingToSeal):
        seq.seal_miniblock(10.0)


def test_warmup_blocks_inclusion():
    state, addrs = world(10)
    seq = Sequencer(fast(warmup=2.0), state)
    for tx in txs(addrs):
        seq.submit(tx, 0.0)
    seq.step(1.999)
    assert not any(r.kind == ev.INCLUDED for r in seq.log)
    seq.run_until_idle()
    inc = [r.t for r in seq.log if r.kind == ev.INCLUDED]
    assert len(inc) == 10 and min(inc) >= 2.0


def test_mempool_backpressure():
    state, addrs = world(5)
    seq = Sequencer(fast(warmup=10.0, mempool_capacity=3), state)
    results = [seq.submit(tx, 0.0) for tx in txs(addrs)]
    assert [r.accepted for r in results] == [True, True, True, False, False]
    assert results[-1].reason == MempoolFull
    rejected = [r for r in seq.log if r.kind == ev.SENT and r.payload["status"] == "rejected"]
    assert len(rejected) == 2


def test_failure_trips_and_is_sticky():
    state, addrs = world(40)
    cfg = fast(warmup=5.0, mempool_capacity=30, failure_instances=6, failure_grace=1.0)
    seq = Sequencer(cfg, state)
    for i, tx in enumerate(txs(addrs)[:30]):
        seq.submit(tx, 0.0, instance=i % 6)
    assert seq.check_failure().failed is False
    seq.step(0.99)
    assert not seq.check_failure().failed
    seq.step(1.5)
    health = seq.check_failure()
    assert health.failed and health.at == pytest.approx(1.0)
    assert sum(r.kind == ev.SEQUENCER_FAILED for r in seq.log) == 1
    late = seq.submit(txs(addrs)[35], 2.0, instance=0)
    assert not late.accepted and late.reason == SequencerFailed
    seq.run_until_idle()
    assert seq.miniblocks == []


def test_five_instances_do_not_trip():
    state, addrs = world(40)
    cfg = fast(warmup=5.0, mempool_capacity=30, failure_instances=6)
    seq = Sequencer(cfg, state)
    for i, tx in enumerate(txs(addrs)[:30]):
        seq.submit(tx, 0.0, instance=i % 5)
    seq.run_until_idle()
    assert not seq.check_failure().failed
    assert sum(sizes(seq)) == 30


def test_failure_disabled_with_infinite_threshold():
    state, addrs = world(40)
    seq = Sequencer(fast(warmup=5.0, mempool_capacity=30, failure_instances=math.inf), state)
    for i, tx in enumerate(txs(addrs)[:30]):
        seq.submit(tx, 0.0, instance=i % 10)
    seq.run_until_idle()
    assert not seq.check_failure().failed


def test_finalize_pause_stops_execution_and_dips_next_block():
    state, addrs = world(20)
    calls = []

    def hook(mb, t):
        calls.append(t)
        return len(calls) == 1

    # 8 tx/s keeps every timestamp exact in binary
    seq = Sequencer(fast(base_service_rate=8.0, block_capacity=5, finalize_pause=0.5), state,
                    on_seal=hook)
    for tx in txs(addrs):
        seq.submit(tx, 0.0)
    seq.run_until_idle()
    start, end = seq.finalize_windows[0]
    assert (start, end) == (0.625, 1.125)
    inc = sorted({r.t for r in seq.log if r.kind == ev.INCLUDED})
    assert not any(start < t < end for t in inc)
    # the deadline keeps running through the pause, so the next block is short
    assert sizes(seq)[:3] == [5, 4, 5]
    assert seq.miniblocks[1].sealed_at == 1.625
    assert sum(sizes(seq)) == 20
    assert seq.phase is Phase.INGEST


def test_reverted_tx_is_not_included():
    state, addrs = world(2)
    seq = Sequencer(fast(), state)
    good, bad = txs(addrs)
    bad = SwapTx("bad", bad.sender, "TOKA", "TOKB", 10**18, 0, 1e9, 7)
    seq.submit(good, 0.0)
    seq.submit(bad, 0.0)
    seq.run_until_idle()
    assert seq.miniblocks[0].txs == ("tx0",)
    sealed = next(r for r in seq.log if r.kind == ev.MINIBLOCK_SEALED)
    assert sealed.payload["reverted"] == ["bad"]


def test_causality_and_no_duplicates():
    state, addrs = world(100)
    seq = Sequencer(fast(base_service_rate=50.0), state)
    for i, tx in enumerate(txs(addrs)):
        seq.submit(tx, i * 0.02, instance=i % 3)
    seq.run_until_idle()
    sent = {r.tx_id: r.t for r in seq.log if r.kind == ev.SENT}
    inc = [r for r in seq.log if r.kind == ev.INCLUDED]
    assert len(inc) == len({r.tx_id for r in inc}) == 100
    assert all(sent[r.tx_id] <= r.t for r in inc)
    seals = [mb.sealed_at for mb in seq.miniblocks]
    assert seals == sorted(seals)


def test_step_backwards_rejected():
    state, _ = world(1)
    seq = Sequencer(fast(), state)
    seq.step(2.0)
    with pytest.raises(ValueError):
        seq.step(1.0)


@pytest.mark.parametrize("kw", [{"block_capacity": 0}, {"base_service_rate": 0},
                                {"contention_alpha": -1}, {"mempool_capacity": 0}])
def test_invalid_config(kw):
    with pytest.raises(ConfigInvalid):
        SequencerConfig(**kw).validate()
