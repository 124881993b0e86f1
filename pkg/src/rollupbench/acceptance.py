"""Acceptance checks shared by ``rollupbench repro`` and the test suite.

Each check returns a :class:`CriterionResult`; none of them raise on a miss.
Thresholds come from the bundled ``data/thresholds.json`` unless a file is given.
"""
from __future__ import annotations

import json
import random
import tempfile
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Callable, Dict, List, Optional

from . import events as ev
from . import metrics
from .amm import (ROUTER, AmmError, AmmState, StorageWrite, SwapTx, approve, create_pool,
                  execute_swap, get_amount_out)
from .calibrate import sweep_completion_times
from .merkle import StateTree, compute_root_full
from .pipeline import FinalityIndex, FinalityStatus, GROUP_A, WAITING_FOR_TREE, finality_status
from .sequencer import SequencerConfig
from .simulation import SimulationResult, paper_repro, run_scenario, saturating_scenario


def load_thresholds(path: Optional[Path] = None) -> Dict:
    if path is None:
        text = resources.files("rollupbench").joinpath("data/thresholds.json").read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return json.loads(text)


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.number:>2}  {self.name}: {self.detail}"


class Context:
    """Lazily computed simulation runs shared between checks."""

    def __init__(self, thresholds: Optional[Dict] = None, seed: int = 42,
                 time_scale: Optional[float] = None):
        self.th = thresholds if thresholds is not None else load_thresholds()
        self.seed = seed
        self.time_scale = time_scale

    def _run(self, cfg) -> SimulationResult:
        cfg.seed = self.seed
        return run_scenario(cfg)

    @cached_property
    def repro(self) -> SimulationResult:
        return self._run(paper_repro(self.time_scale))

    @cached_property
    def repro_unscaled(self) -> SimulationResult:
        return self._run(paper_repro(1.0))


# -- individual criteria ------------------------------------------------------------

def synthetic_log(n: int, duration: float) -> List[ev.EventRecord]:
    """n sends at t=0 and n inclusions spread evenly over (0, duration]."""
    out = []
    for i in range(n):
        tx = f"0x{i:016x}"
        out.append(ev.EventRecord(ev.SENT, 0.0, tx_id=tx))
        out.append(ev.EventRecord(ev.INCLUDED, duration * (i + 1) / n, tx_id=tx, miniblock=1))
    return out


def check_tps_formula(ctx: Context) -> CriterionResult:
    got, ok = [], True
    for n, duration, expected in ctx.th["tps_formula_cases"]:
        value = metrics.cumulative_tps(synthetic_log(n, duration), duration)
        got.append(f"{value:.2f}")
        ok &= value == expected
    return CriterionResult(1, "TPS formula", ok, "cumulative_tps = " + ", ".join(got))


def check_repro_throughput(ctx: Context) -> CriterionResult:
    records = ctx.repro.events
    done = metrics.completion_time(records)
    tps = metrics.final_tps(records)
    ref, rel = ctx.th["repro_tps"], ctx.th["repro_tps_rel_tolerance"]
    n_sent = sum(r.kind == ev.SENT for r in records)
    n_inc = sum(r.kind == ev.INCLUDED for r in records)
    ok = (n_inc == n_sent and done <= ctx.th["repro_max_completion_s"]
          and abs(tps - ref) <= ref * rel + 1e-9)
    return CriterionResult(2, "paper-repro throughput", ok,
                           f"{n_inc}/{n_sent} included by t={done:.3f}s, final TPS {tps:.2f} "
                           f"(target {ref} +/-{rel:.0%})")


def check_contention_fit(ctx: Context) -> CriterionResult:
    seq = SequencerConfig()
    times = sweep_completion_times(seq.base_service_rate, seq.contention_alpha, ctx.seed)
    tol = ctx.th["completion_tolerance_s"]
    rows, ok = [], True
    for (n, ref), got in zip(ctx.th["completion_times_s"], times):
        hit = abs(got - ref) <= tol + 1e-9
        ok &= hit
        rows.append(f"{n}:{got:.2f}/{ref:g}{'' if hit else '!'}")
    return CriterionResult(3, "contention calibration", ok,
                           f"base={seq.base_service_rate:g} alpha={seq.contention_alpha:g}; "
                           f"completion got/ref " + " ".join(rows))


def check_peak_tps(ctx: Context) -> CriterionResult:
    t, value = metrics.peak(metrics.tps_series(ctx.repro.events, ctx.th["tps_bin_s"]))
    lo, hi = ctx.th["peak_window_s"]
    ok = lo <= t <= hi and value >= ctx.th["peak_min_tps"]
    return CriterionResult(4, "peak TPS", ok,
                           f"cumulative per-bin TPS peaks at {value:.1f} at t={t:.1f}s")


def finalize_windows(records: List[ev.EventRecord]) -> List[tuple]:
    t0 = metrics.origin(records)
    return [(r.payload["finalize_pause"][0] - t0, r.payload["finalize_pause"][1] - t0)
            for r in records if r.kind == ev.BATCH_SEALED and "finalize_pause" in r.payload]


def utilization_dips_in_pause(records: List[ev.EventRecord], cap: int) -> List[int]:
    """Blocks less full than their predecessor whose fill interval overlaps a FINALIZE pause."""
    util = metrics.block_utilization(records, cap)
    windows = finalize_windows(records)
    hits = []
    for prev, cur in zip(util, util[1:]):
        if cur.txs >= prev.txs:
            continue
        if any(start < cur.sealed_at and end > prev.sealed_at for start, end in windows):
            hits.append(cur.block)
    return hits


def longest_full_run(percents: List[float], threshold: float) -> int:
    best = run = 0
    for p in percents:
        run = run + 1 if p >= threshold else 0
        best = max(best, run)
    return best


def check_utilization(ctx: Context) -> CriterionResult:
    cap = ctx.th["block_capacity"]
    records = ctx.repro.events
    util = metrics.block_utilization(records, cap)
    warmup = ctx.repro.config.sequencer.warmup
    after = [u for u in util if u.sealed_at >= warmup - 1e-9]
    first_under = bool(after) and after[0].percent < 100.0
    mid = [u.percent for u in util[1:-1]]
    run = longest_full_run(mid, ctx.th["full_block_percent"])
    dips = utilization_dips_in_pause(records, cap)
    over = [u.block for u in util if u.txs > cap]
    need = ctx.th["min_consecutive_full_blocks"]
    ok = not over and first_under and run >= need and bool(dips)
    return CriterionResult(5, "utilization dynamics", ok,
                           f"over-capacity {over}; first block "
                           f"{after[0].percent if after else float('nan'):.1f}%; "
                           f"longest run >= {ctx.th['full_block_percent']:g}%: {run} (need {need}); "
                           f"dips in FINALIZE at blocks {dips}")


def check_latency(ctx: Context) -> CriterionResult:
    stats = metrics.latency_distribution(ctx.repro.events)
    lo, hi = ctx.th["median_latency_band_s"]
    return CriterionResult(6, "median latency", lo <= stats.median <= hi,
                           f"median {stats.median:.3f}s (p90 {stats.p90:.3f}s, max {stats.max:.3f}s)")


_ORDER = {FinalityStatus.PENDING: 0, FinalityStatus.SOFT_FINAL: 1, FinalityStatus.HARD_FINAL: 2}


def check_finality(ctx: Context) -> CriterionResult:
    records = ctx.repro_unscaled.events
    idx = FinalityIndex(records)
    lo, hi = ctx.th["hard_finality_band_s"]
    bad_order, out_of_band, spans = [], [], []
    for tx_id, sent in idx.sent.items():
        inc, hard = idx.included.get(tx_id), idx.hard_final_at(tx_id)
        if inc is None or hard is None:
            bad_order.append(tx_id)
            continue
        probes = [sent, (sent + inc) / 2, inc, (inc + hard) / 2, hard]
        seq = [_ORDER[finality_status(tx_id, t, idx)] for t in probes]
        if seq != sorted(seq) or seq[-1] != 2 or 1 not in seq:
            bad_order.append(tx_id)
        span = hard - sent
        spans.append(span)
        if not lo <= span <= hi:
            out_of_band.append(tx_id)
    ok = bool(spans) and not bad_order and not out_of_band
    detail = (f"{len(spans)} txs; executed_at - send_time in [{min(spans):.1f}, {max(spans):.1f}]s "
              f"at time_scale 1; {len(bad_order)} out of order" if spans else "no finalized txs")
    return CriterionResult(7, "finality bifurcation", ok, detail)


def check_stages(ctx: Context) -> CriterionResult:
    batches = metrics.batches_from_records(ctx.repro.events)
    if not batches:
        return CriterionResult(8, "stage breakdown", False, "no sealed batches")
    bd = metrics.stage_breakdown(batches)
    largest_ok = all(bd.largest_stage(b) == WAITING_FOR_TREE for b in batches)
    others = max(bd.max[n] for n in GROUP_A if n in bd.max)
    peak_tree = bd.max[WAITING_FOR_TREE]
    overlap_ok = all(b.wall < b.stage_sum for b in batches)
    ok = (largest_ok and others < ctx.th["max_other_stage_s"]
          and abs(peak_tree - ctx.th["tree_stage_peak_s"]) < 1e-6 and overlap_ok)
    b0 = batches[0]
    return CriterionResult(8, "stage breakdown", ok,
                           f"waiting_for_tree largest in all {len(batches)} batches: {largest_ok}; "
                           f"max other stage {others:.2f}s; tree peak {peak_tree:.2f}s; "
                           f"wall {b0.wall:.2f}s < sum {b0.stage_sum:.2f}s: {overlap_ok}")


def check_ratio(ctx: Context) -> CriterionResult:
    ratio = metrics.miniblock_vs_batch_ratio(ctx.repro.events)
    need = ctx.th["min_miniblock_batch_ratio"]
    return CriterionResult(9, "miniblock/batch ratio", ratio > need,
                           f"mean batch txs / mean miniblock txs = {ratio:.2f} (> {need:g})")


def oracle_amount_out(amount_in: int, reserve_in: int, reserve_out: int) -> int:
    fee_in = Fraction(amount_in) * Fraction(997, 1000)
    return int(fee_in * reserve_out / (reserve_in + fee_in))


def amm_property_run(samples: int, seed: int) -> Dict[str, int]:
    rng = random.Random(seed)
    mismatches = 0
    for _ in range(samples):
        r_in = rng.randrange(1, 2**64)
        r_out = rng.randrange(1, 2**64)
        a_in = rng.randrange(1, 2**rng.randrange(1, 65))
        if get_amount_out(a_in, r_in, r_out) != oracle_amount_out(a_in, r_in, r_out):
            mismatches += 1

    state = AmmState()
    state.open_account("lp")
    tokens = ("TOKA", "TOKB")
    for t in tokens:
        state.mint("lp", t, 10**24)
    create_pool(state, "lp", *tokens, 10**24, 10**24)
    traders = [f"trader{i}" for i in range(8)]
    for a in traders:
        state.open_account(a)
        for t in tokens:
            state.mint(a, t, 10**22)
            approve(state, a, ROUTER, t, 2**128 - 1)
    supply = {t: state.token_supply(t) for t in tokens}
    nonces = dict.fromkeys(traders, 0)
    pool = state.pool(*tokens)
    conservation = k_drops = reverts = 0
    for i in range(samples):
        sender = rng.choice(traders)
        t_in, t_out = tokens if rng.random() < 0.5 else tokens[::-1]
        amount = rng.randrange(1, 10**rng.randrange(1, 23))
        tx = SwapTx(f"p{i}", sender, t_in, t_out, amount, 0, 1e9, nonces[sender])
        k_before = pool.k
        try:
            execute_swap(state, tx, 0.0)
            nonces[sender] += 1
        except AmmError:
            reverts += 1
        if pool.k < k_before:
            k_drops += 1
        if any(state.token_supply(t) != supply[t] for t in tokens):
            conservation += 1
    return {"oracle_mismatches": mismatches, "conservation_breaks": conservation,
            "k_drops": k_drops, "reverts": reverts}


def check_amm(ctx: Context) -> CriterionResult:
    n = ctx.th["amm_samples"]
    res = amm_property_run(n, ctx.seed)
    ok = not (res["oracle_mismatches"] or res["conservation_breaks"] or res["k_drops"])
    return CriterionResult(10, "AMM properties", ok,
                           f"{n} oracle triples, {n} swaps: " +
                           ", ".join(f"{k} {v}" for k, v in res.items()))


def merkle_property_run(batches: int, seed: int, depth: int = 20,
                        slots: int = 64) -> Dict[str, int]:
    rng = random.Random(seed)
    tree = StateTree(depth)
    shadow: Dict[str, int] = {}
    mismatches = order_breaks = 0
    for _ in range(batches):
        writes = {f"slot{rng.randrange(slots)}": rng.randrange(2**64)
                  for _ in range(rng.randrange(1, 12))}
        batch = [StorageWrite(s, v) for s, v in writes.items()]
        tree.apply_writes(batch)
        shadow.update(writes)
        if tree.root != compute_root_full(shadow, depth):
            mismatches += 1
    # same final state, reached by writing leaves in a shuffled order
    items = list(shadow.items())
    for _ in range(5):
        rng.shuffle(items)
        other = StateTree(depth)
        for s, v in items:
            other.apply_writes([StorageWrite(s, v)])
        if other.root != tree.root:
            order_breaks += 1
    return {"root_mismatches": mismatches, "order_breaks": order_breaks}


def check_merkle(ctx: Context) -> CriterionResult:
    n = ctx.th["merkle_batches"]
    res = merkle_property_run(n, ctx.seed)
    ok = not any(res.values())
    return CriterionResult(11, "Merkle equivalence", ok,
                           f"{n} write batches: " + ", ".join(f"{k} {v}" for k, v in res.items()))


def run_to_bytes(seed: int) -> Dict[str, bytes]:
    """Run paper-repro and return the event log and every report file as bytes."""
    cfg = paper_repro()
    cfg.seed = seed
    result = run_scenario(cfg)
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        ev.write_event_log(tmp / "events.jsonl", result.events)
        metrics.write_report(ev.parse_event_log(tmp / "events.jsonl"), tmp / "report")
        return {str(p.relative_to(tmp)): p.read_bytes() for p in sorted(tmp.rglob("*")) if p.is_file()}


def check_determinism(ctx: Context) -> CriterionResult:
    a, b = run_to_bytes(ctx.seed), run_to_bytes(ctx.seed)
    diff = sorted(k for k in set(a) | set(b) if a.get(k) != b.get(k))
    return CriterionResult(12, "determinism", not diff and len(a) == 5,
                           f"{len(a)} files compared, differing: {diff or 'none'}")


def check_failure(ctx: Context) -> CriterionResult:
    sat = saturating_scenario(ctx.th["failure_instances"])
    sat.seed = ctx.seed
    tripped = run_scenario(sat).failed_at
    repro_failed = ctx.repro.failed_at
    ok = tripped is not None and repro_failed is None
    return CriterionResult(13, "failure model", ok,
                           f"{ctx.th['failure_instances']}-instance saturating run failed at "
                           f"{tripped if tripped is None else round(tripped, 3)}; "
                           f"paper-repro failed: {repro_failed is not None}")


CHECKS: List[Callable[[Context], CriterionResult]] = [
    check_tps_formula, check_repro_throughput, check_contention_fit, check_peak_tps,
    check_utilization, check_latency, check_finality, check_stages, check_ratio,
    check_amm, check_merkle, check_determinism, check_failure,
]


def run_all(ctx: Optional[Context] = None) -> List[CriterionResult]:
    ctx = ctx or Context()
    return [check(ctx) for check in CHECKS]
