"""Throughput, latency, utilization and stage metrics, computed from the event log only.

Times are normalized to seconds after the earliest ``sent`` event.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from . import events as ev
from .pipeline import GROUP_A, STAGE_NAMES, WAITING_FOR_TREE, FinalityIndex

_EPS = 1e-9


class EmptyLog(ValueError):
    pass


class OrphanInclude(ValueError):
    pass


def round_half_up(x: float, places: int = 2) -> float:
    q = Decimal(1).scaleb(-places)
    return float(Decimal(repr(x)).quantize(q, rounding=ROUND_HALF_UP))


def origin(records: Sequence[ev.EventRecord]) -> float:
    sent = [r.t for r in records if r.kind == ev.SENT]
    if sent:
        return min(sent)
    return min((r.t for r in records), default=0.0)


def _bin_index(t: float, width: float) -> int:
    # round first so 0.3 / 0.1 lands in bin 3, not 2
    return math.floor(round(t / width, 9))


def included_times(records: Sequence[ev.EventRecord]) -> List[float]:
    t0 = origin(records)
    return sorted(r.t - t0 for r in records if r.kind == ev.INCLUDED)


def cumulative_tps(records: Sequence[ev.EventRecord], t: float) -> float:
    """Included transactions up to ``t`` divided by ``t``, rounded half-up to 2 places."""
    if not records:
        raise EmptyLog("no records")
    if t <= 0:
        raise ValueError("t must be > 0")
    count = sum(1 for x in included_times(records) if x <= t + _EPS)
    return round_half_up(count / t)


def completion_time(records: Sequence[ev.EventRecord]) -> float:
    inc = included_times(records)
    if not inc:
        raise EmptyLog("no included transactions")
    return inc[-1]


def final_tps(records: Sequence[ev.EventRecord]) -> float:
    return cumulative_tps(records, completion_time(records))


@dataclass
class Series:
    bin: float
    sent: List[int]
    included: List[int]

    @property
    def bin_starts(self) -> List[float]:
        return [round(i * self.bin, 9) for i in range(len(self.sent))]


def sent_vs_included_series(records: Sequence[ev.EventRecord], bin: float = 0.1) -> Series:
    """Cumulative sent and included counts per ``bin``-second interval."""
    if bin <= 0:
        raise ValueError("bin must be > 0")
    # bins stay on a fixed grid: the origin snaps down to a bin boundary
    t0 = _bin_index(origin(records), bin) * bin if records else 0.0
    sent = [_bin_index(r.t - t0, bin) for r in records if r.kind == ev.SENT]
    inc = [_bin_index(r.t - t0, bin) for r in records if r.kind == ev.INCLUDED]
    if not sent and not inc:
        return Series(bin, [], [])
    n = max(sent + inc) + 1
    sent_counts, inc_counts = [0] * n, [0] * n
    for i in sent:
        sent_counts[i] += 1
    for i in inc:
        inc_counts[i] += 1
    return Series(bin, _cumsum(sent_counts), _cumsum(inc_counts))


def _cumsum(xs: List[int]) -> List[int]:
    out, acc = [], 0
    for x in xs:
        acc += x
        out.append(acc)
    return out


def tps_series(records: Sequence[ev.EventRecord], bin: float = 0.1) -> List[Tuple[float, float]]:
    """Cumulative TPS sampled at the end of every bin: (bin_end, rate)."""
    s = sent_vs_included_series(records, bin)
    return [(round((i + 1) * bin, 9), c / ((i + 1) * bin)) for i, c in enumerate(s.included)]


def instantaneous_tps_series(records: Sequence[ev.EventRecord],
                             bin: float = 1.0) -> List[Tuple[float, float]]:
    """Inclusions inside each bin divided by the bin width: (bin_start, rate)."""
    s = sent_vs_included_series(records, bin)
    prev, out = 0, []
    for start, c in zip(s.bin_starts, s.included):
        out.append((start, (c - prev) / bin))
        prev = c
    return out


def peak(series: Sequence[Tuple[float, float]]) -> Tuple[float, float]:
    """First (time, value) at the series maximum."""
    if not series:
        raise EmptyLog("empty series")
    best = series[0]
    for point in series[1:]:
        if point[1] > best[1]:
            best = point
    return best


@dataclass
class LatencyStats:
    count: int
    median: float
    p90: float
    max: float


def latencies(records: Sequence[ev.EventRecord]) -> Dict[str, float]:
    sent = {r.tx_id: r.t for r in records if r.kind == ev.SENT}
    out = {}
    for r in records:
        if r.kind != ev.INCLUDED:
            continue
        if r.tx_id not in sent:
            raise OrphanInclude(f"{r.tx_id} included without a sent event")
        lat = r.t - sent[r.tx_id]
        if lat < 0:
            raise OrphanInclude(f"{r.tx_id} included {-lat:.6f}s before it was sent")
        out[r.tx_id] = lat
    return out


def latency_distribution(records: Sequence[ev.EventRecord]) -> LatencyStats:
    """Inclusion latency stats; median is the lower median, p90 is nearest-rank."""
    lat = sorted(latencies(records).values())
    if not lat:
        raise EmptyLog("no included transactions")
    n = len(lat)
    return LatencyStats(n, lat[(n - 1) // 2], lat[math.ceil(0.9 * n) - 1], lat[-1])


@dataclass
class BlockUtilization:
    block: int
    sealed_at: float
    txs: int
    percent: float


def block_utilization(records: Sequence[ev.EventRecord], cap: int = 300) -> List[BlockUtilization]:
    if cap < 1:
        raise ValueError("cap must be >= 1")
    t0 = origin(records)
    rows = []
    for r in records:
        if r.kind == ev.MINIBLOCK_SEALED:
            n = r.payload["tx_count"]
            rows.append(BlockUtilization(r.miniblock, r.t - t0, n, 100.0 * n / cap))
    return sorted(rows, key=lambda u: u.block)


@dataclass
class BatchStages:
    batch: int
    sealed_at: float
    started_at: float
    durations: Dict[str, float]

    @property
    def stage_sum(self) -> float:
        return sum(self.durations.values())

    @property
    def wall(self) -> float:
        return self.sealed_at - self.started_at

    @property
    def overlap_saving(self) -> float:
        return self.stage_sum - self.wall

    def percent(self, name: str) -> float:
        total = self.stage_sum
        return 100.0 * self.durations[name] / total if total else 0.0


def batches_from_records(records: Sequence[ev.EventRecord]) -> List[BatchStages]:
    out = []
    for r in records:
        if r.kind == ev.BATCH_SEALED:
            durations = {s["name"]: s["duration"] for s in r.payload.get("stages", [])}
            out.append(BatchStages(r.batch, r.t, r.payload.get("started_at", r.t), durations))
    return sorted(out, key=lambda b: b.batch)


@dataclass
class StageBreakdown:
    batches: List[BatchStages]
    mean: Dict[str, float]
    max: Dict[str, float]

    def largest_stage(self, batch: BatchStages) -> str:
        return max(batch.durations, key=lambda name: batch.durations[name])


def stage_breakdown(batches: Sequence[BatchStages]) -> StageBreakdown:
    if not batches:
        raise ValueError("stage_breakdown needs at least one sealed batch")
    names = [n for n in STAGE_NAMES if any(n in b.durations for b in batches)]
    mean = {n: sum(b.durations.get(n, 0.0) for b in batches) / len(batches) for n in names}
    mx = {n: max(b.durations.get(n, 0.0) for b in batches) for n in names}
    return StageBreakdown(list(batches), mean, mx)


def miniblock_vs_batch_ratio(records: Sequence[ev.EventRecord]) -> float:
    mbs = [r.payload["tx_count"] for r in records if r.kind == ev.MINIBLOCK_SEALED]
    batches = [r.payload["tx_count"] for r in records if r.kind == ev.BATCH_SEALED]
    if not batches or not mbs:
        raise ValueError("ratio needs at least one miniblock and one batch")
    return (sum(batches) / len(batches)) / (sum(mbs) / len(mbs))


def finality_summary(records: Sequence[ev.EventRecord]) -> Dict[str, Optional[float]]:
    idx = FinalityIndex(records)
    soft, hard = [], []
    for tx_id, t_inc in idx.included.items():
        soft.append(t_inc - idx.sent[tx_id])
        h = idx.hard_final_at(tx_id)
        if h is not None:
            hard.append(h - idx.sent[tx_id])
    soft.sort()
    hard.sort()

    def lower_median(xs):
        return xs[(len(xs) - 1) // 2] if xs else None

    return {
        "soft_final_count": len(soft),
        "hard_final_count": len(hard),
        "soft_median_s": lower_median(soft),
        "hard_min_s": hard[0] if hard else None,
        "hard_median_s": lower_median(hard),
        "hard_max_s": hard[-1] if hard else None,
    }


# -- report ---------------------------------------------------------------------

def _r(x: Optional[float], places: int = 6) -> Optional[float]:
    return None if x is None else round(x, places)


def build_report(records: Sequence[ev.EventRecord], cap: int = 300,
                 bin: float = 0.1) -> Dict:
    if not records:
        raise EmptyLog("event log is empty")
    failed = [r.t for r in records if r.kind == ev.SEQUENCER_FAILED]
    n_sent = sum(1 for r in records if r.kind == ev.SENT)
    n_inc = sum(1 for r in records if r.kind == ev.INCLUDED)
    report: Dict = {"sent": n_sent, "included": n_inc,
                    "sequencer_failed_at": _r(failed[0] - origin(records)) if failed else None}
    if n_inc:
        lat = latency_distribution(records)
        cum_peak = peak(tps_series(records, bin))
        inst_peak = peak(instantaneous_tps_series(records, 1.0))
        report.update({
            "completion_time_s": _r(completion_time(records)),
            "final_tps": final_tps(records),
            "peak_binned_tps": _r(cum_peak[1], 4),
            "peak_binned_tps_time_s": _r(cum_peak[0]),
            "peak_instantaneous_tps": _r(inst_peak[1], 4),
            "peak_instantaneous_tps_bin_start_s": _r(inst_peak[0]),
            "latency_s": {"median": _r(lat.median), "p90": _r(lat.p90), "max": _r(lat.max)},
        })
    util = block_utilization(records, cap)
    report["block_utilization"] = [
        {"block": u.block, "txs": u.txs, "percent": _r(u.percent, 4)} for u in util]
    batches = batches_from_records(records)
    if batches:
        bd = stage_breakdown(batches)
        report["stages"] = {
            "mean_s": {k: _r(v) for k, v in bd.mean.items()},
            "max_s": {k: _r(v) for k, v in bd.max.items()},
            "per_batch": [{
                "batch": b.batch,
                "wall_s": _r(b.wall),
                "stage_sum_s": _r(b.stage_sum),
                "overlap_saving_s": _r(b.overlap_saving),
                "percent": {n: _r(b.percent(n), 4) for n in b.durations},
            } for b in batches],
        }
        if util:
            report["miniblock_vs_batch_ratio"] = _r(miniblock_vs_batch_ratio(records), 4)
    report["finality"] = {k: _r(v) if isinstance(v, float) else v
                          for k, v in finality_summary(records).items()}
    return report


def write_report(records: Sequence[ev.EventRecord], report_dir: Path, cap: int = 300,
                 bin: float = 0.1) -> Dict:
    report = build_report(records, cap, bin)
    report_dir.mkdir(parents=True, exist_ok=True)
    with open(report_dir / "report.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")

    series = sent_vs_included_series(records, bin)
    with open(report_dir / "tps.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_start", "sent_cum", "included_cum"])
        for start, s, i in zip(series.bin_starts, series.sent, series.included):
            w.writerow([f"{start:.3f}", s, i])

    with open(report_dir / "utilization.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["block", "txs", "percent"])
        for u in block_utilization(records, cap):
            w.writerow([u.block, u.txs, f"{u.percent:.4f}"])

    with open(report_dir / "stages.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["batch", "stage", "duration_s", "percent"])
        for b in batches_from_records(records):
            for name in STAGE_NAMES:
                if name in b.durations:
                    w.writerow([b.batch, name, f"{b.durations[name]:.6f}", f"{b.percent(name):.4f}"])
    return report
