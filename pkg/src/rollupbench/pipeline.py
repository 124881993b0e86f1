"""L1 batch assembly, sealing stages, and the commit/prove/execute lifecycle."""
from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence

from . import events as ev
from .merkle import StateTree, dedup_writes
from .sequencer import Miniblock

FILTER_WRITTEN_SLOTS = "filter_written_slots"
INSERT_INITIAL_WRITES = "insert_initial_writes"
INSERT_L1_BATCH_HEADER = "insert_l1_batch_header"
LOG_DEDUPLICATION = "log_deduplication"
SET_L1_BATCH_NUMBER = "set_l1_batch_number_for_miniblocks"
FICTIVE_MINIBLOCK = "fictive_miniblock"
WAITING_FOR_TREE = "waiting_for_tree"

GROUP_A = (FILTER_WRITTEN_SLOTS, LOG_DEDUPLICATION, INSERT_INITIAL_WRITES,
           INSERT_L1_BATCH_HEADER, SET_L1_BATCH_NUMBER, FICTIVE_MINIBLOCK)
GROUP_B = (WAITING_FOR_TREE,)
STAGE_NAMES = GROUP_A + GROUP_B

DEFAULT_STAGE_DURATIONS = {
    FILTER_WRITTEN_SLOTS: 0.20,
    LOG_DEDUPLICATION: 0.10,
    INSERT_INITIAL_WRITES: 0.05,
    INSERT_L1_BATCH_HEADER: 0.05,
    SET_L1_BATCH_NUMBER: 0.05,
    FICTIVE_MINIBLOCK: 0.05,
}


class NothingToBatch(RuntimeError):
    pass


class OutOfOrder(RuntimeError):
    pass


class UnknownTx(KeyError):
    pass


@dataclass
class PipelineConfig:
    miniblocks_per_batch: int = 8
    stage_durations: Dict[str, float] = field(default_factory=lambda: dict(DEFAULT_STAGE_DURATIONS))
    tree_stage_duration: float = 2.44
    # seconds at time_scale 1; 120 + 600 + 180 = 15 min from seal to execute
    commit_delay: float = 120.0
    prove_delay: float = 600.0
    execute_delay: float = 180.0
    time_scale: float = 1 / 60
    # relative +/- jitter on stage durations; 0 keeps runs exactly reproducible per config
    stage_jitter: float = 0.0
    # report max(measured wall time, tree_stage_duration); makes logs machine-dependent
    measure_tree_time: bool = False
    tree_depth: int = 20
    seed: int = 0

    def validate(self) -> None:
        from .workload import ConfigInvalid

        if self.miniblocks_per_batch < 1:
            raise ConfigInvalid("miniblocks_per_batch must be >= 1")
        if min(self.commit_delay, self.prove_delay, self.execute_delay) < 0:
            raise ConfigInvalid("lifecycle delays must be >= 0")
        if self.time_scale <= 0:
            raise ConfigInvalid("time_scale must be > 0")
        unknown = set(self.stage_durations) - set(GROUP_A)
        if unknown:
            raise ConfigInvalid(f"unknown stages {sorted(unknown)}")
        if any(d < 0 for d in self.stage_durations.values()) or self.tree_stage_duration < 0:
            raise ConfigInvalid("stage durations must be >= 0")
        if not 0 <= self.stage_jitter < 1:
            raise ConfigInvalid("stage_jitter must be in [0, 1)")


@dataclass
class StageTiming:
    name: str
    start: float
    duration: float
    group: str

    def to_dict(self) -> dict:
        return {"name": self.name, "start": round(self.start, 6),
                "duration": round(self.duration, 6), "group": self.group}


@dataclass
class L1Batch:
    number: int
    miniblocks: List[int]
    tx_count: int
    fictive_miniblock: Miniblock
    requested_at: Optional[float] = None
    started_at: Optional[float] = None
    state_root: Optional[str] = None
    stage_timings: List[StageTiming] = field(default_factory=list)
    sealed_at: Optional[float] = None
    committed_at: Optional[float] = None
    proved_at: Optional[float] = None
    executed_at: Optional[float] = None
    tree_wall_time: float = 0.0
    writes: list = field(default_factory=list, repr=False)

    @property
    def stage_sum(self) -> float:
        return sum(s.duration for s in self.stage_timings)

    @property
    def sealing_wall(self) -> float:
        return self.sealed_at - self.started_at


def assemble_batch(miniblocks: Sequence[Miniblock], number: int) -> L1Batch:
    """Group sealed miniblocks into batch ``number`` and stamp their batch number."""
    if not miniblocks:
        raise NothingToBatch("no unassigned miniblocks")
    writes = []
    for mb in miniblocks:
        if mb.l1_batch_number is not None:
            raise OutOfOrder(f"miniblock {mb.number} already in batch {mb.l1_batch_number}")
        mb.l1_batch_number = number
        writes.extend(mb.writes)
    fictive = Miniblock(number=miniblocks[-1].number, sealed_at=miniblocks[-1].sealed_at,
                        txs=(), l1_batch_number=number, fictive=True)
    return L1Batch(number=number, miniblocks=[mb.number for mb in miniblocks],
                   tx_count=sum(len(mb.txs) for mb in miniblocks),
                   fictive_miniblock=fictive, writes=writes)


def run_sealing_stages(batch: L1Batch, tree: StateTree, cfg: PipelineConfig, start: float,
                       rng: Optional[random.Random] = None) -> L1Batch:
    """Run group A concurrently, then the tree update; stamp ``sealed_at``.

    Stage parallelism lives in simulated time: group A costs the max of its
    members, not the sum.
    """
    def jittered(d: float) -> float:
        if cfg.stage_jitter and rng is not None:
            return d * (1 + rng.uniform(-cfg.stage_jitter, cfg.stage_jitter))
        return d

    batch.started_at = start
    group_a = [StageTiming(name, start, jittered(cfg.stage_durations.get(name, 0.0)), "A")
               for name in GROUP_A]
    span_a = max(s.duration for s in group_a)

    update = tree.apply_writes(dedup_writes(batch.writes))
    batch.tree_wall_time = update.elapsed
    tree_duration = jittered(cfg.tree_stage_duration)
    if cfg.measure_tree_time:
        tree_duration = max(update.elapsed, tree_duration)
    tree_stage = StageTiming(WAITING_FOR_TREE, start + span_a, tree_duration, "B")

    batch.stage_timings = group_a + [tree_stage]
    batch.state_root = update.new_root.hex()
    batch.sealed_at = start + span_a + tree_duration
    return batch


def commit_batch(batch: L1Batch, cfg: PipelineConfig) -> ev.EventRecord:
    if batch.sealed_at is None or batch.committed_at is not None:
        raise OutOfOrder(f"batch {batch.number}: commit requires a sealed, uncommitted batch")
    batch.committed_at = batch.sealed_at + cfg.commit_delay * cfg.time_scale
    return ev.EventRecord(ev.COMMIT, batch.committed_at, batch=batch.number)


def prove_batch(batch: L1Batch, cfg: PipelineConfig) -> ev.EventRecord:
    if batch.committed_at is None or batch.proved_at is not None:
        raise OutOfOrder(f"batch {batch.number}: prove requires a committed, unproved batch")
    batch.proved_at = batch.committed_at + cfg.prove_delay * cfg.time_scale
    return ev.EventRecord(ev.PROVE, batch.proved_at, batch=batch.number)


def execute_batch(batch: L1Batch, cfg: PipelineConfig) -> ev.EventRecord:
    if batch.proved_at is None or batch.executed_at is not None:
        raise OutOfOrder(f"batch {batch.number}: execute requires a proved, unexecuted batch")
    batch.executed_at = batch.proved_at + cfg.execute_delay * cfg.time_scale
    return ev.EventRecord(ev.EXECUTE, batch.executed_at, batch=batch.number)


class L1Pipeline:
    """Collects sealed miniblocks and turns every ``miniblocks_per_batch`` into an L1 batch.

    Batches seal one at a time: a batch requested while the previous one is
    still in its stages starts when that one finishes.
    """

    def __init__(self, cfg: PipelineConfig, tree: Optional[StateTree] = None):
        cfg.validate()
        self.cfg = cfg
        self.tree = tree if tree is not None else StateTree(cfg.tree_depth)
        self.unbatched: List[Miniblock] = []
        self.batches: List[L1Batch] = []
        self._rng = random.Random(cfg.seed)
        self._busy_until = 0.0

    def on_miniblock(self, mb: Miniblock, t: float) -> Optional[L1Batch]:
        """Record a sealed miniblock; returns the batch if this one triggered a seal."""
        self.unbatched.append(mb)
        if len(self.unbatched) >= self.cfg.miniblocks_per_batch:
            return self.seal_batch(t)
        return None

    def seal_batch(self, t: float) -> L1Batch:
        batch = assemble_batch(self.unbatched, len(self.batches) + 1)
        self.unbatched = []
        batch.requested_at = t
        run_sealing_stages(batch, self.tree, self.cfg, max(t, self._busy_until), self._rng)
        self._busy_until = batch.sealed_at
        commit_batch(batch, self.cfg)
        prove_batch(batch, self.cfg)
        execute_batch(batch, self.cfg)
        self.batches.append(batch)
        return batch

    def drain(self, t: float) -> Optional[L1Batch]:
        if not self.unbatched:
            return None
        return self.seal_batch(t)

    @staticmethod
    def batch_events(batch: L1Batch, extra: Optional[dict] = None) -> List[ev.EventRecord]:
        payload = {
            "miniblocks": batch.miniblocks,
            "tx_count": batch.tx_count,
            "state_root": batch.state_root,
            "requested_at": round(batch.requested_at, 6),
            "started_at": round(batch.started_at, 6),
            "stages": [s.to_dict() for s in batch.stage_timings],
            "fictive_miniblock": True,
        }
        if extra:
            payload.update(extra)
        return [
            ev.EventRecord(ev.BATCH_SEALED, batch.sealed_at, batch=batch.number, payload=payload),
            ev.EventRecord(ev.COMMIT, batch.committed_at, batch=batch.number),
            ev.EventRecord(ev.PROVE, batch.proved_at, batch=batch.number),
            ev.EventRecord(ev.EXECUTE, batch.executed_at, batch=batch.number),
        ]


class FinalityStatus(enum.Enum):
    PENDING = "pending"
    SOFT_FINAL = "soft_final"
    HARD_FINAL = "hard_final"


class FinalityIndex:
    """tx -> inclusion time and batch execution time, rebuilt from an event log."""

    def __init__(self, records: Iterable[ev.EventRecord]):
        self.sent: Dict[str, float] = {}
        self.included: Dict[str, float] = {}
        self.tx_miniblock: Dict[str, int] = {}
        self.miniblock_batch: Dict[int, int] = {}
        self.executed: Dict[int, float] = {}
        for r in records:
            if r.kind == ev.SENT:
                self.sent[r.tx_id] = r.t
            elif r.kind == ev.INCLUDED:
                self.included[r.tx_id] = r.t
                self.tx_miniblock[r.tx_id] = r.miniblock
            elif r.kind == ev.BATCH_SEALED:
                for mb in r.payload.get("miniblocks", []):
                    self.miniblock_batch[mb] = r.batch
            elif r.kind == ev.EXECUTE:
                self.executed[r.batch] = r.t

    def hard_final_at(self, tx_id: str) -> Optional[float]:
        mb = self.tx_miniblock.get(tx_id)
        batch = self.miniblock_batch.get(mb)
        return self.executed.get(batch)


def finality_status(tx_id: str, t: float, world: FinalityIndex) -> FinalityStatus:
    if tx_id not in world.sent and tx_id not in world.included:
        raise UnknownTx(tx_id)
    included = world.included.get(tx_id)
    if included is None or t < included:
        return FinalityStatus.PENDING
    hard = world.hard_final_at(tx_id)
    if hard is not None and t >= hard:
        return FinalityStatus.HARD_FINAL
    return FinalityStatus.SOFT_FINAL
