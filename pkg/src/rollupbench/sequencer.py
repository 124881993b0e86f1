"""Discrete-event sequencer: FIFO mempool, contended execution, miniblock sealing.

The sequencer alternates between two phases. In INGEST it executes mempool
transactions one at a time at :func:`effective_service_rate` and seals
miniblocks on capacity or deadline. In FINALIZE (entered whenever the L1
pipeline asks for a batch seal) it neither executes nor seals.
"""
from __future__ import annotations

import enum
import math
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Callable, Deque, List, Optional, Tuple

from . import events as ev
from .amm import AmmError, AmmState, StorageWrite, SwapTx, execute_swap

# Output of ``rollupbench.calibrate.grid_search`` over the default grid, seed 42.
FITTED_BASE_RATE = 400.0
FITTED_ALPHA = 0.05

_EPS = 1e-9


class NothingToSeal(RuntimeError):
    pass


class Phase(enum.Enum):
    INGEST = "ingest"
    FINALIZE = "finalize"


@dataclass
class SequencerConfig:
    block_capacity: int = 300
    seal_deadline: float = 1.0
    warmup: float = 2.0
    base_service_rate: float = FITTED_BASE_RATE
    contention_alpha: float = FITTED_ALPHA
    failure_instances: float = 6
    failure_grace: float = 1.0
    finalize_pause: float = 0.5
    mempool_capacity: int = 1000

    def validate(self) -> None:
        from .workload import ConfigInvalid

        if self.block_capacity < 1:
            raise ConfigInvalid("block_capacity must be >= 1")
        if self.base_service_rate <= 0 or self.contention_alpha < 0:
            raise ConfigInvalid("base_service_rate must be > 0 and contention_alpha >= 0")
        if self.seal_deadline <= 0:
            raise ConfigInvalid("seal_deadline must be > 0")
        if min(self.warmup, self.finalize_pause, self.failure_grace) < 0:
            raise ConfigInvalid("warmup, finalize_pause and failure_grace must be >= 0")
        if self.mempool_capacity < 1:
            raise ConfigInvalid("mempool_capacity must be >= 1")


def effective_service_rate(active_instances: int, cfg: SequencerConfig) -> float:
    """Execution rate in tx/s under contention from ``active_instances`` generators."""
    excess = max(0, active_instances - 2)
    return cfg.base_service_rate / (1 + cfg.contention_alpha * excess)


@dataclass
class Miniblock:
    number: int
    sealed_at: float
    txs: Tuple[str, ...]
    l1_batch_number: Optional[int] = None
    fictive: bool = False
    writes: List[StorageWrite] = field(default_factory=list, repr=False, compare=False)


@dataclass(frozen=True)
class Submission:
    accepted: bool
    reason: Optional[str] = None


@dataclass(frozen=True)
class Health:
    failed: bool
    at: Optional[float] = None


MempoolFull = "MempoolFull"
SequencerFailed = "SequencerFailed"

# (miniblock, seal time) -> True to request a batch seal (enter FINALIZE)
SealHook = Callable[[Miniblock, float], bool]


class Sequencer:
    def __init__(self, cfg: SequencerConfig, state: AmmState, on_seal: Optional[SealHook] = None):
        cfg.validate()
        self.cfg = cfg
        self.state = state
        self.on_seal = on_seal
        self.now = 0.0
        self.phase = Phase.INGEST
        self.finalize_until = 0.0
        self.finalize_windows: List[Tuple[float, float]] = []
        self.mempool: Deque[Tuple[SwapTx, int, float]] = deque()
        self._instances: Counter = Counter()
        self._serving: Optional[Tuple[SwapTx, int]] = None
        self._serving_finish = 0.0
        self.pending: List[str] = []
        self._pending_writes: List[StorageWrite] = []
        self.reverted: List[Tuple[str, str]] = []
        self.last_seal = 0.0
        self.miniblocks: List[Miniblock] = []
        self.failed_at: Optional[float] = None
        self._saturated_since: Optional[float] = None
        self.log: List[ev.EventRecord] = []

    # -- observation -------------------------------------------------------

    @property
    def active_instances(self) -> int:
        """Distinct generator instances with work queued or in service."""
        active = set(self._instances)
        if self._serving is not None:
            active.add(self._serving[1])
        return len(active)

    def check_failure(self) -> Health:
        if self.failed_at is not None:
            return Health(True, self.failed_at)
        return Health(False)

    # -- inputs --------------------------------------------------------------

    def submit(self, tx: SwapTx, t: float, instance: int = 0) -> Submission:
        if t < 0:
            raise ValueError("submission time must be >= 0")
        if t > self.now:
            self.step(t)
        if self.failed_at is not None:
            result = Submission(False, SequencerFailed)
        elif len(self.mempool) >= self.cfg.mempool_capacity:
            result = Submission(False, MempoolFull)
        else:
            self.mempool.append((tx, instance, t))
            self._instances[instance] += 1
            result = Submission(True)
        payload = {"sender": tx.sender, "instance": instance,
                   "status": "accepted" if result.accepted else "rejected"}
        if result.reason:
            payload["reason"] = result.reason
        self.log.append(ev.EventRecord(ev.SENT, t, tx_id=tx.tx_id, payload=payload))
        self._kick()
        self._update_saturation()
        return result

    # -- event loop ------------------------------------------------------------

    def _next_event(self) -> Optional[Tuple[float, int]]:
        if self.failed_at is not None:
            return None
        cands = []
        if self._serving is not None:
            cands.append((self._serving_finish, 0))
        if self.phase is Phase.FINALIZE:
            cands.append((self.finalize_until, 1))
        elif self.pending:
            cands.append((self.last_seal + self.cfg.seal_deadline, 2))
        if self._serving is None and self.mempool and self.now < self.cfg.warmup:
            cands.append((self.cfg.warmup, 3))
        if self._saturated_since is not None:
            cands.append((self._saturated_since + self.cfg.failure_grace, 4))
        return min(cands) if cands else None

    def step(self, until: float) -> List[ev.EventRecord]:
        """Advance the clock to ``until``, processing every internal event on the way."""
        if until < self.now:
            raise ValueError(f"cannot step backwards from {self.now} to {until}")
        start = len(self.log)
        while True:
            nxt = self._next_event()
            if nxt is None or nxt[0] > until:
                break
            t, kind = nxt
            self.now = max(self.now, t)
            if kind == 0:
                self._complete()
            elif kind == 1:
                self.phase = Phase.INGEST
                self._maybe_seal()
            elif kind == 2:
                self._maybe_seal()
            elif kind == 4:
                self._fail()
            self._kick()
            self._update_saturation()
        if math.isfinite(until):
            self.now = until
        return self.log[start:]

    def run_until_idle(self) -> List[ev.EventRecord]:
        return self.step(math.inf)

    # -- internals -------------------------------------------------------------

    def _kick(self) -> None:
        """Start serving the mempool head if the sequencer is free to execute."""
        if (self._serving is not None or self.failed_at is not None
                or self.phase is not Phase.INGEST or self.now < self.cfg.warmup
                or not self.mempool):
            return
        rate = effective_service_rate(self.active_instances, self.cfg)
        tx, instance, _ = self.mempool.popleft()
        self._instances[instance] -= 1
        if not self._instances[instance]:
            del self._instances[instance]
        self._serving = (tx, instance)
        self._serving_finish = self.now + 1.0 / rate

    def _complete(self) -> None:
        tx, _ = self._serving
        self._serving = None
        try:
            result = execute_swap(self.state, tx, self.now)
        except AmmError as exc:
            self.reverted.append((tx.tx_id, type(exc).__name__))
        else:
            self.pending.append(tx.tx_id)
            self._pending_writes.extend(result.writes)
        self._maybe_seal()

    def _maybe_seal(self) -> None:
        if self.phase is not Phase.INGEST or not self.pending:
            return
        full = len(self.pending) >= self.cfg.block_capacity
        due = self.now - self.last_seal >= self.cfg.seal_deadline - _EPS
        if full or due:
            self.seal_miniblock(self.now)

    def seal_miniblock(self, t: float) -> Miniblock:
        if not self.pending:
            raise NothingToSeal(f"no executed transactions pending at t={t}")
        mb = Miniblock(number=len(self.miniblocks) + 1, sealed_at=t,
                       txs=tuple(self.pending), writes=self._pending_writes)
        reverted = [tx_id for tx_id, _ in self.reverted]
        self.pending, self._pending_writes, self.reverted = [], [], []
        self.last_seal = t
        self.miniblocks.append(mb)
        self.log.append(ev.EventRecord(ev.MINIBLOCK_SEALED, t, miniblock=mb.number, payload={
            "tx_count": len(mb.txs), "txs": list(mb.txs), "reverted": reverted,
            "capacity": self.cfg.block_capacity}))
        for tx_id in mb.txs:
            self.log.append(ev.EventRecord(ev.INCLUDED, t, tx_id=tx_id, miniblock=mb.number))
        if self.on_seal is not None and self.on_seal(mb, t):
            self._enter_finalize(t)
        return mb

    def _enter_finalize(self, t: float) -> None:
        self.phase = Phase.FINALIZE
        self.finalize_until = t + self.cfg.finalize_pause
        self.finalize_windows.append((t, self.finalize_until))
        if self._serving is not None:
            # execution is suspended, not abandoned
            self._serving_finish += self.cfg.finalize_pause

    def _update_saturation(self) -> None:
        if self.failed_at is not None:
            return
        saturated = (self.active_instances >= self.cfg.failure_instances
                     and len(self.mempool) >= self.cfg.mempool_capacity)
        if not saturated:
            self._saturated_since = None
        elif self._saturated_since is None:
            self._saturated_since = self.now

    def _fail(self) -> None:
        self.failed_at = self.now
        self._serving = None
        self.log.append(ev.EventRecord(ev.SEQUENCER_FAILED, self.now, payload={
            "active_instances": self.active_instances, "mempool": len(self.mempool),
            "unsealed": len(self.pending)}))
