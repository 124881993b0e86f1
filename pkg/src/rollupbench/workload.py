"""Load generation: derived accounts, funding, and the burst-then-wave schedule."""
from __future__ import annotations

import hashlib
import heapq
import json
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple

from .amm import MAX_UINT128, ROUTER, Account, AmmState, SwapTx, approve


class ConfigInvalid(ValueError):
    pass


class UnsortedInput(ValueError):
    pass


@dataclass
class GeneratorConfig:
    instances: int = 5
    accounts: int = 50
    swaps_per_account: int = 20
    burst_size: int = 600
    burst_at: float = 0.0
    burst_jitter: float = 0.1
    wave_start: float = 3.0
    wave_end: float = 13.0
    seed: int = 42
    swap_amount: int = 10**18
    # seconds a swap stays valid after it is sent
    deadline_slack: float = 3600.0
    # "round_robin": account i trades on pool i mod len(pools); "single": pool 0 only
    pool_policy: str = "round_robin"
    pools: List[Tuple[str, str]] = field(default_factory=lambda: [("TOKA", "TOKB")])

    @property
    def total(self) -> int:
        return self.accounts * self.swaps_per_account

    def validate(self) -> None:
        if self.instances < 1:
            raise ConfigInvalid("instances must be >= 1")
        if self.accounts < 1 or self.swaps_per_account < 1:
            raise ConfigInvalid("accounts and swaps_per_account must be >= 1")
        if not 0 <= self.burst_size <= self.total:
            raise ConfigInvalid(f"burst_size {self.burst_size} not in [0, {self.total}]")
        if self.burst_jitter < 0:
            raise ConfigInvalid("burst_jitter must be >= 0")
        if self.burst_at < 0 or self.wave_start < self.burst_at or self.wave_end < self.wave_start:
            raise ConfigInvalid("need 0 <= burst_at <= wave_start <= wave_end")
        if self.swap_amount <= 0 or self.swap_amount > MAX_UINT128:
            raise ConfigInvalid("swap_amount must be a positive uint128")
        if not self.pools:
            raise ConfigInvalid("at least one pool is required")
        if self.pool_policy not in ("round_robin", "single"):
            raise ConfigInvalid(f"unknown pool_policy {self.pool_policy!r}")


@dataclass(frozen=True)
class SubmissionRecord:
    tx_id: str
    sender: str
    instance: int
    send_time: float
    nonce: int
    token_in: str
    token_out: str
    amount_in: int
    amount_out_min: int
    deadline: float

    def to_tx(self) -> SwapTx:
        return SwapTx(self.tx_id, self.sender, self.token_in, self.token_out,
                      self.amount_in, self.amount_out_min, self.deadline, self.nonce)


def derive_accounts(seed: int, n: int) -> List[Account]:
    """Deterministic stand-in for mnemonic derivation: address = sha256(seed, index)."""
    out = []
    for i in range(n):
        digest = hashlib.sha256(seed.to_bytes(8, "big", signed=True) + i.to_bytes(4, "big")).hexdigest()
        out.append(Account("0x" + digest[:40]))
    return out


def fund_and_approve(state: AmmState, accounts: Iterable[Account],
                     token_amounts: Mapping[str, int]) -> None:
    """Credit each account (additive) and give the router a max allowance."""
    for acct in accounts:
        state.account(acct.address)
        for token, amount in token_amounts.items():
            state.mint(acct.address, token, amount)
            approve(state, acct.address, ROUTER, token, MAX_UINT128)


def _send_times(cfg: GeneratorConfig, rng: random.Random) -> List[float]:
    burst = sorted(cfg.burst_at + rng.random() * cfg.burst_jitter for _ in range(cfg.burst_size))
    n_wave = cfg.total - cfg.burst_size
    if n_wave == 1:
        wave = [cfg.wave_start]
    else:
        step = (cfg.wave_end - cfg.wave_start) / max(n_wave - 1, 1)
        wave = [cfg.wave_start + i * step for i in range(n_wave)]
    return burst + wave


def build_schedule(cfg: GeneratorConfig) -> List[SubmissionRecord]:
    """Burst of ``burst_size`` jittered sends, the rest evenly over the wave window.

    Record i goes to account ``i % accounts`` and instance ``i % instances``;
    nonces therefore follow send order per account. Each account alternates
    swap direction so the pool never drifts far from balance.
    """
    cfg.validate()
    rng = random.Random(cfg.seed)
    addresses = [a.address for a in derive_accounts(cfg.seed, cfg.accounts)]
    times = _send_times(cfg, rng)
    records = []
    for i, t in enumerate(times):
        acct_idx = i % cfg.accounts
        nonce = i // cfg.accounts
        if cfg.pool_policy == "single":
            tok0, tok1 = cfg.pools[0]
        else:
            tok0, tok1 = cfg.pools[acct_idx % len(cfg.pools)]
        token_in, token_out = (tok0, tok1) if nonce % 2 == 0 else (tok1, tok0)
        tx_id = "0x" + hashlib.sha256(f"{cfg.seed}:{i}".encode()).hexdigest()[:16]
        records.append(SubmissionRecord(
            tx_id=tx_id,
            sender=addresses[acct_idx],
            instance=i % cfg.instances,
            send_time=t,
            nonce=nonce,
            token_in=token_in,
            token_out=token_out,
            amount_in=cfg.swap_amount,
            amount_out_min=0,
            deadline=t + cfg.deadline_slack,
        ))
    return records


def split_by_instance(records: Sequence[SubmissionRecord]) -> List[List[SubmissionRecord]]:
    n = max((r.instance for r in records), default=-1) + 1
    logs: List[List[SubmissionRecord]] = [[] for _ in range(n)]
    for r in records:
        logs[r.instance].append(r)
    return logs


def _merge_key(r: SubmissionRecord):
    return (r.send_time, r.instance, r.tx_id)


def merge_logs(per_instance_logs: Sequence[Sequence[SubmissionRecord]]) -> List[SubmissionRecord]:
    for log in per_instance_logs:
        for a, b in zip(log, log[1:]):
            if b.send_time < a.send_time:
                raise UnsortedInput(f"{b.tx_id} sent before {a.tx_id} in instance {b.instance}")
    return list(heapq.merge(*per_instance_logs, key=_merge_key))


# Per-instance JSON-lines files carry only the fields a generator would log.
_LOG_FIELDS = ("tx_id", "sender", "instance", "send_time")


def write_instance_log(path: Path, records: Iterable[SubmissionRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            d = asdict(r)
            fh.write(json.dumps({k: d[k] for k in _LOG_FIELDS}) + "\n")


def read_instance_log(path: Path) -> List[Dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
