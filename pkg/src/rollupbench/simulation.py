"""Scenario configuration and the end-to-end simulation run."""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional

from . import events as ev
from .amm import AmmState, create_pool
from .pipeline import L1Batch, L1Pipeline, PipelineConfig
from .sequencer import Miniblock, Sequencer, SequencerConfig
from .workload import (ConfigInvalid, GeneratorConfig, build_schedule, derive_accounts,
                       fund_and_approve, merge_logs, split_by_instance)

SEED_ENV = "ROLLUPBENCH_SEED"
LIQUIDITY_PROVIDER = "lp"


@dataclass
class PoolSpec:
    tokens: List[str] = field(default_factory=lambda: ["TOKA", "TOKB"])
    reserves: List[int] = field(default_factory=lambda: [10**24, 10**24])


@dataclass
class ScenarioConfig:
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    sequencer: SequencerConfig = field(default_factory=SequencerConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    pools: List[PoolSpec] = field(default_factory=lambda: [PoolSpec()])
    # per-account starting balance of every pool token
    account_funding: int = 10**21
    seed: int = 42
    name: str = "paper-repro"

    def validate(self) -> None:
        if not self.pools:
            raise ConfigInvalid("at least one pool is required")
        for p in self.pools:
            if len(p.tokens) != 2 or len(p.reserves) != 2:
                raise ConfigInvalid("a pool needs exactly two tokens and two reserves")
            if p.tokens[0] == p.tokens[1] or min(p.reserves) <= 0:
                raise ConfigInvalid(f"invalid pool {p.tokens}")
        if self.account_funding < 0:
            raise ConfigInvalid("account_funding must be >= 0")
        self.generator.pools = [tuple(p.tokens) for p in self.pools]
        self.generator.seed = self.seed
        self.pipeline.seed = self.seed
        self.generator.validate()
        self.sequencer.validate()
        self.pipeline.validate()


def paper_repro(time_scale: Optional[float] = None) -> ScenarioConfig:
    cfg = ScenarioConfig()
    if time_scale is not None:
        cfg.pipeline.time_scale = time_scale
    return cfg


def sweep_scenario(instances: int, **sequencer_overrides) -> ScenarioConfig:
    """n generator instances x 200 swaps each, against a warmed-up sequencer.

    The first 600 swaps (or all of them, if fewer) go out as the burst; the
    rest follow the paper-repro wave.
    """
    total = 200 * instances
    gen = GeneratorConfig(instances=instances, accounts=10 * instances,
                          burst_size=min(600, total))
    seq = SequencerConfig(warmup=0.0, **sequencer_overrides)
    return ScenarioConfig(generator=gen, sequencer=seq, name=f"sweep-{instances}")


def saturating_scenario(instances: int = 6) -> ScenarioConfig:
    """Every swap in one burst; the mempool overflows and stays full through warmup."""
    gen = GeneratorConfig(instances=instances, accounts=10 * instances,
                          burst_size=200 * instances)
    return ScenarioConfig(generator=gen, name=f"saturating-{instances}")


# -- config files ---------------------------------------------------------------

_SECTIONS = {"generator": GeneratorConfig, "sequencer": SequencerConfig, "pipeline": PipelineConfig}


def _unflatten(raw: Mapping[str, Any]) -> Dict[str, Any]:
    out: Dict[str, Any] = {}
    for key, value in raw.items():
        parts = key.split(".")
        node = out
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigInvalid(f"key {key!r} conflicts with a scalar")
        if isinstance(value, Mapping):
            node.setdefault(parts[-1], {}).update(_unflatten(value))
        else:
            node[parts[-1]] = value
    return out


def scenario_from_dict(raw: Mapping[str, Any]) -> ScenarioConfig:
    """Build a scenario from nested or dotted keys, e.g. ``{"sequencer.warmup": 1.5}``."""
    data = _unflatten(raw)
    cfg = ScenarioConfig()
    for key, value in data.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigInvalid(f"section {key!r} must be an object")
            section = getattr(cfg, key)
            names = {f.name for f in dataclasses.fields(section)}
            for k, v in value.items():
                if k not in names:
                    raise ConfigInvalid(f"unknown key {key}.{k}")
                setattr(section, k, v)
        elif key == "pools":
            if not isinstance(value, list):
                raise ConfigInvalid("pools must be a list")
            try:
                cfg.pools = [PoolSpec(**p) for p in value]
            except TypeError as exc:
                raise ConfigInvalid(f"bad pool entry: {exc}") from None
        elif key in ("account_funding", "seed", "name"):
            setattr(cfg, key, value)
        else:
            raise ConfigInvalid(f"unknown key {key!r}")
    return cfg


def load_scenario(path: Path) -> ScenarioConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"{path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigInvalid(f"{path}: top level must be an object")
    cfg = scenario_from_dict(raw)
    apply_seed_override(cfg)
    return cfg


def apply_seed_override(cfg: ScenarioConfig) -> None:
    seed = os.environ.get(SEED_ENV)
    if seed:
        try:
            cfg.seed = int(seed)
        except ValueError:
            raise ConfigInvalid(f"{SEED_ENV}={seed!r} is not an integer") from None


def scenario_to_dict(cfg: ScenarioConfig) -> Dict[str, Any]:
    return dataclasses.asdict(cfg)


# -- running --------------------------------------------------------------------

@dataclass
class SimulationResult:
    config: ScenarioConfig
    events: List[ev.EventRecord]
    state: AmmState
    miniblocks: List[Miniblock]
    batches: List[L1Batch]
    finalize_windows: List[tuple]
    failed_at: Optional[float]

    @property
    def failed(self) -> bool:
        return self.failed_at is not None


def setup_state(cfg: ScenarioConfig) -> AmmState:
    state = AmmState()
    state.open_account(LIQUIDITY_PROVIDER)
    for p in cfg.pools:
        for token, amount in zip(p.tokens, p.reserves):
            state.mint(LIQUIDITY_PROVIDER, token, amount)
        create_pool(state, LIQUIDITY_PROVIDER, p.tokens[0], p.tokens[1], *p.reserves)
    accounts = derive_accounts(cfg.seed, cfg.generator.accounts)
    for a in accounts:
        state.open_account(a.address)
    tokens = sorted({t for p in cfg.pools for t in p.tokens})
    fund_and_approve(state, accounts, {t: cfg.account_funding for t in tokens})
    return state


def run_scenario(cfg: ScenarioConfig) -> SimulationResult:
    cfg.validate()
    state = setup_state(cfg)
    schedule = merge_logs(split_by_instance(build_schedule(cfg.generator)))

    pipeline = L1Pipeline(cfg.pipeline)

    def on_seal(mb: Miniblock, t: float) -> bool:
        return pipeline.on_miniblock(mb, t) is not None

    seq = Sequencer(cfg.sequencer, state, on_seal=on_seal)
    for rec in schedule:
        seq.submit(rec.to_tx(), rec.send_time, rec.instance)
    seq.run_until_idle()
    if seq.failed_at is None:
        pipeline.drain(seq.now)

    windows = {start: end for start, end in seq.finalize_windows}
    records = list(seq.log)
    for batch in pipeline.batches:
        extra = None
        if batch.requested_at in windows:
            extra = {"finalize_pause": [round(batch.requested_at, 6),
                                        round(windows[batch.requested_at], 6)]}
        for r in L1Pipeline.batch_events(batch, extra):
            if seq.failed_at is None or r.t <= seq.failed_at:
                records.append(r)
    records.sort(key=lambda r: r.t)
    return SimulationResult(cfg, records, state, seq.miniblocks, pipeline.batches,
                            seq.finalize_windows, seq.failed_at)
