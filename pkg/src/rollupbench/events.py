"""Event records and the JSON-lines event log shared by ``run`` and ``analyze``."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional

SENT = "sent"
INCLUDED = "included"
MINIBLOCK_SEALED = "miniblock_sealed"
BATCH_SEALED = "batch_sealed"
COMMIT = "l1_mined_CommitBlocks"
PROVE = "l1_mined_PublishProofBlocksOnChain"
EXECUTE = "l1_mined_ExecuteBlocks"
SEQUENCER_FAILED = "sequencer_failed"

KINDS = frozenset({SENT, INCLUDED, MINIBLOCK_SEALED, BATCH_SEALED,
                   COMMIT, PROVE, EXECUTE, SEQUENCER_FAILED})

_REQUIRED = {
    SENT: ("tx_id",),
    INCLUDED: ("tx_id", "miniblock"),
    MINIBLOCK_SEALED: ("miniblock",),
    BATCH_SEALED: ("batch",),
    COMMIT: ("batch",),
    PROVE: ("batch",),
    EXECUTE: ("batch",),
    SEQUENCER_FAILED: (),
}

T_DIGITS = 6


class MalformedLine(ValueError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no


class UnknownEventKind(ValueError):
    pass


@dataclass
class EventRecord:
    kind: str
    t: float
    tx_id: Optional[str] = None
    miniblock: Optional[int] = None
    batch: Optional[int] = None
    payload: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UnknownEventKind(self.kind)
        if self.t < 0:
            raise ValueError(f"negative timestamp {self.t}")
        for name in _REQUIRED[self.kind]:
            if getattr(self, name) is None:
                raise ValueError(f"{self.kind} event needs {name}")

    def to_line(self) -> str:
        # t is written with a fixed number of decimals so logs are byte-stable
        rest = {"tx_id": self.tx_id, "miniblock": self.miniblock,
                "batch": self.batch, "payload": self.payload or None}
        body = json.dumps({k: v for k, v in rest.items() if v is not None}, sort_keys=True)
        head = f'{{"kind": {json.dumps(self.kind)}, "t": {self.t:.{T_DIGITS}f}'
        return head + ("}" if body == "{}" else ", " + body[1:])


def write_event_log(path: Path, records: Iterable[EventRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(r.to_line() + "\n")


def parse_event_line(line: str, line_no: int) -> EventRecord:
    try:
        raw = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedLine(line_no, str(exc)) from None
    if not isinstance(raw, dict) or "kind" not in raw or "t" not in raw:
        raise MalformedLine(line_no, "expected an object with 'kind' and 't'")
    if raw["kind"] not in KINDS:
        raise UnknownEventKind(f"line {line_no}: {raw['kind']!r}")
    extra = set(raw) - {"kind", "t", "tx_id", "miniblock", "batch", "payload"}
    if extra:
        raise MalformedLine(line_no, f"unexpected fields {sorted(extra)}")
    try:
        return EventRecord(kind=raw["kind"], t=float(raw["t"]), tx_id=raw.get("tx_id"),
                           miniblock=raw.get("miniblock"), batch=raw.get("batch"),
                           payload=raw.get("payload", {}))
    except (TypeError, ValueError) as exc:
        raise MalformedLine(line_no, str(exc)) from None


def parse_event_log(path: Path) -> List[EventRecord]:
    """Strict JSON-lines parse, returned stably sorted by ``t``."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            records.append(parse_event_line(line, line_no))
    records.sort(key=lambda r: r.t)
    return records
