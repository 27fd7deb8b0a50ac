"""Token and cost accounting for model calls."""

from __future__ import annotations

import json
import math
import threading
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable

TABLE_COLUMNS = ("Total Tokens (M)", "Total Cost (USD)", "Runtime (min)")


@dataclass(frozen=True)
class Pricing:
    """Currency per one million tokens."""

    input_per_1m: float = 2.50
    output_per_1m: float = 10.00

    def cost(self, input_tokens: int, output_tokens: int) -> float:
        return (input_tokens * self.input_per_1m + output_tokens * self.output_per_1m) / 1_000_000


@dataclass(frozen=True)
class UsageEntry:
    call_site: str
    input_tokens: int
    output_tokens: int
    wall_ms: float


def estimate_tokens(text: str) -> int:
    return math.ceil(len(text) / 4)


@dataclass
class UsageLedger:
    entries: list[UsageEntry] = field(default_factory=list)
    pricing: Pricing = field(default_factory=Pricing)
    elapsed_ms: float | None = None
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def append(self, entry: UsageEntry) -> None:
        with self._lock:
            self.entries.append(entry)

    def record(self, call_site: str, input_tokens: int, output_tokens: int, wall_ms: float) -> UsageEntry:
        entry = UsageEntry(call_site, int(input_tokens), int(output_tokens), float(wall_ms))
        self.append(entry)
        return entry

    @property
    def input_tokens(self) -> int:
        return sum(e.input_tokens for e in self.entries)

    @property
    def output_tokens(self) -> int:
        return sum(e.output_tokens for e in self.entries)

    @property
    def total_tokens(self) -> int:
        return self.input_tokens + self.output_tokens

    @property
    def total_cost(self) -> float:
        return self.pricing.cost(self.input_tokens, self.output_tokens)

    @property
    def runtime_ms(self) -> float:
        if self.elapsed_ms is not None:
            return self.elapsed_ms
        return math.fsum(e.wall_ms for e in self.entries)

    def merge(self, other: UsageLedger) -> UsageLedger:
        """Combined ledger of two runs; runtimes add up."""
        if other.pricing != self.pricing:
            raise ValueError("cannot merge ledgers with different pricing")
        elapsed = None
        if self.elapsed_ms is not None or other.elapsed_ms is not None:
            elapsed = self.runtime_ms + other.runtime_ms
        return UsageLedger(list(self.entries) + list(other.entries), self.pricing, elapsed)

    def to_dict(self) -> dict[str, Any]:
        return {
            "pricing": asdict(self.pricing),
            "elapsed_ms": self.elapsed_ms,
            "entries": [asdict(e) for e in self.entries],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> UsageLedger:
        return cls(
            [UsageEntry(**e) for e in data.get("entries", [])],
            Pricing(**data.get("pricing", {})),
            data.get("elapsed_ms"),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> UsageLedger:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def merge_ledgers(ledgers: Iterable[UsageLedger], pricing: Pricing | None = None) -> UsageLedger:
    ledgers = list(ledgers)
    if pricing is None:
        pricing = ledgers[0].pricing if ledgers else Pricing()
    total = UsageLedger(pricing=pricing)
    for ledger in ledgers:
        total = total.merge(ledger)
    return total


def ledger_report(ledger: UsageLedger) -> dict[str, Any]:
    runtime_min = ledger.runtime_ms / 60_000
    return {
        "calls": len(ledger.entries),
        "input_tokens": ledger.input_tokens,
        "output_tokens": ledger.output_tokens,
        "total_tokens": ledger.total_tokens,
        "total_cost": ledger.total_cost,
        "runtime": runtime_min,
        "row": {
            TABLE_COLUMNS[0]: ledger.total_tokens / 1_000_000,
            TABLE_COLUMNS[1]: ledger.total_cost,
            TABLE_COLUMNS[2]: runtime_min,
        },
    }
