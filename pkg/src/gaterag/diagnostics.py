from __future__ import annotations

import threading
from collections import Counter
from dataclasses import dataclass, field


@dataclass
class Diagnostics:
    """Thread-safe counters plus a bounded list of human-readable notes."""

    counts: Counter = field(default_factory=Counter)
    notes: list[str] = field(default_factory=list)
    max_notes: int = 200
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def add(self, key: str, note: str | None = None, n: int = 1) -> None:
        with self._lock:
            self.counts[key] += n
            if note and len(self.notes) < self.max_notes:
                self.notes.append(f"{key}: {note}")

    def __getitem__(self, key: str) -> int:
        return self.counts[key]

    def to_dict(self) -> dict:
        return {"counts": dict(sorted(self.counts.items())), "notes": sorted(self.notes)}
