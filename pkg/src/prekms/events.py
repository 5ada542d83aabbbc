"""Append-only JSON event log shared by the audit authority and simulator.

Events are plain dicts with a height and type; the canonical NDJSON form is
what replay determinism is measured on (the log hash is part of SimMetrics).
"""

from __future__ import annotations

import hashlib
import json


class EventLog:
    def __init__(self):
        self.events: list[dict] = []

    def emit(self, height: int, type: str, **fields) -> dict:
        event = {"height": height, "type": type, **fields}
        self.events.append(event)
        return event

    def of_type(self, type: str) -> list[dict]:
        return [e for e in self.events if e["type"] == type]

    def to_ndjson(self) -> str:
        return "\n".join(json.dumps(e, sort_keys=True) for e in self.events) + (
            "\n" if self.events else ""
        )

    def digest(self) -> str:
        return hashlib.sha256(self.to_ndjson().encode()).hexdigest()
