"""Append-only record of every mechanism that touched private data.

JSON layout (field names are part of the checkpoint and manifest formats)::

    {
      "delta_target": 1e-05,
      "entries": [
        {"mechanism": "subsampled_gaussian", "params": {"q": 0.00256, "sigma": 1.1}, "label": "dpsgd"},
        {"mechanism": "gaussian", "params": {"epsilon": 0.5, "delta": 1e-06}, "label": "dp_pca"},
        {"mechanism": "laplace", "params": {"epsilon": 0.5}, "label": "support"}
      ]
    }

``subsampled_gaussian`` entries are composed in RDP; ``gaussian`` and
``laplace`` entries carry their own (epsilon, delta) and add linearly.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field

from ..errors import FormatError, ParameterError

MECHANISMS = ("subsampled_gaussian", "gaussian", "laplace")

_REQUIRED = {
    "subsampled_gaussian": ("q", "sigma"),
    "gaussian": ("epsilon", "delta"),
    "laplace": ("epsilon",),
}


@dataclass(frozen=True)
class LedgerEntry:
    mechanism: str
    params: dict
    label: str = ""

    def __post_init__(self):
        if self.mechanism not in MECHANISMS:
            raise ParameterError(f"unknown mechanism {self.mechanism!r}")
        missing = [k for k in _REQUIRED[self.mechanism] if k not in self.params]
        if missing:
            raise ParameterError(f"{self.mechanism} entry is missing {missing}")

    def to_dict(self):
        return {"mechanism": self.mechanism, "params": dict(self.params), "label": self.label}

    @classmethod
    def from_dict(cls, d):
        return cls(mechanism=d["mechanism"], params=dict(d["params"]), label=d.get("label", ""))


@dataclass
class PrivacyLedger:
    delta_target: float = 1e-5
    entries: list = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 < self.delta_target < 1.0:
            raise ParameterError("delta_target must lie in (0, 1)")
        self.entries = list(self.entries)
        self._lock = threading.Lock()

    def __len__(self):
        return len(self.entries)

    # the lock is per-process state; pickling carries only the data
    def __getstate__(self):
        return {"delta_target": self.delta_target, "entries": list(self.entries)}

    def __setstate__(self, state):
        self.__init__(state["delta_target"], state["entries"])

    def __eq__(self, other):
        if not isinstance(other, PrivacyLedger):
            return NotImplemented
        return self.delta_target == other.delta_target and self.entries == other.entries

    def append(self, mechanism, label="", **params) -> LedgerEntry:
        entry = LedgerEntry(mechanism, params, label)
        with self._lock:
            self.entries.append(entry)
        return entry

    def extend(self, entries):
        entries = list(entries)
        with self._lock:
            self.entries.extend(entries)

    def snapshot(self) -> "PrivacyLedger":
        with self._lock:
            return PrivacyLedger(self.delta_target, list(self.entries))

    def compose(self):
        from .accountant import compose_epsilon

        return compose_epsilon(self)

    @property
    def epsilon(self) -> float:
        return self.compose()[0]

    def to_dict(self):
        with self._lock:
            entries = [e.to_dict() for e in self.entries]
        return {"delta_target": self.delta_target, "entries": entries}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(float(d["delta_target"]), [LedgerEntry.from_dict(e) for e in d["entries"]])
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed ledger record: {exc}") from exc

    @classmethod
    def from_json(cls, text):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(f"ledger is not valid JSON: {exc}") from exc
        return cls.from_dict(data)
