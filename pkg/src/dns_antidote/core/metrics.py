"""Monotone counters shared by the resolver engine and the gateway."""

import threading

COUNTER_NAMES = (
    "queries",
    "cache_hits",
    "mismatched_responses",
    "sandwich_activations",
    "sandwich_restarts",
    "accepted",
    "servfail",
    "malformed",
    "unsolicited",
)


class Counters:
    """Thread-safe monotone counters."""

    def __init__(self) -> None:
        self._values = dict.fromkeys(COUNTER_NAMES, 0)
        self._lock = threading.Lock()

    def increment(self, name: str, amount: int = 1) -> None:
        if name not in self._values:
            raise KeyError(f"unknown counter '{name}'")
        if amount < 0:
            raise ValueError("counters never decrease")
        with self._lock:
            self._values[name] += amount

    def __getitem__(self, name: str) -> int:
        return self._values[name]

    def snapshot(self) -> dict[str, int]:
        with self._lock:
            return dict(self._values)

    def render(self) -> str:
        """Plain-text dump, one `name value` pair per line."""
        return "".join(f"{name} {value}\n" for name, value in self.snapshot().items())
