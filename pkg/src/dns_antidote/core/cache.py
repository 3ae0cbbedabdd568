"""TTL cache for accepted answers, keyed case-insensitively."""

from __future__ import annotations

import logging
import threading
from collections import OrderedDict
from collections.abc import Callable
from dataclasses import dataclass
from enum import StrEnum

from ..utils.log import log_event
from .wire import DnsName, Rcode, RecordClass, ResourceRecord

logger = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class CacheKey:
    """(name, type, class) with the name case-folded; 0x20 masks never reach keys."""

    name: DnsName
    qtype: int
    qclass: int = RecordClass.IN

    @classmethod
    def of(cls, name: DnsName, qtype: int, qclass: int = RecordClass.IN) -> CacheKey:
        return cls(name.folded(), qtype, qclass)


class AcceptPath(StrEnum):
    """How a response earned its way into the cache."""

    NORMAL = "normal"
    SANDWICH = "sandwich"
    ACCEPT_FIRST = "accept-first"


@dataclass(frozen=True, slots=True)
class Provenance:
    path: AcceptPath
    serial: int
    tag: int | None = None
    session: str | None = None


@dataclass(frozen=True, slots=True)
class CacheConfig:
    max_entries: int = 10_000
    max_ttl: int = 86_400
    negative_ttl_cap: int = 300


@dataclass(frozen=True, slots=True)
class CacheEntry:
    key: CacheKey
    records: tuple[ResourceRecord, ...]
    inserted_at: float
    ttl: int
    rcode: int = Rcode.NOERROR
    provenance: Provenance | None = None

    @property
    def expires_at(self) -> float:
        return self.inserted_at + self.ttl

    def is_fresh(self, now: float) -> bool:
        """Expiry is exclusive: at inserted_at + ttl the entry is gone."""
        return now < self.expires_at


class DnsCache:
    """Bounded LRU cache with TTL expiry.

    Every write is reported to `on_write` listeners so callers can audit the
    provenance of cached data.
    """

    def __init__(
        self,
        config: CacheConfig | None = None,
        on_write: Callable[[CacheEntry], None] | None = None,
    ) -> None:
        self.config = config or CacheConfig()
        self._entries: OrderedDict[CacheKey, CacheEntry] = OrderedDict()
        self._lock = threading.Lock()
        self._listeners: list[Callable[[CacheEntry], None]] = []
        if on_write is not None:
            self._listeners.append(on_write)

    def add_listener(self, listener: Callable[[CacheEntry], None]) -> None:
        self._listeners.append(listener)

    def put(
        self,
        key: CacheKey,
        records: tuple[ResourceRecord, ...],
        now: float,
        ttl: int,
        *,
        rcode: int = Rcode.NOERROR,
        provenance: Provenance | None = None,
    ) -> CacheEntry | None:
        """Store records under key, overwriting any previous entry.

        Returns:
            The stored entry, or None when ttl <= 0 (never cached)
        """
        if ttl <= 0:
            return None
        entry = CacheEntry(
            key=key,
            records=records,
            inserted_at=now,
            ttl=min(ttl, self.config.max_ttl),
            rcode=rcode,
            provenance=provenance,
        )
        with self._lock:
            self._entries[key] = entry
            self._entries.move_to_end(key)
            while len(self._entries) > self.config.max_entries:
                self._entries.popitem(last=False)
        log_event(
            logger,
            "cache_write",
            provenance.session if provenance else None,
            level=logging.DEBUG,
            key=key.name,
            qtype=key.qtype,
            ttl=entry.ttl,
            path=provenance.path if provenance else "-",
        )
        for listener in self._listeners:
            listener(entry)
        return entry

    def get(self, key: CacheKey, now: float) -> CacheEntry | None:
        with self._lock:
            entry = self._entries.get(key)
            if entry is None:
                return None
            if not entry.is_fresh(now):
                del self._entries[key]
                return None
            self._entries.move_to_end(key)
            return entry

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: object) -> bool:
        return key in self._entries

    def clear(self) -> None:
        with self._lock:
            self._entries.clear()
