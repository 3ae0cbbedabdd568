"""Deterministic discrete-event network."""

from __future__ import annotations

import heapq
import itertools
import logging
import random
from collections.abc import Callable
from dataclasses import dataclass, field
from enum import StrEnum
from typing import Protocol

from ..core.resolver import Endpoint

logger = logging.getLogger(__name__)


class LatencyKind(StrEnum):
    FIXED = "fixed"
    UNIFORM = "uniform"


@dataclass(frozen=True, slots=True)
class LatencyModel:
    kind: LatencyKind = LatencyKind.FIXED
    low: float = 0.05
    high: float = 0.05

    def sample(self, rng: random.Random) -> float:
        if self.kind is LatencyKind.FIXED:
            return self.low
        return rng.uniform(self.low, self.high)


@dataclass(frozen=True, slots=True)
class LinkConfig:
    """One-way link behaviour.

    With probability `reorder_prob` a packet is held back by an extra uniform
    delay in [0, reorder_delay], which lets later packets overtake it.
    """

    latency: LatencyModel = field(default_factory=LatencyModel)
    loss: float = 0.0
    reorder_prob: float = 0.0
    reorder_delay: float = 0.02


@dataclass(frozen=True, slots=True)
class Datagram:
    src: Endpoint
    dst: Endpoint
    payload: bytes
    packet_id: int


class Node(Protocol):
    def receive(self, datagram: Datagram, now: float) -> None: ...


class SimNetwork:
    """Event queue ordered by (time, sequence) with addressable nodes."""

    def __init__(self, rng: random.Random, link: LinkConfig | None = None) -> None:
        self.rng = rng
        self.link = link or LinkConfig()
        self.now = 0.0
        self.events_processed = 0
        self.delivered = 0
        self.dropped = 0
        self._queue: list[tuple[float, int, Callable[[], None]]] = []
        self._sequence = itertools.count()
        self._packet_ids = itertools.count(1)
        self._nodes: dict[str, Node] = {}

    def attach(self, address: str, node: Node) -> None:
        self._nodes[address] = node

    def next_packet_id(self) -> int:
        return next(self._packet_ids)

    def schedule(self, at: float, action: Callable[[], None]) -> None:
        if at < self.now:
            at = self.now
        heapq.heappush(self._queue, (at, next(self._sequence), action))

    def send(
        self,
        src: Endpoint,
        dst: Endpoint,
        payload: bytes,
        *,
        arrival: float | None = None,
    ) -> int:
        """Queue a datagram; returns its packet id.

        `arrival` pins the delivery time and bypasses the link model.
        """
        packet_id = self.next_packet_id()
        datagram = Datagram(src, dst, payload, packet_id)
        if arrival is None:
            if self.link.loss and self.rng.random() < self.link.loss:
                self.dropped += 1
                return packet_id
            delay = self.link.latency.sample(self.rng)
            if self.link.reorder_prob and self.rng.random() < self.link.reorder_prob:
                delay += self.rng.uniform(0.0, self.link.reorder_delay)
            arrival = self.now + delay
        self.schedule(arrival, lambda: self._deliver(datagram))
        return packet_id

    def _deliver(self, datagram: Datagram) -> None:
        node = self._nodes.get(datagram.dst.host)
        if node is None:
            self.dropped += 1
            return
        self.delivered += 1
        node.receive(datagram, self.now)

    @property
    def idle(self) -> bool:
        return not self._queue

    def run(
        self, until: float = float("inf"), stop: Callable[[], bool] | None = None
    ) -> int:
        """Process events in timestamp order until `until`, `stop()` or drain."""
        processed = 0
        while self._queue:
            if stop is not None and stop():
                break
            at, _, action = self._queue[0]
            if at > until:
                break
            heapq.heappop(self._queue)
            self.now = at
            action()
            processed += 1
        self.events_processed += processed
        return processed
