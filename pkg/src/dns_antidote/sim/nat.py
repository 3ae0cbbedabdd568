"""NAT models sitting between the resolver and the network."""

from __future__ import annotations

import itertools
from enum import StrEnum

from ..core.resolver import Endpoint

DEFAULT_PUBLIC_IP = "203.0.113.1"


class NatMode(StrEnum):
    PASSTHROUGH = "passthrough"
    SEQUENTIAL_PORTS = "sequential-ports"
    SINGLE_IP_MASQUERADE = "single-ip-masquerade"


class NatModel:
    """Translate outbound source endpoints and map replies back.

    SequentialPorts hands out external ports from a counter, so an attacker who
    sees a single query of ours can predict the next one: the simulator models
    that by granting the attacker the port. SingleIpMasquerade rewrites every
    source address to one public address, which cancels an address pool.
    """

    def __init__(
        self,
        mode: NatMode = NatMode.PASSTHROUGH,
        *,
        public_ip: str = DEFAULT_PUBLIC_IP,
        first_port: int = 20000,
    ) -> None:
        self.mode = mode
        self.public_ip = public_ip
        self._ports = itertools.count(first_port)
        self._outbound: dict[Endpoint, Endpoint] = {}
        self._inbound: dict[Endpoint, Endpoint] = {}

    @property
    def exposed_fields(self) -> frozenset[str]:
        """Tuple fields the NAT makes predictable to an off-path attacker."""
        if self.mode is NatMode.SEQUENTIAL_PORTS:
            return frozenset({"port"})
        if self.mode is NatMode.SINGLE_IP_MASQUERADE:
            return frozenset({"src_ip"})
        return frozenset()

    def external_addresses(self, pool: tuple[str, ...]) -> tuple[str, ...]:
        if self.mode is NatMode.SINGLE_IP_MASQUERADE:
            return (self.public_ip,)
        return pool

    def outbound(self, local: Endpoint) -> Endpoint:
        if self.mode is NatMode.PASSTHROUGH:
            return local
        mapped = self._outbound.get(local)
        if mapped is not None:
            return mapped
        if self.mode is NatMode.SEQUENTIAL_PORTS:
            mapped = Endpoint(local.host, 1024 + next(self._ports) % 64512)
        else:
            port = local.port
            while Endpoint(self.public_ip, port) in self._inbound:
                port = 1024 + (port - 1023) % 64512
            mapped = Endpoint(self.public_ip, port)
        self._outbound[local] = mapped
        self._inbound[mapped] = local
        return mapped

    def inbound(self, external: Endpoint) -> Endpoint | None:
        if self.mode is NatMode.PASSTHROUGH:
            return external
        return self._inbound.get(external)
