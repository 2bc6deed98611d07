"""Per-host discovery agent that tags connections with identifiers.

Egress: a target process writing to a socket marks that socket as owned;
the first payload-bearing segment leaving an owned socket gets a fresh
identifier in a TCP option. Ingress: a tagged segment queued on a socket is
remembered until a process reads from that socket, at which point the reader
is linked to the identifier and becomes a target itself.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from typing import Optional, Protocol

from .endpoint import ProcessRef, Socket
from .netsim import SimWorld
from .packet import (
    AlreadyTagged,
    DiscoveryIdentifier,
    NoOptionSpace,
    Packet,
    extract_identifier,
    inject_identifier,
)

log = logging.getLogger(__name__)

SENDER = "sender"
RECEIVER = "receiver"
MANUAL = "manual"
DISCOVERED = "discovered"


class ForeignProcess(ValueError):
    """A process was registered with an agent on a different host."""


@dataclass(frozen=True)
class DiscoveryEvent:
    id: DiscoveryIdentifier
    endpoint: ProcessRef
    role: str
    time: int
    # Sender side only: True when the tagging socket opened the connection.
    initiator: Optional[bool] = None


class EventSink(Protocol):
    def ingest(self, event) -> None: ...

    def note_activity(self, ident: DiscoveryIdentifier, time: int) -> None: ...


class IdentifierSource:
    """8-byte per-agent nonce followed by an 8-byte counter."""

    def __init__(self, seed: int, host: str):
        self.nonce = hashlib.sha256(f"{seed}:{host}".encode()).digest()[:8]
        self.counter = 0

    def next(self) -> DiscoveryIdentifier:
        self.counter += 1
        return DiscoveryIdentifier(self.nonce + self.counter.to_bytes(8, "big"))


class RippleAgent:
    def __init__(self, world: SimWorld, host: str, sink: EventSink, seed: int = 0):
        if host not in world.machines:
            raise ValueError(f"unknown host {host}")
        self.world = world
        self.host = host
        self.sink = sink
        self.ids = IdentifierSource(seed, host)
        self.targets: dict[ProcessRef, str] = {}
        self.owned: dict[Socket, ProcessRef] = {}
        self.sent: set[Socket] = set()
        self.pending: dict[Socket, DiscoveryIdentifier] = {}
        self.linked: dict[Socket, DiscoveryIdentifier] = {}
        self.discovered_via: dict[ProcessRef, DiscoveryIdentifier] = {}
        self.injections = 0
        self.skipped_no_room = 0
        world.attach(host, self)

    def register_target(self, process: ProcessRef) -> None:
        if process.host != self.host:
            raise ForeignProcess(f"{process} runs on {process.host}, not {self.host}")
        self.targets.setdefault(process, MANUAL)

    def is_target(self, process: ProcessRef) -> bool:
        return process in self.targets

    # -- egress ------------------------------------------------------------------

    def on_send(self, process: ProcessRef, socket: Socket, packet: Optional[Packet] = None) -> None:
        if process in self.targets and socket not in self.owned:
            self.owned[socket] = process

    def on_transmit(self, packet: Packet, socket: Socket) -> Packet:
        if socket not in self.owned or socket in self.sent or not packet.payload:
            return packet
        ident = self.ids.next()
        try:
            tagged = inject_identifier(packet, ident)
        except NoOptionSpace:
            # Leave the flag clear; the next data segment on this socket retries.
            self.skipped_no_room += 1
            log.debug("%s: no option space on %r, retrying later", self.host, socket)
            return packet
        except AlreadyTagged:
            return packet
        self.sent.add(socket)
        self.injections += 1
        self.sink.ingest(
            DiscoveryEvent(ident, self.owned[socket], SENDER, self.world.now, initiator=socket.is_client)
        )
        return tagged

    # -- ingress -----------------------------------------------------------------

    def on_data_queued(self, socket: Socket, packet: Packet) -> None:
        ident = extract_identifier(packet)
        if ident is not None:
            self.pending[socket] = ident
        elif socket in self.linked:
            self.sink.note_activity(self.linked[socket], self.world.now)

    def on_recv(self, process: ProcessRef, socket: Socket) -> None:
        ident = self.pending.pop(socket, None)
        if ident is None:
            return
        self.linked[socket] = ident
        self.sink.ingest(DiscoveryEvent(ident, process, RECEIVER, self.world.now))
        if process not in self.targets:
            self.targets[process] = DISCOVERED
            self.discovered_via[process] = ident
            log.debug("%s: %s discovered via %s", self.host, process, ident)
