"""Passive-observer comparators.

``FiveTupleObserver`` records connection tuples as the local socket sees them
and names the remote end by address alone. ``ConntrackObserver`` additionally
rewrites each tuple through the NAT state of its own machine, so the
collector can join the two ends of a connection on the tuple that crossed the
wire between hosts. Neither observer ever modifies a packet.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .endpoint import ProcessRef, Socket
from .nat import NatTable
from .netsim import ConntrackView, SimWorld
from .packet import FiveTuple, Packet

OUTBOUND = "outbound"
INBOUND = "inbound"
FIVETUPLE = "fivetuple"
CONNTRACK = "conntrack"


@dataclass(frozen=True)
class FlowRecord:
    host: str
    local_process: ProcessRef
    tuple: FiveTuple
    direction: str
    # True when the local socket opened the connection.
    client: bool
    time: int
    provenance: str = FIVETUPLE
    socket: int = 0


def fivetuple_observe(host: str, packet: Packet, direction: str, local_socket: Socket, time: int = 0) -> FlowRecord:
    return FlowRecord(
        host,
        local_socket.owner,
        packet.five_tuple(),
        direction,
        local_socket.is_client,
        time,
        FIVETUPLE,
        local_socket.sid,
    )


def _translate(tables: list[NatTable], t: FiveTuple, direction: str) -> FiveTuple:
    for table in tables:
        if direction == OUTBOUND:
            entry = table.lookup_orig(t)
            if entry is not None:
                t = entry.reply.inverted()
                continue
            entry = table.lookup_reply(t)
            if entry is not None:
                t = entry.orig.inverted()
        else:
            entry = table.lookup_reply(t.inverted())
            if entry is not None:
                t = entry.orig
                continue
            entry = table.lookup_orig(t.inverted())
            if entry is not None:
                t = entry.reply
    return t


def conntrack_observe(
    view: ConntrackView, host: str, packet: Packet, direction: str, local_socket: Socket, time: int = 0
) -> FlowRecord:
    """Like ``fivetuple_observe`` but reports the tuple as it crossed the
    machine boundary: post-SNAT for outbound traffic, pre-DNAT for inbound."""
    t = _translate(view.tables(), packet.five_tuple(), direction)
    return FlowRecord(host, local_socket.owner, t, direction, local_socket.is_client, time, CONNTRACK, local_socket.sid)


class _Observer:
    provenance = FIVETUPLE

    def __init__(self, world: SimWorld, host: str, sink):
        self.world = world
        self.host = host
        self.sink = sink
        self.records = 0
        world.attach(host, self)

    def _record(self, packet: Packet, direction: str, socket: Socket) -> FlowRecord:
        return fivetuple_observe(self.host, packet, direction, socket, self.world.now)

    def on_send(self, process: ProcessRef, socket: Socket, packet: Optional[Packet] = None) -> None:
        pass

    def on_transmit(self, packet: Packet, socket: Socket) -> Packet:
        if packet.payload:
            self.records += 1
            self.sink.ingest(self._record(packet, OUTBOUND, socket))
        return packet

    def on_data_queued(self, socket: Socket, packet: Packet) -> None:
        self.records += 1
        self.sink.ingest(self._record(packet, INBOUND, socket))

    def on_recv(self, process: ProcessRef, socket: Socket) -> None:
        pass


class FiveTupleObserver(_Observer):
    provenance = FIVETUPLE


class ConntrackObserver(_Observer):
    provenance = CONNTRACK

    def __init__(self, world: SimWorld, host: str, sink):
        super().__init__(world, host, sink)
        self.view = world.conntrack_view(host)

    def _record(self, packet: Packet, direction: str, socket: Socket) -> FlowRecord:
        return conntrack_observe(self.view, self.host, packet, direction, socket, self.world.now)
