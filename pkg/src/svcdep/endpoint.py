"""Simplified TCP endpoints and the process model.

Processes own sockets inside a network namespace. Connections go through a
SYN / SYN-ACK / ACK exchange; each ``send`` becomes exactly one data segment.
Links are lossless and ordered, so there is no retransmission or reordering
machinery.

Machines expose four hook points that observers attach to:

``on_send(process, socket, packet)``
    a process writes to a socket (before the segment is built into the
    egress path);
``on_transmit(packet, socket) -> packet``
    the segment leaves the socket for the network; the only hook allowed to
    replace the packet;
``on_data_queued(socket, packet)``
    an inbound data segment is queued on a socket;
``on_recv(process, socket)``
    a process reads from a socket.
"""

from __future__ import annotations

import ipaddress
import logging
from dataclasses import dataclass
from typing import Callable, Optional

from .nat import ConntrackEntry
from .netsim import ACTION, Node, SimWorld
from .packet import Packet, TcpFlags, TcpOption

log = logging.getLogger(__name__)

EPHEMERAL_BASE = 49152
ANY = ipaddress.ip_address("0.0.0.0")

LISTENING = "listening"
CONNECTING = "connecting"
ESTABLISHED = "established"
CLOSED = "closed"


class EndpointError(RuntimeError):
    pass


class AddressInUse(EndpointError):
    pass


class SocketClosed(EndpointError):
    pass


class NoRoute(EndpointError):
    pass


@dataclass(frozen=True, order=True)
class ProcessRef:
    host: str
    pid: int
    cgroup: str = ""
    name: str = ""

    @property
    def node_id(self) -> str:
        return f"{self.host}/{self.pid}"

    def __str__(self) -> str:
        return f"{self.name}[{self.host}/{self.pid}]"


Address = tuple  # (ipaddress, port)


class Socket:
    """A socket. Identity-hashed; ``sid`` is unique and stable within a world."""

    def __init__(self, stack: "TcpStack", owner: ProcessRef, local: Address, remote: Optional[Address], role: str):
        self.stack = stack
        self.sid = stack.world.next_socket_id()
        self.owner = owner
        self.local = local
        self.remote = remote
        self.role = role  # "listener" | "client" | "server"
        self.state = LISTENING if role == "listener" else CONNECTING
        self.snd_nxt = (self.sid * 104729) & 0xFFFFFFFF
        self.rcv_nxt = 0
        self.tcp_options: tuple[TcpOption, ...] = ()
        self._backlog: list[bytes] = []
        self.on_data: Optional[Callable[["Socket", bytes], None]] = None
        self.on_established: Optional[Callable[["Socket"], None]] = None
        self.on_close: Optional[Callable[["Socket"], None]] = None
        self.on_refused: Optional[Callable[["Socket"], None]] = None
        self.on_accept: Optional[Callable[["Socket"], None]] = None

    @property
    def is_client(self) -> bool:
        return self.role == "client"

    @property
    def node(self) -> Node:
        return self.stack.node

    def __repr__(self) -> str:
        return f"Socket#{self.sid}({self.owner.name} {_fmt(self.local)}->{_fmt(self.remote)} {self.state})"


def _fmt(addr: Optional[Address]) -> str:
    return "-" if addr is None else f"{addr[0]}:{addr[1]}"


class TcpStack:
    """Transport layer of one network namespace."""

    def __init__(self, node: Node):
        self.node = node
        self.world: SimWorld = node.world
        self.listeners: dict[tuple, Socket] = {}
        self.connections: dict[tuple, Socket] = {}
        self._next_port = EPHEMERAL_BASE
        node.stack = self

    @property
    def hooks(self) -> list:
        return self.node.machine.hooks

    def _ephemeral_port(self, local_ip) -> int:
        while True:
            port = self._next_port
            self._next_port += 1
            if self._next_port > 65535:
                self._next_port = EPHEMERAL_BASE
            if not any(k[0] == local_ip and k[1] == port for k in self.connections) and not self._port_bound(port):
                return port

    def _port_bound(self, port: int) -> bool:
        return any(p == port for (_, p) in self.listeners)

    # -- socket API ----------------------------------------------------------

    def listen(self, process: ProcessRef, ip, port: int) -> Socket:
        ip = ipaddress.ip_address(ip)
        for (lip, lport) in self.listeners:
            if lport == port and (lip == ip or lip == ANY or ip == ANY):
                raise AddressInUse(f"{self.node.name}: port {port} already bound")
        if ip != ANY and not self.node.is_local(ip):
            raise EndpointError(f"{self.node.name} does not own {ip}")
        sock = Socket(self, process, (ip, port), None, "listener")
        self.listeners[(ip, port)] = sock
        return sock

    def connect(self, process: ProcessRef, ip, port: int) -> Socket:
        dst = ipaddress.ip_address(ip)
        if self.node.is_local(dst):
            src_ip = dst
        else:
            hop = self.node.lookup(dst)
            if hop is None:
                raise NoRoute(f"{self.node.name}: no route to {dst}")
            src_ip = hop[0].address
        sport = self._ephemeral_port(src_ip)
        sock = Socket(self, process, (src_ip, sport), (dst, port), "client")
        self.connections[(src_ip, sport, dst, port)] = sock
        self._emit(sock, TcpFlags.SYN)
        sock.snd_nxt = (sock.snd_nxt + 1) & 0xFFFFFFFF
        return sock

    def send(self, sock: Socket, payload: bytes) -> None:
        if sock.state == CLOSED:
            raise SocketClosed(f"send on closed socket {sock!r}")
        if sock.role == "listener":
            raise EndpointError("cannot send on a listening socket")
        if sock.state == CONNECTING:
            sock._backlog.append(bytes(payload))
            return
        self._send_data(sock, bytes(payload))

    def close(self, sock: Socket) -> None:
        if sock.state == CLOSED:
            return
        if sock.role == "listener":
            self.listeners.pop(sock.local, None)
            sock.state = CLOSED
            return
        was_open = sock.state == ESTABLISHED
        sock.state = CLOSED
        if was_open:
            self._emit(sock, TcpFlags.FIN | TcpFlags.ACK)
        self.world.app_log.append((self.world.now, sock.owner.node_id, sock.sid, "close", b""))

    # -- segment construction ------------------------------------------------

    def _segment(self, sock: Socket, flags: int, payload: bytes = b"") -> Packet:
        (lip, lport), (rip, rport) = sock.local, sock.remote
        return Packet.create(
            lip,
            rip,
            lport,
            rport,
            payload,
            flags=flags,
            seq=sock.snd_nxt,
            ack=sock.rcv_nxt if flags & TcpFlags.ACK else 0,
            options=sock.tcp_options if payload else (),
        )

    def _emit(self, sock: Socket, flags: int, payload: bytes = b"") -> None:
        pkt = self._segment(sock, flags, payload)
        for h in self.hooks:
            pkt = h.on_transmit(pkt, sock)
        self.node.output(pkt)

    def _send_data(self, sock: Socket, payload: bytes) -> None:
        pkt = self._segment(sock, TcpFlags.PSH | TcpFlags.ACK, payload)
        for h in self.hooks:
            h.on_send(sock.owner, sock, pkt)
        for h in self.hooks:
            pkt = h.on_transmit(pkt, sock)
        sock.snd_nxt = (sock.snd_nxt + len(payload)) & 0xFFFFFFFF
        self.node.output(pkt)

    def _rst(self, pkt: Packet) -> None:
        t = pkt.tcp
        reply = Packet.create(
            pkt.ip.dst,
            pkt.ip.src,
            t.dst_port,
            t.src_port,
            flags=TcpFlags.RST | TcpFlags.ACK,
            ack=(t.seq + len(pkt.payload) + (1 if t.flags & TcpFlags.SYN else 0)) & 0xFFFFFFFF,
        )
        self.node.output(reply)

    # -- inbound ---------------------------------------------------------------

    def deliver(self, pkt: Packet, entry: Optional[ConntrackEntry] = None) -> None:
        t = pkt.tcp
        key = (pkt.ip.dst, t.dst_port, pkt.ip.src, t.src_port)
        sock = self.connections.get(key)
        if sock is None:
            if t.flags & TcpFlags.SYN and not t.flags & TcpFlags.ACK:
                listener = self.listeners.get((pkt.ip.dst, t.dst_port)) or self.listeners.get((ANY, t.dst_port))
                if listener is not None and listener.state == LISTENING:
                    self._passive_open(listener, pkt)
                    return
            if not t.flags & TcpFlags.RST:
                self._rst(pkt)
            return
        if t.flags & TcpFlags.RST:
            self._reset(sock)
            return
        if sock.state == CONNECTING:
            if sock.role == "client" and t.flags & TcpFlags.SYN and t.flags & TcpFlags.ACK:
                sock.rcv_nxt = (t.seq + 1) & 0xFFFFFFFF
                self._establish(sock)
                self._emit(sock, TcpFlags.ACK)
                self._flush(sock)
                return
            if sock.role == "server" and t.flags & TcpFlags.ACK and not t.flags & TcpFlags.SYN:
                self._establish(sock)
                listener = sock._listener
                if listener.on_accept is not None:
                    listener.on_accept(sock)
                self._flush(sock)
                if not pkt.payload:
                    return
            else:
                return
        if sock.state == CLOSED:
            return
        if pkt.payload:
            self._receive_data(sock, pkt)
        if t.flags & TcpFlags.FIN:
            sock.rcv_nxt = (sock.rcv_nxt + 1) & 0xFFFFFFFF
            sock.state = CLOSED
            self.connections.pop(key, None)
            self.world.app_log.append((self.world.now, sock.owner.node_id, sock.sid, "peer-closed", b""))
            if sock.on_close is not None:
                sock.on_close(sock)

    def _passive_open(self, listener: Socket, syn: Packet) -> None:
        local = (syn.ip.dst, syn.tcp.dst_port)
        remote = (syn.ip.src, syn.tcp.src_port)
        child = Socket(self, listener.owner, local, remote, "server")
        child._listener = listener
        child.rcv_nxt = (syn.tcp.seq + 1) & 0xFFFFFFFF
        self.connections[(local[0], local[1], remote[0], remote[1])] = child
        self._emit(child, TcpFlags.SYN | TcpFlags.ACK)
        child.snd_nxt = (child.snd_nxt + 1) & 0xFFFFFFFF

    def _establish(self, sock: Socket) -> None:
        sock.state = ESTABLISHED
        self.world.app_log.append((self.world.now, sock.owner.node_id, sock.sid, "established", b""))
        if sock.on_established is not None:
            sock.on_established(sock)

    def _flush(self, sock: Socket) -> None:
        backlog, sock._backlog = sock._backlog, []
        for chunk in backlog:
            if sock.state != ESTABLISHED:
                break
            self._send_data(sock, chunk)

    def _reset(self, sock: Socket) -> None:
        prior = sock.state
        sock.state = CLOSED
        self.connections.pop((sock.local[0], sock.local[1], sock.remote[0], sock.remote[1]), None)
        outcome = "refused" if prior == CONNECTING else "reset"
        self.world.app_log.append((self.world.now, sock.owner.node_id, sock.sid, outcome, b""))
        if prior == CONNECTING and sock.on_refused is not None:
            sock.on_refused(sock)
        elif sock.on_close is not None:
            sock.on_close(sock)

    def _receive_data(self, sock: Socket, pkt: Packet) -> None:
        for h in self.hooks:
            h.on_data_queued(sock, pkt)
        sock.rcv_nxt = (sock.rcv_nxt + len(pkt.payload)) & 0xFFFFFFFF
        # Reads are immediate wakeups of the owning process.
        for h in self.hooks:
            h.on_recv(sock.owner, sock)
        self.world.app_log.append((self.world.now, sock.owner.node_id, sock.sid, "recv", pkt.payload))
        if sock.on_data is not None:
            sock.on_data(sock, pkt.payload)


def stack_of(node: Node) -> TcpStack:
    if node.stack is None:
        TcpStack(node)
    return node.stack


def spawn_process(world: SimWorld, node: str, name: str, cgroup: Optional[str] = None) -> ProcessRef:
    n = world.nodes[node]
    pid = world.next_pid(n.machine.name)
    ref = ProcessRef(n.machine.name, pid, cgroup or f"/system.slice/{name}.service", name)
    world.processes[ref] = n
    stack_of(n)
    return ref


def _stack_for(world: SimWorld, process: ProcessRef) -> TcpStack:
    try:
        return stack_of(world.processes[process])
    except KeyError:
        raise EndpointError(f"unknown process {process}") from None


def listen(world: SimWorld, process: ProcessRef, addr: tuple) -> Socket:
    return _stack_for(world, process).listen(process, addr[0], addr[1])


def connect(world: SimWorld, process: ProcessRef, dst: tuple) -> Socket:
    return _stack_for(world, process).connect(process, dst[0], dst[1])


def send(sock: Socket, payload: bytes) -> None:
    sock.stack.send(sock, payload)


def close(sock: Socket) -> None:
    sock.stack.close(sock)


class RequestReplyServer:
    """A service that answers every request chunk with one response chunk."""

    def __init__(self, world: SimWorld, process: ProcessRef, addr: tuple, respond: Callable[[bytes], bytes]):
        self.world = world
        self.process = process
        self.respond = respond
        self.listener = listen(world, process, addr)
        self.listener.on_accept = self._accept

    def _accept(self, sock: Socket) -> None:
        sock.on_data = self._on_data

    def _on_data(self, sock: Socket, data: bytes) -> None:
        if sock.state == ESTABLISHED:
            send(sock, self.respond(data))


class Forwarder:
    """Userspace port forwarder in the style of docker-proxy: every accepted
    connection gets its own backend connection and bytes are relayed both
    ways."""

    def __init__(self, world: SimWorld, process: ProcessRef, listen_port: int, target: tuple):
        self.world = world
        self.process = process
        self.target = (ipaddress.ip_address(target[0]), target[1])
        self.listener = listen(world, process, (ANY, listen_port))
        self.listener.on_accept = self._accept
        self.pairs: list[tuple[Socket, Socket]] = []

    def _accept(self, client: Socket) -> None:
        backend = connect(self.world, self.process, self.target)
        self.pairs.append((client, backend))

        def relay(dst: Socket) -> Callable[[Socket, bytes], None]:
            def on_data(_src: Socket, data: bytes) -> None:
                if dst.state != CLOSED:
                    send(dst, data)

            return on_data

        def closed(other: Socket) -> Callable[[Socket], None]:
            return lambda _s: close(other)

        client.on_data = relay(backend)
        backend.on_data = relay(client)
        client.on_close = closed(backend)
        backend.on_close = closed(client)
        backend.on_refused = closed(client)


def spawn_forwarder(world: SimWorld, host_node: str, listen_port: int, target: tuple) -> tuple[ProcessRef, Forwarder]:
    ip, port = target
    cmd = f"docker-proxy -proto tcp -host-ip 0.0.0.0 -host-port {listen_port} -container-ip {ip} -container-port {port}"
    proc = spawn_process(world, host_node, "docker-proxy", cgroup="/system.slice/docker.service")
    fwd = Forwarder(world, proc, listen_port, target)
    fwd.command = cmd
    return proc, fwd


def schedule_action(world: SimWorld, time: int, action: Callable[[], None]) -> None:
    world.at(time, ACTION, action)
