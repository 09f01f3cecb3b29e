"""Two interchangeable transports behind one channel interface.

A channel speaks to exactly one party. ``send`` is fire-and-forget;
``receive`` blocks for that party's next reply belonging to the expected
round, discarding stale-round replies with a warning. The in-process channel
pushes every message through the same encode/decode codec the TCP framing
uses, so tests on it exercise the real wire format. TCP frames are a 4-byte
big-endian payload length followed by the JSON-encoded message; the
aggregator listens, parties connect and register with their id.
"""

import logging
import socket
import struct
from collections import deque

from ..errors import PartyTimeoutError, ProtocolError
from .messages import FederationMessage, Register, Terminate, decode, encode

logger = logging.getLogger(__name__)

FRAME_HEADER = struct.Struct(">I")
MAX_FRAME_BYTES = 1 << 30


class InProcessChannel:
    """Synchronous channel wrapping a party object living in this process."""

    def __init__(self, party):
        self._party = party
        self._pending: deque[FederationMessage] = deque()
        self.party_id = party.party_id

    def send(self, message: FederationMessage) -> None:
        reply = self._party.handle(decode(encode(message)))
        if reply is not None:
            self._pending.append(decode(encode(reply)))

    def receive(self, expected_round: int, timeout: float | None = None) -> FederationMessage:
        while self._pending:
            reply = self._pending.popleft()
            if reply.round != expected_round:
                logger.warning(
                    "discarding stale reply from %s: round %s, expected %s",
                    self.party_id, reply.round, expected_round,
                )
                continue
            return reply
        raise PartyTimeoutError(self.party_id, "no reply pending")

    def close(self) -> None:
        pass


class InProcessTransport:
    def __init__(self, parties):
        self.channels = {party.party_id: InProcessChannel(party) for party in parties}

    def close(self) -> None:
        pass


def send_frame(sock: socket.socket, payload: bytes) -> None:
    sock.sendall(FRAME_HEADER.pack(len(payload)) + payload)


def recv_exact(sock: socket.socket, size: int) -> bytes:
    chunks = []
    remaining = size
    while remaining:
        chunk = sock.recv(remaining)
        if not chunk:
            raise ConnectionError("connection closed mid-frame")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def recv_frame(sock: socket.socket) -> bytes:
    (length,) = FRAME_HEADER.unpack(recv_exact(sock, FRAME_HEADER.size))
    if length > MAX_FRAME_BYTES:
        raise ProtocolError(f"frame of {length} bytes exceeds the maximum")
    return recv_exact(sock, length)


class TcpChannel:
    def __init__(self, sock: socket.socket, party_id: str):
        self._sock = sock
        self.party_id = party_id

    def send(self, message: FederationMessage) -> None:
        send_frame(self._sock, encode(message))

    def receive(self, expected_round: int, timeout: float | None = None) -> FederationMessage:
        self._sock.settimeout(timeout)
        while True:
            try:
                reply = decode(recv_frame(self._sock))
            except (TimeoutError, socket.timeout) as exc:
                raise PartyTimeoutError(self.party_id, str(exc)) from exc
            if reply.round != expected_round:
                logger.warning(
                    "discarding stale reply from %s: round %s, expected %s",
                    self.party_id, reply.round, expected_round,
                )
                continue
            return reply

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass


class TcpTransport:
    """Aggregator side: listen, accept, and map registrations to channels."""

    def __init__(self, server: socket.socket, channels: dict):
        self._server = server
        self.channels = channels

    @classmethod
    def listen(
        cls,
        host: str,
        port: int,
        expected_party_ids: list[str],
        timeout: float = 60.0,
    ) -> "TcpTransport":
        server = socket.create_server((host, port))
        server.settimeout(timeout)
        channels: dict[str, TcpChannel] = {}
        try:
            while set(channels) != set(expected_party_ids):
                try:
                    conn, _ = server.accept()
                except (TimeoutError, socket.timeout) as exc:
                    missing = sorted(set(expected_party_ids) - set(channels))
                    raise PartyTimeoutError(
                        ",".join(missing), "never connected"
                    ) from exc
                conn.settimeout(timeout)
                hello = decode(recv_frame(conn))
                if not isinstance(hello, Register):
                    conn.close()
                    raise ProtocolError(
                        f"expected a register message, got {hello.TYPE!r}"
                    )
                if hello.party_id not in expected_party_ids:
                    conn.close()
                    raise ProtocolError(f"unexpected party id {hello.party_id!r}")
                channels[hello.party_id] = TcpChannel(conn, hello.party_id)
        except Exception:
            for channel in channels.values():
                channel.close()
            server.close()
            raise
        return cls(server, channels)

    @property
    def bound_port(self) -> int:
        return self._server.getsockname()[1]

    def close(self) -> None:
        for channel in self.channels.values():
            channel.close()
        try:
            self._server.close()
        except OSError:
            pass


def run_party_client(
    host: str, port: int, party, connect_timeout: float = 60.0
) -> None:
    """Connect to the aggregator, register, and serve queries until told to stop."""
    sock = socket.create_connection((host, port), timeout=connect_timeout)
    try:
        sock.settimeout(None)
        send_frame(sock, encode(Register(party_id=party.party_id)))
        while True:
            message = decode(recv_frame(sock))
            reply = party.handle(message)
            if reply is not None:
                send_frame(sock, encode(reply))
            if isinstance(message, Terminate):
                break
    finally:
        sock.close()
