"""
Two interchangeable transports carrying wire frames:

* channels: a pair of in-process queues; every message is still encoded and
  decoded so both transports exercise the same codec;
* TCP: one socket per client, frames read as header, then payload + crc.
"""

import logging
import queue
import socket
from typing import List, Tuple

from src.comm import wire
from src.comm.messages import RoundMessage, kind_name
from src.utils.errors import ProtocolError

logger = logging.getLogger(__name__)


class ConnectionClosed(ProtocolError):
    pass


class ReceiveTimeout(ProtocolError):
    pass


class Connection:
    """Message-level connection; records the kinds it sends and receives."""

    def __init__(self, name: str):
        self.name = name
        self.trace: List[Tuple[str, str]] = []

    def send(self, msg: RoundMessage) -> None:
        frame = wire.encode(msg)
        self._send_frame(frame)
        self.trace.append(("sent", kind_name(msg)))
        logger.debug(f"{self.name}: sent {kind_name(msg)} ({len(frame)} bytes)")

    def recv(self, timeout: float | None = None) -> RoundMessage:
        msg = wire.decode(self._recv_frame(timeout))
        self.trace.append(("received", kind_name(msg)))
        return msg

    def _send_frame(self, frame: bytes) -> None:
        raise NotImplementedError

    def _recv_frame(self, timeout: float | None) -> bytes:
        raise NotImplementedError

    def close(self) -> None:
        raise NotImplementedError


class ChannelConnection(Connection):
    _CLOSED = None

    def __init__(self, name: str, inbox: queue.Queue, outbox: queue.Queue):
        super().__init__(name)
        self.inbox = inbox
        self.outbox = outbox
        self._closed = False

    def _send_frame(self, frame: bytes) -> None:
        if self._closed:
            raise ConnectionClosed(f"{self.name}: send on closed channel")
        self.outbox.put(frame)

    def _recv_frame(self, timeout: float | None) -> bytes:
        try:
            frame = self.inbox.get(timeout=timeout)
        except queue.Empty:
            raise ReceiveTimeout(f"{self.name}: nothing received within {timeout}s") from None
        if frame is self._CLOSED:
            raise ConnectionClosed(f"{self.name}: peer closed the channel")
        return frame

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            self.outbox.put(self._CLOSED)


def channel_pair(name: str = "channel") -> Tuple[ChannelConnection, ChannelConnection]:
    """(server end, client end) of one in-process connection."""
    to_server, to_client = queue.Queue(), queue.Queue()
    return (ChannelConnection(f"{name}/server", to_server, to_client),
            ChannelConnection(f"{name}/client", to_client, to_server))


class SocketConnection(Connection):
    def __init__(self, sock: socket.socket, name: str):
        super().__init__(name)
        self.sock = sock
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def _send_frame(self, frame: bytes) -> None:
        try:
            self.sock.sendall(frame)
        except OSError as exc:
            raise ConnectionClosed(f"{self.name}: send failed: {exc}") from exc

    def _recv_exact(self, n: int) -> bytes:
        chunks, remaining = [], n
        while remaining:
            try:
                chunk = self.sock.recv(min(remaining, 1 << 20))
            except socket.timeout:
                raise ReceiveTimeout(f"{self.name}: receive timed out") from None
            except OSError as exc:
                raise ConnectionClosed(f"{self.name}: receive failed: {exc}") from exc
            if not chunk:
                if remaining == n:
                    raise ConnectionClosed(f"{self.name}: peer closed the connection")
                raise wire.TruncatedFrameError(f"{self.name}: connection closed mid-frame")
            chunks.append(chunk)
            remaining -= len(chunk)
        return b"".join(chunks)

    def _recv_frame(self, timeout: float | None) -> bytes:
        self.sock.settimeout(timeout)
        header = self._recv_exact(wire.HEADER_SIZE)
        _, length = wire.parse_header(header)
        return header + self._recv_exact(length + wire.TRAILER.size)

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


class TcpListener:
    def __init__(self, host: str = "127.0.0.1", port: int = 0, backlog: int = 16):
        self.sock = socket.create_server((host, port), backlog=backlog)
        self._accepted = 0

    @property
    def address(self) -> Tuple[str, int]:
        return self.sock.getsockname()[:2]

    def accept(self, timeout: float | None = None) -> SocketConnection:
        self.sock.settimeout(timeout)
        try:
            conn, peer = self.sock.accept()
        except socket.timeout:
            raise ReceiveTimeout(f"no client connected within {timeout}s") from None
        conn.settimeout(None)
        self._accepted += 1
        logger.info(f"accepted connection from {peer[0]}:{peer[1]}")
        return SocketConnection(conn, f"tcp/{self._accepted}")

    def close(self) -> None:
        self.sock.close()


def connect_tcp(host: str, port: int, timeout: float | None = 30.0) -> SocketConnection:
    try:
        sock = socket.create_connection((host, port), timeout=timeout)
    except OSError as exc:
        raise ConnectionClosed(f"cannot reach server {host}:{port}: {exc}") from exc
    sock.settimeout(None)
    return SocketConnection(sock, f"tcp->{host}:{port}")
