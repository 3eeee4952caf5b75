"""Message framing and transports for the two-party session.

Frame layout: 4-byte little-endian length of everything that follows,
1-byte message tag, 8-byte little-endian sequence number, payload. The
payload is a length-prefixed compact JSON object followed by zero or more
length-prefixed binary blobs.
"""
from __future__ import annotations

import enum
import json
import queue
import socket
import struct
import time
from dataclasses import dataclass, field

_LEN = struct.Struct("<I")
_HEAD = struct.Struct("<BQ")
MAX_FRAME = 1 << 30


class Tag(enum.IntEnum):
    SESSION_START = 1
    QUANTUM_BATCH = 2
    BASIS_REVEAL = 3
    ESTIMATION_DISCLOSURE = 4
    SIDE_INFO = 5
    VERIFY_RESULT = 6
    PA_SEED = 7
    ABORT = 8


class AbortReason(enum.IntEnum):
    SEQUENCE = 1
    CONFIG_MISMATCH = 2
    ESTIMATION_OUT_OF_BOUNDS = 3
    VERIFICATION_FAILED = 4
    NO_POSITIVE_KEY = 5
    PROTOCOL = 6
    TRANSPORT = 7


class FramingError(ValueError):
    pass


@dataclass
class Message:
    tag: Tag
    seq: int
    meta: dict = field(default_factory=dict)
    blobs: list[bytes] = field(default_factory=list)


def encode_payload(meta: dict, blobs=()) -> bytes:
    head = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    parts = [_LEN.pack(len(head)), head]
    for b in blobs:
        parts += [_LEN.pack(len(b)), bytes(b)]
    return b"".join(parts)


def decode_payload(payload: bytes):
    blobs, pos = [], 0
    chunks = []
    while pos < len(payload):
        if pos + 4 > len(payload):
            raise FramingError("truncated payload section header")
        (size,) = _LEN.unpack_from(payload, pos)
        pos += 4
        if pos + size > len(payload):
            raise FramingError("truncated payload section")
        chunks.append(payload[pos:pos + size])
        pos += size
    if not chunks:
        raise FramingError("payload lacks a metadata section")
    meta = json.loads(chunks[0])
    blobs = chunks[1:]
    return meta, blobs


def encode_frame(msg: Message) -> bytes:
    body = _HEAD.pack(int(msg.tag), msg.seq) + encode_payload(msg.meta, msg.blobs)
    return _LEN.pack(len(body)) + body


def decode_frame(frame: bytes) -> Message:
    if len(frame) < 4 + _HEAD.size:
        raise FramingError("frame too short")
    (size,) = _LEN.unpack_from(frame, 0)
    if size != len(frame) - 4:
        raise FramingError("length prefix disagrees with frame size")
    tag, seq = _HEAD.unpack_from(frame, 4)
    try:
        tag = Tag(tag)
    except ValueError:
        raise FramingError(f"unknown message tag {tag}") from None
    meta, blobs = decode_payload(frame[4 + _HEAD.size:])
    return Message(tag, seq, meta, blobs)


class TransportClosed(ConnectionError):
    pass


class LoopbackTransport:
    """One end of an in-process, ordered, reliable frame pipe."""

    def __init__(self, inbox: queue.Queue, outbox: queue.Queue, timeout: float = 120.0):
        self._inbox, self._outbox, self.timeout = inbox, outbox, timeout

    @classmethod
    def pair(cls, timeout: float = 120.0):
        a, b = queue.Queue(), queue.Queue()
        return cls(a, b, timeout), cls(b, a, timeout)

    def send(self, frame: bytes) -> None:
        self._outbox.put(bytes(frame))

    def recv(self) -> bytes:
        try:
            frame = self._inbox.get(timeout=self.timeout)
        except queue.Empty:
            raise TransportClosed("loopback receive timed out") from None
        if frame is None:
            raise TransportClosed("peer closed")
        return frame

    def close(self) -> None:
        self._outbox.put(None)


class TcpTransport:
    """Frames over a connected TCP socket."""

    def __init__(self, sock: socket.socket, timeout: float = 120.0):
        self.sock = sock
        self.sock.settimeout(timeout)

    @classmethod
    def connect(cls, host: str, port: int, timeout: float = 120.0) -> "TcpTransport":
        """Connect, retrying refused attempts until ``timeout`` so the peer may start listening later."""
        deadline = time.monotonic() + timeout
        while True:
            try:
                return cls(socket.create_connection((host, port), timeout=timeout), timeout)
            except ConnectionRefusedError:
                if time.monotonic() >= deadline:
                    raise
                time.sleep(0.05)

    @classmethod
    def listen(cls, host: str, port: int, timeout: float = 120.0, ready=None) -> "TcpTransport":
        """Accept a single peer. ``ready`` (optional) is called with the bound port."""
        with socket.create_server((host, port)) as srv:
            srv.settimeout(timeout)
            if ready is not None:
                ready(srv.getsockname()[1])
            conn, _ = srv.accept()
        return cls(conn, timeout)

    def _read_exact(self, n: int) -> bytes:
        buf = bytearray()
        while len(buf) < n:
            chunk = self.sock.recv(n - len(buf))
            if not chunk:
                raise TransportClosed("peer closed the connection")
            buf += chunk
        return bytes(buf)

    def send(self, frame: bytes) -> None:
        self.sock.sendall(frame)

    def recv(self) -> bytes:
        head = self._read_exact(4)
        (size,) = _LEN.unpack(head)
        if size > MAX_FRAME:
            raise FramingError(f"frame of {size} bytes exceeds limit")
        return head + self._read_exact(size)

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass
