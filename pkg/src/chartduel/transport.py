"""Session transports: in-memory channel pairs and a minimal WebSocket layer.

Every transport moves whole JSON text frames.  `MemoryConnection` pairs two
asyncio queues for in-process tests and bot fleets; the WebSocket half
implements just enough of RFC 6455 (handshake, text/close/ping frames,
client masking) to serve browsers and our own client — no extensions, no
TLS, no reconnection.  The plain-HTTP fallback on the same port serves the
static web client so a demo needs a single process and port.
"""

from __future__ import annotations

import asyncio
import base64
import hashlib
import os
import secrets
import struct
from pathlib import Path
from urllib.parse import urlparse

_WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".mjs": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".json": "application/json",
    ".map": "application/json",
    ".svg": "image/svg+xml",
    ".png": "image/png",
    ".ico": "image/x-icon",
}

OP_CONT = 0x0
OP_TEXT = 0x1
OP_BINARY = 0x2
OP_CLOSE = 0x8
OP_PING = 0x9
OP_PONG = 0xA


class ConnectionClosed(Exception):
    """The peer closed the channel (or the underlying socket died)."""


class Connection:
    """Duplex text-frame channel; subclasses supply the actual transport."""

    async def send(self, text: str) -> None:
        raise NotImplementedError

    async def recv(self) -> str:
        raise NotImplementedError

    async def close(self) -> None:
        raise NotImplementedError


class MemoryConnection(Connection):
    """One end of an in-process channel pair carrying JSON text frames."""

    _CLOSE = object()

    def __init__(self, inbox: asyncio.Queue, outbox: asyncio.Queue):
        self._inbox = inbox
        self._outbox = outbox
        self._closed = False

    @classmethod
    def pair(cls) -> tuple[MemoryConnection, MemoryConnection]:
        a_to_b: asyncio.Queue = asyncio.Queue()
        b_to_a: asyncio.Queue = asyncio.Queue()
        return cls(b_to_a, a_to_b), cls(a_to_b, b_to_a)

    async def send(self, text: str) -> None:
        if self._closed:
            raise ConnectionClosed("send on closed connection")
        await self._outbox.put(text)

    async def recv(self) -> str:
        if self._closed:
            raise ConnectionClosed("recv on closed connection")
        item = await self._inbox.get()
        if item is self._CLOSE:
            self._closed = True
            raise ConnectionClosed("peer closed")
        return item

    async def close(self) -> None:
        if not self._closed:
            self._closed = True
            await self._outbox.put(self._CLOSE)


class WebSocketConnection(Connection):
    """A WebSocket after a completed handshake, carrying text frames."""

    def __init__(
        self,
        reader: asyncio.StreamReader,
        writer: asyncio.StreamWriter,
        *,
        mask_outgoing: bool,
    ):
        self._reader = reader
        self._writer = writer
        self._mask = mask_outgoing
        self._closed = False

    async def send(self, text: str) -> None:
        if self._closed:
            raise ConnectionClosed("send on closed websocket")
        try:
            self._writer.write(_encode_frame(OP_TEXT, text.encode("utf-8"), self._mask))
            await self._writer.drain()
        except (ConnectionError, RuntimeError) as exc:
            self._closed = True
            raise ConnectionClosed(str(exc)) from None

    async def recv(self) -> str:
        if self._closed:
            raise ConnectionClosed("recv on closed websocket")
        buffer = b""
        assembling = False
        while True:
            try:
                fin, opcode, payload = await _read_frame(self._reader)
            except (asyncio.IncompleteReadError, ConnectionError) as exc:
                self._closed = True
                raise ConnectionClosed(str(exc)) from None
            if opcode == OP_PING:
                self._writer.write(_encode_frame(OP_PONG, payload, self._mask))
                await self._writer.drain()
                continue
            if opcode == OP_PONG:
                continue
            if opcode == OP_CLOSE:
                self._closed = True
                try:
                    self._writer.write(_encode_frame(OP_CLOSE, payload[:2], self._mask))
                    await self._writer.drain()
                except (ConnectionError, RuntimeError):
                    pass
                raise ConnectionClosed("close frame received")
            if opcode in (OP_TEXT, OP_BINARY):
                if assembling:
                    raise ConnectionClosed("interleaved message fragments")
                buffer = payload
                assembling = True
            elif opcode == OP_CONT:
                if not assembling:
                    raise ConnectionClosed("continuation without start frame")
                buffer += payload
            else:
                raise ConnectionClosed(f"unsupported opcode {opcode}")
            if fin:
                return buffer.decode("utf-8")

    async def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        try:
            self._writer.write(_encode_frame(OP_CLOSE, b"", self._mask))
            await self._writer.drain()
        except (ConnectionError, RuntimeError):
            pass
        self._writer.close()


def _encode_frame(opcode: int, payload: bytes, mask: bool) -> bytes:
    head = bytes([0x80 | opcode])
    n = len(payload)
    mask_bit = 0x80 if mask else 0
    if n < 126:
        head += bytes([mask_bit | n])
    elif n < 1 << 16:
        head += bytes([mask_bit | 126]) + struct.pack(">H", n)
    else:
        head += bytes([mask_bit | 127]) + struct.pack(">Q", n)
    if mask:
        key = secrets.token_bytes(4)
        masked = bytes(b ^ key[i % 4] for i, b in enumerate(payload))
        return head + key + masked
    return head + payload


async def _read_frame(reader: asyncio.StreamReader) -> tuple[bool, int, bytes]:
    b0, b1 = await reader.readexactly(2)
    fin = bool(b0 & 0x80)
    opcode = b0 & 0x0F
    masked = bool(b1 & 0x80)
    length = b1 & 0x7F
    if length == 126:
        (length,) = struct.unpack(">H", await reader.readexactly(2))
    elif length == 127:
        (length,) = struct.unpack(">Q", await reader.readexactly(8))
    key = await reader.readexactly(4) if masked else None
    payload = await reader.readexactly(length) if length else b""
    if key:
        payload = bytes(b ^ key[i % 4] for i, b in enumerate(payload))
    return fin, opcode, payload


async def _read_http_head(reader: asyncio.StreamReader) -> tuple[str, dict[str, str]]:
    head = await reader.readuntil(b"\r\n\r\n")
    lines = head.decode("latin-1").split("\r\n")
    headers: dict[str, str] = {}
    for line in lines[1:]:
        if ":" in line:
            name, value = line.split(":", 1)
            headers[name.strip().lower()] = value.strip()
    return lines[0], headers


def _http_response(status: str, body: bytes, content_type: str = "text/plain") -> bytes:
    return (
        f"HTTP/1.1 {status}\r\n"
        f"Content-Type: {content_type}\r\n"
        f"Content-Length: {len(body)}\r\n"
        "Connection: close\r\n\r\n"
    ).encode("latin-1") + body


async def serve_websockets(handler, host: str, port: int, *, static_dir: str | Path | None = None):
    """Accept WebSocket upgrades and hand each connection to ``handler``.

    Non-upgrade GET requests are served from ``static_dir`` when given, so
    the same port can host the web client.  Returns the asyncio server.
    """
    static_root = Path(static_dir).resolve() if static_dir else None

    async def on_client(reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        try:
            request_line, headers = await _read_http_head(reader)
        except (asyncio.IncompleteReadError, asyncio.LimitOverrunError, ConnectionError):
            writer.close()
            return
        try:
            if headers.get("upgrade", "").lower() == "websocket":
                key = headers.get("sec-websocket-key", "")
                accept = base64.b64encode(
                    hashlib.sha1((key + _WS_GUID).encode("latin-1")).digest()
                ).decode("latin-1")
                writer.write(
                    (
                        "HTTP/1.1 101 Switching Protocols\r\n"
                        "Upgrade: websocket\r\n"
                        "Connection: Upgrade\r\n"
                        f"Sec-WebSocket-Accept: {accept}\r\n\r\n"
                    ).encode("latin-1")
                )
                await writer.drain()
                conn = WebSocketConnection(reader, writer, mask_outgoing=False)
                await handler(conn)
            else:
                _serve_static(request_line, writer, static_root)
                await writer.drain()
        except (ConnectionError, ConnectionClosed):
            pass
        finally:
            try:
                writer.close()
            except RuntimeError:
                pass

    return await asyncio.start_server(on_client, host, port)


def _serve_static(request_line: str, writer: asyncio.StreamWriter, root: Path | None):
    parts = request_line.split()
    if len(parts) != 3 or parts[0] != "GET" or root is None:
        writer.write(_http_response("404 Not Found", b"not found"))
        return
    raw_path = parts[1].split("?", 1)[0]
    rel = raw_path.lstrip("/") or "index.html"
    target = (root / rel).resolve()
    if not str(target).startswith(str(root) + os.sep) and target != root:
        writer.write(_http_response("404 Not Found", b"not found"))
        return
    if target.is_dir():
        target = target / "index.html"
    if not target.is_file():
        writer.write(_http_response("404 Not Found", b"not found"))
        return
    ctype = _CONTENT_TYPES.get(target.suffix.lower(), "application/octet-stream")
    writer.write(_http_response("200 OK", target.read_bytes(), ctype))


async def connect_websocket(url: str) -> WebSocketConnection:
    """Open a client WebSocket to ``ws://host:port/path``."""
    parsed = urlparse(url)
    if parsed.scheme != "ws":
        raise ValueError(f"only ws:// urls are supported, got {url!r}")
    host = parsed.hostname or "127.0.0.1"
    port = parsed.port or 80
    reader, writer = await asyncio.open_connection(host, port)
    key = base64.b64encode(secrets.token_bytes(16)).decode("latin-1")
    path = parsed.path or "/"
    writer.write(
        (
            f"GET {path} HTTP/1.1\r\n"
            f"Host: {host}:{port}\r\n"
            "Upgrade: websocket\r\n"
            "Connection: Upgrade\r\n"
            f"Sec-WebSocket-Key: {key}\r\n"
            "Sec-WebSocket-Version: 13\r\n\r\n"
        ).encode("latin-1")
    )
    await writer.drain()
    status_line, headers = await _read_http_head(reader)
    if " 101 " not in f"{status_line} ":
        writer.close()
        raise ConnectionClosed(f"handshake rejected: {status_line}")
    expect = base64.b64encode(
        hashlib.sha1((key + _WS_GUID).encode("latin-1")).digest()
    ).decode("latin-1")
    if headers.get("sec-websocket-accept") != expect:
        writer.close()
        raise ConnectionClosed("handshake accept mismatch")
    return WebSocketConnection(reader, writer, mask_outgoing=True)
