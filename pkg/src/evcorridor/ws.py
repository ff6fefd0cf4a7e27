"""Minimal RFC 6455 WebSocket transport: enough for one console session.

Text frames only (plus close/ping/pong), standard HTTP upgrade handshake,
client-to-server masking. Implemented directly on sockets so the live
console needs no extra services or dependencies.
"""

from __future__ import annotations

import base64
import hashlib
import os
import socket
import struct

_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"

OP_CONT, OP_TEXT, OP_CLOSE, OP_PING, OP_PONG = 0x0, 0x1, 0x8, 0x9, 0xA


class ConnectionClosed(ConnectionError):
    pass


def _accept_key(key: str) -> str:
    digest = hashlib.sha1((key + _GUID).encode()).digest()
    return base64.b64encode(digest).decode()


class _BufferedSock:
    """Socket reader that first drains bytes left over from the handshake."""

    def __init__(self, sock: socket.socket, initial: bytes = b""):
        self.sock = sock
        self.buffer = initial

    def read_exact(self, n: int) -> bytes:
        while len(self.buffer) < n:
            chunk = self.sock.recv(max(n - len(self.buffer), 1))
            if not chunk:
                raise ConnectionClosed("socket closed mid-frame")
            self.buffer += chunk
        out, self.buffer = self.buffer[:n], self.buffer[n:]
        return out


def _read_frame(reader: _BufferedSock) -> tuple[int, bool, bytes]:
    head = reader.read_exact(2)
    fin = bool(head[0] & 0x80)
    opcode = head[0] & 0x0F
    masked = bool(head[1] & 0x80)
    length = head[1] & 0x7F
    if length == 126:
        (length,) = struct.unpack("!H", reader.read_exact(2))
    elif length == 127:
        (length,) = struct.unpack("!Q", reader.read_exact(8))
    mask = reader.read_exact(4) if masked else None
    payload = reader.read_exact(length) if length else b""
    if mask:
        payload = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
    return opcode, fin, payload


def _write_frame(sock: socket.socket, opcode: int, payload: bytes,
                 mask: bool) -> None:
    head = bytearray([0x80 | opcode])
    n = len(payload)
    mask_bit = 0x80 if mask else 0x00
    if n < 126:
        head.append(mask_bit | n)
    elif n < 1 << 16:
        head.append(mask_bit | 126)
        head += struct.pack("!H", n)
    else:
        head.append(mask_bit | 127)
        head += struct.pack("!Q", n)
    if mask:
        key = os.urandom(4)
        head += key
        payload = bytes(b ^ key[i % 4] for i, b in enumerate(payload))
    sock.sendall(bytes(head) + payload)


class WebSocket:
    """One established WebSocket endpoint (either side)."""

    def __init__(self, sock: socket.socket, is_client: bool,
                 leftover: bytes = b""):
        self._sock = sock
        self._reader = _BufferedSock(sock, leftover)
        self._is_client = is_client
        self._open = True

    def send_text(self, text: str) -> None:
        if not self._open:
            raise ConnectionClosed("websocket already closed")
        _write_frame(self._sock, OP_TEXT, text.encode(), mask=self._is_client)

    def recv_text(self, timeout: float | None = None) -> str:
        """Next text message; control frames are handled inline."""
        self._sock.settimeout(timeout)
        parts: list[bytes] = []
        while True:
            opcode, fin, payload = _read_frame(self._reader)
            if opcode == OP_PING:
                _write_frame(self._sock, OP_PONG, payload, mask=self._is_client)
                continue
            if opcode == OP_PONG:
                continue
            if opcode == OP_CLOSE:
                self.close()
                raise ConnectionClosed("peer closed the websocket")
            if opcode in (OP_TEXT, OP_CONT):
                parts.append(payload)
                if fin:
                    return b"".join(parts).decode()
                continue
            raise ConnectionClosed(f"unsupported opcode {opcode}")

    def close(self) -> None:
        if self._open:
            self._open = False
            try:
                _write_frame(self._sock, OP_CLOSE, b"", mask=self._is_client)
            except OSError:
                pass
            try:
                self._sock.close()
            except OSError:
                pass


def accept_websocket(listener: socket.socket,
                     timeout: float | None = None) -> WebSocket:
    """Accept one TCP connection and complete the server handshake."""
    listener.settimeout(timeout)
    conn, _ = listener.accept()
    conn.settimeout(timeout)
    request = b""
    while b"\r\n\r\n" not in request:
        chunk = conn.recv(4096)
        if not chunk:
            raise ConnectionClosed("client vanished during handshake")
        request += chunk
    request, _, leftover = request.partition(b"\r\n\r\n")
    headers = {}
    for line in request.decode("latin-1").split("\r\n")[1:]:
        if ":" in line:
            name, value = line.split(":", 1)
            headers[name.strip().lower()] = value.strip()
    key = headers.get("sec-websocket-key")
    if not key or "websocket" not in headers.get("upgrade", "").lower():
        conn.sendall(b"HTTP/1.1 400 Bad Request\r\n\r\n")
        conn.close()
        raise ConnectionClosed("not a websocket upgrade request")
    response = (
        "HTTP/1.1 101 Switching Protocols\r\n"
        "Upgrade: websocket\r\n"
        "Connection: Upgrade\r\n"
        f"Sec-WebSocket-Accept: {_accept_key(key)}\r\n\r\n"
    )
    conn.sendall(response.encode())
    return WebSocket(conn, is_client=False, leftover=leftover)


def connect_websocket(host: str, port: int, path: str = "/",
                      timeout: float = 10.0) -> WebSocket:
    """Client handshake against a listening server."""
    sock = socket.create_connection((host, port), timeout=timeout)
    sock.settimeout(timeout)
    key = base64.b64encode(os.urandom(16)).decode()
    request = (
        f"GET {path} HTTP/1.1\r\n"
        f"Host: {host}:{port}\r\n"
        "Upgrade: websocket\r\n"
        "Connection: Upgrade\r\n"
        f"Sec-WebSocket-Key: {key}\r\n"
        "Sec-WebSocket-Version: 13\r\n\r\n"
    )
    sock.sendall(request.encode())
    response = b""
    while b"\r\n\r\n" not in response:
        chunk = sock.recv(4096)
        if not chunk:
            raise ConnectionClosed("server vanished during handshake")
        response += chunk
    response, _, leftover = response.partition(b"\r\n\r\n")
    status = response.split(b"\r\n", 1)[0]
    if b"101" not in status:
        sock.close()
        raise ConnectionClosed(f"handshake rejected: {status.decode()}")
    expected = _accept_key(key).encode()
    if expected not in response:
        sock.close()
        raise ConnectionClosed("bad Sec-WebSocket-Accept")
    return WebSocket(sock, is_client=True, leftover=leftover)
