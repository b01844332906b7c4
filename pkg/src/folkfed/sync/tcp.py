"""TCP transport carrying the same frames the simulator delivers.

One local :class:`Peer` per :class:`TcpDriver`.  Every connection starts
with a HELLO in each direction; after that frames are routed to whichever
socket belongs to the receiving peer id.  Reader threads and the timer
thread take one lock before touching the peer, so peer state has a single
writer at any time.
"""

from __future__ import annotations

import logging
import socket
import threading
import time
from typing import Iterable

from folkfed.errors import TransportError
from folkfed.sync.peer import Outgoing, Peer
from folkfed.sync.wire import decode_envelope, read_frame

log = logging.getLogger(__name__)

TICKS_PER_SECOND = 10


class TcpDriver:
    """Drives one peer over real sockets; usable with the driver operations."""

    def __init__(self, peer: Peer, ticks_per_second: int = TICKS_PER_SECOND, timeout: float = 30.0):
        self.peer = peer
        self.timeout = timeout
        self.peers: dict[str, Peer] = {peer.peer_id: peer}
        self.lock = threading.RLock()
        self.ticks_per_second = ticks_per_second
        self.handled = 0
        self._conns: dict[str, socket.socket] = {}
        self._send_locks: dict[str, threading.Lock] = {}
        self._listener: socket.socket | None = None
        self._closed = threading.Event()
        self._t0 = time.monotonic()
        self._threads: list[threading.Thread] = []
        self._spawn(self._timer_loop, "folkfed-timer")

    # -- clock and threads -----------------------------------------------

    def now(self) -> int:
        return int((time.monotonic() - self._t0) * self.ticks_per_second)

    def _spawn(self, fn, name: str, *args) -> None:
        t = threading.Thread(target=fn, args=args, name=name, daemon=True)
        t.start()
        self._threads.append(t)

    def _timer_loop(self) -> None:
        while not self._closed.wait(1 / self.ticks_per_second):
            with self.lock:
                out = self.peer.tick(self.now())
            self.send(self.peer.peer_id, out)

    # -- connections -------------------------------------------------------

    @property
    def connected(self) -> frozenset[str]:
        return frozenset(self._conns)

    def listen(self, host: str = "127.0.0.1", port: int = 0) -> tuple[str, int]:
        """Accept connections in the background; returns the bound address."""
        srv = socket.create_server((host, port))
        self._listener = srv
        self._spawn(self._accept_loop, "folkfed-accept", srv)
        return srv.getsockname()[:2]

    def _accept_loop(self, srv: socket.socket) -> None:
        while not self._closed.is_set():
            try:
                sock, _ = srv.accept()
            except OSError:
                return
            self._spawn(self._serve, "folkfed-conn", sock, False)

    def connect(self, host: str, port: int, timeout: float = 10.0) -> str:
        """Open a connection, exchange HELLOs and return the remote peer id."""
        try:
            sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise TransportError(f"cannot reach {host}:{port}: {exc}") from None
        ready = threading.Event()
        holder: list[str] = []
        self._spawn(self._serve, "folkfed-conn", sock, True, ready, holder)
        if not ready.wait(timeout) or not holder:
            sock.close()
            raise TransportError(f"no HELLO from {host}:{port}")
        return holder[0]

    def _serve(self, sock: socket.socket, initiator: bool, ready=None, holder=None) -> None:
        buf = bytearray()
        remote = None
        try:
            if initiator:
                sock.sendall(self.peer.hello("")[1])
            first = self._next_frame(sock, buf)
            env = decode_envelope(first)
            if env.kind != "HELLO":
                raise TransportError("connection did not start with HELLO")
            with self.lock:
                before = self.peer.stats["rejected"]
                self.peer.handle(first, self.now())
                if self.peer.stats["rejected"] != before:
                    raise TransportError("HELLO failed verification")
            remote = env.sender
            sock.settimeout(None)
            self._conns[remote] = sock
            self._send_locks.setdefault(remote, threading.Lock())
            if not initiator:
                self._write(remote, self.peer.hello(remote)[1])
            if holder is not None:
                holder.append(remote)
            if ready is not None:
                ready.set()
            while not self._closed.is_set():
                frame = self._next_frame(sock, buf)
                with self.lock:
                    self.handled += 1
                    out = self.peer.handle(frame, self.now())
                self.send(self.peer.peer_id, out)
        except (OSError, TransportError, ValueError) as exc:
            log.debug("connection to %s ended: %s", remote, exc)
        finally:
            if ready is not None:
                ready.set()
            if remote is not None and self._conns.get(remote) is sock:
                del self._conns[remote]
            sock.close()

    @staticmethod
    def _next_frame(sock: socket.socket, buf: bytearray) -> bytes:
        while True:
            frame = read_frame(buf)
            if frame is not None:
                return frame
            data = sock.recv(65536)
            if not data:
                raise TransportError("connection closed")
            buf.extend(data)

    def _write(self, receiver: str, frame: bytes) -> bool:
        sock = self._conns.get(receiver)
        if sock is None:
            return False
        try:
            with self._send_locks[receiver]:
                sock.sendall(frame)
        except OSError as exc:
            log.debug("send to %s failed: %s", receiver, exc)
            return False
        return True

    # -- driver interface --------------------------------------------------

    def send(self, sender: str, outgoing: Iterable[Outgoing]) -> None:
        for receiver, frame in outgoing:
            if not self._write(receiver, frame):
                log.debug("no connection to %s; the retry timer will resend", receiver)

    def settle(self, timeout: float | None = None, quiet: float = 0.3) -> int:
        """Block until the local peer has no outstanding requests.

        Waits for ``quiet`` seconds with nothing pending and no new frames,
        so follow-up requests triggered by replies are included.
        """
        timeout = self.timeout if timeout is None else timeout
        deadline = time.monotonic() + timeout
        stable_since = None
        seen = -1
        while time.monotonic() < deadline:
            with self.lock:
                busy = self.peer.has_pending()
                count = self.handled
            if busy or count != seen:
                stable_since = None
                seen = count
            elif stable_since is None:
                stable_since = time.monotonic()
            elif time.monotonic() - stable_since >= quiet:
                return count
            time.sleep(0.02)
        raise TransportError(f"requests still outstanding after {timeout:.0f}s")

    def serve_forever(self, duration: float | None = None) -> None:
        if duration is None:
            self._closed.wait()
        else:
            self._closed.wait(duration)

    def close(self) -> None:
        self._closed.set()
        if self._listener is not None:
            self._listener.close()
        for sock in list(self._conns.values()):
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            sock.close()
        self._conns.clear()

    def __enter__(self) -> "TcpDriver":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
