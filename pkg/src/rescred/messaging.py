"""Communication fabric: a durable pub/sub broker and a realtime channel.

The broker gives at-least-once delivery. Every published message is written
to an append-only JSON-lines log before the publish call returns, every
subscriber of a topic sees every message of that topic (fan-out), and a
delivery that is not acknowledged within the visibility window is tried
again with an incremented attempt counter. Consumers are expected to
deduplicate by ``message_id``; the broker never loses, only repeats.

The channel is the realtime path between parties identified by DID. Frames
are ``{"frameType": "request"|"response"|"ack", "payload": <base64url>}``
maps sent as length-prefixed JSON over a persistent connection. A party that
is offline gets its frames buffered in FIFO order (bounded) and drained on
reconnect.

Both pieces work fully in-process and are also exposed over TCP so separate
processes can share one broker and one hub.
"""

from __future__ import annotations

import json
import os
import queue
import socket
import socketserver
import struct
import threading
import time
from collections import deque
from dataclasses import dataclass, field

from .did import Did
from .encoding import b64url_decode, b64url_encode
from .errors import RescredError
from .rng import new_id

FRAME_TYPES = ("request", "response", "ack")
MAX_FRAME_BYTES = 16 * 1024 * 1024


class MessagingError(RescredError):
    pass


class BrokerUnavailableError(MessagingError):
    code = "broker-unavailable"


class BufferOverflowError(MessagingError):
    code = "buffer-overflow"


class ProtocolError(MessagingError):
    code = "protocol-error"


@dataclass
class QueueMessage:
    message_id: str
    topic: str
    payload: bytes
    enqueued_at: int
    attempts: int = 0

    def to_wire(self) -> dict:
        return {
            "messageId": self.message_id,
            "topic": self.topic,
            "payload": b64url_encode(self.payload),
            "enqueuedAt": self.enqueued_at,
            "attempts": self.attempts,
        }

    @classmethod
    def from_wire(cls, wire: dict) -> "QueueMessage":
        return cls(
            message_id=wire["messageId"],
            topic=wire["topic"],
            payload=b64url_decode(wire["payload"]),
            enqueued_at=int(wire["enqueuedAt"]),
            attempts=int(wire.get("attempts", 0)),
        )


# --------------------------------------------------------------------------
# Length-prefixed JSON frames, shared by the broker and channel wire layers
# --------------------------------------------------------------------------


def write_frame(sock: socket.socket, obj: dict) -> None:
    data = json.dumps(obj, separators=(",", ":")).encode("utf-8")
    sock.sendall(struct.pack(">I", len(data)) + data)


def read_frame(sock: socket.socket) -> dict | None:
    header = _read_exact(sock, 4)
    if header is None:
        return None
    (length,) = struct.unpack(">I", header)
    if length > MAX_FRAME_BYTES:
        raise ProtocolError(f"frame of {length} bytes exceeds limit")
    body = _read_exact(sock, length)
    if body is None:
        return None
    try:
        obj = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"bad frame: {exc}") from exc
    if not isinstance(obj, dict):
        raise ProtocolError("frame is not a map")
    return obj


def _read_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = b""
    while len(buf) < n:
        try:
            chunk = sock.recv(n - len(buf))
        except OSError:
            return None
        if not chunk:
            return None
        buf += chunk
    return buf


def make_channel_frame(frame_type: str, payload: bytes) -> dict:
    if frame_type not in FRAME_TYPES:
        raise ProtocolError(f"unknown frame type {frame_type!r}")
    return {"frameType": frame_type, "payload": b64url_encode(payload)}


def parse_channel_frame(frame: dict) -> "tuple[str, bytes]":
    frame_type = frame.get("frameType")
    if frame_type not in FRAME_TYPES:
        raise ProtocolError(f"unknown frame type {frame_type!r}")
    return frame_type, b64url_decode(frame.get("payload", ""))


# --------------------------------------------------------------------------
# Broker
# --------------------------------------------------------------------------


class Subscription:
    """One subscriber on one topic. Handler invocations are serialized."""

    def __init__(self, broker: "Broker", subscriber_id: str, topic: str, handler, manual_ack: bool):
        self.subscriber_id = subscriber_id
        self.topic = topic
        self.handler = handler
        self.manual_ack = manual_ack
        self._broker = broker
        self._queue: queue.Queue = queue.Queue()
        self._stop = threading.Event()
        self._worker = threading.Thread(target=self._run, daemon=True)
        self._worker.start()

    def _run(self) -> None:
        while not self._stop.is_set():
            try:
                message_id = self._queue.get(timeout=0.05)
            except queue.Empty:
                continue
            self._broker._deliver(self, message_id)

    def enqueue(self, message_id: str) -> None:
        self._queue.put(message_id)

    def cancel(self) -> None:
        self._stop.set()
        self._worker.join(timeout=1.0)


class Broker:
    """Durable in-process topic broker with at-least-once delivery."""

    def __init__(self, log_path: str | None = None, visibility_seconds: float = 30.0):
        self._lock = threading.RLock()
        self._messages: dict[str, list[QueueMessage]] = {}
        self._by_id: dict[str, QueueMessage] = {}
        self._acks: dict[str, set] = {}
        self._attempts: dict[tuple, int] = {}
        self._outstanding: dict[tuple, float] = {}
        self._subs: dict[tuple, Subscription] = {}
        self.visibility_seconds = visibility_seconds
        self._closed = False
        self._log_path = log_path
        self._log_handle = None
        if log_path:
            if os.path.exists(log_path):
                self._load(log_path)
            self._log_handle = open(log_path, "a", encoding="utf-8")
        self._redelivery = threading.Thread(target=self._redelivery_loop, daemon=True)
        self._redelivery.start()

    # -- persistence --

    def _load(self, path: str) -> None:
        with open(path, encoding="utf-8") as handle:
            for line in handle:
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError:
                    continue  # torn tail write; everything before it is intact
                if record.get("type") == "msg":
                    msg = QueueMessage.from_wire(record["message"])
                    self._messages.setdefault(msg.topic, []).append(msg)
                    self._by_id[msg.message_id] = msg
                elif record.get("type") == "ack":
                    self._acks.setdefault(record["subscriberId"], set()).add(record["messageId"])

    def _log(self, record: dict) -> None:
        if self._log_handle is None:
            return
        self._log_handle.write(json.dumps(record, separators=(",", ":")) + "\n")
        self._log_handle.flush()
        os.fsync(self._log_handle.fileno())

    # -- core API --

    def publish(self, topic: str, payload: bytes) -> str:
        if not topic:
            raise ValueError("topic must be non-empty")
        with self._lock:
            if self._closed:
                raise BrokerUnavailableError("broker is closed")
            msg = QueueMessage(message_id=new_id(), topic=topic, payload=payload, enqueued_at=int(time.time()))
            self._log({"type": "msg", "message": msg.to_wire()})
            self._messages.setdefault(topic, []).append(msg)
            self._by_id[msg.message_id] = msg
            for (sub_id, sub_topic), sub in self._subs.items():
                if sub_topic == topic and msg.message_id not in self._acks.get(sub_id, set()):
                    sub.enqueue(msg.message_id)
            return msg.message_id

    def consume(self, topic: str, handler, subscriber_id: str | None = None, manual_ack: bool = False) -> Subscription:
        """Subscribe; the backlog of unacknowledged messages replays first."""
        subscriber_id = subscriber_id or f"sub-{new_id()[:12]}"
        with self._lock:
            if self._closed:
                raise BrokerUnavailableError("broker is closed")
            key = (subscriber_id, topic)
            if key in self._subs:
                self._subs[key].cancel()
            sub = Subscription(self, subscriber_id, topic, handler, manual_ack)
            self._subs[key] = sub
            acked = self._acks.get(subscriber_id, set())
            for msg in self._messages.get(topic, []):
                if msg.message_id not in acked:
                    sub.enqueue(msg.message_id)
            return sub

    def ack(self, subscriber_id: str, message_id: str) -> None:
        with self._lock:
            if message_id not in self._by_id:
                return
            self._log({"type": "ack", "subscriberId": subscriber_id, "messageId": message_id})
            self._acks.setdefault(subscriber_id, set()).add(message_id)
            self._outstanding.pop((subscriber_id, message_id), None)

    def unsubscribe(self, sub: Subscription) -> None:
        with self._lock:
            self._subs.pop((sub.subscriber_id, sub.topic), None)
        sub.cancel()

    def close(self) -> None:
        with self._lock:
            self._closed = True
            subs = list(self._subs.values())
            self._subs.clear()
        for sub in subs:
            sub.cancel()
        if self._log_handle is not None:
            self._log_handle.close()
            self._log_handle = None

    # -- delivery internals --

    def _deliver(self, sub: Subscription, message_id: str) -> None:
        with self._lock:
            if self._closed or self._subs.get((sub.subscriber_id, sub.topic)) is not sub:
                return
            if message_id in self._acks.get(sub.subscriber_id, set()):
                return
            msg = self._by_id.get(message_id)
            if msg is None:
                return
            key = (sub.subscriber_id, message_id)
            self._attempts[key] = self._attempts.get(key, 0) + 1
            attempt = QueueMessage(
                message_id=msg.message_id,
                topic=msg.topic,
                payload=msg.payload,
                enqueued_at=msg.enqueued_at,
                attempts=self._attempts[key],
            )
            self._outstanding[key] = time.monotonic() + self.visibility_seconds
        try:
            sub.handler(attempt)
        except Exception:
            return  # stays outstanding; the redelivery loop will retry
        if not sub.manual_ack:
            self.ack(sub.subscriber_id, message_id)

    def _redelivery_loop(self) -> None:
        while True:
            time.sleep(min(self.visibility_seconds / 4, 0.05))
            with self._lock:
                if self._closed:
                    return
                now = time.monotonic()
                expired = [key for key, deadline in self._outstanding.items() if deadline <= now]
                for sub_id, message_id in expired:
                    del self._outstanding[(sub_id, message_id)]
                    msg = self._by_id.get(message_id)
                    if msg is None:
                        continue
                    sub = self._subs.get((sub_id, msg.topic))
                    if sub is not None and message_id not in self._acks.get(sub_id, set()):
                        sub.enqueue(message_id)


# --------------------------------------------------------------------------
# Broker over TCP: verbs PUB / SUB / ACK
# --------------------------------------------------------------------------


class _BrokerConnection(socketserver.BaseRequestHandler):
    def handle(self) -> None:
        broker: Broker = self.server.broker  # type: ignore[attr-defined]
        write_lock = threading.Lock()
        local_subs: list[Subscription] = []
        try:
            while True:
                frame = read_frame(self.request)
                if frame is None:
                    break
                verb = frame.get("verb")
                if verb == "PUB":
                    message_id = broker.publish(frame["topic"], b64url_decode(frame["payload"]))
                    with write_lock:
                        write_frame(self.request, {"verb": "PUB-OK", "messageId": message_id})
                elif verb == "SUB":
                    def push(msg: QueueMessage, _lock=write_lock) -> None:
                        with _lock:
                            write_frame(self.request, {"verb": "MSG", "message": msg.to_wire()})

                    sub = broker.consume(
                        frame["topic"], push, subscriber_id=frame.get("subscriberId"), manual_ack=True
                    )
                    local_subs.append(sub)
                    with write_lock:
                        write_frame(self.request, {"verb": "SUB-OK", "subscriberId": sub.subscriber_id})
                elif verb == "ACK":
                    broker.ack(frame["subscriberId"], frame["messageId"])
                else:
                    raise ProtocolError(f"unknown verb {verb!r}")
        except (ProtocolError, OSError, KeyError):
            pass
        finally:
            for sub in local_subs:
                broker.unsubscribe(sub)


class BrokerServer:
    """Exposes one Broker over TCP so other processes can share it."""

    def __init__(self, broker: Broker, host: str = "127.0.0.1", port: int = 0):
        self.broker = broker
        self._server = socketserver.ThreadingTCPServer((host, port), _BrokerConnection, bind_and_activate=False)
        self._server.allow_reuse_address = True
        self._server.daemon_threads = True
        self._server.broker = broker  # type: ignore[attr-defined]
        self._server.server_bind()
        self._server.server_activate()
        self.address = self._server.server_address
        self._thread = threading.Thread(target=self._server.serve_forever, kwargs={"poll_interval": 0.05}, daemon=True)
        self._thread.start()

    def close(self) -> None:
        self._server.shutdown()
        self._server.server_close()


class BrokerClient:
    """Socket client for a BrokerServer; mirrors publish/consume/ack."""

    def __init__(self, host: str, port: int, timeout: float = 5.0):
        try:
            self._sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise BrokerUnavailableError(f"cannot reach broker at {host}:{port}") from exc
        self._sock.settimeout(None)
        self._write_lock = threading.Lock()
        self._pub_replies: queue.Queue = queue.Queue()
        self._sub_replies: queue.Queue = queue.Queue()
        self._handlers: dict[str, object] = {}
        self._closed = False
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _read_loop(self) -> None:
        while not self._closed:
            try:
                frame = read_frame(self._sock)
            except ProtocolError:
                break
            if frame is None:
                break
            verb = frame.get("verb")
            if verb == "PUB-OK":
                self._pub_replies.put(frame["messageId"])
            elif verb == "SUB-OK":
                self._sub_replies.put(frame["subscriberId"])
            elif verb == "MSG":
                msg = QueueMessage.from_wire(frame["message"])
                handler = self._handlers.get(msg.topic)
                if handler is None:
                    continue
                try:
                    handler(msg)
                except Exception:
                    continue  # no ack; the broker will redeliver
                self.ack_for(msg)

    def publish(self, topic: str, payload: bytes) -> str:
        with self._write_lock:
            write_frame(self._sock, {"verb": "PUB", "topic": topic, "payload": b64url_encode(payload)})
        try:
            return self._pub_replies.get(timeout=5.0)
        except queue.Empty as exc:
            raise BrokerUnavailableError("no publish acknowledgment") from exc

    def subscribe(self, topic: str, handler, subscriber_id: str | None = None) -> str:
        self._handlers[topic] = handler
        self._subscriber_for_topic = getattr(self, "_subscriber_for_topic", {})
        with self._write_lock:
            write_frame(self._sock, {"verb": "SUB", "topic": topic, "subscriberId": subscriber_id})
        try:
            assigned = self._sub_replies.get(timeout=5.0)
        except queue.Empty as exc:
            raise BrokerUnavailableError("no subscribe acknowledgment") from exc
        self._subscriber_for_topic[topic] = assigned
        return assigned

    def ack_for(self, msg: QueueMessage) -> None:
        subscriber_id = getattr(self, "_subscriber_for_topic", {}).get(msg.topic)
        if subscriber_id is None:
            return
        with self._write_lock:
            write_frame(self._sock, {"verb": "ACK", "subscriberId": subscriber_id, "messageId": msg.message_id})

    def close(self) -> None:
        self._closed = True
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


# --------------------------------------------------------------------------
# Realtime channel
# --------------------------------------------------------------------------


@dataclass
class ChannelSession:
    session_id: str
    party_did: Did
    connected: bool = False
    pending: deque = field(default_factory=deque)  # deque[QueueMessage]
    deliver: object = None  # callable(frame dict) or None
    acked_frames: int = 0


class ChannelHub:
    """Per-DID realtime sessions with FIFO buffering while disconnected."""

    def __init__(self, max_pending: int = 1000):
        self._lock = threading.RLock()
        self._sessions: dict[str, ChannelSession] = {}
        self.max_pending = max_pending

    def _session(self, party_did: Did) -> ChannelSession:
        key = str(party_did)
        session = self._sessions.get(key)
        if session is None:
            session = ChannelSession(session_id=new_id(), party_did=party_did)
            self._sessions[key] = session
        return session

    def register(self, party_did: Did, deliver=None) -> ChannelSession:
        """Open (or resume) the session for a party. Buffered frames drain
        in FIFO order before anything newly pushed."""
        with self._lock:
            session = self._session(party_did)
            session.deliver = deliver
            session.connected = deliver is not None
            if session.connected:
                self._drain(session)
            return session

    def disconnect(self, party_did: Did, deliver=None) -> None:
        with self._lock:
            session = self._sessions.get(str(party_did))
            if session is None:
                return
            if deliver is not None and session.deliver is not deliver:
                return  # a newer connection already took over
            session.connected = False
            session.deliver = None

    def is_connected(self, party_did: Did) -> bool:
        with self._lock:
            session = self._sessions.get(str(party_did))
            return bool(session and session.connected)

    def record_ack(self, party_did: Did) -> None:
        with self._lock:
            session = self._sessions.get(str(party_did))
            if session is not None:
                session.acked_frames += 1

    def push(self, party_did: Did, payload: bytes, frame_type: str = "request") -> str:
        """Deliver now if the party is connected, else buffer. Returns
        ``"delivered"`` or ``"buffered"``."""
        frame = make_channel_frame(frame_type, payload)
        with self._lock:
            session = self._session(party_did)
            if session.connected and session.deliver is not None:
                try:
                    session.deliver(frame)
                    return "delivered"
                except Exception:
                    session.connected = False
                    session.deliver = None
            if len(session.pending) >= self.max_pending:
                raise BufferOverflowError(f"pending buffer full for {party_did}")
            session.pending.append(
                QueueMessage(
                    message_id=new_id(),
                    topic=frame_type,
                    payload=payload,
                    enqueued_at=int(time.time()),
                )
            )
            return "buffered"

    def _drain(self, session: ChannelSession) -> None:
        while session.pending:
            msg = session.pending[0]
            frame = make_channel_frame(msg.topic, msg.payload)
            try:
                session.deliver(frame)
            except Exception:
                session.connected = False
                session.deliver = None
                return
            session.pending.popleft()


class _ChannelConnection(socketserver.BaseRequestHandler):
    def handle(self) -> None:
        hub: ChannelHub = self.server.hub  # type: ignore[attr-defined]
        write_lock = threading.Lock()
        party: Did | None = None

        def deliver(frame: dict) -> None:
            with write_lock:
                write_frame(self.request, frame)

        try:
            hello = read_frame(self.request)
            if hello is None or "register" not in hello:
                return
            party = Did.parse(hello["register"])
            # confirm before registering: draining buffered frames must not
            # race ahead of the confirmation on this connection
            with write_lock:
                write_frame(self.request, {"registered": str(party)})
            hub.register(party, deliver)
            while True:
                frame = read_frame(self.request)
                if frame is None:
                    break
                inner = frame.get("frame")
                if not isinstance(inner, dict):
                    continue
                frame_type, payload = parse_channel_frame(inner)
                if frame.get("to"):
                    hub.push(Did.parse(frame["to"]), payload, frame_type)
                elif frame_type == "ack":
                    hub.record_ack(party)
        except (ProtocolError, OSError, RescredError):
            pass
        finally:
            if party is not None:
                hub.disconnect(party, deliver)


class ChannelServer:
    """Exposes a ChannelHub over TCP with length-prefixed JSON frames."""

    def __init__(self, hub: ChannelHub, host: str = "127.0.0.1", port: int = 0):
        self.hub = hub
        self._server = socketserver.ThreadingTCPServer((host, port), _ChannelConnection, bind_and_activate=False)
        self._server.allow_reuse_address = True
        self._server.daemon_threads = True
        self._server.hub = hub  # type: ignore[attr-defined]
        self._server.server_bind()
        self._server.server_activate()
        self.address = self._server.server_address
        self._thread = threading.Thread(target=self._server.serve_forever, kwargs={"poll_interval": 0.05}, daemon=True)
        self._thread.start()

    def close(self) -> None:
        self._server.shutdown()
        self._server.server_close()


class ChannelClient:
    """One party's connection to the hub. Incoming frames are handled on a
    dedicated reader thread, strictly in arrival order."""

    def __init__(self, host: str, port: int, party_did: Did, on_frame=None, timeout: float = 5.0):
        self.party_did = party_did
        self._on_frame = on_frame
        try:
            self._sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise BrokerUnavailableError(f"cannot reach channel hub at {host}:{port}") from exc
        self._write_lock = threading.Lock()
        write_frame(self._sock, {"register": str(party_did)})
        self._sock.settimeout(timeout)
        confirm = read_frame(self._sock)
        if not confirm or confirm.get("registered") != str(party_did):
            raise ProtocolError("registration not confirmed")
        self._sock.settimeout(None)
        self._closed = False
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _read_loop(self) -> None:
        while not self._closed:
            try:
                frame = read_frame(self._sock)
            except ProtocolError:
                break
            if frame is None:
                break
            if "frameType" not in frame:
                continue
            try:
                frame_type, payload = parse_channel_frame(frame)
            except RescredError:
                continue
            if self._on_frame is not None:
                try:
                    self._on_frame(frame_type, payload)
                except Exception:
                    continue

    def send(self, to_did: Did, frame_type: str, payload: bytes) -> None:
        with self._write_lock:
            write_frame(self._sock, {"to": str(to_did), "frame": make_channel_frame(frame_type, payload)})

    def send_ack(self, payload: bytes = b"") -> None:
        with self._write_lock:
            write_frame(self._sock, {"frame": make_channel_frame("ack", payload)})

    def close(self) -> None:
        self._closed = True
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()
        self._reader.join(timeout=1.0)
