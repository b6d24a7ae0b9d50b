"""Ledger simulator: DID-document store plus the Trusted Issuer Registry.

The whole state is event-sourced. Every mutation validates its
preconditions, appends a ``RegistryEvent``, and then applies the event; the
apply step is the only code that touches the maps, so replaying the log from
an empty state reproduces any registry exactly. Persistence is a
human-readable JSON-lines append log; a snapshot is just the full event list
in one JSON document.

Trust queries answer "was this DID accredited for this credential type at
time t". Revocation is permanent on an entry: regaining trust means a new
entry, and verifiers who check at verification time will reject credentials
from revoked issuers no matter when those credentials were issued.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass

from .did import Did, DidDocument, METHOD_EBSI
from .errors import RescredError

EVENT_DOC_REGISTERED = "doc-registered"
EVENT_DOC_DEACTIVATED = "doc-deactivated"
EVENT_TIR_REGISTERED = "tir-registered"
EVENT_TIR_REVOKED = "tir-revoked"

_EVENT_KINDS = (EVENT_DOC_REGISTERED, EVENT_DOC_DEACTIVATED, EVENT_TIR_REGISTERED, EVENT_TIR_REVOKED)


class RegistryError(RescredError):
    pass


class AlreadyRegisteredError(RegistryError):
    code = "already-registered"


class InvalidDocumentError(RegistryError):
    code = "invalid-document"


class NotFoundError(RegistryError):
    code = "not-found"


class WrongMethodError(RegistryError):
    code = "wrong-method"


class NoDocumentError(RegistryError):
    code = "no-document"


class AlreadyTrustedError(RegistryError):
    code = "already-trusted"


class NotTrustedError(RegistryError):
    code = "not-trusted"


class IoFailureError(RegistryError):
    code = "io-failure"


class CorruptSnapshotError(RegistryError):
    code = "corrupt-snapshot"


@dataclass
class TirEntry:
    did: Did
    accredited_for: list
    registered_at: int
    revoked_at: int | None = None

    def covers(self, credential_type: str, at: int) -> bool:
        if credential_type not in self.accredited_for:
            return False
        if at < self.registered_at:
            return False
        return self.revoked_at is None or at < self.revoked_at

    def to_wire(self) -> dict:
        return {
            "did": str(self.did),
            "accreditedFor": list(self.accredited_for),
            "registeredAt": self.registered_at,
            "revokedAt": self.revoked_at,
        }


@dataclass(frozen=True)
class RegistryEvent:
    sequence: int
    kind: str
    payload: dict
    at: int

    def to_wire(self) -> dict:
        return {"sequence": self.sequence, "kind": self.kind, "payload": self.payload, "at": self.at}

    @classmethod
    def from_wire(cls, wire: dict) -> "RegistryEvent":
        if wire.get("kind") not in _EVENT_KINDS:
            raise CorruptSnapshotError(f"unknown event kind {wire.get('kind')!r}")
        return cls(sequence=int(wire["sequence"]), kind=wire["kind"], payload=wire["payload"], at=int(wire["at"]))


class TrustRegistry:
    """Single-writer registry; reads and writes share one lock so every
    query sees a consistent state."""

    SNAPSHOT_EVERY = 100

    def __init__(self, data_dir: str | None = None, clock=None):
        self._lock = threading.RLock()
        self._documents: dict[str, DidDocument] = {}
        self._tir: dict[str, TirEntry] = {}
        self._events: list[RegistryEvent] = []
        self._clock = clock or (lambda: int(time.time()))
        self._data_dir = data_dir
        self._log_handle = None
        if data_dir:
            os.makedirs(data_dir, exist_ok=True)
            log_path = os.path.join(data_dir, "events.log")
            if os.path.exists(log_path):
                self._load_log(log_path)
            try:
                self._log_handle = open(log_path, "a", encoding="utf-8")
            except OSError as exc:
                raise IoFailureError(str(exc)) from exc

    # -- event machinery ----------------------------------------------------

    def _append(self, kind: str, payload: dict) -> RegistryEvent:
        event = RegistryEvent(sequence=len(self._events) + 1, kind=kind, payload=payload, at=self._clock())
        self._apply(event)
        self._events.append(event)
        if self._log_handle is not None:
            try:
                self._log_handle.write(json.dumps(event.to_wire(), sort_keys=True) + "\n")
                self._log_handle.flush()
                os.fsync(self._log_handle.fileno())
            except OSError as exc:
                raise IoFailureError(str(exc)) from exc
            # periodic snapshot alongside the log; the log stays authoritative
            if event.sequence % self.SNAPSHOT_EVERY == 0:
                self.snapshot(os.path.join(self._data_dir, "snapshot.json"))
        return event

    def _apply(self, event: RegistryEvent) -> None:
        payload = event.payload
        if event.kind == EVENT_DOC_REGISTERED:
            doc = DidDocument.from_wire(payload["document"])
            self._documents[str(doc.id)] = doc
        elif event.kind == EVENT_DOC_DEACTIVATED:
            self._documents[payload["did"]].deactivated = True
        elif event.kind == EVENT_TIR_REGISTERED:
            entry = TirEntry(
                did=Did.parse(payload["did"]),
                accredited_for=list(payload["accreditedFor"]),
                registered_at=event.at,
            )
            self._tir[payload["did"]] = entry
        elif event.kind == EVENT_TIR_REVOKED:
            self._tir[payload["did"]].revoked_at = event.at

    def _load_log(self, path: str) -> None:
        try:
            with open(path, encoding="utf-8") as handle:
                lines = handle.read().splitlines()
        except OSError as exc:
            raise IoFailureError(str(exc)) from exc
        self.replay_wire_events(lines)

    def replay_wire_events(self, lines) -> None:
        for line in lines:
            if not line.strip():
                continue
            try:
                event = RegistryEvent.from_wire(json.loads(line))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise CorruptSnapshotError(f"bad event record: {exc}") from exc
            if event.sequence != len(self._events) + 1:
                raise CorruptSnapshotError(
                    f"sequence gap: expected {len(self._events) + 1}, got {event.sequence}"
                )
            self._apply(event)
            self._events.append(event)

    @classmethod
    def replay(cls, events) -> "TrustRegistry":
        """Rebuild a registry purely from an event list."""
        registry = cls()
        for event in events:
            if event.sequence != len(registry._events) + 1:
                raise CorruptSnapshotError("sequence gap in replay")
            registry._apply(event)
            registry._events.append(event)
        return registry

    # -- document store -----------------------------------------------------

    def register_did_document(self, doc: DidDocument) -> int:
        """Store a new document; returns the event sequence as a receipt."""
        if doc.id.method != METHOD_EBSI:
            raise InvalidDocumentError("only did:ebsi documents are registrable")
        if not doc.verification_keys and not doc.deactivated:
            raise InvalidDocumentError("document has no verification keys")
        with self._lock:
            if str(doc.id) in self._documents:
                raise AlreadyRegisteredError(str(doc.id))
            event = self._append(EVENT_DOC_REGISTERED, {"document": doc.to_wire()})
            return event.sequence

    def resolve_did_document(self, did: Did) -> DidDocument:
        if did.method != METHOD_EBSI:
            raise WrongMethodError("only did:ebsi resolves against the registry")
        with self._lock:
            doc = self._documents.get(str(did))
            if doc is None:
                raise NotFoundError(str(did))
            return doc

    def deactivate_did_document(self, did: Did) -> None:
        with self._lock:
            if str(did) not in self._documents:
                raise NotFoundError(str(did))
            self._append(EVENT_DOC_DEACTIVATED, {"did": str(did)})

    # -- trusted issuer registry ---------------------------------------------

    def tir_register(self, did: Did, accredited_for: list) -> TirEntry:
        with self._lock:
            doc = self._documents.get(str(did))
            if doc is None or doc.deactivated:
                raise NoDocumentError(f"{did} has no active document")
            current = self._tir.get(str(did))
            if current is not None and current.revoked_at is None:
                raise AlreadyTrustedError(str(did))
            self._append(EVENT_TIR_REGISTERED, {"did": str(did), "accreditedFor": list(accredited_for)})
            return self._tir[str(did)]

    def tir_revoke(self, did: Did) -> TirEntry:
        with self._lock:
            entry = self._tir.get(str(did))
            if entry is None or entry.revoked_at is not None:
                raise NotTrustedError(str(did))
            self._append(EVENT_TIR_REVOKED, {"did": str(did)})
            return entry

    def tir_is_trusted(self, did: Did, credential_type: str, at: int | None = None) -> bool:
        with self._lock:
            entry = self._tir.get(str(did))
            if entry is None:
                return False
            return entry.covers(credential_type, self._clock() if at is None else at)

    def tir_entry(self, did: Did) -> TirEntry | None:
        with self._lock:
            return self._tir.get(str(did))

    # -- persistence ----------------------------------------------------------

    @property
    def events(self) -> list:
        with self._lock:
            return list(self._events)

    def snapshot(self, path: str) -> None:
        with self._lock:
            payload = {"version": 1, "events": [e.to_wire() for e in self._events]}
        try:
            with open(path, "w", encoding="utf-8") as handle:
                json.dump(payload, handle, sort_keys=True, indent=1)
        except OSError as exc:
            raise IoFailureError(str(exc)) from exc

    @classmethod
    def restore(cls, path: str, data_dir: str | None = None, clock=None) -> "TrustRegistry":
        try:
            with open(path, encoding="utf-8") as handle:
                raw = handle.read()
        except OSError as exc:
            raise IoFailureError(str(exc)) from exc
        try:
            payload = json.loads(raw)
            events = [RegistryEvent.from_wire(w) for w in payload["events"]]
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise CorruptSnapshotError(f"unreadable snapshot: {exc}") from exc
        restored = cls.replay(events)
        if data_dir or clock:
            fresh = cls(data_dir=data_dir, clock=clock)
            for event in restored._events:
                fresh._apply(event)
                fresh._events.append(event)
            return fresh
        return restored

    def close(self) -> None:
        if self._log_handle is not None:
            self._log_handle.close()
            self._log_handle = None
