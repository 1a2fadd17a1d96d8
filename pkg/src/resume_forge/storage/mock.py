"""In-process stand-in for a cloud drive whose sessions can die.

Objects are named ``<role>.gen-N.ilck``; an upload first lands as
``<name>.part`` and is renamed on completion. Readers resolve a role to
the highest generation that verifies. Faults are scheduled by the index
of ``put_checkpoint`` calls made since :meth:`MockRemoteStore.inject_faults`.
"""

from __future__ import annotations

import logging
import math
import threading
import time
from dataclasses import dataclass

from ..codec import verify_checksum
from .base import (
    BackendUnavailable,
    CheckpointRole,
    CheckpointStore,
    Fetched,
    StoreDescriptor,
    WriteFailed,
    as_role,
    parse_object_name,
    pick_readable,
    validate_payload,
)

logger = logging.getLogger(__name__)

PART_SUFFIX = ".part"
FAULT_KINDS = ("fail_before_write", "truncate_at", "disconnect_after_write", "delay_ms")


@dataclass(frozen=True)
class Fault:
    kind: str
    value: float = 0.0

    def __post_init__(self):
        if self.kind not in FAULT_KINDS:
            raise ValueError(f"unknown fault {self.kind!r}")
        if self.kind == "truncate_at" and not 0.0 < self.value < 1.0:
            raise ValueError(f"truncate_at fraction must be in (0, 1), got {self.value}")
        if self.kind == "delay_ms" and (self.value < 0 or self.value != int(self.value)):
            raise ValueError(f"delay_ms must be a non-negative integer, got {self.value}")

    def __str__(self) -> str:
        if self.kind == "truncate_at":
            return f"truncate_at:{self.value!r}"
        if self.kind == "delay_ms":
            return f"delay_ms:{int(self.value)}"
        return self.kind


@dataclass(frozen=True)
class FaultPlan:
    schedule: tuple[tuple[int, Fault], ...] = ()

    def __post_init__(self):
        schedule = tuple((int(i), f) for i, f in self.schedule)
        indices = [i for i, _ in schedule]
        if len(set(indices)) != len(indices):
            raise ValueError("fault plan operation indices must be unique")
        if any(i < 0 for i in indices):
            raise ValueError("fault plan operation indices must be non-negative")
        object.__setattr__(self, "schedule", schedule)

    @classmethod
    def parse(cls, text: str) -> "FaultPlan":
        """Parse ``"0:fail_before_write; 3:truncate_at:0.5; 5:delay_ms:20"``."""
        items = []
        for chunk in text.replace("\n", ";").split(";"):
            chunk = chunk.strip()
            if not chunk:
                continue
            index, _, rest = chunk.partition(":")
            kind, _, value = rest.partition(":")
            items.append((int(index), Fault(kind.strip(), float(value) if value else 0.0)))
        return cls(tuple(items))

    def __str__(self) -> str:
        return "; ".join(f"{i}:{f}" for i, f in self.schedule)


class MockRemoteStore(CheckpointStore):
    def __init__(self):
        self.objects: dict[str, bytes] = {}
        self.connected = True
        self._faults: dict[int, Fault] = {}
        self._put_index = 0
        self._lock = threading.RLock()

    def __repr__(self) -> str:
        return f"MockRemoteStore({len(self.objects)} objects, connected={self.connected})"

    def inject_faults(self, plan: FaultPlan) -> None:
        with self._lock:
            self._faults = dict(plan.schedule)
            self._put_index = 0

    def disconnect(self) -> None:
        with self._lock:
            self.connected = False

    def reconnect(self) -> None:
        with self._lock:
            self.connected = True

    def _require_session(self) -> None:
        if not self.connected:
            raise BackendUnavailable("remote session is disconnected; reconnect first")

    def _generations(self, role: CheckpointRole, *, include_parts: bool = False) -> list[int]:
        gens = []
        for name in self.objects:
            partial = name.endswith(PART_SUFFIX)
            if partial and not include_parts:
                continue
            parsed = parse_object_name(name[: -len(PART_SUFFIX)] if partial else name)
            if parsed and parsed[0] == role:
                gens.append(parsed[1])
        return sorted(gens)

    def put_checkpoint(self, role, data) -> StoreDescriptor:
        role = as_role(role)
        data = validate_payload(data)
        with self._lock:
            self._require_session()
            fault = self._faults.pop(self._put_index, None)
            self._put_index += 1
        if fault is not None and fault.kind == "delay_ms":
            time.sleep(fault.value / 1000.0)
        with self._lock:
            self._require_session()
            if fault is not None and fault.kind == "fail_before_write":
                raise BackendUnavailable(f"injected failure before uploading {role}")
            gen = max(self._generations(role, include_parts=True), default=0) + 1
            name = role.object_name(gen)
            part = name + PART_SUFFIX
            if fault is not None and fault.kind == "truncate_at":
                cut = min(len(data) - 1, max(1, math.floor(len(data) * fault.value))) if len(data) > 1 else 0
                self.objects[part] = data[:cut]
                raise WriteFailed(f"upload of {name} interrupted after {cut} of {len(data)} bytes")
            self.objects[part] = data
            self.objects[name] = self.objects.pop(part)
            self._prune(role, gen)
            if fault is not None and fault.kind == "disconnect_after_write":
                self.connected = False
                logger.info("session dropped after committing %s", name)
            return StoreDescriptor(role, gen, len(data), verify_checksum(data), name)

    def _prune(self, role: CheckpointRole, current: int) -> None:
        committed = [g for g in self._generations(role) if g < current]
        keep = {current, committed[-1]} if committed else {current}
        for name in list(self.objects):
            partial = name.endswith(PART_SUFFIX)
            parsed = parse_object_name(name[: -len(PART_SUFFIX)] if partial else name)
            if parsed and parsed[0] == role and (partial or parsed[1] not in keep):
                del self.objects[name]

    def get_checkpoint(self, role) -> Fetched:
        role = as_role(role)
        with self._lock:
            self._require_session()
            candidates = sorted(self._generations(role), reverse=True)
            return pick_readable(role, candidates, lambda g: self.objects.get(role.object_name(g)))

    def list_checkpoints(self) -> list[StoreDescriptor]:
        with self._lock:
            self._require_session()
            out = []
            for name, data in self.objects.items():
                partial = name.endswith(PART_SUFFIX)
                parsed = parse_object_name(name[: -len(PART_SUFFIX)] if partial else name)
                if parsed is None:
                    continue
                out.append(StoreDescriptor(parsed[0], parsed[1], len(data), verify_checksum(data), name))
        return sorted(out, key=lambda d: (d.role.sort_key, d.generation, d.name))

    def corrupt(self, name: str, offset: int = -1, xor: int = 0xFF) -> None:
        """Flip bits of a stored object in place (test hook)."""
        with self._lock:
            buf = bytearray(self.objects[name])
            buf[offset] ^= xor
            self.objects[name] = bytes(buf)
