from __future__ import annotations

import abc
import re
from dataclasses import dataclass

from ..codec import FILE_EXTENSION, Verdict, verify_checksum

_LABEL_RE = re.compile(r"[A-Za-z0-9_-]{1,64}")
_OBJECT_RE = re.compile(r"^(latest|best|named-([A-Za-z0-9_-]{1,64}))\.gen-(\d+)" + re.escape(FILE_EXTENSION) + "$")


class StorageError(Exception):
    pass


class BackendUnavailable(StorageError):
    """The session is gone; nothing was changed."""


class WriteFailed(StorageError):
    """The upload did not commit; the previous generation is still current."""


class NotFound(StorageError):
    pass


class AllGenerationsCorrupt(StorageError):
    pass


class PlanRejected(StorageError):
    pass


@dataclass(frozen=True, order=True)
class CheckpointRole:
    """``latest``, ``best`` or a named slot."""

    kind: str
    label: str = ""

    def __post_init__(self):
        if self.kind not in ("latest", "best", "named"):
            raise ValueError(f"unknown role kind {self.kind!r}")
        if self.kind == "named" and not _LABEL_RE.fullmatch(self.label):
            raise ValueError(f"named labels must match [A-Za-z0-9_-]{{1,64}}, got {self.label!r}")
        if self.kind != "named" and self.label:
            raise ValueError("only named roles carry a label")

    @classmethod
    def named(cls, label: str) -> "CheckpointRole":
        return cls("named", label)

    @property
    def prefix(self) -> str:
        return f"named-{self.label}" if self.kind == "named" else self.kind

    @property
    def sort_key(self) -> tuple[int, str]:
        return ({"latest": 0, "best": 1, "named": 2}[self.kind], self.label)

    def object_name(self, generation: int) -> str:
        return f"{self.prefix}.gen-{generation}{FILE_EXTENSION}"

    def __str__(self) -> str:
        return self.prefix


LATEST = CheckpointRole("latest")
BEST = CheckpointRole("best")


def parse_object_name(name: str) -> tuple[CheckpointRole, int] | None:
    m = _OBJECT_RE.match(name)
    if not m:
        return None
    role = CheckpointRole.named(m.group(2)) if m.group(2) else CheckpointRole(m.group(1))
    return role, int(m.group(3))


@dataclass(frozen=True)
class StoreDescriptor:
    role: CheckpointRole
    generation: int
    size_bytes: int
    verdict: Verdict
    name: str = ""


@dataclass(frozen=True)
class Fetched:
    """Result of :meth:`CheckpointStore.get_checkpoint`."""

    data: bytes
    generation: int
    fell_back: bool = False


class CheckpointStore(abc.ABC):
    """Generation-numbered checkpoint objects with a two-deep rollback."""

    @abc.abstractmethod
    def put_checkpoint(self, role: CheckpointRole, data: bytes) -> StoreDescriptor: ...

    @abc.abstractmethod
    def get_checkpoint(self, role: CheckpointRole) -> Fetched: ...

    @abc.abstractmethod
    def list_checkpoints(self) -> list[StoreDescriptor]: ...

    def inject_faults(self, plan) -> None:
        raise PlanRejected(f"{type(self).__name__} does not accept fault plans")

    def reconnect(self) -> None:
        """Start a fresh session. A no-op where sessions never die."""


def pick_readable(role: CheckpointRole, candidates, read) -> Fetched:
    """Newest generation whose bytes verify, walking down from ``candidates[0]``.

    ``candidates`` is newest-first; ``read(gen)`` returns bytes or None.
    """
    if not candidates:
        raise NotFound(f"no committed {role} checkpoint")
    newest = candidates[0]
    for gen in candidates:
        data = read(gen)
        if data is not None and verify_checksum(data) is Verdict.VALID:
            return Fetched(data, gen, fell_back=gen != newest)
    raise AllGenerationsCorrupt(f"every retained {role} generation fails verification")


def as_role(role: CheckpointRole | str) -> CheckpointRole:
    if isinstance(role, CheckpointRole):
        return role
    if role in ("latest", "best"):
        return CheckpointRole(role)
    if role.startswith("named-"):
        return CheckpointRole.named(role[len("named-"):])
    raise ValueError(f"unknown role {role!r}")


def validate_payload(data: bytes) -> bytes:
    if not isinstance(data, (bytes, bytearray, memoryview)):
        raise TypeError("checkpoint payload must be bytes")
    data = bytes(data)
    if not data:
        raise ValueError("refusing to store an empty checkpoint")
    return data
