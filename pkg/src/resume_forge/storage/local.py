"""Local-directory checkpoint store.

Files live directly under the root as ``<role>.gen-N.ilck``. A commit
writes ``.<name>.tmp``, fsyncs it, renames it into place with
``os.replace`` and fsyncs the directory; only then is the role's
``<role>.pointer`` file swapped (same write/fsync/rename dance) to name
the new generation. Readers trust the pointer and fall back to the next
lower generation if that file is missing or damaged.
"""

from __future__ import annotations

import logging
import os
from pathlib import Path

from ..codec import verify_checksum
from .base import (
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


def _fsync_dir(path: Path) -> None:
    try:
        fd = os.open(path, os.O_RDONLY)
    except OSError:  # some platforms cannot open directories
        return
    try:
        os.fsync(fd)
    finally:
        os.close(fd)


def atomic_write(path: Path, data: bytes) -> None:
    """Replace ``path`` with ``data`` so readers see old or new, never half."""
    tmp = path.with_name(f".{path.name}.tmp")
    try:
        with open(tmp, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise
    _fsync_dir(path.parent)


class LocalStore(CheckpointStore):
    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def __repr__(self) -> str:
        return f"LocalStore({str(self.root)!r})"

    def path_for(self, role: CheckpointRole | str, generation: int) -> Path:
        return self.root / as_role(role).object_name(generation)

    def _pointer_path(self, role: CheckpointRole) -> Path:
        return self.root / f"{role.prefix}.pointer"

    def _pointer(self, role: CheckpointRole) -> int | None:
        try:
            return int(self._pointer_path(role).read_text().strip())
        except (FileNotFoundError, ValueError):
            return None

    def _generations(self, role: CheckpointRole) -> list[int]:
        gens = []
        for entry in self.root.iterdir():
            parsed = parse_object_name(entry.name)
            if parsed and parsed[0] == role:
                gens.append(parsed[1])
        return sorted(gens)

    def put_checkpoint(self, role, data) -> StoreDescriptor:
        role = as_role(role)
        data = validate_payload(data)
        on_disk = self._generations(role)
        gen = max([*on_disk, self._pointer(role) or 0]) + 1
        try:
            atomic_write(self.path_for(role, gen), data)
            atomic_write(self._pointer_path(role), f"{gen}\n".encode())
        except OSError as exc:
            raise WriteFailed(f"could not commit {role} generation {gen}: {exc}") from exc
        previous = [g for g in on_disk if g < gen]
        for old in previous[:-1]:
            self.path_for(role, old).unlink(missing_ok=True)
        return StoreDescriptor(role, gen, len(data), verify_checksum(data), role.object_name(gen))

    def _read(self, role: CheckpointRole, gen: int) -> bytes | None:
        try:
            return self.path_for(role, gen).read_bytes()
        except FileNotFoundError:
            return None

    def get_checkpoint(self, role) -> Fetched:
        role = as_role(role)
        on_disk = sorted(self._generations(role), reverse=True)
        pointer = self._pointer(role)
        if pointer is None:
            candidates = on_disk
        else:
            candidates = [pointer] + [g for g in on_disk if g < pointer]
        fetched = pick_readable(role, candidates, lambda g: self._read(role, g))
        if fetched.fell_back:
            logger.warning("%s generation %s unreadable; using generation %s", role, candidates[0], fetched.generation)
        return fetched

    def list_checkpoints(self) -> list[StoreDescriptor]:
        out = []
        for entry in self.root.iterdir():
            parsed = parse_object_name(entry.name)
            if parsed is None:
                continue
            data = entry.read_bytes()
            out.append(StoreDescriptor(parsed[0], parsed[1], len(data), verify_checksum(data), entry.name))
        return sorted(out, key=lambda d: (d.role.sort_key, d.generation))
