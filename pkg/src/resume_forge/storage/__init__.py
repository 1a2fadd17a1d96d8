"""Checkpoint stores: a local directory and a fault-injectable mock remote."""

from .base import (
    BEST,
    LATEST,
    AllGenerationsCorrupt,
    BackendUnavailable,
    CheckpointRole,
    CheckpointStore,
    Fetched,
    NotFound,
    PlanRejected,
    StorageError,
    StoreDescriptor,
    WriteFailed,
    as_role,
)
from .local import LocalStore, atomic_write
from .mock import Fault, FaultPlan, MockRemoteStore

__all__ = [
    "BEST",
    "LATEST",
    "AllGenerationsCorrupt",
    "BackendUnavailable",
    "CheckpointRole",
    "CheckpointStore",
    "Fault",
    "FaultPlan",
    "Fetched",
    "LocalStore",
    "MockRemoteStore",
    "NotFound",
    "PlanRejected",
    "StorageError",
    "StoreDescriptor",
    "WriteFailed",
    "as_role",
    "atomic_write",
]
