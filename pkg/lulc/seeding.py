"""Labeled seed derivation and content digests for reproducible runs."""
import hashlib
import hmac
from pathlib import Path
from typing import Union

import numpy as np
from pydantic import BaseModel


def derive_seed(master_seed: int, label: str) -> int:
    """
    Derive an independent 64-bit seed for a named subsystem.

    The master seed keys an HMAC-SHA256 over the label, so "tree/3" and
    "tree/4" get unrelated streams while staying reproducible.

    Args:
        master_seed: The run seed from the pipeline config
        label: Subsystem label, e.g. "split/2" or "fold/7"

    Returns:
        Seed in [0, 2**64)
    """
    digest = hmac.new(
        str(int(master_seed)).encode("utf-8"),
        label.encode("utf-8"),
        hashlib.sha256,
    ).digest()
    return int.from_bytes(digest[:8], "little")


def derive_rng(master_seed: int, label: str) -> np.random.Generator:
    """Numpy generator seeded with derive_seed(master_seed, label)."""
    return np.random.default_rng(derive_seed(master_seed, label))


def config_hash(config: BaseModel) -> str:
    """Short SHA-256 over the canonical JSON dump of a config model."""
    payload = config.model_dump_json(exclude_none=False).encode("utf-8")
    return hashlib.sha256(payload).hexdigest()[:12]


def file_digest(path: Union[str, Path]) -> str:
    """Short SHA-256 of a file's bytes, used as a model id."""
    sha = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            sha.update(block)
    return sha.hexdigest()[:12]


def payload_digest(payload: bytes) -> bytes:
    """Full SHA-256 digest of a byte payload (integrity trailer of model files)."""
    return hashlib.sha256(payload).digest()


def digests_match(expected: bytes, actual: bytes) -> bool:
    """Constant-time digest comparison."""
    return hmac.compare_digest(expected, actual)
