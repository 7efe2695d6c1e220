"""Deterministic seed derivation.

A single master seed fans out into independent child streams addressed by a
structured path such as ``(episode, frame, purpose)``. Splitting is hash
based, so adding a new purpose never perturbs the streams of existing ones,
and the same path always yields the same child seed on every platform.
"""

from __future__ import annotations

import hashlib


def child_seed(master: int, *path: object) -> int:
    """Derive a 64-bit child seed from ``master`` and a path of labels.

    Path elements are stringified, so mixed ints and strings are fine:
    ``child_seed(1234, "episode", 3, "frame", 7, "sensor")``.
    """
    digest = hashlib.sha256()
    digest.update(str(int(master)).encode("utf-8"))
    for part in path:
        digest.update(b"/")
        digest.update(str(part).encode("utf-8"))
    return int.from_bytes(digest.digest()[:8], "big")
