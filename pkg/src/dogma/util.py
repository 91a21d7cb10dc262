"""Small shared helpers: apportionment, hashing, canonical JSON."""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path

from .errors import ConfigError


def largest_remainder(total: int, weights) -> list[int]:
    """Apportion `total` integer units proportionally to `weights`.

    Floors the exact shares, then hands the leftover units to the largest
    fractional remainders; remainder ties go to the earlier position, so the
    result is deterministic for a fixed weight order.
    """
    if total < 0:
        raise ConfigError(f"cannot apportion a negative total ({total})")
    weights = [float(w) for w in weights]
    if any(w < 0 for w in weights):
        raise ConfigError("apportionment weights must be non-negative")
    wsum = sum(weights)
    if not weights or wsum == 0.0:
        return [0] * len(weights)
    exact = [total * w / wsum for w in weights]
    shares = [math.floor(e) for e in exact]
    leftover = total - sum(shares)
    order = sorted(range(len(weights)), key=lambda i: (-(exact[i] - shares[i]), i))
    for i in order[:leftover]:
        shares[i] += 1
    return shares


def canonical_json(obj) -> str:
    """Stable JSON text: sorted keys, fixed separators, trailing newline."""
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(canonical_json(obj), encoding="utf-8")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
