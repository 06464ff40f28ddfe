"""Small shared helpers: canonical JSON and seeded deterministic draws."""

from __future__ import annotations

import hashlib
import json
from typing import Any


def round_floats(obj: Any, ndigits: int = 12) -> Any:
    """Recursively round floats so serialized reports are byte-stable."""
    if isinstance(obj, float):
        return round(obj, ndigits)
    if isinstance(obj, dict):
        return {k: round_floats(v, ndigits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [round_floats(v, ndigits) for v in obj]
    return obj


def canonical_json(obj: Any) -> str:
    """Deterministic JSON: sorted keys, compact separators, rounded floats."""
    return json.dumps(round_floats(obj), sort_keys=True, separators=(",", ":"))


def stable_uniform(*parts: object) -> float:
    """Deterministic uniform draw in [0, 1) keyed by the given parts.

    Independent draws come from distinct part tuples; unlike ``random.Random``
    this does not depend on call order, so concurrent consumers stay
    reproducible.
    """
    key = "\x1f".join(str(p) for p in parts).encode("utf-8")
    digest = hashlib.sha256(key).digest()
    return int.from_bytes(digest[:8], "big") / 2**64
