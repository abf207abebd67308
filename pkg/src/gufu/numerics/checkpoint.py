"""Checkpoint files: a JSON manifest plus a little-endian float64 payload.

The manifest lists entry name, shape and byte offset into the payload.  The
payload is raw '<f8' bytes, so save -> load round-trips are bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import ValidationError

__all__ = ["save_checkpoint", "load_checkpoint"]

_DTYPE = "<f8"


def save_checkpoint(prefix: str | Path, entries: dict[str, np.ndarray]) -> None:
    """Write entries to <prefix>.json / <prefix>.bin (insertion order kept)."""
    prefix = Path(prefix)
    manifest = []
    offset = 0
    chunks = []
    for name, array in entries.items():
        a = np.ascontiguousarray(np.asarray(array, dtype=np.float64))
        raw = a.astype(_DTYPE, copy=False).tobytes()
        manifest.append({"name": name, "shape": list(a.shape), "offset": offset})
        offset += len(raw)
        chunks.append(raw)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    with open(prefix.with_suffix(".bin"), "wb") as f:
        for raw in chunks:
            f.write(raw)
    with open(prefix.with_suffix(".json"), "w") as f:
        json.dump({"dtype": _DTYPE, "entries": manifest}, f, indent=1, sort_keys=False)
        f.write("\n")


def load_checkpoint(prefix: str | Path) -> dict[str, np.ndarray]:
    prefix = Path(prefix)
    try:
        with open(prefix.with_suffix(".json")) as f:
            manifest = json.load(f)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"corrupt checkpoint manifest {prefix}: {exc}") from exc
    if manifest.get("dtype") != _DTYPE:
        raise ValidationError(f"unsupported checkpoint dtype: {manifest.get('dtype')}")
    payload = Path(prefix.with_suffix(".bin")).read_bytes()
    out: dict[str, np.ndarray] = {}
    for entry in manifest["entries"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        stop = start + 8 * count
        if stop > len(payload):
            raise ValidationError(
                f"checkpoint payload truncated for entry {entry['name']!r}"
            )
        a = np.frombuffer(payload[start:stop], dtype=_DTYPE).reshape(shape)
        out[entry["name"]] = a.astype(np.float64).copy()
    return out
