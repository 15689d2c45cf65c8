"""Single-file tensor container: JSON manifest line + little-endian float64 blob.

Layout: the first line of the file is a JSON object
``{"format_version": 1, "meta": {...}, "tensors": [{"name", "shape", "offset"}, ...]}``
terminated by ``\\n``; the rest of the file is the concatenation of every
tensor's row-major float64 little-endian bytes, with ``offset`` counting
bytes from the start of the blob. Round-trips are bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import FormatError

FORMAT_VERSION = 1


def save_tensors(path: str | Path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    path = Path(path)
    entries = []
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(np.asarray(arr, dtype=np.float64))
        raw = arr.astype("<f8", copy=False).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(raw)
        offset += len(raw)
    manifest = {"format_version": FORMAT_VERSION, "meta": meta or {}, "tensors": entries}
    header = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode() + b"\n"
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(header)
        for raw in blobs:
            fh.write(raw)
    tmp.replace(path)


def load_tensors(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.exists():
        raise FormatError(f"tensor file not found: {path}")
    with open(path, "rb") as fh:
        header = fh.readline()
        blob = fh.read()
    try:
        manifest = json.loads(header.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable manifest in {path}: {exc}") from exc
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: format version {version!r}, expected {FORMAT_VERSION}")
    tensors: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        shape = tuple(int(s) for s in entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = int(entry["offset"])
        end = start + 8 * count
        if end > len(blob):
            raise FormatError(
                f"{path}: tensor {entry['name']!r} needs bytes [{start}, {end}) "
                f"but blob has {len(blob)}"
            )
        arr = np.frombuffer(blob[start:end], dtype="<f8").reshape(shape)
        tensors[entry["name"]] = arr.astype(np.float64, copy=True)
    return tensors, manifest.get("meta", {})
