"""Binary checkpoint container shared by the trainer, CLI, and service.

Layout: the magic string ``NCOL1``, a little-endian uint32 header length,
a UTF-8 JSON header carrying the architecture config plus one
``{name, shape, offset}`` record per array, then the concatenated raw
little-endian float32 payload. Offsets are byte positions into the payload.
Saving what was just loaded reproduces the file byte for byte.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"NCOL1"


def save_checkpoint(path, config: dict, arrays: dict[str, np.ndarray]) -> None:
    records = []
    chunks = []
    offset = 0
    for name in sorted(arrays):
        src = np.asarray(arrays[name])
        arr = np.ascontiguousarray(src, dtype="<f4")  # note: promotes 0-d to 1-d
        records.append({"name": name, "shape": list(src.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps({"config": config, "arrays": records},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for chunk in chunks:
            fh.write(chunk)


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Returns (config, arrays); array values are upcast to float64."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    blob = path.read_bytes()
    if blob[:5] != MAGIC:
        raise CheckpointError(f"{path} is not a {MAGIC.decode()} checkpoint")
    (hlen,) = struct.unpack("<I", blob[5:9])
    try:
        header = json.loads(blob[9:9 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header in {path}: {exc}") from exc
    payload = blob[9 + hlen:]
    arrays = {}
    for rec in header["arrays"]:
        count = int(np.prod(rec["shape"])) if rec["shape"] else 1
        start = rec["offset"]
        end = start + 4 * count
        if end > len(payload):
            raise CheckpointError(f"array '{rec['name']}' overruns payload in {path}")
        flat = np.frombuffer(payload[start:end], dtype="<f4")
        arrays[rec["name"]] = flat.astype(np.float64).reshape(rec["shape"])
    return header["config"], arrays
