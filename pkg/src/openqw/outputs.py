"""Tables, binary density dumps and run manifests."""
from __future__ import annotations

import csv
import hashlib
import json
import os
import struct

import numpy as np

from .errors import InvalidArgumentError

RHO_MAGIC = b"OQWRHO\x00\x01"
# header: magic (8 bytes), uint32 node count M, uint32 step, then little-endian
# float64 k[M] followed by complex128 rho[M, 2, 2] in row-major order
_HEADER = struct.Struct("<8sII")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_table(path, header, rows):
    """Comma-separated, single header row, floats in shortest round-trip form."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    return path


def read_table(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_density_dump(path, k, rho, step: int):
    k = np.ascontiguousarray(k, dtype="<f8")
    rho = np.ascontiguousarray(rho, dtype="<c16")
    if rho.shape != (len(k), 2, 2):
        raise InvalidArgumentError("rho must have shape (M, 2, 2)")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(RHO_MAGIC, len(k), int(step)))
        fh.write(k.tobytes())
        fh.write(rho.tobytes())
    return path


def read_density_dump(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    magic, M, step = _HEADER.unpack_from(blob)
    if magic != RHO_MAGIC:
        raise InvalidArgumentError(f"{path}: not a density dump")
    off = _HEADER.size
    k = np.frombuffer(blob, dtype="<f8", count=M, offset=off)
    rho = np.frombuffer(blob, dtype="<c16", count=4 * M, offset=off + 8 * M).reshape(M, 2, 2)
    return k.copy(), rho.copy(), step


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def code_version() -> str:
    try:
        from importlib.metadata import version

        return version("artifact")
    except Exception:
        return "unknown"


def write_manifest(out_dir, config: dict, files, started: str, seconds: float):
    manifest = {
        "config": config,
        "code_version": code_version(),
        "started": started,
        "wall_clock_seconds": seconds,
        "files": {os.path.basename(f): sha256(f) for f in files},
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
