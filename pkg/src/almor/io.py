"""Serialization: basis container, config fingerprints, CSV and JSON payloads.

The basis container is a small binary format (magic header, JSON metadata,
raw little-endian float64 payload) chosen so that round trips are bitwise
exact and repeated runs with the same seed produce byte-identical files.
All floating-point text output uses ``repr``, the shortest round-trip
representation.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

__all__ = [
    "canonical_json",
    "problem_fingerprint",
    "save_basis",
    "load_basis",
    "write_csv_matrix",
    "write_json",
    "write_jsonl",
]

MAGIC = b"ALMORB1\n"


def canonical_json(obj) -> str:
    """Deterministic JSON text (sorted keys, round-trip float formatting)."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def problem_fingerprint(problem, sigma) -> str:
    payload = canonical_json({"problem": problem.config, "sigma": sigma})
    return hashlib.sha256(payload.encode()).hexdigest()


def save_basis(path, rb) -> None:
    """Write a ReducedBasis container (bitwise-reproducible)."""
    header = {
        "format": "almor-basis",
        "version": 1,
        "n_sub": len(rb.vectors),
        "n_loc": rb.grid.n_loc,
        "seed": rb.seed,
        "fingerprint": rb.fingerprint,
        "tags": [list(t) for t in rb.tags],
        "dims": [len(v) for v in rb.vectors],
    }
    head = canonical_json(header).encode()
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<Q", len(head))
    blob += head
    for vecs in rb.vectors:
        for v in vecs:
            blob += np.asarray(v, dtype="<f8").tobytes()
    Path(path).write_bytes(bytes(blob))


def load_basis(path, disc):
    """Read a basis container back into a ReducedBasis for ``disc``."""
    from .training import ReducedBasis

    raw = Path(path).read_bytes()
    if raw[:len(MAGIC)] != MAGIC:
        raise ValueError(f"{path} is not a basis container (bad magic)")
    off = len(MAGIC)
    (hlen,) = struct.unpack("<Q", raw[off:off + 8])
    off += 8
    header = json.loads(raw[off:off + hlen].decode())
    off += hlen
    if header.get("version") != 1:
        raise ValueError(f"unsupported basis container version {header.get('version')}")
    n_loc = header["n_loc"]
    if header["n_sub"] != disc.grid.n_sub or n_loc != disc.grid.n_loc:
        raise ValueError("basis container does not match the discretization size")
    rb = ReducedBasis(disc, seed=header["seed"], fingerprint=header["fingerprint"])
    for sub in range(header["n_sub"]):
        for tag in header["tags"][sub]:
            v = np.frombuffer(raw, dtype="<f8", count=n_loc, offset=off).copy()
            off += n_loc * 8
            rb.vectors[sub].append(v)
            rb.tags[sub].append(tag)
    if off != len(raw):
        raise ValueError("basis container has trailing data")
    return rb


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv_matrix(path, mat) -> None:
    """Row-major CSV with a header line of column indices."""
    mat = np.asarray(mat)
    lines = ["," .join(str(j) for j in range(mat.shape[1]))]
    for row in mat:
        lines.append(",".join(_fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_jsonl(path, records) -> None:
    lines = [json.dumps(r, sort_keys=True) for r in records]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))
