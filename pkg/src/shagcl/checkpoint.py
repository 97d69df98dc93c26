"""Flat, versioned checkpoint files.

Layout: a UTF-8 text header terminated by a line ``end``, followed by the raw
little-endian float64 data of every parameter back to back::

    SHAGCL-CHECKPOINT 1
    meta {"config": {...}, ...}
    param obj_encoder.layers.0.visual.sa.query.weight 32,32 0
    ...
    end
    <binary>

Offsets count bytes from the first byte after the header.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ParseError

MAGIC = "SHAGCL-CHECKPOINT"
VERSION = 1


def save_checkpoint(path: str | Path, state: dict[str, np.ndarray], meta: dict):
    lines = [f"{MAGIC} {VERSION}", "meta " + json.dumps(meta, sort_keys=True, separators=(",", ":"))]
    offset = 0
    blobs = []
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name], dtype="<f8")
        shape = ",".join(str(d) for d in arr.shape)
        lines.append(f"param {name} {shape} {offset}")
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    lines.append("end")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("utf-8"))
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    marker = b"\nend\n"
    cut = raw.find(marker)
    if cut < 0:
        raise ParseError(f"{path}: no header terminator")
    header = raw[:cut].decode("utf-8").split("\n")
    body = raw[cut + len(marker):]
    first = header[0].split()
    if len(first) != 2 or first[0] != MAGIC:
        raise ParseError(f"{path}: not a checkpoint file", line=1)
    if int(first[1]) != VERSION:
        raise ParseError(f"{path}: unsupported checkpoint version {first[1]}", line=1)
    meta: dict = {}
    state: dict[str, np.ndarray] = {}
    for lineno, line in enumerate(header[1:], start=2):
        kind, _, rest = line.partition(" ")
        if kind == "meta":
            meta = json.loads(rest)
        elif kind == "param":
            try:
                name, shape_text, offset_text = rest.split(" ")
                shape = tuple(int(d) for d in shape_text.split(",")) if shape_text else ()
                offset = int(offset_text)
            except ValueError:
                raise ParseError(f"{path}: bad param line", line=lineno) from None
            count = int(np.prod(shape)) if shape else 1
            end = offset + 8 * count
            if end > len(body):
                raise ParseError(f"{path}: truncated data for {name}", line=lineno)
            state[name] = np.frombuffer(body[offset:end], dtype="<f8").reshape(shape).astype(np.float64)
        else:
            raise ParseError(f"{path}: unknown header entry {kind!r}", line=lineno)
    return state, meta
