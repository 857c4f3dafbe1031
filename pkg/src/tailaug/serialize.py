"""Single-file binary container: JSON header + named float32 sections.

Layout: 8-byte magic ``TAUGBLOB``, u64 little-endian header length, UTF-8
header JSON, then the raw payload.  Every section is stored as
little-endian float32 in C order; the header records name, offset, shape
and a sha256 checksum of the whole payload so reloads are verifiably
bit-exact.  Non-array metadata (configs, counters, metrics) lives in the
header's ``meta`` object.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

from .errors import DataError

_MAGIC = b"TAUGBLOB"
_VERSION = 1


def write_blob(path, sections: dict[str, np.ndarray], meta: dict | None = None) -> None:
    names = sorted(sections)
    payload = bytearray()
    index = []
    for name in names:
        arr = np.ascontiguousarray(sections[name], dtype="<f4")
        index.append({"name": name, "offset": len(payload), "shape": list(arr.shape)})
        payload.extend(arr.tobytes())
    header = {
        "version": _VERSION,
        "dtype": "<f4",
        "sections": index,
        "checksum": "sha256:" + hashlib.sha256(bytes(payload)).hexdigest(),
        "meta": meta or {},
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(np.uint64(len(header_bytes)).tobytes())
        fh.write(header_bytes)
        fh.write(bytes(payload))


def read_blob(path) -> tuple[dict[str, np.ndarray], dict]:
    try:
        with open(path, "rb") as fh:
            magic = fh.read(len(_MAGIC))
            if magic != _MAGIC:
                raise DataError(f"{path}: not a tailaug blob (bad magic)")
            (hlen,) = np.frombuffer(fh.read(8), dtype=np.uint64)
            header = json.loads(fh.read(int(hlen)).decode("utf-8"))
            payload = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read blob {path}: {exc}") from exc
    digest = "sha256:" + hashlib.sha256(payload).hexdigest()
    if digest != header["checksum"]:
        raise DataError(f"{path}: payload checksum mismatch (corrupt or truncated file)")
    sections = {}
    for sec in header["sections"]:
        shape = tuple(sec["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = sec["offset"]
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=start).reshape(shape)
        sections[sec["name"]] = arr.copy()
    return sections, header["meta"]
