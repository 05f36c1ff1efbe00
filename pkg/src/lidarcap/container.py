"""Single-file container for named numpy arrays plus a JSON metadata blob.

Byte layout (all integers little-endian):

    bytes 0..3    magic ``b"ARC1"``
    bytes 4..11   uint64 header length ``H``
    bytes 12..12+H-1   UTF-8 JSON header
    remainder     raw array payload

The JSON header is ``{"arrays": {name: {"dtype", "shape", "offset"}}, "meta": {...}}``
where ``dtype`` is a numpy dtype string (e.g. ``"<f8"``), ``shape`` a list of ints
and ``offset`` the byte offset of that array inside the payload. Arrays are stored
C-contiguous in little-endian byte order.
"""

import json

import numpy as np

MAGIC = b"ARC1"

# dtypes permitted in containers written by this package
_ALLOWED_KINDS = frozenset("fiub")


class ContainerError(Exception):
    """Malformed or unreadable array container."""

    category = "container"


def write_container(path, arrays, meta=None):
    """Write named arrays and optional JSON-serializable metadata to ``path``."""
    index = {}
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype.kind not in _ALLOWED_KINDS:
            raise ContainerError(f"array {name!r} has unsupported dtype {arr.dtype}")
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        blob = le.tobytes()
        index[name] = {
            "dtype": le.dtype.str,
            "shape": list(arr.shape),
            "offset": offset,
        }
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({"arrays": index, "meta": meta or {}}).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(np.uint64(len(header)).tobytes())
        f.write(header)
        for blob in blobs:
            f.write(blob)


def read_container(path):
    """Read a container file, returning ``(arrays, meta)``.

    Raises ContainerError on any structural problem."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise ContainerError(f"{path}: not an ARC1 container")
    header_len = int(np.frombuffer(raw[4:12], dtype="<u8")[0])
    if 12 + header_len > len(raw):
        raise ContainerError(f"{path}: truncated header")
    try:
        header = json.loads(raw[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ContainerError(f"{path}: bad JSON header ({e})") from e
    if not isinstance(header, dict) or "arrays" not in header:
        raise ContainerError(f"{path}: header missing 'arrays' index")
    payload = raw[12 + header_len :]
    arrays = {}
    for name, entry in header["arrays"].items():
        try:
            dtype = np.dtype(entry["dtype"])
            shape = tuple(int(s) for s in entry["shape"])
            offset = int(entry["offset"])
        except (KeyError, TypeError, ValueError) as e:
            raise ContainerError(f"{path}: bad index entry for {name!r} ({e})") from e
        nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64))
        if offset < 0 or offset + nbytes > len(payload):
            raise ContainerError(f"{path}: array {name!r} exceeds payload")
        arr = np.frombuffer(payload, dtype=dtype, count=int(np.prod(shape, dtype=np.int64)), offset=offset)
        arrays[name] = arr.reshape(shape).copy()
    return arrays, header.get("meta", {})
