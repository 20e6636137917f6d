"""Text checkpoint container: JSON metadata plus base64-encoded arrays.

Arrays are stored C-order (row-major), little-endian, with their dtype
and shape spelled out, so files are portable and diffable.
"""

import base64
import json

import numpy as np

FORMAT = "hrp-container"
VERSION = 1
_DTYPES = {"float64": "<f8", "int64": "<i8", "bool": "|b1"}


def encode_array(a) -> dict:
    a = np.asarray(a)
    name = "bool" if a.dtype == bool else ("int64" if a.dtype.kind in "iu" else "float64")
    raw = np.ascontiguousarray(a, dtype=_DTYPES[name]).tobytes(order="C")
    return {"dtype": name, "shape": list(a.shape), "data": base64.b64encode(raw).decode("ascii")}


def decode_array(d) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    arr = np.frombuffer(raw, dtype=_DTYPES[d["dtype"]]).reshape(d["shape"])
    return arr.astype(d["dtype"])


def dumps(kind: str, arrays: dict, meta: dict) -> str:
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "kind": kind,
        "byteorder": "little",
        "order": "C",
        "meta": meta,
        "arrays": {k: encode_array(v) for k, v in arrays.items()},
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def loads(text: str, kind: str | None = None):
    doc = json.loads(text)
    if doc.get("format") != FORMAT:
        raise ValueError("not an hrp container")
    if doc.get("version") != VERSION:
        raise ValueError(f"unsupported container version {doc.get('version')}")
    if kind is not None and doc.get("kind") != kind:
        raise ValueError(f"expected a {kind!r} container, found {doc.get('kind')!r}")
    arrays = {k: decode_array(v) for k, v in doc["arrays"].items()}
    return arrays, doc["meta"]


def save(path, kind, arrays, meta):
    with open(path, "w") as fh:
        fh.write(dumps(kind, arrays, meta))


def load(path, kind=None):
    with open(path) as fh:
        return loads(fh.read(), kind)
