"""Field files: an 8-byte little-endian header length, a JSON header, then raw data.

The payload is row-major little-endian [T?, C, H, W]. The header records a
git-style blob hash (``sha1(b"blob <n>\\0" + payload)``) that is checked on
every read.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

FORMAT = "nestcast-field/1"
DTYPES = {"f32le": np.dtype("<f4"), "f64le": np.dtype("<f8")}


class FieldFormatError(Exception):
    """Base class for malformed field files (CLI exit code 3)."""

    category = "format"


class HashMismatchError(FieldFormatError):
    category = "hash-mismatch"


class TruncatedPayloadError(FieldFormatError):
    category = "truncated-payload"


class UnknownDtypeError(FieldFormatError):
    category = "unknown-dtype"


class ConversionRequiredError(FieldFormatError):
    category = "conversion-required"


def blob_hash(payload: bytes) -> str:
    h = hashlib.sha1()
    h.update(b"blob %d\0" % len(payload))
    h.update(payload)
    return h.hexdigest()


def file_hash(path: str) -> str:
    with open(path, "rb") as f:
        return blob_hash(f.read())


@dataclass
class FieldFile:
    data: np.ndarray
    channels: list[str] = field(default_factory=list)
    lat0: float = -90.0
    dlat: float | None = None
    lon0: float = 0.0
    dlon: float | None = None
    units: list[str] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)
    hash: str | None = None

    @property
    def shape(self):
        return self.data.shape

    def lat(self) -> np.ndarray:
        h = self.data.shape[-2]
        dlat = self.dlat if self.dlat is not None else 180.0 / h
        return self.lat0 + (np.arange(h) + 0.5) * dlat

    def lon(self) -> np.ndarray:
        w = self.data.shape[-1]
        dlon = self.dlon if self.dlon is not None else 360.0 / w
        return self.lon0 + (np.arange(w) + 0.5) * dlon


def _tag(dtype) -> str:
    dt = np.dtype(dtype)
    for tag, d in DTYPES.items():
        if d.kind == dt.kind and d.itemsize == dt.itemsize:
            return tag
    raise UnknownDtypeError(f"unsupported dtype {dt}")


def write_field(path: str, ff: FieldFile | np.ndarray, **meta) -> str:
    """Write a field file and return its payload hash."""
    if not isinstance(ff, FieldFile):
        ff = FieldFile(np.asarray(ff), **meta)
    data = np.asarray(ff.data)
    if data.ndim not in (3, 4):
        raise ValueError(f"field must be [C, H, W] or [T, C, H, W], got {data.shape}")
    tag = _tag(data.dtype)
    payload = np.ascontiguousarray(data, dtype=DTYPES[tag]).tobytes()
    h, w = data.shape[-2:]
    header = {
        "format": FORMAT,
        "dims": list(data.shape),
        "dtype": tag,
        "channels": list(ff.channels) or [f"ch{i}" for i in range(data.shape[-3])],
        "lat0": ff.lat0,
        "dlat": ff.dlat if ff.dlat is not None else 180.0 / h,
        "lon0": ff.lon0,
        "dlon": ff.dlon if ff.dlon is not None else 360.0 / w,
        "units": list(ff.units),
        "provenance": ff.provenance,
        "hash": blob_hash(payload),
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(raw)))
        f.write(raw)
        f.write(payload)
    return header["hash"]


def read_header(path: str) -> tuple[dict, int]:
    with open(path, "rb") as f:
        head = f.read(8)
        if len(head) < 8:
            raise TruncatedPayloadError(f"{path}: file shorter than the length prefix")
        (n,) = struct.unpack("<Q", head)
        raw = f.read(n)
    if len(raw) < n:
        raise TruncatedPayloadError(f"{path}: header truncated")
    try:
        header = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FieldFormatError(f"{path}: header is not valid JSON ({exc})") from None
    if header.get("format") != FORMAT:
        raise FieldFormatError(f"{path}: not a {FORMAT} file")
    return header, 8 + n


def read_field(path: str, dtype: str | None = None, convert: bool = False) -> FieldFile:
    """Read and verify a field file.

    ``dtype`` ("f32le"/"f64le") requests a precision; narrowing f64 to f32
    needs ``convert=True``.
    """
    header, offset = read_header(path)
    tag = header.get("dtype")
    if tag not in DTYPES:
        raise UnknownDtypeError(f"{path}: unknown dtype tag {tag!r}")
    dims = [int(d) for d in header["dims"]]
    expected = int(np.prod(dims)) * DTYPES[tag].itemsize
    with open(path, "rb") as f:
        f.seek(offset)
        payload = f.read()
    if len(payload) < expected:
        raise TruncatedPayloadError(f"{path}: payload has {len(payload)} bytes, expected {expected}")
    if len(payload) > expected:
        raise FieldFormatError(f"{path}: {len(payload) - expected} trailing bytes after payload")
    if blob_hash(payload) != header.get("hash"):
        raise HashMismatchError(f"{path}: payload hash does not match header")
    data = np.frombuffer(payload, dtype=DTYPES[tag]).reshape(dims)
    if dtype is not None:
        if dtype not in DTYPES:
            raise UnknownDtypeError(f"unknown requested dtype {dtype!r}")
        if dtype != tag:
            if tag == "f64le" and dtype == "f32le" and not convert:
                raise ConversionRequiredError(f"{path}: stored as f64le; pass convert=True to narrow to f32le")
        data = data.astype(DTYPES[dtype])
    data = data.astype(data.dtype.newbyteorder("="))
    return FieldFile(
        data,
        header.get("channels", []),
        header.get("lat0", -90.0),
        header.get("dlat"),
        header.get("lon0", 0.0),
        header.get("dlon"),
        header.get("units", []),
        header.get("provenance", {}),
        header.get("hash"),
    )
