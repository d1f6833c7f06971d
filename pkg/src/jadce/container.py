"""Binary array container shared by datasets, pilots and model checkpoints.

Byte layout (all integers little-endian)::

    offset 0   8 bytes   magic  b"JADCEv1\\0"
    offset 8   8 bytes   uint64 header length H
    offset 16  H bytes   UTF-8 JSON header
    16 + H     ...       payload: concatenated float64 little-endian arrays

The header is an object with keys ``format`` (``"jadce-container"``),
``version`` (integer, currently 1), ``kind`` (free string such as
``"dataset"``), ``meta`` (free JSON) and ``arrays``: a list of
``{"name", "shape", "offset", "nbytes"}`` where ``offset`` is relative to the
start of the payload.  Arrays are stored C-order.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"JADCEv1\0"
FORMAT = "jadce-container"
VERSION = 1
_LE_F64 = np.dtype("<f8")


class ContainerError(Exception):
    """Base class for container failures."""


class ContainerIOError(ContainerError, OSError):
    pass


class ShapeMismatchError(ContainerError, ValueError):
    """Header and payload disagree (truncation, bad shapes, corrupt header)."""


class VersionMismatchError(ContainerError, ValueError):
    pass


def save_arrays(path, arrays: Mapping[str, np.ndarray], kind: str, meta: dict | None = None) -> None:
    entries, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype=_LE_F64)
        entries.append({"name": name, "shape": list(a.shape), "offset": offset, "nbytes": a.nbytes})
        chunks.append(a.tobytes())
        offset += a.nbytes
    header = json.dumps({"format": FORMAT, "version": VERSION, "kind": kind,
                         "meta": meta or {}, "arrays": entries}, sort_keys=True).encode()
    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<Q", len(header)))
            fh.write(header)
            for c in chunks:
                fh.write(c)
    except OSError as exc:
        raise ContainerIOError(f"cannot write {path}: {exc}") from exc


def load_arrays(path, kind: str | None = None) -> tuple[dict[str, np.ndarray], dict]:
    """Read a container; returns ``(arrays, meta)``.

    Raises
    ------
    ContainerIOError
        The file cannot be read.
    VersionMismatchError
        The magic/format or version is not the one this code writes.
    ShapeMismatchError
        Header is corrupt, or shapes and payload size disagree.
    """
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise ContainerIOError(f"cannot read {path}: {exc}") from exc
    if len(raw) < 16:
        raise ShapeMismatchError(f"{path}: file too short for a container header")
    if raw[:5] != MAGIC[:5]:
        raise VersionMismatchError(f"{path}: not a jadce container (bad magic)")
    if raw[:8] != MAGIC:
        raise VersionMismatchError(f"{path}: unsupported container magic {raw[:8]!r}")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    if 16 + hlen > len(raw):
        raise ShapeMismatchError(f"{path}: header length {hlen} exceeds file size")
    try:
        header = json.loads(raw[16:16 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ShapeMismatchError(f"{path}: corrupt header ({exc})") from exc
    if header.get("format") != FORMAT:
        raise VersionMismatchError(f"{path}: unknown format {header.get('format')!r}")
    if header.get("version") != VERSION:
        raise VersionMismatchError(
            f"{path}: container version {header.get('version')!r}, expected {VERSION}")
    if kind is not None and header.get("kind") != kind:
        raise ShapeMismatchError(f"{path}: holds {header.get('kind')!r}, expected {kind!r}")
    payload = memoryview(raw)[16 + hlen:]
    arrays = {}
    for e in header.get("arrays", []):
        shape = tuple(int(s) for s in e["shape"])
        count = int(np.prod(shape)) if shape else 1
        if e["nbytes"] != count * 8:
            raise ShapeMismatchError(f"{path}: array {e['name']!r} shape {shape} "
                                     f"does not match {e['nbytes']} bytes")
        end = e["offset"] + e["nbytes"]
        if end > len(payload):
            raise ShapeMismatchError(f"{path}: array {e['name']!r} truncated "
                                     f"(needs {end} payload bytes, file has {len(payload)})")
        arrays[e["name"]] = np.frombuffer(payload[e["offset"]:end], dtype=_LE_F64
                                          ).astype(np.float64).reshape(shape)
    return arrays, header.get("meta", {})


def save_bundle(path, bundle, kind: str, meta: dict | None = None) -> None:
    """Store a :class:`~jadce.numerics.ParamBundle` (frozen flags in the meta)."""
    meta = dict(meta or {})
    meta["frozen"] = sorted(bundle.frozen)
    save_arrays(path, bundle.values, kind, meta)


def load_bundle(path, kind: str | None = None):
    from .numerics import ParamBundle

    arrays, meta = load_arrays(path, kind)
    return ParamBundle(arrays, frozenset(meta.get("frozen", []))), meta
