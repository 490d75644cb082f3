"""Versioned binary container for CVAE weights and solver checkpoints.

Layout (all integers little-endian)::

    magic     8 bytes   b"LGMSEP\\x00W"
    version   u32
    D, C, F   3 x u32   latent dim, class dim, spectral dim (0 if unused)
    meta_len  u32
    meta      JSON      {"kind": ..., "tensors": [[name, shape, is_complex], ...], ...}
    tensors   float64   row-major, in declaration order; complex tensors are
                        stored as interleaved (real, imag) pairs
    digest    32 bytes  SHA-256 of everything above
"""
import hashlib
import json
import struct

import numpy as np

from .errors import FormatError

MAGIC = b"LGMSEP\x00W"
VERSION = 1
_HEAD = struct.Struct("<8sIIIII")


def dumps(tensors, kind, dims=(0, 0, 0), meta=None):
    """Serialize an ordered mapping of arrays to bytes."""
    spec = []
    blobs = []
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        is_complex = np.iscomplexobj(arr)
        spec.append([name, list(arr.shape), bool(is_complex)])
        if is_complex:
            flat = np.stack([arr.real, arr.imag], axis=-1)
        else:
            flat = arr
        blobs.append(np.ascontiguousarray(flat, dtype="<f8").tobytes())
    header = dict(meta or {})
    header["kind"] = kind
    header["tensors"] = spec
    meta_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = _HEAD.pack(MAGIC, VERSION, *(int(x) for x in dims), len(meta_bytes)) + meta_bytes
    body += b"".join(blobs)
    return body + hashlib.sha256(body).digest()


def loads(data, kind=None):
    """Parse bytes produced by :func:`dumps`.

    Returns ``(tensors, dims, meta)``.
    """
    if len(data) < _HEAD.size + 32:
        raise FormatError("container too short", offset=len(data))
    body, digest = data[:-32], data[-32:]
    magic, version, D, C, F, meta_len = _HEAD.unpack_from(body, 0)
    if magic != MAGIC:
        raise FormatError("bad magic", offset=0)
    if version != VERSION:
        raise FormatError(f"unsupported container version {version}", offset=8)
    if hashlib.sha256(body).digest() != digest:
        raise FormatError("digest mismatch, file is corrupt", offset=len(body))
    pos = _HEAD.size
    try:
        meta = json.loads(body[pos:pos + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable metadata: {exc}", offset=pos) from None
    pos += meta_len
    if kind is not None and meta.get("kind") != kind:
        raise FormatError(f"expected a {kind!r} container, found {meta.get('kind')!r}", offset=_HEAD.size)
    tensors = {}
    for name, shape, is_complex in meta["tensors"]:
        full = tuple(shape) + ((2,) if is_complex else ())
        count = int(np.prod(full)) if full else 1
        nbytes = 8 * count
        if pos + nbytes > len(body):
            raise FormatError(f"tensor {name!r} truncated", offset=pos)
        arr = np.frombuffer(body, dtype="<f8", count=count, offset=pos).reshape(full).astype(np.float64)
        if is_complex:
            arr = arr[..., 0] + 1j * arr[..., 1]
        tensors[name] = arr
        pos += nbytes
    if pos != len(body):
        raise FormatError("trailing bytes after last tensor", offset=pos)
    return tensors, (D, C, F), meta


def save(path, tensors, kind, dims=(0, 0, 0), meta=None):
    with open(path, "wb") as fh:
        fh.write(dumps(tensors, kind, dims, meta))


def load(path, kind=None):
    with open(path, "rb") as fh:
        return loads(fh.read(), kind)
