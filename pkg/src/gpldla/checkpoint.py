"""Binary checkpoint files: magic "GPLD", version, then named tensors.

Layout (all integers little-endian, payloads float64 little-endian):

    "GPLD" | u32 version | repeated tensor records until EOF
    record: u32 name length | name utf-8 | u32 rank | u64 extents | payload

Names are written in sorted order so identical tensor dicts always
produce identical bytes.
"""

import struct

import numpy as np

from .errors import ParseError

MAGIC = b"GPLD"
VERSION = 1


def save_checkpoint(path, tensors):
    """Write a {name: ndarray} dict; scalars are stored as rank-0."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        for name in sorted(tensors):
            # note: ascontiguousarray would promote rank-0 arrays to rank 1;
            # astype below already hands tobytes a fresh contiguous buffer
            arr = np.asarray(tensors[name], dtype=np.float64)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            for extent in arr.shape:
                fh.write(struct.pack("<Q", extent))
            fh.write(arr.astype("<f8").tobytes())


def _take(buf, offset, count, path, what):
    end = offset + count
    if end > len(buf):
        raise ParseError(f"{path}: truncated checkpoint while reading {what}")
    return buf[offset:end], end


def load_checkpoint(path):
    """Read a checkpoint back into a {name: ndarray} dict."""
    with open(path, "rb") as fh:
        buf = fh.read()
    head, offset = _take(buf, 0, 8, path, "header")
    if head[:4] != MAGIC:
        raise ParseError(f"{path}: bad magic {head[:4]!r}, expected {MAGIC!r}")
    version = struct.unpack("<I", head[4:])[0]
    if version != VERSION:
        raise ParseError(f"{path}: unsupported checkpoint version {version}")

    tensors = {}
    while offset < len(buf):
        raw, offset = _take(buf, offset, 4, path, "name length")
        name_len = struct.unpack("<I", raw)[0]
        raw, offset = _take(buf, offset, name_len, path, "tensor name")
        try:
            name = raw.decode("utf-8")
        except UnicodeDecodeError as err:
            raise ParseError(f"{path}: undecodable tensor name: {err}") from err
        if name in tensors:
            raise ParseError(f"{path}: duplicate tensor name {name!r}")
        raw, offset = _take(buf, offset, 4, path, f"rank of {name!r}")
        rank = struct.unpack("<I", raw)[0]
        raw, offset = _take(buf, offset, 8 * rank, path, f"extents of {name!r}")
        shape = struct.unpack(f"<{rank}Q", raw) if rank else ()
        count = int(np.prod(shape, dtype=np.int64)) if rank else 1
        raw, offset = _take(buf, offset, 8 * count, path, f"payload of {name!r}")
        tensors[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    return tensors


def pack_run_state(params, prior):
    """Flatten backbone and prior dicts under namespaced tensor names."""
    out = {}
    for name, value in params.items():
        out[f"backbone/{name}"] = np.asarray(value)
    for name, value in prior.items():
        out[f"prior/{name}"] = np.asarray(value)
    return out


def unpack_run_state(tensors):
    """Inverse of pack_run_state."""
    params, prior = {}, {}
    for name, value in tensors.items():
        group, _, key = name.partition("/")
        if group == "backbone" and key:
            params[key] = value
        elif group == "prior" and key:
            prior[key] = value
        else:
            raise ParseError(f"unexpected tensor name {name!r} in checkpoint")
    return params, prior
