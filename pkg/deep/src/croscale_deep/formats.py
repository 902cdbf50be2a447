"""Interchange file formats, implemented against their documented layout.

This package deliberately re-implements the readers and writers instead of
importing the reference toolkit: the binary formats are the contract between
the two components. All multi-byte fields are little-endian; bulk payloads
are IEEE-754 32-bit floats.

CSRR raster:  magic "CSRR", version u32, height/width/channels u32,
              scale f32, pose x/y/heading f64, payload H*W*C f32 (row-major,
              channel-last). Header is 48 bytes.
CSBM belief:  magic "CSBM", version u32, height/width/channels u32, zero
              padding to 32 bytes, payload H*W*C f32; every pixel's channel
              slice sums to 1 within 1e-5.
CSRV repset:  magic "CSRV", version u32, count u32, C u32, then per record
              u u32, v u32, C f32 (each record sums to 1 within 1e-5).

Dataset layout: <dir>/manifest.csv ("tuple,split"), tuple_NNNN/map.csrr,
tuple_NNNN/obs_MM.csrr, tuple_NNNN/coords.csv ("obs_index,u,v").
"""

from __future__ import annotations

import os
import struct

import numpy as np

FORMAT_VERSION = 1


class FormatError(ValueError):
    pass


def _read_exact(fh, n, what):
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"truncated {what}")
    return data


def read_raster(path):
    """Returns (values (H, W, C) float32, scale, (x, y, heading))."""
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != b"CSRR":
            raise FormatError(f"bad magic {magic!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version > FORMAT_VERSION:
            raise FormatError(f"unsupported version {version}")
        h, w, c = struct.unpack("<III", _read_exact(fh, 12, "dims"))
        (scale,) = struct.unpack("<f", _read_exact(fh, 4, "scale"))
        pose = struct.unpack("<ddd", _read_exact(fh, 24, "pose"))
        payload = _read_exact(fh, 4 * h * w * c, "payload")
    values = np.frombuffer(payload, dtype="<f4").reshape(h, w, c)
    return values, float(scale), pose


def write_raster(path, values, scale, pose=(0.0, 0.0, 0.0)):
    values = np.asarray(values, dtype="<f4")
    h, w, c = values.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIIIIfddd", b"CSRR", FORMAT_VERSION,
                             h, w, c, float(scale), *pose))
        fh.write(values.tobytes())


def write_belief(path, values):
    """values: (H, W, C) probabilities; stored as f32 after renormalizing in
    f32 so the simplex tolerance holds on disk."""
    arr = np.asarray(values, dtype=np.float32)
    arr = arr / arr.sum(axis=2, keepdims=True)
    h, w, c = arr.shape
    header = struct.pack("<4sIIII", b"CSBM", FORMAT_VERSION, h, w, c)
    header += b"\x00" * (32 - len(header))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.astype("<f4").tobytes())


def read_belief(path):
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != b"CSBM":
            raise FormatError(f"bad magic {magic!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version > FORMAT_VERSION:
            raise FormatError(f"unsupported version {version}")
        h, w, c = struct.unpack("<III", _read_exact(fh, 12, "dims"))
        _read_exact(fh, 12, "padding")
        payload = _read_exact(fh, 4 * h * w * c, "payload")
    values = np.frombuffer(payload, dtype="<f4").reshape(h, w, c)
    sums = values.sum(axis=2)
    if np.abs(sums - 1.0).max() > 1e-5:
        raise FormatError("belief pixels must sum to 1 within 1e-5")
    return values


def write_repset(path, coords, vectors):
    """coords: (N, 2) ints; vectors: (N, C) probabilities."""
    vectors = np.asarray(vectors, dtype=np.float32)
    vectors = vectors / vectors.sum(axis=1, keepdims=True)
    n, c = vectors.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIII", b"CSRV", FORMAT_VERSION, n, c))
        for (u, v), vec in zip(coords, vectors):
            fh.write(struct.pack("<II", int(u), int(v)))
            fh.write(vec.astype("<f4").tobytes())


def read_repset(path):
    """Returns (coords (N, 2) int64, vectors (N, C) float32)."""
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != b"CSRV":
            raise FormatError(f"bad magic {magic!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version > FORMAT_VERSION:
            raise FormatError(f"unsupported version {version}")
        n, c = struct.unpack("<II", _read_exact(fh, 8, "counts"))
        coords = np.empty((n, 2), dtype=np.int64)
        vectors = np.empty((n, c), dtype=np.float32)
        for i in range(n):
            coords[i] = struct.unpack("<II", _read_exact(fh, 8, f"record {i}"))
            vectors[i] = np.frombuffer(
                _read_exact(fh, 4 * c, f"record {i}"), dtype="<f4")
    if np.abs(vectors.sum(axis=1) - 1.0).max() > 1e-5:
        raise FormatError("repset records must sum to 1 within 1e-5")
    return coords, vectors


def read_manifest(data_dir):
    """Returns list of (tuple_dirname, split)."""
    path = os.path.join(data_dir, "manifest.csv")
    rows = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "tuple,split":
            raise FormatError("bad manifest header")
        for line in fh:
            line = line.strip()
            if line:
                name, split = line.split(",")
                rows.append((name, split))
    return rows


def read_coords(tuple_dir):
    """Returns (n, 2) int array of observation pixel coordinates."""
    rows = []
    with open(os.path.join(tuple_dir, "coords.csv")) as fh:
        header = fh.readline().strip()
        if header != "obs_index,u,v":
            raise FormatError("bad coords header")
        for line in fh:
            line = line.strip()
            if line:
                j, u, v = (int(x) for x in line.split(","))
                rows.append((j, u, v))
    rows.sort()
    return np.array([(u, v) for _, u, v in rows], dtype=np.int64)
