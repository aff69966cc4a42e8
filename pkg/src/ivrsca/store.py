"""Binary trace store (``.bsim``).

Layout, all little-endian::

    offset  size      field
    0       4         magic b"BSIM"
    4       4         u32 version (= 1)
    8       4         u32 N (traces)
    12      4         u32 T (samples per trace)
    16      8         f64 sample rate [Hz]
    24      1         u8 power mode   (0 standalone, 1 B-IVR, 2 R-IVR)
    25      1         u8 probe        (index into PROBE_CODES)
    26      16*N      plaintexts
    ..      16*N      ciphertexts
    ..      16        key
    ..      8*N*T     f64 samples, trace-major

The file size must match the header exactly; anything else is rejected.
"""
from __future__ import annotations

import os
import struct

import numpy as np

from .traces import MODES, TraceSet

MAGIC = b"BSIM"
VERSION = 1
HEADER = struct.Struct("<4sIIIdBB")
HEADER_SIZE = HEADER.size  # 26

PROBE_CODES = ("node@V_IN,IVR", "node@V_IND", "node@V_DD,AES", "node@V_SS,AES",
               "small-loop@1", "small-loop@2", "large-loop@1")


class StoreError(ValueError):
    """Malformed, truncated or unsupported trace-store file."""


def file_size(n: int, t: int) -> int:
    return HEADER_SIZE + 32 * n + 16 + 8 * n * t


def save(ts: TraceSet, path) -> str:
    if ts.mode not in MODES:
        raise StoreError(f"mode {ts.mode!r} cannot be encoded")
    if ts.probe not in PROBE_CODES:
        raise StoreError(f"probe {ts.probe!r} cannot be encoded")
    if ts.key is None:
        raise StoreError("a key is required")
    n, t = ts.traces.shape
    head = HEADER.pack(MAGIC, VERSION, n, t, float(ts.sample_rate), MODES.index(ts.mode),
                       PROBE_CODES.index(ts.probe))
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(head)
        f.write(np.ascontiguousarray(ts.plaintexts, dtype=np.uint8).tobytes())
        f.write(np.ascontiguousarray(ts.ciphertexts, dtype=np.uint8).tobytes())
        f.write(bytes(ts.key))
        f.write(np.ascontiguousarray(ts.traces, dtype="<f8").tobytes())
    os.replace(tmp, path)
    return str(path)


def read_header(path) -> dict:
    with open(path, "rb") as f:
        raw = f.read(HEADER_SIZE)
    if len(raw) < HEADER_SIZE:
        raise StoreError("file shorter than the header")
    magic, version, n, t, fs, mode, probe = HEADER.unpack(raw)
    if magic != MAGIC:
        raise StoreError(f"bad magic {magic!r}")
    if version != VERSION:
        raise StoreError(f"unsupported version {version}")
    if mode >= len(MODES) or probe >= len(PROBE_CODES):
        raise StoreError("unknown mode or probe code")
    return dict(n=n, t=t, sample_rate=fs, mode=MODES[mode], probe=PROBE_CODES[probe])


def load(path, mmap: bool = False) -> TraceSet:
    """Load a store file.  With ``mmap=True`` the samples stay on disk."""
    h = read_header(path)
    n, t = h["n"], h["t"]
    size = os.path.getsize(path)
    if size != file_size(n, t):
        raise StoreError(f"file size {size} does not match header (expected {file_size(n, t)})")
    with open(path, "rb") as f:
        f.seek(HEADER_SIZE)
        pts = np.frombuffer(f.read(16 * n), dtype=np.uint8).reshape(n, 16)
        cts = np.frombuffer(f.read(16 * n), dtype=np.uint8).reshape(n, 16)
        key = f.read(16)
        off = f.tell()
        if mmap:
            traces = np.memmap(path, dtype="<f8", mode="r", offset=off, shape=(n, t))
        else:
            traces = np.frombuffer(f.read(8 * n * t), dtype="<f8").reshape(n, t).astype(float)
    ts = TraceSet(traces, pts.copy(), cts.copy(), key, h["sample_rate"], h["mode"], h["probe"])
    ts.labels = infer_labels(ts.plaintexts)
    return ts


def infer_labels(pts: np.ndarray) -> np.ndarray | None:
    """Fixed-class labels of a semi-fixed set: traces carrying the most frequent
    plaintext, when that plaintext covers at least a quarter of the set."""
    n = pts.shape[0]
    if n < 4:
        return None
    uniq, inv, counts = np.unique(pts, axis=0, return_inverse=True, return_counts=True)
    top = int(np.argmax(counts))
    if counts[top] < max(2, n // 4) or counts[top] == n:
        return None
    return np.asarray(inv).reshape(-1) == top
