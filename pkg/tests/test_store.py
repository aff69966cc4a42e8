import hashlib
import math
import struct
from pathlib import Path

import numpy as np
import pytest

from ivrsca import store
from ivrsca.traces import TraceSet

GOLDEN = Path(__file__).parent / "data" / "golden.bsim"
GOLDEN_SHA256 = "28b8e6230a6f9a4dc5dd58332f864d3ab9c9c7a86d1c3ca38d9dce47e3928adf"
KEY = bytes.fromhex("0123456789abcdef123456789abcdef0")


def golden_set():
    x = np.array([[0.0, 1.0, -1.0, 0.5, 1e-9],
                  [3.25, -2.5e-3, 7.0, 1e300, -0.0],
                  [math.pi, math.e, -math.sqrt(2), 1 / 3, 2 ** -20]])
    pts = np.arange(48, dtype=np.uint8).reshape(3, 16)
    cts = (255 - np.arange(48)).astype(np.uint8).reshape(3, 16)
    return TraceSet(x, pts, cts, KEY, 5e9, "R-IVR", "small-loop@2")


def parse_offline(raw: bytes) -> dict:
    """Stand-alone reader written from the documented byte layout only."""
    magic = raw[0:4]
    version, n, t = struct.unpack("<III", raw[4:16])
    (fs,) = struct.unpack("<d", raw[16:24])
    mode, probe = raw[24], raw[25]
    pos = 26
    pts = [raw[pos + 16 * i: pos + 16 * (i + 1)] for i in range(n)]
    pos += 16 * n
    cts = [raw[pos + 16 * i: pos + 16 * (i + 1)] for i in range(n)]
    pos += 16 * n
    key = raw[pos:pos + 16]
    pos += 16
    samples = [list(struct.unpack(f"<{t}d", raw[pos + 8 * t * i: pos + 8 * t * (i + 1)]))
               for i in range(n)]
    pos += 8 * n * t
    return dict(magic=magic, version=version, n=n, t=t, fs=fs, mode=mode, probe=probe, pts=pts,
                cts=cts, key=key, samples=samples, end=pos)


def test_golden_file_is_unchanged():
    assert hashlib.sha256(GOLDEN.read_bytes()).hexdigest() == GOLDEN_SHA256


def test_offline_parser_reads_golden_layout():
    raw = GOLDEN.read_bytes()
    p = parse_offline(raw)
    ref = golden_set()
    assert p["magic"] == b"BSIM" and p["version"] == 1
    assert (p["n"], p["t"], p["fs"]) == (3, 5, 5e9)
    assert p["mode"] == 2 and p["probe"] == 5  # R-IVR, small-loop@2
    assert p["end"] == len(raw) == 26 + 3 * 32 + 16 + 3 * 5 * 8
    assert p["key"] == KEY
    assert p["pts"][1] == bytes(range(16, 32))
    assert p["cts"][0] == bytes(range(255, 239, -1))
    for i in range(3):
        for j in range(5):
            a, b = p["samples"][i][j], ref.traces[i, j]
            assert struct.pack("<d", a) == struct.pack("<d", b)


def test_golden_round_trip_is_bit_exact(tmp_path):
    ts = store.load(GOLDEN)
    ref = golden_set()
    assert ts.traces.tobytes() == ref.traces.astype("<f8").tobytes()
    assert np.array_equal(ts.plaintexts, ref.plaintexts)
    assert np.array_equal(ts.ciphertexts, ref.ciphertexts)
    assert (ts.key, ts.sample_rate, ts.mode, ts.probe) == (KEY, 5e9, "R-IVR", "small-loop@2")
    out = store.save(ts, tmp_path / "copy.bsim")
    assert Path(out).read_bytes() == GOLDEN.read_bytes()
    assert store.save(ref, tmp_path / "ref.bsim") and (tmp_path / "ref.bsim").read_bytes() == GOLDEN.read_bytes()


def test_file_size_arithmetic():
    assert store.HEADER_SIZE == 26
    assert store.file_size(1000, 5000) == 26 + 1000 * 32 + 16 + 1000 * 5000 * 8


def test_memory_mapped_load(tmp_path):
    ts = store.load(GOLDEN, mmap=True)
    assert isinstance(ts.traces, np.memmap) or isinstance(ts.traces.base, np.memmap)
    assert ts.traces[2, 0] == math.pi


@pytest.mark.parametrize("cut", [1, 8, 100, 257])
def test_truncated_file_rejected(tmp_path, cut):
    p = tmp_path / "bad.bsim"
    p.write_bytes(GOLDEN.read_bytes()[:cut])
    with pytest.raises(store.StoreError):
        store.load(p)


def test_bad_magic_version_and_trailing_bytes(tmp_path):
    raw = bytearray(GOLDEN.read_bytes())
    p = tmp_path / "x.bsim"
    bad = bytearray(raw)
    bad[0:4] = b"XXXX"
    p.write_bytes(bytes(bad))
    with pytest.raises(store.StoreError, match="magic"):
        store.load(p)
    bad = bytearray(raw)
    bad[4:8] = struct.pack("<I", 2)
    p.write_bytes(bytes(bad))
    with pytest.raises(store.StoreError, match="version"):
        store.load(p)
    p.write_bytes(bytes(raw) + b"\0")
    with pytest.raises(store.StoreError, match="size"):
        store.load(p)


def test_tvla_labels_inferred_from_fixed_plaintext(tmp_path):
    rng = np.random.default_rng(0)
    pts = rng.integers(0, 256, (40, 16), dtype=np.uint8)
    labels = np.arange(40) % 2 == 0
    pts[labels] = 7
    ts = TraceSet(rng.standard_normal((40, 8)), pts, pts, KEY, 5e9, labels=labels)
    back = store.load(store.save(ts, tmp_path / "t.bsim"))
    assert np.array_equal(back.labels, labels)
    assert store.infer_labels(rng.integers(0, 256, (40, 16), dtype=np.uint8)) is None


def test_save_rejects_unencodable_sets(tmp_path):
    ts = golden_set()
    ts.key = None
    with pytest.raises(store.StoreError):
        store.save(ts, tmp_path / "k.bsim")
    ts = golden_set()
    ts.probe = "node@GND"
    with pytest.raises(store.StoreError):
        store.save(ts, tmp_path / "p.bsim")
