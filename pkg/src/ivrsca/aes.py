"""AES-128 engines with per-cycle switching-activity output.

Two micro-architectures are modelled:

* HP (round-parallel): one full round per clock, 11 cycles per block.
* LP (byte-serial): one S-box shared by all bytes.  Fixed schedule per round:
  16 S-box cycles, 4 MixColumns-word cycles, 1 AddRoundKey cycle, preceded by
  a single load cycle.  ``LP_CYCLES`` is therefore ``1 + 10 * 21 = 211``.

The cores are vectorised over a batch of plaintexts under one key so that the
scenario harness can produce tens of thousands of activity traces quickly.
Single-block helpers wrap the batch path.

Byte order follows FIPS-197: state byte ``i`` is row ``i % 4``, column ``i // 4``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

HP = "HP"
LP = "LP"

HP_CYCLES = 11
LP_SBOX_CYCLES = 16
LP_MIXCOL_CYCLES = 4
LP_ARK_CYCLES = 1
LP_ROUND_CYCLES = LP_SBOX_CYCLES + LP_MIXCOL_CYCLES + LP_ARK_CYCLES
LP_CYCLES = 1 + 10 * LP_ROUND_CYCLES


def _gf_mul(a: int, b: int) -> int:
    p = 0
    while b:
        if b & 1:
            p ^= a
        a <<= 1
        if a & 0x100:
            a ^= 0x11B
        b >>= 1
    return p


def _build_sbox() -> np.ndarray:
    inv = [0] * 256
    for x in range(1, 256):
        for y in range(1, 256):
            if _gf_mul(x, y) == 1:
                inv[x] = y
                break
    box = np.zeros(256, dtype=np.uint8)
    for x in range(256):
        b = inv[x]
        s = b
        for k in range(1, 5):
            s ^= ((b << k) | (b >> (8 - k))) & 0xFF
        box[x] = s ^ 0x63
    return box


SBOX = _build_sbox()
INV_SBOX = np.argsort(SBOX).astype(np.uint8)
HW8 = np.array([bin(i).count("1") for i in range(256)], dtype=np.uint8)
XTIME = np.array([_gf_mul(i, 2) for i in range(256)], dtype=np.uint8)

# new[i] = old[SHIFT_ROWS[i]]
SHIFT_ROWS = np.array([(i % 4) + 4 * (((i // 4) + (i % 4)) % 4) for i in range(16)])
INV_SHIFT_ROWS = np.argsort(SHIFT_ROWS)
RCON = [0x01, 0x02, 0x04, 0x08, 0x10, 0x20, 0x40, 0x80, 0x1B, 0x36]


def sbox(b: int) -> int:
    return int(SBOX[b])


def inverse_sbox(b: int) -> int:
    return int(INV_SBOX[b])


def _as_block(data, name: str) -> np.ndarray:
    arr = np.frombuffer(bytes(data), dtype=np.uint8)
    if arr.size != 16:
        raise ValueError(f"{name} must be exactly 16 bytes, got {arr.size}")
    return arr.copy()


def expand_key(key: bytes) -> np.ndarray:
    """Return the 11 round keys as an ``(11, 16)`` uint8 array."""
    k = _as_block(key, "key")
    words = [k[4 * i:4 * i + 4].copy() for i in range(4)]
    for i in range(4, 44):
        t = words[i - 1].copy()
        if i % 4 == 0:
            t = SBOX[np.roll(t, -1)]
            t[0] ^= RCON[i // 4 - 1]
        words.append(words[i - 4] ^ t)
    return np.stack([np.concatenate(words[4 * r:4 * r + 4]) for r in range(11)])


def last_round_key(key: bytes) -> bytes:
    return expand_key(key)[10].tobytes()


def _mix_column(a: np.ndarray) -> np.ndarray:
    out = np.empty_like(a)
    t = a[..., 0] ^ a[..., 1] ^ a[..., 2] ^ a[..., 3]
    for r in range(4):
        out[..., r] = a[..., r] ^ t ^ XTIME[a[..., r] ^ a[..., (r + 1) % 4]]
    return out


def _mix_columns(s: np.ndarray) -> np.ndarray:
    out = np.empty_like(s)
    for c in range(4):
        out[..., 4 * c:4 * c + 4] = _mix_column(s[..., 4 * c:4 * c + 4])
    return out


def _hd(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamming distance along the last axis."""
    return HW8[a ^ b].sum(axis=-1, dtype=np.int64)


def _pt_matrix(pts) -> np.ndarray:
    arr = np.asarray(pts, dtype=np.uint8)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != 16:
        raise ValueError("plaintext batch must have shape (N, 16)")
    return arr


def round_states(key: bytes, pts) -> np.ndarray:
    """Instrumented encryption: states after the initial key addition and after
    each round, shape ``(N, 11, 16)``.  ``[:, 10]`` is the ciphertext."""
    rk = expand_key(key)
    s = _pt_matrix(pts) ^ rk[0]
    out = [s]
    for r in range(1, 11):
        s = SBOX[s][:, SHIFT_ROWS]
        if r < 10:
            s = _mix_columns(s)
        s = s ^ rk[r]
        out.append(s)
    return np.stack(out, axis=1)


def encrypt_block(key: bytes, pt: bytes) -> bytes:
    return round_states(key, _as_block(pt, "plaintext"))[0, 10].tobytes()


# --------------------------------------------------------------------------- activity

@dataclass(frozen=True)
class ActivityRecord:
    cycle: int
    transitions: int
    key_transitions: int = 0
    combinational: float = 0.0
    active_bits: int = 128

    @property
    def total(self) -> float:
        return self.transitions + self.key_transitions + self.combinational


@dataclass(frozen=True)
class ActivityTrace:
    cycles: tuple
    architecture: str
    clock_period: float = 10e-9

    def __len__(self) -> int:
        return len(self.cycles)

    def totals(self) -> np.ndarray:
        return np.array([c.total for c in self.cycles], dtype=float)


@dataclass
class ActivityBatch:
    """Per-cycle activity for a batch of encryptions under one key.

    ``transitions`` and ``combinational`` are ``(N, cycles)``; ``key_transitions``
    is shared by the whole batch because the key is fixed.
    """

    architecture: str
    transitions: np.ndarray
    key_transitions: np.ndarray
    combinational: np.ndarray
    active_bits: np.ndarray
    ciphertexts: np.ndarray
    comb_weight: float = 0.0
    clock_period: float = 10e-9
    register_log: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_cycles(self) -> int:
        return self.transitions.shape[1]

    def totals(self) -> np.ndarray:
        return (self.transitions + self.key_transitions[None, :]
                + self.comb_weight * self.combinational).astype(float)

    def trace(self, i: int) -> ActivityTrace:
        recs = tuple(
            ActivityRecord(
                cycle=c,
                transitions=int(self.transitions[i, c]),
                key_transitions=int(self.key_transitions[c]),
                combinational=float(self.comb_weight * self.combinational[i, c]),
                active_bits=int(self.active_bits[c]),
            )
            for c in range(self.n_cycles)
        )
        return ActivityTrace(recs, self.architecture, self.clock_period)


def hp_activity(key: bytes, pts, comb_weight: float = 0.0,
                clock_period: float = 10e-9) -> ActivityBatch:
    """Round-parallel engine: cycle 0 loads ``pt ^ k0`` into a cleared state
    register, cycle ``r`` commits round ``r``.

    Combinational toggles are counted on the S-box output bus and the
    MixColumns output bus, both driven from the state register.
    """
    pts = _pt_matrix(pts)
    n = pts.shape[0]
    rk = expand_key(key)
    states = round_states(key, pts)
    reg = np.concatenate([np.zeros((n, 1, 16), np.uint8), states], axis=1)

    trans = _hd(reg[:, :-1], reg[:, 1:])
    sb = SBOX[reg]
    mc = _mix_columns(sb[..., SHIFT_ROWS])
    comb = _hd(sb[:, :-1], sb[:, 1:]) + _hd(mc[:, :-1], mc[:, 1:])

    kreg = np.concatenate([np.zeros((1, 16), np.uint8), rk], axis=0)
    ktrans = _hd(kreg[:-1], kreg[1:])
    return ActivityBatch(HP, trans, ktrans, comb, np.full(HP_CYCLES, 128),
                         states[:, 10].copy(), comb_weight, clock_period, reg)


def lp_activity(key: bytes, pts, comb_weight: float = 0.0,
                clock_period: float = 10e-9) -> ActivityBatch:
    """Byte-serial engine.

    Registers: 128-bit state, 128-bit S-box result buffer (cleared during the
    AddRoundKey cycle), 128-bit round-key register updated on the fly.  During
    S-box cycle ``j`` the buffer byte at the ShiftRows destination of ``j`` goes
    from 0 to ``S(state[j])``.  The four key-schedule S-box lookups share the
    S-box during the MixColumns cycles.
    """
    pts = _pt_matrix(pts)
    n = pts.shape[0]
    rk = expand_key(key)
    dest = INV_SHIFT_ROWS  # buffer[dest[j]] <- S(state[j])

    trans = np.zeros((n, LP_CYCLES), dtype=np.int64)
    comb = np.zeros((n, LP_CYCLES), dtype=np.int64)
    ktrans = np.zeros(LP_CYCLES, dtype=np.int64)
    width = np.zeros(LP_CYCLES, dtype=np.int64)
    log = np.zeros((n, LP_CYCLES + 1, 16), dtype=np.uint8)

    state = pts ^ rk[0]
    buf = np.zeros((n, 16), np.uint8)
    bus_in = np.zeros(n, np.uint8)
    bus_out = SBOX[bus_in]
    mc_bus = np.zeros((n, 4), np.uint8)

    trans[:, 0] = HW8[state].sum(axis=1)
    ktrans[0] = int(HW8[rk[0]].sum())
    width[0] = 128
    log[:, 1] = state
    cyc = 1
    for r in range(1, 11):
        for j in range(16):
            x = state[:, j]
            y = SBOX[x]
            trans[:, cyc] = HW8[y ^ buf[:, dest[j]]]
            comb[:, cyc] = HW8[bus_in ^ x] + HW8[bus_out ^ y]
            buf[:, dest[j]] = y
            bus_in, bus_out = x, y
            width[cyc] = 8
            log[:, cyc + 1] = state
            cyc += 1
        kword = np.roll(rk[r - 1][12:16], -1)
        for c in range(4):
            col = buf[:, 4 * c:4 * c + 4]
            new = _mix_column(col) if r < 10 else col.copy()
            trans[:, cyc] = _hd(state[:, 4 * c:4 * c + 4], new)
            kx = np.full(n, kword[c], np.uint8)
            ky = SBOX[kx]
            comb[:, cyc] = (HW8[bus_in ^ kx] + HW8[bus_out ^ ky]
                            + _hd(mc_bus, new))
            bus_in, bus_out, mc_bus = kx, ky, new
            state = state.copy()
            state[:, 4 * c:4 * c + 4] = new
            width[cyc] = 32
            log[:, cyc + 1] = state
            cyc += 1
        new_state = state ^ rk[r]
        trans[:, cyc] = _hd(state, new_state) + HW8[buf].sum(axis=1)
        ktrans[cyc] = int(HW8[rk[r - 1] ^ rk[r]].sum())
        width[cyc] = 256
        state = new_state
        buf = np.zeros_like(buf)
        log[:, cyc + 1] = state
        cyc += 1
    assert cyc == LP_CYCLES
    return ActivityBatch(LP, trans, ktrans, comb, width, state.copy(),
                         comb_weight, clock_period, log)


def activity(architecture: str, key: bytes, pts, comb_weight: float = 0.0,
             clock_period: float = 10e-9) -> ActivityBatch:
    if architecture == HP:
        return hp_activity(key, pts, comb_weight, clock_period)
    if architecture == LP:
        return lp_activity(key, pts, comb_weight, clock_period)
    raise ValueError(f"unknown AES architecture {architecture!r}")


def encrypt_hp(key: bytes, pt: bytes, comb_weight: float = 0.0,
               clock_period: float = 10e-9) -> tuple[bytes, ActivityTrace]:
    batch = hp_activity(key, _as_block(pt, "plaintext"), comb_weight, clock_period)
    return batch.ciphertexts[0].tobytes(), batch.trace(0)


def encrypt_lp(key: bytes, pt: bytes, comb_weight: float = 0.0,
               clock_period: float = 10e-9) -> tuple[bytes, ActivityTrace]:
    batch = lp_activity(key, _as_block(pt, "plaintext"), comb_weight, clock_period)
    return batch.ciphertexts[0].tobytes(), batch.trace(0)


# --------------------------------------------------------------------------- power models

def _check_byte_idx(byte_idx: int) -> None:
    if not (isinstance(byte_idx, (int, np.integer)) and 0 <= byte_idx < 16):
        raise ValueError(f"byte_idx must be in 0..15, got {byte_idx!r}")


def model_hd_last_round(ct: bytes, key_guess: int, byte_idx: int) -> int:
    """Hamming distance of the state-register byte that the last round writes.

    ``key_guess`` is a guess for byte ``byte_idx`` of the last round key.  The
    round-9 byte is recovered through the inverse S-box and lands, after
    ShiftRows, in register position ``SHIFT_ROWS[byte_idx]``.
    """
    _check_byte_idx(byte_idx)
    c = _as_block(ct, "ciphertext")
    prev = INV_SBOX[c[byte_idx] ^ (key_guess & 0xFF)]
    return int(HW8[prev ^ c[SHIFT_ROWS[byte_idx]]])


def model_hw_first_sbox(pt_byte: int, key_guess: int) -> int:
    return int(HW8[SBOX[(pt_byte ^ key_guess) & 0xFF]])


def hd_last_round_table(cts: np.ndarray, byte_idx: int) -> np.ndarray:
    """Hypotheses for all 256 guesses, shape ``(N, 256)``."""
    _check_byte_idx(byte_idx)
    cts = _pt_matrix(cts)
    g = np.arange(256, dtype=np.uint8)
    prev = INV_SBOX[cts[:, byte_idx, None] ^ g[None, :]]
    return HW8[prev ^ cts[:, SHIFT_ROWS[byte_idx], None]].astype(np.int64)


def hw_first_sbox_table(pts: np.ndarray, byte_idx: int) -> np.ndarray:
    _check_byte_idx(byte_idx)
    pts = _pt_matrix(pts)
    g = np.arange(256, dtype=np.uint8)
    return HW8[SBOX[pts[:, byte_idx, None] ^ g[None, :]]].astype(np.int64)
