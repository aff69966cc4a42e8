"""Activity-to-current conversion and measurement noise.

Each clock cycle of an AES engine draws ``total_activity * charge`` coulombs
from the supply, delivered as one current pulse that starts at the clock edge.
The pulse kernel is normalised so that its discrete integral equals the charge
per transition exactly, which keeps the charge bookkeeping of the IVR model
honest.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .aes import ActivityTrace
from .traces import WaveformTrace

PULSE_KINDS = ("rectangular", "triangular", "rc")

DEFAULT_SAMPLE_RATE = 5e9
DEFAULT_CLOCK_PERIOD = 10e-9


@dataclass(frozen=True)
class PulseShape:
    kind: str = "triangular"
    duration: float = 0.2 * DEFAULT_CLOCK_PERIOD
    charge: float = 2e-15

    def __post_init__(self):
        if self.kind not in PULSE_KINDS:
            raise ValueError(f"unknown pulse kind {self.kind!r}")
        if not self.duration > 0 or self.charge < 0:
            raise ValueError("pulse duration must be positive and charge non-negative")

    def kernel(self, sample_rate: float) -> np.ndarray:
        """Sampled current of one transition, in amps, summing to ``charge * fs``."""
        n = max(int(np.ceil(self.duration * sample_rate)), 1)
        t = (np.arange(n) + 0.5) / n  # normalised sample centres in (0, 1)
        if self.kind == "rectangular":
            w = np.ones(n)
        elif self.kind == "triangular":
            w = 1.0 - np.abs(2.0 * t - 1.0)
        else:
            # RC discharge with tau = duration/5, truncated at the duration
            w = np.exp(-5.0 * t)
        return w * (self.charge * sample_rate / w.sum())


def _check_rate(shape: PulseShape, sample_rate: float) -> None:
    if sample_rate * shape.duration < 10:
        raise ValueError(
            f"sample rate {sample_rate:g} Hz cannot resolve a {shape.duration:g} s pulse "
            "(need at least 10 samples per pulse)")


def load_currents(totals: np.ndarray, kernel: np.ndarray, cycle_samples: float,
                  starts, length: int, quiescent: float = 0.0) -> np.ndarray:
    """Batched pulse synthesis.

    ``totals`` is ``(N, C)`` weighted activity per cycle, ``starts`` the sample
    index of cycle 0 for each trace.  Pulses falling outside ``[0, length)`` are
    truncated.  Returns an ``(N, length)`` array.
    """
    totals = np.atleast_2d(np.asarray(totals, dtype=float))
    n, c = totals.shape
    starts = np.broadcast_to(np.asarray(starts, dtype=np.int64), (n,))
    offs = np.rint(np.arange(c) * cycle_samples).astype(np.int64)
    idx = starts[:, None] + offs[None, :]
    ok = (idx >= 0) & (idx < length)
    imp = np.zeros((n, length))
    rows = np.broadcast_to(np.arange(n)[:, None], idx.shape)
    np.add.at(imp, (rows[ok], idx[ok]), totals[ok])
    out = np.full((n, length), float(quiescent))
    for k, w in enumerate(kernel):
        if k >= length:
            break
        out[:, k:] += w * imp[:, :length - k]
    return out


def activity_to_current(act: ActivityTrace, shape: PulseShape | None = None,
                        quiescent: float = 10e-3,
                        sample_rate: float = DEFAULT_SAMPLE_RATE,
                        clock_phase: float = 0.0, pad_pre: float = 0.0,
                        pad_post: float = 0.0) -> WaveformTrace:
    """Load current of one encryption.

    The waveform spans ``pad_pre + len(act) * clock_period + pad_post``; cycle
    ``c`` fires at ``pad_pre + clock_phase + c * clock_period`` (rounded to the
    nearest sample).  Pulses pushed past the end by the phase are truncated, so
    callers that need the complete encryption should leave ``pad_post`` of at
    least one clock period.
    """
    shape = shape or PulseShape()
    _check_rate(shape, sample_rate)
    period = act.clock_period
    if not 0.0 <= clock_phase < period:
        raise ValueError("clock_phase must lie in [0, clock period)")
    n_pre = int(round(pad_pre * sample_rate))
    length = (n_pre + int(np.ceil(len(act) * period * sample_rate - 1e-9))
              + int(round(pad_post * sample_rate)))
    start = n_pre + int(round(clock_phase * sample_rate))
    cur = load_currents(act.totals()[None, :], shape.kernel(sample_rate),
                        period * sample_rate, [start], length, quiescent)[0]
    return WaveformTrace(cur, sample_rate, 0.0, "A")


def add_noise(trace: WaveformTrace, sigma: float, seed: int) -> WaveformTrace:
    """Add i.i.d. N(0, sigma^2) samples; deterministic for a given seed."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return trace
    z = np.random.default_rng(seed).standard_normal(len(trace))
    return trace.with_samples(trace.samples + sigma * z)


def trace_rng(seed: int, stream: int, index: int) -> np.random.Generator:
    """Independent generator for one trace of one stream, independent of batching."""
    return np.random.default_rng((int(seed), int(stream), int(index)))


def noise_matrix(seed: int, stream: int, indices, length: int) -> np.ndarray:
    """Unit-variance noise rows, one per trace index (per-trace seeded streams)."""
    idx = np.asarray(indices)
    out = np.empty((idx.size, length))
    for r, i in enumerate(idx):
        out[r] = trace_rng(seed, stream, i).standard_normal(length)
    return out
