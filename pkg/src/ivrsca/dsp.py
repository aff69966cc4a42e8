"""Attacker-side signal processing: band filters, alignment, windows, spectrograms.

Filtering is done in the frequency domain with the squared magnitude of a
digital Butterworth band-pass, which is what forward-backward (zero-phase)
filtering converges to on a circular buffer.  Working on the FFT grid lets the
whole filter bank reuse a single forward transform per trace chunk and makes
integer circular shifts commute exactly with filtering.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import signal

from .traces import TraceSet, WaveformTrace


@dataclass(frozen=True)
class FilterBankSpec:
    start: float = 30e6
    stop: float = 500e6
    step: float = 10e6
    bandwidth: float = 20e6
    order: int = 4

    def __post_init__(self):
        if not (0 < self.start < self.stop and self.step > 0 and self.bandwidth > 0):
            raise ValueError("filter bank needs 0 < start < stop, step > 0, bandwidth > 0")
        if self.bandwidth / 2 >= self.start:
            raise ValueError("lowest band would extend below DC")

    @property
    def centers(self) -> np.ndarray:
        n = int(np.floor((self.stop - self.start) / self.step + 1e-9)) + 1
        return self.start + self.step * np.arange(n)

    def __len__(self) -> int:
        return len(self.centers)


@dataclass(frozen=True)
class WindowSpec:
    width: float = 200e-9
    stride: float = 100e-9

    def __post_init__(self):
        if not (self.width > 0 and self.stride > 0):
            raise ValueError("window width and stride must be positive")


def _check_band(center: float, bw: float, sample_rate: float) -> None:
    if center + bw / 2 >= sample_rate / 2:
        raise ValueError(f"band {center:g} +- {bw / 2:g} Hz exceeds Nyquist ({sample_rate / 2:g} Hz)")
    if center - bw / 2 <= 0:
        raise ValueError("band extends below DC")


@lru_cache(maxsize=512)
def band_power_response(n: int, sample_rate: float, center: float, bw: float,
                        order: int = 4) -> np.ndarray:
    """``|H(f)|^2`` on the ``rfft`` grid of an ``n``-sample signal."""
    _check_band(center, bw, sample_rate)
    sos = signal.butter(order, [center - bw / 2, center + bw / 2], btype="bandpass",
                        fs=sample_rate, output="sos")
    _, h = signal.sosfreqz(sos, worN=np.fft.rfftfreq(n, 1.0 / sample_rate), fs=sample_rate)
    out = np.abs(h) ** 2
    out.setflags(write=False)
    return out


def bandpass_array(x: np.ndarray, sample_rate: float, center: float, bw: float = 20e6,
                   order: int = 4) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    h2 = band_power_response(n, float(sample_rate), float(center), float(bw), int(order))
    return np.fft.irfft(np.fft.rfft(x, axis=-1) * h2, n=n, axis=-1)


def bandpass(trace: WaveformTrace, center: float, bw: float = 20e6, order: int = 4) -> WaveformTrace:
    """Zero-phase band-pass of one waveform."""
    return trace.with_samples(bandpass_array(trace.samples, trace.sample_rate, center, bw, order))


def period_samples(center: float, sample_rate: float) -> int:
    """Samples in one period of the band centre (the default alignment bound)."""
    return max(int(np.floor(sample_rate / center)), 1)


def _lag_order(max_offset: int) -> np.ndarray:
    lags = [0]
    for k in range(1, max_offset + 1):
        lags += [k, -k]
    return np.array(lags, dtype=np.int64)


def xcorr_shifts(y: np.ndarray, ref: np.ndarray, max_offset: int,
                 y_spec: np.ndarray | None = None, ref_spec: np.ndarray | None = None):
    """Integer lag maximising the circular cross-correlation of each row of ``y``
    with ``ref`` within ``+-max_offset``.  Ties prefer the smaller |lag|.

    Returns ``(shifts, degenerate)``; constant rows get shift 0 and are flagged.
    """
    y = np.atleast_2d(y)
    n = y.shape[-1]
    if max_offset < 0:
        raise ValueError("max_offset must be non-negative")
    max_offset = min(int(max_offset), n // 2 - 1)
    yc = y - y.mean(axis=1, keepdims=True)
    rc = ref - ref.mean()
    ys = np.fft.rfft(yc, axis=1) if y_spec is None else y_spec
    rs = np.fft.rfft(rc) if ref_spec is None else ref_spec
    xc = np.fft.irfft(ys * np.conj(rs)[None, :], n=n, axis=1)
    lags = _lag_order(max_offset)
    cand = xc[:, lags % n]
    best = lags[np.argmax(cand, axis=1)]
    scale = np.abs(yc).max(axis=1)
    degenerate = scale <= 1e-300
    best[degenerate] = 0
    return best, degenerate


def roll_rows(y: np.ndarray, shifts: np.ndarray) -> np.ndarray:
    """``out[i] = roll(y[i], -shifts[i])``."""
    n = y.shape[1]
    idx = (np.arange(n)[None, :] + np.asarray(shifts)[:, None]) % n
    return np.take_along_axis(y, idx, axis=1)


def align(traces: TraceSet, reference, max_offset: int) -> TraceSet:
    """Shift every trace by the integer lag that best matches ``reference``."""
    ref = reference.samples if isinstance(reference, WaveformTrace) else np.asarray(reference, float)
    if ref.shape != (traces.n_samples,):
        raise ValueError("reference length must match the traces")
    shifts, degenerate = xcorr_shifts(traces.traces, ref, max_offset)
    return traces.with_traces(roll_rows(traces.traces, shifts), shifts=shifts,
                              degenerate=degenerate)


class BankProcessor:
    """Filter-bank front end shared by TVLA and CEMA.

    ``process(chunk)`` yields ``(band_index, filtered_aligned)`` for every band.
    The alignment reference of each band is the first trace ever processed.
    A ``None`` centre denotes the raw (unfiltered, unaligned) signal.
    """

    def __init__(self, n_samples: int, sample_rate: float, spec: FilterBankSpec | None = None,
                 align: bool = True, align_periods: float = 1.0, include_raw: bool = False,
                 centers=None):
        self.n = int(n_samples)
        self.fs = float(sample_rate)
        self.spec = spec or FilterBankSpec()
        cs = list(self.spec.centers if centers is None else centers)
        self.centers = ([None] if include_raw else []) + [float(c) for c in cs]
        self.align = align
        self.align_periods = align_periods
        self._h2 = [None if c is None else
                    band_power_response(self.n, self.fs, c, self.spec.bandwidth, self.spec.order)
                    for c in self.centers]
        self._ref_spec = [None] * len(self.centers)
        self.shifts = [[] for _ in self.centers]

    def __len__(self) -> int:
        return len(self.centers)

    def labels(self) -> list:
        return ["raw" if c is None else f"{c / 1e6:.0f}MHz" for c in self.centers]

    def max_offset(self, band: int) -> int:
        c = self.centers[band]
        return int(np.floor(self.align_periods * period_samples(c, self.fs)))

    def process(self, chunk: np.ndarray, bands=None, region: tuple | None = None):
        """Yield ``(band, traces)``; with ``region=(a, b)`` only those aligned
        columns are returned."""
        chunk = np.atleast_2d(np.asarray(chunk, dtype=float))
        if chunk.shape[1] != self.n:
            raise ValueError("chunk length does not match the bank")
        a, b = region or (0, self.n)
        spec = np.fft.rfft(chunk, axis=1)
        for k in (range(len(self.centers)) if bands is None else bands):
            h2 = self._h2[k]
            if h2 is None:
                yield k, chunk[:, a:b]
                continue
            ys = spec * h2[None, :]
            if self._ref_spec[k] is None:
                self._ref_spec[k] = ys[0].copy()
            y = np.fft.irfft(ys, n=self.n, axis=1)
            if self.align:
                shifts = self._shifts(ys, k)
                self.shifts[k].append(shifts)
                yield k, shifted_window(y, shifts, a, b)
            else:
                yield k, y[:, a:b]

    def _shifts(self, ys, k):
        n = self.n
        xc = np.fft.irfft(ys * np.conj(self._ref_spec[k])[None, :], n=n, axis=1)
        lags = _lag_order(min(self.max_offset(k), n // 2 - 1))
        return lags[np.argmax(xc[:, lags % n], axis=1)]


def shifted_window(y: np.ndarray, shifts: np.ndarray, a: int, b: int) -> np.ndarray:
    """Columns ``[a, b)`` of ``roll(y[i], -shifts[i])`` for every row (circular)."""
    n = y.shape[1]
    out = np.empty((y.shape[0], b - a))
    for s in np.unique(shifts):
        rows = np.flatnonzero(shifts == s)
        lo, hi = (a + s) % n, (a + s) % n + (b - a)
        if hi <= n:
            out[rows] = y[rows, lo:hi]
        else:
            out[rows] = np.concatenate([y[rows, lo:], y[rows, :hi - n]], axis=1)
    return out


def windows(n_samples: int, spec: WindowSpec, sample_rate: float, start: int = 0,
            stop: int | None = None) -> list[tuple[int, int]]:
    """Sliding ``[a, b)`` ranges over ``[start, stop)``."""
    stop = n_samples if stop is None else stop
    width = int(round(spec.width * sample_rate))
    stride = int(round(spec.stride * sample_rate))
    length = stop - start
    if width <= 0 or stride <= 0:
        raise ValueError("window width and stride must be at least one sample")
    if width > length:
        raise ValueError("window does not fit inside the trace")
    count = (length - width) // stride + 1
    return [(start + k * stride, start + k * stride + width) for k in range(count)]


def spectrogram(trace, fft_len: int, hop: int, sample_rate: float | None = None):
    """Hann-windowed short-time magnitude spectrum.

    Returns ``(freqs, times, mag)`` with ``mag`` shaped ``(fft_len // 2 + 1, frames)``.
    """
    if isinstance(trace, WaveformTrace):
        x, fs = trace.samples, trace.sample_rate
    else:
        x, fs = np.asarray(trace, dtype=float), float(sample_rate or 1.0)
    if fft_len > x.size:
        raise ValueError("fft_len exceeds the trace length")
    if hop <= 0:
        raise ValueError("hop must be positive")
    w = signal.get_window("hann", fft_len)
    starts = np.arange(0, x.size - fft_len + 1, hop)
    frames = np.lib.stride_tricks.sliding_window_view(x, fft_len)[starts] * w
    mag = np.abs(np.fft.rfft(frames, axis=1)).T
    return np.fft.rfftfreq(fft_len, 1 / fs), (starts + fft_len / 2) / fs, mag
