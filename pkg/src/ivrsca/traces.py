"""Waveform and trace-set containers shared by every stage of the pipeline."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np


@dataclass(frozen=True)
class WaveformTrace:
    """Uniformly sampled real signal.  ``unit`` is ``"A"``, ``"V"`` or ``"probe"``."""

    samples: np.ndarray
    sample_rate: float
    start_time: float = 0.0
    unit: str = "A"

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim != 1 or s.size == 0:
            raise ValueError("waveform must be a non-empty 1-D array")
        if not self.sample_rate > 0:
            raise ValueError("sample rate must be positive")
        if not np.all(np.isfinite(s)):
            raise ValueError("waveform contains non-finite samples")
        object.__setattr__(self, "samples", s)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate

    @property
    def times(self) -> np.ndarray:
        return self.start_time + np.arange(len(self)) * self.dt

    def with_samples(self, samples, unit: str | None = None) -> "WaveformTrace":
        return replace(self, samples=np.asarray(samples, dtype=float),
                       unit=self.unit if unit is None else unit)


MODES = ("standalone", "B-IVR", "R-IVR")


@dataclass
class TraceSet:
    """``N x T`` trace matrix with per-trace plaintexts and ciphertexts.

    ``labels`` marks the fixed class (True) for TVLA sets; ``meta`` carries
    scenario information (mode, probe, band, applied alignment shifts...).
    """

    traces: np.ndarray
    plaintexts: np.ndarray
    ciphertexts: np.ndarray
    key: bytes | None
    sample_rate: float
    mode: str = "standalone"
    probe: str = "small-loop@1"
    labels: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.traces = np.asarray(self.traces)
        if self.traces.ndim != 2:
            raise ValueError("trace matrix must be 2-D")
        n = self.traces.shape[0]
        self.plaintexts = np.asarray(self.plaintexts, dtype=np.uint8).reshape(n, 16)
        self.ciphertexts = np.asarray(self.ciphertexts, dtype=np.uint8).reshape(n, 16)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=bool)
            if self.labels.shape != (n,):
                raise ValueError("labels must have one entry per trace")
        if self.key is not None and len(self.key) != 16:
            raise ValueError("key must be 16 bytes")

    @property
    def n_traces(self) -> int:
        return self.traces.shape[0]

    @property
    def n_samples(self) -> int:
        return self.traces.shape[1]

    def subset(self, idx) -> "TraceSet":
        return TraceSet(
            self.traces[idx], self.plaintexts[idx], self.ciphertexts[idx], self.key,
            self.sample_rate, self.mode, self.probe,
            None if self.labels is None else self.labels[idx], dict(self.meta),
        )

    def with_traces(self, traces, **meta) -> "TraceSet":
        m = dict(self.meta)
        m.update(meta)
        return TraceSet(traces, self.plaintexts, self.ciphertexts, self.key,
                        self.sample_rate, self.mode, self.probe, self.labels, m)
