"""EM probe models.

Node probes sit on one package pin and see a band-limited copy of that pin's
current.  Loop probes pick up the magnetic field of every current loop in
their vicinity, i.e. a weighted sum of branch-current derivatives, again
band-limited by the probe and its amplifier.

Probe bandwidths are analog IIR prototypes evaluated on the FFT grid and
applied in the frequency domain.  This is exact for periodic signals; for
finite captures the caller should keep a guard margin at each end (see
``guard`` arguments) which is discarded after filtering.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .traces import WaveformTrace

BRANCHES = ("ivr_input", "inductor", "aes_supply", "aes_ground", "output_loop")
PROBE_KINDS = ("node", "small-loop", "large-loop")

# pin label -> branch name
PINS = {
    "V_IN,IVR": "ivr_input",
    "V_IND": "inductor",
    "V_DD,AES": "aes_supply",
    "V_SS,AES": "aes_ground",
}


@dataclass
class BranchSet:
    """Branch currents on a common grid; each entry is ``(T,)`` or ``(N, T)``."""

    ivr_input: np.ndarray
    inductor: np.ndarray
    aes_supply: np.ndarray
    aes_ground: np.ndarray
    output_loop: np.ndarray
    sample_rate: float = 5e9

    def __post_init__(self):
        shapes = {np.shape(getattr(self, b)) for b in BRANCHES}
        if len(shapes) != 1:
            raise ValueError(f"branch currents must share one grid, got shapes {shapes}")

    def get(self, name: str) -> np.ndarray:
        if name not in BRANCHES:
            raise KeyError(f"unknown branch {name!r}")
        return getattr(self, name)

    @classmethod
    def standalone(cls, i_aes, i_in, i_l, ivr_load, sample_rate=5e9) -> "BranchSet":
        """AES on its own supply; the IVR drives an unrelated constant load."""
        i_aes = np.asarray(i_aes, dtype=float)
        return cls(np.asarray(i_in, float), np.asarray(i_l, float), i_aes, i_aes.copy(),
                   np.full_like(i_aes, float(ivr_load)), sample_rate)

    @classmethod
    def ivr_powered(cls, i_aes, i_in, i_l, sample_rate=5e9) -> "BranchSet":
        """AES supplied by the IVR output; its current returns through the output loop."""
        i_aes = np.asarray(i_aes, dtype=float)
        return cls(np.asarray(i_in, float), np.asarray(i_l, float), np.zeros_like(i_aes),
                   i_aes, i_aes.copy(), sample_rate)


@dataclass(frozen=True)
class ProbeConfig:
    kind: str
    coupling: dict = field(default_factory=dict)
    f_low: float = 1e6
    f_high: float = 3e9
    placement: str = ""
    order: int = 2
    ftype: str = "butter"
    rp: float | None = None
    rs: float | None = None
    gain: float = 1.0
    resonance: tuple | None = None  # (f0, Q, peak gain) package-resonance coloration

    def __post_init__(self):
        if self.kind not in PROBE_KINDS:
            raise ValueError(f"unknown probe kind {self.kind!r}")
        if not 0 < self.f_low < self.f_high:
            raise ValueError("probe bandwidth needs 0 < f_low < f_high")
        for b, k in self.coupling.items():
            if b not in BRANCHES:
                raise ValueError(f"unknown branch {b!r} in coupling table")
            if k < 0:
                raise ValueError("coupling coefficients must be non-negative")

    @property
    def label(self) -> str:
        return f"{self.kind}@{self.placement}"

    def weight(self, branch: str) -> float:
        return float(self.coupling.get(branch, 0.0))

    def response(self, freqs) -> np.ndarray:
        """Complex analog response evaluated at ``freqs`` (Hz)."""
        f = np.asarray(freqs, dtype=float)
        b, a = signal.iirfilter(self.order, [2 * np.pi * self.f_low, 2 * np.pi * self.f_high],
                                rp=self.rp, rs=self.rs, btype="band", analog=True,
                                ftype=self.ftype)
        _, h = signal.freqs(b, a, worN=2 * np.pi * f)
        if self.resonance is not None:
            f0, q, peak = self.resonance
            w0 = 2 * np.pi * f0
            s = 2j * np.pi * f
            h = h * (1.0 + (peak - 1.0) * (s * w0 / q) / (s * s + s * w0 / q + w0 * w0))
        return self.gain * h


# Loop probes report volts: mutual inductance times dI/dt.  The weights below are
# relative couplings; only their orderings are meaningful.
LOOP_MUTUAL = 1e-9

PROFILES = {
    "small-loop@1": dict(kind="small-loop", f_low=1e6, f_high=3e9, gain=LOOP_MUTUAL,
                         coupling={"aes_supply": 1.0, "aes_ground": 0.1, "output_loop": 0.1,
                                   "inductor": 0.3, "ivr_input": 0.2}),
    "small-loop@2": dict(kind="small-loop", f_low=1e6, f_high=3e9, gain=LOOP_MUTUAL,
                         coupling={"aes_supply": 0.6, "aes_ground": 0.1, "output_loop": 0.1,
                                   "inductor": 1.0, "ivr_input": 0.3}),
    "large-loop@1": dict(kind="large-loop", f_low=1e6, f_high=100e6, gain=LOOP_MUTUAL,
                         order=6, ftype="ellip", rp=1.0, rs=40.0,
                         coupling={"aes_supply": 1.0, "aes_ground": 0.5, "output_loop": 0.5,
                                   "inductor": 1.0, "ivr_input": 0.5}),
}


def placement_profile(location: str, **overrides) -> ProbeConfig:
    """Probe by label: ``small-loop@1``, ``small-loop@2``, ``large-loop@1`` or
    ``node@<pin>`` with pin in V_IN,IVR / V_IND / V_DD,AES / V_SS,AES."""
    if location.startswith("node@"):
        pin = location[5:]
        if pin not in PINS:
            raise ValueError(f"unknown pin {pin!r}; expected one of {sorted(PINS)}")
        kw = dict(kind="node", f_low=1e6, f_high=2e9, order=3, coupling={PINS[pin]: 1.0})
    elif location in PROFILES:
        kw = dict(PROFILES[location])
        kw["coupling"] = dict(kw["coupling"])
        pin = location.split("@", 1)[1]
    else:
        raise ValueError(f"unknown probe placement {location!r}")
    kw["placement"] = pin
    kw.update(overrides)
    return ProbeConfig(**kw)


def apply_response(x: np.ndarray, probe: ProbeConfig, sample_rate: float,
                   guard: int = 0) -> np.ndarray:
    """Filter along the last axis in the frequency domain and drop ``guard``
    samples at both ends."""
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    h = probe.response(np.fft.rfftfreq(n, 1.0 / sample_rate))
    y = np.fft.irfft(np.fft.rfft(x, axis=-1) * h, n=n, axis=-1)
    return y[..., guard:n - guard] if guard else y


def derivative(x: np.ndarray, sample_rate: float) -> np.ndarray:
    """Central differences inside, one-sided at the ends."""
    return np.gradient(np.asarray(x, dtype=float), 1.0 / sample_rate, axis=-1)


def node_probe(branch: WaveformTrace, probe: ProbeConfig, guard: int = 0) -> WaveformTrace:
    if probe.kind != "node":
        raise ValueError("node_probe needs a node probe")
    k = sum(probe.coupling.values()) if probe.coupling else 1.0
    y = apply_response(k * branch.samples, probe, branch.sample_rate, guard)
    return WaveformTrace(y, branch.sample_rate, branch.start_time + guard / branch.sample_rate, "probe")


def loop_signal(branches: BranchSet, probe: ProbeConfig) -> np.ndarray:
    """Unfiltered weighted sum of branch-current derivatives."""
    total = None
    for b in BRANCHES:
        w = probe.weight(b)
        if w == 0.0:
            continue
        term = w * np.asarray(branches.get(b), dtype=float)
        total = term if total is None else total + term
    if total is None:
        total = np.zeros(np.shape(branches.inductor))
    return derivative(total, branches.sample_rate)


def loop_probe(branches: BranchSet, probe: ProbeConfig, guard: int = 0) -> WaveformTrace:
    if probe.kind not in ("small-loop", "large-loop"):
        raise ValueError("loop_probe needs a loop probe")
    y = apply_response(loop_signal(branches, probe), probe, branches.sample_rate, guard)
    if y.ndim != 1:
        raise ValueError("loop_probe builds one trace; use probe_batch for matrices")
    return WaveformTrace(y, branches.sample_rate, guard / branches.sample_rate, "probe")


def probe_batch(branches: BranchSet, probe: ProbeConfig, guard: int = 0) -> np.ndarray:
    """Probe output for (N, T) branch matrices."""
    if probe.kind == "node":
        x = sum(probe.weight(b) * np.asarray(branches.get(b), float)
                for b in BRANCHES if probe.weight(b) != 0.0)
        if isinstance(x, int):
            x = np.zeros(np.shape(branches.inductor))
    else:
        x = loop_signal(branches, probe)
    return apply_response(x, probe, branches.sample_rate, guard)
