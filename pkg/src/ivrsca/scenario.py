"""End-to-end scenario simulation: AES -> load current -> [IVR] -> probe -> noise.

Every random quantity is drawn from a generator keyed by ``(seed, stream,
trace index)``, so a trace does not depend on which chunk or worker produced
it.  Captures are not trigger-locked: the AES clock phase relative to the
sample clock and the IVR switching phase are both random per trace.
"""
from __future__ import annotations

import dataclasses
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import aes, em, ivr, leakage
from .traces import MODES, TraceSet

log = logging.getLogger(__name__)

STANDARD_KEY = bytes.fromhex("0123456789abcdef123456789abcdef0")
FIXED_PLAINTEXT = bytes.fromhex("da39a3ee5e6b4b0d3255bfef95601890")

PT_STREAM, PHASE_STREAM, NOISE_STREAM, STANDALONE_STREAM = 0, 1, 3, 4

PROBES = ("node@V_IN,IVR", "node@V_IND", "node@V_DD,AES", "node@V_SS,AES",
          "small-loop@1", "small-loop@2", "large-loop@1")


@dataclass
class LeakageConfig:
    pulse: str = "triangular"
    pulse_fraction: float = 0.2      # pulse duration / AES clock period
    charge: float = 2e-15            # coulombs per weighted transition
    quiescent: float = 10e-3         # amps drawn by the rest of the AES supply domain
    comb_weight: float = 0.0         # weight of combinational bus toggles
    clock_period: float = 10e-9      # AES clock (100 MHz)

    def shape(self) -> leakage.PulseShape:
        return leakage.PulseShape(self.pulse, self.pulse_fraction * self.clock_period, self.charge)


@dataclass
class CaptureConfig:
    sample_rate: float = 5e9
    length: int = 2000               # samples kept per trace
    aes_start: int = 500             # nominal sample of the first AES clock edge
    guard: int = 100                 # discarded samples each side (probe filter edges)
    standalone_record: float = 100e-6


@dataclass
class IvrConfig:
    v_in: float = 1.2
    l: float = 5.8e-9
    c_out: float = 20e-9
    f_sw: float = 125e6
    r_hs: float = 0.05
    r_ls: float = 0.05
    r_l: float = 0.1
    substeps: int = 200
    v_ref: float = 0.9
    adc_bits: int = 7
    adc_full_scale: float = 1.2
    kp: float = ivr.ControllerParams.kp
    ki: float = ivr.ControllerParams.ki
    kd: float = ivr.ControllerParams.kd
    dpwm_bits: int = 8
    lfsr_seed: int = 1
    delay_fraction: float = 1 / 64   # delay unit as a fraction of the switching period
    update_divider: int = 4

    def stage(self) -> ivr.PowerStageParams:
        return ivr.PowerStageParams(self.v_in, self.l, self.c_out, self.f_sw, self.r_hs,
                                    self.r_ls, self.r_l, self.substeps)

    def controller(self) -> ivr.ControllerParams:
        return ivr.ControllerParams(self.v_ref, self.adc_bits, self.adc_full_scale, self.kp,
                                    self.ki, self.kd, self.dpwm_bits)

    def randomizer(self, enabled: bool) -> ivr.RandomizerState:
        return ivr.RandomizerState(self.lfsr_seed, self.delay_fraction / self.f_sw,
                                   self.update_divider, enabled)


@dataclass
class AnalysisConfig:
    """Attack-side settings (filter bank, windows, analysis region, models)."""

    region_start: int = 400
    region_stop: int = 1400
    byte_idx: int = 0
    model: str = "auto"              # "hd", "hw" or "auto" (HP -> hd, LP -> hw)
    bank_start: float = 30e6
    bank_stop: float = 500e6
    bank_step: float = 10e6
    bank_bandwidth: float = 20e6
    bank_order: int = 4
    align: bool = True
    tvla_window: float = 200e-9
    tvla_stride: float = 100e-9
    tvla_orders: tuple = (1, 2, 3)
    cema_window: float = 80e-9
    cema_stride: float = 40e-9
    template_len: float = 0.6e-6
    template_floor: float = 0.5

    def bank(self):
        from .dsp import FilterBankSpec
        return FilterBankSpec(self.bank_start, self.bank_stop, self.bank_step,
                              self.bank_bandwidth, self.bank_order)

    def region(self, n_samples: int) -> tuple:
        a, b = self.region_start, min(self.region_stop, n_samples)
        if not 0 <= a < b:
            raise ValueError("empty analysis region")
        return a, b

    def model_for(self, arch: str) -> str:
        if self.model != "auto":
            return self.model
        return "hd" if arch == aes.HP else "hw"


@dataclass
class ScenarioConfig:
    aes: str = "LP"
    mode: str = "standalone"
    probe: str = "small-loop@1"
    n_traces: int = 1000
    noise_sigma: float = 0.0
    seed: int = 1
    dataset: str = "random"          # "random" (CEMA) or "tvla" (semi-fixed)
    key: str = STANDARD_KEY.hex()
    fixed_plaintext: str = FIXED_PLAINTEXT.hex()
    coupling: dict = field(default_factory=dict)   # probe coupling overrides
    leakage: LeakageConfig = field(default_factory=LeakageConfig)
    capture: CaptureConfig = field(default_factory=CaptureConfig)
    ivr: IvrConfig = field(default_factory=IvrConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    chunk: int = 1000
    workers: int = 1

    def __post_init__(self):
        if self.aes not in (aes.HP, aes.LP):
            raise ValueError(f"unknown AES architecture {self.aes!r}")
        if self.mode not in MODES:
            raise ValueError(f"unknown power mode {self.mode!r}")
        if self.dataset not in ("random", "tvla"):
            raise ValueError("dataset must be 'random' or 'tvla'")
        if self.n_traces < 1:
            raise ValueError("need at least one trace")
        if self.noise_sigma < 0:
            raise ValueError("noise sigma must be non-negative")
        em.placement_profile(self.probe)  # validates the label

    @property
    def key_bytes(self) -> bytes:
        return bytes.fromhex(self.key)

    def probe_config(self) -> em.ProbeConfig:
        p = em.placement_profile(self.probe)
        if self.coupling:
            c = dict(p.coupling)
            c.update(self.coupling)
            p = dataclasses.replace(p, coupling=c)
        return p

    def replace(self, **kw) -> "ScenarioConfig":
        return dataclasses.replace(self, **kw)


def config_from_dict(d: dict) -> ScenarioConfig:
    d = dict(d or {})
    sub = {"leakage": LeakageConfig, "capture": CaptureConfig, "ivr": IvrConfig,
           "analysis": AnalysisConfig}
    for k, cls in sub.items():
        if k in d and isinstance(d[k], dict):
            names = {f.name for f in dataclasses.fields(cls)}
            unknown = set(d[k]) - names
            if unknown:
                raise ValueError(f"unknown {k} option(s): {sorted(unknown)}")
            if k == "analysis" and "tvla_orders" in d[k]:
                d[k] = dict(d[k], tvla_orders=tuple(d[k]["tvla_orders"]))
            d[k] = cls(**d[k])
    names = {f.name for f in dataclasses.fields(ScenarioConfig)}
    unknown = set(d) - names
    if unknown:
        raise ValueError(f"unknown scenario option(s): {sorted(unknown)}")
    return ScenarioConfig(**d)


def config_to_dict(cfg: ScenarioConfig) -> dict:
    return dataclasses.asdict(cfg)


def scenario_matrix(base: ScenarioConfig | None = None) -> list[ScenarioConfig]:
    """All power modes x AES designs x probe placements."""
    base = base or ScenarioConfig()
    return [base.replace(mode=m, aes=a, probe=p) for m in MODES for a in (aes.HP, aes.LP)
            for p in PROBES]


# --------------------------------------------------------------------------- inputs

def plaintexts(cfg: ScenarioConfig):
    """Plaintexts and TVLA labels (``None`` for random sets)."""
    g = np.random.default_rng((cfg.seed, PT_STREAM))
    pts = g.integers(0, 256, size=(cfg.n_traces, 16), dtype=np.uint8)
    if cfg.dataset == "random":
        return pts, None
    labels = np.zeros(cfg.n_traces, dtype=bool)
    labels[: cfg.n_traces // 2] = True
    labels = g.permutation(labels)
    pts[labels] = np.frombuffer(bytes.fromhex(cfg.fixed_plaintext), dtype=np.uint8)
    return pts, labels


class _Context:
    """Per-scenario objects that are expensive to build (settled IVR, long records)."""

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        c = cfg.capture
        self.fs = c.sample_rate
        self.total = c.length + 2 * c.guard
        self.shape = cfg.leakage.shape()
        self.kernel = self.shape.kernel(self.fs)
        if self.fs * self.shape.duration < 10:
            raise ValueError("sample rate too low for the pulse shape")
        self.cycle_samples = cfg.leakage.clock_period * self.fs
        self.phase_span = max(int(round(self.cycle_samples)), 1)
        self.probe = cfg.probe_config()
        self.stage = cfg.ivr.stage()
        self.ctrl = cfg.ivr.controller()
        enabled = cfg.mode == ivr.R_IVR
        self.enabled = enabled and cfg.ivr.delay_fraction > 0
        self.rs = cfg.ivr.randomizer(enabled)
        q = cfg.leakage.quiescent
        if cfg.mode == "standalone":
            steady = ivr.settle_cached(self.stage, self.ctrl, self.rs, q, False)
            n_rec = max(int(c.standalone_record * self.fs), 4 * self.total)
            rec = ivr.run_constant(self.stage, self.ctrl, self.rs, q, n_rec, self.fs, False, steady)
            self.record = (rec["i_in"][0], rec["i_l"][0])
            self.steady = None
        else:
            self.steady = ivr.settle_cached(self.stage, self.ctrl, self.rs, q, self.enabled)


def _clean_chunk(ctx: _Context, idx: np.ndarray, pts: np.ndarray):
    cfg = ctx.cfg
    act = aes.activity(cfg.aes, cfg.key_bytes, pts, cfg.leakage.comb_weight,
                       cfg.leakage.clock_period)
    # do not synthesise cycles that start after the capture
    last = int(np.ceil((ctx.total - cfg.capture.aes_start) / ctx.cycle_samples)) + 1
    totals = act.totals()[:, :max(last, 1)]
    phase = np.array([leakage.trace_rng(cfg.seed, PHASE_STREAM, i).integers(ctx.phase_span)
                      for i in idx], dtype=np.int64)
    starts = cfg.capture.guard + cfg.capture.aes_start + phase
    i_aes = leakage.load_currents(totals, ctx.kernel, ctx.cycle_samples, starts, ctx.total,
                                  cfg.leakage.quiescent)
    if cfg.mode == "standalone":
        i_in_rec, i_l_rec = ctx.record
        offs = np.array([leakage.trace_rng(cfg.seed, STANDALONE_STREAM, i)
                         .integers(i_in_rec.size - ctx.total) for i in idx], dtype=np.int64)
        cols = offs[:, None] + np.arange(ctx.total)[None, :]
        br = em.BranchSet.standalone(i_aes, i_in_rec[cols], i_l_rec[cols],
                                     cfg.leakage.quiescent, ctx.fs)
    else:
        o = ivr.simulate_batch(i_aes, ctx.enabled, ctx.stage, ctx.ctrl, ctx.rs, ctx.steady,
                               ctx.fs, cfg.seed, idx)
        br = em.BranchSet.ivr_powered(i_aes, o["i_in"], o["i_l"], ctx.fs)
    return em.probe_batch(br, ctx.probe, cfg.capture.guard), act.ciphertexts


def simulate_clean(cfg: ScenarioConfig) -> TraceSet:
    """Noiseless probe traces for the whole scenario."""
    pts, labels = plaintexts(cfg)
    ctx = _Context(cfg)
    n = cfg.n_traces
    out = np.empty((n, cfg.capture.length))
    cts = np.empty((n, 16), dtype=np.uint8)
    spans = [(s, min(n, s + cfg.chunk)) for s in range(0, n, cfg.chunk)]

    def work(span):
        s, e = span
        out[s:e], cts[s:e] = _clean_chunk(ctx, np.arange(s, e), pts[s:e])

    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as ex:
            list(ex.map(work, spans))
    else:
        for sp in spans:
            work(sp)
    meta = {"aes": cfg.aes, "seed": cfg.seed, "noise_sigma": 0.0}
    return TraceSet(out, pts, cts, cfg.key_bytes, cfg.capture.sample_rate, cfg.mode, cfg.probe,
                    labels, meta)


def unit_noise(cfg: ScenarioConfig, n: int | None = None) -> np.ndarray:
    n = cfg.n_traces if n is None else n
    return leakage.noise_matrix(cfg.seed, NOISE_STREAM, np.arange(n), cfg.capture.length)


def with_noise(clean: TraceSet, sigma: float, noise: np.ndarray) -> TraceSet:
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    ts = clean.with_traces(clean.traces + sigma * noise[: clean.n_traces])
    ts.meta["noise_sigma"] = float(sigma)
    return ts


def simulate(cfg: ScenarioConfig) -> TraceSet:
    """Full pipeline including measurement noise."""
    clean = simulate_clean(cfg)
    if cfg.noise_sigma == 0:
        return clean
    return with_noise(clean, cfg.noise_sigma, unit_noise(cfg))


def run_scenario(cfg: ScenarioConfig, path) -> str:
    """Simulate and persist one scenario; returns the store path."""
    from . import store
    try:
        ts = simulate(cfg)
    except Exception as exc:  # add scenario context to module errors
        raise type(exc)(f"[{cfg.aes}/{cfg.mode}/{cfg.probe}] {exc}") from exc
    return store.save(ts, path)
