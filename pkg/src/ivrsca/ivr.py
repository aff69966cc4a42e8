"""Discrete-time model of an inductive integrated buck regulator.

Power stage
    Synchronous buck: ``L dI/dt = V_SW - V_OUT - I R``, ``C dV/dt = I - i_load``
    with ``R = R_L + R_on`` of whichever switch conducts.  Integrated with the
    trapezoidal rule; the switch-node voltage is averaged exactly over each
    sub-step so edge timing finer than the step is preserved.

Controller
    ADC (floor quantiser) -> velocity-form PID on ADC codes -> DPWM (rounding
    quantiser).  One update per switching cycle, sampled at the nominal cycle
    boundary, applied with one cycle of latency.

Loop randomizer
    A 4-bit Fibonacci LFSR (x^4 + x^3 + 1) advances every ``update_divider``
    cycles; the high-side turn-on edge of each cycle is delayed by
    ``lfsr * delay_unit``.  An on-interval pushed past the end of its cycle
    spills into the next one.

The inner loops live in numba kernels; the Python-level ``step_power_stage``
and ``controller_update`` call the same compiled helpers.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit
from scipy import signal

from .traces import WaveformTrace

log = logging.getLogger(__name__)

B_IVR = "B-IVR"
R_IVR = "R-IVR"


class SimulationError(RuntimeError):
    """Non-finite state or failure to regulate."""


@dataclass(frozen=True)
class PowerStageParams:
    v_in: float = 1.2
    l: float = 5.8e-9
    c_out: float = 20e-9
    f_sw: float = 125e6
    r_hs: float = 0.05
    r_ls: float = 0.05
    r_l: float = 0.1
    substeps: int = 200

    def __post_init__(self):
        if min(self.v_in, self.l, self.c_out, self.f_sw) <= 0:
            raise ValueError("V_IN, L, C_OUT and F_SW must be positive")
        if min(self.r_hs, self.r_ls, self.r_l) < 0:
            raise ValueError("resistances must be non-negative")
        if self.substeps < 100:
            raise ValueError("need at least 100 integration steps per switching period")

    @property
    def period(self) -> float:
        return 1.0 / self.f_sw

    @property
    def f_lc(self) -> float:
        return 1.0 / (2 * np.pi * np.sqrt(self.l * self.c_out))

    @property
    def dt(self) -> float:
        return self.period / self.substeps

    @classmethod
    def ideal(cls, **kw) -> "PowerStageParams":
        return cls(r_hs=0.0, r_ls=0.0, r_l=0.0, **kw)


@dataclass(frozen=True)
class ControllerParams:
    """PID gains act on ADC codes and produce duty directly.

    The default gains come from ``scripts/design_pid.py`` (phase margin of the
    sampled loop at least 45 degrees for the default power stage).
    """

    v_ref: float = 0.9
    adc_bits: int = 7
    adc_full_scale: float = 1.2
    kp: float = 2e-4
    ki: float = 7e-4
    kd: float = 9e-4
    dpwm_bits: int = 8
    sample_rate: float | None = None

    def __post_init__(self):
        if self.adc_bits < 1 or self.dpwm_bits < 1:
            raise ValueError("ADC and DPWM need at least one bit")
        if not 0 < self.v_ref < self.adc_full_scale:
            raise ValueError("V_REF must lie inside the ADC range")

    @property
    def lsb(self) -> float:
        return self.adc_full_scale / 2 ** self.adc_bits

    def adc(self, v: float) -> int:
        return int(_adc_code(v, self.adc_full_scale, 2 ** self.adc_bits))

    @property
    def ref_code(self) -> int:
        return self.adc(self.v_ref)

    def divider(self, stage: PowerStageParams) -> int:
        if self.sample_rate is None:
            return 1
        d = stage.f_sw / self.sample_rate
        if abs(d - round(d)) > 1e-9 or round(d) < 1:
            raise ValueError("controller rate must divide the switching frequency")
        return int(round(d))


@dataclass
class RandomizerState:
    lfsr: int = 0b0001
    delay_unit: float = 8e-9 / 64
    update_divider: int = 4
    enabled: bool = False
    counter: int = 0

    def __post_init__(self):
        if not 0 <= self.lfsr < 16:
            raise ValueError("LFSR is a 4-bit register")
        if self.enabled and self.lfsr == 0:
            raise ValueError("an enabled LFSR must be non-zero")
        if self.update_divider < 1 or self.delay_unit < 0:
            raise ValueError("invalid randomizer configuration")


@dataclass
class PidState:
    acc: float = 0.0
    e1: float = 0.0
    e2: float = 0.0
    duty: float = 0.0


@dataclass
class IvrState:
    i_l: float = 0.0
    v_out: float = 0.0
    pid: PidState = field(default_factory=PidState)
    duty: float = 0.0          # duty applied in the current cycle
    duty_next: float = 0.0     # command waiting for the next cycle
    phase: float = 0.0         # seconds into the current switching cycle
    carry: float = 0.0         # on-time spilled over from the previous cycle
    delay: float = 0.0         # turn-on delay of the current cycle
    randomizer: RandomizerState = field(default_factory=RandomizerState)

    def check(self) -> "IvrState":
        if not (np.isfinite(self.i_l) and np.isfinite(self.v_out)):
            raise SimulationError(f"non-finite power-stage state (I_L={self.i_l}, V_OUT={self.v_out})")
        return self


@dataclass
class IvrRunOutput:
    input_current: WaveformTrace
    inductor_current: WaveformTrace
    v_out: WaveformTrace
    v_sw: WaveformTrace
    duty: np.ndarray | None = None


# --------------------------------------------------------------------------- compiled core

@njit(cache=True)
def _adc_code(v, full_scale, levels):
    c = np.floor(v / full_scale * levels)
    if c < 0.0:
        c = 0.0
    if c > levels - 1:
        c = levels - 1.0
    return c


@njit(cache=True)
def _pid(code, ref_code, acc, e1, e2, kp, ki, kd, dlevels):
    e = ref_code - code
    acc = acc + kp * (e - e1) + ki * e + kd * (e - 2.0 * e1 + e2)
    if acc < 0.0:
        acc = 0.0
    elif acc > 1.0:
        acc = 1.0
    duty = np.floor(acc * dlevels + 0.5) / dlevels
    top = (dlevels - 1.0) / dlevels
    if duty > top:
        duty = top
    return acc, e, e1, duty


@njit(cache=True)
def _lfsr_step(s):
    fb = ((s >> 3) ^ (s >> 2)) & 1
    return ((s << 1) | fb) & 0xF


@njit(cache=True)
def _overlap(a0, a1, b0, b1):
    lo = a0 if a0 > b0 else b0
    hi = a1 if a1 < b1 else b1
    return hi - lo if hi > lo else 0.0


@njit(cache=True)
def _on_time(t0, t1, carry, d0, d1):
    """On-time inside [t0, t1) for on-intervals [0, carry) and [d0, d1)."""
    if d0 <= carry:
        return _overlap(t0, t1, 0.0, carry if carry > d1 else d1)
    return _overlap(t0, t1, 0.0, carry) + _overlap(t0, t1, d0, d1)


@njit(cache=True)
def _trap(i0, v0, vsw, r, iload, h, l, c):
    a = h * r / (2.0 * l)
    b = h / (2.0 * l)
    cc = h / (2.0 * c)
    r1 = (1.0 - a) * i0 - b * v0 + h * vsw / l
    r2 = cc * i0 + v0 - h * iload / c
    i1 = (r1 - b * r2) / (1.0 + a + b * cc)
    return i1, r2 + cc * i1


@njit(cache=True)
def _simulate(loads, sub, pre, st_f, st_i, p, out_iin, out_il, out_v, out_vsw, out_duty):
    """Batched closed-loop simulation.

    loads    (N, T) load current per output sample (held over its sub-steps)
    sub      integration sub-steps per output sample
    pre      (N,) sub-steps run at loads[n, 0] before the first output sample
    st_f     (N, 8) float state: i_l, v, acc, e1, e2, duty, duty_next, carry
    st_i     (N, 3) int state: lfsr, lfsr counter, controller counter
    p        float params: v_in, l, c, r_l, r_hs, r_ls, h, M, adc_fs, adc_levels,
             ref_code, kp, ki, kd, dpwm_levels, enabled, delay_unit, lr_div, ctrl_div
    Currents, V_OUT and duty are sampled at the start of every output interval;
    V_SW is the switch-node voltage averaged over the interval.  States are
    left in st_f / st_i at the end (always at a cycle boundary when the
    total number of sub-steps is a multiple of M).
    Returns the number of non-finite traces encountered.
    """
    n_tr, n_t = loads.shape
    v_in, l, c, r_l, r_hs, r_ls, h = p[0], p[1], p[2], p[3], p[4], p[5], p[6]
    m_per = int(p[7])
    adc_fs, adc_lv, ref_code = p[8], p[9], p[10]
    kp, ki, kd, dlv = p[11], p[12], p[13], p[14]
    enabled = p[15] > 0.5
    unit = p[16]
    lr_div = int(p[17])
    ctrl_div = int(p[18])
    period = m_per * h
    bad = 0
    for n in range(n_tr):
        i_l = st_f[n, 0]
        v = st_f[n, 1]
        acc = st_f[n, 2]
        e1 = st_f[n, 3]
        e2 = st_f[n, 4]
        duty = st_f[n, 5]
        duty_next = st_f[n, 6]
        carry = st_f[n, 7]
        lfsr = st_i[n, 0]
        cnt = st_i[n, 1]
        ccnt = st_i[n, 2]
        delay = lfsr * unit if enabled else 0.0
        m = 0
        total = pre[n] + n_t * sub
        for k in range(total):
            if k >= pre[n]:
                kk = k - pre[n]
                if kk % sub == 0:
                    t = kk // sub
                    tau = m * h
                    on = (tau < carry) or (tau >= delay and tau < delay + duty * period)
                    out_il[n, t] = i_l
                    out_v[n, t] = v
                    out_iin[n, t] = i_l if on else 0.0
                    out_vsw[n, t] = 0.0
                    out_duty[n, t] = duty
                iload = loads[n, kk // sub]
            else:
                iload = loads[n, 0]
            ton = _on_time(m * h, (m + 1) * h, carry, delay, delay + duty * period)
            frac = ton / h
            if k >= pre[n]:
                out_vsw[n, (k - pre[n]) // sub] += v_in * frac / sub
            r = r_l + frac * r_hs + (1.0 - frac) * r_ls
            i_l, v = _trap(i_l, v, v_in * frac, r, iload, h, l, c)
            m += 1
            if m == m_per:
                m = 0
                spill = delay + duty * period - period
                carry = spill if spill > 0.0 else 0.0
                duty = duty_next
                ccnt += 1
                if ccnt >= ctrl_div:
                    ccnt = 0
                    code = _adc_code(v, adc_fs, adc_lv)
                    acc, e1, e2, duty_next = _pid(code, ref_code, acc, e1, e2, kp, ki, kd, dlv)
                if enabled:
                    cnt += 1
                    if cnt >= lr_div:
                        cnt = 0
                        lfsr = _lfsr_step(lfsr)
                    delay = lfsr * unit
                if not (np.isfinite(i_l) and np.isfinite(v)):
                    bad += 1
                    break
        st_f[n, 0] = i_l
        st_f[n, 1] = v
        st_f[n, 2] = acc
        st_f[n, 3] = e1
        st_f[n, 4] = e2
        st_f[n, 5] = duty
        st_f[n, 6] = duty_next
        st_f[n, 7] = carry
        st_i[n, 0] = lfsr
        st_i[n, 1] = cnt
        st_i[n, 2] = ccnt
    return bad


# --------------------------------------------------------------------------- python API

def lfsr_next(state: int) -> int:
    """Fibonacci LFSR, taps x^4 + x^3 + 1."""
    if not 0 < state < 16:
        raise ValueError(f"LFSR state must be a non-zero 4-bit value, got {state!r}")
    return int(_lfsr_step(state))


def lfsr_orbit(seed: int) -> list[int]:
    out = [seed]
    s = lfsr_next(seed)
    while s != seed:
        out.append(s)
        s = lfsr_next(s)
    return out


def randomizer_delay(rs: RandomizerState, switching_cycle_index: int) -> float:
    """Delay of switching cycle ``k`` counted from the register value ``rs.lfsr``
    (which is held for the first ``update_divider`` cycles)."""
    if not rs.enabled:
        return 0.0
    s = rs.lfsr
    for _ in range(switching_cycle_index // rs.update_divider):
        s = lfsr_next(s)
    return s * rs.delay_unit


def step_power_stage(state: IvrState, params: PowerStageParams, i_load: float,
                     dt: float) -> IvrState:
    """Advance the power stage by ``dt`` with the switch pattern held in ``state``.

    The duty and delay are left untouched at cycle boundaries (open loop); the
    carried on-time is recomputed when the phase wraps.
    """
    if dt > params.period / 100 * (1 + 1e-12):
        raise ValueError("dt must be at most 1/(100 F_SW)")
    T = params.period
    d0, d1 = state.delay, state.delay + state.duty * T
    t0 = state.phase
    t1 = t0 + dt
    ton = _on_time(t0, min(t1, T), state.carry, d0, d1)
    carry, phase = state.carry, t1
    if t1 >= T:
        carry = max(0.0, d1 - T)
        phase = t1 - T
        ton += _on_time(0.0, phase, carry, d0, d1)
    frac = ton / dt
    r = params.r_l + frac * params.r_hs + (1 - frac) * params.r_ls
    i1, v1 = _trap(state.i_l, state.v_out, params.v_in * frac, r, i_load, dt,
                   params.l, params.c_out)
    return replace(state, i_l=float(i1), v_out=float(v1), phase=phase, carry=carry).check()


def controller_update(v_out_sample: float, params: ControllerParams, state: PidState) -> float:
    """One PID update; mutates ``state`` and returns the quantised duty command."""
    lv = 2 ** params.adc_bits
    code = _adc_code(v_out_sample, params.adc_full_scale, lv)
    ref = _adc_code(params.v_ref, params.adc_full_scale, lv)
    acc, e1, e2, duty = _pid(code, ref, state.acc, state.e1, state.e2,
                             params.kp, params.ki, params.kd, float(2 ** params.dpwm_bits))
    state.acc, state.e1, state.e2, state.duty = acc, e1, e2, duty
    return float(duty)


def _param_vector(stage, ctrl, rs, enabled):
    lv = 2 ** ctrl.adc_bits
    return np.array([
        stage.v_in, stage.l, stage.c_out, stage.r_l, stage.r_hs, stage.r_ls, stage.dt,
        stage.substeps, ctrl.adc_full_scale, lv, _adc_code(ctrl.v_ref, ctrl.adc_full_scale, lv),
        ctrl.kp, ctrl.ki, ctrl.kd, 2.0 ** ctrl.dpwm_bits, 1.0 if enabled else 0.0,
        rs.delay_unit, rs.update_divider, ctrl.divider(stage),
    ], dtype=float)


@dataclass
class Snapshot:
    """Packed simulator state at a cycle boundary."""

    f: np.ndarray   # (8,)
    i: np.ndarray   # (3,)

    def to_state(self, rs: RandomizerState, stage: PowerStageParams) -> IvrState:
        i_l, v, acc, e1, e2, duty, duty_next, carry = (float(x) for x in self.f)
        r = replace(rs, lfsr=int(self.i[0]), counter=int(self.i[1]))
        return IvrState(i_l, v, PidState(acc, e1, e2, duty_next), duty, duty_next, 0.0,
                        carry, randomizer_delay(r, 0), r)


def _samples_per_output(stage: PowerStageParams, sample_rate: float) -> int:
    sub = stage.substeps * stage.f_sw / sample_rate
    if abs(sub - round(sub)) > 1e-6 or round(sub) < 1:
        raise ValueError("sample rate must divide the integration rate "
                         f"({stage.substeps} steps per switching period)")
    return int(round(sub))


@dataclass
class SteadyState:
    """Cycle-boundary snapshots spanning one full randomizer pattern."""

    snapshots: list
    mean_v_out: float
    mean_i_l: float
    load: float
    enabled: bool


def settle(stage: PowerStageParams, ctrl: ControllerParams, rs: RandomizerState,
           load: float, enabled: bool, settle_time: float = 20e-6,
           check_time: float = 4e-6, band: float = 0.05) -> SteadyState:
    """Run the closed loop at constant load and collect steady-state snapshots.

    Raises ``SimulationError`` when the mean output voltage over the check
    window is outside ``V_REF * (1 +- band)``.
    """
    if enabled and rs.lfsr == 0:
        raise ValueError("an enabled LFSR must be non-zero")
    p = _param_vector(stage, ctrl, rs, enabled)
    # the same cycle counts with and without randomizer, so that a zero delay
    # unit reproduces the baseline exactly
    pattern = 15 * rs.update_divider
    m = stage.substeps
    n_cycles = int(np.ceil(settle_time * stage.f_sw / pattern)) * pattern
    d0 = ctrl.v_ref / stage.v_in
    st_f = np.array([[load, ctrl.v_ref, d0, 0.0, 0.0, d0, d0, 0.0]])
    st_i = np.array([[rs.lfsr if rs.lfsr else 1, rs.counter, 0]], dtype=np.int64)
    scratch = [np.zeros((1, n_cycles)) for _ in range(5)]
    if _simulate(np.full((1, n_cycles), load), m, np.zeros(1, np.int64), st_f, st_i, p, *scratch):
        raise SimulationError("power stage diverged while settling")

    n_snap = max(pattern, 60)
    n_chk = max(int(np.ceil(check_time * stage.f_sw / n_snap)), 1) * n_snap
    snaps = []
    v_sum = i_sum = 0.0
    one = np.full((1, m), load)
    out = [np.zeros((1, m)) for _ in range(5)]
    for c in range(n_chk):
        if n_chk - c <= n_snap:
            snaps.append(Snapshot(st_f[0].copy(), st_i[0].copy()))
        _simulate(one, 1, np.zeros(1, np.int64), st_f, st_i, p, *out)
        v_sum += out[2].sum()
        i_sum += out[1].sum()
    mean_v = v_sum / (n_chk * m)
    mean_i = i_sum / (n_chk * m)
    if not np.isfinite(mean_v) or abs(mean_v - ctrl.v_ref) > band * ctrl.v_ref:
        raise SimulationError(
            f"regulator failed to settle: mean V_OUT {mean_v:.4f} V vs V_REF {ctrl.v_ref} V")
    log.debug("settled: V_OUT %.5f V, I_L %.5f A", mean_v, mean_i)
    return SteadyState(snaps, float(mean_v), float(mean_i), float(load), enabled)


_SETTLE_CACHE: dict = {}


def settle_cached(stage, ctrl, rs, load, enabled, **kw) -> SteadyState:
    key = (stage, ctrl, rs.lfsr, rs.delay_unit, rs.update_divider, float(load), bool(enabled),
           tuple(sorted(kw.items())))
    if key not in _SETTLE_CACHE:
        _SETTLE_CACHE[key] = settle(stage, ctrl, rs, load, enabled, **kw)
    return _SETTLE_CACHE[key]


IVR_STREAM = 2


def simulate_batch(loads: np.ndarray, enabled: bool, stage: PowerStageParams,
                   ctrl: ControllerParams, rs: RandomizerState, steady: SteadyState,
                   sample_rate: float, seed: int, indices, with_vout: bool = False) -> dict:
    """Closed-loop run of many traces, each starting from a random steady-state
    snapshot (random randomizer-pattern position) at a random sub-sample phase of
    the switching clock.  Randomness is drawn per trace index, so results do not
    depend on how traces are batched.

    Returns arrays ``i_in``, ``i_l``, ``v_sw``, ``duty`` (and ``v_out``), all (N, T).
    """
    loads = np.ascontiguousarray(np.atleast_2d(loads), dtype=float)
    n, t = loads.shape
    sub = _samples_per_output(stage, sample_rate)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.shape != (n,):
        raise ValueError("need one trace index per load row")
    st_f = np.empty((n, 8))
    st_i = np.empty((n, 3), dtype=np.int64)
    pre = np.empty(n, dtype=np.int64)
    for r, i in enumerate(idx):
        g = np.random.default_rng((int(seed), IVR_STREAM, int(i)))
        snap = steady.snapshots[int(g.integers(len(steady.snapshots)))]
        st_f[r] = snap.f
        st_i[r] = snap.i
        pre[r] = int(g.integers(stage.substeps))
    out = {k: np.empty((n, t)) for k in ("i_in", "i_l", "v_out", "v_sw", "duty")}
    p = _param_vector(stage, ctrl, rs, enabled)
    bad = _simulate(loads, sub, pre, st_f, st_i, p, out["i_in"], out["i_l"], out["v_out"],
                    out["v_sw"], out["duty"])
    if bad:
        raise SimulationError(f"{bad} trace(s) produced non-finite regulator state")
    if not with_vout:
        out.pop("v_out")
    return out


def run_constant(stage: PowerStageParams, ctrl: ControllerParams, rs: RandomizerState,
                 load: float, n_samples: int, sample_rate: float, enabled: bool = False,
                 steady: SteadyState | None = None) -> dict:
    """One long closed-loop record at constant load, starting from steady state."""
    steady = steady or settle_cached(stage, ctrl, rs, load, enabled)
    return simulate_batch(np.full((1, n_samples), load), enabled, stage, ctrl, rs, steady,
                          sample_rate, 0, [0], with_vout=True)


def run_ivr(load: WaveformTrace, mode: str, stage: PowerStageParams | None = None,
            ctrl: ControllerParams | None = None, rs: RandomizerState | None = None,
            seed: int = 0, index: int = 0) -> IvrRunOutput:
    """Drive the regulator with ``load``.

    The loop is first settled at the load's initial value (pre-roll), then the
    run starts at a random randomizer-pattern position and clock phase drawn
    from ``(seed, index)``.  ``mode`` is ``"B-IVR"`` (randomizer off) or
    ``"R-IVR"`` (randomizer on).
    """
    stage = stage or PowerStageParams()
    ctrl = ctrl or ControllerParams()
    rs = rs or RandomizerState()
    if mode not in (B_IVR, R_IVR):
        raise ValueError(f"unknown IVR mode {mode!r}")
    enabled = mode == R_IVR and rs.delay_unit > 0
    steady = settle_cached(stage, ctrl, rs, float(load.samples[0]), enabled)
    o = simulate_batch(load.samples[None, :], enabled, stage, ctrl, rs, steady,
                       load.sample_rate, seed, [index], with_vout=True)
    fs, t0 = load.sample_rate, load.start_time
    return IvrRunOutput(
        WaveformTrace(o["i_in"][0], fs, t0, "A"), WaveformTrace(o["i_l"][0], fs, t0, "A"),
        WaveformTrace(o["v_out"][0], fs, t0, "V"), WaveformTrace(o["v_sw"][0], fs, t0, "V"),
        o["duty"][0])


# --------------------------------------------------------------------------- small-signal loop

@dataclass(frozen=True)
class LoopMargins:
    phase_margin: float      # degrees
    gain_margin: float       # dB
    crossover: float         # Hz
    n_crossings: int


def loop_response(stage: PowerStageParams, ctrl: ControllerParams, n: int = 8192):
    """Sampled loop gain ``L(e^jw)`` of the averaged duty-to-V_OUT model.

    Plant: ZOH discretisation of the averaged LC stage (series resistance
    ``R_L`` plus the mean switch resistance), one cycle of computation latency,
    ADC gain ``2^bits / full_scale`` and the velocity-form PID.
    Returns ``(f_hz, L)`` over ``(0, f_ctrl/2]``.
    """
    r = stage.r_l + 0.5 * (stage.r_hs + stage.r_ls)
    T = stage.period * ctrl.divider(stage)
    a = np.array([[-r / stage.l, -1 / stage.l], [1 / stage.c_out, 0.0]])
    b = np.array([[stage.v_in / stage.l], [0.0]])
    ad, bd, cd, _, _ = signal.cont2discrete((a, b, np.array([[0.0, 1.0]]), np.zeros((1, 1))), T, "zoh")
    w = np.linspace(np.pi / n, np.pi, n)
    z = np.exp(1j * w)
    eye = np.eye(2)
    g = np.array([(cd @ np.linalg.solve(zz * eye - ad, bd))[0, 0] for zz in z])
    zi = 1 / z
    pid = (ctrl.kp * (1 - zi) + ctrl.ki + ctrl.kd * (1 - zi) ** 2) / (1 - zi)
    k_adc = 2 ** ctrl.adc_bits / ctrl.adc_full_scale
    return w / (2 * np.pi * T), k_adc * pid * zi * g


def loop_margins(stage: PowerStageParams, ctrl: ControllerParams) -> LoopMargins:
    f, lz = loop_response(stage, ctrl)
    mag = np.abs(lz)
    ang = np.angle(lz)
    xs = np.flatnonzero(np.diff(np.sign(mag - 1.0)) != 0)
    if xs.size == 0:
        return LoopMargins(float("nan"), float("nan"), float("nan"), 0)
    pm = min(180.0 + np.degrees(ang[i]) for i in xs)
    # -180 degree crossings: the wrapped angle jumps from -pi to +pi
    gs = [i for i in np.flatnonzero(np.diff(np.sign(ang)) != 0) if abs(ang[i]) > np.pi / 2]
    gm = min((-20 * np.log10(mag[i]) for i in gs), default=float("inf"))
    return LoopMargins(float(pm), float(gm), float(f[xs[0]]), int(xs.size))
