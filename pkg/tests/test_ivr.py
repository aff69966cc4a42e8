import dataclasses

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ivrsca import ivr
from ivrsca.traces import WaveformTrace

STAGE = ivr.PowerStageParams()
CTRL = ivr.ControllerParams()
FINE = 25e9  # one output sample per integration step


def brute_lfsr_orbit(seed):
    # taps x^4 + x^3 + 1: shift left, feed back b3 xor b2
    bits = [(seed >> i) & 1 for i in range(4)]
    out = []
    for _ in range(15):
        out.append(sum(b << i for i, b in enumerate(bits)))
        fb = bits[3] ^ bits[2]
        bits = [fb] + bits[:3]
    return out


def closed_loop(load, enabled=False, stage=STAGE, periods=60, fs=FINE, ctrl=CTRL):
    rs = ivr.RandomizerState(enabled=enabled)
    ss = ivr.settle(stage, ctrl, rs, load, enabled)
    n = int(round(periods * fs / stage.f_sw))
    return ivr.run_constant(stage, ctrl, rs, load, n, fs, enabled, ss)


# ---------------------------------------------------------------- parameters

def test_lc_corner_below_switching_frequency():
    assert STAGE.f_lc < STAGE.f_sw
    assert STAGE.f_lc == pytest.approx(1 / (2 * np.pi * np.sqrt(5.8e-9 * 20e-9)))


def test_default_gains_have_phase_margin():
    m = ivr.loop_margins(STAGE, CTRL)
    assert m.phase_margin >= 45
    assert m.gain_margin > 6
    assert 0 < m.crossover < STAGE.f_sw / 2


def test_parameter_validation():
    with pytest.raises(ValueError):
        ivr.PowerStageParams(l=0)
    with pytest.raises(ValueError):
        ivr.PowerStageParams(substeps=50)
    with pytest.raises(ValueError):
        ivr.ControllerParams(v_ref=1.5)
    with pytest.raises(ValueError):
        ivr.RandomizerState(lfsr=0, enabled=True)
    with pytest.raises(ValueError):
        ivr.ControllerParams(sample_rate=50e6).divider(STAGE)


# ---------------------------------------------------------------- controller

def test_adc_quantization():
    assert CTRL.adc(0.600) == 64
    assert CTRL.adc(-0.1) == 0
    assert CTRL.adc(5.0) == 127
    assert CTRL.lsb == pytest.approx(1.2 / 128)


def test_pid_fixed_point_keeps_duty():
    state = ivr.PidState(acc=0.5)
    v = (CTRL.ref_code + 0.5) * CTRL.lsb
    d = ivr.controller_update(v, CTRL, state)
    assert d == 0.5
    assert ivr.controller_update(v, CTRL, state) == 0.5


def test_reference_step_raises_duty():
    state = ivr.PidState(acc=0.5)
    v = 0.9
    before = ivr.controller_update(v, CTRL, dataclasses.replace(state))
    after = ivr.controller_update(v, dataclasses.replace(CTRL, v_ref=1.0), dataclasses.replace(state))
    assert after >= before


@given(st.floats(0.0, 1.2), st.floats(0.0, 1.0))
def test_duty_is_quantized_and_bounded(v, acc):
    d = ivr.controller_update(v, CTRL, ivr.PidState(acc=acc))
    assert 0.0 <= d < 1.0
    assert d * 256 == int(d * 256)


def test_integral_is_clamped():
    state = ivr.PidState()
    for _ in range(10_000):
        ivr.controller_update(0.0, CTRL, state)
    assert state.acc == 1.0
    assert state.duty == 255 / 256


# ---------------------------------------------------------------- randomizer

@pytest.mark.parametrize("seed", range(1, 16))
def test_lfsr_period_is_fifteen(seed):
    s = seed
    seen = []
    for _ in range(15):
        seen.append(s)
        s = ivr.lfsr_next(s)
        assert s != 0
    assert s == seed
    assert len(set(seen)) == 15
    assert ivr.lfsr_orbit(seed) == brute_lfsr_orbit(seed)


def test_lfsr_rejects_zero():
    with pytest.raises(ValueError):
        ivr.lfsr_next(0)


def test_randomizer_delay_schedule():
    unit = STAGE.period / 64
    off = ivr.RandomizerState(delay_unit=unit, enabled=False)
    assert all(ivr.randomizer_delay(off, k) == 0.0 for k in range(100))
    on = ivr.RandomizerState(delay_unit=unit, enabled=True)
    d = np.array([ivr.randomizer_delay(on, k) for k in range(180)])
    assert set(np.round(d / unit).astype(int)) == set(range(1, 16))
    assert np.all(d.reshape(-1, 4) == d.reshape(-1, 4)[:, :1])  # held for 4 cycles
    assert np.array_equal(d[:60], d[60:120])
    assert not np.array_equal(d[:30], d[30:60])


# ---------------------------------------------------------------- power stage

def test_ideal_open_loop_conversion_ratio():
    stage = ivr.PowerStageParams.ideal()
    D, load = 0.75, 0.1
    ripple = stage.v_in * D * (1 - D) / (stage.l * stage.f_sw)
    s = ivr.IvrState(i_l=load - ripple / 2, v_out=D * stage.v_in, duty=D)
    v = []
    for _ in range(100 * stage.substeps):
        s = ivr.step_power_stage(s, stage, load, stage.dt)
        v.append(s.v_out)
    assert np.mean(v) == pytest.approx(D * stage.v_in, rel=0.01)


def test_step_rejects_coarse_dt_and_nonfinite_state():
    s = ivr.IvrState(duty=0.5)
    with pytest.raises(ValueError):
        ivr.step_power_stage(s, STAGE, 0.0, STAGE.period / 50)
    with pytest.raises(ivr.SimulationError):
        ivr.step_power_stage(ivr.IvrState(i_l=np.inf), STAGE, 0.0, STAGE.dt)


@pytest.mark.parametrize("load", [0.01, 0.2])
def test_regulation_ripple_and_volt_second_balance(load):
    r = closed_loop(load)
    v, il, vsw, duty = r["v_out"][0], r["i_l"][0], r["v_sw"][0], r["duty"][0]
    # mean V_OUT within one ADC LSB of V_REF
    assert abs(v.mean() - CTRL.v_ref) <= CTRL.lsb
    # inductor ripple against the analytic formula
    d = duty.mean()
    expect = v.mean() * (1 - d) / (STAGE.l * STAGE.f_sw)
    assert np.ptp(il) == pytest.approx(expect, rel=0.05)
    # volt-second balance: mean inductor voltage ~ 0 against the on-phase volt-seconds
    v_l = vsw - v - il * (STAGE.r_l + STAGE.r_hs)  # r_hs == r_ls by default
    assert abs(v_l.mean()) <= 0.01 * np.mean(np.clip(v_l, 0, None))
    # charge balance: mean inductor current equals the load
    assert il.mean() == pytest.approx(load, rel=0.01)


def test_input_current_is_gated_inductor_current():
    r = closed_loop(0.05)
    iin, il = r["i_in"][0], r["i_l"][0]
    on = iin != 0
    assert np.array_equal(iin[on], il[on])
    assert 0.5 < on.mean() < 0.9


def test_ideal_stage_input_current_ratio():
    # a lossless LC cannot be damped by the slow loop, so hold the duty fixed
    stage = ivr.PowerStageParams.ideal()
    frozen = dataclasses.replace(CTRL, kp=0.0, ki=0.0, kd=0.0)
    r = closed_loop(0.2, stage=stage, ctrl=frozen, periods=600)
    d = r["duty"][0].mean()
    assert np.all(r["duty"][0] == 0.75)
    assert r["i_in"][0].mean() == pytest.approx(d * r["i_l"][0].mean(), rel=0.02)


def test_duty_changes_only_at_cycle_boundaries():
    load = np.full(4000, 0.01)
    load[1000:] = 0.1
    out = ivr.run_ivr(WaveformTrace(load, 5e9), "B-IVR")
    changes = np.flatnonzero(np.diff(out.duty))
    per = int(5e9 / STAGE.f_sw)
    assert len(changes) > 0
    assert np.all(np.diff(changes) % per == 0)


def test_zero_delay_randomizer_is_baseline():
    rs0 = ivr.RandomizerState(delay_unit=0.0)
    loads = np.full((2, 3000), 0.02)
    loads[:, 1500:] += 0.05
    ss_b = ivr.settle(STAGE, CTRL, rs0, 0.02, False)
    ss_r = ivr.settle(STAGE, CTRL, rs0, 0.02, True)
    a = ivr.simulate_batch(loads, False, STAGE, CTRL, rs0, ss_b, 5e9, 1, [0, 1])
    b = ivr.simulate_batch(loads, True, STAGE, CTRL, rs0, ss_r, 5e9, 1, [0, 1])
    for k in a:
        assert np.array_equal(a[k], b[k])


def test_randomizer_spreads_switching_spectrum():
    n = 240_000
    flat = {}
    for mode, en in (("B", False), ("R", True)):
        il = closed_loop(0.01, en, periods=n * STAGE.f_sw / 5e9, fs=5e9)["i_l"][0]
        spec = np.abs(np.fft.rfft(il - il.mean())) ** 2
        f = np.fft.rfftfreq(n, 1 / 5e9)
        band = spec[(f >= 100e6) & (f <= 150e6)] + 1e-300
        flat[mode] = np.exp(np.mean(np.log(band))) / np.mean(band)
    assert flat["R"] > flat["B"]


def test_settle_fails_when_reference_is_unreachable():
    weak = ivr.PowerStageParams(v_in=0.5)
    with pytest.raises(ivr.SimulationError):
        ivr.settle(weak, CTRL, ivr.RandomizerState(), 0.01, False)


def test_run_ivr_outputs():
    load = WaveformTrace(np.full(1000, 0.01), 5e9, start_time=1e-6)
    out = ivr.run_ivr(load, "R-IVR", seed=3, index=2)
    for w in (out.input_current, out.inductor_current, out.v_out, out.v_sw):
        assert len(w) == 1000 and w.start_time == 1e-6
    again = ivr.run_ivr(load, "R-IVR", seed=3, index=2)
    assert np.array_equal(out.inductor_current.samples, again.inductor_current.samples)
    with pytest.raises(ValueError):
        ivr.run_ivr(load, "standalone")
