import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ivrsca import aes, attacks
from ivrsca.traces import TraceSet

FS = 5e9
KEY = bytes.fromhex("0123456789abcdef123456789abcdef0")


# ---------------------------------------------------------------- naive oracles

def naive_welch(a, b):
    na, nb = len(a), len(b)
    ma, mb = math.fsum(a) / na, math.fsum(b) / nb
    va = math.fsum((x - ma) ** 2 for x in a) / (na - 1)
    vb = math.fsum((x - mb) ** 2 for x in b) / (nb - 1)
    return (ma - mb) / math.sqrt(va / na + vb / nb)


def naive_pearson(x, y):
    n = len(x)
    mx, my = math.fsum(x) / n, math.fsum(y) / n
    cov = math.fsum((a - mx) * (b - my) for a, b in zip(x, y))
    sx = math.sqrt(math.fsum((a - mx) ** 2 for a in x))
    sy = math.sqrt(math.fsum((b - my) ** 2 for b in y))
    return cov / (sx * sy)


def preprocess(col, order):
    n = len(col)
    mu = math.fsum(col) / n
    if order == 1:
        return list(col)
    if order == 2:
        return [(x - mu) ** 2 for x in col]
    sd = math.sqrt(math.fsum((x - mu) ** 2 for x in col) / n)
    return [((x - mu) / sd) ** 3 for x in col]


def synthetic_set(n, t=40, leak_at=10, scale=1.0, noise=0.0, seed=0, key=KEY, model="hw"):
    rng = np.random.default_rng(seed)
    pts = rng.integers(0, 256, (n, 16), dtype=np.uint8)
    cts = aes.round_states(key, pts)[:, 10]
    x = noise * rng.standard_normal((n, t))
    if model == "hw":
        h = aes.hw_first_sbox_table(pts, 0)[:, key[0]]
    else:
        h = aes.hd_last_round_table(cts, 0)[:, aes.last_round_key(key)[0]]
    x[:, leak_at] += scale * h
    return TraceSet(x, pts, cts, key, FS)


# ---------------------------------------------------------------- Welch / TVLA

def test_welch_hand_example():
    assert attacks.welch_t([1, 2, 3], [4, 5, 6]) == pytest.approx(-3 / math.sqrt(2 / 3))
    assert attacks.welch_t([1, 2, 3], [4, 5, 6]) == pytest.approx(-3.674, abs=1e-3)


def test_welch_identical_and_constant_groups():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((50, 8))
    assert np.all(attacks.welch_t(a, a) == 0)
    t, flags = attacks.welch_t(np.ones((5, 3)), np.ones((4, 3)), return_flags=True)
    assert np.all(t == 0) and np.all(flags)
    with pytest.raises(ValueError):
        attacks.welch_t([1.0], [2.0, 3.0])


def test_welch_matches_naive_oracle():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((1000, 20)) * rng.uniform(0.5, 3, 20) + rng.uniform(-1, 1, 20)
    labels = rng.random(1000) < 0.5
    x[labels, 3] += 0.3
    t = attacks.welch_t(x[labels], x[~labels])
    for j in range(20):
        ref = naive_welch(x[labels, j].tolist(), x[~labels, j].tolist())
        assert t[j] == pytest.approx(ref, rel=1e-9)


@pytest.mark.parametrize("order", [1, 2, 3])
def test_tvla_orders_match_naive_preprocessing(order):
    rng = np.random.default_rng(order)
    x = rng.gamma(2.0, size=(1000, 6))
    labels = rng.random(1000) < 0.4
    t = attacks.tvla_t(x, labels, order)
    for j in range(6):
        a = preprocess(x[labels, j].tolist(), order)
        b = preprocess(x[~labels, j].tolist(), order)
        assert t[j] == pytest.approx(naive_welch(a, b), rel=1e-9)


@given(st.integers(0, 2 ** 32 - 1))
def test_tvla_antisymmetric_under_class_swap(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((60, 5))
    labels = np.arange(60) % 2 == 0
    for o in (1, 2, 3):
        assert np.array_equal(attacks.tvla_t(x, labels, o), -attacks.tvla_t(x, ~labels, o))


def test_order1_t_grows_with_sqrt_n():
    delta, peaks = 0.3, []
    for n in (4000, 16000):
        rng = np.random.default_rng(n)
        x = rng.standard_normal((n, 30))
        labels = np.arange(n) % 2 == 0
        x[labels, 12] += delta
        t = attacks.tvla_t(x, labels, 1)
        assert int(np.argmax(np.abs(t))) == 12
        expect = delta / math.sqrt(2 / (n / 2))
        assert t[12] == pytest.approx(expect, abs=3.0)
        peaks.append(t[12])
    assert peaks[1] / peaks[0] == pytest.approx(2.0, rel=0.25)


def test_variance_leak_shows_in_second_order_only():
    rng = np.random.default_rng(3)
    n = 10_000
    x = rng.standard_normal((n, 10))
    labels = np.arange(n) % 2 == 0
    x[labels, 4] *= 1.3
    t1 = attacks.tvla_t(x, labels, 1)
    t2 = attacks.tvla_t(x, labels, 2)
    assert np.abs(t1).max() < 4.5
    assert abs(t2[4]) > 4.5


def test_null_tvla_mostly_below_threshold():
    passes = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((10_000, 20))
        labels = rng.permutation(np.arange(10_000) % 2 == 0)
        worst = max(np.abs(c).max() for c in attacks.tvla_t(x, labels, [1, 2, 3]))
        passes += worst < 4.5
    assert passes >= 99


def test_tvla_result_bands_and_warning():
    rng = np.random.default_rng(5)
    n, t = 400, 600
    x = rng.standard_normal((n, t))
    labels = np.zeros(n, bool)
    labels[:3] = True
    ts = TraceSet(x, np.zeros((n, 16)), np.zeros((n, 16)), None, FS, labels=labels)
    res = attacks.tvla(ts, orders=(1, 2), use_bank=False)
    assert res.warnings and "imbalance" in res.warnings[0]
    assert res.t.shape == (2, 1, t)
    labels = np.arange(n) % 2 == 0
    x[labels, 300] += 3.0
    ts = TraceSet(x, np.zeros((n, 16)), np.zeros((n, 16)), None, FS, labels=labels)
    res = attacks.tvla(ts, orders=(1,), use_bank=False)
    assert res.leaks and res.peak_location == (1, "raw", 300)
    assert np.all(np.isfinite(res.t))
    with pytest.raises(ValueError):
        attacks.tvla(TraceSet(x, np.zeros((n, 16)), np.zeros((n, 16)), None, FS))


# ---------------------------------------------------------------- Pearson / CEMA

def test_pearson_examples_and_oracle():
    assert attacks.pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
    rng = np.random.default_rng(2)
    h = rng.integers(0, 9, (1000, 4)).astype(float)
    x = rng.standard_normal((1000, 7)) + 0.1 * h[:, :1]
    rho, deg = attacks.corr_matrix(h, x)
    assert not deg.any()
    for k in range(4):
        for j in range(7):
            ref = naive_pearson(h[:, k].tolist(), x[:, j].tolist())
            assert rho[k, j] == pytest.approx(ref, rel=1e-9, abs=1e-12)


@given(st.floats(0.01, 100), st.floats(-100, 100), st.floats(0.01, 100), st.floats(-100, 100))
def test_pearson_affine_invariance(a, b, c, d):
    rng = np.random.default_rng(9)
    x, y = rng.standard_normal((2, 200))
    assert abs(attacks.pearson(a * x + b, c * y + d) - attacks.pearson(x, y)) < 1e-12


def test_streaming_accumulator_matches_two_pass():
    rng = np.random.default_rng(4)
    h = rng.integers(0, 9, (3000, 16)).astype(float)
    x = rng.standard_normal((3000, 30)) * 1e-6 + 5.0
    acc = attacks.CorrAccumulator()
    for s in range(0, 3000, 700):
        acc.update(h[s:s + 700], x[s:s + 700])
    assert np.allclose(acc.corr(), attacks.corr_matrix(h, x)[0], atol=1e-10)


def test_degenerate_hypothesis_is_flagged():
    h = np.column_stack([np.ones(10), np.arange(10.0)])
    rho, deg = attacks.corr_matrix(h, np.arange(10.0)[:, None])
    assert deg.tolist() == [True, False]
    assert rho[0, 0] == 0 and rho[1, 0] == pytest.approx(1.0)


@pytest.mark.parametrize("model", ["hw", "hd"])
def test_cema_noiseless_model_exact(model):
    ts = synthetic_set(500, model=model)
    res = attacks.cema(ts, model, 0, use_bank=False)
    true = res.true_key
    assert res.corr[true, 10] == pytest.approx(1.0)
    assert res.best_guess == true
    assert res.mtd == res.checkpoints[0] == 100
    assert sorted(attacks.ranking(res.scores[-1]).tolist()) == list(range(256))
    assert np.all(np.abs(res.corr) <= 1 + 1e-12)


def test_cema_ranking_invariant_to_trace_scaling():
    ts = synthetic_set(800, noise=2.0, seed=3)
    s = np.random.default_rng(0).uniform(0.5, 2.0, 800)[:, None]
    a = attacks.cema(ts, "hw", 0, use_bank=False)
    b = attacks.cema(ts.with_traces(ts.traces * s), "hw", 0, use_bank=False)
    assert a.ranks == b.ranks


def test_rank_ties_prefer_lower_key():
    scores = np.zeros(256)
    assert attacks.rank_of(scores, 0) == 1
    assert attacks.rank_of(scores, 7) == 8
    assert attacks.ranking(scores)[:3].tolist() == [0, 1, 2]


def test_mtd_rules():
    assert attacks.mtd_from_ranks([100, 200, 500], [1, 1, 1]) == 100
    assert attacks.mtd_from_ranks([100, 200, 500], [1, 3, 1]) == 500
    assert attacks.mtd_from_ranks([100, 200, 500], [1, 1, 2]) is None
    with pytest.raises(ValueError):
        attacks.mtd_from_ranks([200, 100], [1, 1])
    assert attacks.format_mtd(None, 20000) == "not-reached@20000"
    assert attacks.log_checkpoints(20000) == [100, 200, 500, 1000, 2000, 5000, 10000, 20000]
    assert attacks.log_checkpoints(3000) == [100, 200, 500, 1000, 2000, 3000]
    ts = synthetic_set(200)
    ts.key = None
    with pytest.raises(ValueError):
        attacks.mtd(ts, "hw", 0, use_bank=False)


def test_pure_noise_never_discloses():
    reached = 0
    for seed in range(100):
        ts = synthetic_set(10_000, t=8, leak_at=3, scale=0.0, noise=1.0, seed=seed)
        reached += attacks.mtd(ts, "hw", 0, use_bank=False, chunk=10_000) is not None
    assert reached <= 5


def test_mtd_monotone_in_noise():
    mtds = []
    for noise in (4.0, 8.0, 16.0):
        ts = synthetic_set(20_000, t=8, leak_at=3, noise=noise, seed=11)
        m = attacks.mtd(ts, "hw", 0, use_bank=False, chunk=5000)
        mtds.append(np.inf if m is None else m)
    assert mtds == sorted(mtds)
    assert mtds[0] < mtds[-1]


def test_cema_with_filter_bank_finds_band_limited_leak():
    rng = np.random.default_rng(6)
    n, t = 1500, 1000
    pts = rng.integers(0, 256, (n, 16), dtype=np.uint8)
    h = aes.hw_first_sbox_table(pts, 0)[:, KEY[0]].astype(float)
    burst = np.sin(2 * np.pi * 100e6 * np.arange(100) / FS) * np.hanning(100)
    x = rng.standard_normal((n, t)) * 2
    x[:, 450:550] += h[:, None] * burst[None, :]
    ts = TraceSet(x, pts, np.zeros((n, 16)), KEY, FS)
    res = attacks.cema(ts, "hw", 0, region=(300, 700))
    assert res.best_guess == KEY[0]
    assert res.bands[int(np.argmax(res.band_peaks[:, KEY[0]]))] in ("90MHz", "100MHz", "110MHz")


# ---------------------------------------------------------------- template CPA

def test_template_self_subtraction_is_zero():
    rng = np.random.default_rng(8)
    row = rng.standard_normal(4000)
    ts = TraceSet(np.tile(row, (20, 1)), np.zeros((20, 16)), np.zeros((20, 16)), KEY, FS)
    sub = attacks.template_subtract(ts, region=(1000, 2000))
    assert sub.meta["excluded"] == 0
    assert np.abs(sub.traces).max() < 1e-12


def carrier_set(n=4000, period=300, t=4000, seed=5):
    rng = np.random.default_rng(seed)
    pts = rng.integers(0, 256, (n, 16), dtype=np.uint8)
    pattern = np.convolve(rng.standard_normal(period * 3), np.ones(5) / 5, "same")[period:2 * period]
    off = rng.integers(0, period, n)
    x = pattern[(off[:, None] + np.arange(t)[None, :]) % period]
    h = aes.hw_first_sbox_table(pts, 0)[:, KEY[0]]
    x[:, 800:820] += 0.02 * (h[:, None] - 4) * np.hanning(20)[None, :]
    x += 0.02 * rng.standard_normal(x.shape)
    return TraceSet(x, pts, np.zeros((n, 16)), KEY, FS)


def test_template_subtraction_improves_mtd_on_carrier_synthetic():
    ts = carrier_set()
    plain = attacks.cema(ts, "hw", 0, region=(400, 1400), use_bank=False)
    tpl = attacks.template_cpa(ts, model="hw", region=(400, 1400), use_bank=False)
    m_plain = np.inf if plain.mtd is None else plain.mtd
    assert tpl.mtd is not None and tpl.mtd < m_plain
    assert tpl.meta["excluded"] == 0


def test_template_argument_checks():
    ts = carrier_set(n=20, t=1000)
    with pytest.raises(ValueError):
        attacks.template_subtract(ts, template_len=50e-9)
    with pytest.raises(ValueError):
        attacks.template_subtract(ts, template_len=0.6e-6, region=(0, 1000))
    with pytest.raises(ValueError):
        attacks.template_subtract(ts, region=(100, 200), match_floor=1.01)


def test_sliding_ncc_oracle():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((3, 200))
    tpl = rng.standard_normal(50)
    offs = np.arange(0, 151, 7)
    got = attacks.sliding_ncc(x, tpl, offs)
    for i in range(3):
        for j, m in enumerate(offs):
            seg = x[i, m:m + 50]
            assert got[i, j] == pytest.approx(naive_pearson(seg.tolist(), tpl.tolist()), rel=1e-9)
