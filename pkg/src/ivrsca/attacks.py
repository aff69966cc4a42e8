"""Statistical attacks: Welch t-test / TVLA, Pearson CEMA, MTD and template CPA."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import aes
from .dsp import BankProcessor, FilterBankSpec, WindowSpec, windows
from .traces import TraceSet

log = logging.getLogger(__name__)

TVLA_THRESHOLD = 4.5
MODELS = ("hd", "hw")


# --------------------------------------------------------------------------- Welch / TVLA

def welch_t(a, b, return_flags: bool = False):
    """Welch's t per column.  Columns where both groups have zero variance get
    t = 0 and are flagged."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim == 1:
        a, b = a[:, None], b[:, None]
        squeeze = True
    else:
        squeeze = False
    na, nb = a.shape[0], b.shape[0]
    if na < 2 or nb < 2:
        raise ValueError("each group needs at least two traces")
    ma, mb = a.mean(axis=0), b.mean(axis=0)
    va, vb = a.var(axis=0, ddof=1), b.var(axis=0, ddof=1)
    t, flags = _t_from_moments(ma, va, na, mb, vb, nb)
    if squeeze:
        t, flags = t[0], flags[0]
    return (t, flags) if return_flags else t


def _t_from_moments(ma, va, na, mb, vb, nb):
    den = np.sqrt(va / na + vb / nb)
    flags = den <= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(flags, 0.0, (ma - mb) / np.where(flags, 1.0, den))
    return t, flags


def _class_stats(x: np.ndarray):
    """Count, mean and central moments 2, 3, 4, 6 (population) per column."""
    n = x.shape[0]
    mu = x.mean(axis=0)
    d = x - mu
    d2 = d * d
    d3 = d2 * d
    m2 = d2.mean(axis=0)
    m3 = d3.mean(axis=0)
    m4 = (d2 * d2).mean(axis=0)
    m6 = (d3 * d3).mean(axis=0)
    return n, mu, m2, m3, m4, m6


def _order_moments(stats, order: int):
    """Mean and unbiased variance of the order-``d`` preprocessed samples:
    raw (1), centred square (2), standardised cube (3)."""
    n, mu, m2, m3, m4, m6 = stats
    k = n / (n - 1)
    if order == 1:
        return mu, k * m2
    if order == 2:
        return m2, k * (m4 - m2 * m2)
    if order == 3:
        ok = m2 > 0
        s3 = np.where(ok, m2, 1.0) ** 1.5
        mean = np.where(ok, m3 / s3, 0.0)
        var = np.where(ok, k * (m6 / (s3 * s3) - mean * mean), 0.0)
        return mean, var
    raise ValueError("TVLA order must be 1, 2 or 3")


def tvla_t(x: np.ndarray, labels: np.ndarray, order=1):
    """t-curve of fixed (True) versus random (False) traces at order 1, 2 or 3.
    ``order`` may be a sequence, in which case a list of curves is returned."""
    labels = np.asarray(labels, dtype=bool)
    fa, fb = x[labels], x[~labels]
    if fa.shape[0] < 2 or fb.shape[0] < 2:
        raise ValueError("TVLA needs at least two traces per class")
    sa, sb = _class_stats(fa), _class_stats(fb)
    orders = [order] if np.isscalar(order) else list(order)
    out = []
    for o in orders:
        ma, va = _order_moments(sa, o)
        mb, vb = _order_moments(sb, o)
        out.append(_t_from_moments(ma, np.clip(va, 0, None), sa[0], mb, np.clip(vb, 0, None), sb[0])[0])
    return out[0] if np.isscalar(order) else out


@dataclass
class TvlaResult:
    t: np.ndarray                 # (orders, bands, samples)
    orders: tuple
    bands: list
    window_ranges: list
    threshold: float = TVLA_THRESHOLD
    n_traces: int = 0
    warnings: list = field(default_factory=list)

    @property
    def peak(self) -> float:
        return float(np.max(np.abs(self.t))) if self.t.size else 0.0

    @property
    def peak_location(self) -> tuple:
        """(order, band label, sample) of the largest |t|."""
        o, b, s = np.unravel_index(int(np.argmax(np.abs(self.t))), self.t.shape)
        return self.orders[o], self.bands[b], int(s)

    @property
    def leaks(self) -> bool:
        return self.peak > self.threshold

    def peak_by_order(self) -> dict:
        return {o: float(np.max(np.abs(self.t[i]))) for i, o in enumerate(self.orders)}

    def rows(self):
        """One row per (band, window, order): max |t| inside the window."""
        for bi, band in enumerate(self.bands):
            for wi, (a, b) in enumerate(self.window_ranges):
                for oi, o in enumerate(self.orders):
                    yield band, wi, a, b, o, float(np.max(np.abs(self.t[oi, bi, a:b])))


def tvla(ts: TraceSet, orders=(1, 2, 3), bank: FilterBankSpec | None = None,
         window: WindowSpec | None = None, region: tuple | None = None,
         use_bank: bool = True, include_raw: bool = False, align: bool = True,
         threshold: float = TVLA_THRESHOLD) -> TvlaResult:
    """Fixed-versus-random t-test on every band of the filter bank.

    ``region`` restricts the statistics to ``[a, b)`` after filtering and
    alignment over the whole trace.
    """
    if ts.labels is None:
        raise ValueError("TVLA needs fixed/random class labels")
    n_fixed = int(ts.labels.sum())
    n_rand = ts.n_traces - n_fixed
    warn = []
    if min(n_fixed, n_rand) < 2:
        raise ValueError("TVLA needs at least two traces per class")
    if max(n_fixed, n_rand) > 100 * min(n_fixed, n_rand):
        msg = f"class imbalance {n_fixed}:{n_rand} exceeds 100:1"
        log.warning(msg)
        warn.append(msg)
    a, b = region or (0, ts.n_samples)
    if use_bank:
        proc = BankProcessor(ts.n_samples, ts.sample_rate, bank, align=align, include_raw=include_raw)
        labels_b = proc.labels()
        curves = np.empty((len(orders), len(proc), b - a))
        for bi, y in proc.process(ts.traces, region=(a, b)):
            curves[:, bi] = tvla_t(y, ts.labels, list(orders))
    else:
        labels_b = ["raw"]
        curves = np.empty((len(orders), 1, b - a))
        curves[:, 0] = tvla_t(ts.traces[:, a:b], ts.labels, list(orders))
    wr = windows(b - a, window, ts.sample_rate) if window is not None else [(0, b - a)]
    return TvlaResult(curves, tuple(orders), labels_b, wr, threshold, ts.n_traces, warn)


# --------------------------------------------------------------------------- Pearson

def pearson(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xc, yc = x - x.mean(), y - y.mean()
    den = np.sqrt((xc @ xc) * (yc @ yc))
    return float(xc @ yc / den) if den > 0 else 0.0


def corr_matrix(h: np.ndarray, x: np.ndarray):
    """Two-pass Pearson correlation of every hypothesis column of ``h`` (N, K)
    with every sample column of ``x`` (N, T).  Returns ``(rho (K, T), degenerate (K,))``;
    constant hypotheses give 0 and are flagged."""
    h = np.asarray(h, dtype=float)
    x = np.asarray(x, dtype=float)
    hc = h - h.mean(axis=0)
    xc = x - x.mean(axis=0)
    num = hc.T @ xc
    hs = np.sqrt((hc * hc).sum(axis=0))
    xs = np.sqrt((xc * xc).sum(axis=0))
    den = hs[:, None] * xs[None, :]
    deg = hs <= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    return rho, deg


class CorrAccumulator:
    """Streaming Pearson statistics with shifted sums (shift = first-chunk means)."""

    def __init__(self):
        self.n = 0
        self.h0 = self.x0 = None

    def update(self, h: np.ndarray, x: np.ndarray) -> None:
        h = np.asarray(h, dtype=float)
        x = np.asarray(x, dtype=float)
        if self.n == 0:
            self.h0 = h.mean(axis=0)
            self.x0 = x.mean(axis=0)
            k, t = h.shape[1], x.shape[1]
            self.sh = np.zeros(k)
            self.shh = np.zeros(k)
            self.sx = np.zeros(t)
            self.sxx = np.zeros(t)
            self.shx = np.zeros((k, t))
        hd = h - self.h0
        xd = x - self.x0
        self.n += h.shape[0]
        self.sh += hd.sum(axis=0)
        self.shh += (hd * hd).sum(axis=0)
        self.sx += xd.sum(axis=0)
        self.sxx += (xd * xd).sum(axis=0)
        self.shx += hd.T @ xd

    def corr(self) -> np.ndarray:
        n = self.n
        cov = n * self.shx - np.outer(self.sh, self.sx)
        vh = n * self.shh - self.sh ** 2
        vx = n * self.sxx - self.sx ** 2
        den = np.sqrt(np.clip(vh, 0, None))[:, None] * np.sqrt(np.clip(vx, 0, None))[None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(den > 0, cov / np.where(den > 0, den, 1.0), 0.0)


# --------------------------------------------------------------------------- CEMA

def hypotheses(ts: TraceSet, model: str, byte_idx: int) -> np.ndarray:
    if model == "hd":
        return aes.hd_last_round_table(ts.ciphertexts, byte_idx)
    if model == "hw":
        return aes.hw_first_sbox_table(ts.plaintexts, byte_idx)
    raise ValueError(f"unknown power model {model!r}; expected one of {MODELS}")


def true_key_byte(key: bytes | None, model: str, byte_idx: int) -> int:
    if key is None:
        raise ValueError("the true key is needed for rank/MTD evaluation")
    if model == "hd":
        return int(aes.expand_key(key)[10][byte_idx])
    return int(key[byte_idx])


def log_checkpoints(budget: int, first: int = 100) -> list[int]:
    """1-2-5 grid from ``first`` up to and including ``budget``."""
    out = []
    dec = 1
    while True:
        for m in (1, 2, 5):
            c = m * dec
            if c >= first and c < budget:
                out.append(c)
        if dec * 10 > budget:
            break
        dec *= 10
    if not out or out[-1] != budget:
        out.append(budget)
    return out


def rank_of(scores: np.ndarray, key: int) -> int:
    """1-based rank of ``key`` by descending score; ties go to the lower key."""
    s = scores[key]
    better = np.sum(scores > s) + np.sum((scores == s) & (np.arange(scores.size) < key))
    return int(better) + 1


def ranking(scores: np.ndarray) -> np.ndarray:
    """Key guesses ordered best first (ties broken by lower key value)."""
    return np.lexsort((np.arange(scores.size), -scores))


@dataclass
class CemaResult:
    model: str
    byte_idx: int
    checkpoints: list
    scores: np.ndarray            # (checkpoints, 256) peak |rho| over samples and bands
    corr: np.ndarray              # (256, samples) in the winning band at the last checkpoint
    band_peaks: np.ndarray        # (bands, 256) at the last checkpoint
    bands: list
    true_key: int | None = None
    ranks: list | None = None
    degenerate: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def best_guess(self) -> int:
        return int(ranking(self.scores[-1])[0])

    @property
    def mtd(self) -> int | None:
        if self.ranks is None:
            raise ValueError("MTD needs the true key")
        return mtd_from_ranks(self.checkpoints, self.ranks)

    @property
    def budget(self) -> int:
        return int(self.checkpoints[-1])


def mtd_from_ranks(checkpoints, ranks) -> int | None:
    """First checkpoint from which the true key stays rank 1; ``None`` if never."""
    if list(checkpoints) != sorted(checkpoints):
        raise ValueError("checkpoints must increase")
    mtd = None
    for c, r in zip(checkpoints, ranks):
        if r == 1:
            if mtd is None:
                mtd = c
        else:
            mtd = None
    return mtd


def format_mtd(m: int | None, budget: int) -> str:
    return f"not-reached@{budget}" if m is None else str(m)


def cema(ts: TraceSet, model: str, byte_idx: int, bank: FilterBankSpec | None = None,
         checkpoints=None, region: tuple | None = None, use_bank: bool = True,
         include_raw: bool = False, align: bool = True, chunk: int = 1000,
         window: WindowSpec | None = None) -> CemaResult:
    """Correlation EM analysis of one key byte.

    Traces are streamed in order; at every checkpoint the per-guess score is
    the largest |rho| over all samples of ``region`` and all bands.
    """
    hyp = hypotheses(ts, model, byte_idx)
    n = ts.n_traces
    cps = list(checkpoints) if checkpoints is not None else log_checkpoints(n)
    cps = [c for c in cps if c <= n]
    if not cps:
        raise ValueError("no checkpoint within the trace count")
    a, b = region or (0, ts.n_samples)
    if use_bank:
        proc = BankProcessor(ts.n_samples, ts.sample_rate, bank, align=align, include_raw=include_raw)
        labels = proc.labels()
    else:
        proc, labels = None, ["raw"]
    accs = [CorrAccumulator() for _ in labels]
    scores = []
    band_peaks = None
    best_corr = None
    pos = 0
    bounds = []
    for c in cps:
        while pos < c:
            nxt = min(c, pos + chunk)
            bounds.append((pos, nxt))
            pos = nxt
        bounds.append(None)  # checkpoint marker
    for item in bounds:
        if item is None:
            corrs = [acc.corr() for acc in accs]
            band_peaks = np.stack([np.abs(r).max(axis=1) for r in corrs])
            scores.append(band_peaks.max(axis=0))
            best_band = int(np.argmax(band_peaks.max(axis=1)))
            best_corr = corrs[best_band]
            continue
        s, e = item
        hs = hyp[s:e]
        if proc is None:
            accs[0].update(hs, ts.traces[s:e, a:b])
        else:
            for bi, y in proc.process(ts.traces[s:e], region=(a, b)):
                accs[bi].update(hs, y)
    scores = np.array(scores)
    deg = np.all(hyp == hyp[:1], axis=0)
    key = None
    ranks = None
    if ts.key is not None:
        key = true_key_byte(ts.key, model, byte_idx)
        ranks = [rank_of(sc, key) for sc in scores]
    meta = {}
    if window is not None:
        meta["windows"] = windows(b - a, window, ts.sample_rate)
    return CemaResult(model, byte_idx, cps, scores, best_corr, band_peaks, labels, key, ranks,
                      deg, meta)


def mtd(ts: TraceSet, model: str, byte_idx: int, checkpoints=None, **kw) -> int | None:
    if ts.key is None:
        raise ValueError("MTD is a designer-side metric and needs the true key")
    return cema(ts, model, byte_idx, checkpoints=checkpoints, **kw).mtd


# --------------------------------------------------------------------------- template CPA

def sliding_ncc(x: np.ndarray, tpl: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Normalised cross-correlation of ``tpl`` with ``x[m:m+L]`` for each row of
    ``x`` and each offset ``m``.  Returns ``(N, len(offsets))``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    L = tpl.size
    t = tpl - tpl.mean()
    tn = np.sqrt(t @ t)
    n = x.shape[1]
    nfft = int(2 ** np.ceil(np.log2(n + L)))
    xc = np.fft.irfft(np.fft.rfft(x, nfft, axis=1) * np.conj(np.fft.rfft(t, nfft))[None, :],
                      nfft, axis=1)
    num = xc[:, offsets]
    c1 = np.concatenate([np.zeros((x.shape[0], 1)), np.cumsum(x, axis=1)], axis=1)
    c2 = np.concatenate([np.zeros((x.shape[0], 1)), np.cumsum(x * x, axis=1)], axis=1)
    s1 = c1[:, offsets + L] - c1[:, offsets]
    s2 = c2[:, offsets + L] - c2[:, offsets]
    var = np.clip(s2 - s1 * s1 / L, 0, None)
    den = np.sqrt(var) * tn
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)


def template_subtract(ts: TraceSet, template_len: float = 0.6e-6, region: tuple | None = None,
                      window_width: float = 80e-9, match_floor: float = 0.5,
                      seed: int = 0, chunk: int = 1000) -> TraceSet:
    """Steps 1-4 of template CPA; returns the differential traces over ``region``
    for the traces whose best match reaches ``match_floor``.

    1. cut a ``template_len`` segment covering ``region`` from a random trace;
    2. find, per trace, the best normalised-cross-correlation match among the
       offsets whose segment still covers ``region``;
    3. average all accepted matched segments into the mean template;
    4. subtract the aligned mean template over ``region``.
    """
    L = int(round(template_len * ts.sample_rate))
    if L <= int(round(window_width * ts.sample_rate)):
        raise ValueError("template must be longer than the analysis window")
    a, b = region or (0, ts.n_samples)
    if b - a > L:
        raise ValueError("the CEMA region must fit inside the template")
    lo, hi = max(0, b - L), min(a, ts.n_samples - L)
    if hi < lo:
        raise ValueError(f"traces too short for a template covering the region: need at least "
                         f"{max(L, b)} samples, have {ts.n_samples}")
    offsets = np.arange(lo, hi + 1)
    rng = np.random.default_rng(seed)
    src = int(rng.integers(ts.n_traces))
    start = int(rng.integers(lo, hi + 1))
    tpl = np.asarray(ts.traces[src, start:start + L], dtype=float)

    match = np.empty(ts.n_traces, dtype=np.int64)
    score = np.empty(ts.n_traces)
    for s in range(0, ts.n_traces, chunk):
        ncc = sliding_ncc(ts.traces[s:s + chunk], tpl, offsets)
        k = np.argmax(ncc, axis=1)
        match[s:s + chunk] = offsets[k]
        score[s:s + chunk] = ncc[np.arange(k.size), k]
    keep = score >= match_floor
    if keep.sum() < 2:
        raise ValueError("fewer than two traces matched the template above the floor")
    idx = np.flatnonzero(keep)
    avg = np.zeros(L)
    for i in idx:
        avg += ts.traces[i, match[i]:match[i] + L]
    avg /= idx.size

    rows = (a - match[idx])[:, None] + np.arange(b - a)[None, :]
    diff = np.asarray(ts.traces[idx, a:b], dtype=float) - avg[rows]
    sub = ts.subset(idx).with_traces(diff, excluded=int((~keep).sum()), template_source=src,
                                     template_start=start, match_offsets=match,
                                     match_scores=score, template=avg)
    return sub


def template_cpa(ts: TraceSet, template_len: float = 0.6e-6, window: WindowSpec | None = None,
                 model: str = "hd", byte_idx: int = 0, region: tuple | None = None,
                 bank: FilterBankSpec | None = None, match_floor: float = 0.5, seed: int = 0,
                 checkpoints=None, use_bank: bool = True, align: bool = True,
                 chunk: int = 1000) -> CemaResult:
    """Template-subtraction CPA: :func:`template_subtract` followed by CEMA on
    the differential traces (rejected traces are dropped and counted)."""
    window = window or WindowSpec(80e-9, 40e-9)
    sub = template_subtract(ts, template_len, region, window.width, match_floor, seed, chunk)
    cps = None
    if checkpoints is not None:
        cps = [c for c in checkpoints if c <= sub.n_traces] or [sub.n_traces]
    res = cema(sub, model, byte_idx, bank=bank, checkpoints=cps, use_bank=use_bank,
               align=align, chunk=chunk, window=window)
    res.meta.update({k: sub.meta[k] for k in ("excluded", "template_source", "template_start",
                                               "match_offsets", "match_scores")})
    return res
