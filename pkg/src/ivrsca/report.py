"""Delimited data files for every figure-style result (rendering is left to other tools)."""
from __future__ import annotations

import csv
import json
import os
from pathlib import Path

import numpy as np

from . import attacks
from .dsp import spectrogram


def write_csv(path, header, rows) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for r in rows:
            w.writerow(r)
    return str(path)


def read_csv(path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def tvla_table(res: attacks.TvlaResult, path) -> str:
    """One row per (band, window, order) with the peak |t| inside the window."""
    rows = ((band, wi, a, b, o, f"{t:.6g}", int(t > res.threshold))
            for band, wi, a, b, o, t in res.rows())
    return write_csv(path, ["band", "window", "start_sample", "stop_sample", "order", "max_abs_t",
                            "leak"], rows)


def tvla_vs_band(res: attacks.TvlaResult, path) -> str:
    """Peak |t| per band for each order (the "t versus band" plot)."""
    peaks = np.abs(res.t).max(axis=2)        # (orders, bands)
    header = ["band"] + [f"order{o}" for o in res.orders]
    rows = ([band] + [f"{peaks[oi, bi]:.6g}" for oi in range(len(res.orders))]
            for bi, band in enumerate(res.bands))
    return write_csv(path, header, rows)


def correlation_vs_traces(res: attacks.CemaResult, path) -> str:
    """Per checkpoint: rank of the true key, its score and the best wrong score."""
    rows = []
    for i, c in enumerate(res.checkpoints):
        sc = res.scores[i]
        row = [c]
        if res.true_key is not None:
            wrong = np.delete(sc, res.true_key)
            row += [res.ranks[i], f"{sc[res.true_key]:.6g}", f"{wrong.max():.6g}"]
        else:
            row += ["", "", ""]
        best = int(attacks.ranking(sc)[0])
        row += [best, f"{sc[best]:.6g}"]
        rows.append(row)
    return write_csv(path, ["traces", "true_key_rank", "true_key_corr", "best_wrong_corr",
                            "best_guess", "best_corr"], rows)


def mtd_table(entries, path) -> str:
    """``entries``: iterables of (scenario, aes, mode, probe, budget, mtd or None)."""
    rows = ([s, a, m, p, b, attacks.format_mtd(v, b)] for s, a, m, p, b, v in entries)
    return write_csv(path, ["scenario", "aes", "mode", "probe", "budget", "mtd"], rows)


def spectrogram_table(x, sample_rate: float, path, fft_len: int = 1024, hop: int = 256,
                      f_max: float | None = None) -> str:
    freqs, times, mag = spectrogram(x, fft_len, hop, sample_rate)
    keep = freqs <= (f_max if f_max is not None else freqs[-1])
    rows = ((f"{t:.9g}", f"{f:.9g}", f"{mag[fi, ti]:.6g}")
            for ti, t in enumerate(times) for fi, f in enumerate(freqs) if keep[fi])
    return write_csv(path, ["time_s", "freq_hz", "magnitude"], rows)


def spectrum_table(x, sample_rate: float, path) -> str:
    x = np.asarray(x, dtype=float)
    mag = np.abs(np.fft.rfft(x - x.mean())) / x.size
    freqs = np.fft.rfftfreq(x.size, 1 / sample_rate)
    return write_csv(path, ["freq_hz", "magnitude"],
                     ((f"{f:.9g}", f"{m:.6g}") for f, m in zip(freqs, mag)))


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    return v


def write_summary(path, summary: dict) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as f:
        json.dump(_jsonable(summary), f, indent=2, sort_keys=True)
    return str(path)


def cema_summary(res: attacks.CemaResult) -> dict:
    return {
        "model": res.model, "byte": res.byte_idx, "budget": res.budget,
        "mtd": attacks.format_mtd(res.mtd if res.ranks is not None else None, res.budget),
        "best_guess": res.best_guess, "true_key": res.true_key,
        "final_rank": None if res.ranks is None else res.ranks[-1],
        "excluded": res.meta.get("excluded"),
    }


def tvla_summary(res: attacks.TvlaResult) -> dict:
    order, band, sample = res.peak_location
    return {"n_traces": res.n_traces, "threshold": res.threshold, "leaks": res.leaks,
            "peak": res.peak, "peak_order": order, "peak_band": band, "peak_sample": sample,
            "peak_by_order": res.peak_by_order(), "warnings": res.warnings}
