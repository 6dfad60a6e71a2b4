"""Helpers for reading dB gaps and crossings off measured capacity curves.

Measured rates are first smoothed with monotone (isotonic) regression, then
inverted by linear interpolation; crossings are located on the smoothed
difference. All routines are deterministic.
"""

from __future__ import annotations

import numpy as np


def isotonic_increasing(values: np.ndarray) -> np.ndarray:
    """Pool-adjacent-violators fit: the closest nondecreasing sequence (L2)."""
    vals = np.asarray(values, dtype=float)
    level = list(vals)
    weight = [1.0] * len(level)
    i = 0
    while i < len(level) - 1:
        if level[i] > level[i + 1] + 1e-15:
            merged = (level[i] * weight[i] + level[i + 1] * weight[i + 1]) / (weight[i] + weight[i + 1])
            level[i : i + 2] = [merged]
            weight[i : i + 2] = [weight[i] + weight[i + 1]]
            i = max(i - 1, 0)
        else:
            i += 1
    out = np.empty_like(vals)
    pos = 0
    for lv, w in zip(level, weight):
        out[pos : pos + int(w)] = lv
        pos += int(w)
    return out


def snr_at_rate(snrs_db: np.ndarray, rates: np.ndarray, target: float) -> float:
    """SNR (dB) at which the smoothed curve reaches the target rate."""
    snrs_db = np.asarray(snrs_db, dtype=float)
    smooth = isotonic_increasing(rates)
    if target < smooth[0] or target > smooth[-1]:
        raise ValueError(
            f"target rate {target} outside the measured range [{smooth[0]:.3f}, {smooth[-1]:.3f}]"
        )
    # tiny tilt makes plateaus invertible without moving real crossings
    tilted = smooth + 1e-9 * np.arange(len(smooth))
    return float(np.interp(target, tilted, snrs_db))


def rate_at_snr(snrs_db: np.ndarray, rates: np.ndarray, snr_db: float) -> float:
    """Smoothed rate at an SNR inside the measured grid."""
    smooth = isotonic_increasing(rates)
    return float(np.interp(snr_db, np.asarray(snrs_db, dtype=float), smooth))


def crossing_snr(snrs_db, rates_a, rates_b) -> float:
    """SNR where smoothed curve A stops exceeding curve B (first sign change).

    Raises when the difference never changes sign on the grid.
    """
    snrs_db = np.asarray(snrs_db, dtype=float)
    diff = isotonic_increasing(rates_a) - isotonic_increasing(rates_b)
    sign = np.sign(diff)
    for i in range(len(diff) - 1):
        if sign[i] != 0 and sign[i + 1] != 0 and sign[i] != sign[i + 1]:
            frac = diff[i] / (diff[i] - diff[i + 1])
            return float(snrs_db[i] + frac * (snrs_db[i + 1] - snrs_db[i]))
        if sign[i + 1] == 0:
            return float(snrs_db[i + 1])
    raise ValueError("curves do not cross on the measured grid")


def snr_at_outage(snrs_db, pouts, target: float, zero_floor: float | None = None) -> float:
    """SNR where the outage curve (decreasing in SNR) crosses the target level.

    Measured-zero points sit below the run's resolution; zero_floor (usually
    half an event, 1/(2*n_blocks)) substitutes them so the log-domain
    interpolation stays meaningful.
    """
    snrs_db = np.asarray(snrs_db, dtype=float)
    p = np.asarray(pouts, dtype=float)
    dec = -isotonic_increasing(-p)  # enforce nonincreasing
    floor = zero_floor if zero_floor is not None else 1e-12
    logs = np.log10(np.maximum(dec, floor))
    lt = np.log10(target)
    if lt > logs[0] or lt < logs[-1]:
        raise ValueError(f"outage target {target} outside measured range")
    tilted = logs - 1e-9 * np.arange(len(logs))
    return float(np.interp(-lt, -tilted, snrs_db))


def loglog_outage_slope(snrs_db, pouts, p_low: float = 1e-2, p_high: float = 0.5):
    """Slope of log10(P_out) per decade of SNR over the given outage window.

    Returns (slope, standard error); the error reflects the scatter of the
    measured points around the fitted line.
    """
    snrs_db = np.asarray(snrs_db, dtype=float)
    p = np.asarray(pouts, dtype=float)
    dec = -isotonic_increasing(-p)
    sel = (dec >= p_low) & (dec <= p_high)
    if sel.sum() < 2:
        raise ValueError("not enough points in the outage window for a slope fit")
    x = snrs_db[sel] / 10.0  # decades of SNR
    yv = np.log10(dec[sel])
    coef, residuals, *_ = np.polyfit(x, yv, 1, full=True)
    n = len(x)
    if n > 2 and residuals.size:
        var = residuals[0] / (n - 2) / np.sum((x - x.mean()) ** 2)
        stderr = float(np.sqrt(var))
    else:
        stderr = 0.0
    return float(coef[0]), stderr
