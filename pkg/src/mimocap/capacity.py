"""Mutual-information machinery for the equivalent per-bit modulation channel.

Demodulator outputs are mapped to the probability domain p = 1/(1+exp(-L))
and collected in per-bit-position histograms with uniform bins, conditioned
on the true code bit; bit positions are never pooled. The rate estimate is

    C_hat = R0 - sum_j sum_b sum_k (1/2) h_k^b log2( sum_b' h_k^b' / h_k^b )

with conditional relative frequencies h_k^b and 0*log(./0) := 0. Hard
demodulators land all mass in the two outermost bins, which reduces the same
formula to the exact binary-channel mutual information, so soft and hard
outputs share one estimator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import draw_channels, simulate_training, transmit_batch
from .demod import LLR_CLAMP, DemodSpec, FrameBatch, MimoSystem, demodulate_batch

LOG2E = float(np.log2(np.e))


def llr_to_prob(llr):
    """LLR -> bit-1 probability 1/(1+exp(-L))."""
    llr = np.asarray(llr, dtype=float)
    with np.errstate(over="ignore"):  # exp overflow saturates to p = 0 exactly
        return 1.0 / (1.0 + np.exp(-llr))


def mi_bias_bound(n_bins: int, n_samples: int) -> float:
    """Upper bound on the (nonnegative) estimator bias per bit position, bits."""
    if n_bins < 1 or n_samples < 1:
        raise ValueError("bin and sample counts must be positive")
    return float(np.log2(1.0 + (n_bins - 1) / n_samples))


def mi_variance_bound(n_samples: int) -> float:
    """Upper bound on the estimator variance, bits^2."""
    if n_samples < 1:
        raise ValueError("sample count must be positive")
    return float(np.log2(n_samples) ** 2 / n_samples)


def confidence_halfwidth(n_samples: int, independent_runs: int = 1) -> float:
    """Conservative 95% half-width from the variance bound."""
    return float(1.96 * np.sqrt(mi_variance_bound(n_samples)) / np.sqrt(independent_runs))


class BitChannelHistogram:
    """Per-bit-position, per-conditioning-bit histogram over [0, 1].

    Bins are uniform; bin k (0-based) covers ((k)/K, (k+1)/K] style half-open
    ranges with p = 1.0 assigned to the last bin. Merging adds counts, so a
    merge equals accumulating the concatenated streams exactly.
    """

    def __init__(self, n_positions: int, n_bins: int):
        if n_bins < 1:
            raise ValueError("need at least one bin")
        self.n_positions = n_positions
        self.n_bins = n_bins
        self.counts = np.zeros((n_positions, 2, n_bins), dtype=np.uint64)

    def totals(self) -> np.ndarray:
        return self.counts.sum(axis=2)

    def _add_bins(self, bins: np.ndarray, truth: np.ndarray) -> None:
        for j in range(self.n_positions):
            for b in (0, 1):
                sel = bins[truth[:, j] == b, j]
                if sel.size:
                    self.counts[j, b] += np.bincount(sel, minlength=self.n_bins).astype(np.uint64)

    def add_llrs(self, llrs: np.ndarray, truth: np.ndarray, clamp: float = LLR_CLAMP) -> None:
        """Accumulate soft outputs (clamped to +-clamp before binning)."""
        p = llr_to_prob(np.clip(llrs, -clamp, clamp))
        bins = np.minimum((p * self.n_bins).astype(np.int64), self.n_bins - 1)
        self._add_bins(bins, truth)

    def add_bits(self, bits: np.ndarray, truth: np.ndarray) -> None:
        """Accumulate hard outputs into the two outermost bins."""
        bins = np.asarray(bits, dtype=np.int64) * (self.n_bins - 1)
        self._add_bins(bins, truth)

    def merge(self, other: "BitChannelHistogram") -> None:
        if other.counts.shape != self.counts.shape:
            raise ValueError("histogram shapes differ")
        self.counts += other.counts

    def mutual_information(self):
        """(total bits per channel use, per-position bits) for the collected data."""
        totals = self.totals()
        if np.any(totals == 0):
            raise ValueError("empty conditioning class: need samples for every (position, bit)")
        freq = self.counts.astype(float) / totals[:, :, None]
        mix = freq.sum(axis=1, keepdims=True)  # h^0 + h^1 per bin
        with np.errstate(divide="ignore", invalid="ignore"):
            term = 0.5 * freq * np.log2(np.where(freq > 0, mix / np.where(freq > 0, freq, 1.0), 1.0))
        penalty = term.sum(axis=(1, 2))
        per_position = 1.0 - penalty
        return float(per_position.sum()), per_position


# ---------------------------------------------------------------------------
# reference capacities


def _mc_mean(values):
    n = len(values)
    mean = float(np.mean(values))
    ci = 1.96 * float(np.std(values, ddof=1)) / np.sqrt(n) if n > 1 else np.inf
    return mean, ci


def gaussian_capacity(n_tx, n_rx, rho, n_samples, rng, fixed_h=None):
    """Ergodic rate with Gaussian inputs, log2 det(I + rho/Mt * H H^H).

    With fixed_h the deterministic value for that channel is returned.
    """
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    if fixed_h is not None:
        h = np.asarray(fixed_h)
        gram = np.eye(h.shape[0]) + (rho / h.shape[1]) * (h @ h.conj().T)
        return float(np.linalg.slogdet(gram)[1] * LOG2E), 0.0
    h = draw_channels(n_samples, n_tx, n_rx, rng)
    gram = np.eye(n_rx) + (rho / n_tx) * np.einsum("nrt,nst->nrs", h, h.conj())
    vals = np.linalg.slogdet(gram)[1] * LOG2E
    return _mc_mean(vals)


def _reference_penalties(batch: FrameBatch, truth_idx, rho_sigma2):
    """CM and per-bit BICM penalty terms for one batch (uses the true channel)."""
    d = batch.distances_true()
    sig = rho_sigma2
    m = d.min(axis=1, keepdims=True)
    e = np.exp(-(d - m) / sig)
    s_all = e.sum(axis=1)
    d_true = np.take_along_axis(d, truth_idx[:, None], axis=1)[:, 0]
    cm_pen = np.log2(s_all) + (d_true - m[:, 0]) / sig * LOG2E
    cb = batch.cand_bits().astype(float)
    s1 = e @ cb
    s0 = e @ (1.0 - cb)
    truth = batch.bits
    s_sel = np.where(truth == 1, s1, s0)
    bicm_pen = (np.log2(s_all)[:, None] - np.log2(s_sel)).sum(axis=1)
    return cm_pen, bicm_pen


def cm_capacity(system: MimoSystem, rho, n_samples, rng, chunk: int = 2048):
    """Monte Carlo rate of the uniform-input vector channel (bits per use)."""
    return _direct_capacity(system, rho, n_samples, rng, chunk, which="cm")


def bicm_capacity(system: MimoSystem, rho, n_samples, rng, chunk: int = 2048):
    """Monte Carlo rate of the parallel per-bit channels (bits per use)."""
    return _direct_capacity(system, rho, n_samples, rng, chunk, which="bicm")


def _direct_capacity(system, rho, n_samples, rng, chunk, which):
    if rho <= 0:
        raise ValueError("rho must be positive")
    sigma2 = system.symbol_energy / rho
    vm = system.vm
    pens = []
    done = 0
    while done < n_samples:
        n = min(chunk, n_samples - done)
        bits = rng.integers(0, 2, (n, vm.n_bits), dtype=np.uint8)
        x = vm.map_bits(bits, system.symbol_energy)
        h = draw_channels(n, system.n_tx, system.n_rx, rng)
        y = transmit_batch(h, x, sigma2, rng)
        batch = FrameBatch(system, y, h, sigma2, bits)
        truth_idx = _candidate_index(vm, bits)
        cm_pen, bicm_pen = _reference_penalties(batch, truth_idx, sigma2)
        pens.append(cm_pen if which == "cm" else bicm_pen)
        done += n
    mean, ci = _mc_mean(np.concatenate(pens))
    return vm.n_bits - mean, ci


def _candidate_index(vm, bits):
    weights = (1 << np.arange(vm.n_bits - 1, -1, -1)).astype(np.int64)
    return np.asarray(bits, dtype=np.int64) @ weights


# ---------------------------------------------------------------------------
# full pipeline: system capacity per demodulator


@dataclass
class PointEstimate:
    name: str
    rate: float
    ci: float
    n_frames: int
    bias_bound: float
    per_bit: np.ndarray | None = None


REFERENCE_NAMES = ("gaussian", "cm", "bicm")


def ergodic_point(
    system: MimoSystem,
    specs: list[DemodSpec],
    rho: float,
    n_frames: int,
    bins: int,
    seed: int,
    point_index: int,
    references=(),
    csi_train: int | None = None,
    chunk: int = 2048,
    clamp: float = LLR_CLAMP,
    enforce_sampling: bool = True,
):
    """Measure the system capacity of each demodulator at one SNR point.

    All demodulators (and requested reference curves) see the same generated
    frames. Results depend only on (seed, point_index, chunk), never on how
    the work is scheduled.
    """
    if rho <= 0:
        raise ValueError("rho must be positive")
    if enforce_sampling and n_frames < 100 * bins:
        raise ValueError(f"n_frames={n_frames} violates n_frames >= 100*bins with bins={bins}")
    for ref in references:
        if ref not in REFERENCE_NAMES:
            raise ValueError(f"unknown reference {ref!r}")
    sigma2 = system.symbol_energy / rho
    vm = system.vm
    hists = {spec.label: BitChannelHistogram(vm.n_bits, bins) for spec in specs}
    ref_vals = {ref: [] for ref in references}

    done = 0
    chunk_index = 0
    while done < n_frames:
        n = min(chunk, n_frames - done)
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(point_index, chunk_index, 0)))
        bits = rng.integers(0, 2, (n, vm.n_bits), dtype=np.uint8)
        x = vm.map_bits(bits, system.symbol_energy)
        h = draw_channels(n, system.n_tx, system.n_rx, rng)
        y = transmit_batch(h, x, sigma2, rng)
        if csi_train is not None:
            h_dem, s2_dem = simulate_training(h, sigma2, csi_train, system.symbol_energy, rng)
        else:
            h_dem, s2_dem = None, None
        batch = FrameBatch(system, y, h, sigma2, bits, h_dem=h_dem, sigma2_dem=s2_dem)
        tie_rng = np.random.default_rng(
            np.random.SeedSequence(seed, spawn_key=(point_index, chunk_index, 2))
        )
        for spec in specs:
            out = demodulate_batch(spec, batch, tie_rng)
            if spec.is_soft:
                hists[spec.label].add_llrs(out, bits, clamp)
            else:
                hists[spec.label].add_bits(out, bits)
        if references:
            if "gaussian" in ref_vals:
                gram = np.eye(system.n_rx) + (rho / system.n_tx) * np.einsum(
                    "nrt,nst->nrs", h, h.conj()
                )
                ref_vals["gaussian"].append(np.linalg.slogdet(gram)[1] * LOG2E)
            if "cm" in ref_vals or "bicm" in ref_vals:
                cm_pen, bicm_pen = _reference_penalties(batch, _candidate_index(vm, bits), sigma2)
                if "cm" in ref_vals:
                    ref_vals["cm"].append(vm.n_bits - cm_pen)
                if "bicm" in ref_vals:
                    ref_vals["bicm"].append(vm.n_bits - bicm_pen)
        done += n
        chunk_index += 1

    results = {}
    bias = mi_bias_bound(bins, n_frames)
    ci = confidence_halfwidth(n_frames)
    for spec in specs:
        total, per_bit = hists[spec.label].mutual_information()
        results[spec.label] = PointEstimate(spec.label, total, ci, n_frames, bias, per_bit)
    for ref in references:
        vals = np.concatenate(ref_vals[ref])
        mean, ref_ci = _mc_mean(vals)
        results[f"ref_{ref}"] = PointEstimate(f"ref_{ref}", mean, ref_ci, n_frames, 0.0)
    return results


# ---------------------------------------------------------------------------
# quasi-static blocks: conditional rates, outage probability, eps-capacity


@dataclass
class OutageRecord:
    """Per-realization conditional rates for one (demodulator, SNR) pair."""

    rates: np.ndarray  # (n_blocks,)

    def outage_probability(self, target_rate: float) -> float:
        return float(np.mean(self.rates < target_rate))

    def eps_capacity(self, epsilon: float) -> float:
        """Largest rate whose outage stays below epsilon (conservative order statistic)."""
        if not 0 < epsilon <= 1:
            raise ValueError("epsilon must lie in (0, 1]")
        srt = np.sort(self.rates)
        k = int(np.ceil(epsilon * srt.size))
        k = min(max(k, 1), srt.size)
        return float(srt[k - 1])

    @property
    def mean_rate(self) -> float:
        return float(np.mean(self.rates))


def quasi_static_rates(
    system: MimoSystem,
    specs: list[DemodSpec],
    rho: float,
    n_blocks: int,
    frames_per_block: int,
    bins: int,
    seed: int,
    point_index: int,
    csi_train: int | None = None,
    chunk: int = 4096,
    clamp: float = LLR_CLAMP,
    enforce_sampling: bool = True,
):
    """Conditional per-channel-realization rates: {demod label: OutageRecord}."""
    if rho <= 0:
        raise ValueError("rho must be positive")
    if enforce_sampling and frames_per_block < 100 * bins:
        raise ValueError(
            f"frames_per_block={frames_per_block} violates the >= 100*bins rule with bins={bins}"
        )
    sigma2 = system.symbol_energy / rho
    vm = system.vm
    rates = {spec.label: np.zeros(n_blocks) for spec in specs}
    for blk in range(n_blocks):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(point_index, blk, 1)))
        h = draw_channels(1, system.n_tx, system.n_rx, rng)[0]
        if csi_train is not None:
            h_dem_b, s2_dem_b = simulate_training(h[None], sigma2, csi_train, system.symbol_energy, rng)
            h_dem, s2_dem = h_dem_b[0], float(s2_dem_b[0])
        else:
            h_dem, s2_dem = None, None
        hists = {spec.label: BitChannelHistogram(vm.n_bits, bins) for spec in specs}
        done = 0
        while done < frames_per_block:
            n = min(chunk, frames_per_block - done)
            bits = rng.integers(0, 2, (n, vm.n_bits), dtype=np.uint8)
            x = vm.map_bits(bits, system.symbol_energy)
            y = transmit_batch(h, x, sigma2, rng)
            batch = FrameBatch(system, y, h, sigma2, bits, h_dem=h_dem, sigma2_dem=s2_dem)
            for spec in specs:
                out = demodulate_batch(spec, batch, rng)
                if spec.is_soft:
                    hists[spec.label].add_llrs(out, bits, clamp)
                else:
                    hists[spec.label].add_bits(out, bits)
            done += n
        for spec in specs:
            total, _ = hists[spec.label].mutual_information()
            rates[spec.label][blk] = total
    return {label: OutageRecord(r) for label, r in rates.items()}
