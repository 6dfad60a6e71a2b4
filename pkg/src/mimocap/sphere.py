"""Depth-first Schnorr-Euchner tree search over the finite set of symbol vectors.

The engine enumerates candidates layer by layer on the QR-triangularized
metric, visiting children in ascending partial-metric order and pruning
branches that provably cannot beat the current bound. It is exact: for every
mode the output equals exhaustive enumeration, only faster. Supported modes:

* single best vector (hard decisions) under the Euclidean or the
  max-of-parts metric,
* per-bit constrained best vectors (soft max-style outputs),
* the K metrically best vectors (candidate lists).

Euclidean ties are broken deterministically toward the smaller stacked label;
max-of-parts ties on the hard decision are resolved uniformly at random.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .constellation import VectorMapper, candidate_bits, candidate_vectors


@dataclass(frozen=True)
class QrFactors:
    q: np.ndarray  # (n_rx, n_tx), orthonormal columns
    r: np.ndarray  # (n_tx, n_tx), upper triangular, real nonnegative diagonal


def qr_preprocess(h: np.ndarray) -> QrFactors:
    """Thin QR of a tall full-column-rank matrix with nonnegative real diag(R)."""
    h = np.asarray(h)
    n_rx, n_tx = h.shape
    if n_rx < n_tx:
        raise ValueError(f"matrix is wide ({n_rx}x{n_tx}); no thin QR for the search")
    q, r = np.linalg.qr(h)
    d = np.diagonal(r)
    phase = np.where(np.abs(d) > 0, d / np.where(np.abs(d) > 0, np.abs(d), 1.0), 1.0)
    q = q * phase[None, :]
    r = r * np.conj(phase)[:, None]
    diag = np.abs(np.diagonal(r))
    if diag.min() <= 1e-10 * max(diag.max(), 1e-300):
        raise np.linalg.LinAlgError("rank-deficient channel matrix")
    return QrFactors(q, r.real + 1j * r.imag)


@dataclass
class CandidateList:
    """Candidate vectors sorted by ascending metric (ties by label)."""

    labels: np.ndarray  # (L, n_tx) per-layer labels
    metrics: np.ndarray  # (L,) squared Euclidean metrics, ascending


class _Best:
    """Keeps the single (metric, label) minimum."""

    __slots__ = ("bound", "label_int", "labels")

    def __init__(self):
        self.bound = np.inf
        self.label_int = None
        self.labels = None

    def cut(self, metric: float) -> bool:
        return metric > self.bound

    def leaf(self, metric: float, labels: np.ndarray, label_int: int) -> None:
        if metric < self.bound or (metric == self.bound and label_int < self.label_int):
            self.bound = metric
            self.label_int = label_int
            self.labels = labels.copy()


class _BestWithTies:
    """Keeps all labels achieving the exact minimum metric."""

    __slots__ = ("bound", "ties")

    def __init__(self):
        self.bound = np.inf
        self.ties = []

    def cut(self, metric: float) -> bool:
        return metric > self.bound

    def leaf(self, metric: float, labels: np.ndarray, label_int: int) -> None:
        if metric < self.bound:
            self.bound = metric
            self.ties = [labels.copy()]
        elif metric == self.bound:
            self.ties.append(labels.copy())


class _KBest:
    """Keeps the K smallest (metric, label) leaves."""

    __slots__ = ("size", "heap")

    def __init__(self, size: int):
        self.size = size
        self.heap = []  # max-heap via (-metric, -label_int, labels)

    def cut(self, metric: float) -> bool:
        return len(self.heap) == self.size and metric > -self.heap[0][0]

    def leaf(self, metric: float, labels: np.ndarray, label_int: int) -> None:
        entry = (-metric, -label_int, labels.copy())
        if len(self.heap) < self.size:
            heapq.heappush(self.heap, entry)
        elif entry > self.heap[0]:
            heapq.heapreplace(self.heap, entry)

    def sorted_entries(self):
        return sorted(((-m, -li, lab) for m, li, lab in self.heap))


def _se_search(b, r, pts, layer_sets, collector, use_linf, label_shifts, start=0.0):
    """Depth-first search over layers n_tx-1..0 with ascending-child ordering.

    layer_sets[k] is the array of labels allowed at layer k; pruning uses a
    strict comparison so metric ties survive for the tie-break rules. `start`
    seeds the root metric (the x-independent floor of the max-of-parts norm).
    """
    n_tx = b.shape[0]
    labels = np.zeros(n_tx, dtype=np.int64)
    label_ints = np.zeros(n_tx + 1, dtype=np.int64)  # suffix label accumulators
    rhs = b.astype(complex).copy()

    def descend(k: int, partial: float) -> None:
        cand = layer_sets[k]
        diff = rhs[k] - r[k, k].real * pts[cand]
        if use_linf:
            inc = np.maximum(np.abs(diff.real), np.abs(diff.imag))
            total = np.maximum(partial, inc)
        else:
            total = partial + diff.real**2 + diff.imag**2
        order = np.argsort(total, kind="stable")
        for t in order:
            metric = float(total[t])
            if collector.cut(metric):
                break
            lab = int(cand[t])
            labels[k] = lab
            label_ints[k] = label_ints[k + 1] | (lab << label_shifts[k])
            if k == 0:
                collector.leaf(metric, labels, int(label_ints[0]))
            else:
                s = pts[lab]
                rhs[:k] -= r[:k, k] * s
                descend(k - 1, metric)
                rhs[:k] += r[:k, k] * s

    descend(n_tx - 1, start)


def _full_layer_sets(vm: VectorMapper):
    full = np.arange(vm.constellation.order)
    return [full] * vm.n_tx


def _constrained_layer_sets(vm: VectorMapper, j: int, b: int):
    """Layer sets restricting the j-th (1-based) stacked label bit to b."""
    m = vm.constellation.bits_per_symbol
    layer = (j - 1) // m
    bit_in_symbol = (j - 1) % m
    sets = _full_layer_sets(vm)
    sets[layer] = vm.constellation.bit_sets[bit_in_symbol, b]
    return sets


def _label_shifts(vm: VectorMapper) -> np.ndarray:
    m = vm.constellation.bits_per_symbol
    return m * np.arange(vm.n_tx - 1, -1, -1)


def _prepare(y, h, vm: VectorMapper, total_energy: float):
    """QR-domain quantities; falls back to None when no valid QR exists."""
    pts = vm.constellation.scaled_points(total_energy / vm.n_tx)
    try:
        qr = qr_preprocess(h)
    except (ValueError, np.linalg.LinAlgError):
        return None, pts
    b = qr.q.conj().T @ np.asarray(y)
    return (qr, b), pts


def _exhaustive_metrics(y, h, vm, total_energy):
    cands = candidate_vectors(vm, total_energy)
    resid = np.asarray(y)[None, :] - cands @ np.asarray(h).T
    return np.sum(np.abs(resid) ** 2, axis=1), cands


def _labels_from_candidate_index(vm: VectorMapper, idx: int) -> np.ndarray:
    m = vm.constellation.bits_per_symbol
    shifts = _label_shifts(vm)
    return (idx >> shifts) & (vm.constellation.order - 1)


def hard_ml(y, h, vm: VectorMapper, total_energy: float = 1.0) -> np.ndarray:
    """Labels of the Euclidean-minimum candidate vector (exact)."""
    prep, pts = _prepare(y, h, vm, total_energy)
    if prep is None:
        metrics, _ = _exhaustive_metrics(y, h, vm, total_energy)
        return _labels_from_candidate_index(vm, int(np.argmin(metrics)))
    qr, b = prep
    col = _Best()
    _se_search(b, qr.r, pts, _full_layer_sets(vm), col, False, _label_shifts(vm))
    return col.labels


def _constrained_min(b, r, pts, vm, j, bit, shifts):
    col = _Best()
    _se_search(b, r, pts, _constrained_layer_sets(vm, j, bit), col, False, shifts)
    return col.bound, col.labels


def maxlog_llrs(y, h, sigma_v2: float, vm: VectorMapper, total_energy: float = 1.0) -> np.ndarray:
    """Exact per-bit max-log LLRs (min over bit=0 set minus min over bit=1 set)."""
    if sigma_v2 <= 0:
        raise ValueError("noise variance must be positive")
    prep, pts = _prepare(y, h, vm, total_energy)
    n_bits = vm.n_bits
    llrs = np.zeros(n_bits)
    if prep is None:
        metrics, _ = _exhaustive_metrics(y, h, vm, total_energy)
        bits = candidate_bits(vm)
        for j in range(n_bits):
            d0 = metrics[bits[:, j] == 0].min()
            d1 = metrics[bits[:, j] == 1].min()
            llrs[j] = (d0 - d1) / sigma_v2
        return llrs
    qr, b = prep
    shifts = _label_shifts(vm)
    col = _Best()
    _se_search(b, qr.r, pts, _full_layer_sets(vm), col, False, shifts)
    ml_bits = vm.bits_of_labels(col.labels)
    for j in range(n_bits):
        opp = 1 - int(ml_bits[j])
        d_opp, _ = _constrained_min(b, qr.r, pts, vm, j + 1, opp, shifts)
        gap = (d_opp - col.bound) / sigma_v2
        llrs[j] = gap if ml_bits[j] == 1 else -gap
    return llrs


def best_list(y, h, size: int, vm: VectorMapper, total_energy: float = 1.0) -> CandidateList:
    """The `size` candidates with smallest ||y - Hx||^2, metrics ascending."""
    count = vm.constellation.order**vm.n_tx
    if not 1 <= size <= count:
        raise ValueError(f"list size {size} out of range 1..{count}")
    prep, pts = _prepare(y, h, vm, total_energy)
    if prep is None:
        metrics, _ = _exhaustive_metrics(y, h, vm, total_energy)
        order = np.lexsort((np.arange(count), metrics))[:size]
        labels = np.stack([_labels_from_candidate_index(vm, int(i)) for i in order])
        return CandidateList(labels, metrics[order])
    qr, b = prep
    col = _KBest(size)
    _se_search(b, qr.r, pts, _full_layer_sets(vm), col, False, _label_shifts(vm))
    entries = col.sorted_entries()
    labels = np.stack([lab for _, _, lab in entries])
    # QR drops the component of y outside range(H); restore the true metric.
    corr = max(float(np.sum(np.abs(y) ** 2) - np.sum(np.abs(b) ** 2)), 0.0)
    metrics = np.array([m for m, _, _ in entries]) + corr
    return CandidateList(labels, metrics)


def linf_floor(y, h) -> float:
    """Max over |Re|/|Im| parts of the receive component outside range(H).

    The max-of-parts residual of the triangularized system keeps this
    x-independent contribution; with equal antenna counts it is zero. At low
    SNR it dominates the metric and creates large exact tie sets, which is
    what makes this demodulator degrade in asymmetric configurations.
    """
    y = np.asarray(y)
    h = np.asarray(h)
    n_rx, n_tx = h.shape
    if n_rx <= n_tx:
        return 0.0
    qc = np.linalg.qr(h, mode="complete")[0]
    tail = qc[:, n_tx:].conj().T @ y
    return float(np.maximum(np.abs(tail.real), np.abs(tail.imag)).max())


def linf_hard(y, h, vm: VectorMapper, total_energy: float = 1.0, rng=None) -> np.ndarray:
    """Minimizer of the max over |Re|/|Im| residual parts in the QR domain.

    Exact ties are resolved uniformly at random (deterministic smallest label
    when no rng is given).
    """
    prep, pts = _prepare(y, h, vm, total_energy)
    if prep is None:
        # no valid QR: apply the same metric to the raw residual
        cands = candidate_vectors(vm, total_energy)
        resid = np.asarray(y)[None, :] - cands @ np.asarray(h).T
        metrics = np.maximum(np.abs(resid.real), np.abs(resid.imag)).max(axis=1)
        ties = np.flatnonzero(metrics == metrics.min())
    else:
        qr, b = prep
        col = _BestWithTies()
        shifts = _label_shifts(vm)
        _se_search(b, qr.r, pts, _full_layer_sets(vm), col, True, shifts,
                   start=linf_floor(y, h))
        ties = sorted(int(np.sum(lab << shifts)) for lab in col.ties)
    if len(ties) == 1 or rng is None:
        pick = ties[0]
    else:
        pick = ties[int(rng.integers(len(ties)))]
    return _labels_from_candidate_index(vm, int(pick))


def linf_soft(y, h, sigma_v2: float, vm: VectorMapper, total_energy: float = 1.0, rng=None) -> np.ndarray:
    """Per-bit constrained max-of-parts minimizers scored with Euclidean metrics.

    The max-of-parts metric ties frequently on grid alphabets (at low SNR the
    x-independent floor alone creates large tie sets); each constrained
    minimizer is drawn uniformly from its tie set (smallest label without an
    rng), and only then scored with the Euclidean metric.
    """
    if sigma_v2 <= 0:
        raise ValueError("noise variance must be positive")
    prep, pts = _prepare(y, h, vm, total_energy)
    n_bits = vm.n_bits
    scale = np.sqrt(total_energy / vm.n_tx)
    llrs = np.zeros(n_bits)
    y = np.asarray(y)
    h = np.asarray(h)

    def euclid(labels):
        x = scale * vm.constellation.points[labels]
        return float(np.sum(np.abs(y - h @ x) ** 2))

    def pick(tie_labels):
        ordered = sorted(tie_labels, key=lambda lab: tuple(lab))
        if rng is None or len(ordered) == 1:
            return ordered[0]
        return ordered[int(rng.integers(len(ordered)))]

    if prep is None:
        cands = candidate_vectors(vm, total_energy)
        resid = y[None, :] - cands @ h.T
        metrics = np.maximum(np.abs(resid.real), np.abs(resid.imag)).max(axis=1)
        e2 = np.sum(np.abs(resid) ** 2, axis=1)
        bits = candidate_bits(vm)
        for j in range(n_bits):
            picks = []
            for bval in (0, 1):
                side = np.flatnonzero(bits[:, j] == bval)
                tied = side[metrics[side] == metrics[side].min()]
                chosen = tied[0] if rng is None or tied.size == 1 else tied[int(rng.integers(tied.size))]
                picks.append(e2[chosen])
            llrs[j] = (picks[0] - picks[1]) / sigma_v2
        return llrs

    qr, b = prep
    shifts = _label_shifts(vm)
    floor = linf_floor(y, h)
    for j in range(n_bits):
        e2 = []
        for bval in (0, 1):
            col = _BestWithTies()
            _se_search(b, qr.r, pts, _constrained_layer_sets(vm, j + 1, bval), col, True,
                       shifts, start=floor)
            e2.append(euclid(pick(col.ties)))
        llrs[j] = (e2[0] - e2[1]) / sigma_v2
    return llrs
