"""Demodulator registry: every scheme behind one (y, H, sigma^2) -> LLRs/bits interface.

Soft demodulators emit one LLR per code bit (positive means bit 1); hard
demodulators emit one bit per code bit. Each scheme exists in two equivalent
forms: a per-frame reference implementation (search-based ones run on the
exact tree-search engine) and a vectorized batch implementation used by the
Monte Carlo pipelines. Tests pin the two against each other and against
exhaustive enumeration.

LLRs are returned unclamped here; clamping to +-LLR_CLAMP happens when the
outputs enter the mutual-information estimator.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations

import numpy as np

from . import sphere
from .constellation import (
    Constellation,
    VectorMapper,
    candidate_bits,
    candidate_vectors,
    constellation_by_id,
)
from .lattice import lll_reduce, qam_integer_map, real_embedding, real_vector

LLR_CLAMP = 30.0
DEFAULT_LIST_CLAMP = 30.0
ZF_COND_LIMIT = 1e12


@dataclass
class MimoSystem:
    """Antenna configuration plus alphabet; symbol_energy is E{||x||^2}."""

    constellation: Constellation
    n_tx: int
    n_rx: int
    symbol_energy: float = 1.0

    @cached_property
    def vm(self) -> VectorMapper:
        return VectorMapper(self.constellation, self.n_tx)

    @property
    def n_bits(self) -> int:
        return self.constellation.bits_per_symbol * self.n_tx

    @property
    def per_symbol_energy(self) -> float:
        return self.symbol_energy / self.n_tx

    @classmethod
    def from_config(cls, mt: int, mr: int, constellation_id: str, es: float = 1.0) -> "MimoSystem":
        return cls(constellation_by_id(constellation_id), mt, mr, es)


@dataclass(frozen=True)
class LlrFrame:
    llrs: np.ndarray
    truth: np.ndarray


@dataclass(frozen=True)
class BitFrame:
    bits: np.ndarray
    truth: np.ndarray


_HARD_KINDS = {"hard_ml", "zf_hard", "mmse_hard", "lr_mmse_hard", "linf_hard", "mmse_sic"}
_SOFT_KINDS = {
    "soft_map",
    "max_log",
    "zf_soft",
    "mmse_soft",
    "lsd",
    "flip",
    "lr_mmse_flip",
    "linf_soft",
    "soft_ic",
}
KNOWN_KINDS = sorted(_HARD_KINDS | _SOFT_KINDS)

_ALIASES = {"softic": "soft_ic", "maxlog": "max_log", "map": "soft_map"}


@dataclass(frozen=True)
class DemodSpec:
    """A demodulator kind plus its validated parameters."""

    kind: str
    list_size: int | None = None
    list_clamp: float = DEFAULT_LIST_CLAMP
    flip_distance: int | None = None
    init: str | None = None
    iterations: int | None = None

    def __post_init__(self):
        if self.kind not in _HARD_KINDS | _SOFT_KINDS:
            raise ValueError(f"unknown demodulator kind {self.kind!r}")
        if self.kind == "lsd":
            if self.list_size is None or self.list_size < 1:
                raise ValueError("lsd needs a list size L >= 1")
            if not self.list_clamp > 0:
                raise ValueError("lsd clamp must be positive")
        if self.kind in ("flip", "lr_mmse_flip"):
            if self.flip_distance is None or self.flip_distance < 0:
                raise ValueError("bit flipping needs a distance D >= 0")
        if self.kind == "flip" and self.init not in ("ml", "mmse", "zf"):
            raise ValueError("flip init must be one of ml/mmse/zf")
        if self.kind == "soft_ic":
            if self.init not in ("zf", "mmse"):
                raise ValueError("soft_ic init must be zf or mmse")
            if self.iterations is None or self.iterations < 0:
                raise ValueError("soft_ic needs iters >= 0")

    @property
    def is_soft(self) -> bool:
        return self.kind in _SOFT_KINDS

    @property
    def label(self) -> str:
        parts = []
        if self.kind == "lsd":
            parts.append(f"L={self.list_size}")
        if self.kind == "flip":
            parts.append(f"init={self.init}")
        if self.kind in ("flip", "lr_mmse_flip"):
            parts.append(f"D={self.flip_distance}")
        if self.kind == "soft_ic":
            parts.extend([f"init={self.init}", f"iters={self.iterations}"])
        return self.kind if not parts else self.kind + ":" + ",".join(parts)

    @classmethod
    def parse(cls, text: str) -> "DemodSpec":
        """Parse config strings like "lsd:L=8" or "flip:init=mmse,D=2"."""
        head, _, tail = text.strip().partition(":")
        kind = _ALIASES.get(head.strip().lower(), head.strip().lower())
        kwargs = {}
        if tail:
            for item in tail.split(","):
                key, _, val = item.partition("=")
                key = key.strip().lower()
                val = val.strip()
                if key == "l":
                    kwargs["list_size"] = int(val)
                elif key == "clamp":
                    kwargs["list_clamp"] = float(val)
                elif key == "d":
                    kwargs["flip_distance"] = int(val)
                elif key == "init":
                    kwargs["init"] = val.lower()
                elif key == "iters":
                    kwargs["iterations"] = int(val)
                else:
                    raise ValueError(f"unknown demodulator parameter {key!r} in {text!r}")
        if kind == "soft_ic":
            kwargs.setdefault("init", "zf")
            kwargs.setdefault("iterations", 3)
        if kind == "flip":
            kwargs.setdefault("init", "ml")
        if kind == "lr_mmse_flip":
            kwargs.setdefault("flip_distance", 1)
        return cls(kind, **kwargs)


def hard_to_llr(bits: np.ndarray, crossover: float) -> np.ndarray:
    """Embed hard decisions as binary-channel LLRs (2c-1)*log((1-p)/p)."""
    if not 0.0 < crossover < 1.0:
        raise ValueError("crossover probability must lie in (0, 1)")
    mag = np.log((1.0 - crossover) / crossover)
    return (2.0 * np.asarray(bits, dtype=float) - 1.0) * mag


def flip_masks(n_bits: int, distance: int) -> np.ndarray:
    """All XOR masks with at most `distance` of `n_bits` bits set."""
    if not 0 <= distance <= n_bits:
        raise ValueError(f"flip distance {distance} out of range 0..{n_bits}")
    masks = [0]
    for d in range(1, distance + 1):
        for pos in combinations(range(n_bits), d):
            mask = 0
            for p in pos:
                mask |= 1 << p
            masks.append(mask)
    return np.array(masks, dtype=np.int64)


# ---------------------------------------------------------------------------
# batch workspace


class FrameBatch:
    """Shared per-chunk state: frames plus lazily computed common quantities.

    h may be (n, n_rx, n_tx) or a single (n_rx, n_tx) shared across frames
    (quasi-static blocks). With imperfect CSI, h_dem/sigma2_dem hold the
    estimates handed to the demodulators while h/sigma2 generate the data.
    """

    def __init__(self, system, y, h, sigma2, bits=None, h_dem=None, sigma2_dem=None):
        self.system = system
        self.y = y
        self.h = h
        self.sigma2 = sigma2
        self.bits = bits
        self.h_dem = h if h_dem is None else h_dem
        self.sigma2_dem = sigma2 if sigma2_dem is None else sigma2_dem
        self._cache = {}

    @property
    def n_frames(self) -> int:
        return self.y.shape[0]

    @property
    def shared_h(self) -> bool:
        return self.h_dem.ndim == 2

    def _sigma_col(self):
        sig = np.asarray(self.sigma2_dem, dtype=float)
        return sig[:, None] if sig.ndim == 1 else sig

    def cand_vectors(self) -> np.ndarray:
        key = "cand_vectors"
        if key not in self._cache:
            self._cache[key] = candidate_vectors(self.system.vm, self.system.symbol_energy)
        return self._cache[key]

    def cand_bits(self) -> np.ndarray:
        key = "cand_bits"
        if key not in self._cache:
            self._cache[key] = candidate_bits(self.system.vm)
        return self._cache[key]

    def bit_index_sets(self):
        """Candidate-index sets per (bit position, value)."""
        key = "bit_sets"
        if key not in self._cache:
            cb = self.cand_bits()
            sets = [
                [np.flatnonzero(cb[:, j] == b) for b in (0, 1)] for j in range(self.system.n_bits)
            ]
            self._cache[key] = sets
        return self._cache[key]

    def _distances(self, h) -> np.ndarray:
        cands = self.cand_vectors()
        if h.ndim == 2:
            hx = cands @ h.T  # (C, n_rx)
            resid = self.y[:, None, :] - hx[None, :, :]
            return np.sum(resid.real**2 + resid.imag**2, axis=2)
        hx = np.einsum("nrt,ct->nrc", h, cands)
        resid = self.y[:, :, None] - hx
        return np.sum(resid.real**2 + resid.imag**2, axis=1)

    def distances(self) -> np.ndarray:
        """(n, C) squared Euclidean metrics against the demodulation channel."""
        if "d_dem" not in self._cache:
            if self.h_dem is self.h and "d_true" in self._cache:
                self._cache["d_dem"] = self._cache["d_true"]
            else:
                self._cache["d_dem"] = self._distances(self.h_dem)
        return self._cache["d_dem"]

    def distances_true(self) -> np.ndarray:
        """(n, C) metrics against the true channel (reference capacities)."""
        if "d_true" not in self._cache:
            if self.h_dem is self.h and "d_dem" in self._cache:
                self._cache["d_true"] = self._cache["d_dem"]
            else:
                self._cache["d_true"] = self._distances(self.h)
        return self._cache["d_true"]

    def gram(self):
        """A = H^H H for the demodulation channel, (n, mt, mt) or (mt, mt)."""
        if "gram" not in self._cache:
            h = self.h_dem
            if h.ndim == 2:
                self._cache["gram"] = h.conj().T @ h
            else:
                self._cache["gram"] = np.einsum("nrt,nrs->nts", h.conj(), h)
        return self._cache["gram"]

    def matched(self):
        """H^H y, (n, mt)."""
        if "matched" not in self._cache:
            h = self.h_dem
            if h.ndim == 2:
                self._cache["matched"] = self.y @ h.conj()
            else:
                self._cache["matched"] = np.einsum("nrt,nr->nt", h.conj(), self.y)
        return self._cache["matched"]


def _scalar_maxlog(x_hat, noise_var, system: MimoSystem):
    """Per-layer scalar max-log LLRs; x_hat (n, mt), noise_var broadcastable."""
    const = system.constellation
    pts = const.scaled_points(system.per_symbol_energy)
    d = np.abs(x_hat[..., None] - pts) ** 2
    m = const.bits_per_symbol
    out = np.empty(x_hat.shape + (m,))
    for i in range(m):
        d0 = d[..., const.bit_sets[i, 0]].min(axis=-1)
        d1 = d[..., const.bit_sets[i, 1]].min(axis=-1)
        out[..., i] = (d0 - d1) / noise_var
    return out.reshape(x_hat.shape[0], -1)


def _quantize_labels(x_hat, system: MimoSystem):
    return system.constellation.quantize(x_hat, system.per_symbol_energy)


def _expand(mat, n):
    return np.broadcast_to(mat, (n,) + mat.shape) if mat.ndim == 2 else mat


# ---------------------------------------------------------------------------
# exhaustive-table demodulators (soft MAP, max-log, hard ML, lists)


def b_soft_map(batch: FrameBatch) -> np.ndarray:
    d = batch.distances()
    sig = batch._sigma_col()
    m = d.min(axis=1, keepdims=True)
    e = np.exp(-(d - m) / sig)
    cb = batch.cand_bits().astype(float)
    s1 = e @ cb
    s0 = e @ (1.0 - cb)
    return np.log(s1) - np.log(s0)


def b_max_log(batch: FrameBatch) -> np.ndarray:
    d = batch.distances()
    sig = batch._sigma_col()
    sets = batch.bit_index_sets()
    n_bits = batch.system.n_bits
    out = np.empty((batch.n_frames, n_bits))
    for j in range(n_bits):
        d0 = d[:, sets[j][0]].min(axis=1)
        d1 = d[:, sets[j][1]].min(axis=1)
        out[:, j] = d0 - d1
    return out / sig


def b_hard_ml(batch: FrameBatch) -> np.ndarray:
    d = batch.distances()
    idx = np.argmin(d, axis=1)
    return batch.cand_bits()[idx]


def _list_llrs(metrics, member_bits, sig, clamp):
    """List LLRs with the empty-intersection fallback to +-clamp."""
    inf = np.inf
    m1 = np.where(member_bits == 1, metrics[..., None], inf).min(axis=1)
    m0 = np.where(member_bits == 0, metrics[..., None], inf).min(axis=1)
    llr = (m0 - m1) / sig
    llr = np.where(np.isinf(m1), -clamp, llr)
    llr = np.where(np.isinf(m0), clamp, llr)
    return llr


def b_lsd(batch: FrameBatch, size: int, clamp: float) -> np.ndarray:
    d = batch.distances()
    count = d.shape[1]
    if not 1 <= size <= count:
        raise ValueError(f"list size {size} out of range 1..{count}")
    if size == count:
        members = np.broadcast_to(np.arange(count), d.shape)
    else:
        members = np.argpartition(d, size - 1, axis=1)[:, :size]
    metrics = np.take_along_axis(d, members, axis=1)
    member_bits = batch.cand_bits()[members]
    return _list_llrs(metrics, member_bits, batch._sigma_col(), clamp)


def _bits_to_index(bits, n_bits):
    weights = (1 << np.arange(n_bits - 1, -1, -1)).astype(np.int64)
    return np.asarray(bits, dtype=np.int64) @ weights


def b_flip(batch: FrameBatch, init_bits: np.ndarray, distance: int, clamp: float) -> np.ndarray:
    n_bits = batch.system.n_bits
    masks = flip_masks(n_bits, distance)
    d = batch.distances()
    init_idx = _bits_to_index(init_bits, n_bits)
    members = init_idx[:, None] ^ masks[None, :]
    metrics = np.take_along_axis(d, members, axis=1)
    shifts = np.arange(n_bits - 1, -1, -1)
    mask_bits = ((masks[:, None] >> shifts) & 1).astype(np.uint8)
    member_bits = np.asarray(init_bits, dtype=np.uint8)[:, None, :] ^ mask_bits[None, :, :]
    return _list_llrs(metrics, member_bits, batch._sigma_col(), clamp)


# ---------------------------------------------------------------------------
# linear demodulators


def _zf_solution(batch: FrameBatch):
    """Unbiased ZF estimates, per-layer noise variances, and a bad-frame mask."""
    if batch.system.n_rx < batch.system.n_tx:
        raise ValueError("ZF needs n_rx >= n_tx")
    a = batch.gram()
    n = batch.n_frames
    sig = batch._sigma_col()
    if batch.shared_h:
        if np.linalg.cond(a) < ZF_COND_LIMIT:
            a_inv = np.linalg.inv(a)
            x_hat = batch.matched() @ a_inv.T
            layer_var = sig * np.abs(np.diagonal(a_inv))
            return x_hat, np.broadcast_to(layer_var, x_hat.shape), np.zeros(n, dtype=bool)
        zeros = np.zeros((n, batch.system.n_tx))
        return zeros.astype(complex), np.ones_like(zeros), np.ones(n, dtype=bool)
    cond = np.linalg.cond(a)
    bad = ~(cond < ZF_COND_LIMIT)
    a_safe = a + np.where(bad, 1.0, 0.0)[:, None, None] * np.eye(a.shape[-1])
    a_inv = np.linalg.inv(a_safe)
    x_hat = np.einsum("nts,ns->nt", a_inv, batch.matched())
    layer_var = sig * np.abs(np.diagonal(a_inv, axis1=1, axis2=2))
    return x_hat, layer_var, bad


def b_zf_soft(batch: FrameBatch) -> np.ndarray:
    x_hat, layer_var, bad = _zf_solution(batch)
    llr = _scalar_maxlog(x_hat, layer_var, batch.system)
    llr[bad] = 0.0  # near-singular frames carry no information
    return llr


def b_zf_hard(batch: FrameBatch) -> np.ndarray:
    x_hat, _, bad = _zf_solution(batch)
    labels = _quantize_labels(x_hat, batch.system)
    bits = batch.system.vm.bits_of_labels(labels)
    bits[bad] = 0
    return bits


def _mmse_solution(batch: FrameBatch):
    """Unbiased MMSE estimates and per-layer effective noise variances."""
    system = batch.system
    sig = np.maximum(np.asarray(batch.sigma2_dem, dtype=float), 1e-300)
    c = system.n_tx * sig / system.symbol_energy
    if batch.shared_h and c.ndim == 0:
        a = batch.gram()
        b = a + c * np.eye(system.n_tx)
        w = np.linalg.solve(b, a)
        wkk = np.clip(np.abs(np.diagonal(w).real), 1e-300, 1.0)
        x_raw = np.linalg.solve(b, batch.matched().T).T
        x_hat = x_raw / wkk
        layer_var = system.per_symbol_energy * (1.0 - wkk) / wkk
        return x_hat, np.broadcast_to(np.maximum(layer_var, 1e-300), x_hat.shape)
    a = _expand(batch.gram(), batch.n_frames)
    c_full = np.broadcast_to(np.atleast_1d(c), (batch.n_frames,))
    b = a + c_full[:, None, None] * np.eye(system.n_tx)
    x_raw = np.linalg.solve(b, batch.matched()[..., None])[..., 0]
    w = np.linalg.solve(b, a)
    wkk = np.clip(np.abs(np.diagonal(w, axis1=1, axis2=2).real), 1e-300, 1.0)
    x_hat = x_raw / wkk
    layer_var = system.per_symbol_energy * (1.0 - wkk) / wkk
    return x_hat, np.maximum(layer_var, 1e-300)


def b_mmse_soft(batch: FrameBatch) -> np.ndarray:
    x_hat, layer_var = _mmse_solution(batch)
    return _scalar_maxlog(x_hat, layer_var, batch.system)


def b_mmse_hard(batch: FrameBatch) -> np.ndarray:
    x_hat, _ = _mmse_solution(batch)
    labels = _quantize_labels(x_hat, batch.system)
    return batch.system.vm.bits_of_labels(labels)


def _mmse_sic_shared(batch: FrameBatch) -> np.ndarray:
    """SIC with a common channel: the ordering and filters are data-independent."""
    system = batch.system
    mt = system.n_tx
    h = np.array(batch.h_dem)
    sig = max(float(batch.sigma2_dem), 1e-300)
    c = mt * sig / system.symbol_energy
    pts = system.constellation.scaled_points(system.per_symbol_energy)
    active = np.ones(mt, dtype=bool)
    y = batch.y.copy()
    labels = np.zeros((batch.n_frames, mt), dtype=np.int64)
    for _ in range(mt):
        a = h.conj().T @ h
        b = a + c * np.eye(mt) + np.diag((~active).astype(float))
        p = np.linalg.inv(b)
        pkk = np.where(active, np.abs(np.diagonal(p).real), np.inf)
        k = int(np.argmin(pkk))
        filt = p[k] @ h.conj().T
        gain = max(1.0 - c * p[k, k].real, 1e-300)
        x_hat = (y @ filt) / gain
        lab = system.constellation.quantize(x_hat, system.per_symbol_energy)
        labels[:, k] = lab
        y = y - np.outer(pts[lab], h[:, k])
        h[:, k] = 0.0
        active[k] = False
    return system.vm.bits_of_labels(labels)


def b_mmse_sic(batch: FrameBatch) -> np.ndarray:
    """Ordered successive cancelation: best post-equalization SINR first."""
    system = batch.system
    if batch.shared_h and np.ndim(batch.sigma2_dem) == 0:
        return _mmse_sic_shared(batch)
    n, mt = batch.n_frames, system.n_tx
    h = _expand(batch.h_dem, n).copy()
    y = batch.y.copy()
    sig = np.broadcast_to(np.atleast_1d(np.asarray(batch.sigma2_dem, dtype=float)), (n,))
    c = mt * np.maximum(sig, 1e-300) / system.symbol_energy
    pts = system.constellation.scaled_points(system.per_symbol_energy)
    active = np.ones((n, mt), dtype=bool)
    labels = np.zeros((n, mt), dtype=np.int64)
    rows = np.arange(n)
    eye = np.eye(mt)
    for _ in range(mt):
        a = np.einsum("nrt,nrs->nts", h.conj(), h)
        b = a + c[:, None, None] * eye + (~active)[:, None, :] * eye  # pad removed layers
        p = np.linalg.inv(b)
        pkk = np.abs(np.diagonal(p, axis1=1, axis2=2).real)
        pkk = np.where(active, pkk, np.inf)
        k = np.argmin(pkk, axis=1)  # max SINR = min diagonal, ties to lowest index
        filt = np.einsum("ns,nrs->nr", p[rows, k], h.conj())
        x_raw = np.einsum("nr,nr->n", filt, y)
        gain = np.maximum(1.0 - c * p[rows, k, k].real, 1e-300)
        lab = system.constellation.quantize(x_raw / gain, system.per_symbol_energy)
        labels[rows, k] = lab
        y = y - h[rows, :, k] * pts[lab][:, None]
        h[rows, :, k] = 0.0
        active[rows, k] = False
    return system.vm.bits_of_labels(labels)


def softic_residual_variance(h_norm2, symbol_var, sigma2, n_rx):
    """Per-layer Gaussian residual variance: noise plus averaged leakage.

    h_norm2 and symbol_var are (n, mt); interference from the other layers is
    spread over the receive antennas (matched-filter front end).
    """
    total = np.sum(h_norm2 * symbol_var, axis=1, keepdims=True)
    sig = np.asarray(sigma2, dtype=float)
    if sig.ndim == 1:
        sig = sig[:, None]
    return sig + (total - h_norm2 * symbol_var) / n_rx


def b_soft_ic(batch: FrameBatch, init_llrs: np.ndarray, iterations: int) -> np.ndarray:
    system = batch.system
    n, mt, m = batch.n_frames, system.n_tx, system.constellation.bits_per_symbol
    pts = system.constellation.scaled_points(system.per_symbol_energy)
    bit_table = system.constellation.bits_of_labels(np.arange(system.constellation.order)).astype(float)
    h = _expand(batch.h_dem, n)
    h_norm2 = np.sum(h.real**2 + h.imag**2, axis=1)  # (n, mt)
    llrs = init_llrs.reshape(n, mt, m)
    for _ in range(iterations):
        z = np.einsum("nki,pi->nkp", llrs, bit_table)
        lse = np.logaddexp(0.0, llrs).sum(axis=2)
        probs = np.exp(z - lse[..., None])  # (n, mt, M), rows sum to one
        soft = probs @ pts
        var = probs @ (np.abs(pts) ** 2) - np.abs(soft) ** 2
        resid = batch.y - np.einsum("nrt,nt->nr", h, soft)
        mf = np.einsum("nrt,nr->nt", h.conj(), resid) + h_norm2 * soft
        r_mf = mf / h_norm2
        sig_eff = softic_residual_variance(h_norm2, var, batch.sigma2_dem, system.n_rx)
        llrs = _scalar_maxlog(r_mf, sig_eff / h_norm2, system).reshape(n, mt, m)
    return llrs.reshape(n, -1)


# ---------------------------------------------------------------------------
# lattice-reduction-aided MMSE

_INTEGER_MAPS: dict = {}


def _integer_map_cached(const):
    key = (const.order, const.labeling)
    if key not in _INTEGER_MAPS:
        _INTEGER_MAPS[key] = qam_integer_map(const)
    return _INTEGER_MAPS[key]


class _LrContext:
    """Reduction and filter state reused across frames with a common channel.

    The reduction runs on the noise-extended real matrix [H_r; alpha*I], so
    the reduced-domain linear estimate equals the exact MMSE estimate of the
    transformed integer coordinates; rounding then happens in the reduced
    basis and the result is carried back through the unimodular transform.
    """

    def __init__(self, h, sigma2, system: MimoSystem):
        const = system.constellation
        unit_scale, self.offset = _integer_map_cached(const)
        self.scale = unit_scale * np.sqrt(system.per_symbol_energy)
        self.levels = const.levels_per_axis
        self.mean_z = (self.levels - 1) / 2.0
        hr = real_embedding(h)
        dim = hr.shape[1]
        z_var = (self.levels**2 - 1) / 12.0
        w_var = float(sigma2) / (2.0 * self.scale**2)
        alpha = np.sqrt(max(w_var, 1e-300) / z_var)
        extended = np.vstack([hr, alpha * np.eye(dim)])
        red = lll_reduce(extended)
        self.t = red.t
        h_red = hr @ red.t
        # per-component unbiasing is deliberately not applied here: reduced
        # coordinates can have small effective gains and rescaling amplifies
        # the interference the reduction just removed
        self.filt = np.linalg.inv(red.basis.T @ red.basis) @ h_red.T
        self.shift = hr @ np.full(dim, self.offset + self.mean_z)
        self.center = red.t_inv @ np.full(dim, self.mean_z)

    def detect(self, y_r):
        """y_r is (..., 2*n_rx) real; returns clipped integer coordinates."""
        y2 = y_r / self.scale - self.shift
        u = y2 @ self.filt.T
        zt = np.rint(u + self.center)
        z = zt @ self.t.T
        return np.clip(z, 0, self.levels - 1)


def _lr_labels_from_z(z, system: MimoSystem, scale, offset):
    mt = system.n_tx
    vals = scale * (z + offset)
    sym = vals[..., :mt] + 1j * vals[..., mt:]
    return system.constellation.quantize(sym, system.per_symbol_energy)


def b_lr_mmse_hard(batch: FrameBatch) -> np.ndarray:
    system = batch.system
    n = batch.n_frames
    y_r = real_vector(batch.y)
    sig = np.broadcast_to(np.atleast_1d(np.asarray(batch.sigma2_dem, dtype=float)), (n,))
    if batch.shared_h and np.ndim(batch.sigma2_dem) == 0:
        ctx = _LrContext(batch.h_dem, float(batch.sigma2_dem), system)
        z = ctx.detect(y_r)
        labels = _lr_labels_from_z(z, system, ctx.scale, ctx.offset)
    else:
        labels = np.zeros((n, system.n_tx), dtype=np.int64)
        h = _expand(batch.h_dem, n)
        for i in range(n):
            ctx = _LrContext(h[i], sig[i], system)
            z = ctx.detect(y_r[i])
            labels[i] = _lr_labels_from_z(z, system, ctx.scale, ctx.offset)
    return system.vm.bits_of_labels(labels)


def b_lr_mmse_flip(batch: FrameBatch, distance: int, clamp: float) -> np.ndarray:
    hard_bits = b_lr_mmse_hard(batch)
    return b_flip(batch, hard_bits, distance, clamp)


# ---------------------------------------------------------------------------
# max-of-parts metric demodulators (batch forms)


def _linf_qr(batch: FrameBatch):
    """(n, C) max-of-parts metrics of the triangularized residual.

    Keeps the x-independent floor contributed by the receive component
    outside range(H) (zero when n_rx == n_tx).
    """
    if batch.system.n_rx < batch.system.n_tx:
        raise ValueError("the triangularized max-of-parts metric needs n_rx >= n_tx")
    h = batch.h_dem
    mt = batch.system.n_tx
    q, r_full = np.linalg.qr(h, mode="complete")
    r = r_full[..., :mt, :]
    d = np.diagonal(r, axis1=-2, axis2=-1)
    mag = np.abs(d)
    phase = np.where(mag > 0, d / np.where(mag > 0, mag, 1.0), 1.0)
    q1 = q[..., :, :mt] * phase[..., None, :]
    r = r * np.conj(phase)[..., :, None]
    q2 = q[..., :, mt:]
    if h.ndim == 2:
        b = batch.y @ q1.conj()
        tail = batch.y @ q2.conj()
        rx = batch.cand_vectors() @ r.T  # (C, mt)
        resid = b[:, None, :] - rx[None, :, :]
    else:
        b = np.einsum("nrt,nr->nt", q1.conj(), batch.y)
        tail = np.einsum("nrt,nr->nt", q2.conj(), batch.y)
        rx = np.einsum("nij,cj->nci", r, batch.cand_vectors())
        resid = b[:, None, :] - rx
    met = np.maximum(np.abs(resid.real), np.abs(resid.imag)).max(axis=2)
    if tail.shape[-1]:
        floor = np.maximum(np.abs(tail.real), np.abs(tail.imag)).max(axis=-1)
        met = np.maximum(met, np.atleast_1d(floor)[:, None])
    return met


def b_linf_hard(batch: FrameBatch, rng=None) -> np.ndarray:
    """Hard max-of-parts decisions; exact metric ties are picked uniformly."""
    met = _linf_qr(batch)
    if rng is None:
        idx = np.argmin(met, axis=1)
    else:
        tied = met == met.min(axis=1, keepdims=True)
        draw = rng.random(met.shape)
        idx = np.where(tied, draw, 2.0).argmin(axis=1)
    return batch.cand_bits()[idx]


def b_linf_soft(batch: FrameBatch, rng=None) -> np.ndarray:
    """Per-bit constrained minimizers (uniform over metric ties), Euclidean LLRs."""
    met = _linf_qr(batch)
    d = batch.distances()
    sets = batch.bit_index_sets()
    sig = batch._sigma_col()
    n_bits = batch.system.n_bits
    rows = np.arange(batch.n_frames)
    out = np.empty((batch.n_frames, n_bits))
    for j in range(n_bits):
        e2 = []
        for b in (0, 1):
            side = sets[j][b]
            met_side = met[:, side]
            tied = met_side == met_side.min(axis=1, keepdims=True)
            if rng is None:
                pick = np.argmax(tied, axis=1)  # first tie: smallest label
            else:
                pick = np.where(tied, rng.random(met_side.shape), 2.0).argmin(axis=1)
            e2.append(d[rows, side[pick]])
        out[:, j] = e2[0] - e2[1]
    return out / sig


# ---------------------------------------------------------------------------
# dispatch


def _init_bits_for_flip(batch: FrameBatch, init: str) -> np.ndarray:
    if init == "ml":
        return b_hard_ml(batch)
    if init == "mmse":
        return b_mmse_hard(batch)
    if init == "zf":
        return b_zf_hard(batch)
    raise ValueError(f"unknown flip initializer {init!r}")


def demodulate_batch(spec: DemodSpec, batch: FrameBatch, rng=None) -> np.ndarray:
    """Run one demodulator over a frame batch: (n, R0) LLRs or bits.

    rng is consumed only by demodulators with randomized tie-breaks.
    """
    kind = spec.kind
    if kind == "soft_map":
        return b_soft_map(batch)
    if kind == "max_log":
        return b_max_log(batch)
    if kind == "hard_ml":
        return b_hard_ml(batch)
    if kind == "lsd":
        return b_lsd(batch, spec.list_size, spec.list_clamp)
    if kind == "flip":
        init_bits = _init_bits_for_flip(batch, spec.init)
        return b_flip(batch, init_bits, spec.flip_distance, spec.list_clamp)
    if kind == "zf_soft":
        return b_zf_soft(batch)
    if kind == "zf_hard":
        return b_zf_hard(batch)
    if kind == "mmse_soft":
        return b_mmse_soft(batch)
    if kind == "mmse_hard":
        return b_mmse_hard(batch)
    if kind == "mmse_sic":
        return b_mmse_sic(batch)
    if kind == "soft_ic":
        init = b_zf_soft(batch) if spec.init == "zf" else b_mmse_soft(batch)
        return b_soft_ic(batch, init, spec.iterations)
    if kind == "lr_mmse_hard":
        return b_lr_mmse_hard(batch)
    if kind == "lr_mmse_flip":
        return b_lr_mmse_flip(batch, spec.flip_distance, spec.list_clamp)
    if kind == "linf_hard":
        return b_linf_hard(batch, rng)
    if kind == "linf_soft":
        return b_linf_soft(batch, rng)
    raise ValueError(f"unknown demodulator kind {kind!r}")


def demodulate_frame(spec: DemodSpec, y, h, sigma2, system: MimoSystem, rng=None) -> np.ndarray:
    """Per-frame reference path; search-based schemes use the exact tree search."""
    vm = system.vm
    es = system.symbol_energy
    if spec.is_soft and not np.all(np.asarray(sigma2) > 0):
        raise ValueError("soft demodulation needs a positive noise variance")
    if spec.kind == "hard_ml":
        return vm.bits_of_labels(sphere.hard_ml(y, h, vm, es))
    if spec.kind == "max_log":
        return sphere.maxlog_llrs(y, h, sigma2, vm, es)
    if spec.kind == "soft_map":
        batch = FrameBatch(system, np.asarray(y)[None, :], np.asarray(h)[None], sigma2)
        return b_soft_map(batch)[0]
    if spec.kind == "lsd":
        lst = sphere.best_list(y, h, spec.list_size, vm, es)
        metrics = lst.metrics[None, :]
        member_bits = vm.bits_of_labels(lst.labels)[None, :, :]
        return _list_llrs(metrics, member_bits, np.float64(sigma2), spec.list_clamp)[0]
    if spec.kind == "linf_hard":
        return vm.bits_of_labels(sphere.linf_hard(y, h, vm, es, rng))
    if spec.kind == "linf_soft":
        return sphere.linf_soft(y, h, sigma2, vm, es, rng)
    if spec.kind == "flip":
        batch = FrameBatch(system, np.asarray(y)[None, :], np.asarray(h)[None], sigma2)
        if spec.init == "ml":
            init_bits = vm.bits_of_labels(sphere.hard_ml(y, h, vm, es))[None, :]
        else:
            init_bits = _init_bits_for_flip(batch, spec.init)
        return b_flip(batch, init_bits, spec.flip_distance, spec.list_clamp)[0]
    batch = FrameBatch(system, np.asarray(y)[None, :], np.asarray(h)[None], sigma2)
    return demodulate_batch(spec, batch)[0]
