"""Real lattice embedding, LLL basis reduction, and the QAM <-> integer map.

The reduction tracks the unimodular transform T and its inverse in exact
64-bit integer arithmetic; overflow raises instead of wrapping.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constellation import Constellation

# keep entries small enough that the next q*column update cannot wrap int64
_INT_LIMIT_GUARD = np.int64(1) << 31


class LatticeOverflowError(OverflowError):
    pass


@dataclass(frozen=True)
class ReducedBasis:
    basis: np.ndarray  # reduced basis, basis = original @ t
    t: np.ndarray  # unimodular int64
    t_inv: np.ndarray  # exact integer inverse of t
    delta: float


def real_embedding(h: np.ndarray) -> np.ndarray:
    """Complex (n_rx, n_tx) -> real (2 n_rx, 2 n_tx) block matrix [[Re,-Im],[Im,Re]]."""
    h = np.asarray(h)
    n_rx, n_tx = h.shape
    out = np.empty((2 * n_rx, 2 * n_tx))
    out[:n_rx, :n_tx] = h.real
    out[:n_rx, n_tx:] = -h.imag
    out[n_rx:, :n_tx] = h.imag
    out[n_rx:, n_tx:] = h.real
    return out


def real_vector(x: np.ndarray) -> np.ndarray:
    """Complex vector -> stacked [Re; Im] real vector (matches real_embedding)."""
    x = np.asarray(x)
    return np.concatenate([x.real, x.imag], axis=-1)


def _gso(basis: np.ndarray):
    """Gram-Schmidt coefficients mu and squared norms of the b* vectors (via QR)."""
    r = np.linalg.qr(np.asarray(basis, dtype=float), mode="r")
    diag = np.diagonal(r).copy()
    safe = np.where(np.abs(diag) > 0, diag, 1.0)
    mu = (r / safe[:, None]).T
    norms2 = diag**2
    return mu, norms2


def lll_reduce(basis: np.ndarray, delta: float = 0.75) -> ReducedBasis:
    """LLL reduction of a full-column-rank real basis (columns are vectors)."""
    if not 0.25 < delta <= 1.0:
        raise ValueError(f"delta must lie in (1/4, 1], got {delta}")
    b = np.array(basis, dtype=float)
    n = b.shape[1]
    mu, norms2 = _gso(b)
    if norms2.min() <= 1e-24 * max(norms2.max(), 1e-300):
        raise np.linalg.LinAlgError("basis is (numerically) rank deficient")
    t = np.eye(n, dtype=np.int64)
    t_inv = np.eye(n, dtype=np.int64)

    def size_reduce(k: int, j: int) -> None:
        m = mu[k, j]
        if -0.5 <= m <= 0.5:
            return
        q = round(m)
        b[:, k] -= q * b[:, j]
        t[:, k] -= q * t[:, j]
        t_inv[j, :] += q * t_inv[k, :]
        mu[k, :j] -= q * mu[j, :j]
        mu[k, j] -= q
        if np.abs(t[:, k]).max() >= _INT_LIMIT_GUARD or np.abs(t_inv[j, :]).max() >= _INT_LIMIT_GUARD:
            raise LatticeOverflowError("unimodular transform exceeded the 64-bit integer range")

    k = 1
    iterations = 0
    max_iterations = 4000 * n * n
    while k < n:
        iterations += 1
        if iterations > max_iterations:
            raise RuntimeError("LLL failed to converge (iteration cap hit)")
        size_reduce(k, k - 1)
        if norms2[k] >= (delta - mu[k, k - 1] ** 2) * norms2[k - 1]:
            for j in range(k - 2, -1, -1):
                size_reduce(k, j)
            k += 1
        else:
            b[:, [k - 1, k]] = b[:, [k, k - 1]]
            t[:, [k - 1, k]] = t[:, [k, k - 1]]
            t_inv[[k - 1, k], :] = t_inv[[k, k - 1], :]
            # swap update of the Gram-Schmidt state
            mu_old = mu[k, k - 1]
            big = norms2[k] + mu_old**2 * norms2[k - 1]
            mu[k, k - 1] = mu_old * norms2[k - 1] / big
            norms2[k] = norms2[k - 1] * norms2[k] / big
            norms2[k - 1] = big
            mu[[k - 1, k], : k - 1] = mu[[k, k - 1], : k - 1]
            for i in range(k + 1, n):
                tmp = mu[i, k]
                mu[i, k] = mu[i, k - 1] - mu_old * tmp
                mu[i, k - 1] = tmp + mu[k, k - 1] * mu[i, k]
            k = max(k - 1, 1)

    return ReducedBasis(b, t, t_inv, delta)


def is_lll_reduced(basis: np.ndarray, delta: float = 0.75, tol: float = 1e-9) -> bool:
    """Post-hoc check of the size-reduction and swap conditions."""
    mu, norms2 = _gso(np.asarray(basis, dtype=float))
    n = basis.shape[1]
    for kk in range(1, n):
        if np.any(np.abs(mu[kk, :kk]) > 0.5 + tol):
            return False
        if norms2[kk] < (delta - mu[kk, kk - 1] ** 2) * norms2[kk - 1] * (1 - tol):
            return False
    return True


def qam_integer_map(constellation: Constellation):
    """Affine map axis_value = scale * (z + offset) with z in {0..L-1}.

    Returns (scale, offset) for the unit-energy constellation; multiply scale
    by the per-symbol amplitude when the alphabet is energy-scaled.
    """
    n_levels = constellation.levels_per_axis
    if n_levels * n_levels != constellation.order:
        raise ValueError("integer map requires a square QAM alphabet")
    scale = 2.0 / np.sqrt(2.0 * (n_levels**2 - 1) / 3.0)
    offset = -(n_levels - 1) / 2.0
    # sanity: the axis grid reconstructed from the map must match the alphabet
    grid = scale * (np.arange(n_levels) + offset)
    axis = np.unique(np.round(constellation.points.real, 12))
    if axis.size != n_levels or not np.allclose(np.sort(grid), axis, atol=1e-12):
        raise ValueError("alphabet is not the square QAM grid expected by the integer map")
    return scale, offset
