"""Spatially i.i.d. Rayleigh fading, AWGN transmission, and training-based CSI.

All fading coefficients are circularly symmetric complex Gaussian with zero
mean and unit variance. With E{||x||^2} = Es and noise variance sigma_v2 the
operating SNR is rho = Es / sigma_v2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ChannelRealization:
    h: np.ndarray  # (n_rx, n_tx) complex
    sigma_v2: float


@dataclass(frozen=True)
class CsiEstimate:
    h_hat: np.ndarray
    sigma2_hat: float
    n_train: int


def draw_channel(n_tx: int, n_rx: int, rng: np.random.Generator) -> np.ndarray:
    """One (n_rx, n_tx) matrix of i.i.d. CN(0, 1) entries."""
    return draw_channels(1, n_tx, n_rx, rng)[0]


def draw_channels(n: int, n_tx: int, n_rx: int, rng: np.random.Generator) -> np.ndarray:
    """(n, n_rx, n_tx) batch of i.i.d. CN(0, 1) matrices."""
    if n_tx < 1 or n_rx < 1:
        raise ValueError("antenna counts must be positive")
    re = rng.standard_normal((n, n_rx, n_tx))
    im = rng.standard_normal((n, n_rx, n_tx))
    return (re + 1j * im) / np.sqrt(2.0)


def awgn(shape, sigma_v2: float, rng: np.random.Generator) -> np.ndarray:
    """Complex Gaussian noise with per-component variance sigma_v2."""
    if sigma_v2 == 0.0:
        return np.zeros(shape, dtype=complex)
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return np.sqrt(sigma_v2 / 2.0) * (re + 1j * im)


def transmit(h: np.ndarray, x: np.ndarray, sigma_v2: float, rng: np.random.Generator) -> np.ndarray:
    """y = H x + v for a single vector."""
    h = np.asarray(h)
    x = np.asarray(x)
    if x.shape[0] != h.shape[1]:
        raise ValueError(f"dimension mismatch: H is {h.shape}, x has length {x.shape[0]}")
    return h @ x + awgn(h.shape[0], sigma_v2, rng)


def transmit_batch(h: np.ndarray, x: np.ndarray, sigma_v2: float, rng: np.random.Generator) -> np.ndarray:
    """y = H x + v for a batch; h is (n, n_rx, n_tx) or a shared (n_rx, n_tx)."""
    x = np.asarray(x)
    if h.ndim == 2:
        clean = x @ h.T
    else:
        clean = np.einsum("nrt,nt->nr", h, x)
    return clean + awgn(clean.shape, sigma_v2, rng)


def orthogonal_training(n_tx: int, n_train: int, total_energy: float = 1.0) -> np.ndarray:
    """(n_tx, n_train) training matrix with Xp Xp^H = (n_train*Es/n_tx) I.

    Rows are scaled DFT rows, so ||Xp||_F^2 = n_train * Es (same power per
    channel use as the data).
    """
    if n_train < n_tx:
        raise ValueError(f"training length {n_train} shorter than {n_tx} transmit antennas")
    k = np.arange(n_tx)[:, None]
    n = np.arange(n_train)[None, :]
    rows = np.exp(-2j * np.pi * k * n / n_train)
    return np.sqrt(total_energy / n_tx) * rows


def estimate_csi(y_train: np.ndarray, x_train: np.ndarray) -> CsiEstimate:
    """Least-squares channel estimate plus residual-based noise variance.

    h_hat = Y Xp^H (Xp Xp^H)^-1 and sigma2_hat is the mean power of Y in the
    orthogonal complement of the training row space, which needs
    n_train > n_tx.
    """
    y_train = np.asarray(y_train)
    x_train = np.asarray(x_train)
    n_tx, n_train = x_train.shape
    n_rx = y_train.shape[0]
    if n_train <= n_tx:
        raise ValueError("noise variance estimation needs n_train > n_tx")
    gram = x_train @ x_train.conj().T
    if np.linalg.cond(gram) > 1e12:
        raise np.linalg.LinAlgError("training matrix is (numerically) rank deficient")
    h_hat = y_train @ x_train.conj().T @ np.linalg.inv(gram)
    resid = y_train - h_hat @ x_train
    sigma2_hat = float(np.sum(np.abs(resid) ** 2) / (n_rx * (n_train - n_tx)))
    return CsiEstimate(h_hat, sigma2_hat, n_train)


def estimate_csi_batch(y_train: np.ndarray, x_train: np.ndarray):
    """Batched version of estimate_csi: y_train is (n, n_rx, n_train).

    Returns (h_hat (n, n_rx, n_tx), sigma2_hat (n,)).
    """
    x_train = np.asarray(x_train)
    n_tx, n_train = x_train.shape
    if n_train <= n_tx:
        raise ValueError("noise variance estimation needs n_train > n_tx")
    gram_inv = np.linalg.inv(x_train @ x_train.conj().T)
    proj = x_train.conj().T @ gram_inv  # (n_train, n_tx)
    h_hat = y_train @ proj
    resid = y_train - h_hat @ x_train
    n_rx = y_train.shape[1]
    sigma2_hat = np.sum(np.abs(resid) ** 2, axis=(1, 2)) / (n_rx * (n_train - n_tx))
    return h_hat, sigma2_hat


def simulate_training(
    h: np.ndarray, sigma_v2: float, n_train: int, total_energy: float, rng: np.random.Generator
):
    """Run one orthogonal training phase per channel and estimate CSI.

    h is (n, n_rx, n_tx); returns (h_hat, sigma2_hat) batches.
    """
    n, n_rx, n_tx = h.shape
    x_train = orthogonal_training(n_tx, n_train, total_energy)
    clean = h @ x_train
    y_train = clean + awgn(clean.shape, sigma_v2, rng)
    return estimate_csi_batch(y_train, x_train)
