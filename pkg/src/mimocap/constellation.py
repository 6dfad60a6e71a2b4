"""Square QAM alphabets, bit labelings, and the bits <-> symbol-vector mapper.

Labels are integers whose binary expansion is the bit pattern; the first bit
of a label is its most significant bit.  Constellation points are stored
indexed by label, so ``points[label]`` is the complex symbol for that label
and the point-index <-> label bijection is the identity.

Gray labeling uses a per-axis reflected Gray code with the first m/2 label
bits on the in-phase axis and the remaining bits on the quadrature axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SUPPORTED_ORDERS = (4, 16, 64)

GRAY = "gray"
SET_PARTITIONING = "sp"


def gray_sequence(n: int) -> np.ndarray:
    """Reflected Gray code g(i) = i ^ (i >> 1) for i = 0..n-1."""
    i = np.arange(n)
    return i ^ (i >> 1)


@dataclass(frozen=True)
class Constellation:
    """Unit-average-energy square QAM with a fixed bit labeling.

    points[label] is the symbol for that m-bit label; bit_sets[i, b] lists
    the M/2 labels whose (i+1)-th label bit equals b.
    """

    name: str
    order: int
    bits_per_symbol: int
    labeling: str
    points: np.ndarray = field(repr=False)
    bit_sets: np.ndarray = field(repr=False)  # (m, 2, M/2) int label arrays

    @property
    def levels_per_axis(self) -> int:
        return 1 << (self.bits_per_symbol // 2)

    def scaled_points(self, per_symbol_energy: float) -> np.ndarray:
        """Points scaled to the given average energy per scalar symbol."""
        return self.points * np.sqrt(per_symbol_energy)

    def quantize(self, values: np.ndarray, per_symbol_energy: float = 1.0) -> np.ndarray:
        """Nearest-point labels for an array of complex values (first-min ties)."""
        pts = self.scaled_points(per_symbol_energy)
        v = np.asarray(values)
        d2 = np.abs(v[..., None] - pts) ** 2
        return np.argmin(d2, axis=-1)

    def bits_of_labels(self, labels: np.ndarray) -> np.ndarray:
        """Labels -> (..., m) bit arrays, first bit most significant."""
        shifts = np.arange(self.bits_per_symbol - 1, -1, -1)
        return ((np.asarray(labels)[..., None] >> shifts) & 1).astype(np.uint8)

    def labels_of_bits(self, bits: np.ndarray) -> np.ndarray:
        """(..., m) bit arrays -> labels."""
        weights = 1 << np.arange(self.bits_per_symbol - 1, -1, -1)
        return np.asarray(bits) @ weights


def _axis_levels(n_levels: int) -> np.ndarray:
    # ascending odd-integer grid -(L-1), ..., -1, 1, ..., L-1
    return 2.0 * np.arange(n_levels) - (n_levels - 1)


def _axis_norm(n_levels: int) -> float:
    # average energy of the square grid: 2*(L^2-1)/3 (2 -> sqrt2, 10, 42)
    return 2.0 * (n_levels**2 - 1) / 3.0


def _gray_points(m: int) -> np.ndarray:
    n_levels = 1 << (m // 2)
    amp = _axis_levels(n_levels) / np.sqrt(_axis_norm(n_levels))
    gray = gray_sequence(n_levels)
    points = np.zeros(1 << m, dtype=complex)
    half = m // 2
    for i_idx in range(n_levels):
        for q_idx in range(n_levels):
            label = (int(gray[i_idx]) << half) | int(gray[q_idx])
            points[label] = amp[i_idx] + 1j * amp[q_idx]
    return points


def _set_partition_points_16() -> np.ndarray:
    # Checkerboard partition chain: each label bit doubles the intra-subset
    # minimum distance (d*sqrt2, 2d, 2*sqrt2*d, 4d).
    amp = _axis_levels(4) / np.sqrt(_axis_norm(4))
    points = np.zeros(16, dtype=complex)
    for i in range(4):
        for q in range(4):
            b1 = (i + q) & 1
            b2 = i & 1
            b3 = ((i + q) >> 1) & 1
            b4 = (i >> 1) & 1
            label = (b1 << 3) | (b2 << 2) | (b3 << 1) | b4
            points[label] = amp[i] + 1j * amp[q]
    return points


def build_constellation(order: int, labeling: str = GRAY) -> Constellation:
    """Build a normalized square QAM constellation with the given labeling.

    order must be 4, 16, or 64; set-partitioning labeling is provided for
    16-QAM only.
    """
    if order not in SUPPORTED_ORDERS:
        raise ValueError(f"unsupported order {order} (expected one of {SUPPORTED_ORDERS})")
    labeling = labeling.lower()
    m = int(np.log2(order))
    if labeling == GRAY:
        points = _gray_points(m)
    elif labeling == SET_PARTITIONING:
        if order != 16:
            raise ValueError(f"set-partitioning labeling is only defined here for 16-QAM, not {order}-QAM")
        points = _set_partition_points_16()
    else:
        raise ValueError(f"unsupported labeling {labeling!r} (expected 'gray' or 'sp')")

    shifts = np.arange(m - 1, -1, -1)
    labels = np.arange(order)
    bits = (labels[:, None] >> shifts) & 1  # (M, m)
    bit_sets = np.zeros((m, 2, order // 2), dtype=np.int64)
    for i in range(m):
        for b in (0, 1):
            bit_sets[i, b] = labels[bits[:, i] == b]

    points.setflags(write=False)
    bit_sets.setflags(write=False)
    name = f"{order}qam-{labeling}"
    return Constellation(name, order, m, labeling, points, bit_sets)


_BY_ID = {
    "4qam-gray": (4, GRAY),
    "16qam-gray": (16, GRAY),
    "16qam-sp": (16, SET_PARTITIONING),
    "64qam-gray": (64, GRAY),
}


def constellation_by_id(name: str) -> Constellation:
    """Look up a constellation by its config string id."""
    key = name.lower()
    if key not in _BY_ID:
        raise ValueError(f"unknown constellation id {name!r} (known: {sorted(_BY_ID)})")
    return build_constellation(*_BY_ID[key])


@dataclass(frozen=True)
class VectorMapper:
    """Maps blocks of m*n_tx bits onto length-n_tx symbol vectors and back."""

    constellation: Constellation
    n_tx: int

    @property
    def n_bits(self) -> int:
        return self.constellation.bits_per_symbol * self.n_tx

    def labels_of_bits(self, bits: np.ndarray) -> np.ndarray:
        """(..., n_bits) bits -> (..., n_tx) per-layer labels."""
        bits = np.asarray(bits)
        if bits.shape[-1] != self.n_bits:
            raise ValueError(f"expected {self.n_bits} bits per vector, got {bits.shape[-1]}")
        m = self.constellation.bits_per_symbol
        grouped = bits.reshape(bits.shape[:-1] + (self.n_tx, m))
        return self.constellation.labels_of_bits(grouped)

    def bits_of_labels(self, labels: np.ndarray) -> np.ndarray:
        """(..., n_tx) per-layer labels -> (..., n_bits) bits."""
        b = self.constellation.bits_of_labels(np.asarray(labels))
        return b.reshape(b.shape[:-2] + (self.n_bits,))

    def map_bits(self, bits: np.ndarray, total_energy: float = 1.0) -> np.ndarray:
        """Bits -> transmit vector with E{||x||^2} = total_energy over uniform bits."""
        labels = self.labels_of_bits(bits)
        scale = np.sqrt(total_energy / self.n_tx)
        return scale * self.constellation.points[labels]

    def demap(self, x: np.ndarray, total_energy: float = 1.0) -> np.ndarray:
        """Transmit vector(s) -> bits (nearest-point inverse of map_bits)."""
        labels = self.constellation.quantize(x, total_energy / self.n_tx)
        return self.bits_of_labels(labels)


# Exhaustive candidate enumeration. Candidate index c encodes the stacked
# label: layer 1 occupies the most significant m bits of c, so the j-th bit
# of the vector label is bit (n_bits - j) of c.
_MAX_TABLE = 1 << 20


def candidate_labels(vm: VectorMapper) -> np.ndarray:
    """(C, n_tx) per-layer labels for all M^n_tx candidate vectors."""
    M = vm.constellation.order
    m = vm.constellation.bits_per_symbol
    count = M**vm.n_tx
    if count > _MAX_TABLE:
        raise ValueError(f"candidate table with {count} entries is too large to enumerate")
    c = np.arange(count)
    shifts = m * np.arange(vm.n_tx - 1, -1, -1)
    return (c[:, None] >> shifts) & (M - 1)


def candidate_vectors(vm: VectorMapper, total_energy: float = 1.0) -> np.ndarray:
    """(C, n_tx) complex candidate transmit vectors (includes energy scaling)."""
    labels = candidate_labels(vm)
    return np.sqrt(total_energy / vm.n_tx) * vm.constellation.points[labels]


def candidate_bits(vm: VectorMapper) -> np.ndarray:
    """(C, n_bits) uint8 bit labels of all candidates."""
    c = np.arange(vm.constellation.order**vm.n_tx)
    shifts = np.arange(vm.n_bits - 1, -1, -1)
    return ((c[:, None] >> shifts) & 1).astype(np.uint8)


def bit_partition(vm: VectorMapper, j: int, b: int):
    """Iterate over the unit-energy symbol vectors whose j-th label bit is b.

    j is 1-based; each partition holds exactly M^n_tx / 2 vectors.
    """
    if not 1 <= j <= vm.n_bits:
        raise ValueError(f"bit position {j} out of range 1..{vm.n_bits}")
    if b not in (0, 1):
        raise ValueError("conditioning bit must be 0 or 1")
    labels = candidate_labels(vm)
    bits = candidate_bits(vm)
    pts = vm.constellation.points
    for row in labels[bits[:, j - 1] == b]:
        yield pts[row]
