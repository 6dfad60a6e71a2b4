"""Demodulator registry tests: analytic cases, brute-force oracles, batch parity."""

import numpy as np
import pytest

from mimocap import sphere
from mimocap.channel import draw_channels, simulate_training, transmit_batch
from mimocap.constellation import build_constellation, candidate_bits, candidate_vectors
from mimocap.demod import (
    DemodSpec,
    FrameBatch,
    MimoSystem,
    b_flip,
    b_hard_ml,
    b_lsd,
    b_mmse_hard,
    b_mmse_soft,
    b_soft_map,
    b_zf_hard,
    b_zf_soft,
    demodulate_batch,
    demodulate_frame,
    flip_masks,
    hard_to_llr,
)

ALL_KINDS = [
    "soft_map",
    "max_log",
    "hard_ml",
    "zf_soft",
    "zf_hard",
    "mmse_soft",
    "mmse_hard",
    "mmse_sic",
    "lsd:L=5",
    "flip:init=ml,D=2",
    "flip:init=mmse,D=1",
    "lr_mmse_hard",
    "lr_mmse_flip:D=1",
    "linf_hard",
    "linf_soft",
    "softic:init=zf,iters=2",
]


def make_batch(rng, system, n, snr_db, csi_train=None):
    sigma2 = system.symbol_energy / 10 ** (snr_db / 10)
    bits = rng.integers(0, 2, (n, system.n_bits), dtype=np.uint8)
    x = system.vm.map_bits(bits, system.symbol_energy)
    h = draw_channels(n, system.n_tx, system.n_rx, rng)
    y = transmit_batch(h, x, sigma2, rng)
    if csi_train is None:
        return FrameBatch(system, y, h, sigma2, bits)
    h_hat, s2_hat = simulate_training(h, sigma2, csi_train, system.symbol_energy, rng)
    return FrameBatch(system, y, h, sigma2, bits, h_dem=h_hat, sigma2_dem=s2_hat)


# ---------------------------------------------------------------------------
# spec parsing


def test_spec_parsing_and_labels():
    s = DemodSpec.parse("lsd:L=8")
    assert s.kind == "lsd" and s.list_size == 8 and s.is_soft
    s = DemodSpec.parse("flip:init=mmse,D=2")
    assert (s.init, s.flip_distance) == ("mmse", 2)
    s = DemodSpec.parse("softic:init=zf,iters=3")
    assert s.kind == "soft_ic" and s.iterations == 3
    assert DemodSpec.parse("max_log").label == "max_log"
    assert DemodSpec.parse("lsd:L=8").label == "lsd:L=8"


def test_spec_validation_errors():
    with pytest.raises(ValueError, match="unknown demodulator kind"):
        DemodSpec.parse("turbo")
    with pytest.raises(ValueError, match="list size"):
        DemodSpec.parse("lsd:L=0")
    with pytest.raises(ValueError, match="distance"):
        DemodSpec.parse("flip:init=ml,D=-1")
    with pytest.raises(ValueError, match="iters"):
        DemodSpec.parse("softic:init=zf,iters=-2")
    with pytest.raises(ValueError, match="unknown demodulator parameter"):
        DemodSpec.parse("lsd:Q=3")


# ---------------------------------------------------------------------------
# soft MAP


def test_soft_map_uniform_limit():
    """Posterior flattens as the SNR vanishes (LLR magnitude ~ 1/sqrt(sigma^2))."""
    rng = np.random.default_rng(0)
    system = MimoSystem(build_constellation(4), 4, 4)
    at_m40 = np.max(np.abs(b_soft_map(make_batch(rng, system, 50, snr_db=-40.0))))
    at_m60 = np.max(np.abs(b_soft_map(make_batch(rng, system, 50, snr_db=-60.0))))
    assert at_m40 < 0.2
    assert at_m60 < 0.02


def test_soft_map_scalar_closed_form():
    """1x1 4-QAM: exact per-bit posterior is linear in the matched filter."""
    rng = np.random.default_rng(1)
    system = MimoSystem(build_constellation(4), 1, 1)
    batch = make_batch(rng, system, 200, snr_db=5.0)
    llrs = b_soft_map(batch)
    a = np.sqrt(0.5)
    z = np.conj(batch.h[:, 0, 0]) * batch.y[:, 0]
    want = np.stack([4 * a * z.real, 4 * a * z.imag], axis=1) / batch.sigma2
    np.testing.assert_allclose(llrs, want, rtol=1e-9, atol=1e-12)


def test_soft_map_matches_term_by_term_sum():
    rng = np.random.default_rng(2)
    system = MimoSystem(build_constellation(4), 4, 4)
    batch = make_batch(rng, system, 20, snr_db=6.0)
    llrs = b_soft_map(batch)
    cv = candidate_vectors(system.vm, 1.0)
    cb = candidate_bits(system.vm)
    for i in range(0, 20, 3):
        d = np.sum(np.abs(batch.y[i][None, :] - cv @ batch.h[i].T) ** 2, axis=1)
        w = np.exp(-(d - d.min()) / batch.sigma2)
        for j in range(8):
            want = np.log(w[cb[:, j] == 1].sum()) - np.log(w[cb[:, j] == 0].sum())
            assert abs(llrs[i, j] - want) < 1e-9 * max(1.0, abs(want))


# ---------------------------------------------------------------------------
# linear demodulators


def test_zf_unitary_channel_decouples():
    rng = np.random.default_rng(3)
    system = MimoSystem(build_constellation(16), 2, 2)
    n = 30
    bits = rng.integers(0, 2, (n, 8), dtype=np.uint8)
    x = system.vm.map_bits(bits, 1.0)
    q = np.linalg.qr(rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2)))[0]
    sigma2 = 0.05
    y = transmit_batch(q, x, sigma2, rng)
    batch = FrameBatch(system, y, q, sigma2, bits)
    llrs = b_zf_soft(batch)
    # unitary H: x_hat = Q^H y and per-layer noise stays sigma2
    x_hat = y @ np.conj(q)
    pts = system.constellation.scaled_points(0.5)
    want = np.empty_like(llrs)
    for k in range(2):
        d = np.abs(x_hat[:, k, None] - pts) ** 2
        for i in range(4):
            d0 = d[:, system.constellation.bit_sets[i, 0]].min(axis=1)
            d1 = d[:, system.constellation.bit_sets[i, 1]].min(axis=1)
            want[:, 4 * k + i] = (d0 - d1) / sigma2
    np.testing.assert_allclose(llrs, want, rtol=1e-8, atol=1e-10)


def test_zf_noiseless_recovers_bits():
    rng = np.random.default_rng(4)
    system = MimoSystem(build_constellation(16), 3, 4)
    bits = rng.integers(0, 2, (20, 12), dtype=np.uint8)
    x = system.vm.map_bits(bits, 1.0)
    h = draw_channels(20, 3, 4, rng)
    batch = FrameBatch(system, np.einsum("nrt,nt->nr", h, x), h, 0.0, bits)
    assert np.array_equal(b_zf_hard(batch), bits)


def test_zf_requires_tall_channel():
    rng = np.random.default_rng(5)
    system = MimoSystem(build_constellation(4), 3, 2)
    batch = make_batch(rng, system, 4, 10.0)
    with pytest.raises(ValueError, match="n_rx >= n_tx"):
        b_zf_soft(batch)


def test_zf_singular_channel_gives_zero_llrs():
    system = MimoSystem(build_constellation(4), 2, 2)
    h = np.array([[[1.0 + 0j, 1.0 + 0j], [1.0 + 0j, 1.0 + 0j]]])  # rank one
    y = np.array([[0.3 + 0.1j, -0.2 + 0.4j]])
    bits = np.zeros((1, 4), dtype=np.uint8)
    batch = FrameBatch(system, y, h, 0.1, bits)
    assert np.all(b_zf_soft(batch) == 0.0)


def test_mmse_matches_zf_at_high_snr():
    rng = np.random.default_rng(6)
    system = MimoSystem(build_constellation(4), 4, 4)
    batch = make_batch(rng, system, 40, snr_db=60.0)
    zf = b_zf_soft(batch)
    mmse = b_mmse_soft(batch)
    rel = np.linalg.norm(mmse - zf, axis=1) / np.linalg.norm(zf, axis=1)
    # ill-conditioned draws converge slower; the typical frame is well inside
    assert np.median(rel) < 1e-4
    assert np.max(rel) < 1e-2


def test_mmse_scalar_closed_form():
    """1x1, |h|=1, Es=Mt=1: W = rho/(rho+1) and effective variance 1/rho."""
    system = MimoSystem(build_constellation(4), 1, 1)
    rho = 6.0
    sigma2 = 1.0 / rho
    h = np.array([[[1.0 + 0.0j]]])
    y = np.array([[0.4 - 0.2j]])
    bits = np.zeros((1, 2), dtype=np.uint8)
    batch = FrameBatch(system, y, h, sigma2, bits)
    from mimocap.demod import _mmse_solution

    x_hat, layer_var = _mmse_solution(batch)
    # biased filter output is W*y with W = rho/(rho+1); unbiasing divides W out
    np.testing.assert_allclose(x_hat[0, 0], y[0, 0], rtol=1e-12)
    np.testing.assert_allclose(layer_var[0, 0], sigma2, rtol=1e-12)


def test_mmse_sign_consistency_and_sic_special_cases():
    rng = np.random.default_rng(7)
    system = MimoSystem(build_constellation(16), 1, 2)
    batch = make_batch(rng, system, 60, snr_db=9.0)
    sic = demodulate_batch(DemodSpec.parse("mmse_sic"), batch)
    hard = b_mmse_hard(batch)
    assert np.array_equal(sic, hard)  # single layer: no cancelation steps

    system4 = MimoSystem(build_constellation(4), 4, 4)
    bits = rng.integers(0, 2, (30, 8), dtype=np.uint8)
    x = system4.vm.map_bits(bits, 1.0)
    h = draw_channels(30, 4, 4, rng)
    batch = FrameBatch(system4, np.einsum("nrt,nt->nr", h, x), h, 0.0, bits)
    assert np.array_equal(demodulate_batch(DemodSpec.parse("mmse_sic"), batch), bits)


# ---------------------------------------------------------------------------
# list demodulators


def test_lsd_extremes():
    rng = np.random.default_rng(8)
    system = MimoSystem(build_constellation(4), 2, 3)
    batch = make_batch(rng, system, 50, snr_db=7.0)
    full = b_lsd(batch, 16, clamp=30.0)
    maxlog = demodulate_batch(DemodSpec.parse("max_log"), batch)
    np.testing.assert_allclose(full, maxlog, rtol=1e-10)
    one = b_lsd(batch, 1, clamp=30.0)
    ml_bits = b_hard_ml(batch)
    np.testing.assert_allclose(one, (2.0 * ml_bits - 1.0) * 30.0)


def test_lsd_list_matches_bruteforce():
    rng = np.random.default_rng(9)
    system = MimoSystem(build_constellation(16), 2, 2)
    batch = make_batch(rng, system, 40, snr_db=8.0)
    got = b_lsd(batch, 8, clamp=30.0)
    cv = candidate_vectors(system.vm, 1.0)
    cb = candidate_bits(system.vm)
    for i in range(40):
        d = np.sum(np.abs(batch.y[i][None, :] - cv @ batch.h[i].T) ** 2, axis=1)
        members = np.argsort(d)[:8]
        for j in range(8):
            side0 = [d[c] for c in members if cb[c, j] == 0]
            side1 = [d[c] for c in members if cb[c, j] == 1]
            if not side0:
                want = 30.0  # every candidate carries bit 1
            elif not side1:
                want = -30.0
            else:
                want = (min(side0) - min(side1)) / batch.sigma2
            assert abs(got[i, j] - want) < 1e-9 * max(1.0, abs(want))


def test_flip_masks_sizes():
    assert len(flip_masks(8, 0)) == 1
    assert len(flip_masks(8, 1)) == 9
    assert len(flip_masks(8, 2)) == 37
    assert len(flip_masks(8, 8)) == 256
    with pytest.raises(ValueError, match="out of range"):
        flip_masks(8, 9)


def test_flip_extremes_and_no_clamp_for_positive_distance():
    rng = np.random.default_rng(10)
    system = MimoSystem(build_constellation(4), 2, 2)
    batch = make_batch(rng, system, 60, snr_db=5.0)
    ml_bits = b_hard_ml(batch)
    d0 = b_flip(batch, ml_bits, 0, clamp=30.0)
    np.testing.assert_allclose(d0, (2.0 * ml_bits - 1.0) * 30.0)
    # full-distance flipping equals max-log
    full = b_flip(batch, ml_bits, system.n_bits, clamp=30.0)
    maxlog = demodulate_batch(DemodSpec.parse("max_log"), batch)
    np.testing.assert_allclose(full, maxlog, rtol=1e-10)
    # D >= 1: both hypotheses always present, so nothing hits the clamp rails
    d1 = b_flip(batch, ml_bits, 1, clamp=1e9)
    assert np.max(np.abs(d1)) < 1e8


def test_flip_matches_hamming_ball_bruteforce():
    rng = np.random.default_rng(11)
    system = MimoSystem(build_constellation(4), 2, 2)
    batch = make_batch(rng, system, 30, snr_db=6.0)
    init = b_hard_ml(batch)
    got = b_flip(batch, init, 2, clamp=30.0)
    cv = candidate_vectors(system.vm, 1.0)
    cb = candidate_bits(system.vm)
    for i in range(30):
        d = np.sum(np.abs(batch.y[i][None, :] - cv @ batch.h[i].T) ** 2, axis=1)
        ham = np.sum(cb != init[i][None, :], axis=1)
        members = np.flatnonzero(ham <= 2)
        for j in range(4):
            m0 = d[members[cb[members, j] == 0]].min()
            m1 = d[members[cb[members, j] == 1]].min()
            want = (m0 - m1) / batch.sigma2
            assert abs(got[i, j] - want) < 1e-9 * max(1.0, abs(want))


# ---------------------------------------------------------------------------
# lattice-reduction aided


def test_lr_noiseless_and_orthogonal_matches_mmse():
    rng = np.random.default_rng(12)
    system = MimoSystem(build_constellation(4), 2, 2)
    bits = rng.integers(0, 2, (40, 4), dtype=np.uint8)
    x = system.vm.map_bits(bits, 1.0)
    h = draw_channels(40, 2, 2, rng)
    batch = FrameBatch(system, np.einsum("nrt,nt->nr", h, x), h, 0.0, bits)
    assert np.array_equal(demodulate_batch(DemodSpec.parse("lr_mmse_hard"), batch), bits)

    # orthogonal channels: reduction is trivial, decisions match plain MMSE
    for trial in range(20):
        q = np.linalg.qr(rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2)))[0]
        q = q * np.array([1.3, 0.7])  # unequal column norms stay orthogonal
        yb = transmit_batch(q, x, 0.2, rng)
        batch = FrameBatch(system, yb, q, 0.2, bits)
        lr = demodulate_batch(DemodSpec.parse("lr_mmse_hard"), batch)
        plain = b_mmse_hard(batch)
        assert np.array_equal(lr, plain)


def test_lr_flip_wraps_hard_output():
    rng = np.random.default_rng(13)
    system = MimoSystem(build_constellation(4), 2, 2)
    batch = make_batch(rng, system, 30, snr_db=8.0)
    lr_bits = demodulate_batch(DemodSpec.parse("lr_mmse_hard"), batch)
    got = demodulate_batch(DemodSpec.parse("lr_mmse_flip:D=2"), batch)
    want = b_flip(batch, lr_bits, 2, clamp=30.0)
    np.testing.assert_allclose(got, want, rtol=1e-12)


# ---------------------------------------------------------------------------
# soft interference cancelation


def test_softic_single_layer_equals_maxlog():
    rng = np.random.default_rng(14)
    system = MimoSystem(build_constellation(16), 1, 2)
    batch = make_batch(rng, system, 50, snr_db=8.0)
    maxlog = demodulate_batch(DemodSpec.parse("max_log"), batch)
    for iters in (0, 1, 3):
        got = demodulate_batch(DemodSpec.parse(f"softic:init=zf,iters={iters}"), batch)
        np.testing.assert_allclose(got, maxlog, rtol=1e-8, atol=1e-9)


def test_softic_soft_symbols_bounded():
    rng = np.random.default_rng(15)
    system = MimoSystem(build_constellation(16), 3, 3)
    batch = make_batch(rng, system, 50, snr_db=4.0)
    from mimocap.demod import b_zf_soft

    llrs = b_zf_soft(batch)
    pts = system.constellation.scaled_points(system.per_symbol_energy)
    bit_table = system.constellation.bits_of_labels(np.arange(16)).astype(float)
    ll = llrs.reshape(50, 3, 4)
    z = np.einsum("nki,pi->nkp", ll, bit_table)
    lse = np.logaddexp(0.0, ll).sum(axis=2)
    probs = np.exp(z - lse[..., None])
    np.testing.assert_allclose(probs.sum(axis=2), 1.0, rtol=1e-9)
    soft = probs @ pts
    assert np.max(np.abs(soft)) <= np.max(np.abs(pts)) + 1e-12


# ---------------------------------------------------------------------------
# hard-to-LLR embedding


def test_hard_to_llr_values():
    bits = np.array([1, 0, 1], dtype=np.uint8)
    out = hard_to_llr(bits, 0.1)
    want = np.log(9.0)
    np.testing.assert_allclose(out, [want, -want, want], rtol=1e-12)
    assert np.all(hard_to_llr(bits, 0.5) == 0.0)
    with pytest.raises(ValueError, match="crossover"):
        hard_to_llr(bits, 0.0)
    with pytest.raises(ValueError, match="crossover"):
        hard_to_llr(bits, 1.0)


# ---------------------------------------------------------------------------
# batch/per-frame parity and degenerate-noise behavior


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_batch_matches_frame(kind):
    rng = np.random.default_rng(16)
    system = MimoSystem(build_constellation(4), 3, 4)
    batch = make_batch(rng, system, 12, snr_db=6.0)
    spec = DemodSpec.parse(kind)
    out = demodulate_batch(spec, batch)
    for i in range(0, 12, 5):
        single = demodulate_frame(spec, batch.y[i], batch.h[i], batch.sigma2, system)
        if spec.is_soft:
            np.testing.assert_allclose(out[i], single, rtol=1e-8, atol=1e-9)
        else:
            assert np.array_equal(out[i], single)


def test_batch_matches_frame_with_estimated_csi():
    rng = np.random.default_rng(17)
    system = MimoSystem(build_constellation(4), 2, 3)
    batch = make_batch(rng, system, 10, snr_db=8.0, csi_train=4)
    for kind in ("max_log", "mmse_soft", "hard_ml"):
        spec = DemodSpec.parse(kind)
        out = demodulate_batch(spec, batch)
        for i in range(0, 10, 3):
            single = demodulate_frame(
                spec, batch.y[i], batch.h_dem[i], float(np.asarray(batch.sigma2_dem)[i]), system
            )
            if spec.is_soft:
                np.testing.assert_allclose(out[i], single, rtol=1e-8, atol=1e-9)
            else:
                assert np.array_equal(out[i], single)


def test_all_hard_demodulators_exact_without_noise():
    rng = np.random.default_rng(18)
    system = MimoSystem(build_constellation(16), 2, 4)
    bits = rng.integers(0, 2, (30, 8), dtype=np.uint8)
    x = system.vm.map_bits(bits, 1.0)
    h = draw_channels(30, 2, 4, rng)
    batch = FrameBatch(system, np.einsum("nrt,nt->nr", h, x), h, 0.0, bits)
    for kind in ("hard_ml", "zf_hard", "mmse_hard", "mmse_sic", "lr_mmse_hard", "linf_hard"):
        out = demodulate_batch(DemodSpec.parse(kind), batch)
        assert np.array_equal(out, bits), kind


def test_soft_demodulators_reject_zero_noise():
    system = MimoSystem(build_constellation(4), 2, 2)
    y = np.zeros(2, complex)
    h = np.eye(2, dtype=complex)
    with pytest.raises(ValueError, match="positive"):
        demodulate_frame(DemodSpec.parse("max_log"), y, h, 0.0, system)


def test_soft_hard_sign_consistency():
    rng = np.random.default_rng(19)
    system = MimoSystem(build_constellation(16), 2, 3)
    batch = make_batch(rng, system, 200, snr_db=7.0)
    for soft_kind, hard_kind in (("zf_soft", "zf_hard"), ("mmse_soft", "mmse_hard")):
        llrs = demodulate_batch(DemodSpec.parse(soft_kind), batch)
        hard = demodulate_batch(DemodSpec.parse(hard_kind), batch)
        mask = llrs != 0
        assert np.array_equal((llrs > 0)[mask], (hard == 1)[mask])
