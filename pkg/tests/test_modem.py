import numpy as np
import pytest
from helpers import triple_product_loop

from uwamodem.channel import PathSet, assemble_channel, sample_paths
from uwamodem.config import DESK, PAPER, derive_dims, spawn_stream
from uwamodem.modem import (
    Modem,
    ModemError,
    demodulate,
    dft_matrix,
    equivalent_channel,
    modulate,
    normalize_modem,
    overlap_add_matrix,
    subcarrier_indices,
    zp_ofdm_modem,
    zp_ofdm_modem_dims,
)


def _cn(rng, *shape):
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


def test_dft_small():
    np.testing.assert_allclose(dft_matrix(1), [[1]])
    np.testing.assert_allclose(dft_matrix(2), np.array([[1, 1], [1, -1]]) / np.sqrt(2), atol=1e-16)


@pytest.mark.parametrize("M", [3, 16, 128])
def test_dft_unitary(M):
    F = dft_matrix(M)
    np.testing.assert_allclose(F @ F.conj().T, np.eye(M), atol=1e-12)


def test_subcarrier_indices():
    assert list(subcarrier_indices(4, 4)) == [0, 1, 2, 3]
    assert list(subcarrier_indices(4, 2)) == [0, 2]
    k = subcarrier_indices(128, 70)
    assert len(k) == 70 and k[0] == 0 and k[-1] <= 127 and np.all(np.diff(k) > 0)
    with pytest.raises(ModemError):
        subcarrier_indices(4, 5)


def test_overlap_add_examples():
    expected = [[0, 0, 1, 0, 0, 0], [0, 0, 0, 1, 0, 0], [1, 0, 0, 0, 1, 0], [0, 1, 0, 0, 0, 1]]
    np.testing.assert_array_equal(overlap_add_matrix(4, 6), expected)
    np.testing.assert_array_equal(overlap_add_matrix(4, 4), np.eye(4))
    with pytest.raises(ModemError):
        overlap_add_matrix(4, 3)
    with pytest.raises(ModemError):
        overlap_add_matrix(4, 9)


@pytest.mark.parametrize("M, Mp", [(4, 6), (16, 24), (128, 228), (5, 10)])
def test_overlap_add_is_rotated_fold(M, Mp):
    L = Mp - M
    plain = np.hstack([np.eye(M), np.eye(M)[:, :L]])
    np.testing.assert_array_equal(overlap_add_matrix(M, Mp), np.roll(plain, -L, axis=0))


@pytest.mark.parametrize("config", [DESK, PAPER], ids=["desk", "full"])
def test_zp_ofdm_energies(config):
    modem = zp_ofdm_modem(config)
    M, Mp, _ = derive_dims(config)
    e_phi, e_psi = modem.energies()
    assert e_phi == pytest.approx(config.N, rel=1e-12)
    assert e_psi == pytest.approx(config.N * Mp / M, rel=1e-9)
    modem.check_energy()


def test_zp_ofdm_degenerate():
    modem = zp_ofdm_modem_dims(8, 8, 8)
    F = dft_matrix(8)
    np.testing.assert_allclose(modem.phi, F.conj().T)
    np.testing.assert_allclose(modem.psi_h, F)
    np.testing.assert_allclose(equivalent_channel(modem, np.eye(8)), np.eye(8), atol=1e-12)


def test_equivalent_channel_selection():
    M, Mp, N = 6, 9, 4
    modem = Modem(np.eye(M)[:, :N].astype(complex), np.eye(Mp)[:N].astype(complex))
    H = np.vstack([np.eye(M), np.zeros((Mp - M, M))])
    np.testing.assert_allclose(equivalent_channel(modem, H), np.eye(N))


@pytest.mark.parametrize("config", [DESK, PAPER], ids=["desk", "full"])
def test_ofdm_diagonalizes_integer_delay(config):
    modem = zp_ofdm_modem(config)
    for delay in (0.0, 3 / config.F_s):
        H = assemble_channel(PathSet.single(delay=delay), config.replace(a_max=0.0))
        h_e = equivalent_channel(modem, H)
        off = h_e - np.diag(np.diag(h_e))
        assert np.max(np.abs(off)) < 1e-9
        np.testing.assert_allclose(np.abs(np.diag(h_e)), 1.0, atol=1e-9)


def test_equivalent_channel_bruteforce_and_batch():
    rng = np.random.default_rng(0)
    modem = Modem(_cn(rng, 6, 4), _cn(rng, 4, 8))
    Hs = _cn(rng, 3, 8, 6)
    batch = equivalent_channel(modem, Hs)
    for H, h_e in zip(Hs, batch):
        np.testing.assert_allclose(h_e, triple_product_loop(modem.psi_h, H, modem.phi), atol=1e-12)
    with pytest.raises(ModemError):
        equivalent_channel(modem, np.zeros((6, 8)))


def test_normalize():
    modem = zp_ofdm_modem(DESK)
    same = normalize_modem(modem.phi, modem.psi_h)
    np.testing.assert_allclose(same.phi, modem.phi, atol=1e-14)
    np.testing.assert_allclose(same.psi_h, modem.psi_h, atol=1e-14)
    scaled = normalize_modem(2 * modem.phi, modem.psi_h)
    np.testing.assert_allclose(scaled.phi, modem.phi, atol=1e-14)

    rng = np.random.default_rng(1)
    out = normalize_modem(_cn(rng, 16, 10), _cn(rng, 10, 24))
    e_phi, e_psi = out.energies()
    assert abs(e_phi - 10) < 1e-12 and abs(e_psi - 15) < 1e-12
    with pytest.raises(ModemError):
        normalize_modem(np.zeros((16, 10)), _cn(rng, 10, 24))


def test_modem_shape_checks():
    with pytest.raises(ModemError):
        Modem(np.zeros((6, 4), complex), np.zeros((3, 8), complex))
    with pytest.raises(ModemError):
        Modem(np.ones((16, 10), complex), np.ones((10, 24), complex)).check_energy()


def test_modulate_demodulate():
    rng = np.random.default_rng(2)
    modem = zp_ofdm_modem(DESK)
    assert np.all(modulate(modem, np.zeros(10)) == 0)
    assert np.all(demodulate(modem, np.zeros(24)) == 0)
    s = _cn(rng, 10)
    np.testing.assert_allclose(modulate(modem, s), modem.phi @ s, atol=1e-14)
    r = _cn(rng, 24)
    np.testing.assert_allclose(demodulate(modem, r), modem.psi_h @ r, atol=1e-14)

    sel = Modem(np.eye(6)[:, [1, 3]].astype(complex), np.eye(8)[[1, 3]].astype(complex))
    np.testing.assert_allclose(modulate(sel, np.array([5, 7])), [0, 5, 0, 7, 0, 0])
    np.testing.assert_allclose(demodulate(sel, np.arange(8.0)), [1, 3])
    with pytest.raises(ModemError):
        modulate(modem, np.zeros(9))
    with pytest.raises(ModemError):
        demodulate(modem, np.zeros(9))


def test_ofdm_roundtrip_random_channel_is_finite():
    H = assemble_channel(sample_paths(DESK, spawn_stream(0, "paths")), DESK)
    h_e = equivalent_channel(zp_ofdm_modem(DESK), H)
    assert h_e.shape == (10, 10) and np.all(np.isfinite(h_e))
