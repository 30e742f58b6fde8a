"""Equivalent sub-channel rates, the min/average trade-off criterion and training losses.

All functions accept leading batch axes on ``h_e`` (``(..., N, N)``) and
``psi_h`` (``(..., N, M')``). Gradients use the convention
``dL/dZ = dL/dRe(Z) + 1j * dL/dIm(Z)`` for a real loss L of complex Z.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import NoiseModel
from .modem import Modem

LN2 = np.log(2.0)


@dataclass(frozen=True)
class CriterionValue:
    f: float
    min_rate: float
    min_index: int
    avg_rate: float


def _sinr_terms(h_e, psi_h, inv_snr):
    power = np.abs(h_e) ** 2
    signal = np.diagonal(power, axis1=-2, axis2=-1)
    interference = power.sum(axis=-1) - signal
    noise = inv_snr * np.sum(np.abs(psi_h) ** 2, axis=-1)
    return signal, interference + noise


def subchannel_rates(h_e: np.ndarray, psi_h: np.ndarray, noise: NoiseModel) -> np.ndarray:
    """Per-sub-channel rate log2(1 + SINR_n) in bits per channel use."""
    if h_e.shape[-1] != h_e.shape[-2] or psi_h.shape[-2] != h_e.shape[-1]:
        raise ValueError(f"shape mismatch: h_e {h_e.shape}, psi_h {psi_h.shape}")
    signal, denom = _sinr_terms(h_e, psi_h, noise.inv_snr)
    return np.log1p(signal / denom) / LN2


def criterion_values(rates: np.ndarray, K: float) -> np.ndarray:
    """Vectorized f = sum_n r_n + K N min_n r_n over the last axis."""
    N = rates.shape[-1]
    return rates.sum(axis=-1) + K * N * rates.min(axis=-1)


def criterion_f(rates: np.ndarray, K: float) -> CriterionValue:
    rates = np.asarray(rates, dtype=float)
    if K < 1:
        raise ValueError("K must be >= 1")
    idx = int(np.argmin(rates))
    return CriterionValue(
        f=float(criterion_values(rates, K)),
        min_rate=float(rates[idx]),
        min_index=idx,
        avg_rate=float(rates.mean()),
    )


def criterion_and_grad(h_e, psi_h, inv_snr, K):
    """Return ``(f, dF/dh_e, dF/dpsi_h)`` where the psi gradient is the direct (noise) part only.

    The minimum picks the smallest index on ties.
    """
    N = h_e.shape[-1]
    signal, denom = _sinr_terms(h_e, psi_h, inv_snr)
    if np.any(denom <= 0):
        raise ValueError("sub-channel with zero interference-plus-noise power")
    rates = np.log1p(signal / denom) / LN2
    f = criterion_values(rates, K)

    weight = np.ones_like(rates)
    idx = np.argmin(rates, axis=-1)
    np.put_along_axis(weight, idx[..., None], 1.0 + K * N, axis=-1)

    total = signal + denom
    d_signal = weight / (LN2 * total)
    d_denom = -weight * signal / (LN2 * denom * total)

    g_he = 2.0 * d_denom[..., :, None] * h_e
    diag = np.arange(N)
    g_he[..., diag, diag] = 2.0 * d_signal * h_e[..., diag, diag]
    g_psi = 2.0 * inv_snr * d_denom[..., :, None] * psi_h
    return f, g_he, g_psi


def loss_stage1(h_e, h_e_ofdm, psi_h, psi_h_ofdm, noise: NoiseModel, K: float):
    """f(baseline) - f(learned); negative when the learned modem is better."""
    f_learned = criterion_values(subchannel_rates(h_e, psi_h, noise), K)
    f_base = criterion_values(subchannel_rates(h_e_ofdm, psi_h_ofdm, noise), K)
    return f_base - f_learned


def pair_distance(phi1, phi2, psi1, psi2):
    """g(phi1, phi2) + g(psi1, psi2) with g the Frobenius distance."""
    return np.linalg.norm(phi1 - phi2, axis=(-2, -1)) + np.linalg.norm(psi1 - psi2, axis=(-2, -1))


def loss_stage2(pair1, pair2, baselines, noise: NoiseModel, K: float, alpha: float):
    """alpha * (performance terms of both channels) + (1 - alpha) * (output distance).

    ``pair1``/``pair2`` are ``(h_e, psi_h, phi)``; ``baselines`` is
    ``(h_e_ofdm_1, h_e_ofdm_2, psi_h_ofdm)``.
    """
    if not 0 <= alpha <= 1:
        raise ValueError("alpha must lie in [0, 1]")
    h1, psi1, phi1 = pair1
    h2, psi2, phi2 = pair2
    b1, b2, psi_base = baselines
    perf = loss_stage1(h1, b1, psi1, psi_base, noise, K) + loss_stage1(h2, b2, psi2, psi_base, noise, K)
    return alpha * perf + (1.0 - alpha) * pair_distance(phi1, phi2, psi1, psi2)


def criterion_gradient(H: np.ndarray, modem: Modem, noise: NoiseModel, K: float):
    """Gradient of f with respect to ``modem.phi`` and ``modem.psi_h`` for channel ``H``."""
    phi, psi_h = modem.phi, modem.psi_h
    h_e = psi_h @ H @ phi
    _, g_he, g_psi = criterion_and_grad(h_e, psi_h, noise.inv_snr, K)
    return equivalent_channel_backward(H, phi, psi_h, g_he, g_psi)


def equivalent_channel_backward(H, phi, psi_h, g_he, g_psi=None):
    """Push a gradient on h_e = psi_h H phi back to (phi, psi_h)."""
    hphi = H @ phi
    psih = psi_h @ H
    g_phi = np.swapaxes(psih.conj(), -1, -2) @ g_he
    g_psi_total = g_he @ np.swapaxes(hphi.conj(), -1, -2)
    if g_psi is not None:
        g_psi_total = g_psi_total + g_psi
    return g_phi, g_psi_total
