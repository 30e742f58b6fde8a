"""Modem matrices: the ZP-OFDM baseline, energy normalization and the equivalent channel."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SystemConfig, derive_dims

ENERGY_RTOL = 1e-9


class ModemError(ValueError):
    pass


@dataclass(frozen=True)
class Modem:
    """Modulation matrix ``phi`` (M x N) and demodulation matrix ``psi_h`` (N x M')."""

    phi: np.ndarray
    psi_h: np.ndarray

    def __post_init__(self):
        if self.phi.ndim != 2 or self.psi_h.ndim != 2:
            raise ModemError("modem matrices must be 2-D")
        if self.phi.shape[1] != self.psi_h.shape[0]:
            raise ModemError(f"phi has {self.phi.shape[1]} columns, psi_h has {self.psi_h.shape[0]} rows")

    @property
    def M(self) -> int:
        return self.phi.shape[0]

    @property
    def N(self) -> int:
        return self.phi.shape[1]

    @property
    def M_prime(self) -> int:
        return self.psi_h.shape[1]

    def energies(self) -> tuple[float, float]:
        return float(np.sum(np.abs(self.phi) ** 2)), float(np.sum(np.abs(self.psi_h) ** 2))

    def target_energies(self) -> tuple[float, float]:
        return float(self.N), self.N * self.M_prime / self.M

    def check_energy(self, rtol: float = ENERGY_RTOL) -> None:
        """Raise ModemError unless both energy budgets hold to ``rtol``."""
        for name, got, want in zip(("phi", "psi_h"), self.energies(), self.target_energies()):
            if abs(got - want) > rtol * want:
                raise ModemError(f"{name} energy {got!r} differs from {want!r}")


def dft_matrix(M: int) -> np.ndarray:
    """Unitary DFT matrix, entry (i, j) = exp(-j 2 pi i j / M) / sqrt(M)."""
    if M < 1:
        raise ValueError("M must be positive")
    k = np.arange(M)
    return np.exp(-2j * np.pi * np.outer(k, k) / M) / np.sqrt(M)


def subcarrier_indices(M: int, N: int) -> np.ndarray:
    """Evenly spread active subcarriers, k_n = floor(n M / N)."""
    if N > M:
        raise ModemError(f"cannot select {N} subcarriers out of {M}")
    return (np.arange(N) * M) // N


def overlap_add_matrix(M: int, M_prime: int) -> np.ndarray:
    """Fold an M'-sample ZP block onto M samples.

    Block rows ``[0, I_{M-L}, 0]`` and ``[I_L, 0, I_L]`` with L = M' - M.
    The result equals plain overlap-add followed by a cyclic rotation by L.
    """
    L = M_prime - M
    if L < 0 or L > M:
        raise ModemError(f"need M <= M' <= 2M, got M={M}, M'={M_prime}")
    R = np.zeros((M, M_prime))
    top = M - L
    R[np.arange(top), L + np.arange(top)] = 1.0
    R[top + np.arange(L), np.arange(L)] = 1.0
    R[top + np.arange(L), M + np.arange(L)] = 1.0
    return R


def zp_ofdm_modem(config: SystemConfig) -> Modem:
    M, M_prime, _ = derive_dims(config)
    return zp_ofdm_modem_dims(M, M_prime, config.N)


def zp_ofdm_modem_dims(M: int, M_prime: int, N: int) -> Modem:
    F = dft_matrix(M)
    k = subcarrier_indices(M, N)
    phi = F.conj().T[:, k]
    psi_h = F[k, :] @ overlap_add_matrix(M, M_prime)
    return Modem(phi, psi_h)


def normalize_modem(phi_raw: np.ndarray, psi_h_raw: np.ndarray) -> Modem:
    """Scale each matrix so that ||phi||_F^2 = N and ||psi_h||_F^2 = N M'/M."""
    M, N = phi_raw.shape
    M_prime = psi_h_raw.shape[1]
    e_phi = np.sum(np.abs(phi_raw) ** 2)
    e_psi = np.sum(np.abs(psi_h_raw) ** 2)
    if e_phi == 0 or e_psi == 0:
        raise ModemError("cannot normalize a zero matrix")
    phi = phi_raw * np.sqrt(N / e_phi)
    psi_h = psi_h_raw * np.sqrt(N * M_prime / M / e_psi)
    return Modem(phi, psi_h)


def equivalent_channel(modem: Modem, H: np.ndarray) -> np.ndarray:
    """H_e = psi_h @ H @ phi; ``H`` may carry leading batch axes."""
    if H.shape[-2:] != (modem.M_prime, modem.M):
        raise ModemError(f"channel shape {H.shape[-2:]} does not match modem ({modem.M_prime}, {modem.M})")
    return modem.psi_h @ H @ modem.phi


def modulate(modem: Modem, s: np.ndarray) -> np.ndarray:
    if s.shape[0] != modem.N:
        raise ModemError(f"expected {modem.N} symbols, got {s.shape[0]}")
    return modem.phi @ s


def demodulate(modem: Modem, r: np.ndarray) -> np.ndarray:
    if r.shape[0] != modem.M_prime:
        raise ModemError(f"expected {modem.M_prime} samples, got {r.shape[0]}")
    return modem.psi_h @ r
