"""Doubly-dispersive multipath channel with per-path Doppler scaling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import NoiseModel, SystemConfig, derive_dims


@dataclass(frozen=True)
class PathSet:
    """Per-path complex amplitude, delay (s) and Doppler scaling factor."""

    amplitudes: np.ndarray
    delays: np.ndarray
    doppler: np.ndarray

    def __post_init__(self):
        n = len(self.amplitudes)
        if len(self.delays) != n or len(self.doppler) != n:
            raise ValueError("path arrays must share a common length")

    def __len__(self) -> int:
        return len(self.amplitudes)

    def __add__(self, other: "PathSet") -> "PathSet":
        return PathSet(
            np.concatenate([self.amplitudes, other.amplitudes]),
            np.concatenate([self.delays, other.delays]),
            np.concatenate([self.doppler, other.doppler]),
        )

    @classmethod
    def single(cls, amplitude: complex = 1.0, delay: float = 0.0, doppler: float = 0.0) -> "PathSet":
        return cls(
            np.array([amplitude], dtype=complex),
            np.array([delay], dtype=float),
            np.array([doppler], dtype=float),
        )


def sinc(x):
    """Normalized sinc, sin(pi x) / (pi x) with sinc(0) = 1."""
    return np.sinc(x)


def sample_paths(config: SystemConfig, stream: np.random.Generator) -> PathSet:
    """Draw A_p ~ CN(0,1), tau_p ~ U(0, tau_max), a_p ~ U(1/(1+a_max) - 1, a_max)."""
    P = config.P
    re = stream.normal(0.0, np.sqrt(0.5), P)
    im = stream.normal(0.0, np.sqrt(0.5), P)
    delays = stream.uniform(0.0, config.tau_max, P)
    low = 1.0 / (1.0 + config.a_max) - 1.0
    doppler = stream.uniform(low, config.a_max, P)
    return PathSet(re + 1j * im, delays, doppler)


def path_gain(amplitude, delay, f_c):
    """Complex gain A_p exp(-j 2 pi f_c tau_p)."""
    return amplitude * np.exp(-2j * np.pi * f_c * delay)


def assemble_channel(paths: PathSet, config: SystemConfig) -> np.ndarray:
    """Build the M' x M channel matrix as a sum of per-path terms.

    Each path contributes ``xi_p * diag(lambda_p) @ Gamma_p`` where
    ``lambda_p[m'] = exp(j 2 pi f_c a_p m'/F_s)`` and ``Gamma_p`` holds
    ``sinc(B gamma - m B/F_s)`` with ``gamma = (a_p + 1) m'/F_s - tau_p``.
    Rows with gamma outside ``[0, T]`` receive no contribution from that path.
    """
    M, M_prime, _ = derive_dims(config)
    F_s, B, f_c, T = config.F_s, config.B, config.f_c, config.T
    rows = np.arange(M_prime, dtype=float)
    cols = np.arange(M, dtype=float)
    H = np.zeros((M_prime, M), dtype=complex)
    for A, tau, a in zip(paths.amplitudes, paths.delays, paths.doppler):
        xi = path_gain(A, tau, f_c)
        lam = np.exp(2j * np.pi * f_c * a * rows / F_s)
        gamma = (a + 1.0) * rows / F_s - tau
        valid = (gamma >= 0.0) & (gamma <= T)
        gamma_rows = np.sinc(B * gamma[valid, None] - cols[None, :] * (B / F_s))
        H[valid] += (xi * lam[valid])[:, None] * gamma_rows
    return H


def complex_noise(stream: np.random.Generator, shape, sigma_sq: float) -> np.ndarray:
    """Circular complex Gaussian samples with total variance ``sigma_sq``."""
    scale = np.sqrt(sigma_sq / 2.0)
    re = stream.normal(0.0, scale, shape)
    im = stream.normal(0.0, scale, shape)
    return re + 1j * im


def apply_channel(H: np.ndarray, x: np.ndarray, noise: NoiseModel, stream: np.random.Generator) -> np.ndarray:
    """Return ``H x + w`` with w ~ CN(0, sigma_n^2 I)."""
    if H.shape[1] != x.shape[0]:
        raise ValueError(f"channel has {H.shape[1]} columns but x has length {x.shape[0]}")
    r = H @ x
    return r + complex_noise(stream, r.shape, noise.sigma_n_sq)
