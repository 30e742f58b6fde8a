"""System configuration, derived dimensions, noise convention and random streams."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class ConfigError(ValueError):
    """Raised for an invalid or inconsistent configuration."""


@dataclass(frozen=True)
class SystemConfig:
    """Physical and learning hyperparameters shared by every module.

    Defaults reproduce the full-scale experiment settings (M=128, M'=228).
    Durations are in seconds, frequencies in Hz.
    """

    f_c: float = 15000.0
    B: float = 10000.0
    F_s: float = 10000.0
    N: int = 70
    T: float = 0.0128
    T_g: float = 0.010
    tau_max: float = 0.010
    a_max: float = 0.001
    P: int = 20
    K: float = 10.0
    alpha: float = 0.01
    snr_train_db: float = 20.0
    seed: int = 0

    def __post_init__(self):
        validate(self)

    @property
    def M(self) -> int:
        return derive_dims(self)[0]

    @property
    def M_prime(self) -> int:
        return derive_dims(self)[1]

    @property
    def L(self) -> int:
        return derive_dims(self)[2]

    def replace(self, **changes) -> "SystemConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "SystemConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "SystemConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path: str | Path) -> "SystemConfig":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def digest(self) -> str:
        """Short hash of the canonical JSON form, used in output provenance lines."""
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


def _floor_samples(seconds: float, F_s: float) -> int:
    # Guard against 0.0128*10000 = 127.99999999999999 style rounding.
    x = F_s * seconds
    n = math.floor(x)
    if math.isclose(x, n + 1, rel_tol=0.0, abs_tol=1e-9 * max(1.0, abs(x))):
        n += 1
    return int(n)


def derive_dims(config: SystemConfig) -> tuple[int, int, int]:
    """Return ``(M, M', L)`` with M = floor(F_s T), M' = floor(F_s (T + T_g)), L = M' - M."""
    if config.T <= 0 or config.T_g < 0:
        raise ConfigError("durations must be positive")
    M = _floor_samples(config.T, config.F_s)
    M_prime = _floor_samples(config.T + config.T_g, config.F_s)
    return M, M_prime, M_prime - M


def validate(config: SystemConfig) -> None:
    if not (config.F_s >= config.B > 0):
        raise ConfigError("require F_s >= B > 0")
    if config.T <= 0:
        raise ConfigError("symbol duration T must be positive")
    if config.T_g < 0:
        raise ConfigError("guard interval T_g must be non-negative")
    if config.P < 1 or config.N < 1:
        raise ConfigError("require P >= 1 and N >= 1")
    if not (0 <= config.tau_max <= config.T_g + 1e-15):
        raise ConfigError("require 0 <= tau_max <= T_g")
    if config.a_max < 0:
        raise ConfigError("a_max must be non-negative")
    if config.K < 1:
        raise ConfigError("amplification factor K must be >= 1")
    if not (0 <= config.alpha <= 1):
        raise ConfigError("alpha must lie in [0, 1]")
    if not math.isfinite(config.snr_train_db):
        raise ConfigError("snr_train_db must be finite")
    M, _, _ = derive_dims(config)
    if config.N > M:
        raise ConfigError(f"N={config.N} exceeds M={M}")


PAPER = SystemConfig()

# Reduced instance: F_s, B and f_c scaled down by 10 and a_max scaled up so the
# normalized Doppler spread f_c * a_max * T stays at 0.192 as in PAPER.
DESK = SystemConfig(
    f_c=1500.0,
    B=1000.0,
    F_s=1000.0,
    N=10,
    T=0.016,
    T_g=0.008,
    tau_max=0.008,
    a_max=0.008,
    P=4,
)

PROFILES = {"paper": PAPER, "desk": DESK}


@dataclass(frozen=True)
class NoiseModel:
    sigma_s_sq: float
    sigma_n_sq: float

    def __post_init__(self):
        if not (self.sigma_s_sq > 0 and self.sigma_n_sq > 0):
            raise ConfigError("noise and symbol powers must be strictly positive")

    @property
    def snr_linear(self) -> float:
        return self.sigma_s_sq / self.sigma_n_sq

    @property
    def inv_snr(self) -> float:
        return self.sigma_n_sq / self.sigma_s_sq


def snr_from_db(snr_db: float) -> NoiseModel:
    """Noise model with unit symbol power and sigma_n^2 = 10^(-snr_db/10)."""
    return NoiseModel(1.0, 10.0 ** (-snr_db / 10.0))


def spawn_stream(seed: int, label: str) -> np.random.Generator:
    """Independent, reproducible generator keyed by ``(seed, label)``.

    The label is hashed into the seed sequence entropy so that streams for
    different purposes never share state.
    """
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
    seq = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *words])
    return np.random.Generator(np.random.PCG64(seq))
