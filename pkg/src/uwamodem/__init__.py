"""Learned modulation/demodulation matrices for doubly-dispersive underwater acoustic links.

The package builds sampled multipath channels with per-path Doppler scaling,
the ZP-OFDM baseline modem, a rate-based design criterion with analytic
gradients, a small multi-resolution CNN trained in two stages, and Monte
Carlo link evaluation.
"""

from .config import DESK, PAPER, PROFILES, NoiseModel, SystemConfig, derive_dims, snr_from_db, spawn_stream
from .modem import Modem, equivalent_channel, normalize_modem, zp_ofdm_modem

__all__ = [
    "DESK",
    "PAPER",
    "PROFILES",
    "Modem",
    "NoiseModel",
    "SystemConfig",
    "derive_dims",
    "equivalent_channel",
    "normalize_modem",
    "snr_from_db",
    "spawn_stream",
    "zp_ofdm_modem",
]
__version__ = "0.1.0"
