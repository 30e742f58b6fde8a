"""Monte Carlo link evaluation: sub-channel rate sweeps and QPSK bit error rate."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .channel import assemble_channel, complex_noise, sample_paths
from .config import SystemConfig, snr_from_db
from .criterion import subchannel_rates
from .modem import Modem, equivalent_channel

MODES = ("ici_aware", "ici_ignorant")
COND_LIMIT = 1e12
BLOCK_CHUNK = 256


class SingularEqualizerError(np.linalg.LinAlgError):
    """The channel estimate is singular or too ill-conditioned to invert."""


def qpsk_map(bits) -> np.ndarray:
    """Gray-mapped unit-energy QPSK: (b0, b1) -> ((1 - 2 b0) + j (1 - 2 b1)) / sqrt(2)."""
    bits = np.asarray(bits)
    if bits.shape[-1] % 2:
        raise ValueError("QPSK needs an even number of bits")
    b = bits.reshape(*bits.shape[:-1], -1, 2).astype(float)
    return ((1 - 2 * b[..., 0]) + 1j * (1 - 2 * b[..., 1])) / np.sqrt(2)


def qpsk_demap(symbols) -> np.ndarray:
    """Hard quadrant decision, the inverse of ``qpsk_map`` on clean symbols."""
    symbols = np.asarray(symbols)
    bits = np.stack([symbols.real < 0, symbols.imag < 0], axis=-1).astype(np.uint8)
    return bits.reshape(*symbols.shape[:-1], -1)


def lzf_equalize(h_hat: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Least-squares zero forcing z = (H^H H)^-1 H^H y, via a linear solve."""
    if np.linalg.cond(h_hat) > COND_LIMIT:
        raise SingularEqualizerError("channel estimate is singular or ill-conditioned")
    if h_hat.shape[0] == h_hat.shape[1]:
        return np.linalg.solve(h_hat, y)
    return np.linalg.lstsq(h_hat, y, rcond=None)[0]


def _equalize_batch(h_e, y, mode):
    """Batched equalization; returns ``(z, ok)`` with ``ok`` False for skipped blocks."""
    if mode == "ici_ignorant":
        d = np.diagonal(h_e, axis1=-2, axis2=-1)
        ok = np.all(d != 0, axis=-1)
        z = np.divide(y, d, out=np.zeros_like(y), where=d != 0)
        return z, ok
    ok = np.linalg.cond(h_e) <= COND_LIMIT
    z = np.zeros_like(y)
    if np.any(ok):
        z[ok] = np.linalg.solve(h_e[ok], y[ok][..., None])[..., 0]
    return z, ok


@dataclass
class BerCurve:
    label: str
    mode: str
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def ber(self) -> np.ndarray:
        return np.array([r["ber"] for r in self.rows])


@dataclass
class RateReport:
    label: str
    rows: list = field(default_factory=list)


def default_channel_fn(config: SystemConfig) -> Callable[[np.random.Generator], np.ndarray]:
    def draw(stream):
        return assemble_channel(sample_paths(config, stream), config)

    return draw


def simulate_ber(modem: Modem, config: SystemConfig, snr_db_list: Sequence[float], mode: str, blocks: int,
                 stream: np.random.Generator, label: str = "modem",
                 channel_fn: Callable[[np.random.Generator], np.ndarray] | None = None) -> BerCurve:
    """QPSK bit error rate with genie knowledge of the equivalent channel.

    Draws are taken per chunk in the fixed order channels, bits, noise, so two
    calls with identically seeded streams see the same channels, bits and
    noise whatever the modem or mode (common random numbers).
    """
    if blocks < 1:
        raise ValueError("blocks must be >= 1")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    channel_fn = channel_fn or default_channel_fn(config)
    N = modem.N
    curve = BerCurve(label, mode, metadata={"a_max": config.a_max, "blocks": blocks})
    eq_time = 0.0
    for snr_db in snr_db_list:
        noise = snr_from_db(snr_db)
        errors = bits_sent = skipped = 0
        remaining = blocks
        while remaining:
            n = min(BLOCK_CHUNK, remaining)
            remaining -= n
            H = np.stack([channel_fn(stream) for _ in range(n)])
            bits = stream.integers(0, 2, (n, 2 * N), dtype=np.uint8)
            w = complex_noise(stream, (n, H.shape[1]), noise.sigma_n_sq)
            s = qpsk_map(bits)
            x = s @ modem.phi.T
            r = np.einsum("bij,bj->bi", H, x) + w
            y = r @ modem.psi_h.T
            h_e = equivalent_channel(modem, H)
            t0 = time.perf_counter()
            z, ok = _equalize_batch(h_e, y, mode)
            eq_time += time.perf_counter() - t0
            decided = qpsk_demap(z[ok])
            errors += int(np.count_nonzero(decided != bits[ok]))
            bits_sent += int(ok.sum()) * 2 * N
            skipped += int((~ok).sum())
        curve.rows.append({
            "snr_db": float(snr_db),
            "bits": bits_sent,
            "errors": errors,
            "ber": errors / bits_sent if bits_sent else float("nan"),
            "skipped_blocks": skipped,
        })
    curve.metadata["equalizer_seconds"] = eq_time
    return curve


def rate_sweep(modem: Modem, test_channels: np.ndarray, snr_db_list: Sequence[float],
               label: str = "modem") -> RateReport:
    """Mean over channels of the average and of the minimum sub-channel rate, per SNR."""
    test_channels = np.asarray(test_channels)
    if test_channels.ndim == 2:
        test_channels = test_channels[None]
    if len(test_channels) == 0:
        raise ValueError("empty test set")
    h_e = equivalent_channel(modem, test_channels)
    report = RateReport(label)
    for snr_db in snr_db_list:
        rates = subchannel_rates(h_e, modem.psi_h, snr_from_db(snr_db))
        report.rows.append({
            "snr_db": float(snr_db),
            "avg_rate": float(rates.mean(axis=-1).mean()),
            "min_rate": float(rates.min(axis=-1).mean()),
        })
    return report
