"""Dataset generation and the two-stage training procedure."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import net
from .channel import assemble_channel, sample_paths
from .config import SystemConfig, derive_dims, snr_from_db, spawn_stream
from .criterion import (
    criterion_and_grad,
    criterion_values,
    equivalent_channel_backward,
    pair_distance,
    subchannel_rates,
)
from .modem import Modem, ModemError, equivalent_channel, normalize_modem, zp_ofdm_modem

log = logging.getLogger(__name__)

EVAL_CHUNK = 50


@dataclass
class Dataset:
    """Channel matrices ``H`` (count, M', M) and their ZP-OFDM equivalents (count, N, N)."""

    config: SystemConfig
    H: np.ndarray
    h_e_ofdm: np.ndarray

    def __len__(self) -> int:
        return self.H.shape[0]

    def __getitem__(self, idx) -> "Dataset":
        if isinstance(idx, (int, np.integer)):
            idx = slice(int(idx), int(idx) + 1)
        return Dataset(self.config, self.H[idx], self.h_e_ofdm[idx])

    @property
    def h_images(self) -> np.ndarray:
        """Real (count, 2, M', M) tensor: channel 0 real part, channel 1 imaginary part."""
        return np.stack([self.H.real, self.H.imag], axis=1)

    @property
    def h_e_ofdm_images(self) -> np.ndarray:
        return np.stack([self.h_e_ofdm.real, self.h_e_ofdm.imag], axis=1)

    @classmethod
    def empty(cls, config: SystemConfig) -> "Dataset":
        M, M_prime, _ = derive_dims(config)
        return cls(config, np.zeros((0, M_prime, M), complex), np.zeros((0, config.N, config.N), complex))


def generate_dataset(config: SystemConfig, count: int, stream: np.random.Generator) -> Dataset:
    """Draw ``count`` channels and pair each with its ZP-OFDM equivalent channel."""
    if count < 0:
        raise ValueError("count must be non-negative")
    if count == 0:
        return Dataset.empty(config)
    modem = zp_ofdm_modem(config)
    H = np.stack([assemble_channel(sample_paths(config, stream), config) for _ in range(count)])
    return Dataset(config, H, equivalent_channel(modem, H))


@dataclass(frozen=True)
class TrainingPlan:
    e1: int = 50
    e2: int = 50
    batch_size: int = 20
    n_train: int = 500
    n_val: int = 100
    n_test: int = 200

    def __post_init__(self):
        if min(self.e1, self.e2) < 0 or min(self.batch_size, self.n_train, self.n_val, self.n_test) < 1:
            raise ValueError("plan sizes must be positive (epochs non-negative)")
        if self.batch_size % 2:
            raise ValueError("batch_size must be even")


DESK_PLAN = TrainingPlan()
PAPER_PLAN = TrainingPlan(e1=400, e2=400, batch_size=100, n_train=15000, n_val=5000, n_test=10000)
PLANS = {"desk": DESK_PLAN, "paper": PAPER_PLAN}


def _baseline_f(dataset: Dataset, config: SystemConfig) -> np.ndarray:
    noise = snr_from_db(config.snr_train_db)
    psi_ofdm = zp_ofdm_modem(config).psi_h
    return criterion_values(subchannel_rates(dataset.h_e_ofdm, psi_ofdm, noise), config.K)


def predict(params: net.NetworkParams, dataset: Dataset, mode: str = "eval"):
    """Network outputs for every channel of ``dataset`` (eval mode, chunked)."""
    phis, psis = [], []
    images = dataset.h_images
    for start in range(0, len(dataset), EVAL_CHUNK):
        phi, psi_h, _ = net.forward(params, images[start:start + EVAL_CHUNK], mode, update_stats=False)
        phis.append(phi)
        psis.append(psi_h)
    return np.concatenate(phis), np.concatenate(psis)


def _learned_f(H, phi, psi_h, config):
    noise = snr_from_db(config.snr_train_db)
    return criterion_values(subchannel_rates(psi_h @ H @ phi, psi_h, noise), config.K)


def validate_stage1(params, dataset: Dataset, config: SystemConfig) -> float:
    phi, psi_h = predict(params, dataset)
    return float(np.mean(_baseline_f(dataset, config) - _learned_f(dataset.H, phi, psi_h, config)))


def validate_stage2(params, dataset: Dataset, config: SystemConfig) -> dict:
    """Stage-II metrics on the validation set, pairing its first half with its second half."""
    phi, psi_h = predict(params, dataset)
    loss1 = _baseline_f(dataset, config) - _learned_f(dataset.H, phi, psi_h, config)
    half = len(dataset) // 2
    if half == 0:
        dist = np.zeros(1)
        perf = loss1[:1]
    else:
        a, b = slice(0, half), slice(half, 2 * half)
        dist = pair_distance(phi[a], phi[b], psi_h[a], psi_h[b])
        perf = loss1[a] + loss1[b]
    alpha = config.alpha
    return {
        "val_loss1": float(loss1.mean()),
        "val_dist": float(dist.mean()),
        "val_loss2": float(alpha * perf.mean() + (1 - alpha) * dist.mean()),
    }


def _stage1_step(params, state, batch: Dataset, f_base, config):
    B = len(batch)
    noise = snr_from_db(config.snr_train_db)
    phi, psi_h, rec = net.forward(params, batch.h_images, "train")
    h_e = psi_h @ batch.H @ phi
    f, g_he, g_psi = criterion_and_grad(h_e, psi_h, noise.inv_snr, config.K)
    g_phi, g_psi = equivalent_channel_backward(batch.H, phi, psi_h, g_he, g_psi)
    grads = net.backward(params, rec, -g_phi / B, -g_psi / B)
    net.adam_step(params.weights, grads, state)
    return float(np.mean(f_base - f))


def stage2_loss_and_grads(phi, psi_h, H, f_base, config):
    """Mean over pairs (first half, second half) of the Stage-II loss and its output gradients."""
    B = phi.shape[0]
    half = B // 2
    noise = snr_from_db(config.snr_train_db)
    alpha = config.alpha
    h_e = psi_h @ H @ phi
    f, g_he, g_psi = criterion_and_grad(h_e, psi_h, noise.inv_snr, config.K)
    g_phi, g_psi = equivalent_channel_backward(H, phi, psi_h, g_he, g_psi)
    g_phi = -alpha * g_phi / half
    g_psi = -alpha * g_psi / half

    a, b = slice(0, half), slice(half, 2 * half)
    d_phi = phi[a] - phi[b]
    d_psi = psi_h[a] - psi_h[b]
    n_phi = np.linalg.norm(d_phi, axis=(-2, -1), keepdims=True)
    n_psi = np.linalg.norm(d_psi, axis=(-2, -1), keepdims=True)
    u_phi = np.divide(d_phi, n_phi, out=np.zeros_like(d_phi), where=n_phi > 0)
    u_psi = np.divide(d_psi, n_psi, out=np.zeros_like(d_psi), where=n_psi > 0)
    w = (1 - alpha) / half
    g_phi[a] += w * u_phi
    g_phi[b] -= w * u_phi
    g_psi[a] += w * u_psi
    g_psi[b] -= w * u_psi

    loss1 = f_base - f
    perf = loss1[a] + loss1[b]
    dist = n_phi[:, 0, 0] + n_psi[:, 0, 0]
    loss = alpha * perf.mean() + (1 - alpha) * dist.mean()
    return loss, perf.mean(), dist.mean(), g_phi, g_psi


def _stage2_step(params, state, batch: Dataset, f_base, config):
    phi, psi_h, rec = net.forward(params, batch.h_images, "train")
    loss, perf, dist, g_phi, g_psi = stage2_loss_and_grads(phi, psi_h, batch.H, f_base, config)
    grads = net.backward(params, rec, g_phi, g_psi)
    net.adam_step(params.weights, grads, state)
    return loss, perf, dist


def _batches(n: int, batch_size: int, stream: np.random.Generator):
    order = stream.permutation(n)
    for start in range(0, n - batch_size + 1, batch_size):
        yield order[start:start + batch_size]


def train_stage1(params: net.NetworkParams, train: Dataset, val: Dataset, plan: TrainingPlan,
                 config: SystemConfig, state: net.AdamState | None = None):
    """Mini-batch Adam on the mean Stage-I loss; keeps the best parameters by validation loss."""
    if len(train) == 0:
        raise ValueError("empty training set")
    if len(train) < plan.batch_size:
        raise ValueError(f"training set ({len(train)}) smaller than batch size ({plan.batch_size})")
    state = state or net.AdamState.fresh(params)
    stream = spawn_stream(config.seed, "batches-stage1")
    f_base = _baseline_f(train, config)
    best, best_val = params.copy(), np.inf
    history = []
    for epoch in range(1, plan.e1 + 1):
        losses = [
            _stage1_step(params, state, train[idx], f_base[idx], config)
            for idx in _batches(len(train), plan.batch_size, stream)
        ]
        val_loss1 = validate_stage1(params, val, config)
        row = {"stage": 1, "epoch": epoch, "train_loss": float(np.mean(losses)), "val_loss1": val_loss1}
        history.append(row)
        log.info("stage 1 epoch %d: train %.4f val loss1 %.4f", epoch, row["train_loss"], val_loss1)
        if val_loss1 < best_val:
            best, best_val = params.copy(), val_loss1
    return best, history


def train_stage2(params: net.NetworkParams, train: Dataset, val: Dataset, plan: TrainingPlan,
                 config: SystemConfig, state: net.AdamState | None = None):
    """Stage II: each batch is split into two halves whose outputs are pulled together."""
    if len(train) < plan.batch_size:
        raise ValueError(f"training set ({len(train)}) smaller than batch size ({plan.batch_size})")
    state = state or net.AdamState.fresh(params)
    stream = spawn_stream(config.seed, "batches-stage2")
    f_base = _baseline_f(train, config)
    best, best_val = params.copy(), np.inf
    history = []
    for epoch in range(1, plan.e2 + 1):
        steps = [
            _stage2_step(params, state, train[idx], f_base[idx], config)
            for idx in _batches(len(train), plan.batch_size, stream)
        ]
        loss, perf, dist = (float(v) for v in np.mean(steps, axis=0))
        row = {"stage": 2, "epoch": epoch, "train_loss": loss, "train_perf": perf, "train_dist": dist}
        row.update(validate_stage2(params, val, config))
        history.append(row)
        log.info("stage 2 epoch %d: train %.4f val loss2 %.4f dist %.4f", epoch, loss, row["val_loss2"],
                 row["val_dist"])
        if row["val_loss2"] < best_val:
            best, best_val = params.copy(), row["val_loss2"]
    return best, history


def finalize_modem(params: net.NetworkParams, val: Dataset) -> Modem:
    """Average the eval-mode outputs over ``val`` and renormalize."""
    if len(val) == 0:
        raise ModemError("cannot finalize a modem from an empty validation set")
    phi, psi_h = predict(params, val)
    return normalize_modem(phi.mean(axis=0), psi_h.mean(axis=0))


@dataclass
class TrainingResult:
    params: net.NetworkParams
    modem: Modem
    history: list
    state: net.AdamState
    stage2_start: dict = field(default_factory=dict)


def train(config: SystemConfig, arch: net.ArchConfig, plan: TrainingPlan, train_set: Dataset,
          val_set: Dataset, params: net.NetworkParams | None = None) -> TrainingResult:
    """Stage I, then Stage II, then the averaged final modem."""
    M, M_prime, _ = derive_dims(config)
    if params is None:
        params = net.init_params(arch, (M, M_prime, config.N), spawn_stream(config.seed, "init"))
    params, hist1 = train_stage1(params, train_set, val_set, plan, config, net.AdamState.fresh(params))
    # Stage-II validation metrics before any Stage-II update (the Stage-I endpoint).
    start = validate_stage2(params, val_set, config) if plan.e2 else {}
    # Stage II gets its own optimizer: its gradients are about alpha times the Stage-I ones,
    # so inherited second moments would shrink its steps for hundreds of iterations.
    state = net.AdamState.fresh(params)
    params, hist2 = train_stage2(params, train_set, val_set, plan, config, state)
    return TrainingResult(params, finalize_modem(params, val_set), hist1 + hist2, state, start)
