"""Multi-resolution CNN mapping a channel-matrix image to a modem, with hand-written backprop.

Topology (activations are held as ``(C, B, H, W)`` internally)::

    input 2 x M' x M
      |-- 7x7 pathway: 3 x [conv -> BN -> LeakyReLU], dense inputs
      |-- 3x3 pathway: 3 x [conv -> BN -> LeakyReLU], dense inputs
    concat(last 7x7 output, last 3x3 output)
      -> 1x1 conv -> BN -> LeakyReLU -> adaptive avg pool -> flatten
      -> FC -> LeakyReLU -> FC -> LeakyReLU -> FC
      -> split into Re/Im of phi (M x N) and psi_h (N x M')
      -> energy normalization to N and N M'/M

Inside a pathway, layer ``i`` sees the channel concatenation of the pathway
input and the outputs of layers ``0..i-1``. Convolutions are stride 1 with
zero "same" padding and no bias (the following BN shift plays that role).

Parameter count for ``M, M', N`` and channels ``c``, fused ``F``, pool
``ph x pw``, hidden ``h1, h2``, output ``D = 2(MN + NM')``::

    49 c (2 + (2 + c) + (2 + 2c)) + 9 c (2 + (2 + c) + (2 + 2c))   conv kernels
    + 2 c F                                                         1x1 fusion
    + 2 (6 c + F)                                                   BN scale/shift
    + (F ph pw + 1) h1 + (h1 + 1) h2 + (h2 + 1) D                   FC weights+bias
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sp_fft

from .modem import ModemError

PATHWAYS = (("hi", 7), ("lo", 3))
LAYERS_PER_PATHWAY = 3


@dataclass(frozen=True)
class ArchConfig:
    pathway_channels: int = 16
    fused_channels: int = 8
    pool_grid: tuple[int, int] = (16, 16)
    fc_hidden: tuple[int, int] = (2048, 2048)
    leaky_slope: float = 0.3
    bn_momentum: float = 0.1
    bn_epsilon: float = 1e-5

    def __post_init__(self):
        counts = (self.pathway_channels, self.fused_channels, *self.pool_grid, *self.fc_hidden)
        if min(counts) < 1:
            raise ValueError("all layer sizes must be >= 1")
        if not 0 < self.leaky_slope < 1:
            raise ValueError("leaky_slope must lie in (0, 1)")
        object.__setattr__(self, "pool_grid", tuple(int(v) for v in self.pool_grid))
        object.__setattr__(self, "fc_hidden", tuple(int(v) for v in self.fc_hidden))

    def to_dict(self) -> dict:
        return {
            "pathway_channels": self.pathway_channels,
            "fused_channels": self.fused_channels,
            "pool_grid": list(self.pool_grid),
            "fc_hidden": list(self.fc_hidden),
            "leaky_slope": self.leaky_slope,
            "bn_momentum": self.bn_momentum,
            "bn_epsilon": self.bn_epsilon,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ArchConfig":
        return cls(**data)


PAPER_ARCH = ArchConfig()
# Narrower layers for single-core desk-scale training.
DESK_ARCH = ArchConfig(pathway_channels=8, fused_channels=4, fc_hidden=(256, 256))
TINY_ARCH = ArchConfig(pathway_channels=2, fused_channels=2, pool_grid=(4, 4), fc_hidden=(64, 64))


def pool_shape(arch: ArchConfig, M: int, M_prime: int) -> tuple[int, int]:
    return min(arch.pool_grid[0], M_prime), min(arch.pool_grid[1], M)


def param_shapes(arch: ArchConfig, dims: tuple[int, int, int]) -> dict[str, tuple[int, ...]]:
    """Shapes of every learnable array, in a fixed order."""
    M, M_prime, N = dims
    c, F = arch.pathway_channels, arch.fused_channels
    ph, pw = pool_shape(arch, M, M_prime)
    h1, h2 = arch.fc_hidden
    out = 2 * (M * N + N * M_prime)
    shapes: dict[str, tuple[int, ...]] = {}
    for name, k in PATHWAYS:
        for i in range(LAYERS_PER_PATHWAY):
            shapes[f"{name}{i}.w"] = (c, 2 + i * c, k, k)
            shapes[f"{name}{i}.gamma"] = (c,)
            shapes[f"{name}{i}.beta"] = (c,)
    shapes["fuse.w"] = (F, 2 * c, 1, 1)
    shapes["fuse.gamma"] = (F,)
    shapes["fuse.beta"] = (F,)
    shapes["fc1.w"] = (h1, F * ph * pw)
    shapes["fc1.b"] = (h1,)
    shapes["fc2.w"] = (h2, h1)
    shapes["fc2.b"] = (h2,)
    shapes["fc3.w"] = (out, h2)
    shapes["fc3.b"] = (out,)
    return shapes


def bn_layers() -> list[str]:
    names = [f"{p}{i}" for p, _ in PATHWAYS for i in range(LAYERS_PER_PATHWAY)]
    return names + ["fuse"]


def count_params(arch: ArchConfig, dims: tuple[int, int, int]) -> int:
    return sum(int(np.prod(s)) for s in param_shapes(arch, dims).values())


@dataclass
class NetworkParams:
    """Learnable arrays plus BN running statistics (``stats``, not trained)."""

    arch: ArchConfig
    dims: tuple[int, int, int]  # (M, M', N)
    weights: dict[str, np.ndarray]
    stats: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def dtype(self):
        return self.weights["fc3.w"].dtype

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            self.arch,
            self.dims,
            {k: v.copy() for k, v in self.weights.items()},
            {k: v.copy() for k, v in self.stats.items()},
        )

    def astype(self, dtype) -> "NetworkParams":
        return NetworkParams(
            self.arch,
            self.dims,
            {k: v.astype(dtype) for k, v in self.weights.items()},
            {k: v.astype(dtype) for k, v in self.stats.items()},
        )


def init_params(arch: ArchConfig, dims: tuple[int, int, int], stream: np.random.Generator,
                dtype=np.float64) -> NetworkParams:
    """Fan-in scaled uniform kernels/weights (He bound for leaky ReLU), zero biases, identity BN."""
    weights = {}
    gain = 2.0 / (1.0 + arch.leaky_slope ** 2)
    for name, shape in param_shapes(arch, dims).items():
        if name.endswith(".w"):
            fan_in = int(np.prod(shape[1:]))
            bound = np.sqrt(3.0 * gain / fan_in)
            weights[name] = stream.uniform(-bound, bound, shape).astype(dtype)
        elif name.endswith(".gamma"):
            weights[name] = np.ones(shape, dtype=dtype)
        else:
            weights[name] = np.zeros(shape, dtype=dtype)
    stats = {}
    for layer in bn_layers():
        n = weights[f"{layer}.gamma"].shape[0]
        stats[f"{layer}.mean"] = np.zeros(n, dtype=dtype)
        stats[f"{layer}.var"] = np.ones(n, dtype=dtype)
    return NetworkParams(arch, tuple(dims), weights, stats)


def leaky_relu(x, beta: float = 0.3):
    return np.where(x >= 0, x, beta * x)


def _leaky_grad(g, pre, beta):
    return np.where(pre >= 0, g, beta * g)


# --- convolution on (C, B, H, W) tensors -------------------------------------------------


def _conv_forward(x, w):
    """Stride-1 "same" cross-correlation; returns the output and a cache for backward.

    Kernels wider than 1 are applied by FFT on the zero-padded maps: the
    circular convolution with the flipped kernel has no wrap-around inside the
    cropped window, so the result is exact up to rounding.
    """
    Co, C, k, _ = w.shape
    _, B, H, W = x.shape
    if k == 1:
        return np.tensordot(w[:, :, 0, 0], x, axes=(1, 0)), x
    p = k // 2
    size = (H + 2 * p, W + 2 * p)
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    x_f = np.ascontiguousarray(sp_fft.rfft2(xp).transpose(2, 3, 0, 1))  # (fy, fx, C, B)
    k_f = np.ascontiguousarray(sp_fft.rfft2(w[:, :, ::-1, ::-1], s=size).transpose(2, 3, 0, 1))  # (fy, fx, Co, C)
    y = sp_fft.irfft2((k_f @ x_f).transpose(2, 3, 0, 1), s=size)
    out = np.ascontiguousarray(y[:, :, 2 * p:2 * p + H, 2 * p:2 * p + W], dtype=x.dtype)
    return out, (x_f, k_f, size)


def _conv_backward(g, cache, w):
    Co, C, k, _ = w.shape
    _, B, H, W = g.shape
    if k == 1:
        x = cache
        g2 = g.reshape(Co, -1)
        gw = (g2 @ x.reshape(C, -1).T)[:, :, None, None]
        gx = (w[:, :, 0, 0].T @ g2).reshape(C, B, H, W)
        return gx, gw
    x_f, k_f, size = cache
    p = k // 2
    g_full = np.zeros((Co, B) + size, dtype=g.dtype)
    g_full[:, :, 2 * p:2 * p + H, 2 * p:2 * p + W] = g
    g_f = sp_fft.rfft2(g_full).transpose(2, 3, 0, 1)  # (fy, fx, Co, B)
    gxp = sp_fft.irfft2((k_f.conj().swapaxes(-1, -2) @ g_f).transpose(2, 3, 0, 1), s=size)
    gw_flip = sp_fft.irfft2((g_f @ x_f.conj().swapaxes(-1, -2)).transpose(2, 3, 0, 1), s=size)
    gw = np.ascontiguousarray(gw_flip[:, :, :k, :k][:, :, ::-1, ::-1], dtype=w.dtype)
    gx = np.ascontiguousarray(gxp[:, :, p:p + H, p:p + W], dtype=g.dtype)
    return gx, gw


# --- batch normalization over (B, H, W) per channel ------------------------------------


def _bn_forward(x, gamma, beta, params, layer, train, update_stats):
    arch = params.arch
    if train:
        mean = x.mean(axis=(1, 2, 3))
        var = x.var(axis=(1, 2, 3))
        if update_stats:
            n = x[0].size
            unbiased = var * n / max(n - 1, 1)
            mom = arch.bn_momentum
            params.stats[f"{layer}.mean"] *= 1 - mom
            params.stats[f"{layer}.mean"] += mom * mean
            params.stats[f"{layer}.var"] *= 1 - mom
            params.stats[f"{layer}.var"] += mom * unbiased
    else:
        mean = params.stats[f"{layer}.mean"]
        var = params.stats[f"{layer}.var"]
    inv_std = 1.0 / np.sqrt(var + arch.bn_epsilon)
    xhat = (x - mean[:, None, None, None]) * inv_std[:, None, None, None]
    y = gamma[:, None, None, None] * xhat + beta[:, None, None, None]
    return y, (xhat, inv_std, mean, var)


def _bn_backward(g, cache, gamma):
    xhat, inv_std, _, _ = cache
    n = xhat[0].size
    g_gamma = np.sum(g * xhat, axis=(1, 2, 3))
    g_beta = np.sum(g, axis=(1, 2, 3))
    gxhat = g * gamma[:, None, None, None]
    gx = (inv_std[:, None, None, None] / n) * (
        n * gxhat
        - gxhat.sum(axis=(1, 2, 3))[:, None, None, None]
        - xhat * np.sum(gxhat * xhat, axis=(1, 2, 3))[:, None, None, None]
    )
    return gx, g_gamma, g_beta


def adaptive_pool_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """Averaging matrix with windows [floor(i n/o), ceil((i+1) n/o))."""
    P = np.zeros((n_out, n_in), dtype=dtype)
    for i in range(n_out):
        start = (i * n_in) // n_out
        end = -((-(i + 1) * n_in) // n_out)
        P[i, start:end] = 1.0 / (end - start)
    return P


# --- full network ------------------------------------------------------------------------


@dataclass
class Record:
    """Intermediate values of a forward pass needed by ``backward``."""

    mode: str
    batch: int
    blocks: dict = field(default_factory=dict)


def _block_forward(params, x, layer, train, update_stats, rec):
    w = params.weights
    z, conv_cache = _conv_forward(x, w[f"{layer}.w"])
    y, bn_cache = _bn_forward(z, w[f"{layer}.gamma"], w[f"{layer}.beta"], params, layer, train, update_stats)
    rec.blocks[layer] = (conv_cache, bn_cache, y)
    return leaky_relu(y, params.arch.leaky_slope)


def _block_backward(params, g, layer, rec, grads):
    w = params.weights
    conv_cache, bn_cache, y = rec.blocks[layer]
    g = _leaky_grad(g, y, params.arch.leaky_slope)
    g, grads[f"{layer}.gamma"], grads[f"{layer}.beta"] = _bn_backward(g, bn_cache, w[f"{layer}.gamma"])
    gx, grads[f"{layer}.w"] = _conv_backward(g, conv_cache, w[f"{layer}.w"])
    return gx


def _normalize_forward(raw, target):
    norm = np.sqrt(np.sum(np.abs(raw) ** 2, axis=(-2, -1), keepdims=True))
    if np.any(norm == 0):
        raise ModemError("network emitted an all-zero matrix")
    return raw * (np.sqrt(target) / norm), norm


def _normalize_backward(g, out, norm, target):
    # d/dx of c x/|x| applied to g: (c/|x|) (g - u Re<u, g>), u = x/|x|
    scale = np.sqrt(target)
    u = out / scale
    proj = np.sum((u.conj() * g).real, axis=(-2, -1), keepdims=True)
    return (scale / norm) * (g - u * proj)


def forward(params: NetworkParams, images: np.ndarray, mode: str = "train", update_stats: bool = True):
    """Map ``images`` of shape ``(B, 2, M', M)`` (or a single ``(2, M', M)``) to modems.

    Returns ``(phi, psi_h, record)`` with ``phi`` of shape ``(B, M, N)`` and
    ``psi_h`` of shape ``(B, N, M')``, both energy-normalized. In train mode the
    BN layers use batch statistics and (if ``update_stats``) update the running
    averages in ``params.stats``.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    M, M_prime, N = params.dims
    single = images.ndim == 3
    if single:
        images = images[None]
    if images.shape[1:] != (2, M_prime, M):
        raise ValueError(f"expected images of shape (B, 2, {M_prime}, {M}), got {images.shape}")
    train = mode == "train"
    arch, w = params.arch, params.weights
    dtype = params.dtype
    B = images.shape[0]
    rec = Record(mode, B)

    x0 = np.ascontiguousarray(images.transpose(1, 0, 2, 3), dtype=dtype)
    finals = []
    for name, _ in PATHWAYS:
        feats = [x0]
        for i in range(LAYERS_PER_PATHWAY):
            inp = np.concatenate(feats, axis=0) if len(feats) > 1 else x0
            feats.append(_block_forward(params, inp, f"{name}{i}", train, update_stats, rec))
        finals.append(feats[-1])
    fused_in = np.concatenate(finals, axis=0)
    fused = _block_forward(params, fused_in, "fuse", train, update_stats, rec)

    ph, pw = pool_shape(arch, M, M_prime)
    Ph = adaptive_pool_matrix(M_prime, ph, dtype)
    Pw = adaptive_pool_matrix(M, pw, dtype)
    pooled = np.matmul(Ph, fused @ Pw.T)
    flat = pooled.transpose(1, 0, 2, 3).reshape(B, -1)
    rec.blocks["pool"] = (Ph, Pw, fused.shape)

    beta = arch.leaky_slope
    z1 = flat @ w["fc1.w"].T + w["fc1.b"]
    a1 = leaky_relu(z1, beta)
    z2 = a1 @ w["fc2.w"].T + w["fc2.b"]
    a2 = leaky_relu(z2, beta)
    out = a2 @ w["fc3.w"].T + w["fc3.b"]
    rec.blocks["fc"] = (flat, z1, a1, z2, a2)

    MN, NMp = M * N, N * M_prime
    phi_raw = (out[:, :MN] + 1j * out[:, MN:2 * MN]).reshape(B, M, N)
    psi_raw = (out[:, 2 * MN:2 * MN + NMp] + 1j * out[:, 2 * MN + NMp:]).reshape(B, N, M_prime)
    phi, phi_norm = _normalize_forward(phi_raw, N)
    psi_h, psi_norm = _normalize_forward(psi_raw, N * M_prime / M)
    rec.blocks["out"] = (phi, phi_norm, psi_h, psi_norm)
    if single:
        return phi[0], psi_h[0], rec
    return phi, psi_h, rec


def backward(params: NetworkParams, record: Record, grad_phi: np.ndarray, grad_psi_h: np.ndarray) -> dict:
    """Gradients of a real loss w.r.t. every learnable array.

    ``grad_phi``/``grad_psi_h`` hold dL/dRe + 1j dL/dIm of the normalized
    outputs, shaped like the arrays ``forward`` returned.
    """
    if record.mode != "train":
        raise ValueError("backward requires a record from a train-mode forward")
    M, M_prime, N = params.dims
    arch, w = params.arch, params.weights
    beta = arch.leaky_slope
    B = record.batch
    grad_phi = np.asarray(grad_phi).reshape(B, M, N)
    grad_psi_h = np.asarray(grad_psi_h).reshape(B, N, M_prime)
    grads: dict[str, np.ndarray] = {}

    phi, phi_norm, psi_h, psi_norm = record.blocks["out"]
    g_phi_raw = _normalize_backward(grad_phi, phi, phi_norm, N)
    g_psi_raw = _normalize_backward(grad_psi_h, psi_h, psi_norm, N * M_prime / M)
    g_out = np.concatenate(
        [
            g_phi_raw.real.reshape(B, -1),
            g_phi_raw.imag.reshape(B, -1),
            g_psi_raw.real.reshape(B, -1),
            g_psi_raw.imag.reshape(B, -1),
        ],
        axis=1,
    ).astype(params.dtype, copy=False)

    flat, z1, a1, z2, a2 = record.blocks["fc"]
    grads["fc3.w"] = g_out.T @ a2
    grads["fc3.b"] = g_out.sum(axis=0)
    g = _leaky_grad(g_out @ w["fc3.w"], z2, beta)
    grads["fc2.w"] = g.T @ a1
    grads["fc2.b"] = g.sum(axis=0)
    g = _leaky_grad(g @ w["fc2.w"], z1, beta)
    grads["fc1.w"] = g.T @ flat
    grads["fc1.b"] = g.sum(axis=0)
    g_flat = g @ w["fc1.w"]

    Ph, Pw, fused_shape = record.blocks["pool"]
    F = fused_shape[0]
    g_pooled = g_flat.reshape(B, F, Ph.shape[0], Pw.shape[0]).transpose(1, 0, 2, 3)
    g_fused = np.matmul(Ph.T, g_pooled @ Pw)

    g_cat = _block_backward(params, g_fused, "fuse", record, grads)
    c = arch.pathway_channels
    for j, (name, _) in enumerate(PATHWAYS):
        # g_feats[k]: gradient w.r.t. dense feature k (k>0 = output of layer k-1); input gradient unused
        g_feats = [None] * (LAYERS_PER_PATHWAY + 1)
        g_feats[-1] = g_cat[j * c:(j + 1) * c]
        for i in reversed(range(LAYERS_PER_PATHWAY)):
            g_in = _block_backward(params, g_feats[i + 1], f"{name}{i}", record, grads)
            for k in range(1, i + 1):
                part = g_in[2 + (k - 1) * c:2 + k * c]
                g_feats[k] = part if g_feats[k] is None else g_feats[k] + part
    return {name: grads[name] for name in w}


def zero_grads(params: NetworkParams) -> dict:
    return {k: np.zeros_like(v) for k, v in params.weights.items()}


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, params: NetworkParams, **hyper) -> "AdamState":
        zeros = {k: np.zeros_like(v) for k, v in params.weights.items()}
        return cls(zeros, {k: np.zeros_like(v) for k, v in params.weights.items()}, **hyper)


def adam_step(weights: dict, grads: dict, state: AdamState) -> None:
    """Bias-corrected Adam update of ``weights`` in place."""
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for k, g in grads.items():
        m, v = state.m[k], state.v[k]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        weights[k] -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
