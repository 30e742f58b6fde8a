"""Independent reference implementations used as test oracles."""

import cmath
import math

import numpy as np

from uwamodem import net
from uwamodem.config import derive_dims
from uwamodem.criterion import criterion_and_grad, equivalent_channel_backward
from uwamodem.training import stage2_loss_and_grads


def sinc_scalar(x):
    if x == 0:
        return 1.0
    return math.sin(math.pi * x) / (math.pi * x)


def channel_bruteforce(paths, config):
    """Entrywise triple loop over (m', m, p) of the sampled channel formula."""
    M, M_prime, _ = derive_dims(config)
    F_s, B, f_c, T = config.F_s, config.B, config.f_c, config.T
    H = np.zeros((M_prime, M), dtype=complex)
    for mp in range(M_prime):
        for m in range(M):
            acc = 0j
            for A, tau, a in zip(paths.amplitudes, paths.delays, paths.doppler):
                gamma = (a + 1) * mp / F_s - tau
                if gamma < 0 or gamma > T:
                    continue
                acc += (
                    complex(A)
                    * cmath.exp(-2j * math.pi * f_c * tau)
                    * cmath.exp(2j * math.pi * f_c * a * mp / F_s)
                    * sinc_scalar(B * gamma - m * B / F_s)
                )
            H[mp, m] = acc
    return H


def triple_product_loop(psi_h, H, phi):
    N, Mp = psi_h.shape
    M = phi.shape[0]
    out = np.zeros((N, N), dtype=complex)
    for n in range(N):
        for k in range(N):
            acc = 0j
            for i in range(Mp):
                for j in range(M):
                    acc += psi_h[n, i] * H[i, j] * phi[j, k]
            out[n, k] = acc
    return out


def rates_explicit(h_e, psi_h, sigma_s_sq, sigma_n_sq):
    N = h_e.shape[0]
    out = []
    for n in range(N):
        sig = abs(h_e[n, n]) ** 2
        interf = sum(abs(h_e[n, k]) ** 2 for k in range(N) if k != n)
        noise = sigma_n_sq / sigma_s_sq * sum(abs(v) ** 2 for v in psi_h[n])
        out.append(math.log2(1 + sig / (interf + noise)))
    return np.array(out)


# --- network gradient check --------------------------------------------------------------


def _pattern(rec, h_e, psi_h, inv_snr):
    """Sign pattern of every leaky-ReLU input and the argmin sub-channel of each sample."""
    signs = [rec.blocks[k][2] >= 0 for k in rec.blocks if k not in ("pool", "fc", "out")]
    _, z1, _, z2, _ = rec.blocks["fc"]
    signs += [z1 >= 0, z2 >= 0]
    power = np.abs(h_e) ** 2
    sig = np.diagonal(power, axis1=-2, axis2=-1)
    den = power.sum(-1) - sig + inv_snr * np.sum(np.abs(psi_h) ** 2, -1)
    return signs, np.argmin(sig / den, axis=-1)


def _same(p, q):
    return all(np.array_equal(a, b) for a, b in zip(p[0], q[0])) and np.array_equal(p[1], q[1])


def make_losses(H, f_base, config, noise):
    """Return loss1(params) and loss2(params), each giving (value, pattern, grads-callable)."""
    B = H.shape[0]
    images = np.stack([H.real, H.imag], axis=1)

    def loss1(params, with_grad=False):
        phi, psi_h, rec = net.forward(params, images, "train", update_stats=False)
        h_e = psi_h @ H @ phi
        f, g_he, g_psi = criterion_and_grad(h_e, psi_h, noise.inv_snr, config.K)
        value = float(np.mean(f_base - f))
        grads = None
        if with_grad:
            g_phi, g_psi = equivalent_channel_backward(H, phi, psi_h, g_he, g_psi)
            grads = net.backward(params, rec, -g_phi / B, -g_psi / B)
        return value, _pattern(rec, h_e, psi_h, noise.inv_snr), grads

    def loss2(params, with_grad=False):
        phi, psi_h, rec = net.forward(params, images, "train", update_stats=False)
        value, _, _, g_phi, g_psi = stage2_loss_and_grads(phi, psi_h, H, f_base, config)
        grads = net.backward(params, rec, g_phi, g_psi) if with_grad else None
        return float(value), _pattern(rec, psi_h @ H @ phi, psi_h, noise.inv_snr), grads

    return loss1, loss2


def gradcheck(params, loss_fn, rng, h=1e-5, per_group=6, max_tries=60):
    """Relative error per parameter group between backprop and central differences.

    Entries whose perturbation changes an activation sign or the argmin
    sub-channel are resampled: the difference quotient across such a kink does
    not estimate the derivative. Returns ``{group: (rel_err, n_resampled)}``.
    """
    _, base_pattern, grads = loss_fn(params, with_grad=True)
    results = {}
    for name, w in params.weights.items():
        fd, bp, skipped, tries = [], [], 0, 0
        while len(fd) < min(per_group, w.size) and tries < max_tries:
            tries += 1
            ix = tuple(int(rng.integers(0, s)) for s in w.shape)
            old = w[ix]
            w[ix] = old + h
            lp, pp, _ = loss_fn(params)
            w[ix] = old - h
            lm, pm, _ = loss_fn(params)
            w[ix] = old
            if not (_same(pp, base_pattern) and _same(pm, base_pattern)):
                skipped += 1
                continue
            fd.append((lp - lm) / (2 * h))
            bp.append(grads[name][ix])
        fd, bp = np.array(fd), np.array(bp)
        scale = max(np.linalg.norm(fd), np.linalg.norm(bp), 1e-30)
        results[name] = (float(np.linalg.norm(fd - bp) / scale), skipped, len(fd))
    return results
