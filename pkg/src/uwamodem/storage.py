"""Little-endian binary formats for datasets, modems and network checkpoints, plus CSV output.

All three formats start with a 4-byte magic and a ``u32`` version. Complex
arrays are stored row-major as pairs of IEEE-754 ``float64`` (real, imag).

Dataset (``UWAD``): ``u64`` config-JSON length, UTF-8 config JSON, ``u64`` pair
count, then per pair ``H`` (M' x M) followed by ``H_e,OFDM`` (N x N).

Modem (``UWMD``): ``u64`` M, N, M', then phi (M x N) and psi_h (N x M').

Checkpoint (``UWNP``): ``u64`` header-JSON length, header JSON (architecture,
dims, dtype, optional Adam hyperparameters and step), ``u32`` section count,
then per section ``u32`` name length, name, ``u32`` ndim, ``u64`` dims and
``float64`` data. Section names are ``w/<param>``, ``stats/<buffer>`` and,
when an optimizer state is stored, ``adam.m/<param>`` and ``adam.v/<param>``.
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from . import net
from .config import SystemConfig, derive_dims
from .modem import Modem
from .training import Dataset

VERSION = 1
DATASET_MAGIC = b"UWAD"
MODEM_MAGIC = b"UWMD"
CHECKPOINT_MAGIC = b"UWNP"
C16 = np.dtype("<c16")
F8 = np.dtype("<f8")


class FormatError(ValueError):
    """Unknown magic, unsupported version or inconsistent contents."""


class TruncatedFileError(FormatError):
    """The file ended before the declared payload."""


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFileError(f"file truncated: needed {n} bytes at offset {self.pos}, "
                                     f"only {len(self.data) - self.pos} left")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def array(self, dtype: np.dtype, shape) -> np.ndarray:
        count = int(np.prod(shape))
        return np.frombuffer(self.take(count * dtype.itemsize), dtype=dtype).reshape(shape).copy()

    def done(self):
        if self.pos != len(self.data):
            raise FormatError(f"{len(self.data) - self.pos} trailing bytes after payload")


def _header(magic: bytes) -> bytes:
    return magic + struct.pack("<I", VERSION)


def _open(data: bytes, magic: bytes) -> _Reader:
    reader = _Reader(data)
    got = reader.take(4)
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}")
    version = reader.u32()
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    return reader


def _json_block(obj) -> bytes:
    text = json.dumps(obj, sort_keys=True).encode("utf-8")
    return struct.pack("<Q", len(text)) + text


# --- datasets ----------------------------------------------------------------------------


def dataset_bytes(dataset: Dataset) -> bytes:
    parts = [_header(DATASET_MAGIC), _json_block(dataset.config.to_dict()), struct.pack("<Q", len(dataset))]
    H = dataset.H.astype(C16)
    h_e = dataset.h_e_ofdm.astype(C16)
    for i in range(len(dataset)):
        parts.append(H[i].tobytes())
        parts.append(h_e[i].tobytes())
    return b"".join(parts)


def parse_dataset(data: bytes) -> Dataset:
    reader = _open(data, DATASET_MAGIC)
    config = SystemConfig.from_dict(json.loads(reader.take(reader.u64()).decode("utf-8")))
    count = reader.u64()
    M, M_prime, _ = derive_dims(config)
    N = config.N
    pair = M_prime * M + N * N
    payload = reader.array(C16, (count, pair)) if count else np.zeros((0, pair), C16)
    reader.done()
    H = payload[:, :M_prime * M].reshape(count, M_prime, M).astype(complex)
    h_e = payload[:, M_prime * M:].reshape(count, N, N).astype(complex)
    return Dataset(config, H, h_e)


def save_dataset(dataset: Dataset, path) -> None:
    Path(path).write_bytes(dataset_bytes(dataset))


def load_dataset(path) -> Dataset:
    return parse_dataset(Path(path).read_bytes())


# --- modems ------------------------------------------------------------------------------


def modem_bytes(modem: Modem) -> bytes:
    return b"".join([
        _header(MODEM_MAGIC),
        struct.pack("<QQQ", modem.M, modem.N, modem.M_prime),
        modem.phi.astype(C16).tobytes(),
        modem.psi_h.astype(C16).tobytes(),
    ])


def parse_modem(data: bytes, check: bool = True) -> Modem:
    reader = _open(data, MODEM_MAGIC)
    M, N, M_prime = reader.u64(), reader.u64(), reader.u64()
    phi = reader.array(C16, (M, N)).astype(complex)
    psi_h = reader.array(C16, (N, M_prime)).astype(complex)
    reader.done()
    modem = Modem(phi, psi_h)
    if check:
        modem.check_energy()
    return modem


def save_modem(modem: Modem, path) -> None:
    Path(path).write_bytes(modem_bytes(modem))


def load_modem(path, check: bool = True) -> Modem:
    return parse_modem(Path(path).read_bytes(), check=check)


# --- checkpoints -------------------------------------------------------------------------


def _section(name: str, arr: np.ndarray) -> bytes:
    encoded = name.encode("utf-8")
    return b"".join([
        struct.pack("<I", len(encoded)),
        encoded,
        struct.pack("<I", arr.ndim),
        struct.pack(f"<{arr.ndim}Q", *arr.shape),
        np.ascontiguousarray(arr, dtype=F8).tobytes(),
    ])


def checkpoint_bytes(params: net.NetworkParams, state: net.AdamState | None = None) -> bytes:
    header = {
        "arch": params.arch.to_dict(),
        "dims": list(params.dims),
        "dtype": np.dtype(params.dtype).name,
        "adam": None,
    }
    sections = [(f"w/{k}", v) for k, v in params.weights.items()]
    sections += [(f"stats/{k}", v) for k, v in params.stats.items()]
    if state is not None:
        header["adam"] = {"t": state.t, "lr": state.lr, "beta1": state.beta1, "beta2": state.beta2,
                          "eps": state.eps}
        sections += [(f"adam.m/{k}", v) for k, v in state.m.items()]
        sections += [(f"adam.v/{k}", v) for k, v in state.v.items()]
    parts = [_header(CHECKPOINT_MAGIC), _json_block(header), struct.pack("<I", len(sections))]
    parts += [_section(name, arr) for name, arr in sections]
    return b"".join(parts)


def parse_checkpoint(data: bytes):
    """Return ``(params, adam_state_or_None)``."""
    reader = _open(data, CHECKPOINT_MAGIC)
    header = json.loads(reader.take(reader.u64()).decode("utf-8"))
    arch = net.ArchConfig.from_dict(header["arch"])
    dims = tuple(header["dims"])
    dtype = np.dtype(header["dtype"])
    sections = {}
    for _ in range(reader.u32()):
        name = reader.take(reader.u32()).decode("utf-8")
        ndim = reader.u32()
        shape = struct.unpack(f"<{ndim}Q", reader.take(8 * ndim))
        sections[name] = reader.array(F8, shape).astype(dtype)
    reader.done()

    expected = net.param_shapes(arch, dims)
    weights, stats, m, v = {}, {}, {}, {}
    for name, arr in sections.items():
        group, _, key = name.partition("/")
        target = {"w": weights, "stats": stats, "adam.m": m, "adam.v": v}.get(group)
        if target is None:
            raise FormatError(f"unknown section {name!r}")
        if group != "stats" and tuple(arr.shape) != expected.get(key):
            raise FormatError(f"section {name!r} has shape {arr.shape}, expected {expected.get(key)}")
        target[key] = arr
    if set(weights) != set(expected):
        raise FormatError("checkpoint is missing parameter sections")
    params = net.NetworkParams(arch, dims, {k: weights[k] for k in expected}, stats)
    state = None
    if header.get("adam") is not None:
        hyper = header["adam"]
        state = net.AdamState({k: m[k] for k in expected}, {k: v[k] for k in expected}, **hyper)
    return params, state


def save_checkpoint(params: net.NetworkParams, path, state: net.AdamState | None = None) -> None:
    Path(path).write_bytes(checkpoint_bytes(params, state))


def load_checkpoint(path):
    return parse_checkpoint(Path(path).read_bytes())


# --- CSV ---------------------------------------------------------------------------------


def write_csv(path, fieldnames, rows, comment: str | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        writer = csv.DictWriter(fh, fieldnames=fieldnames, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)


def read_csv(path) -> tuple[list[str], list[dict]]:
    """Return ``(comment_lines, rows)``; comment lines start with ``#``."""
    with open(path, newline="", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    comments = [ln[1:].strip() for ln in lines if ln.startswith("#")]
    body = [ln for ln in lines if not ln.startswith("#")]
    return comments, list(csv.DictReader(body))


# --- inspection --------------------------------------------------------------------------


def inspect_bytes(data: bytes) -> str:
    magic = data[:4]
    if magic == DATASET_MAGIC:
        ds = parse_dataset(data)
        M, M_prime, _ = derive_dims(ds.config)
        return "\n".join([
            f"type: dataset (version {VERSION})",
            f"config: {ds.config.to_json()}",
            f"dims: M={M} M'={M_prime} N={ds.config.N}",
            f"pairs: {len(ds)}",
        ])
    if magic == MODEM_MAGIC:
        modem = parse_modem(data, check=False)
        (e_phi, e_psi), (t_phi, t_psi) = modem.energies(), modem.target_energies()
        try:
            modem.check_energy()
            status = "ok"
        except ValueError as exc:
            status = f"FAILED ({exc})"
        return "\n".join([
            f"type: modem (version {VERSION})",
            f"dims: M={modem.M} N={modem.N} M'={modem.M_prime}",
            f"energy phi: {e_phi:.12g} (target {t_phi:.12g})",
            f"energy psi_h: {e_psi:.12g} (target {t_psi:.12g})",
            f"energy check: {status}",
        ])
    if magic == CHECKPOINT_MAGIC:
        params, state = parse_checkpoint(data)
        n = sum(v.size for v in params.weights.values())
        return "\n".join([
            f"type: checkpoint (version {VERSION})",
            f"arch: {json.dumps(params.arch.to_dict(), sort_keys=True)}",
            f"dims: M={params.dims[0]} M'={params.dims[1]} N={params.dims[2]}",
            f"parameters: {n} in {len(params.weights)} arrays ({np.dtype(params.dtype).name})",
            f"adam state: {'step ' + str(state.t) if state else 'absent'}",
        ])
    if len(data) < 4:
        raise TruncatedFileError("file too short to hold a magic number")
    raise FormatError(f"unknown magic {magic!r}")


def inspect_file(path) -> str:
    return inspect_bytes(Path(path).read_bytes())
