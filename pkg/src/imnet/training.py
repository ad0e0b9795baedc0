"""Simulated datasets and the two-stage AD/SD training procedure."""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .channel import ChannelConfig, apply_channel, corrupt_csir, draw_channel, snr_to_es
from .detectors import (
    AD_FEATURES,
    SD_FEATURES,
    ad_alphabet,
    ad_infer,
    ad_input,
    dlbmp,
    legalize_antennas,
    ls_cell_snr,
    sd_input,
)
from .mapping import IMConfig, encode_bits, random_bits, signal_matrices
from .nn import Adam, bce_loss, mse_loss
from .nn.network import Network, ad_layers, pack_complex, sd_layers
from .rng import substream

log = logging.getLogger(__name__)

BLOCK = 1000  # records per RNG substream block


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs_ad: int = 20
    epochs_sd: int = 30
    batch_size: int = 50
    learning_rate: float = 1e-3
    n_train: int = 50_000
    n_holdout: int = 5_000
    snr_grid: tuple = (0.0, 5.0, 10.0, 15.0, 20.0, 25.0)
    ad_features: str = "matched-fit"
    sd_features: str = "ls+snr"
    tau: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs_ad < 0 or self.epochs_sd < 0:
            raise ValueError("epoch counts must be non-negative")
        if not self.snr_grid:
            raise ValueError("snr_grid must not be empty")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.n_train < 1 or self.n_holdout < 0:
            raise ValueError("n_train must be >= 1 and n_holdout >= 0")
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must lie in (0, 1), got {self.tau}")
        if self.ad_features not in AD_FEATURES:
            raise ValueError(f"ad_features must be one of {AD_FEATURES}, got {self.ad_features!r}")
        if self.sd_features not in SD_FEATURES:
            raise ValueError(f"sd_features must be one of {SD_FEATURES}, got {self.sd_features!r}")


@dataclass
class Dataset:
    """Simulated records sharing one system configuration.

    ``x`` transmit matrices ``(T, N_t, N_f)``, ``y`` received matrices
    ``(T, N_r, N_f)``, ``h`` receiver channel estimates ``(T, N_f, N_r, N_t)``,
    ``labels`` antenna activity ``(T, N_t)`` and ``snr_db`` per record.
    """

    cfg: IMConfig
    x: np.ndarray
    y: np.ndarray
    h: np.ndarray
    labels: np.ndarray
    snr_db: np.ndarray
    bits: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.x)

    def subset(self, idx) -> "Dataset":
        bits = None if self.bits is None else self.bits[idx]
        return Dataset(
            self.cfg, self.x[idx], self.y[idx], self.h[idx], self.labels[idx], self.snr_db[idx], bits
        )

    @property
    def es(self) -> np.ndarray:
        return snr_to_es(self.snr_db)

    def active_rows(self) -> np.ndarray:
        """Noise-free ``K x N_f`` blocks (data and idle symbols) per record."""
        idx = np.argsort(~self.labels.astype(bool), axis=1, kind="stable")[:, : self.cfg.k_active]
        idx = np.sort(idx, axis=1)
        return np.take_along_axis(self.x, idx[:, :, None], axis=1)


def generate_dataset(
    im_cfg: IMConfig,
    ch_cfg: ChannelConfig,
    n_records: int,
    snr_grid: Sequence[float],
    seed: int,
    first_block: int = 0,
    noiseless: bool = False,
) -> Dataset:
    """Random frames through fresh channels at SNRs drawn uniformly from ``snr_grid``.

    Records are produced in blocks of ``BLOCK`` with their own substreams;
    ``first_block`` offsets the block index so held-out sets never reuse
    training streams.
    """
    grid = np.asarray(snr_grid, dtype=float)
    parts = []
    for blk in range(math.ceil(n_records / BLOCK)):
        n = min(BLOCK, n_records - blk * BLOCK)
        b = first_block + blk
        bits = random_bits(substream(seed, "bits", b), n, im_cfg)
        frames = encode_bits(bits, im_cfg)
        x = signal_matrices(frames, im_cfg)
        snr = grid[substream(seed, "snr", b).integers(0, len(grid), size=n)]
        ch_rng, csir_rng = substream(seed, "channel", b), substream(seed, "csir", b)
        noise_rng = None if noiseless else substream(seed, "noise", b)
        ys = np.empty((n, im_cfg.n_rx, im_cfg.n_sub), complex)
        hs = np.empty((n, im_cfg.n_sub, im_cfg.n_rx, im_cfg.n_tx), complex)
        # CSIR error depends on the SNR of each record, so it is added per SNR value
        ch = draw_channel(im_cfg, replace(ch_cfg, csir="perfect"), ch_rng, n)
        for value in np.unique(snr):
            sel = snr == value
            sub = ch[sel]
            sub.h_rx = corrupt_csir(sub.h_true, im_cfg, ch_cfg, csir_rng, float(value))
            hs[sel] = sub.h_rx
            ys[sel] = apply_channel(x[sel], sub, float(value), noise_rng)
        labels = im_cfg.antenna_table.mask()[frames.antenna].astype(np.uint8)
        parts.append((x, ys, hs, labels, snr, bits))
    cat = [np.concatenate(p) for p in zip(*parts)]
    return Dataset(im_cfg, *cat)


# --------------------------------------------------------------------------
# mini-batch training


@dataclass
class TrainResult:
    net: Network
    losses: list = field(default_factory=list)  # mean training loss per epoch
    steps: list = field(default_factory=list)  # loss per mini-batch


def fit_network(
    net: Network,
    inputs: np.ndarray,
    targets: np.ndarray,
    loss_fn: Callable,
    epochs: int,
    batch_size: int,
    lr: float,
    seed: int,
    tag: str = "",
) -> TrainResult:
    """Mini-batch Adam over shuffled epochs; aborts on a non-finite loss."""
    opt = Adam(lr=lr)
    result = TrainResult(net)
    n = len(inputs)
    for epoch in range(epochs):
        order = substream(seed, "shuffle", epoch).permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            out = net.forward(inputs[idx], keep=True)
            loss, grad = loss_fn(out, targets[idx])
            if not math.isfinite(loss):
                raise TrainingDiverged(f"{tag} loss became {loss} at epoch {epoch}")
            _, grads = net.backward(grad)
            opt.step(net.params, grads)
            result.steps.append(loss)
            total += loss * len(idx)
        result.losses.append(total / n)
        log.info("%s epoch %d/%d loss %.6g", tag, epoch + 1, epochs, result.losses[-1])
    net._cache = None
    return result


def config_tag(cfg: IMConfig) -> str:
    """Compact echo of the system parameters, stored with trained weights."""
    return ",".join(str(getattr(cfg, f)) for f in (
        "n_tx", "n_rx", "n_sub", "k_active", "f_active", "mod_order", "special_amp_ratio"))


def new_ad_net(cfg: IMConfig, features: str, seed: int) -> Network:
    meta = {"role": "ad", "features": features, "im_config": config_tag(cfg)}
    net = Network(ad_layers(cfg.n_tx), ad_input_shape(cfg, features), meta=meta)
    return net.init(substream(seed, "init", 1))


def new_sd_net(cfg: IMConfig, features: str, seed: int) -> Network:
    shape = (2 if features == "ls" else 3, cfg.k_active, cfg.n_sub)
    meta = {"role": "sd", "features": features, "im_config": config_tag(cfg)}
    net = Network(sd_layers(), shape, meta=meta)
    return net.init(substream(seed, "init", 2))


def ad_input_shape(cfg: IMConfig, features: str) -> tuple:
    if features == "received":
        return (2, cfg.n_rx, cfg.n_sub)
    return (4 if features == "matched-fit" else 3, cfg.n_tx, cfg.n_sub)


def ad_training_inputs(ds: Dataset, features: str) -> np.ndarray:
    x = np.empty((len(ds),) + ad_input_shape(ds.cfg, features))
    alphabet = ad_alphabet(ds.cfg)
    for value in np.unique(ds.snr_db):
        sel = ds.snr_db == value
        x[sel] = ad_input(ds.y[sel], ds.h[sel], snr_to_es(value), features, alphabet)
    return x


def train_ad(ds: Dataset, train_cfg: TrainConfig) -> TrainResult:
    """Stage one: fit the antenna detector to the activity labels with BCE."""
    if len(ds) == 0:
        raise ValueError("empty dataset")
    net = new_ad_net(ds.cfg, train_cfg.ad_features, train_cfg.seed)
    inputs = ad_training_inputs(ds, train_cfg.ad_features)
    scale = float(np.sqrt(np.mean(inputs**2))) if train_cfg.ad_features == "received" else 1.0
    net.meta["input_scale"] = repr(scale)
    return fit_network(
        net,
        inputs / scale,
        ds.labels.astype(float),
        bce_loss,
        train_cfg.epochs_ad,
        train_cfg.batch_size,
        train_cfg.learning_rate,
        train_cfg.seed,
        tag="AD",
    )


def ls_dataset(ds: Dataset, ad_net: Optional[Network], tau: float, probs=None):
    """Initial LS estimates and their per-cell SNR, both ``(T, K, N_f)``."""
    shape = (len(ds), ds.cfg.k_active, ds.cfg.n_sub)
    out, snr = np.empty(shape, complex), np.empty(shape)
    table = ds.cfg.antenna_table.as_array()
    for value in np.unique(ds.snr_db):
        sel = np.flatnonzero(ds.snr_db == value)
        p = None if probs is None else probs[sel]
        es = snr_to_es(value)
        a_idx, x_ls, _, _ = dlbmp(ds.y[sel], ds.h[sel], ad_net, tau, ds.cfg, es, probs=p)
        out[sel] = x_ls
        snr[sel] = ls_cell_snr(ds.h[sel], table[a_idx], es)
    return out, snr


def train_sd(ds: Dataset, ad_net: Optional[Network], train_cfg: TrainConfig, probs=None) -> TrainResult:
    """Stage two: with the AD subnet frozen, fit the denoiser with MSE.

    Inputs are the DLBMP estimates, targets the noise-free active rows
    (idle symbols included). ``probs`` replaces the AD subnet's output, e.g.
    with genie probabilities.
    """
    if len(ds) == 0:
        raise ValueError("empty dataset")
    x_ls, cell_snr = ls_dataset(ds, ad_net, train_cfg.tau, probs)
    net = new_sd_net(ds.cfg, train_cfg.sd_features, train_cfg.seed)
    return fit_network(
        net,
        sd_input(x_ls, None if train_cfg.sd_features == "ls" else cell_snr),
        pack_complex(ds.active_rows()),
        mse_loss,
        train_cfg.epochs_sd,
        train_cfg.batch_size,
        train_cfg.learning_rate,
        train_cfg.seed,
        tag="SD",
    )


def evaluate_ad_accuracy(ds: Dataset, ad_net: Optional[Network], tau: float, probs=None):
    """Exact-pattern accuracy after legalisation and per-antenna accuracy."""
    if probs is None:
        probs = np.empty(ds.labels.shape)
        for value in np.unique(ds.snr_db):
            sel = ds.snr_db == value
            probs[sel] = ad_infer(ds.y[sel], ds.h[sel], ad_net, ds.cfg, snr_to_es(value))
    pattern = legalize_antennas(probs, tau, ds.cfg)
    mask = ds.cfg.antenna_table.mask()[pattern]
    truth = ds.labels.astype(bool)
    pattern_acc = float(np.mean(np.all(mask == truth, axis=1)))
    antenna_acc = float(np.mean((probs > tau) == truth))
    return pattern_acc, antenna_acc


# --------------------------------------------------------------------------
# dataset files

DS_MAGIC = b"IMDS"
DS_VERSION = 1
_DS_HEAD = struct.Struct("<4sHI6Hd")


def save_dataset(ds: Dataset, path) -> None:
    """Write little-endian float32 records: SNR, X, Y and H (real/imag), then labels."""
    c = ds.cfg
    head = _DS_HEAD.pack(
        DS_MAGIC, DS_VERSION, len(ds), c.n_tx, c.n_rx, c.n_sub, c.k_active, c.f_active,
        c.mod_order, c.special_amp_ratio,
    )

    def ri(a):
        return np.stack([a.real, a.imag], axis=-1).reshape(len(ds), -1)

    floats = np.concatenate([ds.snr_db[:, None], ri(ds.x), ri(ds.y), ri(ds.h)], axis=1)
    rec = np.empty(len(ds), _record_dtype(c))
    rec["f"] = floats
    rec["lab"] = ds.labels
    Path(path).write_bytes(head + rec.tobytes())


def _record_dtype(c: IMConfig) -> np.dtype:
    n_float = 1 + 2 * (c.n_tx * c.n_sub + c.n_rx * c.n_sub + c.n_sub * c.n_rx * c.n_tx)
    return np.dtype([("f", "<f4", (n_float,)), ("lab", "u1", (c.n_tx,))])


def load_dataset(path) -> Dataset:
    raw = Path(path).read_bytes()
    if raw[:4] != DS_MAGIC:
        raise ValueError(f"{path}: not a dataset file")
    if len(raw) < _DS_HEAD.size:
        raise ValueError(f"{path}: truncated header")
    _, version, count, n_tx, n_rx, n_sub, k, f, m, alpha = _DS_HEAD.unpack_from(raw)
    if version != DS_VERSION:
        raise ValueError(f"{path}: unsupported dataset version {version}")
    cfg = IMConfig(n_tx, n_rx, n_sub, k, f, m, alpha)
    n_x, n_y, n_h = n_tx * n_sub, n_rx * n_sub, n_sub * n_rx * n_tx
    dt = _record_dtype(cfg)
    if len(raw) != _DS_HEAD.size + count * dt.itemsize:
        raise ValueError(f"{path}: expected {count} records of {dt.itemsize} bytes")
    arr = np.frombuffer(raw, dt, count, _DS_HEAD.size)
    fl = arr["f"].astype(float)

    def cplx(a, shape):
        a = a.reshape((count,) + shape + (2,))
        return a[..., 0] + 1j * a[..., 1]

    o = 1
    x = cplx(fl[:, o : o + 2 * n_x], (n_tx, n_sub)); o += 2 * n_x
    y = cplx(fl[:, o : o + 2 * n_y], (n_rx, n_sub)); o += 2 * n_y
    h = cplx(fl[:, o : o + 2 * n_h], (n_sub, n_rx, n_tx))
    return Dataset(cfg, x, y, h, arr["lab"].copy(), fl[:, 0].copy())
