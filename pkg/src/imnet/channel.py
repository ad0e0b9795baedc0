"""Frequency-domain MIMO channel: fading draws, imperfect CSIR and AWGN.

Channel tensors are laid out ``(B, N_f, N_r, N_t)`` (one ``N_r x N_t`` matrix
per subcarrier), signal matrices ``(B, N_t, N_f)`` and received matrices
``(B, N_r, N_f)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .mapping import IMConfig
from .rng import complex_normal

NOISE_VAR = 1.0
CHANNEL_MODELS = ("rayleigh", "correlated")
CSIR_MODES = ("perfect", "imperfect")


@dataclass(frozen=True)
class ChannelConfig:
    """Fading model and receiver-side channel knowledge.

    ``n_pilot=None`` means one pilot per transmit antenna; ``pilot_energy=None``
    means pilots are sent at the data-symbol energy of the current SNR point.
    """

    model: str = "rayleigh"
    rho: float = 0.5
    csir: str = "perfect"
    n_pilot: Optional[int] = None
    pilot_energy: Optional[float] = None

    def __post_init__(self):
        if self.model not in CHANNEL_MODELS:
            raise ValueError(f"channel model must be one of {CHANNEL_MODELS}, got {self.model!r}")
        if self.csir not in CSIR_MODES:
            raise ValueError(f"csir mode must be one of {CSIR_MODES}, got {self.csir!r}")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError(f"rho must lie in [0, 1), got {self.rho}")
        if self.n_pilot is not None and self.n_pilot < 1:
            raise ValueError(f"n_pilot must be >= 1, got {self.n_pilot}")
        if self.pilot_energy is not None and not self.pilot_energy > 0:
            raise ValueError(f"pilot_energy must be > 0, got {self.pilot_energy}")


@dataclass
class ChannelRealization:
    h_true: np.ndarray
    h_rx: np.ndarray
    noise_var: float = NOISE_VAR

    def __len__(self):
        return len(self.h_true)

    def __getitem__(self, idx):
        return ChannelRealization(self.h_true[idx], self.h_rx[idx], self.noise_var)


def snr_to_es(snr_db: float) -> float:
    """Per-symbol transmit energy for unit noise variance."""
    return 10.0 ** (snr_db / 10.0) * NOISE_VAR


def exp_correlation_matrix(n: int, rho: float) -> np.ndarray:
    if not 0.0 <= rho < 1.0:
        raise ValueError(f"rho must lie in [0, 1), got {rho}")
    idx = np.arange(n)
    return rho ** np.abs(idx[:, None] - idx[None, :]).astype(float)


def draw_channel(
    im_cfg: IMConfig,
    ch_cfg: ChannelConfig,
    rng: np.random.Generator,
    n_frames: int = 1,
    snr_db: Optional[float] = None,
    csir_rng: Optional[np.random.Generator] = None,
) -> ChannelRealization:
    """Draw ``n_frames`` independent channels, one matrix per subcarrier.

    Entries have variance ``1/N_t``. The correlated model colours the i.i.d.
    matrix as ``L_rx A L_tx^T`` with Cholesky factors of the exponential
    correlation matrices. Imperfect CSIR needs ``snr_db`` when the pilot energy
    follows the data energy, and draws its error from ``csir_rng`` (defaults to
    ``rng``).
    """
    shape = (n_frames, im_cfg.n_sub, im_cfg.n_rx, im_cfg.n_tx)
    h = complex_normal(rng, shape, 1.0 / im_cfg.n_tx)
    if ch_cfg.model == "correlated":
        l_rx = np.linalg.cholesky(exp_correlation_matrix(im_cfg.n_rx, ch_cfg.rho))
        l_tx = np.linalg.cholesky(exp_correlation_matrix(im_cfg.n_tx, ch_cfg.rho))
        h = l_rx @ h @ l_tx.T
    if ch_cfg.csir == "imperfect":
        h_rx = corrupt_csir(h, im_cfg, ch_cfg, csir_rng if csir_rng is not None else rng, snr_db)
    else:
        h_rx = h
    return ChannelRealization(h, h_rx)


def csir_error_variance(im_cfg: IMConfig, ch_cfg: ChannelConfig, snr_db: Optional[float]) -> float:
    n_pilot = ch_cfg.n_pilot if ch_cfg.n_pilot is not None else im_cfg.n_tx
    if ch_cfg.pilot_energy is not None:
        e_pilot = ch_cfg.pilot_energy
    elif snr_db is None:
        raise ValueError("snr_db is required when pilot energy tracks the data energy")
    else:
        e_pilot = snr_to_es(snr_db)
    return im_cfg.n_tx * NOISE_VAR / (n_pilot * e_pilot)


def corrupt_csir(
    h_true: np.ndarray,
    im_cfg: IMConfig,
    ch_cfg: ChannelConfig,
    rng: np.random.Generator,
    snr_db: Optional[float] = None,
) -> np.ndarray:
    """Receiver estimate ``H + dH`` with i.i.d. ``CN(0, N_t s^2 / (N_p E_p))`` error."""
    if ch_cfg.csir == "perfect":
        return h_true
    var = csir_error_variance(im_cfg, ch_cfg, snr_db)
    return h_true + complex_normal(rng, h_true.shape, var)


def apply_channel(
    x: np.ndarray,
    ch: ChannelRealization,
    snr_db: float,
    rng: Optional[np.random.Generator],
) -> np.ndarray:
    """Received matrices ``y_i = sqrt(Es) H_i x_i + w_i``.

    ``rng=None`` suppresses the noise term.
    """
    x = np.asarray(x)
    single = x.ndim == 2
    if single:
        x = x[None]
    h = ch.h_true if ch.h_true.ndim == 4 else ch.h_true[None]
    if h.shape[0] != x.shape[0] or h.shape[1] != x.shape[2] or h.shape[3] != x.shape[1]:
        raise ValueError(f"channel shape {h.shape} does not match signal shape {x.shape}")
    y = np.sqrt(snr_to_es(snr_db)) * np.einsum("bfrt,btf->brf", h, x)
    if rng is not None:
        y = y + complex_normal(rng, y.shape, ch.noise_var)
    return y[0] if single else y
