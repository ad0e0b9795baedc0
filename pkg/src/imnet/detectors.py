"""Receivers for IM-MIMO-OFDM frames.

All functions are batched: received matrices ``Y`` have shape
``(B, N_r, N_f)``, receiver channel estimates ``H`` shape
``(B, N_f, N_r, N_t)``. ``es`` is the transmit symbol energy, so noiseless
observations are ``sqrt(es) * H_i x_i``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .mapping import FrameBatch, IMConfig, decode_bits, nearest_label
from .nn.network import Network, batched, pack_complex, unpack_complex

DETECTORS = ("ml", "mf-llr", "dlbmp", "imnet")
ML_SEARCH_CAP = 10**7
LS_DELTA = 1e-9
LS_COND_MAX = 1e12  # condition number above which solves get diagonal loading
SIGMA_FLOOR = 1e-9
LOG_FLOOR = 1e-12


class SearchSpaceTooLarge(ValueError):
    """Raised when exhaustive ML detection would exceed the configured cap."""

    def __init__(self, size: int, cap: int):
        super().__init__(f"ML search space has {size:.3e} candidates, above the cap of {cap:.0e}")
        self.size, self.cap = size, cap


@dataclass
class DetectorOutput:
    frames: FrameBatch
    probs: Optional[np.ndarray] = None
    x_hat: Optional[np.ndarray] = None
    metric: Optional[np.ndarray] = None
    regularized: Optional[np.ndarray] = None

    def bits(self, cfg: IMConfig) -> np.ndarray:
        return decode_bits(self.frames, cfg)


def _as_batch(Y, H):
    Y, H = np.asarray(Y), np.asarray(H)
    if Y.ndim == 2:
        Y = Y[None]
    if H.ndim == 3:
        H = H[None]
    if Y.shape[0] != H.shape[0] or Y.shape[1] != H.shape[2] or Y.shape[2] != H.shape[1]:
        raise ValueError(f"received shape {Y.shape} does not match channel shape {H.shape}")
    return Y, H


def select_columns(H: np.ndarray, antennas: np.ndarray) -> np.ndarray:
    """Pick the ``(B, K)`` antenna columns of every per-subcarrier matrix."""
    return np.take_along_axis(H, antennas[:, None, None, :], axis=3)


# --------------------------------------------------------------------------
# maximum likelihood


def ml_search_size(cfg: IMConfig) -> int:
    b = cfg.budget
    return (1 << b.c_bits) * ((1 << b.d1_bits) * cfg.mod_order**cfg.f_active) ** cfg.k_active


def _link_activity_codes(cfg: IMConfig) -> np.ndarray:
    """Activity code per (pattern tuple, subcarrier): bit k set if link k is active.

    Pattern tuples are ordered with link 0 most significant, matching the bit
    order of the frame.
    """
    sub_mask = np.zeros((len(cfg.subcarrier_table), cfg.n_sub), dtype=np.int64)
    np.put_along_axis(sub_mask, cfg.subcarrier_table, 1, axis=1)
    codes = np.zeros((1, cfg.n_sub), dtype=np.int64)
    for k in range(cfg.k_active):
        codes = (codes[:, None, :] | (sub_mask[None, :, :] << k)).reshape(-1, cfg.n_sub)
    return codes


def mld_detect(Y, H, cfg: IMConfig, es: float, cap: int = ML_SEARCH_CAP) -> DetectorOutput:
    """Exact minimiser of ``sum_i ||y_i - sqrt(es) H_i x_i||^2`` over all legal frames.

    For a fixed antenna pattern the metric splits over subcarriers, and on each
    subcarrier only the per-link activity (data symbol or idle symbol)
    matters. The search therefore evaluates every per-subcarrier candidate
    vector once and then combines them per subcarrier-pattern tuple, which is
    exact but far cheaper than listing the codebook.
    """
    size = ml_search_size(cfg)
    if size > cap:
        raise SearchSpaceTooLarge(size, cap)
    Y, H = _as_batch(Y, H)
    B, K, M = len(Y), cfg.k_active, cfg.mod_order
    alphabet = np.concatenate([cfg.constellation, [cfg.special_symbol]])
    idle = M  # index of the idle symbol in ``alphabet``
    vectors = np.array(list(itertools.product(range(M + 1), repeat=K)))  # (V, K)
    activity = (vectors != idle) @ (1 << np.arange(K))  # (V,)

    ant = cfg.antenna_table.as_array()  # (A, K)
    Hs = H[..., ant]  # B, Nf, Nr, A, K
    cand = np.sqrt(es) * alphabet[vectors]  # V, K
    resid = Y.transpose(0, 2, 1)[:, :, :, None, None] - np.einsum("bfrak,vk->bfrav", Hs, cand)
    cost = np.sum(np.abs(resid) ** 2, axis=2)  # B, Nf, A, V

    n_codes = 1 << K
    best = np.empty((B, cfg.n_sub, len(ant), n_codes))
    best_vec = np.empty(best.shape, dtype=np.int64)
    for code in range(n_codes):
        members = np.flatnonzero(activity == code)
        sub = cost[..., members]
        j = np.argmin(sub, axis=-1)
        best[..., code] = np.take_along_axis(sub, j[..., None], axis=-1)[..., 0]
        best_vec[..., code] = members[j]

    codes = _link_activity_codes(cfg)  # T, Nf
    f_idx = np.arange(cfg.n_sub)
    # total[b, a, t] = sum_i best[b, i, a, codes[t, i]]
    total = best.transpose(0, 2, 1, 3)[:, :, f_idx[None, :], codes].sum(axis=-1)
    flat = total.reshape(B, -1)
    winner = np.argmin(flat, axis=1)
    a_idx, t_idx = np.divmod(winner, len(codes))

    n_legal = len(cfg.subcarrier_table)
    sub_ranks = np.zeros((B, K), dtype=np.int64)
    rem = t_idx.copy()
    for k in range(K):
        sub_ranks[:, k] = rem // n_legal ** (K - 1 - k)
        rem = rem % n_legal ** (K - 1 - k)
    # symbols along the winning path
    win_codes = codes[t_idx]  # B, Nf
    win_vec = best_vec[np.arange(B)[:, None], f_idx[None, :], a_idx[:, None], win_codes]  # B, Nf
    sym_idx = vectors[win_vec]  # B, Nf, K
    sets = cfg.subcarrier_table[sub_ranks]  # B, K, F
    labels = np.take_along_axis(sym_idx.transpose(0, 2, 1), sets, axis=2)
    frames = FrameBatch(a_idx, sub_ranks, labels)
    return DetectorOutput(frames, metric=flat[np.arange(B), winner])


def frame_metric(Y, H, X, es: float) -> np.ndarray:
    """ML metric of given transmit matrices ``X`` (B, N_t, N_f)."""
    Y, H = _as_batch(Y, H)
    X = np.asarray(X).reshape(len(Y), H.shape[3], H.shape[1])
    pred = np.sqrt(es) * np.einsum("bfrt,btf->brf", H, X)
    return np.sum(np.abs(Y - pred) ** 2, axis=(1, 2))


# --------------------------------------------------------------------------
# least squares and the matched-filter / LLR baseline


def ls_estimate(Y, H, antennas, es: float):
    """Per-subcarrier least squares on the selected columns, scaled by ``1/sqrt(es)``.

    Returns ``(x_hat, regularized)`` with ``x_hat`` of shape ``(B, K, N_f)`` and
    a per-frame flag marking solves that needed diagonal loading.
    """
    Y, H = _as_batch(Y, H)
    antennas = np.atleast_2d(np.asarray(antennas, dtype=np.int64))
    Hs = select_columns(H, antennas)  # B, Nf, Nr, K
    Hh = np.conj(np.swapaxes(Hs, -1, -2))
    gram = Hh @ Hs
    rhs = Hh @ Y.transpose(0, 2, 1)[..., None]
    singular = np.linalg.cond(gram) > LS_COND_MAX
    if singular.any():
        gram = gram + singular[..., None, None] * LS_DELTA * np.eye(gram.shape[-1])
    x = np.linalg.solve(gram, rhs)[..., 0]  # B, Nf, K
    return x.transpose(0, 2, 1) / np.sqrt(es), singular.any(axis=1)


def mf_scores(Y, H) -> np.ndarray:
    """Per-antenna matched-filter energy ``sum_i |h_in^H y_i|^2 / ||h_in||^2``."""
    Y, H = _as_batch(Y, H)
    corr = np.einsum("bfrt,brf->bft", np.conj(H), Y)
    norm = np.sum(np.abs(H) ** 2, axis=2)
    safe = np.where(norm > 0, norm, 1.0)
    return np.sum(np.where(norm > 0, np.abs(corr) ** 2 / safe, 0.0), axis=1)


def mf_antenna_detect(Y, H, cfg: IMConfig) -> np.ndarray:
    """Antenna-table index maximising the summed matched-filter score."""
    scores = mf_scores(Y, H)
    return np.argmax(scores @ cfg.antenna_table.mask().T.astype(float), axis=1)


def _subcarrier_masks(cfg: IMConfig) -> np.ndarray:
    mask = np.zeros((len(cfg.subcarrier_table), cfg.n_sub))
    np.put_along_axis(mask, cfg.subcarrier_table, 1.0, axis=1)
    return mask


def subcarrier_llr(x_raw, sigma2, cfg: IMConfig, es: float) -> np.ndarray:
    """Activity log-likelihood ratio per link and subcarrier.

    ``x_raw`` is the unscaled LS estimate and ``sigma2`` its noise variance.
    The inactive hypothesis is the idle symbol rather than zero.
    """
    from scipy.special import logsumexp

    F, Nf, M = cfg.f_active, cfg.n_sub, cfg.mod_order
    s = np.sqrt(es) * cfg.constellation
    d_active = np.abs(x_raw[..., None] - s) ** 2 / sigma2[..., None]
    d_idle = np.abs(x_raw - np.sqrt(es) * cfg.special_symbol) ** 2 / sigma2
    return logsumexp(-d_active, axis=-1) - np.log(M) + d_idle + np.log(F / (Nf - F))


def mf_llr_detect(Y, H, cfg: IMConfig, es: float) -> DetectorOutput:
    """Sequential baseline: matched-filter antennas, LLR subcarriers, nearest symbols."""
    if cfg.f_active >= cfg.n_sub:
        raise ValueError("MF-LLR needs f_active < n_sub")
    Y, H = _as_batch(Y, H)
    a_idx = mf_antenna_detect(Y, H, cfg)
    antennas = cfg.antenna_table.as_array()[a_idx]
    x_hat, reg = ls_estimate(Y, H, antennas, es)
    Hs = select_columns(H, antennas)
    gram = np.conj(np.swapaxes(Hs, -1, -2)) @ Hs
    gram = gram + reg[:, None, None, None] * LS_DELTA * np.eye(cfg.k_active)
    sigma2 = np.real(np.diagonal(np.linalg.inv(gram), axis1=-2, axis2=-1))  # B, Nf, K
    sigma2 = np.maximum(sigma2.transpose(0, 2, 1), SIGMA_FLOOR)
    llr = subcarrier_llr(x_hat * np.sqrt(es), sigma2, cfg, es)
    ranks = np.argmax(llr @ _subcarrier_masks(cfg).T, axis=-1)
    labels = _demap_symbols(x_hat, ranks, cfg)
    return DetectorOutput(FrameBatch(a_idx, ranks, labels), x_hat=x_hat, regularized=reg)


def _demap_symbols(x_hat, ranks, cfg: IMConfig) -> np.ndarray:
    sets = cfg.subcarrier_table[ranks]
    return nearest_label(np.take_along_axis(x_hat, sets, axis=-1), cfg.constellation)


def legalize_and_demap(x_hat, cfg: IMConfig) -> tuple[np.ndarray, np.ndarray]:
    """Subcarrier ranks and symbol labels from an estimated ``(B, K, N_f)`` block.

    The top-F subcarriers by amplitude are kept when that pattern is in the
    table; otherwise the legal pattern with the largest summed amplitude is
    used (lowest rank on ties). Both cases reduce to an argmax of the summed
    amplitude over the legal patterns.
    """
    x_hat = np.asarray(x_hat)
    if x_hat.ndim == 2:
        x_hat = x_hat[None]
    ranks = np.argmax(np.abs(x_hat) @ _subcarrier_masks(cfg).T, axis=-1)
    return ranks, _demap_symbols(x_hat, ranks, cfg)


# --------------------------------------------------------------------------
# learned detection

AD_FEATURES = ("received", "matched", "matched-fit")
Z_CLIP = 3.0


def ad_input(Y, H, es: float, mode: str, alphabet=None) -> np.ndarray:
    """Real-valued AD-subnet input tensor.

    ``"received"`` packs the received matrix alone, ``(B, 2, N_r, N_f)``.
    ``"matched"`` packs, per antenna and subcarrier, the single-column estimate
    ``h_in^H y_i / (||h_in||^2 sqrt(es))`` (magnitude clipped at ``Z_CLIP``)
    and the log post-combining SNR, ``(B, 3, N_t, N_f)``. ``"matched-fit"``
    appends the log of the SNR-weighted squared distance from that estimate
    to the nearest point of ``alphabet`` (data and idle symbols).
    """
    Y, H = _as_batch(Y, H)
    if mode == "received":
        return pack_complex(Y)
    if mode not in AD_FEATURES:
        raise ValueError(f"unknown AD feature mode {mode!r}; expected one of {AD_FEATURES}")
    corr = np.einsum("bfrt,brf->btf", np.conj(H), Y)
    gain = np.sum(np.abs(H) ** 2, axis=2).transpose(0, 2, 1) * es  # B, Nt, Nf
    z = corr / (np.maximum(gain, 1e-300) / np.sqrt(es))
    mag = np.abs(z)
    clipped = np.where(mag > Z_CLIP, z * (Z_CLIP / np.maximum(mag, 1e-300)), z)
    chans = [clipped.real, clipped.imag, np.log10(1.0 + gain)]
    if mode == "matched-fit":
        if alphabet is None:
            raise ValueError("matched-fit features need the symbol alphabet")
        dist = np.min(np.abs(z[..., None] - np.asarray(alphabet)) ** 2, axis=-1)
        chans.append(np.log10(1.0 + gain * dist))
    return np.stack(chans, axis=1)


def ad_alphabet(cfg: IMConfig) -> np.ndarray:
    return np.concatenate([cfg.constellation, [cfg.special_symbol]])


def ad_infer(Y, H, ad_net: Network, cfg: IMConfig, es: float, batch: int = 4096) -> np.ndarray:
    """Per-antenna activation probabilities, shape ``(B, N_t)``."""
    mode = ad_net.meta.get("features", "received")
    scale = float(ad_net.meta.get("input_scale", 1.0))
    x = ad_input(Y, H, es, mode, alphabet=ad_alphabet(cfg)) / scale
    if x.shape[1:] != ad_net.input_shape:
        raise ValueError(f"AD weights expect input {ad_net.input_shape}, got {x.shape[1:]}")
    return batched(ad_net.forward, x, batch)


def threshold_set(probs, tau: float) -> np.ndarray:
    """Boolean mask of the antennas above the activity threshold."""
    return np.asarray(probs) > tau


def legalize_antennas(probs, tau: float, cfg: IMConfig) -> np.ndarray:
    """Antenna-table index from activation probabilities.

    The thresholded set is used when it has exactly K members and is in the
    table; otherwise the table pattern maximising the summed log-probability.
    """
    probs = np.atleast_2d(probs)
    table_mask = cfg.antenna_table.mask()
    loglik = np.log(np.clip(probs, LOG_FLOOR, 1.0)) @ table_mask.T.astype(float)
    best = np.argmax(loglik, axis=1)
    above = threshold_set(probs, tau)
    exact = np.all(above[:, None, :] == table_mask[None], axis=2)  # B, A
    hit = exact.any(axis=1)
    return np.where(hit, np.argmax(exact, axis=1), best)


def dlbmp(Y, H, ad_net: Network, tau: float, cfg: IMConfig, es: float, probs=None):
    """Learned antenna detection followed by least squares.

    Returns ``(antenna_index, x_ls, probs, regularized)``. ``probs`` may be
    supplied directly, bypassing the network.
    """
    Y, H = _as_batch(Y, H)
    if probs is None:
        probs = ad_infer(Y, H, ad_net, cfg, es)
    a_idx = legalize_antennas(probs, tau, cfg)
    x_ls, reg = ls_estimate(Y, H, cfg.antenna_table.as_array()[a_idx], es)
    return a_idx, x_ls, probs, reg


SD_CLIP = 2.0
SD_FEATURES = ("ls", "ls+snr")


def ls_cell_snr(H, antennas, es: float) -> np.ndarray:
    """Post-LS SNR ``es / [(H^H H)^-1]_kk`` of every estimated cell, ``(B, K, N_f)``."""
    H = np.asarray(H)
    if H.ndim == 3:
        H = H[None]
    Hs = select_columns(H, np.atleast_2d(antennas))
    gram = np.conj(np.swapaxes(Hs, -1, -2)) @ Hs
    singular = np.linalg.cond(gram) > LS_COND_MAX
    gram = gram + singular[..., None, None] * LS_DELTA * np.eye(gram.shape[-1])
    var = np.real(np.diagonal(np.linalg.inv(gram), axis1=-2, axis2=-1))
    return es / np.maximum(var.transpose(0, 2, 1), SIGMA_FLOOR)


def sd_input(x_ls, cell_snr=None) -> np.ndarray:
    """Pack LS estimates for the SD subnet, clipping magnitudes at ``SD_CLIP``.

    LS estimates in deep fades are unbounded; clipping keeps them from
    dominating the squared-error training loss. With ``cell_snr`` a third
    channel carries ``log10(1 + snr)`` per cell.
    """
    x_ls = np.asarray(x_ls)
    if x_ls.ndim == 2:
        x_ls = x_ls[None]
    mag = np.abs(x_ls)
    x = pack_complex(np.where(mag > SD_CLIP, x_ls * (SD_CLIP / np.maximum(mag, 1e-300)), x_ls))
    if cell_snr is None:
        return x
    return np.concatenate([x, np.log10(1.0 + np.asarray(cell_snr))[:, None]], axis=1)


def sd_infer(x_ls, sd_net: Network, cell_snr=None, batch: int = 4096) -> np.ndarray:
    if sd_net.meta.get("features", "ls") == "ls":
        cell_snr = None
    elif cell_snr is None:
        raise ValueError("these SD weights need the per-cell SNR channel")
    t = sd_input(x_ls, cell_snr)
    if t.shape[1:] != sd_net.input_shape:
        raise ValueError(f"SD weights expect input {sd_net.input_shape}, got {t.shape[1:]}")
    return unpack_complex(batched(sd_net.forward, t, batch))


def imnet_detect(
    Y, H, ad_net: Network, sd_net: Optional[Network], tau: float, cfg: IMConfig, es: float, probs=None
) -> DetectorOutput:
    """AD subnet + LS, SD refinement, then amplitude-sorted demapping."""
    Y, H = _as_batch(Y, H)
    a_idx, x_ls, probs, reg = dlbmp(Y, H, ad_net, tau, cfg, es, probs=probs)
    if sd_net is None:
        x_hat = x_ls
    else:
        snr = None
        if sd_net.meta.get("features", "ls") != "ls":
            snr = ls_cell_snr(H, cfg.antenna_table.as_array()[a_idx], es)
        x_hat = sd_infer(x_ls, sd_net, snr)
    ranks, labels = legalize_and_demap(x_hat, cfg)
    return DetectorOutput(FrameBatch(a_idx, ranks, labels), probs=probs, x_hat=x_hat, regularized=reg)


def dlbmp_detect(Y, H, ad_net: Network, tau: float, cfg: IMConfig, es: float, probs=None):
    """DLBMP followed directly by demapping, without the SD stage."""
    return imnet_detect(Y, H, ad_net, None, tau, cfg, es, probs=probs)


def oracle_probs(frames: FrameBatch, cfg: IMConfig) -> np.ndarray:
    """Genie activation probabilities: 1 on the true antennas, 0 elsewhere."""
    return cfg.antenna_table.mask()[frames.antenna].astype(float)


def codebook_size_report(cfg: IMConfig) -> str:
    size = ml_search_size(cfg)
    return f"{size} candidates (log10 = {math.log10(size):.2f})"
