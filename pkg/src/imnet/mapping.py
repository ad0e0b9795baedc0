"""Bit-to-frame mapping for index-modulated MIMO-OFDM.

A frame carries ``C`` antenna-index bits followed by ``K`` link blocks of
``d1`` subcarrier-index bits and ``d2 = F*log2(M)`` symbol bits. Both index
tables are the lexicographically first ``2**bits`` combinations, so a pattern's
table index equals its combinadic rank.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

SUPPORTED_ORDERS = (2, 4, 16, 64)


@dataclass(frozen=True)
class BitBudget:
    c_bits: int
    d1_bits: int
    d2_bits: int
    k_active: int

    @property
    def link_bits(self) -> int:
        return self.d1_bits + self.d2_bits

    @property
    def total_bits(self) -> int:
        return self.c_bits + self.k_active * self.link_bits


@dataclass(frozen=True)
class IMConfig:
    """System dimensions of one IM-MIMO-OFDM link.

    Parameters
    ----------
    n_tx, n_rx, n_sub : int
        Transmit antennas, receive antennas and subcarriers.
    k_active : int
        Active transmit antennas per frame.
    f_active : int
        Active subcarriers per active link.
    mod_order : int
        Square QAM order (BPSK for 2).
    special_amp_ratio : float
        Amplitude of the idle-subcarrier symbol relative to the smallest
        constellation amplitude.
    """

    n_tx: int
    n_rx: int
    n_sub: int
    k_active: int
    f_active: int
    mod_order: int = 4
    special_amp_ratio: float = 0.5

    def __post_init__(self):
        for name in ("n_tx", "n_rx", "n_sub", "k_active", "f_active", "mod_order"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        if not 1 <= self.k_active <= self.n_tx:
            raise ValueError(f"k_active={self.k_active} must lie in [1, n_tx={self.n_tx}]")
        if not 1 <= self.f_active <= self.n_sub:
            raise ValueError(f"f_active={self.f_active} must lie in [1, n_sub={self.n_sub}]")
        if self.mod_order not in SUPPORTED_ORDERS:
            raise ValueError(f"mod_order must be one of {SUPPORTED_ORDERS}, got {self.mod_order}")
        if self.n_rx < self.k_active:
            raise ValueError(
                f"n_rx={self.n_rx} must be >= k_active={self.k_active} for least-squares detection"
            )
        if not 0.0 < self.special_amp_ratio < 1.0:
            raise ValueError(f"special_amp_ratio must lie in (0, 1), got {self.special_amp_ratio}")

    @property
    def bits_per_symbol(self) -> int:
        return int(math.log2(self.mod_order))

    @cached_property
    def budget(self) -> BitBudget:
        return derive_bit_budget(self)

    @property
    def total_bits(self) -> int:
        return self.budget.total_bits

    @cached_property
    def constellation(self) -> np.ndarray:
        return qam_constellation(self.mod_order)

    @cached_property
    def special_symbol(self) -> complex:
        min_amp = float(np.min(np.abs(self.constellation)))
        return complex(self.special_amp_ratio * min_amp * np.exp(1j * np.pi / 4))

    @cached_property
    def antenna_table(self) -> "AntennaPatternTable":
        return build_antenna_table(self.n_tx, self.k_active, self.budget.c_bits)

    @cached_property
    def subcarrier_table(self) -> np.ndarray:
        """Legal subcarrier patterns, shape ``(2**d1, F)``; row index = rank."""
        n = 1 << self.budget.d1_bits
        return np.array(
            [rank_to_combination(r, self.n_sub, self.f_active) for r in range(n)], dtype=np.int64
        )


def derive_bit_budget(cfg: IMConfig) -> BitBudget:
    c_bits = _floor_log2(math.comb(cfg.n_tx, cfg.k_active))
    d1_bits = _floor_log2(math.comb(cfg.n_sub, cfg.f_active))
    d2_bits = cfg.f_active * int(math.log2(cfg.mod_order))
    return BitBudget(c_bits, d1_bits, d2_bits, cfg.k_active)


def _floor_log2(n: int) -> int:
    # exact for big integers, unlike math.floor(math.log2(n))
    return n.bit_length() - 1


# --------------------------------------------------------------------------
# combinadic ranking


def rank_to_combination(rank: int, n: int, k: int) -> tuple[int, ...]:
    """Return the ``rank``-th k-subset of ``range(n)`` in lexicographic order."""
    total = math.comb(n, k)
    if not 0 <= rank < total:
        raise ValueError(f"rank {rank} out of range [0, {total}) for n={n}, k={k}")
    comb = []
    start = 0
    for slot in range(k):
        for c in range(start, n):
            count = math.comb(n - c - 1, k - slot - 1)
            if rank < count:
                comb.append(c)
                start = c + 1
                break
            rank -= count
    return tuple(comb)


def combination_to_rank(comb: Sequence[int], n: int, k: int) -> int:
    """Inverse of :func:`rank_to_combination`."""
    comb = [int(c) for c in comb]
    if len(comb) != k:
        raise ValueError(f"expected {k} indices, got {len(comb)}")
    if any(b <= a for a, b in zip(comb, comb[1:])):
        raise ValueError(f"combination must be strictly increasing: {comb}")
    if comb and (comb[0] < 0 or comb[-1] >= n):
        raise ValueError(f"combination {comb} not within range({n})")
    rank = 0
    start = 0
    for slot, c in enumerate(comb):
        for skipped in range(start, c):
            rank += math.comb(n - skipped - 1, k - slot - 1)
        start = c + 1
    return rank


@dataclass(frozen=True)
class AntennaPatternTable:
    """The ``2**c_bits`` antenna patterns in use, in table order."""

    n: int
    k: int
    c_bits: int
    patterns: tuple[tuple[int, ...], ...]
    _lookup: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self._lookup.update({p: i for i, p in enumerate(self.patterns)})

    def __len__(self):
        return len(self.patterns)

    def __getitem__(self, index):
        return self.patterns[index]

    def index(self, pattern: Sequence[int]) -> int:
        key = tuple(sorted(int(p) for p in pattern))
        try:
            return self._lookup[key]
        except KeyError:
            raise ValueError(f"antenna pattern {key} is not in the table") from None

    def __contains__(self, pattern) -> bool:
        return tuple(sorted(int(p) for p in pattern)) in self._lookup

    def as_array(self) -> np.ndarray:
        return np.array(self.patterns, dtype=np.int64).reshape(len(self), self.k)

    def mask(self) -> np.ndarray:
        """Boolean activity masks, shape ``(2**c_bits, n)``."""
        m = np.zeros((len(self), self.n), dtype=bool)
        np.put_along_axis(m, self.as_array(), True, axis=1)
        return m


def build_antenna_table(n: int, k: int, c_bits: int) -> AntennaPatternTable:
    size = 1 << c_bits
    if size > math.comb(n, k):
        raise ValueError(f"2**{c_bits} patterns exceed binom({n}, {k}) = {math.comb(n, k)}")
    patterns = tuple(rank_to_combination(r, n, k) for r in range(size))
    return AntennaPatternTable(n, k, c_bits, patterns)


# --------------------------------------------------------------------------
# Gray-coded square QAM


def _gray_pam(bits_per_axis: int) -> np.ndarray:
    """Amplitude for each Gray label on one axis (label 0 -> largest positive)."""
    levels = 1 << bits_per_axis
    labels = np.arange(levels)
    # Gray -> binary position
    pos = labels.copy()
    shift = labels >> 1
    while shift.any():
        pos ^= shift
        shift >>= 1
    return (levels - 1) - 2.0 * pos


def qam_constellation(order: int) -> np.ndarray:
    """Unit-energy Gray-coded constellation indexed by bit label (MSB first)."""
    if order not in SUPPORTED_ORDERS:
        raise ValueError(f"unsupported modulation order {order}")
    if order == 2:
        return np.array([1.0 + 0j, -1.0 + 0j])
    half = int(math.log2(order)) // 2
    pam = _gray_pam(half)
    labels = np.arange(order)
    points = pam[labels >> half] + 1j * pam[labels & ((1 << half) - 1)]
    return points / np.sqrt(np.mean(np.abs(points) ** 2))


def bits_to_int(bits: np.ndarray) -> np.ndarray:
    """Pack the last axis of a 0/1 array (MSB first) into integers."""
    bits = np.asarray(bits)
    if bits.shape[-1] == 0:
        return np.zeros(bits.shape[:-1], dtype=np.int64)
    weights = 1 << np.arange(bits.shape[-1] - 1, -1, -1, dtype=np.int64)
    return bits.astype(np.int64) @ weights


def int_to_bits(values: np.ndarray, width: int) -> np.ndarray:
    values = np.asarray(values, dtype=np.int64)
    shifts = np.arange(width - 1, -1, -1, dtype=np.int64)
    return ((values[..., None] >> shifts) & 1).astype(np.uint8)


def qam_modulate(bits, order: int) -> np.ndarray:
    """Map groups of ``log2(order)`` bits to constellation points."""
    m = int(math.log2(order))
    bits = np.asarray(bits)
    if bits.shape[-1] % m:
        raise ValueError(f"bit count {bits.shape[-1]} is not a multiple of {m}")
    labels = bits_to_int(bits.reshape(*bits.shape[:-1], -1, m))
    return qam_constellation(order)[labels]


def nearest_label(z, constellation: np.ndarray) -> np.ndarray:
    """Label of the closest point; ties go to the lowest label."""
    z = np.asarray(z)
    dist = np.abs(z[..., None] - constellation) ** 2
    return np.argmin(dist, axis=-1)


def qam_demodulate(z, order: int) -> np.ndarray:
    z = np.asarray(z)
    labels = nearest_label(z, qam_constellation(order))
    bits = int_to_bits(labels, int(math.log2(order)))
    return bits.reshape(*z.shape[:-1], -1) if z.ndim else bits


# --------------------------------------------------------------------------
# frames


@dataclass(frozen=True)
class IMFrame:
    """One decoded frame: bits plus the structure they select."""

    bits: np.ndarray
    antenna_set: tuple[int, ...]
    subcarrier_sets: tuple[tuple[int, ...], ...]
    symbols: np.ndarray


@dataclass
class FrameBatch:
    """Table indices describing a batch of frames.

    ``antenna`` has shape ``(B,)`` (antenna-table index), ``subcarrier`` shape
    ``(B, K)`` (subcarrier-table index per link) and ``labels`` shape
    ``(B, K, F)`` (constellation labels on the active subcarriers, ascending).
    """

    antenna: np.ndarray
    subcarrier: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.antenna)

    def __getitem__(self, idx):
        return FrameBatch(self.antenna[idx], self.subcarrier[idx], self.labels[idx])


def encode_bits(bits: np.ndarray, cfg: IMConfig) -> FrameBatch:
    """Vectorised bit mapping; ``bits`` has shape ``(B, total_bits)``."""
    bits = np.atleast_2d(np.asarray(bits))
    b = cfg.budget
    if bits.shape[-1] != b.total_bits:
        raise ValueError(f"expected {b.total_bits} bits per frame, got {bits.shape[-1]}")
    antenna = bits_to_int(bits[:, : b.c_bits])
    links = bits[:, b.c_bits :].reshape(len(bits), cfg.k_active, b.link_bits)
    subcarrier = bits_to_int(links[..., : b.d1_bits])
    sym_bits = links[..., b.d1_bits :].reshape(len(bits), cfg.k_active, cfg.f_active, -1)
    labels = bits_to_int(sym_bits)
    return FrameBatch(antenna, subcarrier, labels)


def decode_bits(frames: FrameBatch, cfg: IMConfig) -> np.ndarray:
    """Inverse of :func:`encode_bits`."""
    b = cfg.budget
    n_ant, n_sub = len(cfg.antenna_table), len(cfg.subcarrier_table)
    if np.any((frames.antenna < 0) | (frames.antenna >= n_ant)):
        raise ValueError("antenna index outside the pattern table")
    if np.any((frames.subcarrier < 0) | (frames.subcarrier >= n_sub)):
        raise ValueError("subcarrier pattern rank >= 2**d1")
    B = len(frames)
    ant = int_to_bits(frames.antenna, b.c_bits)
    sub = int_to_bits(frames.subcarrier, b.d1_bits)
    sym = int_to_bits(frames.labels, cfg.bits_per_symbol).reshape(B, cfg.k_active, -1)
    links = np.concatenate([sub, sym], axis=-1).reshape(B, -1)
    return np.concatenate([ant, links], axis=-1)


def active_masks(frames: FrameBatch, cfg: IMConfig) -> tuple[np.ndarray, np.ndarray]:
    """Return antenna index arrays ``(B, K)`` and subcarrier masks ``(B, K, N_f)``."""
    antennas = cfg.antenna_table.as_array()[frames.antenna]
    sub_sets = cfg.subcarrier_table[frames.subcarrier]
    mask = np.zeros(sub_sets.shape[:2] + (cfg.n_sub,), dtype=bool)
    np.put_along_axis(mask, sub_sets, True, axis=-1)
    return antennas, mask


def active_rows(frames: FrameBatch, cfg: IMConfig) -> np.ndarray:
    """The ``K x N_f`` active-row block of each signal matrix, shape ``(B, K, N_f)``."""
    _, mask = active_masks(frames, cfg)
    sub_sets = cfg.subcarrier_table[frames.subcarrier]
    rows = np.full(mask.shape, cfg.special_symbol, dtype=complex)
    np.put_along_axis(rows, sub_sets, cfg.constellation[frames.labels], axis=-1)
    return rows


def signal_matrices(frames: FrameBatch, cfg: IMConfig) -> np.ndarray:
    """Transmit matrices ``X_s`` of shape ``(B, N_t, N_f)``."""
    antennas, _ = active_masks(frames, cfg)
    x = np.zeros((len(frames), cfg.n_tx, cfg.n_sub), dtype=complex)
    np.put_along_axis(x, antennas[..., None], active_rows(frames, cfg), axis=1)
    return x


def frame_from_batch(frames: FrameBatch, cfg: IMConfig, i: int = 0) -> IMFrame:
    one = frames[i : i + 1]
    antennas, _ = active_masks(one, cfg)
    sub_sets = cfg.subcarrier_table[one.subcarrier[0]]
    return IMFrame(
        bits=decode_bits(one, cfg)[0],
        antenna_set=tuple(int(a) for a in antennas[0]),
        subcarrier_sets=tuple(tuple(int(s) for s in row) for row in sub_sets),
        symbols=cfg.constellation[one.labels[0]],
    )


def frame_to_batch(frame: IMFrame, cfg: IMConfig) -> FrameBatch:
    antenna = cfg.antenna_table.index(frame.antenna_set)
    n_legal = len(cfg.subcarrier_table)
    ranks = []
    for sub in frame.subcarrier_sets:
        r = combination_to_rank(sub, cfg.n_sub, cfg.f_active)
        if r >= n_legal:
            raise ValueError(f"subcarrier set {tuple(sub)} has rank {r} >= 2**d1 = {n_legal}")
        ranks.append(r)
    labels = nearest_label(np.asarray(frame.symbols), cfg.constellation)
    return FrameBatch(
        np.array([antenna]), np.array([ranks], dtype=np.int64), labels.reshape(1, cfg.k_active, -1)
    )


def map_bits_to_frame(bits, cfg: IMConfig) -> IMFrame:
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.ndim != 1:
        raise ValueError("map_bits_to_frame takes a single bit vector; use encode_bits for batches")
    return frame_from_batch(encode_bits(bits[None], cfg), cfg)


def demap_frame_to_bits(frame: IMFrame, cfg: IMConfig) -> np.ndarray:
    return decode_bits(frame_to_batch(frame, cfg), cfg)[0]


def frame_to_signal_matrix(frame: IMFrame, cfg: IMConfig) -> np.ndarray:
    return signal_matrices(frame_to_batch(frame, cfg), cfg)[0]


def random_bits(rng: np.random.Generator, n_frames: int, cfg: IMConfig) -> np.ndarray:
    return rng.integers(0, 2, size=(n_frames, cfg.total_bits), dtype=np.uint8)
