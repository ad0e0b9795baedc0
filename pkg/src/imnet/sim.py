"""Monte-Carlo BER sweeps, timing benchmarks and the results CSV."""

from __future__ import annotations

import csv
import io
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import astuple, dataclass, fields
from typing import Callable, Optional

import numpy as np

from .channel import ChannelConfig, apply_channel, draw_channel, snr_to_es
from .config import SweepSpec
from .detectors import (
    DetectorOutput,
    SearchSpaceTooLarge,
    imnet_detect,
    mf_llr_detect,
    mld_detect,
    ml_search_size,
    ML_SEARCH_CAP,
)
from .mapping import IMConfig, encode_bits, random_bits, signal_matrices
from .nn.network import Network
from .rng import substream

log = logging.getLogger(__name__)

WORKERS_ENV = "IMNET_WORKERS"

CSV_FIELDS = (
    "detector", "channel_model", "csir_mode", "snr_db", "frames",
    "total_bits", "bit_errors", "ber", "elapsed_ms", "seed",
)


@dataclass(frozen=True)
class ResultRow:
    detector: str
    channel_model: str
    csir_mode: str
    snr_db: float
    frames: int
    total_bits: int
    bit_errors: int
    ber: float
    elapsed_ms: float
    seed: int

    @property
    def skipped(self) -> bool:
        """Rows with no frames mark detectors that refused the configuration."""
        return self.frames == 0

    @property
    def std_error(self) -> float:
        if self.total_bits == 0:
            return math.nan
        return math.sqrt(self.ber * (1.0 - self.ber) / self.total_bits)


def write_csv(rows, fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for row in rows:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in astuple(row)])


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    write_csv(rows, buf)
    return buf.getvalue()


def read_csv(fh) -> list[ResultRow]:
    reader = csv.reader(fh)
    header = next(reader)
    if tuple(header) != CSV_FIELDS:
        raise ValueError(f"unexpected CSV header {header}")
    kinds = [f.type for f in fields(ResultRow)]
    conv = {"str": str, "float": float, "int": int}
    return [ResultRow(*(conv[k](v) for k, v in zip(kinds, rec))) for rec in reader]


# --------------------------------------------------------------------------


Detector = Callable[[np.ndarray, np.ndarray, float], DetectorOutput]


def make_detectors(
    names,
    cfg: IMConfig,
    ad_net: Optional[Network] = None,
    sd_net: Optional[Network] = None,
    tau: float = 0.5,
    ml_cap: int = ML_SEARCH_CAP,
) -> dict[str, Detector]:
    """Map detector names to ``fn(Y, H, es) -> DetectorOutput``."""
    out = {}
    for name in names:
        if name == "ml":
            out[name] = lambda Y, H, es: mld_detect(Y, H, cfg, es, cap=ml_cap)
        elif name == "mf-llr":
            out[name] = lambda Y, H, es: mf_llr_detect(Y, H, cfg, es)
        elif name in ("dlbmp", "imnet"):
            if ad_net is None or (name == "imnet" and sd_net is None):
                raise ValueError(f"detector {name!r} needs trained weights")
            sd = sd_net if name == "imnet" else None
            out[name] = lambda Y, H, es, sd=sd: imnet_detect(Y, H, ad_net, sd, tau, cfg, es)
        else:
            raise ValueError(f"unknown detector {name!r}")
    return out


def _snr_key(snr_db: float) -> int:
    return int(round(snr_db * 1000)) + 10**6


def simulate_block(
    im_cfg: IMConfig,
    ch_cfg: ChannelConfig,
    snr_db: float,
    seed: int,
    block: int,
    n: int,
    noiseless: bool = False,
):
    """Frames of one block: ``(bits, Y, H_rx)`` from the block's own substreams."""
    key = (_snr_key(snr_db), block)
    bits = random_bits(substream(seed, "bits", *key), n, im_cfg)
    x = signal_matrices(encode_bits(bits, im_cfg), im_cfg)
    ch = draw_channel(
        im_cfg, ch_cfg, substream(seed, "channel", *key), n, snr_db=snr_db,
        csir_rng=substream(seed, "csir", *key),
    )
    noise = None if noiseless else substream(seed, "noise", *key)
    return bits, apply_channel(x, ch, snr_db, noise), ch.h_rx


def worker_count() -> int:
    """Worker threads for a sweep, from ``IMNET_WORKERS`` (default 1)."""
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return max(n, 1)


def _run_block(im_cfg, ch_cfg, snr, spec, block, n, names, detectors, noiseless):
    bits, Y, H = simulate_block(im_cfg, ch_cfg, snr, spec.seed, block, n, noiseless)
    es = snr_to_es(snr)
    out = {}
    for name in names:
        t0 = time.perf_counter()
        decided = detectors[name](Y, H, es).bits(im_cfg)
        out[name] = (int(np.count_nonzero(decided != bits)), time.perf_counter() - t0)
    return out


def run_ber_sweep(
    im_cfg: IMConfig,
    ch_cfg: ChannelConfig,
    spec: SweepSpec,
    detectors: dict[str, Detector],
    noiseless: bool = False,
    record_timing: bool = False,
    workers: Optional[int] = None,
) -> list[ResultRow]:
    """One row per (detector, SNR) point.

    All detectors see the same frames. A detector stops at a point once it
    has collected ``min_bit_errors`` errors (when positive) or used the frame
    budget. Stopping is decided on block boundaries, folding block results in
    index order, so rows do not depend on timing or on ``workers``; blocks
    evaluated past a detector's stopping point are discarded. ``elapsed_ms``
    is only filled in with ``record_timing``.
    """
    workers = worker_count() if workers is None else max(int(workers), 1)
    n_blocks = -(-spec.frames // spec.block)
    rows = []
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        for snr in spec.snr_grid:
            active, frames, errors, elapsed = [], {}, {}, {}
            for name in detectors:
                if name == "ml" and ml_search_size(im_cfg) > ML_SEARCH_CAP:
                    log.warning("ml skipped: %s", SearchSpaceTooLarge(ml_search_size(im_cfg), ML_SEARCH_CAP))
                    rows.append(ResultRow(name, ch_cfg.model, ch_cfg.csir, float(snr), 0, 0, 0, math.nan, 0.0, spec.seed))
                    continue
                active.append(name)
                frames[name] = errors[name] = 0
                elapsed[name] = 0.0
            order = list(active)
            block = 0
            while active and block < n_blocks:
                wave = range(block, min(block + workers, n_blocks))
                sizes = [min(spec.block, spec.frames - b * spec.block) for b in wave]
                args = [(im_cfg, ch_cfg, snr, spec, b, n, tuple(active), detectors, noiseless)
                        for b, n in zip(wave, sizes)]
                results = list(pool.map(lambda a: _run_block(*a), args)) if pool else [_run_block(*a) for a in args]
                for n, res in zip(sizes, results):
                    for name in list(active):
                        errs, secs = res[name]
                        errors[name] += errs
                        elapsed[name] += secs
                        frames[name] += n
                        if 0 < spec.min_bit_errors <= errors[name]:
                            active.remove(name)
                block += len(wave)
            for name in order:
                total = frames[name] * im_cfg.total_bits
                ms = round(elapsed[name] * 1e3, 3) if record_timing else 0.0
                rows.append(
                    ResultRow(name, ch_cfg.model, ch_cfg.csir, float(snr), frames[name], total,
                              errors[name], errors[name] / total, ms, spec.seed)
                )
    finally:
        if pool:
            pool.shutdown()
    return rows


@dataclass
class BenchResult:
    rows: list
    seconds: dict

    def ratios(self, reference: str = "imnet") -> dict:
        ref = self.seconds.get(reference)
        if not ref:
            return {}
        return {k: v / ref for k, v in self.seconds.items()}

    def table(self) -> str:
        ratios = self.ratios()
        lines = ["detector,seconds,ratio_vs_imnet"]
        for k, v in self.seconds.items():
            r = ratios.get(k)
            lines.append(f"{k},{v:.6f},{'' if r is None else f'{r:.3f}'}")
        return "\n".join(lines) + "\n"


def run_bench(
    im_cfg: IMConfig,
    detectors: dict[str, Detector],
    seed: int = 0,
    frames: int = 500,
    snr_db: float = 20.0,
    batched: bool = False,
) -> BenchResult:
    """Wall-clock time per detector over ``frames`` frames.

    Rayleigh fading, perfect CSIR. Frames are detected one at a time unless
    ``batched``; a warm-up pass over the first frame is not timed. Detection
    time only: no frame generation, and no training for learned detectors.
    """
    ch_cfg = ChannelConfig("rayleigh", csir="perfect")
    bits, Y, H = simulate_block(im_cfg, ch_cfg, snr_db, seed, 0, frames)
    es = snr_to_es(snr_db)
    rows, seconds = [], {}
    for name, det in detectors.items():
        if name == "ml" and ml_search_size(im_cfg) > ML_SEARCH_CAP:
            rows.append(ResultRow(name, "rayleigh", "perfect", float(snr_db), 0, 0, 0, math.nan, 0.0, seed))
            continue
        det(Y[:1], H[:1], es)
        t0 = time.perf_counter()
        if batched:
            decided = det(Y, H, es).bits(im_cfg)
        else:
            decided = np.concatenate([det(Y[i : i + 1], H[i : i + 1], es).bits(im_cfg) for i in range(frames)])
        seconds[name] = time.perf_counter() - t0
        errs = int(np.count_nonzero(decided != bits))
        total = frames * im_cfg.total_bits
        rows.append(ResultRow(name, "rayleigh", "perfect", float(snr_db), frames, total, errs, errs / total, 0.0, seed))
    return BenchResult(rows, seconds)
