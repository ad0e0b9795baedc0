"""``key = value`` configuration files and command-line overrides."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .channel import ChannelConfig
from .detectors import DETECTORS
from .mapping import IMConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SweepSpec:
    snr_grid: tuple = (0.0, 10.0, 20.0, 30.0)
    frames: int = 10_000
    detectors: tuple = ("ml", "mf-llr", "imnet")
    seed: int = 0
    min_bit_errors: int = 100
    block: int = 1000
    out: Optional[str] = None

    def __post_init__(self):
        if self.frames < 1:
            raise ConfigError(f"frames_per_point must be >= 1, got {self.frames}")
        if not self.snr_grid:
            raise ConfigError("snr grid is empty")
        unknown = set(self.detectors) - set(DETECTORS)
        if unknown:
            raise ConfigError(f"unknown detectors {sorted(unknown)}; choose from {DETECTORS}")


IM_KEYS = ("n_tx", "n_rx", "n_sub", "k_active", "f_active", "mod_order", "special_amp_ratio")
CHANNEL_KEYS = ("channel_model", "rho", "csir_mode", "n_pilot", "pilot_energy_mode")
SWEEP_KEYS = ("snr_grid", "frames_per_point", "min_bit_errors", "detectors", "seed")
TRAIN_KEYS = (
    "epochs_ad", "epochs_sd", "batch_size", "learning_rate", "n_train", "n_holdout",
    "train_snr_grid", "ad_features", "sd_features", "tau",
)
ALL_KEYS = IM_KEYS + CHANNEL_KEYS + SWEEP_KEYS + TRAIN_KEYS


def read_config_file(path) -> dict[str, str]:
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        if key not in ALL_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = value
    return values


def _float_list(text: str) -> tuple:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _convert(key, value, kind):
    try:
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot parse {value!r}") from None


def build_configs(values: dict, overrides: Optional[dict] = None):
    """Validated ``(IMConfig, ChannelConfig, TrainConfig, SweepSpec)``.

    ``overrides`` holds command-line values (``None`` entries are ignored);
    they win over file values. Recognised override keys are the file keys plus
    ``snr_min``, ``snr_max``, ``snr_step`` and ``out``.
    """
    values = dict(values)
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    extra = {k: overrides.pop(k) for k in ("snr_min", "snr_max", "snr_step", "out") if k in overrides}
    for k in overrides:
        if k not in ALL_KEYS:
            raise ConfigError(f"unknown override {k!r}")
    values.update({k: str(v) for k, v in overrides.items()})

    def get(key, kind, default):
        return _convert(key, values[key], kind) if key in values else default

    im_kwargs = {}
    for key in IM_KEYS:
        if key in values:
            im_kwargs[key] = _convert(key, values[key], float if key == "special_amp_ratio" else int)
    missing = [k for k in IM_KEYS[:5] if k not in im_kwargs]
    if missing:
        raise ConfigError(f"missing required keys: {', '.join(missing)}")
    im_cfg = _validated(IMConfig, im_kwargs)

    pe = values.get("pilot_energy_mode", "data")
    ch_kwargs = dict(
        model=values.get("channel_model", "rayleigh"),
        rho=get("rho", float, 0.5),
        csir=values.get("csir_mode", "perfect"),
        n_pilot=get("n_pilot", int, None),
        pilot_energy=None if pe == "data" else _convert("pilot_energy_mode", pe, float),
    )
    ch_cfg = _validated(ChannelConfig, ch_kwargs)

    train_kwargs = dict(
        epochs_ad=get("epochs_ad", int, TrainConfig.epochs_ad),
        epochs_sd=get("epochs_sd", int, TrainConfig.epochs_sd),
        batch_size=get("batch_size", int, TrainConfig.batch_size),
        learning_rate=get("learning_rate", float, TrainConfig.learning_rate),
        n_train=get("n_train", int, TrainConfig.n_train),
        n_holdout=get("n_holdout", int, TrainConfig.n_holdout),
        snr_grid=get("train_snr_grid", _float_list, TrainConfig.snr_grid),
        ad_features=values.get("ad_features", TrainConfig.ad_features),
        sd_features=values.get("sd_features", TrainConfig.sd_features),
        tau=get("tau", float, TrainConfig.tau),
        seed=get("seed", int, TrainConfig.seed),
    )
    train_cfg = _validated(TrainConfig, train_kwargs)

    grid = get("snr_grid", _float_list, SweepSpec.snr_grid)
    if extra.keys() & {"snr_min", "snr_max", "snr_step"}:
        lo = float(extra.get("snr_min", min(grid)))
        hi = float(extra.get("snr_max", max(grid)))
        step = float(extra.get("snr_step", np.diff(sorted(grid)).min() if len(grid) > 1 else 5.0))
        if step <= 0 or hi < lo:
            raise ConfigError(f"invalid SNR range {lo}..{hi} step {step}")
        grid = tuple(float(v) for v in np.round(np.arange(lo, hi + step / 2, step), 10))
    dets = values.get("detectors")
    sweep_kwargs = dict(
        snr_grid=grid,
        frames=get("frames_per_point", int, SweepSpec.frames),
        detectors=tuple(d.strip() for d in dets.split(",")) if dets else SweepSpec.detectors,
        seed=get("seed", int, SweepSpec.seed),
        min_bit_errors=get("min_bit_errors", int, SweepSpec.min_bit_errors),
        out=extra.get("out"),
    )
    sweep = _validated(SweepSpec, sweep_kwargs)
    return im_cfg, ch_cfg, train_cfg, sweep


def _validated(cls, kwargs):
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def parse_config(path=None, overrides: Optional[dict] = None):
    values = read_config_file(path) if path is not None else {}
    return build_configs(values, overrides)


def format_config(im_cfg: IMConfig, ch_cfg: ChannelConfig) -> str:
    lines = [f"{k} = {getattr(im_cfg, k)}" for k in IM_KEYS]
    lines += [
        f"channel_model = {ch_cfg.model}",
        f"rho = {ch_cfg.rho}",
        f"csir_mode = {ch_cfg.csir}",
    ]
    if ch_cfg.n_pilot is not None:
        lines.append(f"n_pilot = {ch_cfg.n_pilot}")
    lines.append(f"pilot_energy_mode = {'data' if ch_cfg.pilot_energy is None else ch_cfg.pilot_energy}")
    return "\n".join(lines) + "\n"


SCENARIOS = {
    1: IMConfig(4, 1, 4, 1, 2, 4),
    2: IMConfig(8, 2, 8, 2, 6, 4),
    3: IMConfig(16, 4, 16, 4, 12, 4),
}
