"""Command-line front end.

Subcommands: ``gen-data``, ``train-ad``, ``train-sd``, ``eval`` and ``bench``.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import SCENARIOS, ConfigError, IM_KEYS, build_configs, read_config_file
from .detectors import ML_SEARCH_CAP
from .nn.io import WeightFileError, load_weights, save_weights
from .sim import make_detectors, run_bench, run_ber_sweep, write_csv
from .training import (
    config_tag,
    evaluate_ad_accuracy,
    generate_dataset,
    load_dataset,
    save_dataset,
    train_ad,
    train_sd,
)

log = logging.getLogger("imnet")

HOLDOUT_BLOCK = 10**6  # first block index of held-out data


class CLIError(Exception):
    pass


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output path (CSV, weights or dataset)")
    p.add_argument("--detectors", help="comma-separated: ml, mf-llr, dlbmp, imnet")
    p.add_argument("--snr-min", type=float)
    p.add_argument("--snr-max", type=float)
    p.add_argument("--snr-step", type=float)
    p.add_argument("--frames", type=int)
    p.add_argument("--channel", choices=("rayleigh", "correlated"))
    p.add_argument("--csir", choices=("perfect", "imperfect"))
    p.add_argument("--weights-ad")
    p.add_argument("--weights-sd")
    p.add_argument("--tau", type=float)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="imnet", description="IM-MIMO-OFDM simulation and detection")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="simulate a training dataset")
    _common(p)
    p.add_argument("--records", type=int, help="number of records (default n_train)")
    p.add_argument("--holdout", action="store_true", help="draw from the held-out streams")

    p = sub.add_parser("train-ad", help="train the antenna detector")
    _common(p)
    p.add_argument("--data", help="dataset file (simulated from the config if omitted)")

    p = sub.add_parser("train-sd", help="train the denoiser behind a trained antenna detector")
    _common(p)
    p.add_argument("--data", help="dataset file (simulated from the config if omitted)")

    p = sub.add_parser("eval", help="Monte-Carlo BER sweep")
    _common(p)
    p.add_argument("--min-bit-errors", type=int)
    p.add_argument("--record-timing", action="store_true", help="fill elapsed_ms (not reproducible)")
    p.add_argument("--noiseless", action="store_true", help="disable receiver noise")

    p = sub.add_parser("bench", help="detection time over a fixed number of frames")
    _common(p)
    p.add_argument("--snr", type=float, default=20.0)
    p.add_argument("--batched", action="store_true", help="detect all frames in one call")
    p.add_argument("--timing-out", help="write the timing table here as well as to stdout")
    return parser


def _overrides(args) -> dict:
    o = {
        "seed": args.seed,
        "channel_model": args.channel,
        "csir_mode": args.csir,
        "tau": args.tau,
        "detectors": args.detectors,
        "snr_min": args.snr_min,
        "snr_max": args.snr_max,
        "snr_step": args.snr_step,
        "out": args.out,
    }
    if args.command == "eval":
        o["frames_per_point"] = args.frames
        o["min_bit_errors"] = getattr(args, "min_bit_errors", None)
    return o


def _load_net(path, role, im_cfg):
    if path is None:
        return None
    net = load_weights(path)
    if net.meta.get("role", role) != role:
        raise CLIError(f"{path}: holds {net.meta['role']} weights, expected {role}")
    tag = net.meta.get("im_config")
    if tag is not None and tag != config_tag(im_cfg):
        raise CLIError(f"{path}: trained for configuration {tag}, current is {config_tag(im_cfg)}")
    return net


def _dataset(args, im_cfg, ch_cfg, train_cfg):
    if args.data:
        ds = load_dataset(args.data)
        if ds.cfg != im_cfg:
            raise CLIError(f"{args.data}: dataset configuration does not match")
        return ds
    return generate_dataset(im_cfg, ch_cfg, train_cfg.n_train, train_cfg.snr_grid, train_cfg.seed)


def _require_out(args):
    if not args.out:
        raise CLIError(f"{args.command} needs --out")
    return args.out


def cmd_gen_data(args, im_cfg, ch_cfg, train_cfg, sweep):
    out = _require_out(args)
    n = args.records or (train_cfg.n_holdout if args.holdout else train_cfg.n_train)
    first = HOLDOUT_BLOCK if args.holdout else 0
    ds = generate_dataset(im_cfg, ch_cfg, n, train_cfg.snr_grid, train_cfg.seed, first_block=first)
    save_dataset(ds, out)
    print(f"wrote {len(ds)} records to {out}")
    return 0


def _holdout(im_cfg, ch_cfg, train_cfg, snr):
    return generate_dataset(im_cfg, ch_cfg, train_cfg.n_holdout, (snr,), train_cfg.seed, first_block=HOLDOUT_BLOCK)


def cmd_train_ad(args, im_cfg, ch_cfg, train_cfg, sweep):
    out = _require_out(args)
    ds = _dataset(args, im_cfg, ch_cfg, train_cfg)
    res = train_ad(ds, train_cfg)
    res.net.meta["tau"] = repr(train_cfg.tau)
    save_weights(res.net, out)
    print(f"AD final loss {res.losses[-1]:.6g}" if res.losses else "AD untrained")
    if train_cfg.n_holdout:
        acc, ant = evaluate_ad_accuracy(_holdout(im_cfg, ch_cfg, train_cfg, 20.0), res.net, train_cfg.tau)
        print(f"held-out pattern accuracy at 20 dB: {acc:.4f} (per antenna {ant:.4f})")
    print(f"wrote {out}")
    return 0


def cmd_train_sd(args, im_cfg, ch_cfg, train_cfg, sweep):
    out = _require_out(args)
    ad = _load_net(args.weights_ad, "ad", im_cfg)
    if ad is None:
        raise CLIError("train-sd needs --weights-ad")
    ds = _dataset(args, im_cfg, ch_cfg, train_cfg)
    res = train_sd(ds, ad, train_cfg)
    save_weights(res.net, out)
    print(f"SD final loss {res.losses[-1]:.6g}" if res.losses else "SD untrained")
    print(f"wrote {out}")
    return 0


def _detectors(args, im_cfg, train_cfg, sweep):
    ad = _load_net(args.weights_ad, "ad", im_cfg)
    sd = _load_net(args.weights_sd, "sd", im_cfg)
    for name in sweep.detectors:
        if name in ("dlbmp", "imnet") and ad is None:
            raise CLIError(f"detector {name} needs --weights-ad")
        if name == "imnet" and sd is None:
            raise CLIError("detector imnet needs --weights-sd")
    tau = train_cfg.tau
    if args.tau is None and ad is not None and "tau" in ad.meta:
        tau = float(ad.meta["tau"])
    return make_detectors(sweep.detectors, im_cfg, ad, sd, tau, ML_SEARCH_CAP)


def _emit_rows(rows, out):
    if out:
        with open(out, "w", newline="") as fh:
            write_csv(rows, fh)
    else:
        write_csv(rows, sys.stdout)


def cmd_eval(args, im_cfg, ch_cfg, train_cfg, sweep):
    dets = _detectors(args, im_cfg, train_cfg, sweep)
    rows = run_ber_sweep(im_cfg, ch_cfg, sweep, dets, noiseless=args.noiseless, record_timing=args.record_timing)
    _emit_rows(rows, sweep.out)
    expected = len(sweep.detectors) * len(sweep.snr_grid)
    return 0 if len(rows) == expected else 1


def cmd_bench(args, im_cfg, ch_cfg, train_cfg, sweep):
    dets = _detectors(args, im_cfg, train_cfg, sweep)
    res = run_bench(im_cfg, dets, seed=sweep.seed, frames=args.frames or 500, snr_db=args.snr, batched=args.batched)
    _emit_rows(res.rows, sweep.out)
    table = res.table()
    stream = sys.stderr if sweep.out is None else sys.stdout
    stream.write(table)
    if args.timing_out:
        Path(args.timing_out).write_text(table)
    return 0 if len(res.rows) == len(sweep.detectors) else 1


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-ad": cmd_train_ad,
    "train-sd": cmd_train_sd,
    "eval": cmd_eval,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        if args.config:
            values = read_config_file(args.config)
        else:
            values = {k: str(getattr(SCENARIOS[1], k)) for k in IM_KEYS}
        configs = build_configs(values, _overrides(args))
        return COMMANDS[args.command](args, *configs)
    except (ConfigError, WeightFileError, CLIError, OSError, ValueError) as exc:
        print(f"imnet {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
