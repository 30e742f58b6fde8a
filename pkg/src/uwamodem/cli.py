"""Command-line entry points: gen-dataset, train, eval-rate, eval-ber, inspect."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import net, storage
from .config import PROFILES, ConfigError, SystemConfig, derive_dims, spawn_stream
from .evaluation import MODES, rate_sweep, simulate_ber
from .modem import zp_ofdm_modem
from .training import PLANS, TrainingPlan, generate_dataset, train

log = logging.getLogger("uwamodem")

ARCHS = {"desk": net.DESK_ARCH, "paper": net.PAPER_ARCH}
BASELINE = "zp-ofdm"


def _snr_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def resolve_config(args) -> SystemConfig:
    config = SystemConfig.load(args.config) if args.config else PROFILES[args.profile]
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    return config


def _provenance(config: SystemConfig, **extra) -> str:
    items = [f"config={config.digest()}", f"seed={config.seed}"]
    items += [f"{k}={v}" for k, v in extra.items()]
    return " ".join(items)


def _load_modems(specs, config: SystemConfig):
    modems = []
    for spec in specs:
        if spec == BASELINE:
            modems.append((BASELINE, zp_ofdm_modem(config)))
        else:
            modems.append((Path(spec).stem, storage.load_modem(spec)))
    return modems


def cmd_gen_dataset(args) -> int:
    config = resolve_config(args)
    dataset = generate_dataset(config, args.count, spawn_stream(config.seed, f"dataset-{args.split}"))
    storage.save_dataset(dataset, args.out)
    log.info("wrote %d pairs to %s", len(dataset), args.out)
    return 0


def cmd_train(args) -> int:
    train_set = storage.load_dataset(args.train)
    val_set = storage.load_dataset(args.val)
    config = train_set.config
    if args.config or args.seed is not None:
        requested = resolve_config(args)
        if derive_dims(requested) != derive_dims(config) or requested.N != config.N:
            raise ConfigError("dataset dimensions do not match the requested configuration")
        config = requested
    if derive_dims(val_set.config) != derive_dims(config) or val_set.config.N != config.N:
        raise ConfigError("validation set dimensions do not match the training set")
    base = PLANS[args.profile]
    plan = TrainingPlan(
        e1=base.e1 if args.e1 is None else args.e1,
        e2=base.e2 if args.e2 is None else args.e2,
        batch_size=args.batch_size or base.batch_size,
        n_train=len(train_set),
        n_val=len(val_set),
        n_test=base.n_test,
    )
    result = train(config, ARCHS[args.profile], plan, train_set, val_set)
    storage.save_checkpoint(result.params, args.checkpoint, result.state)
    storage.save_modem(result.modem, args.modem)
    history = args.history or str(Path(args.modem).with_suffix(".history.csv"))
    fields = ["stage", "epoch", "train_loss", "train_perf", "train_dist", "val_loss1", "val_dist", "val_loss2"]
    storage.write_csv(history, fields, result.history, _provenance(config, e1=plan.e1, e2=plan.e2))
    log.info("wrote %s, %s and %s", args.checkpoint, args.modem, history)
    return 0


def cmd_eval_rate(args) -> int:
    dataset = storage.load_dataset(args.dataset)
    config = dataset.config
    snrs = _snr_list(args.snr)
    rows = []
    for label, modem in _load_modems(args.modem, config):
        for row in rate_sweep(modem, dataset.H, snrs, label).rows:
            rows.append({"modem": label, **row})
    storage.write_csv(args.out, ["modem", "snr_db", "avg_rate", "min_rate"], rows, _provenance(config))
    return 0


def cmd_eval_ber(args) -> int:
    if args.blocks < 1:
        raise ValueError("--blocks must be >= 1")
    config = resolve_config(args)
    if args.a_max is not None:
        config = config.replace(a_max=args.a_max)
    modes = MODES if args.mode == "both" else (args.mode,)
    snrs = _snr_list(args.snr)
    rows = []
    for label, modem in _load_modems(args.modem, config):
        for mode in modes:
            curve = simulate_ber(modem, config, snrs, mode, args.blocks, spawn_stream(config.seed, "ber"), label)
            rows += [{"modem": label, "mode": mode, **row} for row in curve.rows]
    fields = ["modem", "mode", "snr_db", "bits", "errors", "ber", "skipped_blocks"]
    extra = {"a_max": config.a_max, "blocks": args.blocks}
    if args.a_max is not None:
        extra["a_max_override"] = args.a_max
    storage.write_csv(args.out, fields, rows, _provenance(config, **extra))
    return 0


def cmd_inspect(args) -> int:
    print(storage.inspect_file(args.path))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file (keys as in SystemConfig)")
    common.add_argument("--seed", type=int, help="override the configuration seed")
    common.add_argument("--threads", type=int, help="limit BLAS threads")
    common.add_argument("--profile", choices=sorted(PROFILES), default="desk")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="uwamodem", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-dataset", parents=[common], help="generate channel / ZP-OFDM pairs")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--split", default="train", help="label of the random stream (train, val, test, ...)")
    p.set_defaults(func=cmd_gen_dataset)

    p = sub.add_parser("train", parents=[common], help="two-stage training and final modem")
    p.add_argument("--train", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--modem", required=True)
    p.add_argument("--history")
    p.add_argument("--e1", type=int)
    p.add_argument("--e2", type=int)
    p.add_argument("--batch-size", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval-rate", parents=[common], help="average / minimum sub-channel rate vs SNR")
    p.add_argument("--modem", action="append", required=True, help=f"modem file or '{BASELINE}'")
    p.add_argument("--dataset", required=True)
    p.add_argument("--snr", default="-5,0,5,10,15,20")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval_rate)

    p = sub.add_parser("eval-ber", parents=[common], help="QPSK bit error rate vs SNR")
    p.add_argument("--modem", action="append", required=True, help=f"modem file or '{BASELINE}'")
    p.add_argument("--snr", default="0,5,10,15,20")
    p.add_argument("--mode", choices=[*MODES, "both"], default="both")
    p.add_argument("--blocks", type=int, default=1000)
    p.add_argument("--a-max", type=float, help="evaluate at a different maximum Doppler scaling factor")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval_ber)

    p = sub.add_parser("inspect", help="summarize a dataset, modem or checkpoint file")
    p.add_argument("path")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = getattr(args, "threads", None)
    try:
        if threads:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=threads):
                return args.func(args)
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
