"""Command-line entry point.

Exit codes: 0 success, 1 usage error (bad flags, unreadable config),
2 runtime failure (crash, solver or planner failure, timeout).
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .. import conenet
from ..errors import ConeRaceError
from ..track import generate_loop
from .config import ConfigError, EpisodeConfig, dump, load
from .episode import run_episode
from .io import read_belief, replay, write_belief, write_metrics, write_run
from .metrics import compute_metrics

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
CONTROLLER_FLAGS = {"mpc": "mpc", "pp": "pure_pursuit", "pure_pursuit": "pure_pursuit"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _seed(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _common(p: argparse.ArgumentParser, out_help: str) -> None:
    p.add_argument("--config", type=Path, help="INI config file (defaults for anything missing)")
    p.add_argument("--seed", type=_seed, help="random seed (overrides the config)")
    p.add_argument("--out", type=Path, help=out_help)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="conerace", description="Driverless racecar simulator and autonomy stack.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("sim", help="run one episode and write its run directory")
    _common(p, "run directory (default: run)")
    p.add_argument("--controller", choices=sorted(CONTROLLER_FLAGS), help="race controller")
    p.add_argument("--dump-config", action="store_true", help="print the effective config and exit")
    p.add_argument("--on-belief", action="store_true", help="report lateral error on the estimate")

    p = sub.add_parser("compare", help="paired MPC and pure-pursuit episodes with a metrics table")
    _common(p, "output directory (default: compare)")

    p = sub.add_parser("replay", help="re-run the estimator over a run directory's measurements")
    _common(p, "run directory written by sim")

    p = sub.add_parser("gen-track", help="generate a cone track CSV")
    _common(p, "track CSV (default: track.csv)")

    p = sub.add_parser("gen-dataset", help="generate the synthetic cone-color dataset")
    _common(p, "dataset CSV (default: cones_dataset.csv)")
    p.add_argument("--samples", type=int, default=10000, help="number of samples")

    p = sub.add_parser("train", help="train the cone-color network")
    _common(p, "model file (default: conenet.bin); the history goes next to it")
    p.add_argument("--dataset", type=Path, required=True, help="dataset CSV")
    p.add_argument("--epochs", type=int, default=200)

    p = sub.add_parser("eval-conenet", help="test accuracy of a trained network")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--dataset", type=Path, required=True)
    return parser


def _config(args) -> EpisodeConfig:
    cfg = load(args.config) if args.config is not None else EpisodeConfig()
    if args.seed is not None:
        cfg = cfg.with_(seed=args.seed)
    return cfg


def _report(label: str, log, on_belief: bool = False) -> None:
    print(f"{label}: {log.status}{' (' + log.message + ')' if log.message else ''}")
    try:
        m = compute_metrics(log, on_belief=on_belief)
    except ConeRaceError:
        return
    print(
        f"  mean|e_y| {m.mean_abs_ey:.4f} m  avg speed {m.avg_speed:.3f} m/s  "
        f"mean|sideslip| {m.mean_abs_sideslip:.5f} rad  std a_lat {m.std_lat_accel:.3f} m/s^2"
    )


def cmd_sim(args) -> int:
    cfg = _config(args)
    if args.controller:
        cfg = cfg.with_(controller=CONTROLLER_FLAGS[args.controller])
    if args.dump_config:
        sys.stdout.write(dump(cfg))
        return EXIT_OK
    log = run_episode(cfg)
    write_run(log, args.out or Path("run"))
    _report(cfg.controller, log, args.on_belief)
    return EXIT_OK if log.status == "completed" else EXIT_RUNTIME


def cmd_compare(args) -> int:
    cfg = _config(args)
    out = args.out or Path("compare")
    runs = []
    for controller in ("mpc", "pure_pursuit"):
        log = run_episode(cfg.with_(controller=controller))
        write_run(log, out / controller)
        _report(controller, log)
        runs.append((controller, log))
    write_metrics(out / "metrics.csv", runs)
    return EXIT_OK if all(log.status == "completed" for _, log in runs) else EXIT_RUNTIME


def cmd_replay(args) -> int:
    if args.out is None:
        raise UsageError("replay needs --out <run directory>")
    run_dir = args.out
    if not (run_dir / "measurements.csv").is_file():
        raise UsageError(f"no measurements.csv in {run_dir}")
    rows = replay(run_dir)
    write_belief(run_dir / "replay_belief.csv", rows)
    orig = run_dir / "belief.csv"
    if orig.is_file():
        diff = float(np.abs(rows - read_belief(orig)).max()) if len(rows) else 0.0
        print(f"replayed {len(rows)} steps; max difference from belief.csv {diff:.3e}")
    return EXIT_OK


def cmd_gen_track(args) -> int:
    cfg = _config(args)
    track = generate_loop(cfg.track, seed=cfg.effective_track_seed)
    out = args.out or Path("track.csv")
    track.to_csv(out)
    print(f"{out}: {len(track.blue_cones)} cone pairs, {track.length:.1f} m")
    return EXIT_OK


def cmd_gen_dataset(args) -> int:
    if args.samples < 1:
        raise UsageError("--samples must be positive")
    seed = args.seed if args.seed is not None else 0
    data = conenet.generate_dataset(args.samples, seed=seed)
    out = args.out or Path("cones_dataset.csv")
    data.to_csv(out)
    print(f"{out}: {len(data)} samples")
    return EXIT_OK


def cmd_train(args) -> int:
    if not args.dataset.is_file():
        raise UsageError(f"dataset not found: {args.dataset}")
    data = conenet.ConeDataset.from_csv(args.dataset)
    config = conenet.TrainConfig(epochs=args.epochs, seed=args.seed if args.seed is not None else 0)
    result = conenet.train(config, data)
    out = args.out or Path("conenet.bin")
    result.network.save(out)
    hist = out.with_suffix(".history.csv")
    with open(hist, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("epoch", "train_loss", "val_loss", "val_accuracy"))
        for h in result.history:
            w.writerow([h["epoch"], repr(float(h["train_loss"])), repr(float(h["val_loss"])), repr(float(h["val_accuracy"]))])
    print(f"{out}: test accuracy {result.test_accuracy:.4f} (best epoch {result.best_epoch})")
    return EXIT_OK


def cmd_eval_conenet(args) -> int:
    for p in (args.model, args.dataset):
        if not p.is_file():
            raise UsageError(f"file not found: {p}")
    net = conenet.Network.load(args.model)
    data = conenet.ConeDataset.from_csv(args.dataset)
    print(f"per-cone accuracy within {conenet.MAX_RANGE:g} m: {conenet.accuracy(net, data):.4f}")
    return EXIT_OK


COMMANDS = {
    "sim": cmd_sim,
    "compare": cmd_compare,
    "replay": cmd_replay,
    "gen-track": cmd_gen_track,
    "gen-dataset": cmd_gen_dataset,
    "train": cmd_train,
    "eval-conenet": cmd_eval_conenet,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (ConeRaceError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
