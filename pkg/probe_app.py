import argparse
import logging
import sys

from tqdm import tqdm

from config import PROBE_THREADS, configure_logging
from errors import ConfigError, ProbeError
from reporting import write_csv
from workflow import load_manifest, run_analysis, run_correlation, run_quality_sweep, stream_train_experiment

logger = logging.getLogger("probe")


# --- Progress ---
class ConsoleCallbackHandler:
    def __init__(self, total, desc="train"):
        self.bar = tqdm(total=total, desc=desc, unit="epoch", leave=False, file=sys.stderr)

    def on_epoch_end(self, record):
        self.bar.set_postfix(loss=f"{record.train_loss:.4f}", test_acc=f"{record.test_accuracy:.3f}",
                             Q=f"{record.quality.network_quality:.3f}")
        self.bar.update(1)

    def close(self):
        self.bar.close()


# --- Commands ---
def cmd_train(args):
    overrides = {key: getattr(args, key) for key in ("seed", "threads", "alpha", "beta", "zeta", "eta0")}
    manifest = load_manifest(args.manifest, overrides=overrides)
    handler = ConsoleCallbackHandler(manifest.train.epochs, desc=manifest.id)
    try:
        files = {}
        for event in stream_train_experiment(manifest, out_dir=args.out, callback_handler=handler):
            if event["type"] == "files":
                files = event["files"]
    finally:
        handler.close()
    for kind, path in files.items():
        print(f"{kind}: {path}")
    return 0


def cmd_analyze(args):
    _, frame = run_analysis(args.checkpoint, filters=args.filter, out_csv=args.out,
                            threads=args.threads or PROBE_THREADS)
    print(frame.to_string(index=False))
    return 0


def cmd_correlate(args):
    result = run_correlation(args.table)
    print(result.to_csv(index=False, lineterminator="\n", float_format="%.2f"), end="")
    return 0


def cmd_sweep(args):
    try:
        widths = [int(w) for w in args.widths.split(",")]
        epochs = [int(e) for e in args.epochs.split(",")]
    except ValueError as e:
        raise ConfigError("sweep", f"widths and epochs must be comma-separated integers ({e})") from e
    bar = tqdm(total=len(widths) * 4, desc="sweep", unit="run", leave=False, file=sys.stderr)
    try:
        table = run_quality_sweep(widths=widths, epochs=epochs, seed=args.seed or 0,
                                  callback=lambda row: bar.update(1))
    finally:
        bar.close()
    write_csv(table, args.out)
    print(run_correlation(table).to_csv(index=False, lineterminator="\n", float_format="%.2f"), end="")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="probe", description="Low-rank layer probing and RMSGD training.")
    parser.add_argument("--log", default=None, help="error|warn|info|debug (default: PROBE_LOG)")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="Train an experiment manifest and write metrics, checkpoint and charts.")
    train.add_argument("--manifest", required=True)
    train.add_argument("--out", default=None, help="Output directory (default: <output_dir>/<id>)")
    train.add_argument("--seed", type=int)
    train.add_argument("--threads", type=int)
    train.add_argument("--alpha", type=float)
    train.add_argument("--beta", type=float)
    train.add_argument("--zeta", type=float)
    train.add_argument("--eta0", type=float)
    train.set_defaults(func=cmd_train)

    analyze = sub.add_parser("analyze", help="Probe the 2-D and 4-D tensors of a checkpoint archive.")
    analyze.add_argument("--checkpoint", required=True)
    analyze.add_argument("--filter", action="append", help="Glob on tensor names; repeatable")
    analyze.add_argument("--out", default=None, help="CSV path for the per-tensor table")
    analyze.add_argument("--threads", type=int)
    analyze.set_defaults(func=cmd_analyze)

    correlate = sub.add_parser("correlate", help="PLCC/ROCC of Q against test accuracy and generalization gap.")
    correlate.add_argument("--table", required=True)
    correlate.set_defaults(func=cmd_correlate)

    sweep = sub.add_parser("sweep", help="Train the width x init x optimizer grid and correlate Q with accuracy.")
    sweep.add_argument("--widths", default="4,16,64")
    sweep.add_argument("--epochs", default="5,15,30")
    sweep.add_argument("--seed", type=int)
    sweep.add_argument("--out", required=True, help="CSV path for the group,q_metric,test_acc,gen_gap table")
    sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        configure_logging(args.log)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except ProbeError as e:
        logger.debug("command failed", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
