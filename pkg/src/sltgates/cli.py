"""Command-line entry point.

Exit codes: 0 success, 1 configuration error (bad flag or value, missing
data), 2 runtime failure (numeric fault, frozen-weight violation).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .layers import SnapshotError, read_weights, verify_weights
from .maskio import MaskFormatError, apply_mask, read_mask, sparsity_report, write_report_json
from .pipeline import (
    ConfigError,
    FrozenWeightError,
    RunConfig,
    TrainingAborted,
    build_network,
    evaluate,
    lambda_sweep,
    prepare_data,
    read_metrics_csv,
    select_lambda,
    train,
    width_sweep,
    write_aborted_run,
    write_run,
    write_table_csv,
)
from .tensor import NumericFault, precision

logger = logging.getLogger("sltgates")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

# RunConfig field -> CLI flag, for error messages
FLAGS = {
    "arch": "--arch", "dataset": "--dataset", "data_dir": "--data-dir", "lam": "--lambda",
    "sigma": "--sigma", "mu_init": "--mu-init", "lr": "--lr", "epochs": "--epochs",
    "batch_size": "--batch-size", "seed": "--seed", "agg": "--agg", "width": "--width",
    "retain_k": "--retain-k", "train_subset": "--subset", "val_count": "--val-count",
    "data_seed": "--data-seed", "dtype": "--dtype", "init": "--init", "init_gain": "--init-gain",
    "eval_every": "--eval-every",
}

SWEEP_COLUMNS = {
    "lambda": ["lambda", "gate_count", "expected_sparsity", "ticket_sparsity", "val_ticket_acc",
               "test_soft_acc", "test_ticket_acc", "status"],
    "width": ["width", "gate_count", "expected_sparsity", "ticket_sparsity", "val_ticket_acc",
              "test_soft_acc", "test_ticket_acc", "status"],
}


class CliError(Exception):
    def __init__(self, message, code=EXIT_CONFIG):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(f"{self.prog}: error: {message}")


def _float_list(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    d = RunConfig()
    p.add_argument("--arch", choices=["lenet300", "smallconv"], default=d.arch)
    p.add_argument("--dataset", choices=["mnist", "cifar10", "synthetic"], default=d.dataset)
    p.add_argument("--data-dir", default=None, help="default: data/<dataset>")
    p.add_argument("--lambda", dest="lam", type=float, default=d.lam)
    p.add_argument("--sigma", type=float, default=d.sigma)
    p.add_argument("--mu-init", type=float, default=d.mu_init)
    p.add_argument("--lr", type=float, default=d.lr)
    p.add_argument("--epochs", type=int, default=d.epochs)
    p.add_argument("--batch-size", type=int, default=d.batch_size)
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--agg", choices=["mean", "sum"], default=d.agg)
    p.add_argument("--width", type=float, default=d.width)
    p.add_argument("--retain-k", type=float, default=d.retain_k)
    p.add_argument("--subset", type=int, default=None, help="train on this many images")
    p.add_argument("--val-count", type=int, default=d.val_count)
    p.add_argument("--data-seed", type=int, default=d.data_seed)
    p.add_argument("--dtype", choices=["float32", "float64"], default=d.dtype)
    p.add_argument("--init", choices=["kaiming_normal", "scaled_kaiming_normal"], default=d.init)
    p.add_argument("--init-gain", type=float, default=d.init_gain)
    p.add_argument("--eval-every", type=int, default=d.eval_every)
    p.add_argument("--no-wall-time", action="store_true",
                   help="write 0 in the seconds column so logs are byte-reproducible")
    p.add_argument("--out-dir", default="runs")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sltgates", description="Strong lottery tickets via relaxed Bernoulli gates")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    _add_run_flags(sub.add_parser("train", help="train gates and export the ticket"))

    p = sub.add_parser("sweep-lambda", help="one run per lambda")
    _add_run_flags(p)
    p.add_argument("--grid", type=_float_list, default=[0.01, 0.05, 0.1, 0.5])

    p = sub.add_parser("sweep-width", help="one run per width multiplier")
    _add_run_flags(p)
    p.add_argument("--widths", type=_float_list, default=[1.0, 0.6, 0.2])

    p = sub.add_parser("baseline", help="edge-popup run plus random-mask control")
    _add_run_flags(p)

    p = sub.add_parser("eval", help="re-evaluate a run's ticket on its frozen weights")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--data-dir", default=None)
    p.add_argument("--out-dir", default=None, help="default: the run directory")

    p = sub.add_parser("export-report", help="plot-ready CSVs from a run directory")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--out-dir", default=None, help="default: the run directory")
    return parser


def config_from_args(args) -> RunConfig:
    data_dir = args.data_dir or str(Path("data") / args.dataset)
    cfg = RunConfig(arch=args.arch, dataset=args.dataset, data_dir=data_dir, lam=args.lam,
                    sigma=args.sigma, mu_init=args.mu_init, lr=args.lr, epochs=args.epochs,
                    batch_size=args.batch_size, seed=args.seed, agg=args.agg, width=args.width,
                    retain_k=args.retain_k, train_subset=args.subset, val_count=args.val_count,
                    data_seed=args.data_seed, dtype=args.dtype, init=args.init,
                    init_gain=args.init_gain, eval_every=args.eval_every,
                    log_wall_time=not args.no_wall_time)
    try:
        return cfg.validate()
    except ConfigError as exc:
        flag = FLAGS.get(exc.field, exc.field)
        raise CliError(f"invalid value for {flag}: {exc}") from None


def _check_data(cfg: RunConfig):
    if cfg.dataset == "synthetic":
        return prepare_data(cfg)
    try:
        return prepare_data(cfg)
    except FileNotFoundError as exc:
        raise CliError(f"--data-dir {cfg.data_dir}: {exc}") from None


def _dump(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True, default=str))


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    cfg = config_from_args(args)
    data = _check_data(cfg)
    try:
        result = train(cfg, data)
    except TrainingAborted as exc:
        write_aborted_run(exc, args.out_dir)
        raise
    write_run(result, args.out_dir)
    _dump(result.final)
    return EXIT_OK


def cmd_sweep(args, kind: str) -> int:
    cfg = config_from_args(args)
    _check_data(cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        if kind == "lambda":
            rows = lambda_sweep(cfg, args.grid, out_dir=out)
        else:
            rows = width_sweep(cfg, args.widths, out_dir=out)
    except ConfigError as exc:
        raise CliError(f"invalid value for {FLAGS.get(exc.field, exc.field)}: {exc}") from None
    write_table_csv(rows, out / "sweep.csv", SWEEP_COLUMNS[kind])
    if kind == "lambda" and any(r["status"] == "ok" for r in rows):
        chosen = select_lambda(rows)
        (out / "selection.json").write_text(json.dumps(
            {"selected_lambda": chosen, "rule": "largest lambda within 1 point of best val ticket acc"},
            indent=2) + "\n")
    _dump(rows)
    return EXIT_OK


def cmd_baseline(args) -> int:
    from .baseline import edge_popup_train, random_mask_control

    cfg = config_from_args(args).replace(method="edgepopup")
    data = _check_data(cfg)
    result = edge_popup_train(cfg, data)
    write_run(result, args.out_dir)
    control = random_mask_control(cfg, data)
    summary = {"edgepopup_test_acc": result.final["test_ticket_acc"],
               "random_mask_test_acc": control["test_acc"],
               "retain_k": cfg.retain_k, "seed": cfg.seed}
    (Path(args.out_dir) / "control.json").write_text(json.dumps(summary, indent=2) + "\n")
    _dump(summary)
    return EXIT_OK


def _load_run(run_dir: Path):
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        raise CliError(f"--run-dir {run_dir}: manifest.json not found")
    return json.loads(manifest_path.read_text())


def cmd_eval(args) -> int:
    run_dir = Path(args.run_dir)
    manifest = _load_run(run_dir)
    cfg = RunConfig.from_dict(manifest["config"])
    if args.data_dir:
        cfg = cfg.replace(data_dir=args.data_dir)
    if not (run_dir / "ticket.sltm").exists():
        raise CliError(f"--run-dir {run_dir}: ticket.sltm not found")
    data = _check_data(cfg)
    with precision(cfg.dtype):
        network = build_network(cfg, data)
        if (run_dir / "weights.sltw").exists():
            verify_weights(network, read_weights(run_dir / "weights.sltw"))
        artifact = read_mask(run_dir / "ticket.sltm")
        masked = apply_mask(network, artifact)
        out = {"val_ticket_acc": evaluate(masked, data.val), "test_ticket_acc": evaluate(masked, data.test),
               "ticket_sparsity": artifact.sparsity, "recorded": manifest.get("final", {})}
    out_dir = Path(args.out_dir or run_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "eval.json").write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    _dump(out)
    return EXIT_OK


def export_report(run_dir, out_dir=None) -> dict:
    """Write ``curve.csv`` (epoch vs sparsity vs accuracy) and ``layers.csv``.

    An aborted run yields the completed epochs plus a ``TRUNCATED`` marker row
    and no layer table.
    """
    run_dir = Path(run_dir)
    out_dir = Path(out_dir or run_dir)
    manifest = _load_run(run_dir)
    metrics_path = run_dir / "metrics.csv"
    if not metrics_path.exists():
        raise CliError(f"--run-dir {run_dir}: metrics.csv not found")
    rows, truncated = read_metrics_csv(metrics_path)
    aborted = truncated or manifest.get("status") == "aborted"
    mask_path = run_dir / "ticket.sltm"
    if not aborted and not mask_path.exists():
        raise CliError(f"--run-dir {run_dir}: ticket.sltm not found")
    out_dir.mkdir(parents=True, exist_ok=True)

    def pct(v):
        return "" if v is None else f"{100.0 * v:.6f}"

    with open(out_dir / "curve.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "pruned_pct", "retained_pct", "expected_pruned_pct",
                    "soft_acc_pct", "ticket_acc_pct"])
        for r in rows:
            w.writerow([r["epoch"], pct(r["ticket_sparsity"]), pct(1.0 - r["ticket_sparsity"]),
                        pct(r["expected_sparsity"]), pct(r["soft_acc"]), pct(r["ticket_acc"])])
        if aborted:
            w.writerow(["TRUNCATED", "", "", "", "", ""])
    export = {"run_dir": str(run_dir), "status": manifest.get("status"), "epochs": len(rows),
              "truncated": aborted, "final": manifest.get("final")}
    if not aborted:
        report = sparsity_report(read_mask(mask_path))
        with open(out_dir / "layers.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["layer", "total", "active", "pruned_pct", "retained_pct"])
            for r in report["layers"]:
                w.writerow([r["layer"], r["total"], r["active"], f"{r['sparsity_pct']:.6f}",
                            f"{100.0 - r['sparsity_pct']:.6f}"])
        export["layers"] = report["layers"]
        export["global"] = report["global"]
    write_report_json(export, out_dir / "export.json")
    return export


def cmd_export(args) -> int:
    export = export_report(args.run_dir, args.out_dir)
    _dump({k: export[k] for k in ("status", "epochs", "truncated")})
    return EXIT_OK


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except CliError as exc:
        print(exc, file=sys.stderr)
        return exc.code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {
        "train": cmd_train,
        "sweep-lambda": lambda a: cmd_sweep(a, "lambda"),
        "sweep-width": lambda a: cmd_sweep(a, "width"),
        "baseline": cmd_baseline,
        "eval": cmd_eval,
        "export-report": cmd_export,
    }
    try:
        return handlers[args.command](args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (MaskFormatError, SnapshotError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingAborted, NumericFault, FrozenWeightError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run_cli())
