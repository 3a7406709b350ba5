"""``fedshield`` command line: run, compare and gen-data."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import math
import sys
from pathlib import Path

from . import __version__
from .config import dump_config, load_config
from .data import DEFAULT_NOISE_LEVELS, generate_synthetic, save_dataset
from .errors import ConfigurationError, DataError, DivergenceError
from .orchestrator import (
    TWO_ATTACKERS,
    ExperimentConfig,
    RoundRecord,
    build_data,
    default_workers,
    run_experiment,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_IO = 4

SCENARIOS = ("secure", "one_attacker", "two_attackers")
COMPARE_AGGREGATORS = ("none", "multikrum", "dual_attention")


def fmt(x) -> str:
    """12 significant digits; enough to check determinism without bloating files."""
    if x is None:
        return ""
    x = float(x)
    if math.isnan(x):
        return "nan"
    return f"{x:.12g}"


def metrics_header(config: ExperimentConfig) -> list[str]:
    cols = ["round", "test_loss", "accuracy"]
    cols += [f"acc_class_{c}" for c in range(config.num_classes)]
    cols += [f"acc_noise_{lv:g}" for lv in sorted(set(config.noise_levels))]
    cols += [f"loss_client_{k}" for k in range(config.num_clients)]
    cols.append("selected")
    return cols


def metrics_row(config: ExperimentConfig, rec: RoundRecord) -> list[str]:
    row = [str(rec.round), fmt(rec.test_loss), fmt(rec.accuracy)]
    row += [fmt(a) for a in rec.class_accuracy]
    row += [fmt(rec.noise_accuracy.get(float(lv))) for lv in sorted(set(config.noise_levels))]
    row += [fmt(v) for v in rec.client_losses]
    row.append("" if rec.selected is None else " ".join(str(i) for i in rec.selected))
    return row


class CsvSink:
    """Streams RoundRecords to metrics.csv (and attention.csv / timing.csv) as they arrive."""

    def __init__(self, out_dir: Path, config: ExperimentConfig):
        self.config = config
        self._files = []
        self.metrics = self._open(out_dir / "metrics.csv", metrics_header(config))
        self.timing = self._open(out_dir / "timing.csv", ["round", "seconds"])
        self.attention = None
        if config.aggregator == "dual_attention":
            self.attention = self._open(
                out_dir / "attention.csv", ["round", "client", "eta_self", "eta_temporal", "eta_combined"]
            )

    def _open(self, path, header):
        fh = open(path, "w", newline="", encoding="utf-8")
        self._files.append(fh)
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        return writer

    def __call__(self, rec: RoundRecord):
        self.metrics.writerow(metrics_row(self.config, rec))
        self.timing.writerow([rec.round, f"{rec.duration:.6f}"])
        if self.attention is not None and rec.attention is not None:
            a = rec.attention
            for k in range(len(a.eta_combined)):
                self.attention.writerow(
                    [rec.round, k, fmt(a.eta_self[k]), fmt(a.eta_temporal[k]), fmt(a.eta_combined[k])]
                )
        for fh in self._files:
            fh.flush()

    def close(self):
        for fh in self._files:
            fh.close()


def write_summary(path: Path, rec: RoundRecord):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "value"])
        w.writerow(["rounds_completed", rec.round + 1])
        w.writerow(["final_test_loss", fmt(rec.test_loss)])
        w.writerow(["final_accuracy", fmt(rec.accuracy)])
        for lv in sorted(rec.noise_accuracy):
            w.writerow([f"accuracy_noise_{lv:g}", fmt(rec.noise_accuracy[lv])])


def write_manifest(out_dir: Path, config: ExperimentConfig):
    artifacts = ["metrics.csv", "summary.csv", "timing.csv"]
    if config.aggregator == "dual_attention":
        artifacts.insert(1, "attention.csv")
    text = dump_config(
        config,
        extra={
            "tool_version": __version__,
            "master_seed": config.seed,
            "artifacts": ", ".join(artifacts),
        },
    )
    (out_dir / "manifest.ini").write_text(text, encoding="utf-8")


def execute(config: ExperimentConfig, out_dir: Path, workers=None, data=None) -> RoundRecord:
    """Run one experiment and write its artifacts into ``out_dir``."""
    out_dir.mkdir(parents=True, exist_ok=True)
    write_manifest(out_dir, config)
    sink = CsvSink(out_dir, config)
    try:
        result = run_experiment(config, sink=sink, workers=workers, data=data)
    finally:
        sink.close()
    write_summary(out_dir / "summary.csv", result.final)
    return result.final


def _fail(code, message):
    print(f"fedshield: {message}", file=sys.stderr)
    return code


def cmd_run(config_path, output_dir, seed=None) -> int:
    try:
        config = load_config(config_path, {"seed": seed} if seed is not None else None)
        workers = default_workers()
    except OSError as exc:
        return _fail(EXIT_IO, f"cannot read config: {exc}")
    except ConfigurationError as exc:
        return _fail(EXIT_CONFIG, f"invalid config: {exc}")
    try:
        execute(config, Path(output_dir), workers)
    except (ConfigurationError, DataError) as exc:
        return _fail(EXIT_CONFIG, f"invalid config: {exc}")
    except DivergenceError as exc:
        return _fail(EXIT_DIVERGED, f"training diverged: {exc}")
    except OSError as exc:
        return _fail(EXIT_IO, f"I/O error: {exc}")
    return EXIT_OK


def scenario_config(base: ExperimentConfig, scenario: str, aggregator: str) -> ExperimentConfig:
    """One cell of the comparison grid. Multi-Krum is told the exact attacker count."""
    attackers = base.flips if base.flips else TWO_ATTACKERS
    if len(attackers) < 2:
        raise ConfigurationError("[attack]: compare needs two malicious clients (or none for the default pair)")
    flips = {"secure": (), "one_attacker": attackers[:1], "two_attackers": attackers[:2]}[scenario]
    return dataclasses.replace(
        base, aggregator=aggregator, flips=flips, multikrum_f=len(flips), multikrum_m=None
    )


def relative_loss(baseline: float, attention: float) -> float:
    return (baseline - attention) / baseline


def cmd_compare(config_path, output_dir) -> int:
    try:
        base = load_config(config_path)
        workers = default_workers()
        cells = {
            (s, a): scenario_config(base, s, a) for s in SCENARIOS for a in COMPARE_AGGREGATORS
        }
    except OSError as exc:
        return _fail(EXIT_IO, f"cannot read config: {exc}")
    except ConfigurationError as exc:
        return _fail(EXIT_CONFIG, f"invalid config: {exc}")

    out = Path(output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        data = build_data(base)
    except (ConfigurationError, DataError) as exc:
        return _fail(EXIT_CONFIG, f"invalid config: {exc}")
    except OSError as exc:
        return _fail(EXIT_IO, f"I/O error: {exc}")

    results = {}
    failed = False
    for (scenario, aggregator), config in cells.items():
        try:
            final = execute(config, out / f"{scenario}_{aggregator}", workers, data=data)
            # round-trip through the CSV text so relative columns are consistent with the file
            results[(scenario, aggregator)] = ("ok", float(fmt(final.test_loss)), float(fmt(final.accuracy)))
        except (DivergenceError, ConfigurationError, DataError) as exc:
            print(f"fedshield: cell {scenario}/{aggregator} failed: {exc}", file=sys.stderr)
            results[(scenario, aggregator)] = ("failed", None, None)
            failed = True
        except OSError as exc:
            return _fail(EXIT_IO, f"I/O error: {exc}")

    try:
        with open(out / "comparison.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(
                ["scenario", "aggregator", "status", "final_loss", "final_accuracy",
                 "rel_loss_vs_none", "rel_loss_vs_multikrum"]
            )
            for scenario in SCENARIOS:
                for aggregator in COMPARE_AGGREGATORS:
                    status, loss, acc = results[(scenario, aggregator)]
                    rel = ["", ""]
                    if aggregator == "dual_attention" and status == "ok":
                        for i, baseline in enumerate(("none", "multikrum")):
                            b_status, b_loss, _ = results[(scenario, baseline)]
                            if b_status == "ok":
                                rel[i] = fmt(relative_loss(b_loss, loss))
                    w.writerow([scenario, aggregator, status, fmt(loss), fmt(acc), *rel])
    except OSError as exc:
        return _fail(EXIT_IO, f"I/O error: {exc}")
    return EXIT_DIVERGED if failed else EXIT_OK


def cmd_gen_data(classes, dim, per_class, out, seed=0, noise_scale=1.0, noise_levels=DEFAULT_NOISE_LEVELS) -> int:
    try:
        ds = generate_synthetic(classes, dim, per_class, noise_levels, seed=seed, noise_scale=noise_scale)
    except ConfigurationError as exc:
        return _fail(EXIT_CONFIG, f"invalid parameters: {exc}")
    try:
        save_dataset(ds, out)
    except OSError as exc:
        return _fail(EXIT_IO, f"I/O error: {exc}")
    return EXIT_OK


def _float_list(text):
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="fedshield", description="Federated learning aggregation under label flipping.")
    parser.add_argument("--version", action="version", version=f"fedshield {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("--config", required=True)
    run.add_argument("--out", required=True)
    run.add_argument("--seed", type=int)

    compare = sub.add_parser("compare", help="secure / 1 / 2 attackers x none / multikrum / dual_attention")
    compare.add_argument("--config", required=True)
    compare.add_argument("--out", required=True)

    gen = sub.add_parser("gen-data", help="write a synthetic dataset file")
    gen.add_argument("--classes", type=int, required=True)
    gen.add_argument("--dim", type=int, required=True)
    gen.add_argument("--per-class", type=int, required=True)
    gen.add_argument("--out", required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--noise-scale", type=float, default=1.0)
    gen.add_argument("--noise-levels", type=_float_list, default=DEFAULT_NOISE_LEVELS)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return cmd_run(args.config, args.out, args.seed)
    if args.command == "compare":
        return cmd_compare(args.config, args.out)
    return cmd_gen_data(
        args.classes, args.dim, args.per_class, args.out, args.seed, args.noise_scale, args.noise_levels
    )


if __name__ == "__main__":
    sys.exit(main())
