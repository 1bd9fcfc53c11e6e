"""Scoring, benchmark orchestration and the ``emcausal`` command line."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import time
import typing
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .dataset import (
    DataFormatError,
    LagGraph,
    load_csv,
    load_graph,
    save_csv,
    save_graph,
    save_weights,
)
from .emengine import EmConfig, EmError, run
from .metrics import edge_counts, f1_score, shd
from .synthgen import ConfigError, StabilityError, SyntheticConfig, load_config, make_dataset

log = logging.getLogger(__name__)

LEVELS = ("summary", "lagged")
EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


@dataclass(frozen=True)
class EvalReport:
    f1: float
    precision: float
    recall: float
    shd: int
    tp: int
    fp: int
    fn: int
    level: str = "summary"
    config_name: str = ""
    missing_rate: float = 0.0
    seed: Optional[int] = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> "EvalReport":
        return cls(**payload)


def score(
    estimated: LagGraph,
    truth: LagGraph,
    level: str = "summary",
    *,
    config_name: str = "",
    missing_rate: float = 0.0,
    seed: Optional[int] = None,
) -> EvalReport:
    """Compare an estimated graph with the truth at the summary or lagged level."""
    if level not in LEVELS:
        raise ValueError(f"level must be one of {LEVELS}")
    if estimated.d != truth.d:
        raise ValueError(f"graphs have {estimated.d} and {truth.d} variables")
    if level == "summary":
        est, tru = estimated.summary, truth.summary
    else:
        if estimated.max_lag != truth.max_lag:
            raise ValueError(
                f"lagged comparison needs equal max lags, got {estimated.max_lag} and {truth.max_lag}"
            )
        est, tru = estimated.adjacency, truth.adjacency
    tp, fp, fn = edge_counts(est, tru)
    f1, precision, recall = f1_score(est, tru)
    return EvalReport(
        f1=float(f1),
        precision=float(precision),
        recall=float(recall),
        shd=int(shd(est, tru)),
        tp=tp,
        fp=fp,
        fn=fn,
        level=level,
        config_name=config_name,
        missing_rate=float(missing_rate),
        seed=seed,
    )


def evaluate_external(series, truth_graph, config: EmConfig, level: str = "summary") -> EvalReport:
    """Run discovery on a series CSV and score it against a graph JSON."""
    dataset = load_csv(series)
    truth = load_graph(truth_graph)
    if dataset.d != truth.d:
        raise DataFormatError(f"series has {dataset.d} variables but the truth graph has {truth.d}")
    if list(dataset.var_names) != list(truth.var_names):
        log.warning("variable names differ between series and truth; matching by column position")
    graph, _, _ = run(dataset, config)
    return score(
        graph,
        truth,
        level,
        config_name=Path(series).stem,
        missing_rate=dataset.missing_rate,
        seed=config.seed,
    )


# ---------------------------------------------------------------- benchmark


@dataclass
class BenchmarkCell:
    synthetic: SyntheticConfig
    em: dict
    repetitions: int


@dataclass
class Suite:
    cells: list[BenchmarkCell]
    base_seed: int = 0
    level: str = "summary"


@dataclass
class BenchmarkResult:
    reports: list[EvalReport]
    failures: list[dict] = field(default_factory=list)
    runs_csv: Optional[Path] = None
    aggregate_csv: Optional[Path] = None

    @property
    def ok(self) -> bool:
        return not self.failures


def load_suite(path, base_seed: Optional[int] = None) -> Suite:
    """Parse a suite file.

    Layout::

        {"base_seed": 0, "repetitions": 3, "level": "summary",
         "cells": [{"synthetic": {"name": "LR-gaussian-10-10-2", "missing_rate": 0.6},
                    "em": {"mode": "linear"}, "repetitions": 3}]}

    ``em`` keys are :class:`EmConfig` fields; ``max_lag`` defaults to the
    generator's lag and ``seed`` is always set per run.
    """
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(payload, dict) or not isinstance(payload.get("cells"), list) or not payload["cells"]:
        raise ConfigError(f"{path}: expected an object with a non-empty 'cells' list")
    default_reps = int(payload.get("repetitions", 3))
    level = payload.get("level", "summary")
    if level not in LEVELS:
        raise ConfigError(f"level must be one of {LEVELS}")
    cells = []
    for k, raw in enumerate(payload["cells"]):
        if "synthetic" not in raw:
            raise ConfigError(f"cell {k}: missing 'synthetic' block")
        synthetic = SyntheticConfig.from_dict(raw["synthetic"])
        synthetic.validate()
        em = dict(raw.get("em", {}))
        em.pop("seed", None)
        em.setdefault("max_lag", synthetic.max_lag)
        try:
            EmConfig.from_dict(em).validate()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"cell {k}: {exc}") from exc
        reps = int(raw.get("repetitions", default_reps))
        if reps < 1:
            raise ConfigError(f"cell {k}: repetitions must be >= 1")
        cells.append(BenchmarkCell(synthetic, em, reps))
    seed = int(payload.get("base_seed", 0)) if base_seed is None else int(base_seed)
    return Suite(cells, seed, level)


RUN_COLUMNS = (
    "cell", "config_name", "missing_rate", "seed", "status", "f1", "precision",
    "recall", "shd", "tp", "fp", "fn", "iterations", "converged", "runtime_s", "error",
)
AGGREGATE_COLUMNS = (
    "cell", "config_name", "missing_rate", "series_length", "mode", "level", "runs",
    "failed", "seeds", "f1_mean", "f1_std", "precision_mean", "recall_mean", "shd_mean",
)


def _run_cell(cell: BenchmarkCell, seed: int, level: str) -> tuple[EvalReport, dict]:
    synthetic = SyntheticConfig(**{**cell.synthetic.__dict__, "seed": seed})
    graph, _, _, masked = make_dataset(synthetic)
    config = EmConfig.from_dict({**cell.em, "seed": seed})
    start = time.perf_counter()
    estimate, _, state = run(masked, config)
    elapsed = time.perf_counter() - start
    report = score(
        estimate,
        graph,
        level,
        config_name=synthetic.name,
        missing_rate=synthetic.missing_rate,
        seed=seed,
    )
    return report, {"iterations": state.iteration, "converged": state.converged, "runtime_s": elapsed}


def _fmt(x: float) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


def _aggregate_rows(suite: Suite, rows: list[dict]) -> list[dict]:
    out = []
    for k, cell in enumerate(suite.cells):
        mine = sorted((r for r in rows if r["cell"] == k), key=lambda r: r["seed"])
        good = [r for r in mine if r["status"] == "ok"]
        f1s = [r["f1"] for r in good]

        def mean(key):
            return math.fsum(r[key] for r in good) / len(good) if good else float("nan")

        std = (
            math.sqrt(math.fsum((v - mean("f1")) ** 2 for v in f1s) / len(f1s)) if f1s else float("nan")
        )
        out.append({
            "cell": k,
            "config_name": cell.synthetic.name,
            "missing_rate": repr(cell.synthetic.missing_rate),
            "series_length": cell.synthetic.series_length,
            "mode": cell.em.get("mode", "linear"),
            "level": suite.level,
            "runs": len(good),
            "failed": len(mine) - len(good),
            "seeds": " ".join(str(r["seed"]) for r in mine),
            "f1_mean": _fmt(mean("f1")),
            "f1_std": _fmt(std),
            "precision_mean": _fmt(mean("precision")),
            "recall_mean": _fmt(mean("recall")),
            "shd_mean": _fmt(mean("shd")),
        })
    return out


def _write_csv(path: Path, columns: Sequence[str], rows: list[dict]) -> None:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    writer.writerows(rows)
    path.write_text(buf.getvalue(), encoding="utf-8")


def run_benchmark(config_file, output_dir, base_seed: Optional[int] = None) -> BenchmarkResult:
    """Generate, mask, discover and score every (cell, repetition) of a suite.

    Run ``r`` of a cell uses seed ``base_seed + r`` for both the generator and
    the engine. Failing runs are logged and skipped. ``runs.csv`` holds one
    row per run (timings included) and ``aggregate.csv`` the per-cell means,
    which depend only on the suite file and seeds.
    """
    suite = load_suite(config_file, base_seed)
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    reports, failures, rows = [], [], []
    for k, cell in enumerate(suite.cells):
        for r in range(cell.repetitions):
            seed = suite.base_seed + r
            row = {"cell": k, "config_name": cell.synthetic.name,
                   "missing_rate": cell.synthetic.missing_rate, "seed": seed}
            try:
                report, extra = _run_cell(cell, seed, suite.level)
            except Exception as exc:  # a broken cell must not sink the suite
                log.error("cell %d (%s) seed %d failed: %s", k, cell.synthetic.name, seed, exc)
                failures.append({"cell": k, "seed": seed, "error": f"{type(exc).__name__}: {exc}"})
                rows.append({**row, "status": "failed", "error": f"{type(exc).__name__}: {exc}"})
                continue
            reports.append(report)
            rows.append({**row, **report.to_dict(), **extra, "status": "ok", "error": ""})
            log.info("cell %d %s seed %d: F1 %.3f SHD %d", k, report.config_name, seed, report.f1, report.shd)

    runs_csv, aggregate_csv = out / "runs.csv", out / "aggregate.csv"
    formatted = [
        {**r, **{c: _fmt(r[c]) for c in ("f1", "precision", "recall", "runtime_s") if c in r}}
        for r in rows
    ]
    _write_csv(runs_csv, RUN_COLUMNS, formatted)
    _write_csv(aggregate_csv, AGGREGATE_COLUMNS, _aggregate_rows(suite, rows))
    return BenchmarkResult(reports, failures, runs_csv, aggregate_csv)


# ---------------------------------------------------------------------- CLI


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are validation errors
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_dataclass_flags(parser, cls, skip=()) -> None:
    """One optional flag per dataclass field; unset flags stay ``None``."""
    hints = typing.get_type_hints(cls)
    for f in fields(cls):
        if f.name in skip:
            continue
        hint = hints[f.name]
        args = set(typing.get_args(hint)) - {type(None)}
        base = next(iter(args)) if args and typing.get_origin(hint) is typing.Union else hint
        kwargs = {"dest": f.name, "default": None, "help": f"default: {f.default!r}"}
        if base is bool:
            parser.add_argument(_flag(f.name), action=argparse.BooleanOptionalAction, **kwargs)
        elif typing.get_origin(base) is tuple:
            parser.add_argument(_flag(f.name), type=float, nargs="+", **kwargs)
        else:
            parser.add_argument(_flag(f.name), type=base, **kwargs)


def _collect(ns: argparse.Namespace, cls) -> dict:
    return {f.name: getattr(ns, f.name) for f in fields(cls) if getattr(ns, f.name, None) is not None}


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def _em_config(ns) -> EmConfig:
    base = _read_json(ns.em_config) if ns.em_config else {}
    config = EmConfig.from_dict({**base, **_collect(ns, EmConfig)})
    config.validate()
    return config


def _cmd_generate(ns) -> int:
    if ns.config:
        cfg = load_config(ns.config)
    elif ns.name:
        cfg = SyntheticConfig.from_name(ns.name)
    else:
        cfg = SyntheticConfig()
    cfg = SyntheticConfig(**{**cfg.__dict__, **_collect(ns, SyntheticConfig), "seed": ns.seed})
    cfg.validate()
    graph, weights, full, masked = make_dataset(cfg)
    out = Path(ns.out)
    out.mkdir(parents=True, exist_ok=True)
    save_csv(masked, out / "series.csv")
    save_graph(graph, out / "truth.json")
    save_weights(weights, graph.var_names, out / "weights.json")
    if ns.full:
        save_csv(full, out / "full.csv")
    (out / "config.json").write_text(json.dumps({"name": cfg.name, **cfg.to_dict()}, indent=2) + "\n")
    print(f"wrote {cfg.name} (T={cfg.series_length}, missing rate {masked.missing_rate:.3f}) to {out}")
    return EXIT_OK


def _cmd_discover(ns) -> int:
    dataset = load_csv(ns.series)
    config = _em_config(ns)
    out = Path(ns.out)
    out.mkdir(parents=True, exist_ok=True)
    graph, weights, state = run(dataset, config, log_path=out / "diagnostics.jsonl")
    save_graph(graph, out / "graph.json")
    save_weights(weights, dataset.var_names, out / "weights.json")
    status = "converged" if state.converged else "stopped at max_iters"
    print(f"{graph.num_edges} lagged edges after {state.iteration} iterations ({status}); wrote {out}")
    return EXIT_OK


def _cmd_evaluate(ns) -> int:
    report = score(load_graph(ns.estimate), load_graph(ns.truth), ns.level)
    text = json.dumps(report.to_dict(), indent=2)
    if ns.out:
        Path(ns.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def _cmd_benchmark(ns) -> int:
    result = run_benchmark(ns.suite, ns.out, base_seed=ns.seed)
    print(Path(result.aggregate_csv).read_text(encoding="utf-8"), end="")
    if not result.ok:
        print(f"{len(result.failures)} run(s) failed; see {result.runs_csv}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="emcausal", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    gen = sub.add_parser("generate", help="simulate a masked series and its true graph")
    gen.add_argument("--name", help="e.g. TANH-laplace-10-20-2")
    gen.add_argument("--config", help="synthetic config JSON")
    gen.add_argument("--out", required=True)
    gen.add_argument("--full", action="store_true", help="also write the unmasked series")
    _add_dataclass_flags(gen, SyntheticConfig, skip=("seed",))
    gen.add_argument("--seed", type=int, required=True)
    gen.set_defaults(func=_cmd_generate)

    disc = sub.add_parser("discover", help="learn a lagged graph from a series CSV")
    disc.add_argument("series")
    disc.add_argument("--out", required=True)
    disc.add_argument("--em-config", help="EM config JSON; flags override it")
    _add_dataclass_flags(disc, EmConfig)
    disc.set_defaults(func=_cmd_discover)

    ev = sub.add_parser("evaluate", help="score an estimated graph against the truth")
    ev.add_argument("estimate")
    ev.add_argument("truth")
    ev.add_argument("--level", choices=LEVELS, default="summary")
    ev.add_argument("--out")
    ev.set_defaults(func=_cmd_evaluate)

    bench = sub.add_parser("benchmark", help="run a suite of synthetic experiments")
    bench.add_argument("suite")
    bench.add_argument("--out", required=True)
    bench.add_argument("--seed", type=int, required=True, help="base seed; run r uses seed + r")
    bench.set_defaults(func=_cmd_benchmark)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(ns.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return ns.func(ns)
    except np.linalg.LinAlgError as exc:  # a ValueError subclass, but a numerical failure
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ConfigError, DataFormatError, FileNotFoundError, TypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (StabilityError, EmError, RuntimeError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
