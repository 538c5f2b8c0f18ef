"""Command-line entry point: tree, attach, predict, backtest, simulate,
verify-props, and report subcommands, each leaving a run manifest."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

from . import __version__
from .attach import best_in_tree, attachment_scores, path_to_root
from .backtest import (
    BacktestConfig,
    InsufficientMonthsError,
    LogRow,
    PredictionLog,
    attachment_plan,
    build_window_tree,
    final_tree,
    information_coefficient,
    predict_day,
    run_backtest,
)
from .panel import FillPolicy, PanelError, Side, SignalPanel, load_panel
from .report import emit_report
from .simulate import RegimeModel, simulate_regime_panel, verify_propositions
from .tree import RootedTree


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports flag problems as validation errors (exit 1)."""

    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(f"{message}\nhint: see 'treecast {self.prog.split()[-1]} --help'")


def parse_flat_config(path: str | Path) -> dict[str, str]:
    """Flat ``key = value`` text; '#' starts a comment, blank lines ignored."""
    out: dict[str, str] = {}
    with open(path) as handle:
        for lineno, line in enumerate(handle, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = text.partition("=")
            key = key.strip()
            value = value.strip()
            if not key or not value:
                raise UsageError(f"{path}:{lineno}: empty key or value")
            if key in out:
                raise UsageError(f"{path}:{lineno}: duplicate key {key!r}")
            out[key] = value
    return out


def _sha256(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class RunManifest:
    """Reproducibility record written next to every command's outputs."""

    command: str
    config: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)
    outputs: list[str] = field(default_factory=list)
    started: float = field(default_factory=time.monotonic)

    def add_input(self, label: str, path: str | Path) -> None:
        self.inputs[label] = {"path": str(path), "sha256": _sha256(path)}

    def write(self, directory: Path) -> None:
        for name in self.outputs:
            if not (directory / name).exists():
                raise RuntimeError(f"declared output {name!r} missing at exit")
        payload = {
            "command": self.command,
            "version": __version__,
            "config": self.config,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "wall_clock_s": round(time.monotonic() - self.started, 6),
        }
        with open(directory / "manifest.json", "w") as handle:
            json.dump(payload, handle, indent=2, sort_keys=True)
            handle.write("\n")


def _load_panel_arg(args: argparse.Namespace) -> SignalPanel:
    fill = FillPolicy.parse(args.fill) if args.fill else FillPolicy.forward_fill(5)
    return load_panel(args.panel, args.target, fill)


def _config_mapping(args: argparse.Namespace) -> dict[str, str]:
    return parse_flat_config(args.config) if getattr(args, "config", None) else {}


def _backtest_config(args: argparse.Namespace) -> BacktestConfig:
    mapping = _config_mapping(args)
    mapping.pop("fill_policy", None)  # consumed by panel loading
    return BacktestConfig.from_mapping(mapping)


def _resolve_fill(args: argparse.Namespace) -> None:
    # --fill beats the config file's fill_policy; default forward-fill(5).
    if getattr(args, "fill", None):
        return
    mapping = _config_mapping(args)
    args.fill = mapping.get("fill_policy")


def write_tree_json(tree: RootedTree, path: Path) -> None:
    with open(path, "w") as handle:
        json.dump(tree.export_dict(), handle, indent=2)
        handle.write("\n")


def _day_record(rows: list[LogRow], panel: SignalPanel) -> dict:
    head = rows[0]
    if head.gap:
        return {
            "date": head.date.isoformat(),
            "target_date": head.target_date.isoformat(),
            "gap": True,
        }
    per_level = [
        {
            "lambda": row.level,
            "interval": [row.interval[0], row.interval[1]],
            "mean": row.x_star,
        }
        for row in rows
    ]
    return {
        "date": head.date.isoformat(),
        "target_date": head.target_date.isoformat(),
        "i_star": panel.names[head.i_star],
        "path": [panel.names[node] for node in head.path],
        "per_level": per_level,
        "union_interval": [
            min(row.interval[0] for row in rows),
            max(row.interval[1] for row in rows),
        ],
        "x_star": rows[-1].x_star,
        "realized": head.realized,
        "fallback_flags": [row.level for row in rows if row.component_fallback],
    }


def write_predictions_jsonl(log: PredictionLog, panel: SignalPanel, path: Path) -> None:
    with open(path, "w") as handle:
        for rows in log.day_groups():
            handle.write(json.dumps(_day_record(rows, panel)))
            handle.write("\n")


def write_attachments_csv(
    plans: list, panel: SignalPanel, path: Path
) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["date", "i_star_name", "path", "levels_used"])
        for it, ap in plans:
            day = panel.dates[it].isoformat()
            if ap is None:
                writer.writerow([day, "", "", 0])
                continue
            names = ";".join(panel.names[node] for node in ap.nodes)
            writer.writerow([day, panel.names[ap.i_star], names, ap.levels_used])


def write_monthly_ic_csv(log: PredictionLog, levels: int, path: Path) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["level", "ic", "n_months"])
        for level in range(levels):
            months = {
                (row.target_date.year, row.target_date.month)
                for row in log.rows
                if not row.gap
                and row.level == level
                and (row.target_date.year, row.target_date.month) in log.complete_months
            }
            try:
                ic = information_coefficient(log, level)
                text = repr(ic)
            except InsufficientMonthsError:
                text = "nan"
            writer.writerow([level, text, len(months)])


def _ensure_out_dir(path: str | Path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------- subcommands


def cmd_tree(args: argparse.Namespace) -> int:
    _resolve_fill(args)
    out_file = Path(args.out)
    out_dir = out_file.parent if out_file.suffix else _ensure_out_dir(out_file)
    if not out_file.suffix:
        out_file = out_dir / "tree.json"
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(command="tree")
    manifest.add_input("panel", args.panel)
    panel = _load_panel_arg(args)
    side = Side.parse(args.side)
    tree = build_window_tree(panel, side, panel.n_rows, args.width_metric)
    if tree is None:
        raise UsageError("fewer than two non-degenerate signals; no tree to build")
    write_tree_json(tree, out_file)
    manifest.config = {
        "target": args.target,
        "side": side.value,
        "width_metric": args.width_metric,
        "fill_policy": args.fill or "ffill:5",
    }
    manifest.outputs = [out_file.name]
    manifest.write(out_dir)
    return 0


def cmd_attach(args: argparse.Namespace) -> int:
    _resolve_fill(args)
    out_dir = _ensure_out_dir(args.out)
    manifest = RunManifest(command="attach")
    manifest.add_input("panel", args.panel)
    if args.config:
        manifest.add_input("config", args.config)
    panel = _load_panel_arg(args)
    cfg = _backtest_config(args)
    plans = attachment_plan(panel, cfg)
    write_attachments_csv(plans, panel, out_dir / "attachments.csv")
    manifest.config = {"target": args.target, **cfg.to_mapping()}
    manifest.outputs = ["attachments.csv"]
    manifest.write(out_dir)
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    _resolve_fill(args)
    out_dir = _ensure_out_dir(args.out)
    manifest = RunManifest(command="predict")
    manifest.add_input("panel", args.panel)
    if args.config:
        manifest.add_input("config", args.config)
    panel = _load_panel_arg(args)
    cfg = _backtest_config(args)
    as_of = date.fromisoformat(args.date)
    it = panel.index_of(as_of)
    tree = build_window_tree(panel, cfg.side, it, cfg.width_metric)
    if tree is None:
        raise UsageError("fewer than two non-degenerate signals at the as-of date")
    scores = attachment_scores(
        panel,
        cfg.side,
        as_of,
        cfg.attachment_window,
        mean_start=0 if cfg.mean_scope == "expanding" else None,
    )
    i_star = best_in_tree(scores, tree)
    path = path_to_root(tree, i_star, cfg.levels, as_of=as_of)
    day = predict_day(panel, path, it, cfg)
    realized = float(panel.target[it + 1]) if it + 1 < panel.n_rows else None
    record = {
        "date": day.date.isoformat(),
        "target_date": day.target_date.isoformat(),
        "i_star": panel.names[day.i_star],
        "path": [panel.names[node] for node in day.path],
        "per_level": [
            {
                "lambda": level,
                "interval": [day.intervals[level][0], day.intervals[level][1]],
                "mean": day.mixtures[level].x_star,
            }
            for level in range(len(day.components))
        ],
        "union_interval": [day.union_interval[0], day.union_interval[1]],
        "x_star": day.x_star,
        "realized": realized,
        "fallback_flags": list(day.fallback_levels),
    }
    with open(out_dir / "predictions.jsonl", "w") as handle:
        handle.write(json.dumps(record))
        handle.write("\n")
    write_tree_json(tree, out_dir / "tree.json")
    manifest.config = {"target": args.target, "date": args.date, **cfg.to_mapping()}
    manifest.outputs = ["predictions.jsonl", "tree.json"]
    manifest.write(out_dir)
    return 0


def cmd_backtest(args: argparse.Namespace) -> int:
    _resolve_fill(args)
    out_dir = _ensure_out_dir(args.out)
    manifest = RunManifest(command="backtest")
    manifest.add_input("panel", args.panel)
    if args.config:
        manifest.add_input("config", args.config)
    panel = _load_panel_arg(args)
    cfg = _backtest_config(args)
    log = run_backtest(panel, cfg, jobs=args.jobs)
    write_predictions_jsonl(log, panel, out_dir / "predictions.jsonl")
    write_monthly_ic_csv(log, cfg.levels, out_dir / "monthly_ic.csv")
    write_attachments_csv(attachment_plan(panel, cfg), panel, out_dir / "attachments.csv")
    tree = final_tree(panel, cfg)
    if tree is not None:
        write_tree_json(tree, out_dir / "tree.json")
    manifest.config = {
        "target": args.target,
        "jobs": str(args.jobs),
        "fill_policy": args.fill or "ffill:5",
        **cfg.to_mapping(),
    }
    manifest.outputs = ["predictions.jsonl", "monthly_ic.csv", "attachments.csv"]
    if tree is not None:
        manifest.outputs.append("tree.json")
    manifest.write(out_dir)
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    out_file = Path(args.out)
    if out_file.suffix != ".csv":
        raise UsageError("--out must name the panel CSV file, e.g. panel.csv")
    out_dir = out_file.parent if str(out_file.parent) else Path(".")
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(command="simulate")
    mapping = parse_flat_config(args.config) if args.config else {}
    if args.config:
        manifest.add_input("config", args.config)
    model = RegimeModel.from_mapping(mapping, seed=args.seed)
    panel, drivers = simulate_regime_panel(model)
    panel.to_csv(out_file)
    regimes = out_dir / "regimes.csv"
    with open(regimes, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["date", "j_t"])
        for d, j in zip(panel.dates, drivers):
            writer.writerow([d.isoformat(), int(j)])
    manifest.config = {"seed": str(args.seed), **mapping}
    manifest.outputs = [out_file.name, "regimes.csv"]
    manifest.write(out_dir)
    return 0


def cmd_verify_props(args: argparse.Namespace) -> int:
    _resolve_fill(args)
    out_file = Path(args.out)
    if not out_file.suffix:
        out_file = _ensure_out_dir(args.out) / "report.json"
    out_dir = out_file.parent if str(out_file.parent) else Path(".")
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(command="verify-props")
    manifest.add_input("panel", args.panel)
    panel = _load_panel_arg(args)
    side = Side.parse(args.side)
    result = verify_propositions(panel, side=side, tolerance=args.tolerance)
    with open(out_file, "w") as handle:
        json.dump(result, handle, indent=2)
        handle.write("\n")
    manifest.config = {
        "target": args.target,
        "side": side.value,
        "tolerance": repr(args.tolerance),
    }
    manifest.outputs = [out_file.name]
    manifest.write(out_dir)
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    out_dir = _ensure_out_dir(args.out)
    manifest = RunManifest(command="report")
    manifest.add_input("predictions", Path(args.in_dir) / "predictions.jsonl")
    written = emit_report(args.in_dir, out_dir)
    manifest.config = {"in": str(args.in_dir)}
    manifest.outputs = written
    manifest.write(out_dir)
    return 0


# -------------------------------------------------------------------- parser


def build_parser() -> _Parser:
    parser = _Parser(prog="treecast", description=__doc__)
    parser.add_argument("--version", action="version", version=f"treecast {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add_panel_flags(p: _Parser) -> None:
        p.add_argument("--panel", required=True, help="panel CSV path")
        p.add_argument("--target", required=True, help="target column name")
        p.add_argument("--fill", help="fill policy: strict | ffill:N (default ffill:5)")

    p = sub.add_parser("tree", help="build the widest rooted MST over the full panel")
    add_panel_flags(p)
    p.add_argument("--side", default="upper", help="upper | lower")
    p.add_argument("--width-metric", default="path_cost", dest="width_metric")
    p.add_argument("--out", required=True, help="output tree.json path or directory")
    p.set_defaults(func=cmd_tree)

    p = sub.add_parser("attach", help="attachment log over the evaluation range")
    add_panel_flags(p)
    p.add_argument("--config", help="flat key/value backtest config")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_attach)

    p = sub.add_parser("predict", help="single-date prediction record")
    add_panel_flags(p)
    p.add_argument("--date", required=True, help="as-of date (YYYY-MM-DD, a panel date)")
    p.add_argument("--config", help="flat key/value backtest config")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("backtest", help="full walk-forward evaluation")
    add_panel_flags(p)
    p.add_argument("--config", help="flat key/value backtest config")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                   help="worker threads for per-day predictions")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_backtest)

    p = sub.add_parser("simulate", help="regime-switching synthetic panel")
    p.add_argument("--config", help="flat key/value simulation config")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="panel CSV path (regimes.csv lands beside it)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify-props", help="numerical parent-optimality checks")
    add_panel_flags(p)
    p.add_argument("--side", default="upper", help="upper | lower")
    p.add_argument("--tolerance", type=float, default=1e-9)
    p.add_argument("--out", required=True, help="report.json path or directory")
    p.set_defaults(func=cmd_verify_props)

    p = sub.add_parser("report", help="long-format CSV and figures from a backtest")
    p.add_argument("--in", dest="in_dir", required=True, help="backtest output directory")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_report)

    return parser


def dispatch(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version paths
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except PanelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(
            "hint: panel CSVs need a 'date,<signals...>' header, ISO dates, "
            "numeric cells, and the --target column present",
            file=sys.stderr,
        )
        return 1
    except (FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - defensive
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
