"""Command-line entry point: ``structnoise <command> [--config PATH] ...``.

Exit codes: 0 success, 1 configuration or input error, 2 runtime/trial failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path
from typing import Optional, Sequence

from .edgelist import write_edge_list, write_labels
from .experiments import (
    DEFAULT_L_VALUES,
    DEFAULT_P_VALUES,
    ConfigError,
    ExperimentSpec,
    SchemaError,
    build_report,
    read_trials_csv,
    run_trials,
    summary_csv,
    summary_text,
    trial_seed,
    write_report,
    improvement_csv,
    improvement_grid,
)
from .graphgen import HouseRingConfig, build_ring_of_houses
from .noise import EligiblePairsExhausted, NoiseSpec, add_noise
from .trainer import NOISE_STREAM, TrialFailed, derive_seed

log = logging.getLogger("structnoise")

OUT_ENV = "STRUCTNOISE_OUT"

COMMAND_KINDS = {
    "noise-sweep": "noise_sweep",
    "samples-sweep": "samples_sweep",
    "augment-same": "augment_same",
    "augment-small": "augment_small",
    "surrogate-compare": "surrogate_compare",
}

_TUPLE_TYPES = {"tuple[str, ...]": str, "tuple[float, ...]": float, "tuple[int, ...]": int}
_SCALAR_TYPES = {"int": int, "float": float, "str": str}


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_config_text(text: str) -> dict:
    """``key = value`` lines; ``#`` starts a comment; lists are comma separated."""
    types = {f.name: f.type for f in fields(ExperimentSpec)}
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"{key}: unknown configuration key (line {lineno})")
        kind = types[key]
        try:
            if kind in _TUPLE_TYPES:
                conv = _TUPLE_TYPES[kind]
                out[key] = tuple(conv(tok.strip()) for tok in value.split(",") if tok.strip())
            elif kind == "bool":
                out[key] = _parse_bool(value)
            else:
                out[key] = _SCALAR_TYPES[kind](value)
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from None
    return out


def load_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc}") from None
    return parse_config_text(text)


def _kind_defaults(kind: str) -> dict:
    if kind == "samples_sweep":
        return {"p_values": (0.15,), "l_values": DEFAULT_L_VALUES}
    return {"p_values": DEFAULT_P_VALUES, "l_values": (20,)}


def build_spec(kind: str, raw: dict, args: argparse.Namespace) -> ExperimentSpec:
    values = {**_kind_defaults(kind), **raw, "kind": kind}
    if args.seed is not None:
        values["seed"] = args.seed
    if args.trials is not None:
        values["trials"] = args.trials
    if getattr(args, "epochs", None) is not None:
        values["epochs"] = args.epochs
    values["output_dir"] = resolve_out(args.out, values.get("output_dir"))
    return ExperimentSpec(**values)


def resolve_out(flag: Optional[str], configured: Optional[str]) -> str:
    """--out beats the environment variable, which beats the config file."""
    if flag:
        return flag
    if os.environ.get(OUT_ENV):
        return os.environ[OUT_ENV]
    return configured or "results"


def cmd_generate(args: argparse.Namespace) -> int:
    raw = load_config(args.config)
    spec = build_spec("noise_sweep", {k: v for k, v in raw.items() if k != "kind"}, args)
    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    base = build_ring_of_houses(HouseRingConfig(spec.num_houses, spec.ring_period))
    write_edge_list(base, out / "graph.edges")
    write_labels(base, out / "graph.labels")
    manifest = {
        "num_houses": spec.num_houses,
        "ring_period": spec.ring_period,
        "nodes": base.num_nodes,
        "edges": base.num_edges,
        "classes": base.num_classes,
        "seed": spec.seed,
        "files": {"edges": "graph.edges", "labels": "graph.labels"},
        "noisy": [],
    }
    if "p_values" in raw:
        noise_seed = derive_seed(trial_seed(spec.seed, 0), NOISE_STREAM)
        for mode in spec.modes:
            for p in spec.p_values:
                try:
                    g = add_noise(base, NoiseSpec(p, mode, noise_seed))
                except EligiblePairsExhausted as exc:
                    raise ConfigError(f"p_values: {exc}") from None
                name = f"noisy_{mode}_p{p:g}.edges"
                write_edge_list(g, out / name)
                manifest["noisy"].append(
                    {"mode": mode, "p": p, "seed": noise_seed, "edges": g.num_edges,
                     "added": g.num_edges - base.num_edges, "file": name}
                )
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"wrote {base.num_nodes} nodes / {base.num_edges} edges to {out}")
    return 0


def cmd_experiment(args: argparse.Namespace) -> int:
    kind = COMMAND_KINDS[args.command]
    spec = build_spec(kind, load_config(args.config), args)
    total = len(spec.variants) * len(spec.modes) * len(spec.p_values) * len(spec.l_values) * spec.trials
    done = [0]

    def progress(task, rec):
        done[0] += 1
        log.info("[%d/%d] %s %s p=%g l=%d trial=%d f1=%.4f", done[0], total, task.variant, task.mode,
                 task.p, task.l, task.trial, rec.test_f1)

    report = run_trials(spec, jobs=args.jobs, progress=progress)
    paths = write_report(report, spec.output_dir, kind)
    sys.stdout.write(paths["text"].read_text())
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    records = []
    for path in args.inputs:
        try:
            records.extend(read_trials_csv(path))
        except OSError as exc:
            raise ConfigError(f"inputs: cannot read {path}: {exc}") from None
    if not records:
        raise ConfigError("inputs: no data")
    report = build_report(records)
    out = Path(resolve_out(args.out, None))
    out.mkdir(parents=True, exist_ok=True)
    (out / "report_summary.csv").write_text(summary_csv(report.cells))
    plot_lines = ["configuration,trial,score\n"]
    for r in report.records:
        plot_lines.append(f"{r.experiment}/{r.mode}/p={r.p:g}/l={r.l},{r.trial},{r.test_f1!r}\n")
    (out / "report_plot_data.csv").write_text("".join(plot_lines))
    text = summary_text(report.cells)
    if report.improvements:
        (out / "report_improvement.csv").write_text(improvement_csv(report.improvements))
        for variant in dict.fromkeys(r["variant"] for r in report.improvements):
            text += "\n" + improvement_grid(report.improvements, variant)
    (out / "report_summary.txt").write_text(text)
    sys.stdout.write(text)
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="structnoise", description="Structural-noise robustness experiments for GIN.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log every finished trial")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, experiment=True):
        p.add_argument("--config", help="key=value configuration file")
        p.add_argument("--seed", type=_u64, help="master seed override")
        p.add_argument("--out", help=f"output directory (else ${OUT_ENV}, else config output_dir)")
        if experiment:
            p.add_argument("--trials", type=int, help="trials per cell (default 50)")
            p.add_argument("--epochs", type=int, help="training epochs (default 200)")
            p.add_argument("--jobs", type=int, default=1, help="concurrent trials")

    g = sub.add_parser("generate", help="write the noiseless and noisy graphs")
    common(g, experiment=False)
    g.set_defaults(func=cmd_generate, trials=None)
    for name in COMMAND_KINDS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        common(p)
        p.set_defaults(func=cmd_experiment)
    r = sub.add_parser("report", help="summarize per-trial CSVs into plot-ready data")
    r.add_argument("inputs", nargs="*", help="*_trials.csv files")
    r.add_argument("--out", help="output directory")
    r.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, SchemaError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (TrialFailed, RuntimeError, ArithmeticError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
