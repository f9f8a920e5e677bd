"""Command-line interface: ``simulate``, ``estimate`` and ``mc``.

Exit codes: 0 success, 2 data error, 3 numeric error, 4 configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .errors import ConfigError, RoughHurstError
from .hurst import EstimationConfig
from .io import config_from_kv, dumps, format_kv, format_value, ingest_csv, model_from_kv, read_kv, write_json
from .pipeline import run_estimate, run_mc_study
from .simulate import ModelParams, simulate_market, write_paths_csv

log = logging.getLogger("roughhurst")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(ConfigError.exit_code, f"{self.prog}: error: {message}\n")


def _load_section(path: str | None, section: str) -> dict[str, str]:
    """key=value file, or a JSON report whose ``config_echo[section]`` is replayed."""
    if path is None:
        return {}
    p = Path(path)
    try:
        head = p.read_text()[:1].strip() if p.exists() else ""
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    if head == "{":
        try:
            echo = json.loads(p.read_text())["config_echo"][section]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ConfigError(f"{path} is not a report with a '{section}' config echo") from exc
        return {k: format_value(tuple(map(tuple, v)) if k == "rho" else tuple(v) if isinstance(v, list) else v)
                for k, v in echo.items()}  # fmt: skip
    return read_kv(p)


def _overrides(pairs: list[str] | None) -> dict[str, str]:
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"--set expects KEY=VALUE, got {pair!r}")
        k, v = pair.split("=", 1)
        out[{"lambda": "lam"}.get(k.strip(), k.strip())] = v.strip()
    return out


def _estimation_config(args) -> EstimationConfig:
    values = _load_section(args.config, "estimation")
    values.update(_overrides(args.set))
    return config_from_kv(values)


def _model(args) -> ModelParams:
    values = _load_section(args.model, "model")
    values.update(_overrides(getattr(args, "model_set", None)))
    return model_from_kv(values)


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def cmd_simulate(args) -> int:
    model = _model(args)
    delta = args.delta if args.delta is not None else 1.0 / args.n
    market = simulate_market(model, args.n, delta, args.seed, method=args.method)
    write_paths_csv(market, args.out)
    echo = {"model": dataclasses.asdict(model), "n": args.n, "delta": delta, "seed": args.seed, "method": args.method}
    sys.stderr.write(dumps({"command": "simulate", "config_echo": echo, "clamp_rate": market.clamp_rate}))
    return 0


def cmd_estimate(args) -> int:
    cfg = _estimation_config(args)
    if args.echo_config:
        Path(args.echo_config).write_text(format_kv(cfg))
    series = ingest_csv(args.data)
    report = run_estimate(series, cfg, echo={"data": str(args.data)})
    _emit(dumps(report.as_dict(timings=not args.no_timings)), args.out)
    return 0


def cmd_mc(args) -> int:
    cfg = _estimation_config(args)
    model = _model(args)
    ladder = [int(v) for v in args.n_ladder.split(",")] if args.n_ladder else None
    report = run_mc_study(model, args.n, args.reps, cfg, args.seed, n_ladder=ladder, workers=args.workers, out_dir=args.out_dir)
    write_json(report.as_dict(), Path(args.out_dir) / "report.json")
    sys.stdout.write(dumps(report.mc_summary))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="roughhurst", description="Roughness estimation for stochastic volatility.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sim = sub.add_parser("simulate", help="simulate a rough-volatility market and dump its paths")
    sim.add_argument("--model", help="key=value model file (defaults for missing keys)")
    sim.add_argument("--model-set", action="append", metavar="KEY=VALUE", help="override a model parameter")
    sim.add_argument("--n", type=int, required=True, help="number of increments")
    sim.add_argument("--delta", type=float, help="sampling interval (default 1/n)")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--method", choices=("fft", "direct"), default="fft")
    sim.add_argument("--out", required=True, help="output CSV")
    sim.set_defaults(func=cmd_simulate)

    est = sub.add_parser("estimate", help="estimate H from a price CSV")
    est.add_argument("--data", required=True, help="CSV with a header; timestamp column first")
    est.add_argument("--config", help="key=value estimation config, or a previous JSON report to replay")
    est.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    est.add_argument("--out", help="JSON report path (default stdout)")
    est.add_argument("--echo-config", metavar="PATH", help="write the effective config as key=value")
    est.add_argument("--no-timings", action="store_true", help="omit wall-clock timings from the report")
    est.set_defaults(func=cmd_estimate)

    mc = sub.add_parser("mc", help="Monte Carlo study on simulated markets")
    mc.add_argument("--model", help="key=value model file")
    mc.add_argument("--model-set", action="append", metavar="KEY=VALUE")
    mc.add_argument("--config", help="key=value estimation config")
    mc.add_argument("--set", action="append", metavar="KEY=VALUE")
    mc.add_argument("--reps", type=int, required=True)
    mc.add_argument("--n", type=int, required=True)
    mc.add_argument("--n-ladder", help="comma-separated sample sizes, e.g. 16384,65536,262144")
    mc.add_argument("--seed", type=int, default=0)
    mc.add_argument("--workers", type=int, default=1)
    mc.add_argument("--out-dir", required=True)
    mc.set_defaults(func=cmd_mc)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except RoughHurstError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
