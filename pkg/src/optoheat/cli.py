"""Command-line scenario runner.

Verbs: ``rates``, ``run``, ``compare``, ``sweep``.  Exit codes: 0 success,
2 config error, 3 numerical failure, 4 regime warning under ``--strict``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import BUNDLED, bundled_text, load_config, with_overrides
from .errors import (
    BathRangeError,
    ConfigError,
    FitError,
    NumericalError,
    RegimeError,
    SteadyStateError,
    TruncationError,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_REGIME = 0, 2, 3, 4


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help=f"config file or bundled name ({', '.join(BUNDLED)})")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--strict", action="store_true", help="treat regime warnings as errors (exit 4)")
    common.add_argument("--seed", type=int)
    common.add_argument("--dim-o", type=int, dest="dim_O")
    common.add_argument("--dim-m", type=int, dest="dim_M")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="optoheat", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="verb", required=True)
    sub.add_parser("rates", parents=[common], help="print drift, diffusion and regime margins")
    sub.add_parser("run", parents=[common], help="run the config's pipeline and write ledgers")
    sub.add_parser("compare", parents=[common], help="oracle vs analytic ledgers with deviations")
    sw = sub.add_parser("sweep", parents=[common], help="scan one scalar config key")
    sw.add_argument("--axis", required=True, help="dotted key, e.g. state.beta or bath.hot.temperature")
    sw.add_argument("--values", required=True, help="comma-separated values")
    sw.add_argument("--workers", type=int, default=1)
    return ap


def _print_rates(cfg, out):
    r = pipeline.rates_summary(cfg)
    lines = [f"scenario {cfg.name}"]
    for k in ("gamma", "d", "Gamma_M", "d_M", "drift", "n_O", "kappa", "gamma_full"):
        lines.append(f"  {k:<11} {r[k]: .10g}")
    lines.append(f"  {'gain':<11} {r['gain']}")
    for name, spec in cfg.states.items():
        m, warnings, _ = pipeline.state_margins(cfg, spec)
        lines.append(f"  margin[{name}] {m['margin']:.4g} (coupling {m['coupling']:.3g}, dressing {m['dressing']:.3g})")
    print("\n".join(lines), file=out)
    return r


def _summarize(result, out):
    for name, s in result.states.items():
        for path, ledger in s.ledgers.items():
            W, E = ledger["W_max"], ledger["E_M"]
            print(
                f"{name}/{path}: E_M {E[0]:.6g} -> {E[-1]:.6g}, W_max {W[0]:.6g} -> {W[-1]:.6g}, "
                f"min spohn slack {min(ledger['spohn_slack']):.3g}",
                file=out,
            )
        if s.deviations:
            worst = {k: v["relative"] for k, v in s.deviations.items() if k in ("E_M", "W_max", "S_M")}
            print(f"{name}/deviation: " + ", ".join(f"{k} {v:.3g}" for k, v in worst.items()), file=out)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = with_overrides(load_config(args.config), seed=args.seed, dim_O=args.dim_O, dim_M=args.dim_M)
        if args.verb == "rates":
            r = _print_rates(cfg, sys.stdout)
            if args.out:
                pipeline.atomic_write(args.out / "rates.json", json.dumps(pipeline.to_jsonable(r), indent=2, sort_keys=True) + "\n")
            if args.strict and any(pipeline.state_margins(cfg, s)[1] for s in cfg.states.values()):
                print("regime warning (strict)", file=sys.stderr)
                return EXIT_REGIME
            return EXIT_OK
        if args.verb == "sweep":
            values = [float(v) for v in args.values.split(",") if v.strip()]
            text = Path(args.config).read_text() if Path(args.config).is_file() else bundled_text(args.config)
            rows = pipeline.sweep(text, args.axis, values, cfg.name, workers=args.workers)
            body = pipeline.sweep_text(rows)
            if args.out:
                pipeline.atomic_write(args.out / "sweep.csv", body)
            sys.stdout.write(body)
            return EXIT_OK
        mode = "compare" if args.verb == "compare" else None
        result = pipeline.run_scenario(cfg, mode, strict=args.strict)
        for w in result.warnings:
            print(f"warning: {w}", file=sys.stderr)
        _summarize(result, sys.stdout)
        if args.out:
            for f in pipeline.write_outputs(result, args.out):
                print(f"wrote {f}", file=sys.stdout)
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RegimeError as exc:
        print(f"regime error: {exc}", file=sys.stderr)
        return EXIT_REGIME
    except (NumericalError, TruncationError, SteadyStateError, BathRangeError, FitError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
