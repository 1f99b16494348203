"""Command-line entry point.

    bnflow <experiment> --config cfg.json --out runs/x --seed 0 [--jobs N]

Exit codes: 0 when every check passes, 1 when a check fails or the run
aborts, 2 when the configuration or input data is rejected.
"""
from __future__ import annotations

import argparse
import logging
import os
import shutil
import sys
import tempfile
from pathlib import Path

from .config import EXPERIMENTS, ConfigError, ExperimentConfig
from .data_model import CSVFormatError, DataValidationError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2

log = logging.getLogger("bnflow")


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("--jobs must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bnflow", description="Batch-normalized two-layer network flows.")
    ap.add_argument("experiment", choices=EXPERIMENTS)
    ap.add_argument("--config", type=Path, default=None, help="JSON config; omitted keys use defaults")
    ap.add_argument("--out", type=Path, required=True, help="run directory (replaced atomically)")
    ap.add_argument("--seed", type=_u64, default=None, help="overrides the config seed")
    ap.add_argument("--jobs", type=_positive, default=1, help="parallel seed repetitions (convergence)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def _prepare(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config, args.experiment, args.seed)
    # fail on bad data before any compute starts
    dist = cfg.build_data()
    if args.experiment in ("fig1", "fig2") and dist.d != 2:
        raise ConfigError(f"{args.experiment} needs two-dimensional data, got d={dist.d}")
    return cfg


def _run(cfg: ExperimentConfig, out: Path, jobs: int):
    from . import experiments as ex

    runners = {
        "generate": ex.run_generate,
        "simulate": ex.run_simulate,
        "verify": ex.run_verify,
        "fig1": ex.run_fig1,
        "fig2": ex.run_fig2,
        "fig3": ex.run_fig3,
    }
    if cfg.experiment == "convergence":
        return ex.run_convergence_study(cfg, out, jobs=jobs)
    return runners[cfg.experiment](cfg, out)


def _publish(tmp: Path, out: Path) -> None:
    """Move the finished run into place; an older run directory is swapped out whole."""
    if out.exists():
        old = Path(tempfile.mkdtemp(prefix=f".{out.name}.old-", dir=out.parent))
        os.replace(out, old / out.name)
        os.replace(tmp, out)
        shutil.rmtree(old)
    else:
        os.replace(tmp, out)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _prepare(args)
    except (ConfigError, DataValidationError, CSVFormatError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = args.out.resolve()
    if out.exists() and (not out.is_dir() or (any(out.iterdir()) and not (out / "config.json").exists())):
        print(f"config error: {out} exists and is not a bnflow run directory", file=sys.stderr)
        return EXIT_CONFIG
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.tmp-", dir=out.parent))
    try:
        (tmp / "config.json").write_text(cfg.to_json() + "\n", encoding="utf-8")
        result = _run(cfg, tmp, args.jobs)
    except Exception as exc:  # noqa: BLE001 - any abort is a failed run
        shutil.rmtree(tmp, ignore_errors=True)
        print(f"run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    _publish(tmp, out)

    for name, ok in result.checks.items():
        print(f"{'PASS' if ok else 'FAIL'} {cfg.experiment}.{name}")
    print(f"{cfg.experiment}: {'passed' if result.passed else 'FAILED'} -> {out}")
    return EXIT_OK if result.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
