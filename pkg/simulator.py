#!/usr/bin/env python3
"""
THz Hybrid Beamforming Simulator — CLI
========================================
Usage:
  python simulator.py simulate [--scale desk|paper] [--config FILE] [--output results.csv]
  python simulator.py sweep --config sweeps/power.cfg [--output results/power.csv]
  python simulator.py validate [--realizations 20]

Common flags: --seed, --workers, --realizations, --quiet.
Environment (.env): SEED, WORKERS, LOG_LEVEL.
"""

import os
import sys
import time
import logging
import argparse

import pandas as pd
from colorama import init, Fore, Style
from dotenv import load_dotenv

from config import (
    SystemConfig, SweepSpec, ConfigError, DomainError, StructuralError,
    apply_env_overrides, load_config, linear_to_db,
)
from harness import (
    SCHEME_IDS, complexity_table, emit_results, evaluate_schemes,
    realization_channel, run_sweep, summarize,
)
from validation import run_validation

load_dotenv()
init(autoreset=True)


# ─── Logging Setup ─────────────────────────────────────
def setup_logging():
    logging.basicConfig(
        level=os.getenv("LOG_LEVEL", "INFO").upper(),
        format="%(asctime)s │ %(name)-12s │ %(levelname)-5s │ %(message)s",
        datefmt="%H:%M:%S",
    )
    return logging.getLogger("simulator")


logger = logging.getLogger("simulator")


# ─── Config Resolution ─────────────────────────────────
def resolve_config(args):
    """preset < config file < SEED/WORKERS env < CLI flags."""
    config = SystemConfig.preset(args.scale)
    spec = None
    if args.config:
        config, spec = load_config(args.config, base=config)
    config = apply_env_overrides(config)

    overrides = {}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.workers:
        overrides["workers"] = args.workers
    if args.realizations:
        overrides["n_realizations"] = args.realizations
    if overrides:
        config = config.replace(**overrides)
    return config, spec


def _schemes(raw: str, default):
    if not raw:
        return tuple(default)
    return tuple(s.strip() for s in raw.split(",") if s.strip())


def _print_summary(table: pd.DataFrame):
    summary = summarize(table)
    print(f"\n  {Style.BRIGHT}{'scheme':<22}{'value':>10}{'rate Gbit/s':>14}{'SINR dB':>10}{'runs':>6}")
    for row in summary.itertuples(index=False):
        print(f"  {row.scheme:<22}{row.value:>10g}{row.rate_gbps:>14.4f}{row.sinr_db:>10.2f}{row.realizations:>6}")


def _write(table: pd.DataFrame, path: str):
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    csv_path, plot_path = emit_results(table, path)
    print(f"\n  {Fore.GREEN}✓ {csv_path}")
    print(f"  {Fore.GREEN}✓ {plot_path}")


# ─── Commands ──────────────────────────────────────────
def cmd_simulate(config: SystemConfig, args) -> int:
    schemes = _schemes(args.schemes, SCHEME_IDS)
    table = run_sweep(SweepSpec("p_s_dbm", (config.p_s_dbm,), schemes), config,
                      progress=not args.quiet)
    _print_summary(table)

    print(f"\n  {Style.BRIGHT}Runtime on realization 0 vs approximate operation count")
    results = evaluate_schemes(realization_channel(config, 0), config, schemes, 0)
    counts = complexity_table(config).set_index("scheme")
    for result in results:
        name = result.scheme_id.value
        ops = f"{counts.loc[name, 'operations']:.3e}  {counts.loc[name, 'complexity']}" if name in counts.index else ""
        print(f"  {name:<22}{result.runtime_s * 1e3:>9.2f} ms   {ops}")

    print(f"\n  ψ = {config.psi:.3e} ({linear_to_db(config.psi):.1f} dB), "
          f"N_BS = {config.n_bs}, N_U = {config.n_u}, K = {config.num_subcarriers}")
    if args.output:
        _write(table, args.output)
    return 0


def cmd_sweep(config: SystemConfig, spec, args) -> int:
    if spec is None:
        raise ConfigError("sweep needs a --config file with sweep_variable and sweep_values")
    if args.schemes:
        spec = SweepSpec(spec.variable, spec.values, _schemes(args.schemes, spec.schemes))
    table = run_sweep(spec, config, progress=not args.quiet)
    _print_summary(table)
    _write(table, args.output or f"sweep_{spec.variable}.csv")
    return 0


# ─── Entry Point ────────────────────────────────────────
def main() -> int:
    parser = argparse.ArgumentParser(description="Wideband THz hybrid beamforming simulator")
    parser.add_argument("command", choices=["simulate", "sweep", "validate"],
                        help="simulate one scenario, run a sweep, or run the validation suite")
    parser.add_argument("--config", type=str, default="",
                        help="key = value scenario file (may carry sweep_* keys)")
    parser.add_argument("--output", type=str, default="",
                        help="CSV path (a <stem>_plot.py script is written next to it)")
    parser.add_argument("--seed", type=int, default=None,
                        help="master seed (overrides SEED and the config file)")
    parser.add_argument("--scale", type=str, default="desk", choices=["desk", "paper", "full"],
                        help="preset the config file is applied on (default: desk)")
    parser.add_argument("--realizations", type=int, default=0,
                        help="number of channel realizations")
    parser.add_argument("--workers", type=int, default=0,
                        help="worker threads across realizations")
    parser.add_argument("--schemes", type=str, default="",
                        help=f"comma-separated scheme ids ({', '.join(SCHEME_IDS)})")
    parser.add_argument("--quiet", action="store_true", help="no progress bars")
    args = parser.parse_args()
    setup_logging()

    print(f"""
{Fore.CYAN}{Style.BRIGHT}╔══════════════════════════════════════════════════════════════╗
║  📡 THz MULTI-CARRIER HYBRID BEAMFORMING SIMULATOR            ║
╚══════════════════════════════════════════════════════════════╝
""")

    try:
        config, spec = resolve_config(args)
        logger.info(f"{args.command}: scale={args.scale} seed={config.master_seed} "
                    f"realizations={config.n_realizations} workers={config.workers}")
        start = time.time()
        if args.command == "simulate":
            status = cmd_simulate(config, args)
        elif args.command == "sweep":
            status = cmd_sweep(config, spec, args)
        else:
            status = run_validation(config, progress=not args.quiet)
        print(f"\n  ⏱ {args.command} finished in {time.time() - start:.1f}s")
        return status
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return 2
    except (DomainError, StructuralError, ValueError, OSError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        return 1
    except Exception as e:
        logger.error(f"Unexpected {type(e).__name__}: {e}", exc_info=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
