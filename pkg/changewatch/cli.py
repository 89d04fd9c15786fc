"""
Command-line entry point.

    python -m changewatch simulate --spec scenario.json --out runs/sim
    python -m changewatch fit --data runs/sim/data.csv --spec runs/sim/variables.json --out runs/fit
    python -m changewatch faults --log runs/fit --day 14 --out runs/faults
    python -m changewatch calibrate --data ... --spec ... --fpr-target 0.05 --out runs/cal
    python -m changewatch bench --scenarios B C --out runs/bench
"""
import argparse
import asyncio
import json
import platform
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from pydantic import ValidationError

from . import __version__
from .config import load_sampler_config, settings
from .data_model import StreamValidationError
from .handlers import cmd_bench, cmd_calibrate, cmd_faults, cmd_fit, cmd_simulate
from .logger import get_logger, set_level

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


class UsageError(Exception):
    """Bad command line."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(message)


def _install_uvloop() -> None:
    if platform.system() == "Linux":
        try:
            import uvloop
            uvloop.install()
            logger.debug("uvloop enabled")
        except ImportError:
            logger.debug("uvloop not available, using default event loop")


def _probability(text: str) -> float:
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"{text} is not in [0, 1]")
    return value


def _external(items: Optional[List[str]]) -> Dict[str, str]:
    out = {}
    for item in items or []:
        name, sep, path = item.partition("=")
        if not sep or not name or not path:
            raise UsageError(f"--external expects NAME=PATH, got {item!r}")
        out[name] = path
    return out


def _add_sampler_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="JSON sampler config")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--iterations", type=int, dest="n_iterations")
    parser.add_argument("--burn-in", type=int, dest="burn_in")
    parser.add_argument("--cutoff", type=float)
    parser.add_argument("--graph-mode", choices=["sparse", "full", "decomposable"], dest="graph_mode")
    parser.add_argument("--snapshot-stride", type=int, dest="snapshot_stride")
    parser.add_argument("--components", type=int, help="mixture components per regime (1 = single Gaussian)")
    parser.add_argument("--chains", type=int, dest="n_chains")


def _add_data_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--data", type=Path, required=True, help="CSV stream with a 'day' column")
    parser.add_argument("--spec", type=Path, required=True, help="variable-spec JSON")
    parser.add_argument("--first-day", type=int, dest="first_day")
    parser.add_argument("--last-day", type=int, dest="last_day")
    parser.add_argument("--boxcox", action="store_true", help="Box-Cox transform continuous variables")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="changewatch", description="Bayesian change-point detection and fault diagnosis for daily mixed-type data")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--threads", type=int, default=settings.threads)
    parser.add_argument("--log-level", default=settings.log_level)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate a scenario dataset")
    p.add_argument("--spec", type=Path, required=True, help="scenario spec JSON")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("fit", help="fit the change-point model")
    _add_data_flags(p)
    _add_sampler_flags(p)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("faults", help="rank variables behind a change-point")
    p.add_argument("--log", type=Path, required=True, help="posterior log directory written by fit")
    p.add_argument("--day", type=int, required=True, help="change after this day")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-mc", type=int, dest="n_mc")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("calibrate", help="choose a cutoff for a target false-positive rate")
    _add_data_flags(p)
    _add_sampler_flags(p)
    p.add_argument("--fpr-target", type=_probability, default=0.05, dest="fpr_target")
    p.add_argument("--n-cal", type=int, default=10, dest="n_cal")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("bench", help="simulation benchmark against Hotelling T^2")
    p.add_argument("--scenarios", nargs="+", default=["B"], help="scenario ids A-H or scenario spec files")
    p.add_argument("--replications", type=int, default=10)
    p.add_argument("--long", action="store_true", help="full study: 50 replications per scenario")
    p.add_argument("--external", action="append", metavar="NAME=PATH",
                   help="score a third-party alarm CSV; PATH may contain {scenario} and {replication}")
    _add_sampler_flags(p)
    p.add_argument("--out", type=Path, required=True)
    return parser


_SAMPLER_KEYS = ("seed", "n_iterations", "burn_in", "cutoff", "graph_mode", "snapshot_stride", "components", "n_chains")


async def dispatch(args: argparse.Namespace) -> None:
    threads = max(1, args.threads)
    if args.command == "simulate":
        await cmd_simulate(args.spec, args.out, args.seed)
        return
    if args.command == "faults":
        await cmd_faults(args.log, args.day, args.out, args.seed, args.n_mc)
        return

    overrides: Dict[str, Any] = {key: getattr(args, key) for key in _SAMPLER_KEYS}
    config = load_sampler_config(args.config, overrides)
    if args.command == "fit":
        await cmd_fit(args.data, args.spec, config, args.out, threads, args.first_day, args.last_day, args.boxcox)
    elif args.command == "calibrate":
        await cmd_calibrate(args.data, args.spec, config, args.out, args.fpr_target, args.n_cal, threads,
                            args.first_day, args.last_day, args.boxcox)
    elif args.command == "bench":
        await cmd_bench(args.scenarios, config, args.out, args.replications, args.long, threads, _external(args.external))


def _report_error(command: str, error: Exception) -> None:
    sys.stderr.write(json.dumps({"error": type(error).__name__, "command": command, "message": str(error).replace("\n", " ")}) + "\n")


def main(argv: Optional[Sequence[str]] = None) -> int:
    command = "changewatch"
    try:
        args = build_parser().parse_args(argv)
        command = args.command
        set_level(args.log_level)
        _install_uvloop()
        asyncio.run(dispatch(args))
    except (UsageError, ValidationError, StreamValidationError) as e:
        _report_error(command, e)
        return EXIT_USAGE
    except KeyboardInterrupt:
        logger.info("Interrupted")
        return EXIT_FAILURE
    except Exception as e:
        logger.error(f"{command} failed: {e}")
        _report_error(command, e)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
