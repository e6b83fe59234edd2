"""Command-line entry point for hardball"""

import argparse
import logging
import sys
from typing import IO, Callable, Dict, List, Optional

from pydantic import ValidationError

from ..core.dynamics import StopCondition, simulate
from ..core.errors import HardballError
from ..core.model import ModelParams, ToleranceSet, sample_liouville
from ..core.neutral import (check_key_lemma_3_5, check_lemma_3_6, check_lemma_3_8, neutral_space,
                            scan_lemma_3_9)
from ..core.product import check_product_decomposition, lift_to_pair, pair_to_xy, simulate_pair, simulate_product
from ..core.symbolic import is_rich, symbolic_sequence
from ..core.unfolding import unfold_axis, unfold_linear
from ..diagnostics.census import DEFAULT_T_GUARD, richness_census
from ..diagnostics.ergodic import OBSERVABLES, ergodic_average
from ..diagnostics.lyapunov import lyapunov_spectrum, product_lyapunov_spectrum
from ..diagnostics.scan import ball_avoiding_scan
from ..io.jsonl import open_output, write_json, write_pair_run, write_product_run, write_records, write_segment
from ..io.records import NeutralRecord, SigmaRecord
from ..utils.config import Config
from ..utils.logging import setup_logging

logger = setup_logging()

TOLERANCE_KEYS = ("event", "graze", "rank", "fold", "contact", "drift")


class UsageError(Exception):
    """Bad command line"""


class HardballArgumentParser(argparse.ArgumentParser):
    """ArgumentParser that raises instead of exiting, so usage errors map to exit 1"""

    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


class RunContext:
    """Parsed flags layered over environment, config file and defaults"""

    def __init__(self, args: argparse.Namespace, config: Config):
        self.args = args
        self.config = config

    def value(self, key: str):
        flag = getattr(self.args, key, None)
        return flag if flag is not None else self.config.get(key)

    def flag_given(self, key: str) -> bool:
        return getattr(self.args, key, None) is not None

    def params(self) -> ModelParams:
        tol = ToleranceSet(**{name: float(self.config.get(f"tol_{name}")) for name in TOLERANCE_KEYS})
        return ModelParams(nu=int(self.value("nu")), k=int(self.value("k")), r=float(self.value("r")), tol=tol)

    @property
    def seed(self) -> int:
        return int(self.value("seed"))

    @property
    def workers(self) -> int:
        return int(self.value("workers"))

    def stop(self) -> StopCondition:
        """Stop condition from the size flags; n_events from config when none is given"""
        given = {
            "n_events": self.args.events if self.flag_given("events") else None,
            "n_ball_collisions": self.args.collisions if self.flag_given("collisions") else None,
            "t_max": self.args.time if self.flag_given("time") else None,
        }
        if all(value is None for value in given.values()):
            given["n_events"] = int(self.config.get("events"))
        return StopCondition(**given)

    def initial(self, params: ModelParams):
        return sample_liouville(params, self.seed)

    def analysis_segment(self, params: ModelParams):
        """Orbit of the seeded sample up to --collisions ball collisions"""
        stop = StopCondition(n_ball_collisions=int(self.value("collisions")), t_max=DEFAULT_T_GUARD)
        return simulate(self.initial(params), stop, params)


def cmd_simulate(ctx: RunContext, out: IO[str]):
    params = ctx.params()
    x0 = ctx.initial(params)
    stop = ctx.stop()
    system = ctx.args.system
    if system is None:
        seg = simulate(x0, stop, params)
        write_segment(seg, out, ctx.seed)
        logger.info(f"Simulated {len(seg.events)} events ({seg.n_ball_collisions} ball) up to t={seg.t_end:.6g}")
        return
    pair, rho = lift_to_pair(x0, params)
    if system == "pair":
        run = simulate_pair(pair, stop, rho, params.tol)
        write_pair_run(run, out, ctx.seed)
        logger.info(f"Simulated {len(run.events)} pair events up to t={run.t_end:.6g}")
    else:
        run = simulate_product(pair_to_xy(pair), stop, rho, params.tol, threads=ctx.workers > 1)
        write_product_run(run, rho, out, ctx.seed)
        logger.info(f"Simulated {len(run.x_events)} x and {len(run.y_events)} y events up to t={run.t_end:.6g}")


def cmd_symbolic(ctx: RunContext, out: IO[str]):
    params = ctx.params()
    sigma = symbolic_sequence(ctx.analysis_segment(params))
    write_json(SigmaRecord.from_sigma(sigma, is_rich(sigma, params)), out)


def cmd_neutral(ctx: RunContext, out: IO[str]):
    params = ctx.params()
    report = neutral_space(ctx.analysis_segment(params), params.tol, at=ctx.value("at"))
    write_json(NeutralRecord.from_report(report), out)


def cmd_lemma_check(ctx: RunContext, out: IO[str]):
    seg = ctx.analysis_segment(ctx.params())
    lemma = ctx.args.lemma
    if lemma == "3.6":
        write_json(check_lemma_3_6(seg), out)
    elif lemma == "3.8":
        write_json(check_lemma_3_8(seg), out)
    elif lemma == "3.9":
        write_records(scan_lemma_3_9(seg), out)
    else:
        write_json(check_key_lemma_3_5(seg), out)


def cmd_unfold(ctx: RunContext, out: IO[str]):
    params = ctx.params()
    if ctx.args.mode == "linear":
        write_json(unfold_linear(ctx.initial(params), float(ctx.value("time")), params), out)
    else:
        report = unfold_axis(ctx.analysis_segment(params), int(ctx.value("axis")))
        write_json(report, out, exclude={"segment"})


def cmd_product_check(ctx: RunContext, out: IO[str]):
    params = ctx.params()
    verdict = check_product_decomposition(ctx.initial(params), params, int(ctx.value("events")),
                                          window=int(ctx.value("window")))
    write_json(verdict, out)


def cmd_lyapunov(ctx: RunContext, out: IO[str]):
    params = ctx.params()
    x0 = ctx.initial(params)
    period = float(ctx.value("period"))
    if ctx.args.system in ("pair", "product"):
        pair, rho = lift_to_pair(x0, params)
        report = product_lyapunov_spectrum(pair_to_xy(pair), rho, float(ctx.value("time")), period, params.tol)
    else:
        report = lyapunov_spectrum(x0, params, int(ctx.value("events")), period)
    write_json(report, out)


def cmd_census(ctx: RunContext, out: IO[str]):
    report = richness_census(ctx.params(), int(ctx.value("samples")), int(ctx.value("collisions")),
                             seed=ctx.seed, workers=ctx.workers)
    write_json(report, out)


def cmd_ergodic(ctx: RunContext, out: IO[str]):
    report = ergodic_average(ctx.params(), str(ctx.value("observable")), int(ctx.value("orbits")),
                             float(ctx.value("time")), int(ctx.value("ensemble")), ctx.seed, workers=ctx.workers)
    write_json(report, out)


def cmd_scan_avoiding(ctx: RunContext, out: IO[str]):
    report = ball_avoiding_scan(ctx.params(), int(ctx.value("samples")), float(ctx.value("time")),
                                seed=ctx.seed, workers=ctx.workers)
    write_json(report, out)


COMMANDS: Dict[str, Callable[[RunContext, IO[str]], None]] = {
    "simulate": cmd_simulate,
    "symbolic": cmd_symbolic,
    "neutral": cmd_neutral,
    "lemma-check": cmd_lemma_check,
    "unfold": cmd_unfold,
    "product-check": cmd_product_check,
    "lyapunov": cmd_lyapunov,
    "census": cmd_census,
    "ergodic": cmd_ergodic,
    "scan-avoiding": cmd_scan_avoiding,
}


def build_parser() -> HardballArgumentParser:
    """Argument parser; every flag defaults to None so config and environment can fill it"""
    common = HardballArgumentParser(add_help=False)
    common.add_argument("--nu", type=int, help="Dimension")
    common.add_argument("--k", type=int, help="Number of wall axes")
    common.add_argument("--r", type=float, help="Ball radius")
    common.add_argument("--seed", type=int, help="Master seed")
    common.add_argument("--out", help="Output path (standard output when omitted)")
    common.add_argument("--config", help="Flat key = value configuration file")
    common.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="Logging level")
    common.add_argument("--log-file", help="Also log to this file")
    common.add_argument("--workers", type=int, help="Worker processes for ensembles")

    parser = HardballArgumentParser(prog="hardball", description="Two hard balls: billiard simulation and diagnostics")
    parser.add_argument("--version", action="store_true", help="Show version and exit")
    subparsers = parser.add_subparsers(dest="command", help="Command to run")

    sim = subparsers.add_parser("simulate", parents=[common], help="Simulate and write a JSONL event log")
    sim.add_argument("--events", type=int, help="Stop after this many events")
    sim.add_argument("--collisions", type=int, help="Stop after this many ball collisions")
    sim.add_argument("--time", type=float, help="Stop at this time")
    sim.add_argument("--system", choices=["pair", "product"], help="Simulate the torus pair or its product instead")

    for name, text in (("symbolic", "Symbolic collision sequence and richness"),
                       ("neutral", "Neutral space of a segment")):
        sub = subparsers.add_parser(name, parents=[common], help=text)
        sub.add_argument("--collisions", type=int, help="Ball collisions in the segment")
        if name == "neutral":
            sub.add_argument("--at", choices=["start", "mid"], help="Base point of the neutral space")

    lemma = subparsers.add_parser("lemma-check", parents=[common], help="Check a neutral-space lemma on a segment")
    lemma.add_argument("lemma", choices=["3.6", "3.8", "3.9", "3.5"])
    lemma.add_argument("--collisions", type=int, help="Ball collisions in the segment")

    unfold = subparsers.add_parser("unfold", parents=[common], help="Unfold the box into a torus cover")
    unfold.add_argument("mode", choices=["linear", "axis"])
    unfold.add_argument("--time", type=float, help="Length of the collision-free stretch (linear)")
    unfold.add_argument("--axis", type=int, help="Wall axis to unfold (axis)")
    unfold.add_argument("--collisions", type=int, help="Ball collisions in the segment (axis)")

    product = subparsers.add_parser("product-check", parents=[common],
                                    help="Compare the pair dynamics with the Sinai product")
    product.add_argument("--events", type=int, help="Pair events to compare")
    product.add_argument("--window", type=int, help="Pair events per resynchronization window")

    lyap = subparsers.add_parser("lyapunov", parents=[common], help="Lyapunov spectrum")
    lyap.add_argument("--events", type=int, help="Events to average over")
    lyap.add_argument("--time", type=float, help="Total time (product system)")
    lyap.add_argument("--period", type=float, help="Re-orthonormalization period")
    lyap.add_argument("--system", choices=["pair", "product"], help="Spectrum of the Sinai product flow")

    census = subparsers.add_parser("census", parents=[common], help="Richness and sufficiency census")
    census.add_argument("--samples", type=int, help="Liouville samples")
    census.add_argument("--collisions", type=int, help="Ball collisions per sample")

    ergodic = subparsers.add_parser("ergodic", parents=[common], help="Time averages against the ensemble average")
    ergodic.add_argument("--observable", choices=sorted(OBSERVABLES), help="Observable")
    ergodic.add_argument("--orbits", type=int, help="Orbits to average along")
    ergodic.add_argument("--time", type=float, help="Time per orbit")
    ergodic.add_argument("--ensemble", type=int, help="Ensemble size")

    scan = subparsers.add_parser("scan-avoiding", parents=[common], help="Orbits with no early ball collision")
    scan.add_argument("--samples", type=int, help="Liouville samples")
    scan.add_argument("--time", type=float, help="Collision-free time required")

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main CLI entry point"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:
        return int(exc.code or 0)

    if args.version:
        from .. import __version__
        print(f"hardball version {__version__}")
        return 0
    if args.command is None:
        parser.print_help(sys.stderr)
        return 1

    try:
        config = Config(args.config)
    except (OSError, ValueError) as exc:
        print(f"hardball: error: {exc}", file=sys.stderr)
        return 1
    level = args.log_level or config.get("log_level")
    setup_logging(level=getattr(logging, str(level).upper(), logging.INFO), log_file=args.log_file)

    ctx = RunContext(args, config)
    try:
        with open_output(args.out) as out:
            COMMANDS[args.command](ctx, out)
    except HardballError as exc:
        logger.error(f"{args.command} failed: {type(exc).__name__}: {exc}")
        return exc.exit_code
    except (ValidationError, ValueError) as exc:
        print(f"hardball: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
