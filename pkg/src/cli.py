"""
Command-line entry point.

Subcommands: fit, play, study, sweep, demo, verify. Files go to ``--out``,
a one-line JSON summary goes to stdout and logs go to stderr.

Exit codes: 0 success, 1 the honest message is beaten (verify), 2 input or
config error, 3 numerical failure or partial results.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import pandas as pd
from pydantic import ValidationError

if str(Path(__file__).parent) not in sys.path:
    sys.path.insert(0, str(Path(__file__).parent))

from choice_model import ChoiceDataset
from errors import ConfigError, DatasetParseError, InputError, NumericalError
from experiments import run_frequency_study, run_risotto_demo, sweep
from game_engine import play_batch, stream, verify_honest_message, write_transcripts
from posterior_inference import fit, posterior_summary
from settings import Settings

logger = logging.getLogger("offswitch")

EXIT_OK = 0
EXIT_CHECK = 1
EXIT_INPUT = 2
EXIT_NUMERICAL = 3


def _write_csv(frame: pd.DataFrame, path: Path) -> None:
    frame.to_csv(path, index=False, lineterminator="\n", encoding="utf-8")


def _summary(**fields) -> None:
    print(json.dumps(fields, sort_keys=True))


def _mark_partial(frame: pd.DataFrame, failed) -> pd.DataFrame:
    frame = frame.copy()
    frame["partial"] = failed
    return frame


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_fit(args, settings: Settings, out: Path) -> int:
    dataset = ChoiceDataset.read(args.dataset)
    if len(dataset) == 0:
        logger.warning("%s holds no observations: writing the prior", args.dataset)
    kernel, mean = settings.kernel(), settings.mean()
    posterior = fit(dataset, kernel, mean, sigma_fit=settings.sigma_fit,
                    method=settings.inference_method(), rng=stream(settings.seed),
                    model=settings.rationality_model())
    frame = posterior_summary(posterior, kernel, mean, settings.grid().acts())
    path = out / "posterior.csv"
    _write_csv(frame, path)
    _summary(command="fit", output=str(path), method=posterior.method,
             observations=len(dataset), rows=len(frame))
    return EXIT_OK


def cmd_play(args, settings: Settings, out: Path) -> int:
    config = settings.game_config()
    transcripts = play_batch(config, args.runs or 1, jobs=args.jobs, progress=_progress())
    path = out / "transcripts.jsonl"
    write_transcripts(path, transcripts)
    aborted = sum(1 for t in transcripts if t.aborted)
    actions = [t.receiver_action.value for t in transcripts]
    _summary(command="play", output=str(path), plays=len(transcripts), aborted=aborted,
             actions={a: actions.count(a) for a in sorted(set(actions))})
    if aborted:
        logger.error("%d of %d plays aborted", aborted, len(transcripts))
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_study(args, settings: Settings, out: Path) -> int:
    table = run_frequency_study(settings.study_config(), jobs=args.jobs, progress=_progress())
    frame = table.to_frame()
    if table.aborted:
        frame = _mark_partial(frame, frame["method"].map(
            lambda m: table.count(m, "ABORTED") > 0))
    path = out / "frequency.csv"
    _write_csv(frame, path)
    _summary(command="study", output=str(path), runs=table.n_runs,
             methods=list(table.methods), aborted=table.aborted)
    return EXIT_NUMERICAL if table.aborted else EXIT_OK


def cmd_sweep(args, settings: Settings, out: Path) -> int:
    frame = sweep(settings.sweep_param, settings.sweep_values(), settings.study_config(),
                  jobs=args.jobs, progress=_progress())
    failed = frame["aborted"] > 0
    aborted = int(frame["aborted"].sum())
    frame = frame[["param_value", "method", "def_fraction"]]
    if aborted:
        frame = _mark_partial(frame, failed)
    path = out / "sweep.csv"
    _write_csv(frame, path)
    _summary(command="sweep", output=str(path), param=settings.sweep_param,
             rows=len(frame), aborted=aborted)
    return EXIT_NUMERICAL if aborted else EXIT_OK


def cmd_demo(args, settings: Settings, out: Path) -> int:
    frame = run_risotto_demo(n_prefs=settings.prefs, method=settings.inference_method(),
                             seed=settings.seed)
    path = out / "curves.csv"
    _write_csv(frame, path)
    _summary(command="demo", output=str(path), prefs=settings.prefs, rows=len(frame))
    return EXIT_OK


def cmd_verify(args, settings: Settings, out: Path) -> int:
    report = verify_honest_message(settings.game_config())
    path = out / "verify.json"
    path.write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
    _summary(command="verify", output=str(path), messages=report.n_messages,
             honest_is_optimal=report.honest_is_optimal, beating=len(report.beating))
    if not report.honest_is_optimal:
        logger.error("%d messages beat the honest one", len(report.beating))
        return EXIT_CHECK
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "play": cmd_play, "study": cmd_study, "sweep": cmd_sweep,
            "demo": cmd_demo, "verify": cmd_verify}
SEEDED = ("play", "study")


def _progress() -> bool:
    return sys.stderr.isatty()


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", default=".", help="output directory (default: .)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        dest="overrides", help="override one config key")
    common.add_argument("--strict", action="store_true",
                        help="require an explicit seed for play and study")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(prog="offswitch",
                                     description="Off-switch signalling game simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", parents=[common], help="fit a posterior to a choice dataset")
    p.add_argument("dataset", help="choice dataset file")

    p = sub.add_parser("play", parents=[common], help="play the game")
    p.add_argument("--runs", type=int, help="number of plays (default 1)")

    p = sub.add_parser("study", parents=[common], help="decision-frequency study")
    p.add_argument("--methods", help="comma-separated inference methods")
    p.add_argument("--runs", type=int, help="number of runs")

    p = sub.add_parser("sweep", parents=[common], help="DEF fraction across sigma or gamma")
    p.add_argument("--param", choices=["sigma", "gamma"])
    p.add_argument("--grid", help="comma-separated parameter values")
    p.add_argument("--methods", help="comma-separated inference methods")
    p.add_argument("--runs", type=int, help="runs per grid value")

    p = sub.add_parser("demo", parents=[common], help="risotto posterior curves")
    p.add_argument("--prefs", type=int, help="number of preferences")

    sub.add_parser("verify", parents=[common], help="check the honest message is optimal")
    return parser


def _load_settings(args) -> Settings:
    if args.strict and args.command in SEEDED and args.seed is None:
        raise ConfigError(f"--strict: {args.command} needs --seed")
    runs = getattr(args, "runs", None) if args.command != "play" else None
    return Settings.load(args.config, args.overrides, seed=args.seed, n_runs=runs,
                         methods=getattr(args, "methods", None),
                         sweep_param=getattr(args, "param", None),
                         sweep_grid=getattr(args, "grid", None),
                         prefs=getattr(args, "prefs", None))


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.INFO
    logging.basicConfig(stream=sys.stderr, level=level,
                        format="[%(name)s] %(levelname)s %(message)s")
    logging.getLogger().setLevel(level)
    try:
        settings = _load_settings(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args, settings, out)
    except DatasetParseError as e:
        logger.error("%s: %s", getattr(args, "dataset", "dataset"), e)
        return EXIT_INPUT
    except (InputError, ValidationError, FileNotFoundError) as e:
        logger.error("%s", e)
        return EXIT_INPUT
    except NumericalError as e:
        logger.error("numerical failure: %s", e)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
