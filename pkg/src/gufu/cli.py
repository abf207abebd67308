"""Command-line entry point: init, update, export, simulate, eval.

Exit codes: 0 success, 2 input/validation problem, 1 internal error.
stdout carries machine-readable JSON only; diagnostics go to stderr.  The
GUFU_SEED environment variable overrides the configured seed.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .config import RunConfig
from .data import load_batch, load_survey, save_batch, save_survey
from .errors import GufuError, ValidationError
from .pipeline import initialize, load_state, save_state, update_cycle
from .simenv import SimConfig, Simulator, location_error, rss_error

logger = logging.getLogger("gufu")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_INVALID = 2


def _load_config(path: str | None, seed_override: int | None) -> RunConfig:
    cfg = RunConfig.from_file(path) if path else RunConfig()
    env_seed = os.environ.get("GUFU_SEED")
    if env_seed is not None:
        cfg = cfg.replaced(seed=int(env_seed))
    if seed_override is not None:
        cfg = cfg.replaced(seed=seed_override)
    return cfg


def _emit(payload: dict) -> None:
    json.dump(payload, sys.stdout, sort_keys=True)
    sys.stdout.write("\n")


class _StateLock:
    """A lock file preventing concurrent mutation of one state directory."""

    def __init__(self, directory: Path):
        self.path = directory / ".lock"

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ValidationError(
                f"state directory is locked ({self.path}); "
                "remove the lock if no other run is active") from None
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)
        return False


def _write_report(state_dir: Path, report: dict) -> Path:
    reports = state_dir / "reports"
    reports.mkdir(parents=True, exist_ok=True)
    path = reports / f"cycle_{report['cycle']}.json"
    with open(path, "w") as f:
        json.dump(report, f, indent=1, sort_keys=True)
        f.write("\n")
    mods = report.get("edge_modification")
    if mods is not None:
        with open(reports / f"cycle_{report['cycle']}_edges.json", "w") as f:
            json.dump(mods, f, indent=1, sort_keys=True)
            f.write("\n")
    losses = report.get("update_losses")
    if losses:
        keys = ["lp", "lu", "lcp", "lcu", "total"]
        with open(reports / f"cycle_{report['cycle']}_losses.csv", "w") as f:
            f.write("epoch," + ",".join(keys) + "\n")
            for epoch, h in enumerate(losses):
                f.write(str(epoch) + "," +
                        ",".join(f"{h.get(c, float('nan'))}" for c in keys) + "\n")
    return path


def cmd_init(args) -> int:
    cfg = _load_config(args.config, args.seed)
    db = load_survey(args.survey)
    state = initialize(db, cfg)
    out = Path(args.out)
    with _StateLock(out):
        save_state(state, out)
    _emit({"state_dir": str(out), "rows": db.n_samples, "aps": db.n_aps})
    return EXIT_OK


def cmd_update(args) -> int:
    state_dir = Path(args.state)
    batch = load_batch(args.batch)
    with _StateLock(state_dir):
        state = load_state(state_dir)
        report = update_cycle(state, batch)
        save_state(state, state_dir)
        report_path = _write_report(state_dir, report)
    _emit({"cycle": report["cycle"], "report": str(report_path),
           "aps": state.db.n_aps})
    return EXIT_OK


def cmd_export(args) -> int:
    state = load_state(Path(args.state))
    save_survey(state.db, args.out)
    _emit({"out": args.out, "rows": state.db.n_samples, "aps": state.db.n_aps})
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = SimConfig.from_file(args.config)
    env_seed = os.environ.get("GUFU_SEED")
    if env_seed is not None:
        cfg.seed = int(env_seed)
    sim = Simulator(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_survey(sim.survey(), out / "survey.jsonl")
    written = {"survey": str(out / "survey.jsonl"), "batches": []}
    for week in range(1, args.weeks + 1):
        batch, truth_locs = sim.crowdsource_batch(week, args.batch_size)
        save_batch(batch, out / f"batch_{week}.jsonl")
        with open(out / f"batch_{week}_truth.jsonl", "w") as f:
            for loc, row in zip(truth_locs, batch.rss):
                rec = {"loc": [float(loc[0]), float(loc[1])],
                       "rss": {m: float(v) for m, v in zip(batch.macs, row) if v > -120.0}}
                f.write(json.dumps(rec) + "\n")
        save_survey(sim.truth_db(week), out / f"truth_db_{week}.jsonl")
        written["batches"].append(str(out / f"batch_{week}.jsonl"))
    _emit(written)
    return EXIT_OK


def cmd_eval(args) -> int:
    state = load_state(Path(args.state))
    truth = load_survey(args.truth, site_bounds=state.db.site_bounds)
    result = {"rss_error_db": rss_error(state.db, truth)}
    if args.loc_truth:
        cycle = args.cycle
        if cycle is None:
            reports = sorted((Path(args.state) / "reports").glob("cycle_*.json"),
                             key=lambda p: int(p.stem.split("_")[1])
                             if p.stem.split("_")[1].isdigit() else -1)
            reports = [p for p in reports if p.stem.count("_") == 1]
            if not reports:
                raise ValidationError("no cycle reports found for location evaluation")
            cycle = int(reports[-1].stem.split("_")[1])
        with open(Path(args.state) / "reports" / f"cycle_{cycle}.json") as f:
            report = json.load(f)
        pred = report.get("predicted_locations")
        if pred is None:
            raise ValidationError(f"cycle {cycle} report has no predicted locations")
        truth_locs = []
        with open(args.loc_truth) as f:
            for line in f:
                line = line.strip()
                if line:
                    truth_locs.append(json.loads(line)["loc"])
        mean, cdf = location_error(pred, truth_locs)
        result["mean_location_error_m"] = mean
        result["location_cdf"] = [[m, frac] for m, frac in cdf]
        result["cycle"] = cycle
    if args.report:
        with open(args.report, "w") as f:
            json.dump(result, f, indent=1, sort_keys=True)
            f.write("\n")
    _emit(result)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gufu", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="train models from a survey file")
    p.add_argument("--survey", required=True)
    p.add_argument("--out", required=True, help="state directory to create")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("update", help="run one batch update against a state")
    p.add_argument("--state", required=True)
    p.add_argument("--batch", required=True)
    p.set_defaults(func=cmd_update)

    p = sub.add_parser("export", help="write the current fingerprints as JSONL")
    p.add_argument("--state", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("simulate", help="generate a synthetic survey and batches")
    p.add_argument("--config", required=True, help="SimConfig JSON file")
    p.add_argument("--out", required=True)
    p.add_argument("--weeks", type=int, default=8)
    p.add_argument("--batch-size", type=int, default=200)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("eval", help="score a state against ground truth")
    p.add_argument("--state", required=True)
    p.add_argument("--truth", required=True, help="truth db JSONL (with loc)")
    p.add_argument("--loc-truth", help="batch truth JSONL for location error")
    p.add_argument("--cycle", type=int, help="report cycle to score (default: last)")
    p.add_argument("--report", help="write the metrics JSON here as well")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        logger.error("file not found: %s", exc.filename or exc)
        return EXIT_INVALID
    except ValidationError as exc:
        logger.error("%s", exc)
        return EXIT_INVALID
    except GufuError as exc:
        logger.error("internal error: %s", exc)
        return EXIT_INTERNAL
    except Exception:  # pragma: no cover - safety net
        logger.exception("unexpected failure")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
