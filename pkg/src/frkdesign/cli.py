"""Command-line entry point: ``frkdesign <subcommand> --config FILE --out DIR``."""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import io
from .metrics import ValidationSet, score
from .rng import stream
from .harness import experiments as ex
from .harness.config import FIELD_DOCS, load_config, profiles

log = logging.getLogger("frkdesign")


def _setup(args):
    cfg = load_config(args.config, args.profile)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_json(out / "config.json", cfg.to_dict())
    return cfg, out


def _progress(i, n):
    log.info("realization %d/%d done", i, n)


def cmd_simulate(args):
    cfg, out = _setup(args)
    sc = ex.build_scenario(cfg)
    rz = ex.realize(sc, args.realization)
    ex.write_grid(out / "grid.csv", sc.grid)
    io.write_bau_field(out / "truth.csv", rz.truth.values)
    io.write_points(out / "stations.csv", sc.stations, {"bau_index": sc.station_bau, "value": rz.z})
    io.write_block_field(out / "proxy.csv", rz.q, sc.blocks.labels)


def cmd_fit(args):
    cfg, out = _setup(args)
    sc = ex.build_scenario(cfg)
    rz = ex.realize(sc, args.realization)
    fit = ex.fit_initial(sc, rz)
    ex.write_grid(out / "surfaces" / "grid.csv", sc.grid)
    io.write_surface(out / "surfaces" / "fit.csv", fit.mean, fit.var)
    io.write_json(out / "fit.json", {"params": fit.params.to_dict(), "loglik": fit.loglik,
                                     "n_iter": fit.n_iter, "converged": fit.converged,
                                     "loglik_trace": list(fit.loglik_trace)})


def _design(cfg, realization):
    sc = ex.build_scenario(cfg)
    rz = ex.realize(sc, realization)
    before = ex.fit_initial(sc, rz)
    n_x, snr_x, b = cfg.n_x_levels[0], cfg.snr_x_levels[0], cfg.batch_sizes[0]
    tr = ex.adaptive_sites(sc, rz, before.params, n_x, snr_x, b,
                           stream(cfg.seed, "design", realization, n_x, snr_x))
    after = tr.final if cfg.final_fit == "fixed" else ex.refit(sc, tr.obs, before.params)
    return sc, rz, before, tr, after


def cmd_design(args):
    cfg, out = _setup(args)
    sc, rz, before, tr, after = _design(cfg, args.realization)
    ex.write_grid(out / "surfaces" / "grid.csv", sc.grid)
    io.write_surface(out / "surfaces" / "before.csv", before.mean, before.var)
    io.write_surface(out / "surfaces" / "after.csv", after.mean, after.var)
    ex.write_sites(out / "sites.csv", tr, sc.grid)
    io.write_json(out / "design.json", tr.to_dict())


def cmd_evaluate(args):
    cfg, out = _setup(args)
    if args.truth or args.surface:
        if not (args.truth and args.surface):
            raise ValueError("--truth and --surface go together")
        surf = io.read_table(args.surface, ("bau_index", "mean", "sd"))
        n = surf["bau_index"].size
        truth = io.read_bau_field(args.truth, n)
        idx = surf["bau_index"].astype(int)
        mean, sd = np.empty(n), np.empty(n)
        mean[idx], sd[idx] = surf["mean"], surf["sd"]
        excluded = []
        if args.exclude:
            excluded = io.read_table(args.exclude, ("bau_index",))["bau_index"].astype(int)
        val = ex.validation_indices(n, excluded)
        rec = score(ValidationSet.from_fit(truth, mean, sd ** 2, val))
        io.write_json(out / "summary.json", {"n_validation": int(val.size), **rec.as_dict()})
        return
    sc, rz, before, tr, after = _design(cfg, args.realization)
    val = ex.validation_indices(sc.n, sc.station_bau, tr.selected)
    y = rz.truth.values
    io.write_json(out / "summary.json", {
        "n_validation": int(val.size),
        "without_sensors": score(ValidationSet.from_fit(y, before.mean, before.var, val)).as_dict(),
        "with_sensors": score(ValidationSet.from_fit(y, after.mean, after.var, val)).as_dict(),
    })


def cmd_factorial(args):
    cfg, out = _setup(args)
    table = ex.run_factorial(cfg, progress=_progress)
    ex.write_results(out / "results.csv", table)
    ex.write_frame(out / "differences.csv", ex.summarize_differences(table))
    io.write_json(out / "summary.json", ex.factorial_summary(table))


def cmd_batch_study(args):
    cfg, out = _setup(args)
    records, table = ex.run_batch_study(cfg, progress=_progress)
    ex.write_results(out / "results.csv", records)
    ex.write_frame(out / "batch.csv", table)
    io.write_json(out / "summary.json", ex.batch_summary(table))


def cmd_osse(args):
    cfg, out = _setup(args)
    ex.write_osse(out, ex.run_osse(cfg))


COMMANDS = {
    "simulate": (cmd_simulate, "simulate truth, station and proxy data for one realization"),
    "fit": (cmd_fit, "EM fit to station and proxy data; writes the prediction surface"),
    "design": (cmd_design, "adaptive sensor design for one realization"),
    "evaluate": (cmd_evaluate, "score surfaces against a truth field, or a design run with/without sensors"),
    "factorial": (cmd_factorial, "adaptive vs random Monte Carlo factorial"),
    "batch-study": (cmd_batch_study, "effect of batch size on the completed design"),
    "osse": (cmd_osse, "observing-system experiment on the shipped fixtures"),
}


def build_parser() -> argparse.ArgumentParser:
    keys = "\n".join(f"  {k:<18} {v}" for k, v in FIELD_DOCS.items())
    p = argparse.ArgumentParser(
        prog="frkdesign", formatter_class=argparse.RawDescriptionHelpFormatter,
        description="Fixed rank kriging data fusion and adaptive sensor design.",
        epilog=f"profiles: {', '.join(profiles())}\n\nconfig keys:\n{keys}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        s = sub.add_parser(name, help=help_, description=help_)
        s.add_argument("--config", help="JSON config file (keys override the profile)")
        s.add_argument("--profile", default=None,
                       help="base profile when the config has no 'profile' key (default: desk)")
        s.add_argument("--out", required=True, help="output directory")
        if name in ("simulate", "fit", "design", "evaluate"):
            s.add_argument("--realization", type=int, default=0, help="process realization index")
        if name == "evaluate":
            s.add_argument("--truth", help="bau_index,value CSV of the true field")
            s.add_argument("--surface", help="bau_index,mean,sd CSV of predictions")
            s.add_argument("--exclude", help="CSV with a bau_index column of BAUs to leave out")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    t0 = time.perf_counter()
    try:
        COMMANDS[args.command][0](args)
    except (FileNotFoundError, ValueError) as exc:
        print(f"frkdesign {args.command}: error: {exc}", file=sys.stderr)
        return 2
    log.info("%s finished in %.1f s", args.command, time.perf_counter() - t0)
    return 0


if __name__ == "__main__":
    sys.exit(main())
