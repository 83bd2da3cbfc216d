"""
Command line entry point.

    hrsowc [--config PATH] [--seed N] [--out PATH] [--threads N] <command> ...

Commands: channel, rates, optimize, gen-dataset, train, eval, sweep, report.
Exit status: 0 success, 2 infeasible result, 1 usage or input error.
"""
from __future__ import annotations

import argparse
import io
import logging
import sys
from pathlib import Path

from . import dataset as dsmod
from . import dnn
from .config import ConfigError, ExperimentConfig, load_config
from .dataset import DatasetError, DatasetSpace
from .experiments import (SweepError, SweepSpec, evaluate_surrogate, run_report, run_sweep,
                          sweep_csv)
from .geometry import DisconnectedUserError
from .optimizer import UTILITY_MODES, solve
from .pipeline import SCHEMES, prepare, scheme_report

log = logging.getLogger("hrsowc")

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE = 0, 1, 2
RATE_SCHEMES = ("hrs", "hrs-uniform", "rs", "oma", "dnn")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _global_flags(p, suppress: bool):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--config", default=d(None), help="YAML scenario/experiment config")
    p.add_argument("--seed", type=int, default=d(0), help="master seed (default 0)")
    p.add_argument("--out", default=d(None), help="output file (default stdout)")
    p.add_argument("--threads", type=int, default=d(1), help="worker processes (default 1)")
    p.add_argument("-v", "--verbose", action="count", default=d(0))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hrsowc", description=__doc__.split("\n\n")[0].strip())
    _global_flags(parser, suppress=False)
    common = _Parser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("channel", parents=[common], help="dump the channel gain matrix as CSV")

    p = sub.add_parser("rates", parents=[common], help="per-message SINRs and rates of a scheme")
    p.add_argument("--scheme", choices=RATE_SCHEMES, default="hrs")
    p.add_argument("--utility", choices=UTILITY_MODES, default=None,
                   help="objective of the optimised HRS allocation (default from config)")
    p.add_argument("--model", help="weights file (scheme dnn)")

    p = sub.add_parser("optimize", parents=[common], help="solve the HRS power allocation")
    p.add_argument("--utility", choices=UTILITY_MODES, default="log-message")

    p = sub.add_parser("gen-dataset", parents=[common], help="generate a training corpus")
    p.add_argument("--n", type=int, default=10000, help="number of samples")
    p.add_argument("--beam-waist-range", type=float, nargs=2, metavar=("LO_UM", "HI_UM"),
                   help="draw the beam waist per sample uniformly in [LO, HI] micrometres")
    p.add_argument("--features", choices=dsmod.FEATURE_MODES, default="demand+gain")
    p.add_argument("--rel-tol", type=float, default=1e-8, help="solver tolerance for labels")
    p.add_argument("--utility", choices=UTILITY_MODES, default="log-message",
                   help="objective the labels are solved for")

    for name in ("train", "eval"):
        p = sub.add_parser(name, parents=[common],
                           help="train the surrogate" if name == "train" else
                           "evaluate a model on the test split")
        p.add_argument("--dataset", required=True)
        if name == "train":
            p.add_argument("--epochs", type=int, default=200)
            p.add_argument("--batch", type=int, default=64)
            p.add_argument("--lr", type=float, default=1e-3)
            p.add_argument("--history", help="write the per-epoch loss history CSV here")
        else:
            p.add_argument("--model", required=True)
            p.add_argument("--split", choices=dsmod.SPLITS, default="test")

    p = sub.add_parser("sweep", parents=[common], help="Monte Carlo sweep as CSV curve data")
    p.add_argument("--variable", choices=("beamwaist", "users", "snr"), required=True)
    p.add_argument("--values", type=float, nargs="+", required=True)
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--schemes", nargs="+", choices=SCHEMES,
                   default=["opt", "hrs-uniform", "rs", "oma"])
    p.add_argument("--model", help="weights file (needed for scheme dnn)")

    p = sub.add_parser("report", parents=[common], help="human-readable single-scenario summary")
    p.add_argument("--model", help="weights file; adds the dnn scheme and its gap")
    return parser


# -- helpers ----------------------------------------------------------------------

def _emit(args, text: str):
    if args.out:
        try:
            Path(args.out).write_text(text)
        except OSError as exc:
            raise UsageError(f"cannot write {args.out}: {exc}") from None
    else:
        sys.stdout.write(text)


def _model(path):
    if path is None:
        return None
    try:
        return dnn.load(path)
    except (ValueError, KeyError) as exc:
        raise UsageError(str(exc)) from None


def _instance(cfg: ExperimentConfig, seed: int):
    scen = cfg.scenario(seed=seed)
    return prepare(scen, cfg.num_groups, cfg.p_total, cfg.r_min, seed=seed)


# -- commands ---------------------------------------------------------------------

def cmd_channel(args, cfg):
    ch = _instance(cfg, args.seed).channel
    buf = io.StringIO()
    buf.write("user,ap,gain\n")
    for k, row in enumerate(ch.gains):
        for l, g in enumerate(row):
            buf.write(f"{k + 1},{l + 1},{float(g)!r}\n")
    _emit(args, buf.getvalue())
    return EXIT_OK


def cmd_rates(args, cfg):
    if args.utility:
        cfg = cfg.replace(utility=args.utility)
    inst = _instance(cfg, args.seed)
    scheme = "opt" if args.scheme == "hrs" else args.scheme
    model = _model(args.model)
    if scheme == "dnn" and model is None:
        raise UsageError("--scheme dnn needs --model")
    rep, _ = scheme_report(inst, scheme, cfg.solver_kwargs(), model, args.seed)
    grp = [a + 1 for a in inst.plan.assignment]
    buf = io.StringIO()
    buf.write("message,user,group,sinr,rate\n")
    K = inst.plan.num_users
    if scheme in ("opt", "dnn", "hrs-uniform"):
        for k in range(K):
            buf.write(f"oc,{k + 1},{grp[k]},{float(rep.sinr_oc[k])!r},{float(rep.r_oc)!r}\n")
        for k in range(K):
            r = rep.r_ic[grp[k] - 1]
            buf.write(f"ic,{k + 1},{grp[k]},{float(rep.sinr_ic[k])!r},{float(r)!r}\n")
    elif scheme == "rs":
        for k in range(K):
            buf.write(f"c,{k + 1},{grp[k]},{float(rep.sinr_oc[k])!r},{float(rep.r_oc)!r}\n")
    for k in range(K):
        buf.write(f"p,{k + 1},{grp[k]},{float(rep.sinr_p[k])!r},{float(rep.r_p[k])!r}\n")
    buf.write(f"sum_rate={rep.sum_rate!r}\n")
    _emit(args, buf.getvalue())
    return EXIT_OK


def cmd_optimize(args, cfg):
    inst = _instance(cfg, args.seed)
    kw = dict(cfg.solver_kwargs(), mode=args.utility)
    res = solve(inst.channel, inst.plan, inst.prec, inst.cons, seed=args.seed, **kw)
    a = res.allocation
    buf = io.StringIO()
    buf.write("slot,index,power\n")
    buf.write(f"oc,1,{a.p_oc!r}\n")
    for g, p in enumerate(a.p_ic):
        buf.write(f"ic,{g + 1},{float(p)!r}\n")
    for k, p in enumerate(a.p_p):
        buf.write(f"p,{k + 1},{float(p)!r}\n")
    buf.write(f"utility={res.utility!r}\nsum_rate={res.sum_rate!r}\n"
              f"feasible={str(res.feasible).lower()}\nqos_met={str(res.qos_met).lower()}\n")
    _emit(args, buf.getvalue())
    return EXIT_OK if res.feasible and res.qos_met else EXIT_INFEASIBLE


def cmd_gen_dataset(args, cfg):
    if not args.out:
        raise UsageError("gen-dataset needs --out")
    bw = tuple(v / 1e6 for v in args.beam_waist_range) if args.beam_waist_range else None
    space = DatasetSpace(cfg, beam_waist_range=bw, rel_tol=args.rel_tol,
                         feature_mode=args.features, utility=args.utility)
    ds = dsmod.generate(args.n, args.seed, space, args.out, workers=args.threads)
    log.info("wrote %d samples to %s", len(ds), args.out)
    return EXIT_OK


def cmd_train(args, cfg):
    if not args.out:
        raise UsageError("train needs --out")
    ds = dsmod.load(args.dataset)
    spec = dnn.spec_for_dataset(ds.num_users, ds.num_groups, ds.meta["feature_mode"])
    w0 = dnn.init(spec, seed=args.seed)
    w, hist = dnn.train(w0, ds, epochs=args.epochs, batch=args.batch, lr=args.lr, seed=args.seed)
    dnn.save(w, args.out)
    if args.history:
        lines = ["epoch,train_rmse,val_rmse"]
        lines += [f"{e},{t!r},{v!r}" for e, (t, v) in enumerate(zip(hist["train"], hist["val"]))]
        Path(args.history).write_text("\n".join(lines) + "\n")
    log.info("best epoch %d, validation RMSE %.6g", w.meta["best_epoch"], w.meta["best_val_loss"])
    return EXIT_OK


def cmd_eval(args, cfg):
    ds = dsmod.load(args.dataset)
    model = _model(args.model)
    m = evaluate_surrogate(model, ds, args.split)
    text = "".join(f"{k}={v!r}\n" if isinstance(v, float) else f"{k}={v}\n" for k, v in m.items())
    _emit(args, text)
    return EXIT_OK


def cmd_sweep(args, cfg):
    vals = tuple(args.values)
    spec = SweepSpec(args.variable, vals, args.trials, tuple(args.schemes), args.seed)
    rows = run_sweep(spec, cfg, _model(args.model), workers=args.threads)
    _emit(args, sweep_csv(rows))
    return EXIT_OK


def cmd_report(args, cfg):
    _emit(args, run_report(cfg, _model(args.model), seed=args.seed))
    return EXIT_OK


COMMANDS = {"channel": cmd_channel, "rates": cmd_rates, "optimize": cmd_optimize,
            "gen-dataset": cmd_gen_dataset, "train": cmd_train, "eval": cmd_eval,
            "sweep": cmd_sweep, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    if args.seed < 0:
        parser.error("--seed must be a nonnegative integer")
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except (UsageError, ConfigError, DatasetError, SweepError, DisconnectedUserError,
            ValueError) as exc:
        print(f"hrsowc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
