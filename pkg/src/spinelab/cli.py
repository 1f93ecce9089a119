"""Command-line entry point: ``spinelab <subcommand> CONFIG [--seed] [--reps] [--out]``.

Exit status: 0 on success, otherwise the ``code`` of the raised
:class:`~spinelab.errors.SpinelabError` (2 invalid config, 3 population
explosion, 4 nonconvergence, 5 bracket failure, 6 out of domain).
"""
from __future__ import annotations

import argparse
import logging
import math
import sys

import numpy as np

from . import __version__, bbm, mc, multitype, outype
from .config import RunConfig, load_config
from .errors import ConfigInvalid, OutOfDomain, SpinelabError
from .trees import format_label

log = logging.getLogger("spinelab")

SUBCOMMANDS = ("eigen", "classify", "region", "simulate", "martingale", "spine-check", "lmp")


def _header(cfg: RunConfig, subcommand: str) -> dict:
    return {"spinelab": __version__, "subcommand": subcommand, "config": cfg.text}


def _na(v):
    return math.nan if v is None else v


# -- subcommands -------------------------------------------------------------

def _default_lambda_grid(cfg: RunConfig):
    if cfg.lambda_grid is not None:
        return list(cfg.lambda_grid)
    if cfg.kind == "ou":
        lo = cfg.model.lambda_min
        return list(np.linspace(lo, 0.0, 52)[1:-1])
    return list(np.linspace(-3.0, 0.0, 50))


def cmd_eigen(cfg: RunConfig):
    grid = _default_lambda_grid(cfg)
    kind, model = cfg.kind, cfg.model
    rows = []
    if kind == "bbm":
        cols = ["lambda", "e_lambda", "c_lambda", "lambda_tilde"]
        for lam in grid:
            s = bbm.bbm_spectral(model, lam)
            rows.append((lam, s.e_lambda, _na(s.c_lambda), s.lambda_tilde))
    elif kind == "typed":
        lt = multitype.lambda_tilde_typed(model)
        cols = ["lambda", "e_lambda", "e_prime", "c_lambda"] + [f"v_{y}" for y in range(model.n)] + ["lambda_tilde"]
        for lam in grid:
            s = multitype.typed_spectral(model, lam)
            rows.append((lam, s.e_lambda, s.e_prime, _na(s.c_lambda)) + tuple(float(v) for v in s.v_lambda) + (lt,))
    else:
        lt = outype.lambda_tilde_ou(model)
        cols = ["lambda", "mu", "psi_minus", "psi_plus", "e_lambda", "e_prime", "c_lambda", "lambda_tilde"]
        for lam in grid:
            s = outype.ou_spectral(model, lam)
            rows.append((lam, s.mu, s.psi_minus, s.psi_plus, s.e_lambda, s.e_prime, s.c_lambda, lt))
    return mc.format_csv(cols, rows, _header(cfg, "eigen"))


def classify(cfg: RunConfig, lam, p=None):
    fn = {"bbm": bbm.classify_bbm, "typed": multitype.classify_typed, "ou": outype.classify_ou}[cfg.kind]
    return fn(cfg.model, lam, p)


def cmd_classify(cfg: RunConfig):
    cfg.require("lam")
    p = None if cfg.p is None or cfg.p == 1.0 else cfg.p
    v = classify(cfg, cfg.lam, p)
    return mc.format_json({"lambda": cfg.lam, "p": p, **v.to_dict()}, _header(cfg, "classify"))


def cmd_region(cfg: RunConfig):
    lams = _default_lambda_grid(cfg) if cfg.lambda_grid is not None or cfg.kind == "ou" \
        else list(np.linspace(-3.0, 0.0, 61))
    ps = [None] + list(cfg.p_grid if cfg.p_grid is not None else np.linspace(1.1, 2.0, 10))
    rows = []
    for lam in lams:
        for p in ps:
            try:
                v = classify(cfg, lam, p)
                rows.append((lam, "" if p is None else p, v.tag.value, v.clause))
            except OutOfDomain:
                rows.append((lam, "" if p is None else p, "OUT_OF_DOMAIN", ""))
    return mc.format_csv(["lambda", "p", "verdict", "clause"], rows, _header(cfg, "region"))


def cmd_simulate(cfg: RunConfig):
    cfg.require("t")
    rep = cfg.replicate
    if cfg.measure == "q":
        cfg.require("lam")
        (_, snap, rec), = mc.q_snapshots(cfg.model, cfg.lam, cfg.t, [rep], cfg.seed, cfg.cap, cfg.h)
        spine = rec.spine_label
    else:
        (_, snap), = mc.p_snapshots(cfg.model, cfg.t, [rep], cfg.seed, cfg.cap, cfg.h)
        spine = None
    types = snap.types if snap.types is not None else [""] * snap.size
    rows = [(format_label(u), float(x), y if y == "" else (int(y) if cfg.kind == "typed" else float(y)),
             float(b), int(u == spine))
            for u, x, y, b in zip(snap.labels, snap.positions, types, snap.birth_times)]
    return mc.format_csv(["label", "position", "type", "birth_time", "on_spine"], rows,
                         _header(cfg, "simulate"))


def cmd_martingale(cfg: RunConfig):
    cfg.require("lam")
    grid = cfg.time_grid or ((cfg.t,) if cfg.t is not None else None)
    if grid is None:
        raise ConfigInvalid("[run] time_grid (or t) is required")
    header = _header(cfg, "martingale")
    if cfg.p is None or cfg.p == 1.0:
        values = [mc.estimate_martingale_mean(cfg.model, cfg.lam, t, cfg.n_reps, cfg.seed, cfg.cap, cfg.h,
                                              offset=i * cfg.n_reps)
                  for i, t in enumerate(grid)]
        slope, half, _ = mc.fit_log_slope(grid, values)
        curve = mc.GrowthCurve(np.asarray(grid, dtype=float), values, slope, half)
    else:
        curve = mc.estimate_p_moment_curve(cfg.model, cfg.lam, cfg.p, grid, cfg.n_reps, cfg.seed, cfg.cap, cfg.h)
    header["fitted_log_slope"] = "%.17g" % curve.fitted_log_slope
    header["slope_halfwidth"] = "%.17g" % curve.slope_halfwidth
    return mc.format_csv(["time", "mean", "se", "n", "flag"], mc.curve_rows(curve), header)


def cmd_spine_check(cfg: RunConfig):
    cfg.require("lam", "t")
    m, lam, t = cfg.model, cfg.lam, cfg.t
    report = mc.spine_statistics(m, lam, t, cfg.n_reps, cfg.seed, cfg.h) if t > 0 else None
    rn = mc.rn_consistency(m, lam, t, "exp_neg_popsize", cfg.n_reps, cfg.seed, cfg.cap, cfg.h)
    dec = mc.spine_decomp_check(m, lam, t, cfg.n_reps, cfg.seed, cfg.cap, cfg.h)
    payload = {
        "spine_statistics": None if report is None else report.to_dict(),
        "rn_consistency": {"functional": "exp_neg_popsize", "left": rn.left.to_dict(),
                           "right": rn.right.to_dict(), "z_score": rn.z_score,
                           "passed": abs(rn.z_score) <= 3},
        "spine_decomp_check": {"z_score": dec.z_score, "estimate": dec.estimate.to_dict(),
                               "expected": dec.expected, "skeleton_fissions": dec.record.n_fissions,
                               "passed": abs(dec.z_score) <= 3},
    }
    return mc.format_json(payload, _header(cfg, "spine-check"))


def cmd_lmp(cfg: RunConfig):
    cfg.require("t")
    est = mc.lmp_estimate(cfg.model, cfg.t, cfg.n_reps, cfg.seed, cfg.cap)
    if cfg.kind == "bbm":
        limit = -math.sqrt(2.0 * cfg.model.r * cfg.model.m)
    else:
        limit = multitype.lmp_speed_typed(cfg.model)
    return mc.format_json({"t": cfg.t, "estimate": est.to_dict(), "asymptotic_speed": limit},
                          _header(cfg, "lmp"))


COMMANDS = {"eigen": cmd_eigen, "classify": cmd_classify, "region": cmd_region, "simulate": cmd_simulate,
            "martingale": cmd_martingale, "spine-check": cmd_spine_check, "lmp": cmd_lmp}


def run(subcommand: str, config_path: str, seed=None, reps=None, out=None) -> int:
    """Run one subcommand; returns the exit status."""
    try:
        if subcommand not in COMMANDS:
            raise ConfigInvalid(f"unknown subcommand {subcommand!r}")
        cfg = load_config(config_path, {"seed": seed, "n_reps": reps, "output": out})
        text = COMMANDS[subcommand](cfg)
        if cfg.output:
            mc.write_text(cfg.output, text)
        else:
            sys.stdout.write(text)
        return 0
    except SpinelabError as exc:
        print(f"spinelab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.code
    except ValueError as exc:
        print(f"spinelab: ConfigInvalid: {exc}", file=sys.stderr)
        return ConfigInvalid.code


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spinelab", description="Spine experiments for branching diffusions.")
    ap.add_argument("--version", action="version", version=f"spinelab {__version__}")
    sub = ap.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("config", help="INI run configuration")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--reps", type=int)
        sp.add_argument("--out", help="output file (default: stdout)")
    return ap


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    return run(args.subcommand, args.config, args.seed, args.reps, args.out)


if __name__ == "__main__":
    sys.exit(main())
