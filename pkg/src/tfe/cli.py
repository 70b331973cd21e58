"""tfe command line: solve, trace, verify, list-examples."""

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .foliation import (OutsideDomain, SingularField, closed_form_field, trace_leaf,
                        write_leaves_csv)
from .geom_core import is_inf
from .morphism import (CHECKS, BuiltinEvaluator, PerturbedEvaluator, ResidualSuite,
                       RootTracker, SurfaceEvaluator, sheared_field)
from .surface import (BUILTIN_NAMES, GridSpec, SeedError, SurfaceContainsFiber,
                      SurfaceFormatError, builtin_surface, field_over_grid, load_surface)
from .twistor import SliceSpec

EXIT_OK, EXIT_CONFIG, EXIT_VERIFY, EXIT_RUNTIME = 0, 1, 2, 3

DEFAULTS = {
    "surface": None, "surface_file": None, "param": [], "t": 0.0, "a": [0.0] * 8,
    "grid": "-2:2:0.25", "seed": [], "solve_seed": None, "mu0": None, "branch": "+",
    "checks": None, "tol": "1e-5", "points": 50, "point": [], "rng_seed": 0, "h": 1e-3,
    "perturb": None, "field": None, "plane": "x2x3", "step": 0.01, "max_len": 20.0,
    "closure_tol": 1e-3, "keep_masked": False, "out": ".",
}
PLANES = {"x1x2": (0, 1), "x1x3": (0, 2), "x2x3": (1, 2)}


class ConfigError(Exception):
    pass


class RuntimeFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def fmt(v):
    return f"{float(v):.17g}"


def _floats(text, n, key):
    try:
        vals = [float(v) for v in str(text).split(",")]
    except ValueError:
        raise ConfigError(f"{key}: expected {n} comma-separated numbers, got {text!r}")
    if len(vals) != n:
        raise ConfigError(f"{key}: expected {n} numbers, got {len(vals)}")
    return vals


def parse_grid(text):
    parts = str(text).split(",")
    if len(parts) not in (1, 3):
        raise ConfigError("grid: give min:max:step once or once per axis")
    axes = []
    for p in parts:
        try:
            lo, hi, st = (float(v) for v in p.split(":"))
        except ValueError:
            raise ConfigError(f"grid: cannot parse {p!r} as min:max:step")
        axes.append((lo, hi, st))
    try:
        return GridSpec(tuple(axes * 3 if len(axes) == 1 else axes))
    except ValueError as exc:
        raise ConfigError(f"grid: {exc}")


def parse_tol(text):
    text = str(text)
    if "=" not in text:
        v = float(text)
        if not v > 0:
            raise ConfigError("tol: tolerances must be positive")
        return {"*": v}
    out = {}
    for item in text.split(","):
        k, _, v = item.partition("=")
        try:
            out[k.strip()] = float(v)
        except ValueError:
            raise ConfigError(f"tol: cannot parse {item!r}")
        if not out[k.strip()] > 0:
            raise ConfigError(f"tol: tolerance for {k} must be positive")
    return out


def tol_for(tols, eq):
    for k in (eq, eq.rstrip("12"), "*"):
        if k in tols:
            return tols[k]
    return 1e-5


# ---------------------------------------------------------------- config

def resolve(args):
    """Merge a manifest given by --config with explicit flags into one dict."""
    cfg = dict(DEFAULTS)
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"config: cannot read {args.config}: {exc}")
        loaded = loaded.get("config", loaded)
        for k in loaded:
            if k not in DEFAULTS:
                raise ConfigError(f"config: unknown key {k!r}")
        cfg.update(loaded)
    for k in DEFAULTS:
        v = getattr(args, k, None)
        if v is not None and v != []:
            cfg[k] = v
    if args.a0 is not None:
        re, im = _floats(args.a0, 2, "a0")
        cfg["a"] = [re, im] + list(cfg["a"])[2:]
    if args.a is not None:
        cfg["a"] = _floats(args.a, 8, "a")
    if (cfg["surface"] is None) == (cfg["surface_file"] is None) and cfg["field"] is None:
        raise ConfigError("surface: give exactly one of --surface or --surface-file")
    if cfg["surface"] is not None and cfg["surface"] not in BUILTIN_NAMES:
        raise ConfigError(f"surface: unknown built-in {cfg['surface']!r}")
    if cfg["branch"] not in ("+", "-"):
        raise ConfigError("branch: must be + or -")
    for k in ("step", "max_len", "h", "closure_tol"):
        cfg[k] = float(cfg[k])
        if not cfg[k] > 0:
            raise ConfigError(f"{k}: must be positive")
    cfg["points"] = int(cfg["points"])
    if cfg["points"] < 1:
        raise ConfigError("points: must be at least 1")
    if cfg["plane"] not in PLANES:
        raise ConfigError(f"plane: one of {', '.join(PLANES)}")
    cfg["a"] = [float(v) for v in cfg["a"]]
    cfg["t"] = float(cfg["t"])
    return cfg


def params_of(cfg):
    out = {}
    for item in cfg["param"]:
        k, _, v = item.partition("=")
        try:
            out[k] = float(v)
        except ValueError:
            raise ConfigError(f"param: cannot parse {item!r} as name=value")
    return out


def slice_of(cfg, kind="R3"):
    a = cfg["a"]
    return SliceSpec(tuple(complex(a[2 * k], a[2 * k + 1]) for k in range(4)), kind, cfg["t"])


def evaluator_of(cfg):
    label = 0 if cfg["branch"] == "+" else 1
    if cfg["surface_file"] is not None:
        return SurfaceEvaluator(load_surface(cfg["surface_file"]), label)
    try:
        return BuiltinEvaluator(cfg["surface"], cfg["branch"], **params_of(cfg))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"param: {exc}")


def surface_of(cfg):
    if cfg["surface_file"] is not None:
        return load_surface(cfg["surface_file"])
    return builtin_surface(cfg["surface"], **params_of(cfg)).surface


def write_manifest(out, cmd, cfg):
    path = out / f"manifest-{cmd}.json"
    path.write_text(json.dumps({"command": cmd, "config": cfg}, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


# ---------------------------------------------------------------- solve

def cmd_solve(cfg, out):
    s = slice_of(cfg)
    grid = parse_grid(cfg["grid"])
    surf = surface_of(cfg)
    ev = evaluator_of(cfg)
    if cfg["solve_seed"] is not None:
        seed_pt = _floats(cfg["solve_seed"], 3, "solve_seed")
    else:
        seed_pt = [c[len(c) // 3] for c in grid.coords]
    if cfg["mu0"] is not None:
        re, im = _floats(cfg["mu0"], 2, "mu0")
        mu0 = complex(re, im)
    else:
        try:
            mu0 = ev.mu(s.point(seed_pt))
        except (SurfaceContainsFiber, ArithmeticError, IndexError) as exc:
            raise RuntimeFailure(f"solve_seed: no root at {seed_pt}: {exc}")
    label = 0 if cfg["branch"] == "+" else 1
    try:
        field = field_over_grid(surf, s, grid, (seed_pt, mu0), label)
    except SeedError as exc:
        raise RuntimeFailure(f"seed: {exc}")
    pts = grid.points().reshape(-1, 3)
    mu = field.mu.ravel()
    mask = field.singular_mask.ravel()
    br = field.branch.ravel()
    with open(out / "mu.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x1", "x2", "x3", "re_mu", "im_mu", "is_inf", "branch", "singular"])
        for p, m, k, b in zip(pts, mu, mask, br):
            if k and not cfg["keep_masked"]:
                continue
            if k:
                vals = ["nan", "nan", 0]
            elif is_inf(m):
                vals = ["inf", "0", 1]
            else:
                vals = [fmt(m.real), fmt(m.imag), 0]
            w.writerow([fmt(v) for v in p] + vals + [int(b), int(k)])
    n = int((~mask).sum())
    print(f"solved {n} of {mask.size} nodes ({mask.size - n} masked) -> {out / 'mu.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------- trace

def field_for_trace(cfg, seed):
    s = slice_of(cfg)
    ev = evaluator_of(cfg)
    if isinstance(ev, BuiltinEvaluator) and ev.builtin.mu is not None:
        return closed_form_field(lambda x: ev.mu(s.point(x)))
    try:
        return closed_form_field(RootTracker(ev, s, seed))
    except (ArithmeticError, ValueError, IndexError) as exc:
        raise SingularField(str(exc))


def _trace_one(cfg, seed):
    try:
        U = field_for_trace(cfg, seed)
    except SingularField:
        return None
    leaf = trace_leaf(U, seed, cfg["step"], cfg["max_len"], cfg["closure_tol"])
    return leaf if len(leaf.points) > 1 else None


def write_svg(path, leaves, plane):
    i, j = PLANES[plane]
    P = np.concatenate([lf.points[:, [i, j]] for lf in leaves])
    lo, hi = P.min(axis=0), P.max(axis=0)
    span = np.maximum(hi - lo, 1e-9)
    lo, span = lo - 0.05 * span, 1.1 * span
    size = max(span)
    names = ["x1", "x2", "x3"]

    def xy(p):
        # svg y grows downward
        return f"{p[0]:.6f},{(lo[1] + span[1] - (p[1] - lo[1])):.6f}"

    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" '
             f'viewBox="{lo[0]:.6f} {lo[1]:.6f} {span[0]:.6f} {span[1]:.6f}">',
             f'<g fill="none" stroke-width="{size / 400:.6f}">']
    if lo[0] < 0 < lo[0] + span[0]:
        lines.append(f'<line x1="0" y1="{lo[1]:.6f}" x2="0" y2="{lo[1] + span[1]:.6f}" stroke="#999"/>')
    if lo[1] < 0 < lo[1] + span[1]:
        y0 = lo[1] + span[1] + lo[1]
        lines.append(f'<line x1="{lo[0]:.6f}" y1="{y0:.6f}" x2="{lo[0] + span[0]:.6f}" '
                     f'y2="{y0:.6f}" stroke="#999"/>')
    for k, lf in enumerate(leaves):
        pts = " ".join(xy(p) for p in lf.points[:, [i, j]])
        lines.append(f'<polyline id="leaf{k}" stroke="#1f4e9c" points="{pts}"/>')
    lines.append("</g>")
    lines.append(f'<text x="{lo[0] + 0.02 * span[0]:.6f}" y="{lo[1] + 0.05 * span[1]:.6f}" '
                 f'font-size="{size / 30:.6f}">{names[i]} / {names[j]}</text>')
    lines.append("</svg>")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_trace(cfg, out, threads):
    seeds = [_floats(s, 3, "seed") for s in cfg["seed"]]
    if not seeds:
        raise RuntimeFailure("seed: no seeds given")
    with ThreadPoolExecutor(threads) as pool:
        leaves = list(pool.map(lambda sd: _trace_one(cfg, sd), seeds))
    for sd, lf in zip(seeds, leaves):
        if lf is None:
            print(f"seed {sd}: field singular or undefined, skipped", file=sys.stderr)
    leaves = [lf for lf in leaves if lf is not None]
    if not leaves:
        raise RuntimeFailure("seed: every seed lies on the singular set")
    write_leaves_csv(out / "leaves.csv", leaves)
    write_svg(out / "leaves.svg", leaves, cfg["plane"])
    for k, lf in enumerate(leaves):
        gap = "" if not lf.closed else f" gap {lf.gap:.3g}"
        print(f"leaf {k}: {len(lf.points)} points, length {lf.arclength[-1]:.6g}, "
              f"{lf.stop_reason}{gap}")
    return EXIT_OK


# ---------------------------------------------------------------- verify

def expand_checks(text, available):
    if text is None:
        return list(available)
    out = []
    for c in str(text).split(","):
        c = c.strip().upper()
        if c in ("ER1", "ER2", "EM1", "EM2"):
            c = c[:2]
        if c not in CHECKS:
            raise ConfigError(f"checks: unknown equation {c!r}")
        if c not in out:
            out.append(c)
    return out


def cmd_verify(cfg, out, threads):
    a = tuple(complex(cfg["a"][2 * k], cfg["a"][2 * k + 1]) for k in range(4))
    if cfg["field"] is not None:
        if cfg["field"] != "sheared":
            raise ConfigError(f"field: unknown control field {cfg['field']!r}")
        suite = ResidualSuite(a=a, t=cfg["t"], h=cfg["h"], U=sheared_field)
    else:
        ev = evaluator_of(cfg)
        if cfg["perturb"] is not None:
            ev = PerturbedEvaluator(ev, float(cfg["perturb"]))
        suite = ResidualSuite(ev, a, cfg["t"], cfg["h"])
    checks = expand_checks(cfg["checks"], suite.applicable)
    for c in checks:
        if c not in suite.applicable:
            print(f"{c}: not applicable to this field, skipped", file=sys.stderr)
    tols = parse_tol(cfg["tol"])
    points = None
    if cfg["point"]:
        points = []
        for p in cfg["point"]:
            v = [float(x) for x in str(p).split(",")]
            if len(v) not in (3, 4):
                raise ConfigError(f"point: expected 3 or 4 numbers, got {p!r}")
            points.append([0.0] * (4 - len(v)) + v)
    rng = np.random.default_rng(int(cfg["rng_seed"]))
    try:
        results = suite.run(checks, cfg["points"], rng, points, threads)
    except ArithmeticError as exc:
        raise RuntimeFailure(f"verify: {exc}")
    failures = []
    with open(out / "report.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["equation", "point", "h", "value", "order_estimate"])
        for r in results:
            order = "nan" if np.isnan(r.order) else fmt(r.order)
            for smp in r.samples:
                w.writerow([r.equation, ";".join(fmt(v) for v in smp.point),
                            fmt(smp.h), fmt(smp.value), order])
            if not r.passed(tol_for(tols, r.equation)):
                failures.append(r)
    by_eq = {}
    for r in results:
        by_eq.setdefault(r.equation, []).append(r)
    for eq, rs in by_eq.items():
        worst = max(r.value for r in rs)
        orders = [r.order for r in rs if not np.isnan(r.order)]
        omin = f"{min(orders):.3g}" if orders else "n/a"
        nfail = sum(r in failures for r in rs)
        print(f"{eq:9s} n={len(rs):3d} max={worst:.3e} min_order={omin} "
              f"tol={tol_for(tols, eq):.0e} {'FAIL' if nfail else 'ok'}")
    if failures:
        for r in failures[:20]:
            print(f"FAIL {r.equation} at {tuple(round(v, 6) for v in r.samples[0].point)}: "
                  f"value {r.value:.3e}, order {r.order:.3g}", file=sys.stderr)
        print(f"{len(failures)} residual check(s) failed", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


# ---------------------------------------------------------------- list

def cmd_list():
    for name in BUILTIN_NAMES:
        b = builtin_surface(name)
        terms = " + ".join(f"({c:g})*w^{list(e)}" for e, c in b.surface.terms)
        extras = []
        if b.params:
            extras.append("params " + ", ".join(f"{k}={v:g}" for k, v in b.params))
        extras.append("branches " + ",".join(str(x) for x in b.branches))
        extras.append("closed mu" if b.mu is not None else "numeric mu")
        print(f"{name:11s} degree {b.surface.degree}: {terms}  [{'; '.join(extras)}]")
    return EXIT_OK


# ---------------------------------------------------------------- main

def build_parser():
    p = _Parser(prog="tfe", description="Twistor surfaces to conformal foliations and "
                                          "harmonic morphisms, with residual checks.")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)
    common = _Parser(add_help=False)
    common.add_argument("--surface")
    common.add_argument("--surface-file")
    common.add_argument("--param", action="append", default=[],
                        help="surface parameter name=value, e.g. s=1")
    common.add_argument("--t", type=float)
    common.add_argument("--a0", help="re,im of the base point's x0")
    common.add_argument("--a", help="8 reals: re,im of a0..a3")
    common.add_argument("--branch", help="+ or -")
    common.add_argument("--config", help="manifest or config JSON to start from")
    common.add_argument("--out")

    s = sub.add_parser("solve", parents=[common], help="solve mu on a grid")
    s.add_argument("--grid", help="min:max:step, or three of them separated by commas")
    s.add_argument("--solve-seed", help="x1,x2,x3 where continuation starts")
    s.add_argument("--mu0", help="re,im of the root to start from")
    s.add_argument("--keep-masked", action="store_true", default=None)

    t = sub.add_parser("trace", parents=[common], help="trace leaves of the foliation")
    t.add_argument("--seed", action="append", default=[], help="x1,x2,x3 (repeatable)")
    t.add_argument("--plane", help="projection plane for the svg: x1x2, x1x3, x2x3")
    t.add_argument("--step", type=float)
    t.add_argument("--max-len", type=float)
    t.add_argument("--closure-tol", type=float)

    v = sub.add_parser("verify", parents=[common], help="finite-difference residual checks")
    v.add_argument("--checks", help="comma list from " + ",".join(CHECKS))
    v.add_argument("--tol", help="one tolerance, or EQ=tol,... per equation")
    v.add_argument("--points", type=int, help="random admissible points per slice")
    v.add_argument("--point", action="append", default=[], help="y0,y1,y2,y3 test point")
    v.add_argument("--rng-seed", type=int)
    v.add_argument("--h", type=float)
    v.add_argument("--perturb", type=float, help="add eps*zt1 to mu (control)")
    v.add_argument("--field", help="'sheared' control field instead of a surface")

    sub.add_parser("list-examples", help="list the built-in surfaces")
    return p


VALUE_FLAGS = ("--grid", "--a0", "--a", "--seed", "--point", "--solve-seed", "--mu0", "--t")


def _glue(argv):
    # values such as -2:2:0.25 or -1,0,0 would otherwise read as options
    out, it = [], iter(argv)
    for tok in it:
        if tok in VALUE_FLAGS:
            nxt = next(it, None)
            out.append(tok if nxt is None else f"{tok}={nxt}")
        else:
            out.append(tok)
    return out


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(_glue(argv))
    if args.cmd == "list-examples":
        return cmd_list()
    try:
        threads = max(1, int(os.environ.get("TFE_THREADS", "1")))
    except ValueError:
        print("TFE_THREADS must be an integer", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = resolve(args)
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        write_manifest(out, args.cmd, cfg)
        if args.cmd == "solve":
            return cmd_solve(cfg, out)
        if args.cmd == "trace":
            return cmd_trace(cfg, out, threads)
        return cmd_verify(cfg, out, threads)
    except (ConfigError, SurfaceFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RuntimeFailure, SurfaceContainsFiber, OutsideDomain, SingularField) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
