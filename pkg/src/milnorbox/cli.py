"""Command line driver: ``milnorbox {analyze,omega,ifs,wordsearch}``.

Exit codes: 0 on success, 2 on invalid input, 3 when an internal iteration
budget runs out.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import hutchinson
from .attractor import AnalysisParams, decompose_attractors, omega_limit
from .maps import get_map
from .phase import Point, cover_to_csv

log = logging.getLogger("milnorbox")

EXIT_OK, EXIT_INVALID, EXIT_BUDGET = 0, 2, 3

# flag dest -> AnalysisParams field
PARAM_FLAGS = {
    "delta": "delta",
    "depth": "depth",
    "grid": "grid_per_axis",
    "transient": "n_transient",
    "tail": "n_tail",
    "bloat": "bloat",
    "seed": "seed",
    "workers": "workers",
}


def parse_floats(text: str) -> tuple:
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise ValueError(f"expected comma separated numbers, got {text!r}") from None


def read_config(path: str) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment, keys may use dashes or underscores."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat key=value file; command line flags override it")
    p.add_argument("--map", default=None, help="map name, e.g. counterexample, mtupling:8, skewproduct, cubic")
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--depth", type=int, default=10)
    p.add_argument("--grid", type=int, default=50)
    p.add_argument("--transient", type=int, default=100)
    p.add_argument("--tail", type=int, default=5000)
    p.add_argument("--bloat", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="report path (default: stdout)")
    p.add_argument("--boxes-out", help="directory (analyze) or file (omega, ifs) for CSV box dumps")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="milnorbox", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="attractor decomposition with all audits")
    _add_common(p)

    p = sub.add_parser("omega", help="boxes visited by one orbit after the transient")
    _add_common(p)
    p.add_argument("--x", required=False, help="start point, comma separated coordinates")

    p = sub.add_parser("ifs", help="fiber IFS properties and attractor cover")
    _add_common(p)
    p.add_argument("--verify", action="store_true", help="check the four fiber properties")
    p.add_argument("--samples", type=int, default=100_000)

    p = sub.add_parser("wordsearch", help="certified Hutchinson word into a fiber ball")
    _add_common(p)
    p.add_argument("--center", default="-1.5,0.5")
    p.add_argument("--radius", type=float, default=0.2)
    p.add_argument("--max-len", type=int, default=64)
    return parser


def _glue_negative(argv):
    # let "--center -1.5,0.5" through: argparse would read the value as a flag
    argv = list(sys.argv[1:] if argv is None else argv)
    out = []
    i = 0
    while i < len(argv):
        if argv[i] in ("--center", "--x") and i + 1 < len(argv) and argv[i + 1].startswith("-"):
            out.append(f"{argv[i]}={argv[i + 1]}")
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def parse_args(argv=None):
    parser = build_parser()
    argv = _glue_negative(argv)
    args = parser.parse_args(argv)
    if args.config:
        cfg = read_config(args.config)
        sp = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest: a for a in sp._actions}
        for key in cfg:
            if key not in known or key in ("config", "help"):
                raise ValueError(f"unknown config key {key!r}")
        defaults = {}
        for key, raw in cfg.items():
            action = known[key]
            if action.const is True:
                defaults[key] = raw.lower() in ("1", "true", "yes", "on")
            else:
                defaults[key] = action.type(raw) if action.type else raw
        sp.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def params_from_args(args) -> AnalysisParams:
    return AnalysisParams(**{field: getattr(args, dest) for dest, field in PARAM_FLAGS.items()})


def _box_json(grid, key) -> dict:
    b = grid.box(key)
    return {"lo": [float(v) for v in b.lo], "hi": [float(v) for v in b.hi], "atom": b.atom}


def _params_json(params: AnalysisParams) -> dict:
    # worker count is an execution detail and must not change the report
    d = params.to_json()
    d.pop("workers")
    return d


def _write(path, text):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _emit(text: str, out):
    if out:
        _write(out, text)
    else:
        sys.stdout.write(text)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def analysis_report(decomp, boxes_dir: str, report_dir: str) -> dict:
    grid = decomp.params.grid(decomp.map.space)
    attractors = []
    for j, a in enumerate(decomp.attractors):
        path = os.path.join(boxes_dir, f"attractor_{j}.csv")
        _write(path, cover_to_csv(a.cover))
        attractors.append({
            "boxes_csv_path": os.path.relpath(path, report_dir),
            "basin_fraction": a.basin_fraction,
            "box_count": len(a.cover),
            "merged_from": a.merged_from,
            "delta_center": None if a.delta_center is None else list(a.delta_center.coords),
            "flags": a.flags,
            "violations": [{"source": _box_json(grid, v.source), "target": _box_json(grid, v.target),
                            "target_kind": v.target_kind} for v in a.violations],
        })
    rem_path = os.path.join(boxes_dir, "nonwandering_remainder.csv")
    _write(rem_path, cover_to_csv(decomp.remainder))
    return {
        "map": decomp.map.name,
        "params": _params_json(decomp.params),
        "attractors": attractors,
        "outliers": [list(p.coords) for p in decomp.outliers],
        "outlier_groups": [[list(decomp.estimates[i].source.coords) for i in g] for g in decomp.outlier_groups],
        "nonwandering_remainder_csv_path": os.path.relpath(rem_path, report_dir),
        "nonwandering_no_ball": decomp.remainder_no_ball,
        "nonwandering_no_delta_ball": decomp.remainder_no_delta_ball,
        "class_bound": decomp.class_bound,
    }


def _require_map(args):
    if not args.map:
        raise ValueError("--map is required")
    return get_map(args.map)


def cmd_analyze(args) -> int:
    spec = _require_map(args)
    params = params_from_args(args)
    decomp = decompose_attractors(spec, params)
    report_dir = os.path.dirname(os.path.abspath(args.out)) if args.out else os.getcwd()
    boxes_dir = args.boxes_out or report_dir
    _emit(_dumps(analysis_report(decomp, boxes_dir, report_dir)), args.out)
    return EXIT_OK


def cmd_omega(args) -> int:
    spec = _require_map(args)
    if args.x is None:
        raise ValueError("--x is required")
    point = Point(spec.space, parse_floats(args.x))
    est = omega_limit(spec, point, params_from_args(args))
    _emit(cover_to_csv(est.cover), args.boxes_out or args.out)
    return EXIT_OK


def cmd_ifs(args) -> int:
    ifs = hutchinson.fiber_ifs()
    fp = ifs.fiber
    report = {"constants": {"scale": fp.scale, "translations": [list(t) for t in fp.translations],
                            "labels": list(fp.labels), "fold_width": fp.fold_width,
                            "retract_start": fp.retract_start, "radius": fp.radius, "lambda": ifs.lam}}
    if args.verify:
        report["fiber_properties"] = hutchinson.verify_fiber_properties(ifs, args.samples, args.seed).to_json()
    if args.boxes_out:
        cover = hutchinson.ifs_attractor(ifs, args.depth)
        _write(args.boxes_out, cover_to_csv(cover))
        report["attractor_csv_path"] = args.boxes_out
    _emit(_dumps(report), args.out)
    if args.verify and not all(report["fiber_properties"]["pass"]):
        return 1
    return EXIT_OK


def cmd_wordsearch(args) -> int:
    ifs = hutchinson.fiber_ifs()
    center = parse_floats(args.center)
    if len(center) != 2:
        raise ValueError("--center needs two coordinates")
    word = hutchinson.hutchinson_word_search(ifs, center, args.radius, args.max_len)
    cert = hutchinson.certify_word(ifs, word, center, args.radius)
    out = {"word": "".join(str(s) for s in word), "length": len(word),
           "certificate": {"distance": cert.distance, "bound": cert.bound, "radius": cert.radius,
                           "holds": cert.holds}}
    _emit(_dumps(out), args.out)
    return EXIT_OK


COMMANDS = {"analyze": cmd_analyze, "omega": cmd_omega, "ifs": cmd_ifs, "wordsearch": cmd_wordsearch}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    except (ValueError, OSError) as exc:
        print(f"milnorbox: {exc}", file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except hutchinson.BudgetExhausted as exc:
        print(f"milnorbox: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except KeyError as exc:
        print(f"milnorbox: unknown name {exc.args[0] if exc.args else exc}", file=sys.stderr)
        return EXIT_INVALID
    except ValueError as exc:
        print(f"milnorbox: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
