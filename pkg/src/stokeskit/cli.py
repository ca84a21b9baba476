"""Command-line front end.  Every subcommand prints one JSON report on stdout.

Exit codes: 0 success, 2 parse or usage error, 3 math-domain error,
4 validation failure.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import re
import sys
from fractions import Fraction

import numpy as np

from . import __version__
from .factors import render
from .formal import (DifferentialOperator, FormalError, FormalType, Operator, System,
                     formal_type, newton_polygon, ramification_order)
from .geometry import (Direction, GeometryError, Sector, stokes_curve,
                       stokes_diagram, stokes_directions)
from .numstokes import (IntegrationConfig, IntegrationError, monodromy_charpoly, numeric_monodromy,
                        stokes_matrices)
from .parsing import ParseError, parse_factor
from .sheafmodel import hom_shape, phi_exponential
from .stokesdata import (StokesDataError, Trivialization, extract_from_cover, glue_monodromy,
                         matrix_from_json, matrix_to_json, structure_from_json, validate)

EXIT_OK, EXIT_PARSE, EXIT_MATH, EXIT_INVALID = 0, 2, 3, 4


class ValidationFailure(Exception):
    def __init__(self, message: str, payload: dict):
        super().__init__(message)
        self.payload = payload


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_PARSE)


# -- input helpers -------------------------------------------------------------

_ANGLE = re.compile(r"^\s*([+-]?)\s*(\d*)\s*\*?\s*pi\s*(?:/\s*(\d+))?\s*$")


def parse_angle(text: str) -> Direction:
    """``0.5``, ``pi``, ``-pi/4``, ``3pi/2`` or ``3*pi/4``."""
    m = _ANGLE.match(text)
    if m:
        sign, num, den = m.groups()
        q = Fraction(int(num or 1), int(den or 1)) * (-1 if sign == "-" else 1)
        return Direction.from_pi(q)
    try:
        return Direction(float(text))
    except ValueError:
        raise ParseError(f"cannot read angle {text!r}", 0) from None


def _load_json(text: str):
    if os.path.exists(text):
        with open(text) as fh:
            text = fh.read()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", exc.pos) from None


def _connection(args):
    if getattr(args, "op", None):
        return Operator(DifferentialOperator.parse(args.op))
    if getattr(args, "system", None):
        rows = _load_json(args.system)
        if not isinstance(rows, list) or not all(isinstance(r, list) for r in rows):
            raise ParseError("--system expects a JSON matrix of expression strings", 0)
        return System.from_strings(rows)
    raise ParseError("one of --op or --system is required", 0)


def _formal_json(F: FormalType) -> dict:
    return {"rank": F.rank, "ramification": F.ramification,
            "items": [{"factor": render(it.factor), "rank": it.rank,
                       "exponents": [[z.real, z.imag] for z in it.exponents]}
                      for it in F.items]}


def _complex_list(v) -> list:
    return [[float(z.real), float(z.imag)] for z in np.asarray(v, dtype=complex).ravel()]


# -- subcommands ------------------------------------------------------------

def cmd_lines(args):
    dirs = stokes_directions(parse_factor(args.delta))
    return {"directions": [round(d.theta, 10) for d in dirs], "exact": [d.label() for d in dirs]}


def cmd_curves(args):
    delta = parse_factor(args.delta)
    if not 0 < args.rho_min < args.rho_max:
        raise ValueError("need 0 < rho-min < rho-max")
    grid = np.geomspace(args.rho_min, args.rho_max, args.points)
    curves = stokes_curve(delta, grid)
    dirs = stokes_directions(delta)
    if args.svg:
        write_svg(args.svg, curves, [d.theta for d in dirs], args.rho_max)
    return {"directions": [d.theta for d in dirs], "exact": [d.label() for d in dirs],
            "curves": [[[r, t] for r, t in c] for c in curves], "svg": args.svg}


def write_svg(path: str, curves, lines, radius: float) -> None:
    """SVG 1.1: one polyline per curve, one ray per line, viewBox = disc bounding box."""
    R = radius
    out = ['<?xml version="1.0" encoding="UTF-8"?>',
           f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
           f'viewBox="{-R!r} {-R!r} {2 * R!r} {2 * R!r}">',
           f'<circle cx="0" cy="0" r="{R!r}" fill="none" stroke="#999" stroke-width="{R / 400!r}"/>']
    for k, th in enumerate(lines):
        x, y = R * math.cos(th), -R * math.sin(th)
        out.append(f'<line class="stokes-line" id="line-{k}" x1="0" y1="0" x2="{x!r}" y2="{y!r}" '
                   f'stroke="#c33" stroke-width="{R / 300!r}"/>')
    for k, c in enumerate(curves):
        pts = " ".join(f"{r * math.cos(t)!r},{-r * math.sin(t)!r}" for r, t in c)
        out.append(f'<polyline class="stokes-curve" id="curve-{k}" points="{pts}" fill="none" '
                   f'stroke="#236" stroke-width="{R / 300!r}"/>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")


def cmd_sectors(args):
    factors = [parse_factor(s) for s in args.factors.split(",")]
    D = stokes_diagram(factors, rho_max=args.rho_max)
    res = D.to_json()
    res["overlaps"] = [S.to_json() for S in D.overlaps]
    return res


def cmd_homshape(args):
    factors = [parse_factor(s) for s in args.factors.split(",")]
    parts = args.sector.split(",")
    if len(parts) != 2:
        raise ParseError("--sector expects lo,hi", 0)
    lo, hi = (parse_angle(p) for p in parts)
    return hom_shape(factors, Sector(lo.theta, hi.theta)).to_json()


def cmd_formal(args):
    C = _connection(args)
    res = _formal_json(formal_type(C))
    if isinstance(C, Operator):
        poly = newton_polygon(C.op)
        res["slopes"] = [str(s) for s, _ in poly.slopes]
        res["newton_ramification"] = ramification_order(poly.slopes)
    return res


def cmd_phi(args):
    return phi_exponential(parse_factor(args.factor)).to_json()


def cmd_glue(args):
    S = structure_from_json(_load_json(args.structure))
    bad = validate(S)
    if bad:
        raise ValidationFailure("invalid Stokes structure", {"violations": bad})
    M = glue_monodromy(S, check=False)
    return {"valid": True, "monodromy": matrix_to_json(M), "charpoly": _complex_list(np.poly(M))}


def cmd_extract(args):
    obj = _load_json(args.cover)
    F = FormalType.from_json(obj["formal"])
    trivs = [Trivialization(k + 1, matrix_from_json(m)) for k, m in enumerate(obj["trivializations"])]
    closing = obj.get("closing")
    try:
        S = extract_from_cover(trivs, F, None if closing is None else matrix_from_json(closing))
    except StokesDataError as exc:
        raise ValidationFailure(str(exc), {"violations": exc.violations}) from None
    return S.to_json()


def _config(args) -> IntegrationConfig:
    return IntegrationConfig(rtol=args.tol, atol=args.tol * 1e-2, rho_seed=args.rho_seed,
                             n_asym=args.n_asym, rho_match=args.rho_match)


def cmd_stokes(args):
    C = _connection(args)
    diag: dict = {}
    try:
        S = stokes_matrices(C, _config(args), diagnostics=diag)
    except StokesDataError as exc:
        raw = [matrix_to_json(A) for A in (exc.raw or [])]
        raise ValidationFailure(str(exc), {"violations": exc.violations, "raw": raw}) from None
    res = S.to_json()
    res["monodromy"] = matrix_to_json(glue_monodromy(S, check=False))
    args._diagnostics = {"raw": [matrix_to_json(A) for A in diag.get("raw", [])],
                         "off_shape": diag.get("off_shape"), "rho_seed": diag.get("rho_seed"),
                         "rho_match": diag.get("rho_match")}
    return res


def cmd_monodromy(args):
    C = _connection(args)
    cfg = IntegrationConfig(rtol=args.tol, atol=args.tol * 1e-2)
    M = numeric_monodromy(C, args.rho, cfg)
    return {"monodromy": matrix_to_json(M), "eigenvalues": _complex_list(np.linalg.eigvals(M)),
            "charpoly": _complex_list(monodromy_charpoly(C, args.rho, cfg))}


# -- driver -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="stokeskit", description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=0, help="seed for any randomized step")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("lines", help="Stokes directions of a difference of factors")
    s.add_argument("--delta", required=True)
    s.set_defaults(func=cmd_lines)

    s = sub.add_parser("curves", help="Stokes curves, optionally drawn as SVG")
    s.add_argument("--delta", required=True)
    s.add_argument("--rho-min", type=float, default=1e-4)
    s.add_argument("--rho-max", type=float, default=0.1)
    s.add_argument("--points", type=int, default=200)
    s.add_argument("--svg")
    s.set_defaults(func=cmd_curves)

    s = sub.add_parser("sectors", help="Stokes lines and sector cover of a list of factors")
    s.add_argument("--factors", required=True)
    s.add_argument("--rho-max", type=float, default=1.0)
    s.set_defaults(func=cmd_sectors)

    s = sub.add_parser("homshape", help="Hom shape of a list of factors over a sector")
    s.add_argument("--factors", required=True)
    s.add_argument("--sector", required=True, help="lo,hi (numbers or multiples of pi)")
    s.set_defaults(func=cmd_homshape)

    for name, func, help_ in (("formal", cmd_formal, "formal decomposition"),
                              ("stokes", cmd_stokes, "numerical Stokes matrices"),
                              ("monodromy", cmd_monodromy, "numerical monodromy on a circle")):
        s = sub.add_parser(name, help=help_)
        g = s.add_mutually_exclusive_group(required=True)
        g.add_argument("--op")
        g.add_argument("--system", help="JSON matrix of expression strings, or a file")
        if name != "formal":
            s.add_argument("--tol", type=float, default=1e-10)
        if name == "stokes":
            s.add_argument("--rho-seed", type=float)
            s.add_argument("--rho-match", type=float)
            s.add_argument("--n-asym", type=int, default=IntegrationConfig.n_asym)
        if name == "monodromy":
            s.add_argument("--rho", type=float, default=1.0)
        s.set_defaults(func=func)

    s = sub.add_parser("phi", help="cohomology description for E^phi")
    s.add_argument("--factor", required=True)
    s.set_defaults(func=cmd_phi)

    s = sub.add_parser("glue", help="validate a Stokes structure and glue its monodromy")
    s.add_argument("--structure", required=True, help="JSON text or file")
    s.set_defaults(func=cmd_glue)

    s = sub.add_parser("extract", help="Stokes structure from sectorial trivializations")
    s.add_argument("--cover", required=True, help="JSON text or file")
    s.set_defaults(func=cmd_extract)
    return p


_VALUE_FLAGS = {"--delta", "--factor", "--factors", "--sector", "--op", "--system"}


def _glue_values(argv):
    """Attach values such as ``-pi/4,pi/4`` or ``-1/x`` to their flag so argparse keeps them."""
    out, i = [], 0
    while i < len(argv):
        tok = argv[i]
        if tok in _VALUE_FLAGS and i + 1 < len(argv) and argv[i + 1].startswith("-"):
            out.append(f"{tok}={argv[i + 1]}")
            i += 2
            continue
        out.append(tok)
        i += 1
    return out


def run(argv=None, stdout=None) -> int:
    stdout = stdout or sys.stdout
    parser = build_parser()
    argv = _glue_values(list(sys.argv[1:] if argv is None else argv))
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    np.random.seed(args.seed)
    inputs = {k: v for k, v in vars(args).items() if k not in ("func",) and not k.startswith("_")}
    report = {"command": args.command, "version": __version__, "inputs": inputs}
    code = EXIT_OK
    try:
        report["results"] = args.func(args)
        report["diagnostics"] = getattr(args, "_diagnostics", {})
    except ValidationFailure as exc:
        code = EXIT_INVALID
        report["error"] = {"kind": "validation", "message": str(exc), **exc.payload}
    except ParseError as exc:
        code = EXIT_PARSE
        report["error"] = {"kind": "parse", "message": str(exc),
                           "position": getattr(exc, "position", None)}
    except KeyError as exc:
        code = EXIT_PARSE
        report["error"] = {"kind": "parse", "message": f"missing field {exc}", "position": None}
    except StokesDataError as exc:
        code = EXIT_INVALID
        report["error"] = {"kind": "validation", "message": str(exc), "violations": exc.violations}
    except (FormalError, GeometryError, IntegrationError, ArithmeticError,
            ValueError, KeyError) as exc:
        code = EXIT_MATH
        report["error"] = {"kind": "math", "message": str(exc), "type": type(exc).__name__}
    json.dump(report, stdout, sort_keys=False)
    stdout.write("\n")
    if code:
        print(report["error"]["message"], file=sys.stderr)
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
