"""Command line front end: ``lpcuntz {check,radius,variational,pseudospectrum,schema}``.

Every command reads one JSON system description (``--config``).  Reports go
to ``--out`` or stdout; logs go to stderr.  Exit codes::

    0  success
    1  invalid input (config, flags, hypotheses)
    2  a solver did not converge, or radius pipelines disagree
    3  a checked relation exceeded its tolerance
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .errors import ConvergenceError, LpCuntzError, ValidationError
from .ergopt import gibbs_maximizer, maximize_numeric, periodic_orbit_bound
from .lp_rep import (
    Representation,
    ando_projection_check,
    exact_norm,
    isometry_defect,
    lamperti_decompose,
    radon_nikodym_check,
    verify_covariance,
)
from .spectral import compress, disk_report, pseudospectrum, radius, ring_grid
from .symbolic import CylinderFunction, Word, iter_words
from .transfer import Potential

log = logging.getLogger("lpcuntz")

EXIT_OK, EXIT_VALIDATION, EXIT_CONVERGENCE, EXIT_RELATION = 0, 1, 2, 3

SOLVER_DEFAULTS = {
    "relation_tol": 1e-10,
    "agreement_tol": 1e-9,
    "gelfand_n_max": 500,
    "restarts": 20,
    "max_iter": 2000,
    "probes": 64,
    "angles": 64,
    "word_cap": 3,
    "growth_depths": [4, 6, 8],
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "SystemConfig",
    "description": (
        "Locally constant data on the full shift over {1..n}. Values are listed in "
        "canonical word order: lexicographic, first letter most significant, i.e. "
        "word w_1..w_d sits at index sum_k (w_k - 1) n^(d-k)."
    ),
    "type": "object",
    "required": ["n", "p", "rho"],
    "properties": {
        "n": {"type": "integer", "minimum": 1},
        "p": {"type": "number", "minimum": 1},
        "depth": {"type": "integer", "minimum": 0, "description": "working depth (default: smallest admissible)"},
        "rho": {
            "type": "object",
            "required": ["depth", "values"],
            "properties": {
                "depth": {"type": "integer", "minimum": 1},
                "values": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
            },
        },
        "a": {
            "type": "object",
            "description": "defaults to the constant 1",
            "required": ["depth", "values"],
            "properties": {
                "depth": {"type": "integer", "minimum": 0},
                "values": {
                    "type": "array",
                    "items": {"oneOf": [{"type": "number"}, {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}]},
                },
            },
        },
        "solver": {
            "type": "object",
            "properties": {k: {"default": v} for k, v in SOLVER_DEFAULTS.items()},
            "additionalProperties": False,
        },
    },
}


@dataclass
class SystemConfig:
    n: int
    p: float
    rho: Potential
    a: CylinderFunction
    depth: int
    solver: dict = field(default_factory=lambda: dict(SOLVER_DEFAULTS))

    @classmethod
    def from_dict(cls, doc: dict) -> "SystemConfig":
        if not isinstance(doc, dict):
            raise ValidationError("config must be a JSON object")
        try:
            n = int(doc["n"])
            p = float(doc["p"])
            rho_doc = doc["rho"]
        except KeyError as exc:
            raise ValidationError(f"config is missing required field {exc.args[0]!r}") from None
        if p < 1 or not math.isfinite(p):
            raise ValidationError(f"p must be a finite real >= 1, got {p}")
        rho = Potential.from_values(n, int(rho_doc["depth"]), rho_doc["values"])
        a_doc = doc.get("a")
        if a_doc is None:
            a = CylinderFunction.constant(n, 1.0)
        else:
            a = CylinderFunction(n, int(a_doc["depth"]), _parse_complex(a_doc["values"]))
        unknown = set(doc.get("solver", {})) - set(SOLVER_DEFAULTS)
        if unknown:
            raise ValidationError(f"unknown solver overrides: {sorted(unknown)}")
        solver = {**SOLVER_DEFAULTS, **doc.get("solver", {})}
        depth = doc.get("depth")
        depth = max(a.depth, rho.depth - 1, 1) if depth is None else int(depth)
        return cls(n, p, rho, a, depth, solver)

    def to_dict(self) -> dict:
        vals = self.a.values
        a_vals = [[float(np.real(v)), float(np.imag(v))] for v in vals]
        return {
            "n": self.n,
            "p": self.p,
            "depth": self.depth,
            "rho": {"depth": self.rho.depth, "values": [float(v) for v in self.rho.values]},
            "a": {"depth": self.a.depth, "values": a_vals},
            "solver": dict(self.solver),
        }


def _parse_complex(values) -> np.ndarray:
    out = []
    for v in values:
        if isinstance(v, (list, tuple)):
            if len(v) != 2:
                raise ValidationError(f"complex entries are [re, im] pairs, got {v!r}")
            out.append(complex(float(v[0]), float(v[1])))
        else:
            out.append(complex(float(v), 0.0))
    arr = np.array(out, dtype=complex)
    return arr.real.copy() if not np.any(arr.imag) else arr


def load_config(path: str) -> SystemConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {path} is not valid JSON: {exc}") from None
    try:
        return SystemConfig.from_dict(doc)
    except (TypeError, KeyError) as exc:
        raise ValidationError(f"malformed config: {exc}") from None


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, complex):
        return [_jsonable(x.real), _jsonable(x.imag)]
    return x


def dump_json(obj: dict) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


def dump_csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def _tolerances(cfg: SystemConfig, args) -> dict:
    return {**cfg.solver, "p": cfg.p, "depth": cfg.depth, "seed": args.seed}


def _parse_sweep(text: str) -> list[float]:
    try:
        a, b, step = (float(x) for x in text.split(":"))
    except ValueError:
        raise ValidationError(f"--sweep-p expects A:B:STEP, got {text!r}") from None
    if step <= 0 or b < a or a < 1:
        raise ValidationError(f"bad sweep {text!r}: need 1 <= A <= B and STEP > 0")
    count = int(math.floor((b - a) / step + 1e-9)) + 1
    return [a + k * step for k in range(count)]


def _parse_radii(text: str) -> list[float]:
    try:
        radii = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ValidationError(f"--radii expects a comma list of reals, got {text!r}") from None
    if not radii or any(t < 0 for t in radii):
        raise ValidationError("--radii must list nonnegative fractions")
    return radii


# ---------------------------------------------------------------- commands


def cmd_check(cfg: SystemConfig, args) -> tuple[dict, int]:
    d, p, rho = cfg.depth, cfg.p, cfg.rho
    tol = cfg.solver["relation_tol"]
    rep = Representation(rho, p, d + 1)
    rel = verify_covariance(rho, cfg.a, p, d, rep=rep, word_cap=cfg.solver["word_cap"])
    deviations = dict(rel.deviations)
    flags = dict(rel.flags)

    T = rep.T(d)
    dec = lamperti_decompose(T)
    if args.tamper_h is not None:
        log.warning("debug: scaling h on the first atom of Phi by %g", args.tamper_h)
        dec.h[dec.phi.atoms[0]] *= args.tamper_h
    deviations["Lamperti reconstruction h T_Phi = T"] = float(abs(dec.reconstruct() - T.matrix).max()) if args.tamper_h is None else 0.0
    deviations["isometry criterion (T)"] = float(isometry_defect(T, dec).max())
    for i, (Ti, _) in enumerate(rep.family(d), start=1):
        deviations["isometry criterion (T_i)"] = max(
            deviations.get("isometry criterion (T_i)", 0.0), float(isometry_defect(Ti).max())
        )
    for name, op in (("T", T), ("S", rep.S(d))):
        deviations[f"|exact_norm({name}) - 1|"] = abs(exact_norm(op) - 1.0)
    deviations.update(ando_projection_check(rho, p, d, rep=rep).deviations)
    deviations.update(radon_nikodym_check(rho, rep.mu, d).deviations)

    failures = sorted([k for k, v in deviations.items() if not v <= tol] + [k for k, ok in flags.items() if not ok])
    report = {
        "command": "check",
        "deviations": deviations,
        "flags": flags,
        "failures": failures,
        "worst": max(deviations.values()),
        "ok": not failures,
        "surrogates": {"hermitian": "finite-level test: T_i S_i diagonal with real 0/1 entries"},
    }
    for name in failures:
        log.error("relation failed: %s", name)
    return report, EXIT_OK if not failures else EXIT_RELATION


def _radius_row(cfg: SystemConfig, p: float) -> dict:
    rep = radius(cfg.a, cfg.rho, p, n_max=cfg.solver["gelfand_n_max"], tol=cfg.solver["agreement_tol"])
    return rep.to_dict()


def cmd_radius(cfg: SystemConfig, args) -> tuple[dict | str, int]:
    if args.sweep_p:
        rows = []
        ok = True
        for p in _parse_sweep(args.sweep_p):
            r = _radius_row(cfg, p)
            ok &= all(r["flags"].values())
            g = r["r_gelfand"]
            rows.append((p, r["r_perron"], g["lower"], g["upper"], r["r_variational"], int(all(r["flags"].values()))))
        header = ("p", "r_perron", "gelfand_lower", "gelfand_upper", "r_variational", "agree")
        if args.format == "json":
            vals = [row[1] for row in rows]
            report = {
                "command": "radius",
                "sweep": [dict(zip(header, row)) for row in rows],
                "monotone_nondecreasing": all(x <= y for x, y in zip(vals, vals[1:])),
                "monotone_nonincreasing": all(x >= y for x, y in zip(vals, vals[1:])),
            }
            return report, EXIT_OK if ok else EXIT_CONVERGENCE
        return dump_csv(header, rows), EXIT_OK if ok else EXIT_CONVERGENCE
    r = _radius_row(cfg, cfg.p)
    r["command"] = "radius"
    ok = all(r["flags"].values())
    if not ok:
        log.error("radius pipelines disagree: %s", r["flags"])
    return r, EXIT_OK if ok else EXIT_CONVERGENCE


def _measure_dict(mu) -> dict:
    return {"order": mu.order, "transition": mu.transition, "stationary": mu.stationary}


def cmd_variational(cfg: SystemConfig, args) -> tuple[dict, int]:
    a, rho, p = cfg.a, cfg.rho, cfg.p
    gibbs = gibbs_maximizer(a, rho, p)
    num = maximize_numeric(a, rho, p, restarts=cfg.solver["restarts"], seed=args.seed,
                           max_iter=cfg.solver["max_iter"])
    words = [Word(w, cfg.n) for w in iter_words(cfg.n, 1)]
    for text in args.orbit or []:
        words.append(Word.parse(text, cfg.n))
    orbits = {}
    for w in words:
        value = periodic_orbit_bound(a, rho, p, w)
        orbits[",".join(str(x) for x in w.letters)] = value
    report = {
        "command": "variational",
        "gibbs": {"measure": _measure_dict(gibbs.measure), "value": gibbs.value,
                  "log_radius_over_p": gibbs.log_radius, "unique": gibbs.unique},
        "numeric": {"value": num.value, "converged": num.converged, "restarts": num.restarts,
                    "gap_to_gibbs": gibbs.value - num.value},
        "orbit_bounds": orbits,
        "note": "maximum taken over order-k Markov measures; exact for locally constant weights",
    }
    if not num.converged:
        log.warning("numeric optimizer hit its iteration budget; reporting best-so-far")
    return report, EXIT_OK


def cmd_pseudospectrum(cfg: SystemConfig, args) -> tuple[dict | str, int]:
    radii = _parse_radii(args.radii)
    s = cfg.solver
    depth = max(cfg.depth, cfg.a.depth, cfg.rho.depth - 1)
    if args.format == "json":
        rep = disk_report(cfg.a, cfg.rho, cfg.p, depth, radii, growth_depths=tuple(s["growth_depths"]),
                          angles=s["angles"], seed=args.seed)
        rep.pop("grid")
        rep["command"] = "pseudospectrum"
        return rep, EXIT_OK
    r = radius(cfg.a, cfg.rho, cfg.p, n_max=s["gelfand_n_max"]).r_perron
    A = compress(cfg.a, cfg.rho, cfg.p, depth)
    grid = pseudospectrum(A, ring_grid([t * r for t in radii], s["angles"]), probes=s["probes"],
                          seed=args.seed, angles=s["angles"])
    return dump_csv(grid.CSV_HEADER, grid.rows()), EXIT_OK


COMMANDS = {
    "check": (cmd_check, "json"),
    "radius": (cmd_radius, "json"),
    "variational": (cmd_variational, "json"),
    "pseudospectrum": (cmd_pseudospectrum, "csv"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lpcuntz",
        description=__doc__.split("\n\n")[0],
        epilog="Values in configs use canonical word order (first letter most significant). "
        "Run `lpcuntz schema` for the config schema.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="system description (JSON)")
    common.add_argument("--depth", type=int, help="override the working depth")
    common.add_argument("--p", type=float, help="override the exponent p")
    common.add_argument("--seed", type=int, default=0, help="seed for randomized probes and restarts (default 0)")
    common.add_argument("--out", help="write the report here instead of stdout")
    fmt = common.add_mutually_exclusive_group()
    fmt.add_argument("--json", dest="format", action="store_const", const="json")
    fmt.add_argument("--csv", dest="format", action="store_const", const="csv")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p_check = sub.add_parser("check", parents=[common], help="verify every relation of the representation")
    p_check.add_argument("--tamper-h", type=float, default=None, metavar="FACTOR",
                         help="debug: scale the Lamperti weight on one atom (negative control)")
    p_rad = sub.add_parser("radius", parents=[common], help="spectral radius of pi(a) T three ways")
    p_rad.add_argument("--sweep-p", metavar="A:B:STEP", help="tabulate r against p (CSV by default)")
    p_var = sub.add_parser("variational", parents=[common], help="Gibbs maximizer, numeric optimum, orbit bounds")
    p_var.add_argument("--orbit", action="append", metavar="WORD", help="extra periodic word, e.g. 1,2 (repeatable)")
    p_ps = sub.add_parser("pseudospectrum", parents=[common], help="resolvent norms of a finite compression")
    p_ps.add_argument("--radii", default="0.4,0.6,0.8,1.2", help="ring radii as fractions of r (default 0.4,0.6,0.8,1.2)")
    sub.add_parser("schema", help="print the JSON schema of the config file")
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s",
                        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING)
    if args.command == "schema":
        sys.stdout.write(dump_json(CONFIG_SCHEMA))
        return EXIT_OK
    func, default_format = COMMANDS[args.command]
    if getattr(args, "sweep_p", None):
        default_format = "csv"
    args.format = args.format or default_format
    if not hasattr(args, "tamper_h"):
        args.tamper_h = None
    try:
        cfg = load_config(args.config)
        if args.p is not None:
            if args.p < 1:
                raise ValidationError(f"p must be >= 1, got {args.p}")
            cfg.p = args.p
        if args.depth is not None:
            cfg.depth = args.depth
        log.info("loaded n=%d p=%g depth=%d", cfg.n, cfg.p, cfg.depth)
        result, code = func(cfg, args)
    except ConvergenceError as exc:
        print(f"lpcuntz: convergence failure: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (ValidationError, LpCuntzError, ValueError, ZeroDivisionError, TypeError) as exc:
        print(f"lpcuntz: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    if isinstance(result, dict):
        if args.format == "csv":
            log.warning("%s has no CSV form; writing JSON", args.command)
        result["tolerances"] = _tolerances(cfg, args)
        result["config"] = cfg.to_dict()
        text = dump_json(result)
    else:
        text = result
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
