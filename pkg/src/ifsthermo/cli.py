"""Batch front-end: ``ifsthermo <command> --config run.yaml [--out DIR] [--threads N]``.

Every command writes ``<command>.json`` (plus a CSV for grids and curves)
into the output directory.  JSON floats use the shortest round-trip
representation; non-finite values are written as the strings "inf"/"nan".

Exit codes: 0 success, 2 invalid configuration or input, 3 convergence
failure, 4 resource cap exceeded.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from . import __version__
from .critical import beta_critical, rho_curve
from .discrete import DiscreteMeasure
from .errors import (
    ConvergenceError,
    GridResolutionError,
    IfsThermoError,
    InconsistencyError,
    InvalidInputError,
    NumericalInstabilityError,
    ResourceError,
)
from .ifs import IFS, AffineMap, attractor_grid, branch_sets, check_escape_condition, preset
from .kms import (
    Algebra,
    RegimeTag,
    classify_regime,
    critical_state,
    extreme_points,
    finite_type_state,
    subcritical_diagnostic,
    verify_K1_K2,
)
from .potential import AffinePotential, ConstantPotential, PotentialFamily
from .ruelle import RuelleEngine, default_depth, rpf
from .suite import default_suite

COMMANDS = ("attractor", "branch", "rho-curve", "beta-c", "rpf", "kms-state", "kms-verify",
            "diagnose-subcritical")

EXIT_OK, EXIT_INVALID, EXIT_CONVERGENCE, EXIT_RESOURCE = 0, 2, 3, 4


def load_schema() -> dict:
    return json.loads(resources.files("ifsthermo").joinpath("config_schema.json").read_text())


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = yaml.safe_load(fh)
    except (OSError, yaml.YAMLError) as exc:
        raise InvalidInputError(f"cannot read config {path}: {exc}") from None
    validate_config(cfg)
    return cfg


def validate_config(cfg) -> None:
    try:
        jsonschema.validate(cfg, load_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise InvalidInputError(f"config error at {where}: {exc.message}") from None


def config_hash(cfg: dict) -> str:
    canonical = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def jsonable(obj):
    """Plain JSON types with non-finite floats spelled out."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def dumps(payload: dict) -> str:
    return json.dumps(jsonable(payload), indent=2, allow_nan=False) + "\n"


def build_ifs(desc) -> IFS:
    if isinstance(desc, str):
        return preset(desc)
    maps = [AffineMap.create(m["matrix"], m["offset"], m.get("contraction_factor"))
            for m in desc["maps"]]
    return IFS(maps, desc.get("ambient_diameter"), desc.get("name"))


def build_potentials(desc) -> PotentialFamily:
    if desc is None:
        raise InvalidInputError("this command needs 'potentials'")
    if all(isinstance(v, (int, float)) for v in desc):
        return PotentialFamily.constant(*desc)
    out = []
    for p in desc:
        if p["kind"] == "constant":
            out.append(ConstantPotential(float(p["value"])))
        else:
            out.append(AffinePotential(np.atleast_1d(np.asarray(p["gradient"], dtype=float)),
                                       float(p["offset"])))
    return PotentialFamily(out)


def parse_beta(value) -> float:
    return math.inf if isinstance(value, str) else float(value)


class Run:
    """Lazily built objects shared by the commands of one config."""

    def __init__(self, cfg: dict, threads: int | None = None):
        self.cfg = cfg
        self.solver = cfg.get("solver", {})
        self.threads = cfg.get("threads", 1) if threads is None else threads
        self.ifs = build_ifs(cfg["ifs"])
        self._grid = self._engine = self._crit = None

    @property
    def grid(self):
        if self._grid is None:
            g = self.cfg.get("grid", {})
            depth = g.get("depth", default_depth(self.ifs.d))
            self._grid = attractor_grid(self.ifs, depth, g.get("base_point"), g.get("dedup_tol"))
        return self._grid

    @property
    def branch_tol(self) -> float:
        return self.solver.get("branch_tol", 1e-9)

    @property
    def engine(self) -> RuelleEngine:
        if self._engine is None:
            H = build_potentials(self.cfg.get("potentials"))
            opts = {"branch_tol": self.branch_tol}
            if "compat_tol" in self.solver:
                opts["compat_tol"] = self.solver["compat_tol"]
            self._engine = RuelleEngine(self.ifs, H, self.grid, **opts)
        return self._engine

    @property
    def power_opts(self) -> dict:
        return {k: self.solver[k] for k in ("rtol", "max_iter") if k in self.solver}

    @property
    def crit(self):
        if self._crit is None:
            self._crit = beta_critical(self.engine, tol=self.solver.get("beta_tol", 1e-8),
                                       **self.power_opts)
        return self._crit

    def beta(self) -> float:
        if "beta" not in self.cfg:
            raise InvalidInputError("this command needs 'beta'")
        return parse_beta(self.cfg["beta"])

    def betas(self) -> list:
        b = self.cfg.get("betas")
        if b is None:
            raise InvalidInputError("this command needs 'betas'")
        if isinstance(b, dict):
            return np.linspace(b["start"], b["stop"], b["num"]).tolist()
        return list(b)

    def kms_opts(self) -> dict:
        return self.cfg.get("kms", {})

    def suite(self):
        k = self.kms_opts()
        return default_suite(self.grid, self.engine.branch, k.get("n_random", 10), k.get("suite_seed", 0))


def cmd_attractor(run: Run, out: Path) -> dict:
    grid = run.grid
    grid.to_csv(out / "attractor.csv")
    return {"n_points": len(grid), "depth": grid.depth, "base_point": grid.base,
            "dedup_tol": grid.dedup_tol, "error_bound": grid.error_bound,
            "ifs": run.ifs.to_dict(), "csv": "attractor.csv"}


def cmd_branch(run: Run, out: Path) -> dict:
    branch = branch_sets(run.ifs, run.grid, run.branch_tol)
    cert = check_escape_condition(run.ifs, branch, tol=run.branch_tol)
    return {**branch.to_dict(), "escape": cert.to_dict()}


def cmd_rho_curve(run: Run, out: Path) -> dict:
    curve = rho_curve(run.engine, run.betas(), threads=run.threads, **run.power_opts)
    curve.to_csv(out / "rho_curve.csv")
    return {**curve.to_dict(), "csv": "rho_curve.csv"}


def cmd_beta_c(run: Run, out: Path) -> dict:
    return {**run.crit.to_dict(), "regularity": run.engine.regularity}


def cmd_rpf(run: Run, out: Path) -> dict:
    beta = run.beta() if "beta" in run.cfg else run.crit.beta_c
    return rpf(run.engine, beta, **run.power_opts).to_dict()


def _seed(run: Run, regime, algebra) -> DiscreteMeasure:
    desc = run.kms_opts().get("seed")
    tol = run.grid.dedup_tol
    if desc is None:
        ext = extreme_points(algebra, run.engine.branch, run.grid, regime)
        if ext.points.shape[0] == 0:
            raise InvalidInputError(f"no default seed: {ext.annotation}")
        return DiscreteMeasure.delta(ext.points[0], tol=tol)
    pts = np.asarray(desc["points"], dtype=float).reshape(len(desc["points"]), -1)
    w = np.asarray(desc.get("weights", [1.0] * len(pts)), dtype=float)
    if w.size != len(pts) or w.sum() <= 0:
        raise InvalidInputError("seed weights must match the points and have positive sum")
    return DiscreteMeasure(pts, w / w.sum(), tol)


def _state(run: Run):
    k = run.kms_opts()
    algebra = Algebra.parse(k.get("algebra", "toeplitz"))
    beta = run.beta()
    escape = check_escape_condition(run.ifs, run.engine.branch, tol=run.branch_tol)
    regime = classify_regime(beta, run.crit, k.get("band"), escape)
    ext = extreme_points(algebra, run.engine.branch, run.grid, regime)
    result = {"regime": regime.to_dict(), "escape": escape.to_dict(),
              "extreme_points": {"kind": ext.kind, "annotation": ext.annotation,
                                 "count": int(ext.points.shape[0])}}
    if regime.tag is RegimeTag.SUPERCRITICAL:
        state = finite_type_state(run.engine, beta, _seed(run, regime, algebra),
                                  k.get("series_tol", 1e-10), algebra, crit=run.crit,
                                  band=k.get("band"))
    elif regime.tag is RegimeTag.CRITICAL:
        sol = rpf(run.engine, run.crit.beta_c, **run.power_opts)
        state = critical_state(run.engine, sol, algebra)
    else:
        state = None
    return state, result


def cmd_kms_state(run: Run, out: Path) -> dict:
    state, result = _state(run)
    result["state"] = None if state is None else state.to_dict()
    return result


def cmd_kms_verify(run: Run, out: Path) -> dict:
    state, result = _state(run)
    if state is None:
        result["verdict"] = None
        return result
    verdict = verify_K1_K2(run.engine, state, run.suite(), run.kms_opts().get("tol", 1e-4))
    result["state_summary"] = {"type": state.type, "atoms": len(state.measure),
                               "normalization": state.normalization,
                               "truncation_depth": state.truncation_depth,
                               "tail_bound": state.tail_bound}
    result["verdict"] = verdict.to_dict()
    return result


def cmd_diagnose_subcritical(run: Run, out: Path) -> dict:
    d = run.cfg.get("diagnostic", {})
    beta = run.beta()
    if math.isinf(beta):
        raise InvalidInputError("the subcritical diagnostic needs a finite beta")
    report = subcritical_diagnostic(run.engine, beta, d.get("depth", 16), d.get("point"))
    return report.to_dict()


HANDLERS = {
    "attractor": cmd_attractor,
    "branch": cmd_branch,
    "rho-curve": cmd_rho_curve,
    "beta-c": cmd_beta_c,
    "rpf": cmd_rpf,
    "kms-state": cmd_kms_state,
    "kms-verify": cmd_kms_verify,
    "diagnose-subcritical": cmd_diagnose_subcritical,
}


def run(cfg: dict, command: str, out, threads: int | None = None) -> Path:
    """Execute one command and write ``<command>.json``; returns its path."""
    if command not in HANDLERS:
        raise InvalidInputError(f"unknown command {command!r}")
    validate_config(cfg)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    result = HANDLERS[command](Run(cfg, threads), out)
    payload = {"command": command, "version": __version__, "config_hash": config_hash(cfg),
               "result": result}
    path = out / f"{command.replace('-', '_')}.json"
    path.write_text(dumps(payload))
    return path


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, (ResourceError, GridResolutionError, MemoryError)):
        return EXIT_RESOURCE
    if isinstance(exc, (ConvergenceError, NumericalInstabilityError, InconsistencyError)):
        return EXIT_CONVERGENCE
    return EXIT_INVALID


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="ifsthermo", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="YAML run configuration")
    parser.add_argument("--out", default=None, help="output directory (default: config 'out' or .)")
    parser.add_argument("--threads", type=int, default=None, help="worker threads, 0 = auto")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    args = parser.parse_args(argv)
    if args.threads is not None and args.threads < 0:
        parser.error("--threads must be >= 0")
    try:
        cfg = load_config(args.config)
        out = args.out or cfg.get("out", ".")
        path = run(cfg, args.command, out, args.threads)
    except (IfsThermoError, ValueError, MemoryError) as exc:
        print(f"ifsthermo {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exit_code(exc)
    print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
