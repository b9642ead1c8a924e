"""Command-line front end: configuration, orchestration, persistence, reports.

One JSON config document drives every subcommand; the exit-code contract is
part of the interface: 0 success, 1 unexpected failure or non-convergence,
2 configuration problem (detected before any compute), 3 the coupling sits in
the non-existence regime (energy diverged below the floor), 4 a requested
check failed on otherwise valid output.
"""

from __future__ import annotations

import argparse
import csv
import json
import re
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .blowup import (SweepRecord, energy_limit_check, gn_sequence_check,
                     save_sweep, sweep, sweep_plot_columns)
from .energy import (_unconstrained_gradient, energy, gn_quotient,
                     scaled_energy_identity_check)
from .field import (Field, bilap_energy, gaussian_mixture_field, l2_norm_sq,
                    l2_norm_sq_spectral, random_smooth_field, write_snapshot)
from .gn import compute_gn, load_gn, save_gn
from .grid import Grid, make_grid, quadrature
from .groundstate import (InitSpec, SolveConfig, SolveStatus, solve,
                          write_iteration_log)
from .potentials import ess_inf, potential_from_config

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_WITNESS = 3
EXIT_CHECK = 4

_ASTAR_RE = re.compile(r"^\s*([-+0-9.eE]+)\s*\*\s*astar\s*$")


class ConfigError(ValueError):
    """Configuration rejected before any compute ran."""


# ---------------------------------------------------------------------------
# config loading & validation


def _as_int(obj, key, default=None, minimum=None):
    val = obj.get(key, default)
    if val is None:
        raise ConfigError(f"missing integer field {key!r}")
    if isinstance(val, bool) or not isinstance(val, (int, float)) or int(val) != val:
        raise ConfigError(f"field {key!r} must be an integer, got {val!r}")
    val = int(val)
    if minimum is not None and val < minimum:
        raise ConfigError(f"field {key!r} must be >= {minimum}, got {val}")
    return val


def _as_float(obj, key, default=None):
    val = obj.get(key, default)
    if val is None:
        raise ConfigError(f"missing numeric field {key!r}")
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"field {key!r} must be a number, got {val!r}")
    return float(val)


def load_config(path) -> dict:
    """Parse the JSON config document; malformed input is a ConfigError."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ConfigError("config root must be a JSON object")
    return obj


def _build_grid(cfg: dict) -> Grid:
    block = cfg.get("grid")
    if not isinstance(block, dict):
        raise ConfigError("config needs a 'grid' object with d, n, half_width")
    try:
        return make_grid(_as_int(block, "d", minimum=1),
                         _as_int(block, "n", minimum=1),
                         _as_float(block, "half_width"))
    except ValueError as exc:
        raise ConfigError(f"invalid grid: {exc}") from exc


def _build_potential(cfg: dict, d: int):
    block = cfg.get("potential", {"family": "zero"})
    try:
        return potential_from_config(block, d)
    except ValueError as exc:
        raise ConfigError(f"invalid potential: {exc}") from exc


def _build_solver(cfg: dict) -> SolveConfig:
    block = cfg.get("solver", {})
    if not isinstance(block, dict):
        raise ConfigError("'solver' must be an object")
    defaults = SolveConfig()
    init_block = block.get("init", {})
    if not isinstance(init_block, dict):
        raise ConfigError("'solver.init' must be an object")
    known_init = {"kind", "width", "path", "ell"}
    extra = set(init_block) - known_init
    if extra:
        raise ConfigError(f"unknown solver.init fields {sorted(extra)}")
    di = InitSpec()
    known = {"step0", "shrink", "grow", "tol_grad", "max_iters",
             "energy_floor", "precondition", "init"}
    extra = set(block) - known
    if extra:
        raise ConfigError(f"unknown solver fields {sorted(extra)}")
    try:
        init = InitSpec(kind=str(init_block.get("kind", di.kind)),
                        width=_as_float(init_block, "width", di.width),
                        path=str(init_block.get("path", di.path)),
                        ell=_as_float(init_block, "ell", di.ell))
        return SolveConfig(
            step0=_as_float(block, "step0", defaults.step0),
            shrink=_as_float(block, "shrink", defaults.shrink),
            grow=_as_float(block, "grow", defaults.grow),
            tol_grad=_as_float(block, "tol_grad", defaults.tol_grad),
            max_iters=_as_int(block, "max_iters", defaults.max_iters),
            energy_floor=_as_float(block, "energy_floor", defaults.energy_floor),
            precondition=bool(block.get("precondition", defaults.precondition)),
            init=init,
        )
    except ValueError as exc:
        raise ConfigError(f"invalid solver config: {exc}") from exc


def _parse_coupling(spec):
    """A literal number, or 'f*astar' to resolve against the GN artifact.

    Returns (literal_value, astar_factor): exactly one is not None.
    """
    if isinstance(spec, bool):
        raise ConfigError("coupling must be a number or 'f*astar' string")
    if isinstance(spec, (int, float)):
        if spec < 0:
            raise ConfigError("coupling must be nonnegative")
        return float(spec), None
    if isinstance(spec, str):
        m = _ASTAR_RE.match(spec)
        if not m:
            raise ConfigError(f"cannot parse coupling {spec!r}; "
                              "use a number or 'f*astar'")
        return None, float(m.group(1))
    raise ConfigError("coupling must be a number or 'f*astar' string")


class RunConfig:
    """Validated run configuration; construction performs every check that
    does not require compute (grids, potential family, solver numbers,
    schedule geometry, coupling syntax)."""

    def __init__(self, raw: dict, command: str, overrides: dict):
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
        self.raw = raw
        self.command = command
        self.grid = _build_grid(raw)
        self.potential = _build_potential(raw, self.grid.d)
        self.solver = _build_solver(raw)
        seed = overrides.get("seed")
        self.seed = _as_int(raw, "seed", 0) if seed is None else int(seed)
        threads = overrides.get("threads")
        self.threads = (_as_int(raw, "threads", 1, minimum=1)
                        if threads is None else max(1, int(threads)))
        out = overrides.get("output") or raw.get("output_dir", "run")
        if not isinstance(out, (str, Path)):
            raise ConfigError("output_dir must be a path string")
        self.output_dir = Path(out)

        gn_block = raw.get("gn", {})
        if not isinstance(gn_block, dict):
            raise ConfigError("'gn' must be an object")
        self.gn_restarts = _as_int(gn_block, "restarts", 4, minimum=1)
        artifact = gn_block.get("artifact")
        self.gn_artifact = Path(artifact) if artifact else self.output_dir / "gn"

        if command == "solve":
            block = raw.get("solve")
            if not isinstance(block, dict) or "a" not in block:
                raise ConfigError("solve needs a 'solve' object with "
                                  "a coupling 'a'")
            self.coupling_literal, self.coupling_factor = _parse_coupling(
                block["a"])

        if command == "sweep":
            block = raw.get("sweep")
            if not isinstance(block, dict):
                raise ConfigError("sweep needs a 'sweep' object with "
                                  "start, count, ratio")
            start = _as_float(block, "start", 0.5)
            ratio = _as_float(block, "ratio", 0.5)
            count = _as_int(block, "count", 8, minimum=1)
            if not 0.0 < start < 1.0:
                raise ConfigError("sweep.start is 1 - a/a* of the first "
                                  "record and must lie in (0, 1); couplings "
                                  "at or above astar do not exist")
            if not 0.0 < ratio < 1.0:
                raise ConfigError("sweep.ratio must lie in (0, 1) so the "
                                  "schedule climbs toward astar")
            self.sweep_deltas = [start * ratio**k for k in range(count)]
            checks = block.get("checks", {})
            if not isinstance(checks, dict):
                raise ConfigError("'sweep.checks' must be an object")
            self.check_h2_final = checks.get("h2_final", 0.05)
            self.check_gn_window = bool(checks.get("gn_window", True))
            self.check_monotone_gap = bool(checks.get("monotone_gap", True))
            self.check_energy_gap_tol = checks.get("energy_gap_tol")
            for key, val in (("h2_final", self.check_h2_final),
                             ("energy_gap_tol", self.check_energy_gap_tol)):
                if val is not None and (isinstance(val, bool)
                                        or not isinstance(val, (int, float))
                                        or val <= 0):
                    raise ConfigError(f"sweep.checks.{key} must be a positive "
                                      "number or null")

        if command == "check":
            block = raw.get("check", {})
            if not isinstance(block, dict):
                raise ConfigError("'check' must be an object")
            self.check_fields = _as_int(block, "fields", 20, minimum=1)
            self.check_directions = _as_int(block, "directions", 20, minimum=1)
            self.check_battery = _as_int(block, "battery", 200, minimum=1)


# ---------------------------------------------------------------------------
# manifests and small report helpers


def _write_manifest(cfg: RunConfig, outputs: list) -> None:
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": cfg.command,
        "version": __version__,
        "seed": cfg.seed,
        "threads": cfg.threads,
        "config": cfg.raw,
        "outputs": [str(p) for p in outputs],
    }
    (cfg.output_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _load_gn_artifact(cfg: RunConfig, out):
    try:
        result = load_gn(cfg.gn_artifact)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: cannot load GN artifact at {cfg.gn_artifact}: {exc}\n"
              "run the 'gn' command first (or point gn.artifact at an "
              "existing result)", file=out)
        return None
    gq = result.Q.grid
    g = cfg.grid
    if (gq.d, gq.n, gq.half_width) != (g.d, g.n, g.half_width):
        print(f"error: GN artifact grid (d={gq.d} n={gq.n} "
              f"half_width={gq.half_width}) does not match the config grid "
              f"(d={g.d} n={g.n} half_width={g.half_width}); regenerate with "
              "the 'gn' command", file=out)
        return None
    return result


# ---------------------------------------------------------------------------
# subcommands


def cmd_gn(cfg: RunConfig, out=sys.stdout) -> int:
    try:
        result = compute_gn(cfg.grid, cfg=cfg.solver, restarts=cfg.gn_restarts,
                            seed=cfg.seed, threads=cfg.threads)
    except RuntimeError as exc:
        print(f"error: {exc}", file=out)
        return EXIT_FAIL
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    base = cfg.output_dir / "gn"
    save_gn(result, base)
    print(f"a_star = {result.a_star:.12g}", file=out)
    print(f"quotient_residual = {result.quotient_residual:.3e}", file=out)
    print(f"nonlinear_check = {result.nonlinear_check:.12g}", file=out)
    c1, c2 = result.el_constants
    print(f"el_constants = ({c1:.9g}, {c2:.9g})", file=out)
    print("resolution cross-check:", file=out)
    for n, val in result.resolutions:
        print(f"  n={n:6d}  quotient={val:.12g}", file=out)
    _write_manifest(cfg, [base.with_suffix(".bhf"), base.with_suffix(".json")])
    return EXIT_OK


def cmd_solve(cfg: RunConfig, out=sys.stdout) -> int:
    profile = None
    if cfg.coupling_factor is not None or cfg.solver.init.kind == "dilated_Q":
        gn = _load_gn_artifact(cfg, out)
        if gn is None:
            return EXIT_CONFIG
        profile = gn.Q
        a = (cfg.coupling_literal if cfg.coupling_factor is None
             else cfg.coupling_factor * gn.a_star)
    else:
        a = cfg.coupling_literal
    result = solve(cfg.grid, cfg.potential, a, cfg.solver, profile=profile)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    snap = cfg.output_dir / "solve.bhf"
    write_snapshot(result.minimizer, snap)
    log = cfg.output_dir / "iterations.csv"
    write_iteration_log(result, log)
    bd = result.breakdown
    summary = {
        "a": a,
        "status": result.status.value,
        "energy": bd.total,
        "kinetic": bd.kinetic,
        "potential": bd.potential,
        "nonlinear": bd.nonlinear,
        "mu": result.mu,
        "grad_residual": result.grad_residual,
        "iterations": result.iterations,
        "init": result.init_label,
    }
    report = cfg.output_dir / "solve.json"
    report.write_text(json.dumps(summary, indent=2) + "\n")
    print(f"status = {result.status.value}", file=out)
    print(f"a = {a:.12g}", file=out)
    print(f"energy = {bd.total:.12g}", file=out)
    print(f"grad_residual = {result.grad_residual:.3e} "
          f"after {result.iterations} iterations", file=out)
    _write_manifest(cfg, [snap, log, report])
    if result.status is SolveStatus.DIVERGED_BELOW_FLOOR:
        print("energy fell below the floor: no minimizer exists at this "
              "coupling", file=out)
        return EXIT_WITNESS
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, out=sys.stdout) -> int:
    gn = _load_gn_artifact(cfg, out)
    if gn is None:
        return EXIT_CONFIG
    schedule = [gn.a_star * (1.0 - d)
                for d in sorted(cfg.sweep_deltas, reverse=True)]
    records = sweep(cfg.grid, cfg.potential, schedule, cfg.solver, gn)
    csv_path = save_sweep(records, cfg.output_dir)
    outputs = [csv_path]
    print(f"wrote {csv_path} with {len(records)} records", file=out)

    resolved = [r for r in records if r.resolved]
    print(f"resolved records: {len(resolved)}/{len(records)}", file=out)
    failures = []
    if not resolved:
        print("check FAIL: no resolved records -- the concentration scale "
              "fell below 4 grid nodes everywhere; increase grid.n (or widen "
              "the schedule away from astar)", file=out)
        _write_manifest(cfg, outputs)
        return EXIT_CHECK

    floor = ess_inf(cfg.potential, cfg.grid)
    gaps = [abs(r.energy - floor) for r in resolved]
    print("  1-a/a*      energy        gap     eps      h2_dist  status",
          file=out)
    for r in resolved:
        print(f"  {1.0 - r.a / gn.a_star:#.3g}   {r.energy:+.6e}  "
              f"{abs(r.energy - floor):#.3g}  {r.eps:#.4g}  "
              f"{r.h2_dist_to_Q:#.4g}  {r.status}", file=out)

    if cfg.check_monotone_gap or cfg.check_energy_gap_tol is not None:
        tol = (np.inf if cfg.check_energy_gap_tol is None
               else float(cfg.check_energy_gap_tol))
        try:
            gap, ok = energy_limit_check(records, cfg.potential, tol=tol)
            print(f"energy gap to ess inf V: {gap:.4g} "
                  f"({'shrinking' if ok else 'NOT shrinking/too large'})",
                  file=out)
            if not ok:
                failures.append("energy_gap")
        except ValueError as exc:
            print(f"energy gap check unavailable: {exc}", file=out)
            failures.append("energy_gap")
    if cfg.check_h2_final is not None:
        final = resolved[-1].h2_dist_to_Q
        ok = final < float(cfg.check_h2_final)
        print(f"final H2 distance to Q: {final:.4g} "
              f"(tolerance {cfg.check_h2_final})", file=out)
        if not ok:
            failures.append("h2_final")
    if cfg.check_gn_window:
        vals = gn_sequence_check(records, gn)
        ok = 0.95 < vals[-1] < 1.0 + 1e-3
        print(f"a* x nonlinear mass of final rescaled profile: {vals[-1]:.6f}",
              file=out)
        if not ok:
            failures.append("gn_window")
    _write_manifest(cfg, outputs)
    if failures:
        print("check FAIL: " + ", ".join(failures), file=out)
        return EXIT_CHECK
    print("all enabled checks passed", file=out)
    return EXIT_OK


def _read_sweep_csv(path) -> list:
    rows = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append(SweepRecord(
                a=float(row["a"]),
                energy=float(row["energy"]),
                kinetic=float(row["kinetic"]),
                eps=float(row["eps"]),
                center=tuple(float(c) for c in row["center"].split(";")),
                h2_dist_to_Q=float(row["h2_dist_to_Q"]),
                status=row["status"],
                resolved=row["resolved"] == "True",
            ))
    return rows


def cmd_plotdata(cfg: RunConfig, out=sys.stdout) -> int:
    csv_path = cfg.output_dir / "sweep.csv"
    if not csv_path.exists():
        print(f"error: {csv_path} not found; run the 'sweep' command first",
              file=out)
        return EXIT_CONFIG
    gn = _load_gn_artifact(cfg, out)
    if gn is None:
        return EXIT_CONFIG
    records = _read_sweep_csv(csv_path)
    floor = ess_inf(cfg.potential, cfg.grid)
    cols = sweep_plot_columns(records, gn.a_star, floor)
    names = {"eps": "eps", "energy_gap": "energy_gap", "h2_dist": "h2_dist"}
    outputs = []
    for key, stem in names.items():
        path = cfg.output_dir / f"plot_{stem}.csv"
        lines = ["one_minus_a_over_astar," + stem]
        lines += [f"{x!r},{y!r}" for x, y in cols[key]]
        path.write_text("\n".join(lines) + "\n")
        outputs.append(path)
        print(f"wrote {path} ({len(cols[key])} points)", file=out)
    _write_manifest(cfg, outputs)
    return EXIT_OK


# ---------------------------------------------------------------------------
# property batteries (cmd_check)


def _battery_parseval(cfg: RunConfig, rng) -> tuple:
    worst = 0.0
    for _ in range(cfg.check_fields):
        u = random_smooth_field(cfg.grid, rng)
        a = l2_norm_sq(u)
        b = l2_norm_sq_spectral(u)
        worst = max(worst, abs(a - b) / max(1.0, abs(a)))
    return worst < 1e-12, f"max rel mismatch {worst:.2e}"


def _battery_scaling(cfg: RunConfig, rng) -> tuple:
    worst = 0.0
    for _ in range(cfg.check_fields):
        u = random_smooth_field(cfg.grid, rng)
        for ell in (0.5, 0.8, 1.25, 2.0):
            scale = max(1.0, abs(ell**4 * bilap_energy(u)))
            defect = scaled_energy_identity_check(u, 2.0, ell, refine=4)
            worst = max(worst, defect / scale)
    return worst < 1e-8, f"max rel defect {worst:.2e}"


def _battery_gn(cfg: RunConfig, rng, gn) -> tuple:
    floor = gn.a_star * (1.0 - 1e-6)
    worst = np.inf
    for k in range(cfg.check_battery):
        u = (gaussian_mixture_field(cfg.grid, rng) if k % 2 == 0
             else random_smooth_field(cfg.grid, rng))
        worst = min(worst, gn_quotient(u))
    return worst >= floor, f"min quotient {worst:.9g} vs a* {gn.a_star:.9g}"


def _battery_fd(cfg: RunConfig, rng, grad_fn) -> tuple:
    V = cfg.potential
    a = 2.0
    u = random_smooth_field(cfg.grid, rng)
    raw = grad_fn(u, V, a)
    min_order = np.inf
    for _ in range(cfg.check_directions):
        phi = random_smooth_field(cfg.grid, rng).values
        pairing = quadrature(cfg.grid, raw * phi)
        errs = []
        for h in (1e-3, 1e-4):
            up = Field(cfg.grid, u.values + h * phi)
            dn = Field(cfg.grid, u.values - h * phi)
            fd = (energy(up, V, a).total - energy(dn, V, a).total) / (2 * h)
            errs.append(abs(fd - pairing))
        if errs[1] < 1e-13 * max(1.0, abs(pairing)):
            continue  # already at roundoff: counts as converged
        min_order = min(min_order, np.log10(errs[0] / errs[1]))
    return min_order >= 1.9, f"min convergence order {min_order:.3f}"


def cmd_check(cfg: RunConfig, out=sys.stdout, grad_fn=None) -> int:
    rng = np.random.default_rng(cfg.seed)
    if grad_fn is None:
        grad_fn = lambda u, V, a: _unconstrained_gradient(u, V, a)
    try:
        gn = load_gn(cfg.gn_artifact)
    except (OSError, ValueError, KeyError):
        gn = compute_gn(cfg.grid, cfg=cfg.solver, restarts=2, seed=cfg.seed,
                        threads=cfg.threads)
    rows = [
        ("parseval", *_battery_parseval(cfg, rng)),
        ("scaling_identity", *_battery_scaling(cfg, rng)),
        ("gn_inequality", *_battery_gn(cfg, rng, gn)),
        ("gradient_fd", *_battery_fd(cfg, rng, grad_fn)),
    ]
    width = max(len(r[0]) for r in rows)
    ok_all = True
    for name, ok, detail in rows:
        ok_all &= ok
        print(f"{name:<{width}}  {'pass' if ok else 'FAIL'}  {detail}",
              file=out)
    _write_manifest(cfg, [])
    return EXIT_OK if ok_all else EXIT_CHECK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="biharm",
        description="Fourth-order focusing ground states: critical constant, "
                    "minimizers, and concentration sweeps on periodic boxes.")
    parser.add_argument("--config", required=True,
                        help="path to the JSON run configuration")
    parser.add_argument("--output", help="output directory "
                        "(overrides config output_dir)")
    parser.add_argument("--seed", type=int, help="override config seed")
    parser.add_argument("--threads", type=int, help="override config threads")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (
            ("gn", "compute the critical constant and its optimizer"),
            ("solve", "minimize the energy at one coupling"),
            ("sweep", "solve along a schedule climbing toward astar"),
            ("check", "run the property batteries"),
            ("plotdata", "emit plot-ready columns from a sweep run")):
        sub.add_parser(name, help=text)
    return parser


_COMMANDS = {
    "gn": cmd_gn,
    "solve": cmd_solve,
    "sweep": cmd_sweep,
    "check": cmd_check,
    "plotdata": cmd_plotdata,
}


def main(argv=None, out=sys.stdout, grad_fn=None) -> int:
    """Parse argv, validate config, dispatch; returns the exit code.

    grad_fn is a test hook for the finite-difference battery (mutation
    testing of the check command itself).
    """
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else 0
    overrides = {"seed": args.seed, "threads": args.threads,
                 "output": args.output}
    try:
        raw = load_config(args.config)
        cfg = RunConfig(raw, args.command, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=out)
        return EXIT_CONFIG
    if args.command == "check":
        return cmd_check(cfg, out=out, grad_fn=grad_fn)
    return _COMMANDS[args.command](cfg, out=out)


if __name__ == "__main__":
    sys.exit(main())
