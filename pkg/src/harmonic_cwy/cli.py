"""Command-line front end: ``harmonic-cwy run|verify <config.json>``."""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from . import conserved
from .initial_data import DataValidationError, HarmonicAsymptotics, complete_expansion, constraint_decay
from .reference import (
    linearized_optimal_obstruction,
    rho_j,
    rho_m3_closed_form,
    second_order_closed,
    solve_leading_embedding,
    j_m2_closed_form,
)
from .series import geometric_radii
from .sphere import SphereGrid

QUADRATURE_TOL = 1e-8
LIMIT_TOL = 1e-6
ROUNDOFF_FLOOR = 1e-10
DEFAULT_RADII = (50.0, 100.0, 200.0, 400.0, 800.0)
DEFAULT_CHECKS = {"constraints": True, "lemmas": True, "perturbation": True, "draws": 25}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    data: HarmonicAsymptotics
    l_max: int
    radii: np.ndarray
    checks: dict
    report: Path | None = None
    table: Path | None = None
    seed: int = 0

    @cached_property
    def grid(self) -> SphereGrid:
        return SphereGrid(self.l_max)


@dataclass
class Check:
    name: str
    residual: float
    tol: float
    passed: bool = field(init=False)

    def __post_init__(self):
        self.passed = bool(np.isfinite(self.residual) and self.residual <= self.tol)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<40s} residual={self.residual:.3e}  tol={self.tol:.1e}"


def _array(obj, key, shape):
    try:
        arr = np.asarray(obj, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"data.{key}: not numeric ({exc})") from None
    if arr.shape != shape:
        raise ConfigError(f"data.{key}: expected shape {shape}, got {arr.shape}")
    return arr


def _parse_radii(value):
    if value is None:
        return np.array(DEFAULT_RADII)
    if isinstance(value, dict):
        try:
            radii = geometric_radii(float(value["r0"]), int(value.get("count", 5)), float(value.get("ratio", 2.0)))
        except KeyError as exc:
            raise ConfigError(f"radii: missing key {exc}") from None
    elif isinstance(value, list):
        try:
            radii = np.asarray(value, dtype=float)
        except (TypeError, ValueError):
            raise ConfigError("radii: entries must be numbers") from None
    else:
        raise ConfigError("radii: expected a list or {r0, count, ratio}")
    if radii.size < 3:
        raise ConfigError("radii: need at least 3 radii")
    if np.any(radii <= 0) or np.any(np.diff(radii) <= 0):
        raise ConfigError("radii: must be positive and strictly increasing")
    return radii


def parse_config(text: str, base: Path = Path("."), *, seed=None, l_max=None) -> RunConfig:
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("top level: expected a JSON object")
    unknown = set(cfg) - {"data", "grid", "radii", "checks", "outputs", "seed"}
    if unknown:
        raise ConfigError(f"top level: unknown keys {sorted(unknown)}")
    raw = cfg.get("data")
    if not isinstance(raw, dict) or "A" not in raw:
        raise ConfigError("data: expected an object with at least 'A'")
    try:
        data = HarmonicAsymptotics(
            float(raw["A"]),
            _array(raw.get("B", [0, 0, 0]), "B", (3,)),
            _array(raw.get("c", [0, 0, 0]), "c", (3,)),
            _array(raw.get("d", [[0] * 3] * 3), "d", (3, 3)),
        )
    except DataValidationError as exc:
        raise ConfigError(f"data: {exc}") from None
    n = int(cfg.get("grid", {}).get("l_max", 16)) if l_max is None else int(l_max)
    if n < 8:
        raise ConfigError(f"grid.l_max: must be >= 8, got {n}")
    checks = dict(DEFAULT_CHECKS)
    extra = cfg.get("checks", {})
    if not isinstance(extra, dict):
        raise ConfigError("checks: expected an object")
    bad = set(extra) - set(DEFAULT_CHECKS)
    if bad:
        raise ConfigError(f"checks: unknown toggles {sorted(bad)}")
    checks.update(extra)
    outputs = cfg.get("outputs", {})
    report = outputs.get("report")
    table = outputs.get("table")
    return RunConfig(
        data,
        n,
        _parse_radii(cfg.get("radii")),
        checks,
        base / report if report else None,
        base / table if table else None,
        int(cfg.get("seed", 0) if seed is None else seed),
    )


def load_config(path, **overrides) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    try:
        return parse_config(text, path.parent, **overrides)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


# -- run -------------------------------------------------------------------------


def _fmt(x) -> str:
    return repr(float(x))


def _components(name, value):
    v = np.atleast_1d(np.asarray(value, dtype=float))
    if v.size == 1:
        return [(name, float(v[0]))]
    return [(f"{name}_{i + 1}", float(x)) for i, x in enumerate(v)]


def _perturbation_checks(cfg, completion, report, emb, rng):
    """CWY outputs under random a^(-1) and l<=1 (X0)^(-1) perturbations."""
    grid = cfg.grid
    coeffs = np.zeros(grid.n_coeffs)
    coeffs[:4] = rng.uniform(-1, 1, 4)
    e = emb.with_second_order(
        X0_m1=emb.X0_m1 + grid.from_coeffs(coeffs), a_m1=emb.observer.a_m1 + rng.uniform(-1, 1, 3)
    )
    n = conserved.cwy_numeric(cfg.data, completion, cfg.radii, grid, emb=e)
    change = max(np.abs(n.C - report.C_CWY).max(), np.abs(n.J - report.J_CWY).max())
    # error estimates can themselves sit at roundoff (B = 0); floor them there
    err = max(np.max(report.errors["C_CWY"]), np.max(report.errors["J_CWY"]), ROUNDOFF_FLOOR)
    return [Check("independence.second_order", change, err)]


def run(cfg: RunConfig):
    """Full pipeline.  Returns (report text, table text, checks)."""
    grid = cfg.grid
    data = cfg.data
    completion = complete_expansion(data, grid)
    emb = conserved.prepare_embedding(data, completion, grid, cfg.radii)
    rep = conserved.conserved_report(data, completion, cfg.radii, grid, emb=emb)
    rng = np.random.default_rng(cfg.seed)

    checks = []
    for q in conserved.QUANTITIES:
        scale = max(1.0, float(np.max(np.abs(np.atleast_1d(rep.closed_form[q])))))
        checks.append(Check(f"consistency.{q}", rep.discrepancy(q), LIMIT_TOL * scale))
    exps = None
    if cfg.checks.get("constraints") and not data.is_flat:
        exps = constraint_decay(data, completion, float(cfg.radii[0]), grid)
        checks.append(Check("constraints.hamiltonian_exponent", max(0.0, 4.5 - exps[0]), 0.0))
        checks.append(Check("constraints.momentum_exponent", max(0.0, 3.5 - exps[1]), 0.0))
    if cfg.checks.get("perturbation") and not data.is_flat:
        checks.extend(_perturbation_checks(cfg, completion, rep, emb, rng))

    lines = [
        "harmonic-cwy conserved quantities",
        f"data: A={_fmt(data.A)} B={list(map(float, data.B))} c={list(map(float, data.c))}",
        f"      d={[list(map(float, row)) for row in data.d]}",
        f"grid: l_max={cfg.l_max}  radii={list(map(float, cfg.radii))}  seed={cfg.seed}",
        f"observer: a0={_fmt(emb.observer.a0)} a={list(map(float, emb.observer.a))}",
        "",
        f"{'quantity':<10s} {'closed_form':>24s} {'numeric':>24s} {'discrepancy':>11s} {'error_est':>10s}",
    ]
    for q in conserved.QUANTITIES:
        cf = np.atleast_1d(rep.closed_form[q])
        ex = np.atleast_1d(rep.extrapolated[q])
        er = np.max(np.atleast_1d(rep.errors[q]))
        lines.append(
            f"{q:<10s} {np.array2string(cf, precision=10, separator=','):>24s} "
            f"{np.array2string(ex, precision=10, separator=','):>24s} "
            f"{rep.discrepancy(q):11.3e} {er:10.3e}"
        )
    if exps is not None:
        lines += ["", f"constraint residual decay exponents: hamiltonian={exps[0]:.4f} momentum={exps[1]:.4f}"]
    lines += ["", "checks:"] + [c.line() for c in checks]
    status = all(c.passed for c in checks)
    lines.append(f"status: {'OK' if status else 'FAILED'}")

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["quantity", "radius", "value", "closed_form", "abs_error"])
    for q in conserved.QUANTITIES:
        closed = _components(q, rep.closed_form[q])
        for k, r in enumerate(cfg.radii):
            for (name, cf), (_, v) in zip(closed, _components(q, rep.per_radius[q][k])):
                w.writerow([name, _fmt(r), _fmt(v), _fmt(cf), _fmt(abs(v - cf))])
        for (name, cf), (_, v) in zip(closed, _components(q, rep.extrapolated[q])):
            w.writerow([name, "inf", _fmt(v), _fmt(cf), _fmt(abs(v - cf))])
    return "\n".join(lines) + "\n", buf.getvalue(), checks


# -- verify -----------------------------------------------------------------------


def verify_checks(cfg: RunConfig) -> list[Check]:
    """Every closed-form vs numeric identity, as named checks."""
    grid = cfg.grid
    data = cfg.data
    checks = []
    completion = complete_expansion(data, grid)
    checks.append(Check("harmonic_expansion.u", completion.resolve_error_u, 1e-9))
    checks.append(Check("harmonic_expansion.Y", completion.resolve_error_Y, 1e-9))
    if cfg.checks.get("constraints") and not data.is_flat:
        e_ham, e_mom = constraint_decay(data, completion, float(cfg.radii[0]), grid)
        checks.append(Check("harmonic_expansion.hamiltonian_decay", max(0.0, 4.5 - e_ham), 0.0))
        checks.append(Check("harmonic_expansion.momentum_decay", max(0.0, 3.5 - e_mom), 0.0))

    if not data.is_flat and cfg.checks.get("lemmas"):
        emb = solve_leading_embedding(data, completion, grid)
        v = emb.observer.a / emb.observer.a0
        checks.append(Check("HA_optimal_expansion.observer", float(np.abs(v - data.B / (4 * data.A)).max()), 1e-9))
        rng = np.random.default_rng(cfg.seed)
        coords = grid.coordinates()
        worst = 0.0
        for _ in range(3):
            w = v + rng.uniform(-0.1, 0.1, 3)
            got = linearized_optimal_obstruction(data, w, grid)
            expect = coords.dot(3 * (4 * data.A * w - data.B))
            worst = max(worst, (got - expect).sup())
        checks.append(Check("HA_optimal_expansion.obstruction", worst, QUADRATURE_TOL))

        emb2, j2 = second_order_closed(data, emb)
        rj = rho_j(data, completion, emb2, cfg.radii)
        checks.append(Check("HA_expansion_rho.rho_m2", (rj.rho_m2 - 4 * data.A / emb.observer.a0).sup(), LIMIT_TOL))
        rho3 = rho_m3_closed_form(data, emb2.observer, grid)
        checks.append(Check("HA_expansion_rho.rho_m3", (rj.rho_m3 - rho3).sup(), LIMIT_TOL))
        checks.append(Check("j_expansion.j_m2", (rj.j_m2 - j_m2_closed_form(data, emb2)).sup(), LIMIT_TOL))

        R, I = conserved.reduced_integrals(rho3, j2)
        Rc, Ic = conserved.reduced_closed_form(data, emb2.observer)
        checks.append(Check("evaluation_2.rho", float(np.abs(R - Rc).max()), QUADRATURE_TOL))
        checks.append(Check("evaluation_2.j", float(np.abs(I - Ic).max()), QUADRATURE_TOL))

    n_draws = int(cfg.checks.get("draws", 0))
    if n_draws > 0:
        rng = np.random.default_rng(cfg.seed)
        worst = 0.0
        for _ in range(n_draws):
            d = HarmonicAsymptotics.random(rng)
            comp = complete_expansion(d, grid)
            num = conserved.cwy_numeric(d, comp, cfg.radii, grid)
            C, J = conserved.cwy_closed_form(d, num.embedding.observer)
            worst = max(worst, np.abs(num.C - C).max(), np.abs(num.J - J).max())
        checks.append(Check("thm_final.consistency", float(worst), LIMIT_TOL))
    return checks


# -- entry point ------------------------------------------------------------------


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="harmonic-cwy", description=__doc__)
    parser.add_argument("command", choices=["run", "verify"])
    parser.add_argument("config", help="JSON configuration file")
    parser.add_argument("--seed", type=int, default=None, help="seed for random draws and perturbations")
    parser.add_argument("--l-max", type=int, default=None, help="override grid.l_max")
    parser.add_argument("--quiet", action="store_true", help="print nothing on success")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config, seed=args.seed, l_max=args.l_max)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    if args.command == "run":
        report, table, checks = run(cfg)
        if cfg.report:
            _write(cfg.report, report)
        if cfg.table:
            _write(cfg.table, table)
        if not args.quiet or not all(c.passed for c in checks):
            sys.stdout.write(report)
    else:
        checks = verify_checks(cfg)
        if not args.quiet or not all(c.passed for c in checks):
            for c in checks:
                print(c.line())
    return 0 if all(c.passed for c in checks) else 1


if __name__ == "__main__":
    sys.exit(main())
