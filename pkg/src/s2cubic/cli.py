"""Command-line front end.

Every command writes its artifacts into ``--out`` (created if missing) and
embeds the hash of the fixture it ran against.  Exit status: 0 when all
checks pass, 1 when a verification fails, 2 for usage or I/O problems.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fixture as fx
from .errors import DomainError, FixtureMismatch, S2CubicError

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

AGREEMENT_TOL = 1e-4
BRACKET_TOL = 1e-6
DRIFT_TOL = 1e-7
POLE_TOL = 1e-6
EQPDE_TOL = 1e-8
GC_TOL = 1e-3


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    command: str
    out: Path
    fixture: str | None = None
    tol: float | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.tol is not None and not self.tol > 0:
            raise UsageError(f"--tol must be positive, got {self.tol}")

    def prepare(self):
        try:
            self.out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise OSError(f"cannot create output directory {self.out}: {exc}") from exc
        if not self.out.is_dir():
            raise OSError(f"{self.out} is not a directory")
        probe = self.out / ".write-test"
        try:
            probe.write_text("")
            probe.unlink()
        except OSError as exc:
            raise OSError(f"output directory {self.out} is not writable: {exc}") from exc


# ---------------------------------------------------------------------------
# serialisation

def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if hasattr(obj, "value") and isinstance(obj.value, str):
        return obj.value
    return obj


def write_json(path: Path, payload: dict):
    path.write_text(json.dumps(_clean(payload), indent=2, sort_keys=True) + "\n")


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def fixture_block():
    f = fx.active_fixture()
    return {"T": f.T, "hash": f.hash, "method": f.method}


def parse_tau(text: str, T: float) -> float:
    """A number, or a multiple of T written as ``0.5T`` (``T`` alone means T)."""
    t = text.strip()
    try:
        if t.endswith("T"):
            k = t[:-1].strip().rstrip("*")
            return (float(k) if k else 1.0) * T
        return float(t)
    except ValueError:
        raise UsageError(f"cannot read tau {text!r}") from None


def parse_list(text: str):
    items = [s for s in (p.strip() for p in text.split(",")) if s]
    if not items:
        raise UsageError("empty grid")
    return items


def _check(name, value, threshold, passed=None, **extra):
    ok = bool(value <= threshold) if passed is None else bool(passed)
    return {"name": name, "value": value, "threshold": threshold, "pass": ok, **extra}


# ---------------------------------------------------------------------------
# commands

def cmd_find_T(cfg: RunConfig) -> int:
    from .critical import PROBE_DISK, find_T_bisection, find_T_separatrix
    from .ode_core import ZERO_DT, ZERO_TOL

    tol = cfg.tol if cfg.tol is not None else 1e-10
    bis = find_T_bisection(tol=tol)
    sep = find_T_separatrix(q_max=cfg.params["qmax"])
    settings = {"atol": 1e-14, "bracket": [0.0, 16.0], "probe_disk": PROBE_DISK, "rtol": 1e-12,
                "t_max": 40.0, "zero_dt": ZERO_DT, "zero_tol": ZERO_TOL}
    fixture = fx.make_fixture(bis, settings)
    fx.write_fixture(fixture, cfg.out / fx.FIXTURE_NAME)
    diff = abs(bis.T - sep.T)
    allowed = max(AGREEMENT_TOL, bis.bracket_width)
    report = {"bisection": bis.as_dict(), "separatrix": sep.as_dict(), "difference": diff,
              "allowed_difference": allowed, "pass": diff <= allowed,
              "fixture": {"T": fixture.T, "hash": fixture.hash, "method": fixture.method}}
    write_json(cfg.out / "find_T.json", report)
    print(f"{'method':<12}{'T':>22}{'uncertainty':>14}")
    print(f"{'bisection':<12}{bis.T:>22.15f}{bis.bracket_width:>14.3e}")
    print(f"{'separatrix':<12}{sep.T:>22.15f}{sep.fit_residual:>14.3e}")
    print(f"|dT| = {diff:.3e} (allowed {allowed:.1e})")
    return EXIT_OK if diff <= allowed else EXIT_FAIL


def _mirror(curve):
    return -np.asarray(curve.q), np.asarray(curve.p)


def cmd_phase_portrait(cfg: RunConfig) -> int:
    from .phase_plane import (Branch, classify_fixed_points, estimate_T_from_separatrix,
                              find_fixed_point, tau_orbit, trace_separatrix)

    qmax = cfg.params["qmax"]
    points = classify_fixed_points()
    write_json(cfg.out / "fixed_points.json", {"fixed_points": [p.as_dict() for p in points],
                                               "fixture": fixture_block()})
    plan = [("low", (0.0, -0.5), Branch.STABLE_POS), ("high", (0.0, 1.0), Branch.UNSTABLE_POS)]
    wanted = cfg.params["branch"]
    files = []
    for tag, loc, branch in plan:
        curve = trace_separatrix(find_fixed_point(*loc, points), branch, q_max=qmax)
        stem = branch.value[:-4]
        for side, (q, p) in (("pos", (curve.q, curve.p)), ("neg", _mirror(curve))):
            name = f"{stem}_{side}"
            if wanted not in ("all", name):
                continue
            fname = f"separatrix_{tag}_{name}.csv"
            write_csv(cfg.out / fname, ["q", "p"], zip(q, p))
            files.append(fname)
    T = fx.default_T()
    orbits = []
    for k in (0.25, 0.5, 0.75):
        orb = tau_orbit(k * T, q_max=qmax)
        fname = f"orbit_tau_{k:.2f}T.csv"
        write_csv(cfg.out / fname, ["q", "p"], zip(orb.q, orb.p))
        orbits.append(fname)
    est = estimate_T_from_separatrix(q_max=max(qmax, 20.0))
    summary = {"qmax": qmax, "n_fixed_points": len(points), "separatrix_files": files,
               "orbit_files": orbits, "T_estimate": est.value, "T_estimate_residual": est.residual,
               "T_fixture_difference": abs(est.value - T), "fixture": fixture_block()}
    write_json(cfg.out / "phase_portrait.json", summary)
    print(f"{len(points)} fixed points, {len(files)} separatrix files, T estimate {est.value:.10f}")
    return EXIT_OK


def cmd_solve_psi(cfg: RunConfig) -> int:
    from .metric import b_bounds, build_psi

    T = fx.default_T()
    tau = parse_tau(cfg.params["tau"], T)
    prof = build_psi(tau)
    ymax = cfg.params["ymax"]
    y = np.linspace(-ymax, ymax, 801)
    j = prof.jet(y)
    write_csv(cfg.out / "psi.csv", ["y", "psi", "psi1", "psi2", "P", "m"],
              zip(y, j.psi, j.psi1, j.psi2, j.P, j.m))
    report = {"tau": tau, "stationary": prof.is_stationary, "y0": prof.y0,
              "amplitude": prof.amplitude, "max_ode_residual": float(np.max(np.abs(prof.ode_residual(y[1:-1])))),
              "fixture": fixture_block()}
    if not prof.is_stationary:
        bb = b_bounds(tau)
        report["b_bounds"] = {"low": bb.low, "high": bb.high}
    write_json(cfg.out / "psi.json", report)
    print(f"tau = {tau!r}: {y.size} rows written")
    return EXIT_OK


def _spec_from(cfg: RunConfig):
    from .gc import gc_family_spec
    from .metric import Family, HamiltonianSpec

    fam = cfg.params["family"]
    if fam == "GC":
        return gc_family_spec()
    tau = parse_tau(cfg.params["tau"], fx.default_T())
    if fam == "A":
        return HamiltonianSpec(Family.A, tau, c=cfg.params["c"])
    if cfg.params["b"] is None:
        raise UsageError("family B needs --b")
    return HamiltonianSpec(Family.B, tau, b=cfg.params["b"])


def _curvature_range(spec, n=40, y_lim=3.0):
    from .metric import gaussian_curvature

    phi = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    y = np.linspace(-y_lim, y_lim, n)
    P, Y = np.meshgrid(phi, y, indexing="ij")
    K = gaussian_curvature(spec, P, Y)
    return float(np.min(K)), float(np.max(K))


def cmd_build_metric(cfg: RunConfig) -> int:
    from .metric import b_bounds, b_bounds_via_phi, build_metric, lambda_scan, pole_smoothness_check

    spec = _spec_from(cfg)
    met = build_metric(spec)
    scan = lambda_scan(spec)
    report = {"spec": spec.as_dict(), "admissible": met.admissible, "orientation": met.orientation,
              "lambda_scan": scan.as_dict(), "fixture": fixture_block()}
    if not met.profile.is_stationary:
        bb = b_bounds(spec.tau)
        lo, hi = b_bounds_via_phi(spec.tau)
        report["b_bounds"] = {"low": bb.low, "high": bb.high, "low_phi": lo, "high_phi": hi}
    if not scan.degenerate:
        report["curvature_range"] = _curvature_range(spec)
        report["poles"] = [r.as_dict() for r in pole_smoothness_check(spec)]
    y = np.linspace(-8.0, 8.0, 401)
    x2 = met.xi_derivatives(y)[0] if not scan.unbounded else np.full_like(y, np.nan)
    write_csv(cfg.out / "metric_profile.csv", ["y", "P", "xi2"], zip(y, met.profile.jet(y).P, x2))
    write_json(cfg.out / "metric.json", report)
    print(f"{spec.family.value} tau={spec.tau!r}: lambda {'positive' if scan.positive else 'not positive'}")
    return EXIT_OK


def _gc_match_report():
    from .gc import (embedding_pullback, gc_chart_symmetry_residual, gc_conformal_profile, gc_family_spec,
                     gc_profile, match_equivalence, spec_conformal_profile, stationary_point)

    sp = stationary_point()
    spec = gc_family_spec()
    fit = match_equivalence(gc_conformal_profile(), spec_conformal_profile(spec))
    th = np.linspace(0.05, np.pi - 0.05, 60)
    pb = embedding_pullback(th)
    prof = gc_profile()
    pull = float(max(np.max(np.abs(pb[:, 0] - prof.A(th))), np.max(np.abs(pb[:, 1] - prof.B(th))),
                     np.max(np.abs(pb[:, 2]))))
    return {"fit": fit.as_dict(), "gauge_sign": fit.sign, "b": sp.b, "y0": sp.y0,
            "y0_event": sp.y0_event, "pullback_residual": pull,
            "chart_symmetry_residual": gc_chart_symmetry_residual(), "spec": spec.as_dict(),
            "threshold": GC_TOL, "pass": fit.residual <= GC_TOL}, fit, spec


def cmd_verify(cfg: RunConfig) -> int:
    from .integral import bracket_residual, drift_survey, eqpde_residual, random_states
    from .metric import lambda_scan, pole_smoothness_check

    spec = _spec_from(cfg)
    seeds, horizon = cfg.params["seeds"], cfg.params["horizon"]
    checks = []
    report = {"spec": spec.as_dict(), "seeds": seeds, "horizon": horizon, "fixture": fixture_block()}
    scan = lambda_scan(spec)
    checks.append(_check("lambda_positive", scan.minimum, 0.0, passed=not scan.degenerate,
                         detail=scan.as_dict()))
    if scan.degenerate:
        report["failure"] = "metric_degeneracy"
    else:
        states = list(random_states(5 * seeds, seed=0))
        for mode in ("geodesic", "conservative"):
            br = max(bracket_residual(spec, st, mode) for st in states)
            checks.append(_check(f"bracket_{mode}", br, BRACKET_TOL, n_states=len(states)))
        if horizon > 0:
            ds = drift_survey(spec, n=seeds, horizon=horizon, mode="conservative")
            checks.append(_check("conservation_drift", ds.max_drift, DRIFT_TOL, **ds.as_dict()))
        for rep in pole_smoothness_check(spec, tol=POLE_TOL):
            checks.append(_check(f"pole_{rep.chart}", max(rep.residual_psi1, rep.residual_psi2), POLE_TOL,
                                 passed=rep.smooth, detail=rep.as_dict()))
        phi = np.linspace(0.0, 2.0 * np.pi, 12, endpoint=False)
        P, Y = np.meshgrid(phi, np.linspace(-3.0, 3.0, 13), indexing="ij")
        checks.append(_check("eqpde", float(np.max(np.abs(eqpde_residual(spec, P, Y)))), EQPDE_TOL))
    if cfg.params["family"] == "GC":
        gc, fit, _ = _gc_match_report()
        report["gc_match"] = gc
        checks.append(_check("gc_match", fit.residual, GC_TOL))
    report["checks"] = checks
    report["pass"] = all(c["pass"] for c in checks)
    write_json(cfg.out / "verify.json", report)
    for c in checks:
        print(f"{'PASS' if c['pass'] else 'FAIL'} {c['name']}: {c['value']:.3e} (threshold {c['threshold']:.1e})")
    return EXIT_OK if report["pass"] else EXIT_FAIL


SWEEP_HEADER = ["tau_over_T", "tau", "b", "b_low", "b_high", "b_low_phi", "b_high_phi", "bounds_diff",
                "K_min", "K_max", "drift_max", "status", "error"]


def _sweep_row(job):
    from .integral import drift_survey
    from .metric import Family, HamiltonianSpec, b_bounds, b_bounds_via_phi, lambda_scan

    fixture_path, tau_text, b, seeds, horizon = job
    if fixture_path is not None:
        fx.activate(fixture_path)
    T = fx.default_T()
    tau = parse_tau(tau_text, T)
    row = dict.fromkeys(SWEEP_HEADER)
    row.update(tau_over_T=tau / T, tau=tau, b=b, status="ok", error="")
    try:
        bb = b_bounds(tau)
        lo, hi = b_bounds_via_phi(tau)
        row.update(b_low=bb.low, b_high=bb.high, b_low_phi=lo, b_high_phi=hi,
                   bounds_diff=max(abs(bb.low - lo), abs(bb.high - hi)))
        spec = HamiltonianSpec(Family.A, tau) if b is None else HamiltonianSpec(Family.B, tau, b=b)
        scan = lambda_scan(spec, n_phi=60, n_y=60)
        if scan.degenerate:
            row["status"] = "degenerate"
            return row
        row["K_min"], row["K_max"] = _curvature_range(spec)
        if horizon > 0 and seeds > 0:
            row["drift_max"] = drift_survey(spec, n=seeds, horizon=horizon).max_drift
        if row["bounds_diff"] > AGREEMENT_TOL:
            row["status"] = "bounds_disagree"
    except S2CubicError as exc:
        row["status"] = "failed"
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def cmd_sweep(cfg: RunConfig) -> int:
    taus = parse_list(cfg.params["taus"])
    bs = [None] if cfg.params["bs"] is None else [float(v) for v in parse_list(cfg.params["bs"])]
    T = fx.default_T()
    for t in taus:
        parse_tau(t, T)
    jobs = [(cfg.fixture, t, b, cfg.params["seeds"], cfg.params["horizon"]) for t in taus for b in bs]
    workers = cfg.params["workers"]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_row, jobs))
    else:
        rows = [_sweep_row(j) for j in jobs]
    rows.sort(key=lambda r: (r["tau"], -math.inf if r["b"] is None else r["b"]))
    write_csv(cfg.out / "sweep.csv", SWEEP_HEADER, ([r[k] for k in SWEEP_HEADER] for r in rows))
    write_json(cfg.out / "sweep.json", {"rows": len(rows), "fixture": fixture_block(),
                                        "flagged": sum(r["status"] != "ok" for r in rows)})
    print(f"{len(rows)} rows, {sum(r['status'] != 'ok' for r in rows)} flagged")
    return EXIT_OK


def cmd_gc_match(cfg: RunConfig) -> int:
    from .gc import gc_conformal_profile, spec_conformal_profile

    report, fit, spec = _gc_match_report()
    report["fixture"] = fixture_block()
    write_json(cfg.out / "gc_match.json", report)
    gcp, bp = gc_conformal_profile(), spec_conformal_profile(spec)
    y = np.linspace(-6.0, 6.0, 241)
    t = fit.sign * y + fit.y1
    write_csv(cfg.out / "gc_profiles.csv", ["y", "psi3_gc", "psi4_gc", "psi3_fit", "psi4_fit"],
              zip(y, gcp.psi3(y), gcp.psi4(y), fit.C0 * bp.psi3(t), fit.C3 * bp.psi4(t)))
    print(f"C0 = {fit.C0:.12f}  C3 = {fit.C3:.12f}  y1 = {fit.y1:.12f}  sign = {fit.sign:+d}  "
          f"residual = {fit.residual:.3e}")
    return EXIT_OK if report["pass"] else EXIT_FAIL


COMMANDS = {
    "find-T": cmd_find_T, "phase-portrait": cmd_phase_portrait, "solve-psi": cmd_solve_psi,
    "build-metric": cmd_build_metric, "verify": cmd_verify, "sweep": cmd_sweep, "gc-match": cmd_gc_match,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=".", help="output directory (created if missing)")
    common.add_argument("--fixture", default=None, help="T fixture JSON (default: packaged)")
    common.add_argument("--tol", type=float, default=None, help="bisection tolerance for find-T")

    spec_args = argparse.ArgumentParser(add_help=False)
    spec_args.add_argument("--family", choices=["A", "B", "GC"], default="A")
    spec_args.add_argument("--tau", default="0.5T", help="number or multiple of T such as 0.5T")
    spec_args.add_argument("--b", type=float, default=None)
    spec_args.add_argument("--c", type=float, default=1.0)

    parser = argparse.ArgumentParser(prog="s2cubic", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("find-T", parents=[common], help="critical constant by two methods; writes the fixture",
                       description="Writes T_fixture.json and find_T.json.")
    p.add_argument("--qmax", type=float, default=200.0)
    p = sub.add_parser("phase-portrait", parents=[common], help="equilibria, separatrices, sample orbits",
                       description="CSV columns: q, p.  Also fixed_points.json and phase_portrait.json.")
    p.add_argument("--qmax", type=float, default=50.0)
    p.add_argument("--branch", default="all",
                   choices=["all", "stable_pos", "stable_neg", "unstable_pos", "unstable_neg"])
    p = sub.add_parser("solve-psi", parents=[common], help="profile psi for one tau",
                       description="psi.csv columns: y, psi, psi1, psi2, P, m.")
    p.add_argument("--tau", default="0.5T")
    p.add_argument("--ymax", type=float, default=8.0)
    sub.add_parser("build-metric", parents=[common, spec_args], help="conformal factor diagnostics",
                   description="metric_profile.csv columns: y, P, xi2.")
    p = sub.add_parser("verify", parents=[common, spec_args], help="integrability checks for one system",
                       description="Writes verify.json; exit 1 when any check fails.")
    p.add_argument("--seeds", type=int, default=20, help="number of random trajectories")
    p.add_argument("--horizon", type=float, default=10.0)
    p = sub.add_parser("sweep", parents=[common], help="b-bounds, curvature and drift over a tau grid",
                       description="sweep.csv columns: " + ", ".join(SWEEP_HEADER) + ".")
    p.add_argument("--taus", default=",".join(f"{k / 10:.1f}T" for k in range(1, 10)))
    p.add_argument("--bs", default=None, help="comma-separated b values (family B rows)")
    p.add_argument("--seeds", type=int, default=2)
    p.add_argument("--horizon", type=float, default=2.0)
    p.add_argument("--workers", type=int, default=1)
    sub.add_parser("gc-match", parents=[common], help="equivalence fit against the GC system",
                   description="gc_profiles.csv columns: y, psi3_gc, psi4_gc, psi3_fit, psi4_fit.")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    params = {k: v for k, v in vars(args).items() if k not in ("command", "out", "fixture", "tol")}
    try:
        cfg = RunConfig(args.command, Path(args.out), args.fixture, args.tol, params)
        if params.get("seeds", 1) < 0 or params.get("workers", 1) < 1:
            raise UsageError("--seeds must be >= 0 and --workers >= 1")
        fx.activate(args.fixture)
        cfg.prepare()
        return COMMANDS[args.command](cfg)
    except (UsageError, DomainError, FixtureMismatch, OSError) as exc:
        print(f"s2cubic {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except S2CubicError as exc:
        print(f"s2cubic {args.command}: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    finally:
        fx.activate(None)


if __name__ == "__main__":
    sys.exit(main())
