"""Command line front end: ``trinoid``.

    trinoid --necksizes 0.25 0.25 0.25 --out tri.obj --report tri.json
    trinoid --weights 0.75 0.75 0.75 --check-only
    trinoid --delaunay 0.75 --out unduloid.ply

Exit codes: 0 all checks pass, 1 some residual check failed, 2 invalid
weights, 3 a pipeline stage failed (the stage is named on stderr).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .errors import InsufficientEndDepth, InvalidWeights, PipelineFailure, TrinoidError, WeightOutOfRange
from .export import REPORT_SCHEMA_VERSION, write_mesh, write_report

log = logging.getLogger("cmctrinoid")

EXIT_OK, EXIT_CHECKS, EXIT_INVALID, EXIT_PIPELINE = 0, 1, 2, 3

# residual thresholds of the closing checks
THRESHOLDS = {
    "eigenvalue_oracle": 1e-6,
    "closing_rho": 1e-5,
    "unitarity": 1e-6,
    "closure_relative": 1e-5,
    "symmetry_relative": 1e-4,
    "asymptotics_relative": 1e-2,
}


@dataclass
class JobConfig:
    weights: tuple | None = None
    necksizes: tuple | None = None
    nsamples: int = 128
    band: int = 64
    mesh_density: float = 1.0
    end_depth: float = 3.5
    out: str | None = None
    report: str | None = None
    emit_diagnostics: bool = True
    check_only: bool = False
    delaunay: float | None = None
    allow_cylinder: bool = False
    threads: int = 1
    seed: int = 0
    H: float = 1.0

    def __post_init__(self):
        if self.delaunay is None and (self.weights is None) == (self.necksizes is None):
            raise ValueError("give exactly one of weights or necksizes")
        if self.nsamples < 2 * self.band:
            raise ValueError(f"need samples >= 2 * band, got N={self.nsamples}, K={self.band}")
        if self.threads < 1:
            raise ValueError("threads must be positive")
        if self.end_depth <= 0 or self.mesh_density <= 0:
            raise ValueError("end depth and mesh density must be positive")

    def resolve_weights(self):
        """Weights object; necksizes go through w = 4 n (1/H - n)."""
        from .potentials import Weights

        if self.weights is not None:
            return Weights(*map(float, self.weights), H=self.H)
        return Weights.from_necksizes(*map(float, self.necksizes), H=self.H)

    def immersion_params(self):
        from .immerse import ImmersionParams

        return ImmersionParams(H=self.H, nsamples=self.nsamples, band=self.band, threads=self.threads)


# ---------------------------------------------------------------------------
# checks

@dataclass
class Check:
    name: str
    value: float
    threshold: float
    passed: bool = field(init=False)

    def __post_init__(self):
        self.passed = bool(np.isfinite(self.value) and self.value <= self.threshold)

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name} {self.value:.3e} <= {self.threshold:.1e}"


def _summary(checks: list[Check]) -> dict:
    return {"status": "PASS" if all(c.passed for c in checks) else "FAIL",
            "checks": [asdict(c) for c in checks]}


def _print_summary(checks: list[Check], out=None):
    for c in checks:
        print(c.line(), file=out)
    print("RESULT " + ("PASS" if all(c.passed for c in checks) else "FAIL"), file=out)


def _stage(name, fn, *args, **kw):
    t = time.perf_counter()
    try:
        out = fn(*args, **kw)
    except InvalidWeights:
        raise
    except Exception as exc:  # every other failure is reported by stage
        raise PipelineFailure(name, exc) from exc
    log.info("%s: %.2f s", name, time.perf_counter() - t)
    return out


def eigen_report(M, W, nsamples: int) -> tuple[dict, float, float]:
    """Eigenvalue curves of M1..M3 against exp(+-2 pi i nu), plus closing values at 1."""
    from .holonomy import eigenvalue_curves
    from .loops import unit_samples
    from .potentials import nu_w

    lam = unit_samples(nsamples)
    out, worst, closing = {}, 0.0, 0.0
    for k, m in enumerate((M.M1, M.M2, M.M3), 1):
        ec = eigenvalue_curves(m)
        nu = nu_w(W.w[k - 1] * W.H ** 2, lam)
        ref = np.exp(2j * np.pi * nu)
        dev = np.minimum(np.abs(ec.rho - ref[:, None]), np.abs(ec.rho - ref.conj()[:, None]))
        worst = max(worst, float(dev.max()))
        closing = max(closing, float(np.abs(ec.rho_at_1 - 1).max()), float(np.abs(ec.drho_at_1).max()))
        out[f"M{k}"] = {
            "rho_real": ec.rho.real, "rho_imag": ec.rho.imag,
            "rho_at_1": ec.rho_at_1, "drho_at_1": ec.drho_at_1,
            "oracle_deviation": float(dev.max()),
        }
    return out, worst, closing


# ---------------------------------------------------------------------------
# runners

def run_check(cfg: JobConfig, out=None) -> tuple[int, dict]:
    """Admissibility and pointwise unitarizability; never fails on the verdict."""
    from .holonomy import monodromies
    from .loops import unit_samples
    from .potentials import TrinoidPotential, check_admissible, nu_w
    from .unitarize import pointwise_unitarizability

    try:
        W = cfg.resolve_weights()
    except InvalidWeights as exc:
        # necksizes beyond 1/(2H) have no weight; still a verdict, not an error
        for f in exc.failures or [str(exc)]:
            print(f"  {f}", file=out)
        print("verdict inadmissible", file=out)
        return EXIT_OK, {"command": "check", "necksizes": cfg.necksizes, "verdict": "inadmissible",
                         "admissibility": {"admissible": False, "failures": exc.failures}}
    adm = check_admissible(W, nsamples=cfg.nsamples)
    rep = {"command": "check", "weights": W.w, "necksizes": W.n, "admissibility": adm.as_dict()}
    lam = unit_samples(cfg.nsamples)
    nu = np.stack([nu_w(wk * W.H ** 2, lam) for wk in W.w], axis=-1)
    pu = pointwise_unitarizability(nu)
    rep["pointwise_unitarizability"] = pu.as_dict()
    rep["nu_reduced"] = pu.reduced_nu
    if np.all(W.w != 0) and np.all(W.w * W.H ** 2 <= 1):
        M = monodromies(TrinoidPotential(W), nsamples=cfg.nsamples)
        curves, worst, closing = eigen_report(M, W, cfg.nsamples)
        rep["eigenvalue_curves"] = curves
        rep["eigenvalue_oracle_deviation"] = worst
        rep["closing_conditions"] = closing
        rep["monodromy_product_residual"] = M.product_residual
    verdict = bool(adm.admissible and pu.verdict)
    rep["verdict"] = "admissible" if verdict else "inadmissible"
    print(f"weights {np.array2string(W.w, precision=6)}  necksizes {np.array2string(W.n, precision=6)}", file=out)
    print(f"neck_ok {adm.neck_ok}  weight_ok {adm.weight_ok}  tetrahedron_ok {bool(np.all(adm.tetrahedron_ok))}",
          file=out)
    for f in adm.failures:
        print(f"  {f}", file=out)
    print("  theta/pi      nu1       nu2       nu3    margin", file=out)
    step = max(1, cfg.nsamples // 32)
    for j in range(0, cfg.nsamples, step):
        r = pu.reduced_nu[j]
        print(f"  {2 * j / cfg.nsamples:8.4f} {r[0]:9.5f} {r[1]:9.5f} {r[2]:9.5f} {pu.margin[j]:9.5f}", file=out)
    print(f"verdict {rep['verdict']}", file=out)
    return EXIT_OK, rep


def run_delaunay(cfg: JobConfig, out=None) -> tuple[int, dict]:
    from .immerse import delaunay_profile, delaunay_surface
    from .potentials import necksize_from_weight

    w = float(cfg.delaunay)
    params = cfg.immersion_params()
    prof = _stage("profile", delaunay_profile, w, cfg.H, 0.5, 400)
    half = min(10.0, 0.5 * cfg.end_depth * prof.period)
    nx = int(np.ceil(2 * half / prof.period * 40 * cfg.mesh_density)) + 1
    ny = int(64 * cfg.mesh_density)
    mesh = _stage("surface", delaunay_surface, w, params, None, (-half, half), nx, ny)
    v = mesh.vertices.reshape(nx, ny, 3)
    cent = v.mean(axis=1)
    c = cent.mean(axis=0)
    _, _, vt = np.linalg.svd(cent - c)
    ax = vt[0]
    d = v - c
    s = d @ ax
    r = np.linalg.norm(d - s[..., None] * ax, axis=-1)
    axial = cent @ ax
    steps = np.diff(axial)
    self_int = bool(np.any(steps > 0) and np.any(steps < 0))
    n_expected = float(necksize_from_weight(w * cfg.H ** 2) / cfg.H)
    checks = [Check("closure", mesh.diagnostics["closure_residual"], 1e-6)]
    rep = {"command": "delaunay", "weight": w, "necksize_expected": n_expected,
           "radius_min": float(r.min()), "radius_max": float(r.max()),
           "self_intersection": self_int, "period": prof.period, "axial_period": prof.axial_period,
           "diagnostics": mesh.diagnostics}
    if abs(w * cfg.H ** 2 - 1) < 1e-12:
        checks.append(Check("cylinder_radius", float(np.abs(r - 0.5 / cfg.H).max()), 1e-6))
    elif w > 0:
        checks.append(Check("necksize", abs(float(r.min()) - n_expected), 1e-3))
    rep["summary"] = _summary(checks)
    if cfg.out:
        _stage("export", write_mesh, cfg.out, mesh, f"Delaunay surface w = {w}")
    print(f"Delaunay w = {w}: radius in [{r.min():.6f}, {r.max():.6f}], "
          f"self-intersecting {self_int}, {mesh.nvertices} vertices", file=out)
    _print_summary(checks, out)
    return (EXIT_OK if rep["summary"]["status"] == "PASS" else EXIT_CHECKS), rep


def run_trinoid(cfg: JobConfig, out=None) -> tuple[int, dict]:
    from .immerse import (MeshSpec, TrinoidFrames, end_asymptotics, symmetry_residual,
                          trinoid_surface)
    from .holonomy import monodromies
    from .potentials import trinoid_potential
    from .unitarize import build_unitarizer, kernel_section

    t0 = time.perf_counter()
    W = cfg.resolve_weights()
    W.validate(cfg.allow_cylinder)
    params = cfg.immersion_params()
    xi = trinoid_potential(W, allow_cylinder=cfg.allow_cylinder)
    M = _stage("monodromy", monodromies, xi, nsamples=cfg.nsamples)
    curves, eig_dev, closing = eigen_report(M, W, cfg.nsamples)
    sec = _stage("kernel", kernel_section, M, params.effective_band)
    U = _stage("unitarizer", build_unitarizer, sec, M)
    frames = TrinoidFrames(W, xi, M, sec, U)
    spec = MeshSpec(end_depth=cfg.end_depth, density=cfg.mesh_density, seed=cfg.seed)
    mesh = _stage("surface", trinoid_surface, W, params, spec, frames, check_closure=False,
                  allow_cylinder=cfg.allow_cylinder)
    sym = _stage("symmetry", symmetry_residual, mesh)
    fits = {}
    for e in ("0", "1", "inf"):
        try:
            fits[e] = _stage(f"end_fit_{e}", end_asymptotics, mesh, e, W).as_dict()
        except PipelineFailure as exc:
            if not isinstance(exc.cause, InsufficientEndDepth):
                raise
            # a truncated end is a failed check, not a crashed pipeline
            info = mesh.diagnostics["ends"][e]
            fits[e] = {"error": str(exc.cause), "truncated": info.get("truncated"),
                       "depth_periods": info.get("depth_periods")}
    d = mesh.diagnostics
    checks = [
        Check("eigenvalue_oracle", eig_dev, THRESHOLDS["eigenvalue_oracle"]),
        Check("closing_rho", closing, THRESHOLDS["closing_rho"]),
        Check("unitarity", U.residual_unitarity, THRESHOLDS["unitarity"]),
        Check("closure_relative", d["closure_relative"], THRESHOLDS["closure_relative"]),
        Check("symmetry_relative", sym["relative"], THRESHOLDS["symmetry_relative"]),
    ]
    for e, f in fits.items():
        if "error" in f:
            checks.append(Check(f"asymptotics_end_{e}", np.inf, THRESHOLDS["asymptotics_relative"]))
            continue
        rel = f["c0_deviation"][-1] / abs(f["neck_radius"])
        checks.append(Check(f"asymptotics_end_{e}", rel, THRESHOLDS["asymptotics_relative"]))
        checks.append(Check(f"asymptotics_decreasing_end_{e}", 0.0 if f["decreasing_last_two"] else 1.0, 0.5))
    rep = {
        "command": "trinoid",
        "weights": W.w, "necksizes": W.n,
        "config": asdict(cfg),
        "eigenvalue_curves": curves,
        "eigenvalue_oracle_deviation": eig_dev,
        "closing_conditions": closing,
        "monodromy_product_residual": M.product_residual,
        "kernel": {"flagged_samples": sec.degenerate_samples, "discarded_energy": sec.discarded_energy},
        "unitarity_residual": U.residual_unitarity,
        "det_zeros": U.det_zeros,
        "birkhoff_residual": U.birkhoff_residual,
        "period_residuals": {"closure": d["closure_residual"], "closure_relative": d["closure_relative"],
                             "symmetry": sym},
        "end_fits": fits,
        "mesh": {k: d[k] for k in ("vertices", "faces", "bbox_diagonal", "max_factorization_residual",
                                   "transport_steps", "domain", "ends", "timing")},
    }
    if cfg.out:
        _stage("export", write_mesh, cfg.out, mesh,
               f"CMC trinoid, weights {', '.join(f'{x:.6g}' for x in W.w)}, H = {W.H}")
    rep["runtime_s"] = time.perf_counter() - t0
    rep["summary"] = _summary(checks)
    print(f"trinoid necksizes {np.array2string(W.n, precision=6)}: {d['vertices']} vertices, "
          f"{rep['runtime_s']:.1f} s", file=out)
    _print_summary(checks, out)
    return (EXIT_OK if rep["summary"]["status"] == "PASS" else EXIT_CHECKS), rep


# ---------------------------------------------------------------------------
# entry point

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trinoid", description="CMC trinoids by the DPW loop-group method.")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--weights", nargs=3, type=float, metavar=("W1", "W2", "W3"))
    g.add_argument("--necksizes", nargs=3, type=float, metavar=("N1", "N2", "N3"))
    g.add_argument("--delaunay", type=float, metavar="W", help="export a Delaunay surface of weight W")
    p.add_argument("--out", help="mesh file, .obj or .ply")
    p.add_argument("--report", help="JSON diagnostics report")
    p.add_argument("--samples", type=int, default=128, help="lambda samples N (default 128)")
    p.add_argument("--band", type=int, default=64, help="Laurent band K (default 64)")
    p.add_argument("--mesh-density", type=float, default=1.0)
    p.add_argument("--end-depth", type=float, default=3.5, help="end chart depth in Delaunay periods")
    p.add_argument("--no-diagnostics", action="store_true", help="omit raw eigenvalue curves from the report")
    p.add_argument("--check-only", action="store_true", help="admissibility and unitarizability only")
    p.add_argument("--experimental-cylinder-end", action="store_true", help="allow weight 1 (cylinder) ends")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def config_from_args(ns) -> JobConfig:
    return JobConfig(
        weights=tuple(ns.weights) if ns.weights else None,
        necksizes=tuple(ns.necksizes) if ns.necksizes else None,
        nsamples=ns.samples, band=ns.band, mesh_density=ns.mesh_density, end_depth=ns.end_depth,
        out=ns.out, report=ns.report, emit_diagnostics=not ns.no_diagnostics, check_only=ns.check_only, delaunay=ns.delaunay,
        allow_cylinder=ns.experimental_cylinder_end, threads=ns.threads, seed=ns.seed,
    )


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    if ns.weights is None and ns.necksizes is None and ns.delaunay is None:
        parser.error("one of --weights, --necksizes or --delaunay is required")
    try:
        cfg = config_from_args(ns)
    except ValueError as exc:
        parser.error(str(exc))
    try:
        if cfg.delaunay is not None:
            code, rep = run_delaunay(cfg)
        elif cfg.check_only:
            code, rep = run_check(cfg)
        else:
            code, rep = run_trinoid(cfg)
    except InvalidWeights as exc:
        msgs = exc.failures or [str(exc)]
        for m in msgs:
            print(f"error: {m}", file=sys.stderr)
        return EXIT_INVALID
    except WeightOutOfRange as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except PipelineFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(exc.cause, WeightOutOfRange):
            return EXIT_INVALID
        return EXIT_PIPELINE
    except TrinoidError as exc:
        print(f"error: stage 'pipeline' failed: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    if not cfg.emit_diagnostics:
        # summary-only report: drop the bulky raw curves
        rep.pop("eigenvalue_curves", None)
    if cfg.report:
        rep["schema_version"] = REPORT_SCHEMA_VERSION
        rep["version"] = __version__
        write_report(cfg.report, rep)
    if ns.verbose and not cfg.report:
        print(json.dumps(rep.get("summary", {}), indent=1))
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
