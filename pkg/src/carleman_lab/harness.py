"""Experiment orchestration and artifact emission.

Output directory layout::

    config.json                    normalised configuration
    kinetic/eps_<k>/snap_<j>.bin   kinetic snapshots (one directory per sweep member)
    kinetic/eps_<k>/steps.csv      per-step log
    limit/snap_<j>.bin             limit-equation snapshots
    convergence.csv                sweep table
    diagnostics.json               series, sweeps and verdicts
    certificates.json              barrier certificates (when requested)
    plots/*.svg                    written by the ``plot`` subcommand
    manifest.json                  every file above with its sha256

Nothing time- or host-dependent is written, so identical configs reproduce
identical bytes.
"""
from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import diagnostics as dg
from .barriers import calibrate_super_radius, calibrate_validity, certify_limit_sign, SUPER_FDE
from .config import ExperimentConfig
from .initial_data import build, evaluate
from .interaction import RateSpec
from .kinetic import FarField, KineticRun, advance
from .limit import LimitRun, advance_limit
from .model import KineticState, Region, TestCutoff
from .snapshots import Snapshot, read_binary, write_binary

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"


def sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class ArtifactWriter:
    """Single writer that records every emitted file for the manifest."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []
        existing = self.root / MANIFEST
        if existing.exists():
            self.files = sorted(json.loads(existing.read_text())["files"])

    def _track(self, path: Path) -> Path:
        rel = path.relative_to(self.root).as_posix()
        if rel not in self.files:
            self.files.append(rel)
        return path

    def text(self, rel: str, content: str) -> Path:
        p = self.root / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(content)
        return self._track(p)

    def snapshot(self, rel: str, snap: Snapshot) -> Path:
        p = self.root / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        write_binary(p, snap)
        return self._track(p)

    def adopt(self, path: Path) -> Path:
        return self._track(Path(path))

    def write_manifest(self) -> dict:
        manifest = {"files": {rel: sha256(self.root / rel) for rel in sorted(self.files)}}
        (self.root / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return manifest


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=dg._json_default) + "\n"


# ---------------------------------------------------------------------------


def certify_barriers(cfg: ExperimentConfig, writer: ArtifactWriter) -> list[dict]:
    opts = cfg.certify or {}
    eps_list = opts.get("epsilons", [0.1, 0.05])
    samples = int(opts.get("samples", 10_000))
    out = []
    for spec in (cfg.lower, cfg.upper):
        if spec is None:
            continue
        if spec.case == SUPER_FDE:
            spec, limit_cert = calibrate_super_radius(spec, samples=samples, seed=cfg.seed)
        else:
            limit_cert = certify_limit_sign(spec, samples=samples, seed=cfg.seed)
        out.append({"kind": "limit_sign", **asdict(limit_cert)})
        for eps in eps_list:
            cert = calibrate_validity(spec, eps, samples=samples, seed=cfg.seed)
            out.append({"kind": "kinetic_validity", **asdict(cert)})
    writer.text("certificates.json", _dump(out))
    return out


def _kinetic_member(cfg: ExperimentConfig, eps: float, u0: np.ndarray) -> KineticRun:
    params = cfg.params.with_epsilon(eps)
    rate = RateSpec(cfg.rate_kind, params.alpha)
    state = KineticState(u0.copy(), cfg.grid)
    far = None
    if cfg.grid.boundary != "periodic":
        far = FarField(cfg.grid, lambda X: evaluate(cfg.initial, X))
    region = Region.interior(cfg.grid, cfg.raw["region"]["fraction"])
    return advance(state, params, rate, cfg.t_end, cfg.snapshots, far_field=far,
                   substeps=cfg.raw["substeps"], region=region)


def run_experiment(cfg: ExperimentConfig, out_dir, threads: int = 1) -> tuple[dict, dg.DiagnosticsReport]:
    """Run every sweep member, the limit solver and the enabled diagnostics."""
    writer = ArtifactWriter(Path(out_dir))
    writer.text("config.json", cfg.normalized_json() + "\n")
    report = dg.DiagnosticsReport()
    if cfg.certify is not None:
        certs = certify_barriers(cfg, writer)
        for c in certs:
            report.add(dg.Verdict(f"certificate:{c['case']}:{c['kind']}:{c.get('epsilon')}",
                                  c["max_residual"], 0.0, bool(c["passed"]), {"coefficient": c.get("certified_coefficient")}))
    if cfg.certification_only:
        writer.text("diagnostics.json", report.to_json() + "\n")
        return writer.write_manifest(), report

    grid = cfg.grid
    u0 = build(cfg.initial, grid, cfg.params.alpha)
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        runs = list(pool.map(lambda e: _kinetic_member(cfg, e, u0), cfg.epsilons))
    for k, run in enumerate(runs):
        base = f"kinetic/eps_{k}"
        for j, s in enumerate(run.snapshots):
            writer.snapshot(f"{base}/snap_{j:04d}.bin", Snapshot(s.u, grid, s.t, "kinetic"))
        writer.text(f"{base}/steps.csv", run.step_log_csv())

    limit_run = None
    rho0 = u0.sum(axis=0)
    if cfg.raw.get("limit", True):
        profile = (lambda X: evaluate(cfg.initial, X).sum(axis=0)) if grid.boundary != "periodic" else None
        limit_run = advance_limit(rho0, grid, cfg.params.n, cfg.params.alpha, cfg.t_end, cfg.snapshots, profile=profile)
        for j, s in enumerate(limit_run.snapshots):
            writer.snapshot(f"limit/snap_{j:04d}.bin", Snapshot(s.rho[None], grid, s.t, "limit"))

    _diagnose(cfg, runs, limit_run, u0, report, writer)
    writer.text("diagnostics.json", report.to_json() + "\n")
    return writer.write_manifest(), report


def _diagnose(cfg, runs: list[KineticRun], limit_run: LimitRun | None, u0, report, writer):
    tol = cfg.raw["tolerances"]
    toggles = cfg.diagnostics
    grid = cfg.grid
    region = Region.interior(grid, cfg.raw["region"]["fraction"])
    lo0, hi0 = float(u0.min()), float(u0.max())
    for run in runs:
        eps = run.params.epsilon
        tag = f"eps={eps:g}"
        if toggles["mass"]:
            masses = [r.mass for r in run.steps]
            report.series[f"mass[{tag}]"] = masses
            if grid.boundary == "periodic":
                report.add(dg.mass_verdict(f"mass_conservation[{tag}]", masses, tol["mass"]))
        if toggles["bounds"]:
            lo, hi = run.bounds()
            worst = max(lo0 - lo, hi - hi0)
            report.add(dg.Verdict(f"bounds[{tag}]", worst, tol["bounds"], worst <= tol["bounds"],
                                  {"min_u": lo, "max_u": hi, "initial": [lo0, hi0]}))
        if toggles["flux_l2"] and len(run.snapshots) >= 2:
            phi = TestCutoff("smooth_bump", region.radius, tuple(region.center))
            f = dg.flux_l2(run, phi)
            report.series[f"flux_l2[{tag}]"] = [f.plain, f.weighted]
        if toggles["ficks"]:
            fr = dg.ficks_residual(run.final(), run.params, run.rate, region)
            report.series[f"ficks[{tag}]"] = fr.norms
        if toggles["entropy"]:
            phi = TestCutoff("smooth_bump", region.radius, tuple(region.center))
            report.series[f"entropy[{tag}]"] = dg.entropy_series(run, phi).tolist()
        if toggles["barrier_audit"] and (cfg.lower is not None or cfg.upper is not None):
            audit = dg.barrier_bound_audit(run, cfg.lower, cfg.upper, region)
            if audit.lower_margin is not None:
                report.add(dg.Verdict(f"lower_barrier[{tag}]", audit.lower_margin, tol["barrier_lower"],
                                      audit.lower_margin >= -tol["barrier_lower"], audit.lower_witness))
            if audit.upper_margin is not None:
                report.add(dg.Verdict(f"upper_barrier[{tag}]", audit.upper_margin, tol["barrier_upper"],
                                      audit.upper_margin <= tol["barrier_upper"], audit.upper_witness))
    if limit_run is not None:
        report.series["limit_mass"] = [dg.mass(s.rho, grid) for s in limit_run.snapshots]
        if toggles["convergence"] and runs:
            conv = dg.convergence_report(runs, limit_run, region)
            writer.text("convergence.csv", conv.to_csv())
            report.sweeps["convergence"] = {
                "rows": [asdict(r) for r in conv.rows],
                "reference_norm": conv.reference_norm,
                "rates": conv.rates,
            }
            if len(runs) > 1:
                report.add(dg.Verdict("error_decreasing", float(conv.error_decreasing), 1.0, conv.error_decreasing))
                report.add(dg.Verdict("isotropy_gap_decreasing", float(conv.gap_decreasing), 1.0, conv.gap_decreasing))


# ---------------------------------------------------------------------------
# post-processing from disk


def load_snapshots(directory: Path) -> list[Snapshot]:
    return [read_binary(p) for p in sorted(Path(directory).glob("snap_*.bin"))]


def emit_plots(out_dir) -> list[Path]:
    """Plot whatever series the artifact directory holds; returns written files."""
    from . import plots
    from .barriers import BarrierSpec, psi_eval

    root = Path(out_dir)
    writer = ArtifactWriter(root)
    written: list[Path] = []
    conv = root / "convergence.csv"
    if conv.exists():
        rows = [line.split(",") for line in conv.read_text().strip().splitlines()[1:]]
        if rows:
            eps = [float(r[0]) for r in rows]
            p = plots.convergence_plot(eps, [float(r[1]) for r in rows], [float(r[2]) for r in rows],
                                       root / "plots" / "convergence.svg")
            if p:
                written.append(writer.adopt(p))
    limit = load_snapshots(root / "limit")
    if limit:
        g = limit[0].grid
        x = g.axis_centers(0)
        profiles = {f"t={s.t:.4g}": plots.midline(s.fields[0]) for s in limit}
        p = plots.profile_plot(x, profiles, root / "plots" / "rho_limit.svg")
        if p:
            written.append(writer.adopt(p))
        cfg = json.loads((root / "config.json").read_text()) if (root / "config.json").exists() else {}
        barriers = (cfg.get("barriers") or {})
        kin_dirs = sorted((root / "kinetic").glob("eps_*")) if (root / "kinetic").exists() else []
        if kin_dirs and (barriers.get("lower") or barriers.get("upper")):
            kin = load_snapshots(kin_dirs[-1])[-1]
            X = g.coordinates()
            n = g.n
            prof = {"u_0": plots.midline(kin.fields[0])}
            if barriers.get("lower"):
                prof["Psi/4n"] = plots.midline(0.25 / n * psi_eval(BarrierSpec(**barriers["lower"]), X, kin.t))
            if barriers.get("upper"):
                prof["3Psibar/4n"] = plots.midline(0.75 / n * psi_eval(BarrierSpec(**barriers["upper"]), X, kin.t))
            p = plots.profile_plot(x, prof, root / "plots" / "barrier_section.svg", ylabel="density")
            if p:
                written.append(writer.adopt(p))
    diag = root / "diagnostics.json"
    if diag.exists():
        series = json.loads(diag.read_text()).get("series", {})
        contraction = {k: v for k, v in series.items() if k.startswith("contraction")}
        if contraction:
            t = list(range(len(next(iter(contraction.values())))))
            p = plots.series_plot(t, contraction, root / "plots" / "contraction.svg", "sum_i int (u_i - v_i)^+")
            if p:
                written.append(writer.adopt(p))
    if not written:
        log.warning("no plottable series found in %s", root)
    writer.write_manifest()
    return written


def summarize(out_dir) -> tuple[list[str], bool]:
    """Human-readable verdict lines from ``diagnostics.json`` and the overall status."""
    data = json.loads((Path(out_dir) / "diagnostics.json").read_text())
    lines = []
    ok = True
    for v in data["verdicts"]:
        ok &= bool(v["passed"])
        lines.append(f"{'PASS' if v['passed'] else 'FAIL'}  {v['name']}: value={v['value']:.6g} tol={v['tolerance']:g}")
    conv = data.get("sweeps", {}).get("convergence")
    if conv:
        for r in conv["rows"]:
            lines.append(f"eps={r['epsilon']:g}  e={r['error']:.6g}  isotropy_gap={r['isotropy_gap']:.6g}")
    return lines, ok
