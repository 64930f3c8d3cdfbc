"""Command line front end.

Four subcommands cover the pipeline: ``linearize`` certifies and exports
the pencil, ``predict`` computes the limiting density and outlier report,
``simulate`` draws finite matrices and post-processes their spectra
against the predictions, ``verify`` replays prediction-versus-simulation
checks and reports per-check pass/fail lines.

Every output file carries the configuration hash; ``verify`` refuses
inputs whose hash does not match its own effective configuration.  All
outputs are deterministic byte for byte — rerunning a command with the
same configuration rewrites identical files (timestamps only appear in
plots when ``--timestamp`` is given).

Exit codes: 0 success, 1 computational failure, 2 configuration error,
3 verification failure.
"""

from __future__ import annotations

import argparse
import datetime
import os
import sys
from typing import Optional

import numpy as np

from . import outliers, rmt_sim, spectrum, svgplot
from .config import ConfigError, RunConfig, load_config
from .linearize import (CertificationError, LinearizationPencil,
                        certify_pencil, export_pencil, linearize_selfadjoint)
from .measures import MeasureDomainError
from .outliers import OutlierError, OutlierReport
from .rmt_sim import ModelSpec, SimulationError
from .subordination import FreeModel, SubordinationError

__all__ = ["main"]

_HASH_PREFIX = "# config-hash "
_SVG_HASH_PREFIX = "<!-- config-hash "

_MODULE_OF = [
    (SubordinationError, "subordination"),
    (OutlierError, "outliers"),
    (SimulationError, "rmt_sim"),
    (CertificationError, "linearize"),
    (MeasureDomainError, "measures"),
]


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------

def _write(path: str, text: str) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def _stamped(cfg: RunConfig, payload: str) -> str:
    return _HASH_PREFIX + cfg.config_hash + "\n" + payload


def _file_hash(path: str) -> Optional[str]:
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line.startswith(_HASH_PREFIX):
                return line[len(_HASH_PREFIX):].strip()
            if line.startswith(_SVG_HASH_PREFIX):
                return line[len(_SVG_HASH_PREFIX):].split()[0]
    return None


def _svg_comments(cfg: RunConfig, args) -> list:
    comments = [f"config-hash {cfg.config_hash}"]
    if getattr(args, "timestamp", False):
        now = datetime.datetime.now(datetime.timezone.utc)
        comments.append(f"rendered {now.isoformat(timespec='seconds')}")
    return comments


def _build_pencil(cfg: RunConfig):
    """(pencil, certification report); inline coefficients are adopted as
    user-supplied, otherwise the pencil is constructed from the polynomial."""
    if cfg.inline_pencil is not None:
        pencil = LinearizationPencil(list(cfg.inline_pencil), cfg.poly,
                                     provenance="user_supplied")
    else:
        pencil = linearize_selfadjoint(cfg.poly)
    report = certify_pencil(pencil, cfg.poly)
    return pencil, report


def _certified_model(cfg: RunConfig) -> FreeModel:
    pencil, cert = _build_pencil(cfg)
    if not cert.ok:
        raise CertificationError(cert)
    return FreeModel(pencil, cfg.mu, cfg.nu)


def _grid_for(cfg: RunConfig, model: FreeModel) -> np.ndarray:
    gmin, gmax, points = cfg.grid_spec
    if gmin is None:
        extent = 1.2 * max(spectrum.radius_bound(model), 1.0)
        gmin, gmax = -extent, extent
    return np.linspace(gmin, gmax, points)


def _eta_kwargs(cfg: RunConfig) -> dict:
    return {} if cfg.eta_schedule is None else {"eta_schedule": cfg.eta_schedule}


def _compute_predictions(cfg: RunConfig, model: FreeModel, workers: int):
    profile = spectrum.density(model, grid=_grid_for(cfg, model),
                               workers=workers, **_eta_kwargs(cfg))
    if cfg.spikes.p > 0 and cfg.search_intervals:
        grid_step = float(profile.grid[1] - profile.grid[0])
        report = outliers.detect(model, cfg.spikes, cfg.search_intervals,
                                 criterion=cfg.criterion,
                                 support_intervals=profile.support_intervals,
                                 grid_step=grid_step, **_eta_kwargs(cfg))
        if report.zeros and cfg.spikes.distinct:
            report = outliers.residues(model, cfg.spikes, report)
    else:
        report = OutlierReport(zeros=[], undecidable=[],
                               criterion=cfg.criterion,
                               thetas=cfg.spikes.thetas,
                               distinct=cfg.spikes.distinct)
    return profile, report


def _write_predictions(cfg: RunConfig, args, profile, report) -> None:
    out = cfg.outdir
    _write(os.path.join(out, "density.csv"),
           _stamped(cfg, spectrum.serialize_profile(profile)))
    _write(os.path.join(out, "outliers.txt"),
           _stamped(cfg, outliers.serialize_report(report)))
    _write(os.path.join(out, "predict.svg"),
           svgplot.density_svg(profile, report,
                               comments=_svg_comments(cfg, args)))


def _load_predictions(cfg: RunConfig):
    """(profile, report) from the output directory, or None on any mismatch."""
    dens = os.path.join(cfg.outdir, "density.csv")
    outs = os.path.join(cfg.outdir, "outliers.txt")
    try:
        if (_file_hash(dens) != cfg.config_hash
                or _file_hash(outs) != cfg.config_hash):
            return None
        with open(dens) as fh:
            profile = spectrum.parse_profile(fh.read())
        with open(outs) as fh:
            report = outliers.parse_report(fh.read())
    except (OSError, ValueError):
        return None
    return profile, report


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_linearize(cfg: RunConfig, args) -> int:
    pencil, cert = _build_pencil(cfg)
    lines = [f"polynomial {cfg.poly.serialize()}",
             f"provenance {pencil.provenance}",
             f"pencil-size {pencil.n}",
             cert.summary()]
    _write(os.path.join(cfg.outdir, "pencil.txt"),
           _stamped(cfg, export_pencil(pencil)))
    _write(os.path.join(cfg.outdir, "certification.txt"),
           _stamped(cfg, "\n".join(lines) + "\n"))
    print(f"pencil of size {pencil.n} ({pencil.provenance}); "
          f"certified: {cert.ok}")
    return 0 if cert.ok else 1


def cmd_predict(cfg: RunConfig, args) -> int:
    model = _certified_model(cfg)
    profile, report = _compute_predictions(cfg, model, args.threads)
    _write_predictions(cfg, args, profile, report)
    sup = ", ".join(f"[{a:.4f}, {b:.4f}]" for a, b in profile.support_intervals)
    print(f"support: {sup or '(none found)'}; "
          f"atoms: {len(profile.atoms)}; mass {profile.mass:.6f}")
    for z in report.zeros:
        res = ""
        if z.residues is not None:
            res = "; residues " + ", ".join(f"{v:.4f}" for v in z.residues)
        print(f"outlier at {z.t:.10f} (multiplicity {z.m}{res})")
    for t, reason in report.undecidable:
        print(f"undecidable near {t:.6f}: {reason}")
    return 0


def cmd_simulate(cfg: RunConfig, args) -> int:
    loaded = _load_predictions(cfg)
    if loaded is None:
        model = _certified_model(cfg)
        loaded = _compute_predictions(cfg, model, args.threads)
        _write_predictions(cfg, args, *loaded)
        print("predictions recomputed (no matching predict outputs found)")
    profile, report = loaded

    for size in cfg.sizes:
        spec = ModelSpec(poly=cfg.poly, mu=cfg.mu, nu=cfg.nu,
                         spikes=cfg.spikes, ensemble=cfg.ensemble, size=size,
                         bulk_placement=cfg.bulk_placement)
        results = rmt_sim.run_many(spec, cfg.seeds, profile=profile,
                                   report=report, workers=args.threads)
        pooled = []
        pooled_outliers = []
        for res in results:
            _write(os.path.join(cfg.outdir, f"sim_N{size}_seed{res.seed}.txt"),
                   _stamped(cfg, rmt_sim.serialize_result(res)))
            pooled.append(res.eigenvalues)
            pooled_outliers.extend(res.empirical_outliers)
            print(f"N={size} seed={res.seed}: "
                  f"{len(res.empirical_outliers)} empirical outlier(s)"
                  + "".join(f" {x:.4f}" for x in res.empirical_outliers))
        svg = svgplot.histogram_svg(
            np.concatenate(pooled), profile=profile, report=report,
            empirical_outliers=pooled_outliers,
            title=f"simulated spectrum, N={size}, {len(results)} run(s)",
            comments=_svg_comments(cfg, args))
        _write(os.path.join(cfg.outdir, f"simulate_N{size}.svg"), svg)
    return 0


class _VerifyRefusal(Exception):
    """Verification could not even start (missing or mismatched inputs)."""


def _checked_read(cfg: RunConfig, name: str) -> str:
    path = os.path.join(cfg.outdir, name)
    if not os.path.exists(path):
        raise _VerifyRefusal(f"missing input {path}; "
                             "run predict/simulate first")
    found = _file_hash(path)
    if found != cfg.config_hash:
        raise _VerifyRefusal(
            f"{path} was produced under config hash "
            f"{found or '(none)'}, current configuration hashes to "
            f"{cfg.config_hash}")
    with open(path) as fh:
        return fh.read()


def _match_positions(predicted, empirical):
    """Worst distance from each predicted location to its nearest empirical
    outlier (predictions with multiplicity appear once per unit)."""
    worst = 0.0
    for t in predicted:
        worst = max(worst, min(abs(t - x) for x in empirical))
    return worst


def cmd_verify(cfg: RunConfig, args) -> int:
    checks = []          # (name, ok or None for skip, detail)

    def add(name, ok, measured, expected, tol, key=None):
        flag = " [tolerance overridden]" if (
            key is not None and f"verify.{key}" in cfg.overridden) else ""
        checks.append((name, ok,
                       f"measured={measured} expected={expected} "
                       f"tol={tol}{flag}"))

    try:
        profile = spectrum.parse_profile(_checked_read(cfg, "density.csv"))
        report = outliers.parse_report(_checked_read(cfg, "outliers.txt"))

        tol = cfg.tolerances
        if profile.full_coverage:
            add("profile-mass", abs(profile.mass - 1.0) <= tol["mass_tol"],
                f"{profile.mass:.6f}", "1", tol["mass_tol"], key="mass_tol")

        predicted = [z.t for z in report.zeros for _ in range(z.m)]
        for size in cfg.sizes:
            for seed in cfg.seeds:
                name = f"N{size}_seed{seed}"
                res = rmt_sim.parse_result(
                    _checked_read(cfg, f"sim_{name}.txt"))
                emp = list(res.empirical_outliers)

                add(f"outlier-count[{name}]", len(emp) == len(predicted),
                    len(emp), len(predicted), "exact")
                if predicted and emp:
                    worst = _match_positions(predicted, emp)
                    add(f"outlier-position[{name}]",
                        worst <= tol["position_tol"], f"{worst:.4f}",
                        "0", tol["position_tol"], key="position_tol")

                ks = rmt_sim.bulk_ks(res.eigenvalues, profile, exclude=emp)
                add(f"bulk-ks[{name}]", ks <= tol["ks_tol"], f"{ks:.4f}",
                    "0", tol["ks_tol"], key="ks_tol")

                if res.overlaps is not None:
                    for j, z in enumerate(report.zeros):
                        if z.residues is None:
                            continue
                        col = res.overlaps[:, j]
                        if not np.any(col):
                            checks.append(
                                (f"overlap[{name},t={z.t:.4f}]", None,
                                 "no eigenvalue inside the overlap window"))
                            continue
                        worst = float(np.max(np.abs(
                            col - np.asarray(z.residues))))
                        add(f"overlap[{name},t={z.t:.4f}]",
                            worst <= tol["overlap_tol"], f"{worst:.4f}",
                            "0", tol["overlap_tol"], key="overlap_tol")
    except _VerifyRefusal as exc:
        print(f"verification refused: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"verification refused: unreadable input ({exc})",
              file=sys.stderr)
        return 3

    lines = []
    for name, ok, detail in checks:
        status = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
        lines.append(f"{status} {name}: {detail}")
    n_fail = sum(1 for _, ok, _ in checks if ok is False)
    lines.append(f"verified {len(checks)} check(s), {n_fail} failure(s)")
    text = "\n".join(lines) + "\n"
    _write(os.path.join(cfg.outdir, "verify_report.txt"), _stamped(cfg, text))
    print(text, end="")
    return 0 if n_fail == 0 else 3


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="freespec",
        description="Spectra of selfadjoint polynomials in deterministic "
                    "plus random matrices: predicted limits and Monte Carlo "
                    "checks.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, help_text in [
            ("linearize", cmd_linearize,
             "construct (or adopt) and certify the linearization pencil"),
            ("predict", cmd_predict,
             "compute the limiting density and outlier report"),
            ("simulate", cmd_simulate,
             "sample finite matrices and post-process their spectra"),
            ("verify", cmd_verify,
             "check simulation outputs against predictions")]:
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(fn=fn)
        p.add_argument("--config", required=True, metavar="PATH",
                       help="TOML run configuration")
        p.add_argument("--out", metavar="DIR",
                       help="output directory (wins over the config file)")
        p.add_argument("--seed", type=int,
                       help="replace the configured seed list by this seed")
        p.add_argument("--threads", type=int, default=1,
                       help="worker processes for grid points / trials")
        p.add_argument("--override", action="append", default=[],
                       metavar="KEY=VALUE",
                       help="set a config key (e.g. verify.ks_tol=0.1); "
                            "may be repeated")
        p.add_argument("--timestamp", action="store_true",
                       help="embed a render timestamp in SVG outputs "
                            "(breaks byte-identical reruns)")
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config, overrides=args.override,
                          out=args.out, seed=args.seed)
        if cfg.outdir != ".":
            os.makedirs(cfg.outdir, exist_ok=True)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        return args.fn(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except tuple(t for t, _ in _MODULE_OF) as exc:
        module = next(m for t, m in _MODULE_OF if isinstance(exc, t))
        print(f"computational failure in {module}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
