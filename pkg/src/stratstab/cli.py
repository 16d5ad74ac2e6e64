"""Command-line experiment runner.

Subcommands run the pipeline up to a given stage::

    spectrum    model -> eigensystem, unstable index
    synthesize  ... -> actuators and noise design
    simulate    ... -> closed-loop ensemble
    certify     ... -> decay certificate (or certify saved trajectories)
    run         full chain plus summary
    sweep       tabulate rates over sigma or mask width

Exit codes: 0 PASS, 1 FAIL, 2 usage or configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .certify import DecayCertificate, baseline_growth, certify_decay, mean_square_decay
from .config import ExperimentConfig, load_config
from .errors import NumericalError, StratstabError, ValidationError
from .matrixio import format_float, matrix_roundtrip
from .model import AdvectionDiffusionSpec, OperatorModel, build_advection_diffusion, subdomain_mask
from .sde import LyapunovParams, SdeSystem, SimulationParams, Trajectory, ensemble_summary, simulate_closed_loop
from .spectral import (
    SpectralData,
    UnstableDecomposition,
    biorthonormalize,
    check_semisimple,
    eigendecompose,
    select_unstable_index,
)
from .synthesis import (
    FeedbackLaw,
    build_actuators,
    build_feedback,
    build_real_basis,
    build_real_feedback,
    estimate_design_rate,
    synthesize_noise_matrices,
    tune_noise_intensity,
)

__all__ = ["ExperimentReport", "PipelineError", "run_pipeline", "run_sweep", "main", "read_trajectories"]

log = logging.getLogger("stratstab")

OUT_ENV = "STRATSTAB_OUT"
DEFAULT_OUT = "stratstab-out"
STAGES = ("model", "spectrum", "synthesis", "simulate", "certify")
EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2, 3


class PipelineError(StratstabError):
    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class ExperimentReport:
    out_dir: Path
    model: OperatorModel | None = None
    spec: SpectralData | None = None
    dec: UnstableDecomposition | None = None
    law: FeedbackLaw | None = None
    synthesis: dict | None = None
    ensemble: list | None = None
    certificate: DecayCertificate | None = None
    baseline_rate: float | None = None
    mean_square_rate: float | None = None
    files: list = field(default_factory=list)

    @property
    def verdict(self):
        return self.certificate.verdict if self.certificate is not None else None


def _fmt(x):
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return format_float(x)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _jsonable(v):
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if np.isfinite(v) else str(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def _write_json(path, data):
    Path(path).write_text(json.dumps({k: _jsonable(v) for k, v in data.items()}, indent=2) + "\n")


def _resolve_out(cfg: ExperimentConfig) -> Path:
    return Path(cfg.output.directory or os.environ.get(OUT_ENV) or DEFAULT_OUT)


def build_model(cfg: ExperimentConfig) -> OperatorModel:
    m = cfg.model
    if m.kind == "advdiff":
        model = build_advection_diffusion(AdvectionDiffusionSpec(n=m.n, nu=m.nu, f=m.f, c=m.c))
    else:
        model = matrix_roundtrip(m.path)
    return subdomain_mask(model, cfg.mask.lo, cfg.mask.hi)


def initial_state(cfg: ExperimentConfig, model: OperatorModel):
    if cfg.sde.x0 == "ones":
        x0 = np.ones(model.dim)
    else:
        x0 = np.random.default_rng(cfg.sde.seed).standard_normal(model.dim)
    return x0 / model.norm(x0)


def _tuning_params(cfg, seed_shift=0):
    return LyapunovParams(paths=cfg.controller.tuning_paths, T=cfg.controller.tuning_T,
                          seed=cfg.sde.seed + seed_shift)


def synthesize_law(cfg: ExperimentConfig, model, spec, dec, sigma=None):
    """Feedback law for the configured controller kind; ``sigma`` overrides the config."""
    N = dec.N
    ctl = cfg.controller
    sigma = ctl.sigma if sigma is None else sigma
    params = _tuning_params(cfg)
    if ctl.kind == "real":
        basis = build_real_basis(spec, N)
        law = build_real_feedback(basis, model, sigma=sigma, target_rate=ctl.target_rate, params=params)
    else:
        act = build_actuators(spec, N, model)
        if sigma is not None:
            noise = synthesize_noise_matrices(spec.eigenvalues[:N], sigma)
        else:
            noise = tune_noise_intensity(np.diag(spec.eigenvalues[:N]), ctl.target_rate, params)
        law = build_feedback(noise, spec, act, model)
    if law.noise.achieved_rate is None:
        est = estimate_design_rate(law.modal_generator, law.noise, params)
        law = replace(law, noise=replace(law.noise, achieved_rate=est.value, stderr=est.stderr,
                                         certified=bool(est.value + 2 * est.stderr < 0)))
    return law


def _synthesis_record(law: FeedbackLaw, N):
    return {
        "N": N,
        "M": law.noise.M,
        "sigma": law.noise.sigma,
        "achieved_rate": law.noise.achieved_rate,
        "gram_condition": law.actuators.condition_number,
        "eq18_residual": law.actuators.residual,
        "kind": law.kind,
    }


def _simulation_params(cfg, paths=None):
    return SimulationParams(T=cfg.sde.T, dt=cfg.sde.dt, paths=paths or cfg.sde.paths, seed=cfg.sde.seed,
                            record_dt=cfg.sde.record_dt, scheme=cfg.sde.scheme, reduced=False)


def _uncontrolled_ensemble(model, dec, x0, cfg):
    """Already-stable model: deterministic paths, identical across the ensemble."""
    from .sde import integrate_ensemble

    dt = cfg.sde.dt or 1e-3
    every = max(1, int(round(cfg.sde.record_dt / dt)))
    system = SdeSystem(-model.generator, np.zeros((0, model.dim, model.dim)))
    trs = integrate_ensemble(system, x0, dt, cfg.sde.T, seed=cfg.sde.seed, paths=cfg.sde.paths,
                             scheme="split", record_every=every, weights=model.weights, keep_states=False)
    for tr in trs:
        tr.norm_u = np.zeros_like(tr.norms)
        tr.norm_s = tr.norms.copy()
    return trs


def _write_trajectories(out: Path, ensemble, per_path: bool, files):
    if per_path:
        pdir = out / "paths"
        pdir.mkdir(parents=True, exist_ok=True)
        for tr in ensemble:
            p = pdir / f"path_{tr.path:05d}.csv"
            _write_csv(p, ["t", "norm_X", "norm_Xu", "norm_Xs"],
                       zip(tr.times, tr.norms, tr.norm_u, tr.norm_s))
            files.append(p)
    summ = ensemble_summary(ensemble)
    p = out / "ensemble.csv"
    _write_csv(p, ["t", "mean_log_norm", "q10", "q90"],
               zip(summ["t"], summ["mean_log_norm"], summ["q10"], summ["q90"]))
    files.append(p)


def read_trajectories(directory) -> list[Trajectory]:
    """Load ``path_*.csv`` files written by ``simulate``."""
    directory = Path(directory)
    if (directory / "paths").is_dir():
        directory = directory / "paths"
    files = sorted(directory.glob("path_*.csv"))
    if not files:
        raise ValidationError(f"no trajectory files path_*.csv in {directory}")
    out = []
    for f in files:
        with open(f, newline="") as fh:
            rows = list(csv.reader(fh))
        if rows[0] != ["t", "norm_X", "norm_Xu", "norm_Xs"]:
            raise ValidationError(f"{f}: unexpected header {rows[0]}")
        try:
            a = np.array(rows[1:], dtype=float)
        except ValueError:
            raise ValidationError(f"{f}: non-numeric entry") from None
        out.append(Trajectory(times=a[:, 0], norms=a[:, 1], seed=-1, path=int(f.stem.split("_")[1]),
                              dt=float("nan"), norm_u=a[:, 2], norm_s=a[:, 3]))
    return out


def _summary_text(rep: ExperimentReport, cfg: ExperimentConfig):
    lines = [f"model: {rep.model.label}", f"mask: ({cfg.mask.lo:g}, {cfg.mask.hi:g})"]
    if rep.dec is not None:
        lam = rep.spec.eigenvalues
        lines.append(f"N={rep.dec.N}")
        lines.append(f"sum_re={format_float(rep.dec.trace_sum)}")
        lines.append(f"stable_rate={format_float(rep.dec.stable_rate)}")
        lines.append("leading eigenvalues: " + ", ".join(
            f"{format_float(z.real)}{z.imag:+.6g}i" for z in lam[:max(rep.dec.N + 1, 1)]))
    if rep.synthesis is not None:
        s = rep.synthesis
        lines.append(f"controller={s['kind']} M={s['M']} sigma={format_float(s['sigma'])}")
        lines.append(f"modal rate estimate={format_float(s['achieved_rate'])}")
        lines.append(f"gram condition={format_float(s['gram_condition'])} "
                     f"actuator identity residual={format_float(s['eq18_residual'])}")
    if rep.baseline_rate is not None:
        lines.append(f"uncontrolled growth rate={format_float(rep.baseline_rate)}")
    if rep.mean_square_rate is not None:
        lines.append(f"mean-square decay rate of stable part={format_float(rep.mean_square_rate)}")
    if rep.certificate is not None:
        c = rep.certificate
        lines.append(f"paths={c.paths} gamma_hat={format_float(c.gamma_hat)} gamma={format_float(c.gamma)} "
                     f"C_hat={format_float(c.C_hat)} fraction={format_float(c.fraction_satisfying)}")
        lines.append(f"verdict: {c.verdict}")
    return "\n".join(lines) + "\n"


def run_pipeline(cfg: ExperimentConfig, until: str = "certify", summary: bool = True) -> ExperimentReport:
    """Run the stages up to and including ``until``, writing outputs as each completes.

    Errors are re-raised as ``PipelineError`` naming the stage; files already
    written stay on disk.
    """
    if until not in STAGES:
        raise ValidationError(f"unknown stage {until!r}")
    cfg.validate()
    out = _resolve_out(cfg)
    out.mkdir(parents=True, exist_ok=True)
    rep = ExperimentReport(out_dir=out)
    stage = "model"
    try:
        rep.model = build_model(cfg)
        if until == "model":
            return rep

        stage = "spectrum"
        spec = eigendecompose(rep.model)
        dec = select_unstable_index(spec)
        spec = biorthonormalize(spec, dec.N) if dec.N else spec
        semi = check_semisimple(spec, dec.N)
        rep.spec, rep.dec = spec, dec
        p = out / "spectrum.csv"
        _write_csv(p, ["index", "re", "im", "residual"],
                   ((i + 1, z.real, z.imag, r) for i, (z, r) in enumerate(zip(spec.eigenvalues, spec.residuals))))
        rep.files.append(p)
        p = out / "spectrum.json"
        _write_json(p, {"N": dec.N, "sum_re": dec.trace_sum, "stable_rate": dec.stable_rate,
                        "semisimple": bool(semi)})
        rep.files.append(p)
        if not semi:
            raise ValidationError(f"leading eigenvalues are not semisimple: {semi.defective}")
        log.info("spectrum: N=%d sum_re=%.6g", dec.N, dec.trace_sum)
        if until == "spectrum":
            return rep

        stage = "synthesis"
        if dec.N:
            rep.law = synthesize_law(cfg, rep.model, spec, dec)
            rep.synthesis = _synthesis_record(rep.law, dec.N)
        else:
            rep.synthesis = {"N": 0, "M": 0, "sigma": 0.0, "achieved_rate": -dec.stable_rate,
                             "gram_condition": 1.0, "eq18_residual": 0.0, "kind": "none"}
        p = out / "synthesis.json"
        _write_json(p, rep.synthesis)
        rep.files.append(p)
        log.info("synthesis: sigma=%.6g rate=%.6g", rep.synthesis["sigma"], rep.synthesis["achieved_rate"])
        if until == "synthesis":
            return rep

        stage = "simulate"
        x0 = initial_state(cfg, rep.model)
        if rep.law is None:
            rep.ensemble = _uncontrolled_ensemble(rep.model, dec, x0, cfg)
        else:
            rep.ensemble = simulate_closed_loop(rep.model, dec, rep.law, x0, _simulation_params(cfg))
        _write_trajectories(out, rep.ensemble, cfg.output.per_path, rep.files)
        log.info("simulate: %d paths", len(rep.ensemble))
        if until == "simulate":
            return rep

        stage = "certify"
        rep.certificate = certify_decay(rep.ensemble, cfg.certify.gamma, cfg.certify.window)
        rep.baseline_rate = baseline_growth(rep.model, x0, cfg.sde.T)
        if len(rep.ensemble) >= 8:
            rep.mean_square_rate = mean_square_decay(rep.ensemble, cfg.certify.window).rate
        p = out / "certificate.json"
        _write_json(p, rep.certificate.as_dict())
        rep.files.append(p)
    except StratstabError as exc:
        raise PipelineError(stage, exc) from exc
    finally:
        if summary and rep.model is not None:
            p = out / "summary.txt"
            p.write_text(_summary_text(rep, cfg))
            if p not in rep.files:
                rep.files.append(p)
    return rep


def run_sweep(cfg: ExperimentConfig, param=None, values=None):
    """Rates over a sigma grid (modal system) or mask widths (closed loop)."""
    param = param or cfg.sweep.param
    values = tuple(values) if values is not None else cfg.sweep.values
    if not values:
        raise ValidationError("sweep needs at least one value")
    out = _resolve_out(cfg)
    out.mkdir(parents=True, exist_ok=True)
    base = build_model(cfg)
    rows = []
    if param == "sigma":
        spec = eigendecompose(base)
        dec = select_unstable_index(spec)
        if dec.N == 0:
            raise ValidationError("model is already stable; nothing to sweep")
        spec = biorthonormalize(spec, dec.N)
        params = replace(_tuning_params(cfg), paths=cfg.sweep.paths)
        for s in values:
            law = synthesize_law(replace(cfg, controller=replace(cfg.controller, sigma=s)), base, spec, dec)
            est = estimate_design_rate(law.modal_generator, law.noise, params)
            rows.append((s, est.value, est.stderr))
        header = ["sigma", "rate", "stderr"]
    elif param == "mask_width":
        centre = 0.5 * (cfg.mask.lo + cfg.mask.hi)
        spec0 = None
        for width in values:
            lo, hi = max(0.0, centre - width / 2), min(1.0, centre + width / 2)
            model = subdomain_mask(base, lo, hi)
            if spec0 is None:
                spec0 = eigendecompose(model)
                dec = select_unstable_index(spec0)
                if dec.N == 0:
                    raise ValidationError("model is already stable; nothing to sweep")
                spec0 = biorthonormalize(spec0, dec.N)
            law = synthesize_law(cfg, model, spec0, dec)
            trs = simulate_closed_loop(model, dec, law, initial_state(cfg, model),
                                       _simulation_params(cfg, paths=cfg.sweep.paths))
            cert = certify_decay(trs, cfg.certify.gamma, cfg.certify.window)
            rows.append((width, law.actuators.condition_number, law.noise.sigma, cert.mean_rate, cert.rate_stderr))
        header = ["mask_width", "gram_condition", "sigma", "mean_decay_rate", "stderr"]
    else:
        raise ValidationError(f"unknown sweep parameter {param!r}")
    p = out / "sweep.csv"
    _write_csv(p, header, rows)
    return p, header, rows


def _parser():
    ap = argparse.ArgumentParser(prog="stratstab", description="Stabilization of linear systems by multiplicative noise feedback.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="experiment TOML file")
    common.add_argument("--seed", type=int, help="override sde.seed")
    common.add_argument("--out", help=f"output directory (default: config, then ${OUT_ENV}, then ./{DEFAULT_OUT})")
    common.add_argument("--paths", type=int, help="override sde.paths")
    common.add_argument("--quiet", action="store_true", help="print nothing but errors")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("spectrum", parents=[common], help="eigensystem and unstable index")
    sub.add_parser("synthesize", parents=[common], help="actuators and noise design")
    sub.add_parser("simulate", parents=[common], help="closed-loop ensemble")
    c = sub.add_parser("certify", parents=[common], help="decay certificate")
    c.add_argument("--trajectories", help="certify saved path_*.csv files instead of simulating")
    sub.add_parser("run", parents=[common], help="full pipeline with summary")
    s = sub.add_parser("sweep", parents=[common], help="tabulate rates over sigma or mask width")
    s.add_argument("--param", choices=("sigma", "mask_width"))
    s.add_argument("--values", help="comma-separated values")
    return ap


def _print(args, text):
    if not args.quiet:
        print(text)


def _dispatch(args):
    cfg = load_config(args.config).with_overrides(seed=args.seed, paths=args.paths, out=args.out)
    if args.command == "sweep":
        values = None
        if args.values:
            try:
                values = [float(v) for v in args.values.split(",")]
            except ValueError:
                raise ValidationError(f"--values must be comma-separated numbers, got {args.values!r}") from None
        p, header, rows = run_sweep(cfg, args.param, values)
        _print(args, ",".join(header))
        for r in rows:
            _print(args, ",".join(_fmt(v) for v in r))
        return EXIT_PASS
    if args.command == "certify" and args.trajectories:
        cert = certify_decay(read_trajectories(args.trajectories), cfg.certify.gamma, cfg.certify.window)
        out = _resolve_out(cfg)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "certificate.json", cert.as_dict())
        _print(args, json.dumps({k: _jsonable(v) for k, v in cert.as_dict().items()}))
        return EXIT_PASS if cert.passed else EXIT_FAIL
    until = {"spectrum": "spectrum", "synthesize": "synthesis", "simulate": "simulate",
             "certify": "certify", "run": "certify"}[args.command]
    rep = run_pipeline(cfg, until=until, summary=args.command == "run")
    if args.command == "run":
        _print(args, (rep.out_dir / "summary.txt").read_text().rstrip())
    else:
        _print(args, f"wrote {len(rep.files)} files to {rep.out_dir}")
    if rep.certificate is not None:
        if args.command != "run":
            _print(args, f"verdict: {rep.verdict}")
        return EXIT_PASS if rep.certificate.passed else EXIT_FAIL
    return EXIT_PASS


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        return _dispatch(args)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE if isinstance(exc.cause, ValidationError) else EXIT_NUMERICAL
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
