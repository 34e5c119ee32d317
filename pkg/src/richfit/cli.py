"""``richfit`` command line: simulate | fit | fpt | curve.

Settings come from a TOML file with dotted keys (see ``DEFAULTS``) and may be
overridden by flags.  Exit codes: 0 success, 2 validation error, 3 numerical
failure.
"""
from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path
from typing import Any

import numpy as np

from . import growth, inference, io
from .diffusion import DiffusionParams, InitialLaw, simulate_paths
from .errors import NumericalError, RichfitError, ValidationError
from .fpt import density_sup_gap, fpt_integral_equation, fpt_monte_carlo, fpt_summary
from .optimize import METHODS, OptBudget

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "model.q": 2.0, "model.k": 0.5, "model.eta": 0.2, "model.t0": 0.0, "model.x0": 2.0, "model.sigma": 0.01,
    "perturbation.kind": "power", "perturbation.m": 1.0, "perturbation.p": 0.5, "perturbation.t_star": None,
    "perturbation.y": None, "perturbation.alpha": None, "perturbation.beta": None,
    "init.kind": "degenerate", "init.mu0": None, "init.sigma0_sq": 0.0,
    "grid.t_end": 10.0, "grid.dt": 0.1,
    "simulate.n_paths": 25, "simulate.layout": "long",
    "fit.data": None, "fit.layout": "long", "fit.subsample": 1, "fit.p": 0.5, "fit.method": "sa",
    "fit.replications": 30, "fit.budget": 20_000, "fit.window_end": None, "fit.fpt": True,
    "fit.fpt_paths": 100_000, "fit.fpt_dt": 0.01, "fit.fpt_boundary": "estimated",
    "fpt.report": None, "fpt.boundary": None, "fpt.p": 0.5, "fpt.horizon": None, "fpt.n_paths": 100_000,
    "fpt.dt": 0.01, "fpt.nodes": 1000,
}


def build_config(path: str | None, overrides: dict[str, Any]) -> dict[str, Any]:
    cfg = dict(DEFAULTS)
    if path:
        loaded = io.load_config(path)
        unknown = sorted(set(loaded) - set(DEFAULTS))
        if unknown:
            raise ValidationError(f"unknown config keys: {', '.join(unknown)}")
        cfg.update(loaded)
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    return cfg


def _num(cfg, key, kind=float, positive=False):
    v = cfg[key]
    try:
        v = kind(v)
    except (TypeError, ValueError):
        raise ValidationError(f"{key}: expected a {kind.__name__}, got {cfg[key]!r}") from None
    if kind is float and not math.isfinite(v):
        raise ValidationError(f"{key}: must be finite")
    if positive and not v > 0:
        raise ValidationError(f"{key}: must be positive")
    return v


def parse_p(value) -> float | list[float]:
    """``0.5`` or ``"0.3,0.5,0.7"`` (or a TOML list) into a value or candidate list."""
    is_list = isinstance(value, (list, tuple)) or (isinstance(value, str) and "," in value)
    items = list(value) if isinstance(value, (list, tuple)) else str(value).split(",")
    try:
        ps = [float(s) for s in items if str(s).strip()]
    except ValueError:
        raise ValidationError(f"p: cannot parse {value!r}") from None
    if not ps or not all(math.isfinite(p) and p > 0 for p in ps):
        raise ValidationError("p values must be positive")
    return ps if is_list else ps[0]


def richards_from(cfg) -> growth.RichardsParams:
    return growth.RichardsParams(q=_num(cfg, "model.q"), k=_num(cfg, "model.k"), eta=_num(cfg, "model.eta"),
                                 t0=_num(cfg, "model.t0"), x0=_num(cfg, "model.x0"))


def perturbation_from(cfg, r: growth.RichardsParams) -> growth.Perturbation:
    kind = cfg["perturbation.kind"]
    if kind == "none":
        return growth.Perturbation.none()
    if cfg["perturbation.t_star"] is not None:
        t_star = _num(cfg, "perturbation.t_star")
    else:
        t_star = growth.switch_time(r, _num(cfg, "perturbation.p", positive=True))
    if kind == "power":
        return growth.Perturbation.power(_num(cfg, "perturbation.m"), t_star)
    if kind == "sigmoid":
        return growth.Perturbation.sigmoid(_num(cfg, "perturbation.y"), _num(cfg, "perturbation.alpha"),
                                           _num(cfg, "perturbation.beta"), t_star)
    raise ValidationError(f"perturbation.kind must be none, power or sigmoid, got {kind!r}")


def init_from(cfg, r: growth.RichardsParams) -> InitialLaw:
    kind = cfg["init.kind"]
    if kind == "degenerate":
        return InitialLaw.degenerate(r.x0)
    if kind == "lognormal":
        mu0 = math.log(r.x0) if cfg["init.mu0"] is None else _num(cfg, "init.mu0")
        return InitialLaw.lognormal(mu0, _num(cfg, "init.sigma0_sq"))
    raise ValidationError(f"init.kind must be degenerate or lognormal, got {kind!r}")


def grid_from(cfg, t0: float) -> np.ndarray:
    t_end, dt = _num(cfg, "grid.t_end"), _num(cfg, "grid.dt", positive=True)
    if not t_end > t0:
        raise ValidationError("grid.t_end must exceed model.t0")
    n = int(round((t_end - t0) / dt))
    if n < 1 or not math.isclose(t0 + n * dt, t_end, rel_tol=1e-9, abs_tol=1e-12):
        raise ValidationError("grid.dt must divide grid.t_end - model.t0")
    return t0 + dt * np.arange(n + 1)


def diffusion_from(cfg) -> tuple[DiffusionParams, InitialLaw]:
    r = richards_from(cfg)
    return DiffusionParams(r, _num(cfg, "model.sigma", positive=True), perturbation_from(cfg, r)), init_from(cfg, r)


def _out(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ValidationError(f"cannot create output directory {out}: {exc}") from exc
    return out


def command_simulate(cfg, out: Path) -> list[Path]:
    params, init = diffusion_from(cfg)
    grid = grid_from(cfg, params.richards.t0)
    n_paths = _num(cfg, "simulate.n_paths", int, positive=True)
    seed = _num(cfg, "seed", int)
    paths = simulate_paths(params, init, grid, n_paths, seed)
    r = params.richards
    meta = {"command": "simulate", "seed": seed, "n_paths": n_paths, "layout": cfg["simulate.layout"],
            "params": {"q": r.q, "k": r.k, "eta": r.eta, "t0": r.t0, "x0": r.x0, "sigma": params.sigma},
            "perturbation": params.perturbation.to_dict(), "initial_law": {"mu0": init.mu0, "sigma0_sq": init.sigma0_sq},
            "grid": {"t0": float(grid[0]), "t_end": float(grid[-1]), "n": int(grid.size)}}
    return [io.write_paths_csv(paths, out / "paths.csv", cfg["simulate.layout"]),
            io.write_json(out / "metadata.json", meta, "simulation")]


def _summary_text(rep: inference.FitReport) -> str:
    r = rep.mle.richards
    lines = [f"p = {rep.p:g}",
             f"MLE: q = {r.q:.6g}, k = {r.k:.6g}, eta = {r.eta:.6g}, sigma = {rep.mle.sigma:.6g}",
             f"initial law: mu1 = {rep.init_mle[0]:.6g}, sigma1^2 = {rep.init_mle[1]:.6g}",
             f"fit window end = {rep.window_end:g}",
             f"t* (deterministic) = {rep.t_star_det:.6g}"]
    if rep.t_star_fpt is not None:
        s = rep.t_star_fpt
        lines.append(f"t* (FPT mean) = {s.mean:.6g}, sd = {s.std_dev:.6g}")
    lines.append(f"RAE(sample mean, reconstructed mean) = {rep.rae_mean:.6g}")
    if len(rep.candidates) > 1:
        lines.append("candidates: " + ", ".join(f"p={p:g}: {v:.6g}" for p, v in sorted(rep.candidates.items())))
    lines += [f"warning: {w}" for w in rep.warnings]
    return "\n".join(lines) + "\n"


def command_fit(cfg, out: Path) -> list[Path]:
    if not cfg["fit.data"]:
        raise ValidationError("fit needs a dataset (positional DATA or fit.data)")
    method = cfg["fit.method"]
    if method not in METHODS:
        raise ValidationError(f"fit.method must be one of {sorted(METHODS)}")
    p = parse_p(cfg["fit.p"])
    n_rep = _num(cfg, "fit.replications", int, positive=True)
    budget = OptBudget(_num(cfg, "fit.budget", int, positive=True), seed=_num(cfg, "seed", int))
    every = _num(cfg, "fit.subsample", int, positive=True)
    window = None if cfg["fit.window_end"] is None else _num(cfg, "fit.window_end")
    fpt_cfg = inference.FptConfig(n_paths=_num(cfg, "fit.fpt_paths", int, positive=True),
                                  dt=_num(cfg, "fit.fpt_dt", positive=True), seed=_num(cfg, "seed", int),
                                  boundary_source=cfg["fit.fpt_boundary"])
    data = io.ingest_csv(cfg["fit.data"], cfg["fit.layout"])
    if every > 1:
        data = data.subsample(every)
    rep = inference.run_procedure1(data, p, method, budget, n_rep, fpt_cfg, bool(cfg["fit.fpt"]), window)
    grid, mean = data.sample_mean()
    fitted = inference.reconstructed_mean(rep.mle, rep.c_hat, grid)
    payload = rep.to_dict()
    payload.update({"method": method, "replications": n_rep, "budget": budget.max_evaluations,
                    "seed": budget.seed, "data": {"d": data.d, "n": data.counts}})
    paths = [io.write_json(out / "report.json", payload, "fit_report"),
             io.write_csv(out / "c_hat.csv", ["time", "c_hat"],
                          zip(rep.c_hat.knot_times(), rep.c_hat.knot_values())),
             io.write_csv(out / "mean_fit.csv", ["time", "sample_mean", "estimated_mean"], zip(grid, mean, fitted))]
    text = _summary_text(rep)
    (out / "summary.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return paths + [out / "summary.txt"]


def _fpt_process(cfg) -> tuple[DiffusionParams, InitialLaw, float | None]:
    """Process for the fpt command: from a fit report (classical MLE) or from the model keys."""
    if cfg["fpt.report"]:
        doc = io.read_json(cfg["fpt.report"])
        try:
            m, init = doc["mle"], doc["init_mle"]
            r = growth.RichardsParams(q=m["q"], k=m["k"], eta=m["eta"], t0=m["t0"], x0=m["x0"])
            return (DiffusionParams(r, m["sigma"]), InitialLaw.lognormal(init["mu1"], init["sigma1_sq"]),
                    float(doc["p"]))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"{cfg['fpt.report']}: malformed fit report ({exc})") from exc
    params, init = diffusion_from(cfg)
    return params, init, None


def command_fpt(cfg, out: Path | None, deterministic: bool = False) -> list[Path]:
    params, init, p_report = _fpt_process(cfg)
    r = params.richards
    p = p_report if p_report is not None else _num(cfg, "fpt.p", positive=True)
    if deterministic:
        sys.stdout.write(io.fmt(growth.switch_time(r, p)) + "\n")
        return []
    if cfg["fpt.boundary"] is not None:
        boundary = _num(cfg, "fpt.boundary", positive=True)
    else:
        boundary = (1 + p) * growth.tangent_summary(r).x_at_inflection
    horizon = _num(cfg, "grid.t_end") if cfg["fpt.horizon"] is None else _num(cfg, "fpt.horizon")
    seed = _num(cfg, "seed", int)
    mc = fpt_monte_carlo(params, init, boundary, horizon, _num(cfg, "fpt.n_paths", int, positive=True),
                         _num(cfg, "fpt.dt", positive=True), seed)
    densities = [mc]
    summaries = {"monte_carlo": fpt_summary(mc).to_dict()}
    gap = None
    if init.is_degenerate:
        ie = fpt_integral_equation(params, math.exp(init.mu0), boundary, horizon,
                                   _num(cfg, "fpt.nodes", int, positive=True))
        densities.append(ie)
        summaries["integral_equation"] = fpt_summary(ie).to_dict()
        gap = density_sup_gap(mc, ie)
    rows = ((d.method, t, f) for d in densities for t, f in zip(d.grid, d.density))
    payload = {"boundary": boundary, "horizon": horizon, "seed": seed, "p": p,
               "deterministic_switch_time": growth.switch_time(r, p), "summaries": summaries,
               "sup_gap_relative": gap}
    return [io.write_csv(out / "fpt_density.csv", ["method", "time", "density"], rows),
            io.write_json(out / "fpt_summary.json", payload, "fpt_summary")]


def command_curve(cfg, out: Path) -> list[Path]:
    r = richards_from(cfg)
    c = perturbation_from(cfg, r)
    t = grid_from(cfg, r.t0)
    x = growth.evaluate_richards(r, t)
    xt = growth.evaluate_modified(r, c, t)
    h = growth.growth_rate_h(r, t)
    ht = growth.growth_rate_modified(r, c, t)
    ts = growth.tangent_summary(r)
    diag = {"t_inflection": ts.t_inflection, "x_at_inflection": ts.x_at_inflection, "mu": ts.mu,
            "lambda_lag": ts.lambda_lag, "K": growth.carrying_capacity(r),
            "K_tilde": growth.modified_carrying_capacity(r, c), "t_star": None if c.is_none else c.t_star,
            "perturbation": c.to_dict()}
    return [io.write_csv(out / "curve.csv", ["time", "x", "x_tilde", "h", "h_tilde"], zip(t, x, xt, h, ht)),
            io.write_json(out / "curve.json", diag, "curve_diagnostics")]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="TOML file with dotted keys")
    common.add_argument("--seed", type=int, metavar="N")
    common.add_argument("--out", default=".", metavar="DIR", help="output directory (created if missing)")
    common.add_argument("--replications", type=int, metavar="N")
    common.add_argument("--method", choices=sorted(METHODS))
    common.add_argument("--p", metavar="VALUE|LIST", help="switch parameter or comma-separated candidates")
    common.add_argument("--window-end", type=float, metavar="TIME")
    common.add_argument("--layout", choices=io.LAYOUTS)
    parser = argparse.ArgumentParser(prog="richfit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="simulate sample paths of the perturbed diffusion")
    fit = sub.add_parser("fit", parents=[common], help="run the three-step estimation on a dataset")
    fit.add_argument("data", nargs="?", help="CSV dataset (overrides fit.data)")
    f = sub.add_parser("fpt", parents=[common], help="first-passage-time density through the switch boundary")
    f.add_argument("--deterministic", action="store_true", help="print the deterministic switch time only")
    sub.add_parser("curve", parents=[common], help="tabulate the classical and perturbed curves")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        overrides = {"seed": args.seed, "fit.replications": args.replications, "fit.method": args.method,
                     "fit.window_end": args.window_end, "fit.data": getattr(args, "data", None)}
        if args.p is not None:
            overrides["fit.p"] = args.p
            overrides["fpt.p"] = args.p
        if args.layout is not None:
            overrides["simulate.layout"] = overrides["fit.layout"] = args.layout
        cfg = build_config(args.config, overrides)
        if args.command == "fpt":
            command_fpt(cfg, None if args.deterministic else _out(args), args.deterministic)
        else:
            {"simulate": command_simulate, "fit": command_fit, "curve": command_curve}[args.command](cfg, _out(args))
    except RichfitError as exc:
        print(f"richfit: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"richfit: error: {exc}", file=sys.stderr)
        return ValidationError.exit_code
    except (FloatingPointError, ZeroDivisionError) as exc:
        print(f"richfit: numerical failure: {exc}", file=sys.stderr)
        return NumericalError.exit_code
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
