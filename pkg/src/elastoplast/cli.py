"""Command-line front end: ``elastoplast <subcommand> [--config PATH] [--seed N] [--out DIR]``.

Every run writes its resolved config (``config.json``) and a manifest
(``manifest.json``) next to its CSV/JSON outputs.  Exit status: 0 success,
1 a verification check failed, 2 bad input or runtime error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, from_dict, parse_config_text, set_path
from .control import (
    integrate_linear,
    linear_control,
    linearize,
    synthesize_exact_control,
    verify_control,
)
from .dynamics import SolverConfig, State, fmt, integrate, validate_drift, verify_dwell
from .ergodics import (
    InvariantSample,
    coupling_failure_rate,
    empirical_invariant,
    estimate_kernel_tv,
    estimate_mixing_rate,
    hitting_time,
    lyapunov_drift_check,
    run_coupled_chains,
)
from .exceptions import ElastoplastError
from .noise import (
    BasisSpec,
    ForcingPath,
    brownian_paths,
    decomposable_paths,
    project_path,
    sample_brownian,
)

COMMANDS = ("simulate", "control", "lincontrol", "lyapunov", "recur", "kernel-tv", "couple", "mix",
            "invariant", "noise-check", "validate")


def write_csv(path: Path, header, rows) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def write_json(path: Path, data) -> None:
    with open(path, "w") as fh:
        json.dump(_plain(data), fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, State):
        return [obj.y, obj.z]
    return obj


def _fit_dict(fit):
    if fit is None:
        return None
    return {"rate": fit.rate, "slope": fit.slope, "intercept": fit.intercept, "r2": fit.r2,
            "se_slope": fit.se_slope, "window": list(fit.window)}


# ---------------------------------------------------------------------------
# subcommands; each returns (summary dict, passed flag)


def cmd_simulate(cfg: ExperimentConfig, out: Path):
    model, noise = cfg.model(), cfg.noise()
    solver = SolverConfig(cfg.h, cfg.T, cfg.seed)
    x0 = cfg.state("x0")
    forcing = None
    if noise.kind == "white":
        forcing = sample_brownian(cfg.T, cfg.h, cfg.seed)
        forcing.to_csv(out / "forcing.csv")
    elif noise.kind == "decomposable":
        t0 = model.t0
        n_int = max(1, round(cfg.T / t0))
        if abs(n_int * t0 - cfg.T) > 1e-9 * cfg.T:
            raise ElastoplastError("solver.T: decomposable forcing needs T to be a multiple of t0")
        law = noise.law
        vals = decomposable_paths(law, BasisSpec(t0, law.J), cfg.h, n_int, cfg.seed)
        joined = np.concatenate([vals[0]] + [v[1:] for v in vals[1:]])
        forcing = ForcingPath("direct", cfg.h, joined, seed=cfg.seed)
        forcing.to_csv(out / "forcing.csv")
    tr = integrate(x0, model, forcing, solver)
    tr.to_csv(out / "trajectory.csv")
    end = tr.endpoint
    return {"endpoint": [end.y, end.z], "max_abs_z": float(np.max(np.abs(tr.z))), "steps": len(tr) - 1}, True


def cmd_control(cfg: ExperimentConfig, out: Path):
    e = cfg.experiment
    model = cfg.model()
    x0, xT, T = cfg.state("x0"), cfg.state("target"), e["T"]
    sched = synthesize_exact_control(x0, xT, T, model, monotone=e["monotone"])
    rep = verify_control(x0, sched, xT, model, SolverConfig(cfg.h, T, cfg.seed))
    sched.to_json(out / "schedule.json")
    sched.to_csv(out / "control.csv", cfg.h)
    rep.trajectory.to_csv(out / "trajectory.csv")
    summary = dict(rep.summary(), tolerance=e["tolerance"],
                   case_tags=[s.case_tag for s in sched.segments])
    return summary, rep.passed(e["tolerance"])


def cmd_lincontrol(cfg: ExperimentConfig, out: Path):
    e = cfg.experiment
    model = cfg.model()
    ref0 = State(*(e["reference"] if e["reference"] is not None else (model.p.y, model.p.z)))
    ref = integrate(ref0, model, None, SolverConfig(cfg.h, model.t0))
    sys_ = linearize(model, ref)
    Y1, Z1 = e["linear_target"]
    V = linear_control(sys_, (Y1, Z1))
    V.to_csv(out / "control.csv")
    Y, Z = integrate_linear(sys_, V)
    err = float(np.hypot(Y - Y1, Z - Z1))
    return {"endpoint": [Y, Z], "target": [Y1, Z1], "endpoint_error": err}, err <= 1e-6


def cmd_lyapunov(cfg: ExperimentConfig, out: Path):
    e = cfg.experiment
    grid = [State(*g) for g in e["grid"]]
    rep = lyapunov_drift_check(cfg.model(), cfg.noise(), grid, e["N"], cfg.seed, cfg.h)
    write_csv(out / "lyapunov.csv", ["y", "z", "V", "mean_V1", "se", "bound", "corrected_bound"],
              [(p.x0.y, p.x0.z, p.v0, p.mean_v1, p.se, p.bound, p.corrected_bound) for p in rep.points])
    return rep.summary(), rep.passed


def cmd_recur(cfg: ExperimentConfig, out: Path):
    e = cfg.experiment
    model = cfg.model()
    p = State(*e["p"]) if e["p"] is not None else model.p
    st = hitting_time(model, cfg.noise(), cfg.state("x0"), p, e["delta"], e["K"], e["N"], cfg.seed, cfg.h)
    write_csv(out / "survival.csv", ["k", "survival"], [(k, float(s)) for k, s in enumerate(st.survival)])
    summary = {"censored": st.censored, "kappa_hat": st.kappa_hat, "fit": _fit_dict(st.fit),
               "mean_tau": float(np.mean(st.samples)), "diagnostic": st.diagnostic}
    return summary, st.fit is not None and st.fit.slope < 0


def cmd_kernel_tv(cfg: ExperimentConfig, out: Path):
    e = cfg.experiment
    model, noise = cfg.model(), cfg.noise()
    x, xp = cfg.state("x"), cfg.state("x_prime")
    k = estimate_kernel_tv(model, noise, x, xp, e["N"], cfg.bins(), cfg.seed, cfg.h)
    ci = coupling_failure_rate(model, noise, x, xp, e["N"], cfg.coupling(),
                               group=max(1, e["N"] // 10), seed=cfg.seed, h=cfg.h)
    summary = {"tv": k.tv, "floor": k.floor, "N": k.N,
               "coupling_failure_rate": ci.failure_rate, "coupling_failure_se": ci.se}
    return summary, True


def cmd_couple(cfg: ExperimentConfig, out: Path):
    e = cfg.experiment
    model = cfg.model()
    p = State(*e["p"]) if e["p"] is not None else model.p
    st = run_coupled_chains(cfg.state("x0"), cfg.state("x0_prime"), model, cfg.noise(), p, e["delta_hat"],
                            e["K"], e["N"], cfg.coupling(), cfg.seed, cfg.h)
    write_csv(out / "survival.csv", ["k", "survival"], [(k, float(s)) for k, s in enumerate(st.survival)])
    summary = {"censored": st.censored, "gamma_hat": st.gamma_hat, "fit": _fit_dict(st.fit),
               "mean_sigma": float(np.mean(st.sigma)), "V_sum": st.v_sum, "diagnostic": st.diagnostic}
    return summary, st.fit is not None and st.fit.slope < 0


def _invariant(cfg: ExperimentConfig) -> InvariantSample:
    e = cfg.experiment
    return empirical_invariant(cfg.model(), cfg.noise(), e["burn_in"], e["samples"], e["thinning"],
                               cfg.seed, cfg.bins(), cfg.h)


def cmd_mix(cfg: ExperimentConfig, out: Path):
    e = cfg.experiment
    ref = _invariant(cfg)
    rep = estimate_mixing_rate(cfg.model(), cfg.noise(), [(cfg.state("x0"), 1.0)], e["K"], e["N"], ref,
                               cfg.seed, cfg.h,
                               e["floor_factor"], e["probe"])
    rows = [(k, float(v)) for k, v in enumerate(rep.tv)]
    write_csv(out / "tv.csv", ["k", "tv"], rows)
    if rep.tv_intra is not None:
        write_csv(out / "tv_intra.csv", ["t", "tv"],
                  [(float(k - 1 + e["probe"]) * cfg.model().t0, float(v))
                   for k, v in enumerate(rep.tv_intra) if k >= 1])
    return rep.summary(), rep.fit is not None and rep.fit.slope < 0


def cmd_invariant(cfg: ExperimentConfig, out: Path):
    ref = _invariant(cfg)
    ref.measure.to_csv(out / "histogram.csv")
    m = ref.measure
    summary = {"samples": m.total, "overflow_fraction": m.overflow_fraction, "occupied_bins": m.occupied,
               "upper_line_mass": float(m.upper_line.sum() / m.total),
               "lower_line_mass": float(m.lower_line.sum() / m.total),
               "floor": ref.floor(m.total)}
    return summary, True


def cmd_noise_check(cfg: ExperimentConfig, out: Path):
    e = cfg.experiment
    t0 = cfg.model().t0
    h = cfg.h
    N = e["N"]
    paths = brownian_paths(t0, h, N, cfg.seed)
    n = paths.shape[1] - 1
    end = paths[:, -1]
    i1, i3 = int(round(0.25 * n)), int(round(0.75 * n))
    cov = float(np.mean(paths[:, i1] * paths[:, i3]))
    errors = []
    sub = paths[: e["n_paths"]]
    for J in e["J_list"]:
        errs = [float(np.max(np.abs(project_path(ForcingPath("path", h, row), BasisSpec(t0, J)).values - row)))
                for row in sub]
        errors.append((J, float(np.mean(errs))))
    write_csv(out / "projection_error.csv", ["J", "sup_error"], errors)
    errs = [v for _, v in errors]
    monotone = all(a > b for a, b in zip(errs, errs[1:]))
    summary = {"mean_end": float(end.mean()), "var_end": float(end.var(ddof=1)),
               "cov_quarter_threequarter": cov, "cov_expected": 0.25 * t0,
               "projection_errors": errors, "monotone": monotone}
    ok = monotone and abs(cov - 0.25 * t0) <= 0.02
    return summary, ok


def cmd_validate(cfg: ExperimentConfig, out: Path):
    e = cfg.experiment
    model = cfg.model()
    rep = validate_drift(model, e["ymax"], e["ny"], e["nz"])
    dwell = verify_dwell(model, e["r0"], SolverConfig(cfg.h, model.t0))
    summary = {"drift": {"max_violation": rep.max_violation, "argmax": list(rep.argmax),
                         "n_points": rep.n_points, "passed": rep.passed},
               "dwell": {"max_distance": dwell.max_distance, "n_starts": dwell.n_starts,
                         "passed": dwell.passed},
               "verdict": "pass" if rep.passed and dwell.passed else "fail"}
    return summary, rep.passed and dwell.passed


HANDLERS = {
    "simulate": cmd_simulate, "control": cmd_control, "lincontrol": cmd_lincontrol,
    "lyapunov": cmd_lyapunov, "recur": cmd_recur, "kernel-tv": cmd_kernel_tv, "couple": cmd_couple,
    "mix": cmd_mix, "invariant": cmd_invariant, "noise-check": cmd_noise_check, "validate": cmd_validate,
}


# ---------------------------------------------------------------------------
# argument handling


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="elastoplast", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", metavar="PATH", help="JSON experiment config")
        p.add_argument("--seed", type=int, metavar="U64", help="override the config seed")
        p.add_argument("--out", metavar="DIR", help="run directory (default runs/<command>-<hash>)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry by dotted path, e.g. experiment.N=1000")
        p.add_argument("--h", type=float, help="solver step (solver.h)")
        p.add_argument("--N", type=int, help="ensemble size (experiment.N)")
        p.add_argument("--K", type=int, help="horizon in chain steps (experiment.K)")
        if name in ("control", "simulate"):
            p.add_argument("--from", dest="x0", metavar="Y,Z", help="start state (experiment.x0)")
        if name == "control":
            p.add_argument("--to", dest="target", metavar="Y,Z", help="target state (experiment.target)")
            p.add_argument("--T", type=float, help="control horizon (experiment.T)")
        if name == "simulate":
            p.add_argument("--T", type=float, help="simulation horizon (solver.T)")
        if name == "mix":
            p.add_argument("--from", dest="x0", metavar="Y,Z", help="initial point mass (experiment.x0)")
    return parser


def _raw_config(args) -> dict:
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                raw = parse_config_text(fh.read(), args.config)
        except OSError as e:
            raise ElastoplastError(f"{args.config}: cannot read config: {e.strerror}") from None
    else:
        raw = {}
    if args.seed is not None:
        raw["seed"] = args.seed
    sugar = {"h": "solver.h", "N": "experiment.N", "K": "experiment.K", "x0": "experiment.x0",
             "target": "experiment.target"}
    for attr, path in sugar.items():
        val = getattr(args, attr, None)
        if val is not None:
            set_path(raw, path, val)
    if getattr(args, "T", None) is not None:
        set_path(raw, "experiment.T" if args.command == "control" else "solver.T", args.T)
    for item in args.set:
        if "=" not in item:
            raise ElastoplastError(f"--set expects KEY=VALUE, got {item!r}")
        key, val = item.split("=", 1)
        set_path(raw, key.strip(), _parse_value(val))
    return raw


STATE_FLAGS = ("--from", "--to")


def _glue_state_flags(argv):
    """Join '--to -1,0' into '--to=-1,0' so argparse does not read the value as an option."""
    out = []
    i = 0
    while i < len(argv):
        tok = argv[i]
        if tok in STATE_FLAGS and i + 1 < len(argv):
            out.append(f"{tok}={argv[i + 1]}")
            i += 2
            continue
        out.append(tok)
        i += 1
    return out


def run_command(argv=None) -> int:
    parser = build_parser()
    argv = _glue_state_flags(list(sys.argv[1:] if argv is None else argv))
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else 2
    started = time.time()
    try:
        cfg = from_dict(_raw_config(args))
        out = Path(args.out) if args.out else Path("runs") / f"{args.command}-{cfg.digest()[:12]}"
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(cfg.data, indent=2, sort_keys=True) + "\n")
        summary, passed = HANDLERS[args.command](cfg, out)
    except (ElastoplastError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # runtime failures still get a clean exit status
        print(f"runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    files = sorted(p.name for p in out.iterdir() if p.name != "manifest.json")
    manifest = {
        "experiment": args.command,
        "config_hash": cfg.digest(),
        "version": __version__,
        "wall_clock_seconds": round(time.time() - started, 3),
        "threads": os.environ.get("ELASTOPLAST_THREADS"),
        "files": files,
        "passed": bool(passed),
        "summary": summary,
    }
    write_json(out / "manifest.json", manifest)
    print(json.dumps(_plain({"experiment": args.command, "passed": bool(passed), "out": str(out),
                             "summary": summary}), indent=2, sort_keys=True))
    return 0 if passed else 1


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
