"""Acceptance criteria 1-10, one verdict line each.

Ensemble criteria other than the drift check run with an inner step of 0.01: the chain is the time-one
map, and the step only sets the Euler bias, which is far below the Monte Carlo
error at these sample sizes.  Criterion 1 runs last so it sees every step
taken by the suite.
"""

import math

import numpy as np
import pytest

from elastoplast import MONITOR, State
from elastoplast.cli import run_command
from elastoplast.control import (
    ControlSchedule,
    integrate_linear,
    linear_control,
    linearize,
    ramp_to_plastic,
    synthesize_exact_control,
    verify_control,
)
from elastoplast.drifts import canonical_model
from elastoplast.dynamics import SolverConfig, integrate
from elastoplast.ensemble import THREADS_ENV
from elastoplast.ergodics import (
    Chain,
    CouplingConfig,
    coupling_failure_rate,
    empirical_invariant,
    estimate_kernel_tv,
    estimate_mixing_rate,
    hitting_time,
    lyapunov_drift_check,
    run_coupled_chains,
)
from elastoplast.measure import MeasureConfig
from elastoplast.noise import BasisSpec, ForcingPath, brownian_paths, project_path, white

H = 0.01
MIN_STEPS = 10_000_000

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def model():
    return canonical_model()


@pytest.fixture(scope="module")
def coupling(model):
    # criterion 8 and 9 share the coupled run
    return run_coupled_chains(State(3, 0), State(-3, 0), model, white(), model.p, 2.0, 500, 10_000,
                              CouplingConfig(512, MeasureConfig(10, 6, 5.0), common_noise=True),
                              seed=11, h=H)


def test_c02_lyapunov_constants(model, acceptance_log):
    grid = [State(y, z) for y in (-4.0, 0.0, 4.0) for z in (-1.0, 0.0, 1.0)]
    # default step: for f = -y the corrected bound is an equality, so the Euler bias at 0.01 would show
    rep = lyapunov_drift_check(model, white(), grid, 100_000, seed=2, h=1e-3)
    worst = max(rep.points, key=lambda p: (p.mean_v1 - p.bound) / p.se)
    acceptance_log.record(
        2, rep.passed,
        f"E V(x1) <= e^-2 V + 1/2 within 3 SE on 9 points: worst z-score "
        f"{(worst.mean_v1 - worst.bound) / worst.se:.1f} at ({worst.x0.y:g},{worst.x0.z:g}); "
        f"q_hat={rep.q_hat:.4f}; corrected intercept (1-q)(1+A) holds: {rep.corrected_passed}")
    # the literal intercept is too small (see the zero-noise tests); this stays red by design
    assert rep.passed


def test_c03_exact_controllability(model, acceptance_log):
    rng = np.random.default_rng(3)
    worst_err, worst_viol, failures = 0.0, 0.0, 0
    for _ in range(50):
        x0 = State(rng.uniform(-3, 3), rng.uniform(-1, 1))
        yT = rng.uniform(0.1, 3.0) * rng.choice([-1.0, 1.0])
        xT = State(yT, rng.uniform(-0.9, 0.9))
        sched = synthesize_exact_control(x0, xT, 4.0, model)
        rep = verify_control(x0, sched, xT, model, SolverConfig(1e-4, 4.0))
        worst_err = max(worst_err, rep.endpoint_error)
        worst_viol = max(worst_viol, rep.max_violation)
        failures += not rep.passed(1e-3)
    ok = failures == 0 and worst_err <= 1e-3 and worst_viol == 0.0
    acceptance_log.record(3, ok, f"50 pairs, worst endpoint error {worst_err:.2e}, "
                                 f"max violation {worst_viol:g}")
    assert ok


def test_c04_ramp_closed_form(model, acceptance_log):
    seg = ramp_to_plastic(State(1, 0), 0.5, model)
    a = seg.params["a"]
    tr = integrate(State(1, 0), model, ControlSchedule([seg]), SolverConfig(1e-5, 0.5))
    err = tr.endpoint.distance(State(3, 1))
    ok = a == 4.0 and err <= 1e-3
    acceptance_log.record(4, ok, f"a={a:g}, simulated endpoint ({tr.endpoint.y:.6f},{tr.endpoint.z:.6f}), "
                                 f"error {err:.2e}")
    assert ok


def test_c05_linearized_surjectivity(model, acceptance_log):
    ref = integrate(model.p, model, None, SolverConfig(1e-5, model.t0))
    sys_ = linearize(model, ref)
    targets = [(Y1, Z1) for Y1 in np.linspace(-1, 1, 5) for Z1 in np.linspace(-1, 1, 5)]
    V = np.stack([linear_control(sys_, t).values for t in targets])
    Y, Z = integrate_linear(sys_, V)
    err = float(np.max(np.hypot(Y - [t[0] for t in targets], Z - [t[1] for t in targets])))
    acceptance_log.record(5, err <= 1e-6, f"25 targets, worst endpoint error {err:.2e}")
    assert err <= 1e-6


def test_c06_brownian_decomposition(acceptance_log):
    t0 = 1.0
    sub = brownian_paths(t0, 1e-3, 100, seed=6)
    errs = []
    for J in (4, 16, 64):
        basis = BasisSpec(t0, J)
        errs.append(float(np.mean([
            np.max(np.abs(project_path(ForcingPath("path", 1e-3, row), basis).values - row)) for row in sub])))
    monotone = errs[0] > errs[1] > errs[2]
    # the covariance of grid values does not depend on the step, so a coarse grid keeps memory small
    paths = brownian_paths(t0, 0.1, 100_000, seed=7)
    t = np.arange(paths.shape[1]) * 0.1
    cov = paths.T @ paths / paths.shape[0]
    dev = float(np.max(np.abs(cov - np.minimum.outer(t, t))))
    ok = monotone and dev <= 0.02
    acceptance_log.record(6, ok, f"sup errors J=4,16,64: {errs[0]:.4f} > {errs[1]:.4f} > {errs[2]:.4f}; "
                                 f"max |cov - min(s,t)| = {dev:.4f}")
    assert ok


def test_c07_coupling_identity(model, acceptance_log):
    bins = MeasureConfig(20, 10, 5.0)
    pairs = [(State(0, 0), State(0.3, 0)), (State(0.5, 0.2), State(-0.5, -0.2)), (State(1, 0), State(0, 0.5))]
    gaps = []
    for i, (x, xp) in enumerate(pairs):
        assert max(x.distance(model.p), xp.distance(model.p)) < 2.0
        kt = estimate_kernel_tv(model, white(), x, xp, 100_000, bins, seed=70 + i, h=H)
        ci = coupling_failure_rate(model, white(), x, xp, 100_000, CouplingConfig(100_000, bins),
                                   group=20_000, seed=80 + i, h=H)
        gaps.append(abs(ci.failure_rate - kt.tv))
    ok = max(gaps) <= 0.03
    acceptance_log.record(7, ok, "|failure rate - kernel TV| = " + ", ".join(f"{g:.4f}" for g in gaps))
    assert ok


def test_c08_exponential_tails(model, coupling, acceptance_log):
    hit = hitting_time(model, white(), State(5, 0), model.p, 0.5, 500, 10_000, seed=8, h=H)
    fits = {"tau": hit.fit, "sigma": coupling.fit}
    ok = all(f is not None and f.r2 > 0.9 and f.slope < 0 for f in fits.values())
    ok = ok and hit.kappa_hat > 0 and coupling.gamma_hat > 0
    detail = "; ".join(f"{k}: slope {f.slope:.4f}, R2 {f.r2:.4f}, window {f.window}" for k, f in fits.items()
                       if f is not None)
    acceptance_log.record(8, ok, f"{detail}; kappa_hat={hit.kappa_hat:.4f}, gamma_hat={coupling.gamma_hat:.4f}")
    assert ok


def test_c09_exponential_mixing(model, coupling, acceptance_log):
    ref = empirical_invariant(model, white(), burn_in=200, K=400_000, seed=9, cfg=MeasureConfig(40, 20, 5.0), h=H)
    rep = estimate_mixing_rate(model, white(), [(State(5, 0), 1.0)], 50, 100_000, ref, seed=10, h=H)
    restart = estimate_mixing_rate(model, white(), ref, 50, 100_000, ref, seed=12, h=H)
    g_mix, g_cpl = rep.gamma_hat, coupling.gamma_hat
    ratio = max(g_mix, g_cpl) / min(g_mix, g_cpl) if g_mix and g_cpl else math.inf
    ok = (rep.fit is not None and rep.fit.r2 > 0.9 and rep.fit.slope < 0 and ratio <= 2.0
          and restart.at_floor())
    acceptance_log.record(
        9, ok,
        f"gamma_hat mixing {g_mix:.4f} (R2 {rep.fit.r2:.4f}, window {rep.fit.window}), coupling {g_cpl:.4f}, "
        f"ratio {ratio:.2f}; restart max TV/floor {float(np.max(restart.tv[1:]) / restart.floor):.2f}")
    assert ok


RUNS = [
    ["simulate", "--from", "5,0", "--T", "3", "--h", "1e-3"],
    ["control", "--from", "0.5,0", "--to", "-1,0", "--T", "4", "--h", "1e-4"],
    ["lyapunov", "--N", "20000", "--h", "0.01"],
    ["recur", "--N", "20000", "--K", "100", "--h", "0.01", "--set", "experiment.x0=[5,0]"],
    ["couple", "--N", "2000", "--K", "50", "--h", "0.01", "--set", "experiment.delta_hat=2.0",
     "--set", "experiment.n_aux=256", "--set", "experiment.x0=[3,0]"],
    ["invariant", "--h", "0.01", "--set", "experiment.samples=20000", "--set", "experiment.burn_in=50"],
    ["mix", "--from", "5,0", "--N", "20000", "--K", "10", "--h", "0.01", "--set", "experiment.samples=20000",
     "--set", "experiment.burn_in=50", "--set", "experiment.bins={\"ny\": 40, \"nz\": 20, \"ymax\": 5.0}"],
    ["noise-check", "--N", "20000", "--set", "experiment.n_paths=10"],
]


def _csvs(out):
    return {p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))}


def test_c10_reproducible_across_threads(tmp_path, monkeypatch, acceptance_log):
    mismatched = []
    n_files = 0
    for args in RUNS:
        outputs = []
        for tag, threads in (("a", "1"), ("b", "8"), ("c", "8")):
            monkeypatch.setenv(THREADS_ENV, threads)
            out = tmp_path / f"{args[0]}-{tag}"
            assert run_command([*args, "--seed", "42", "--out", str(out)]) in (0, 1)
            outputs.append(_csvs(out))
        n_files += len(outputs[0])
        assert outputs[0], f"{args[0]} wrote no CSV"
        if not (outputs[0] == outputs[1] == outputs[2]):
            mismatched.append(args[0])
    monkeypatch.delenv(THREADS_ENV, raising=False)
    ok = not mismatched
    acceptance_log.record(10, ok, f"{len(RUNS)} subcommands, {n_files} CSV files bitwise identical across "
                                  f"1 / 8 / 8 threads" + (f"; mismatched: {mismatched}" if mismatched else ""))
    assert ok


def test_c99_constraint_invariance(model, acceptance_log):
    # top up with an unforced-plus-white ensemble only if the suite ran short of the step budget
    if MONITOR.steps < MIN_STEPS:
        need = MIN_STEPS - MONITOR.steps
        n = max(1000, -(-need // 100))
        y = np.linspace(-8, 8, n)
        z = np.zeros(n)
        Chain(model, white(), H).advance(y, z, np.random.default_rng(99))
    ok = MONITOR.steps >= MIN_STEPS and MONITOR.max_excess == 0.0
    acceptance_log.record(1, ok, f"{MONITOR.steps} steps, max |z| - 1 = {MONITOR.max_excess!r}")
    assert ok
