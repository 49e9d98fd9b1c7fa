import math

import numpy as np
import pytest

from elastoplast import PreconditionError, State
from elastoplast.drifts import canonical_model
from elastoplast.ergodics import (
    Chain,
    CoupledPair,
    CouplingConfig,
    coupled_states,
    coupled_step,
    coupling_failure_rate,
    empirical_invariant,
    estimate_kernel_tv,
    estimate_mixing_rate,
    fit_geometric_tail,
    hitting_time,
    lyapunov_constants,
    lyapunov_drift_check,
    maximal_coupling_draw,
    run_coupled_chains,
    sample_kernel,
    survival_curve,
)
from elastoplast.measure import EmpiricalMeasure, MeasureConfig, tv_distance
from elastoplast.noise import NoiseSpec, white

H = 0.01  # coarse inner step keeps the ensemble tests fast
BINS = MeasureConfig(20, 10, 5.0)
NONE = NoiseSpec("none")


@pytest.fixture(scope="module")
def model():
    return canonical_model()


# -- Lyapunov drift -----------------------------------------------------------

def test_lyapunov_constants(model):
    q, A = lyapunov_constants(model)
    assert q == pytest.approx(math.exp(-2)) and A == 0.5


def test_lyapunov_zero_noise_equilibrium(model):
    rep = lyapunov_drift_check(model, NONE, [State(0, z) for z in (-1, 0, 0.5)], 10, h=1e-3)
    for p in rep.points:
        assert p.mean_v1 == 1.0
        # q + 1/2 < 1: the stated intercept cannot hold even at rest; the corrected one does
        assert p.mean_v1 > p.bound and p.mean_v1 <= p.corrected_bound


def test_lyapunov_zero_noise_decay(model):
    rep = lyapunov_drift_check(model, NONE, [State(10, 0)], 10, h=1e-4)
    p = rep.points[0]
    assert p.mean_v1 == pytest.approx(1 + 100 * math.exp(-2), rel=1e-3)
    # deterministic decay already exceeds q V + 1/2; the intercept (1 - q)(1 + A) covers it
    assert p.mean_v1 > p.bound
    assert p.mean_v1 <= p.corrected_bound


def test_lyapunov_white_noise_corrected(model):
    grid = [State(y, 0) for y in (-4, 0, 4)]
    rep = lyapunov_drift_check(model, white(), grid, 20_000, seed=1, h=H)
    assert rep.corrected_passed
    assert rep.q_hat == pytest.approx(math.exp(-2), abs=0.02)


def test_lyapunov_needs_samples(model):
    with pytest.raises(PreconditionError):
        lyapunov_drift_check(model, white(), [State(0, 0)], 1)


# -- tail fits ----------------------------------------------------------------

def test_survival_and_geometric_fit():
    rng = np.random.default_rng(0)
    K = 200
    tau = rng.geometric(0.1, 50_000)
    tau[tau > K] = K + 1
    surv = survival_curve(tau, K)
    assert surv[0] == 1.0
    assert np.all(np.diff(surv) <= 0)
    fit = fit_geometric_tail(surv, tau.size)
    # log of sparse counts near the 10/N floor flattens the fit slightly
    assert fit.rate == pytest.approx(-math.log(0.9), rel=0.05)
    assert fit.r2 > 0.99


def test_fit_requires_points():
    assert fit_geometric_tail(np.array([1.0, 0.0, 0.0]), 100) is None


# -- hitting times ------------------------------------------------------------

def test_hitting_trivial_ball(model):
    st = hitting_time(model, NONE, State(0, 0), State(0, 0), 0.5, 10, 50, h=H)
    assert np.all(st.samples == 1)


def test_hitting_tail_log_linear(model):
    st = hitting_time(model, white(), State(5, 0), State(0, 0), 0.5, 200, 4000, seed=2, h=H)
    assert st.censored < 5
    assert st.fit.slope < 0 and st.fit.r2 > 0.9 and st.kappa_hat > 0
    assert np.all(st.samples >= 1)


def test_hitting_moments_ordered_by_V(model):
    a = hitting_time(model, white(), State(1, 0), State(0, 0), 0.5, 200, 4000, seed=3, h=H)
    b = hitting_time(model, white(), State(6, 0), State(0, 0), 0.5, 200, 4000, seed=3, h=H)
    kappa = 0.5 * min(a.kappa_hat, b.kappa_hat)
    ma, sa = a.exp_moment(kappa)
    mb, sb = b.exp_moment(kappa)
    assert ma <= mb + 2 * math.hypot(sa, sb)


def test_hitting_all_censored_diagnostic(model):
    st = hitting_time(model, NONE, State(5, 0), State(0, 0.5), 0.1, 3, 20, h=H)
    assert st.fit is None and "censored" in st.diagnostic


def test_hitting_rejects_ball_on_boundary(model):
    with pytest.raises(PreconditionError):
        hitting_time(model, white(), State(0, 0), State(0, 0.8), 0.5, 10, 10)


# -- kernel TV and coupling ---------------------------------------------------

def test_kernel_tv_common_random_numbers(model):
    k = estimate_kernel_tv(model, white(), State(0, 0), State(0, 0), 2000, BINS, seed=0, h=H,
                           common_random_numbers=True)
    assert k.tv == 0.0


def test_kernel_tv_same_point_at_noise_level(model):
    k = estimate_kernel_tv(model, white(), State(0, 0), State(0, 0), 20_000, BINS, seed=0, h=H)
    occupied = 160
    assert k.tv <= 2 * math.sqrt(occupied / (math.pi * 20_000))


def test_kernel_tv_disjoint_without_noise(model):
    k = estimate_kernel_tv(model, NONE, State(0, 0), State(3, 0), 100, BINS, h=H)
    assert k.tv == 1.0


def test_kernel_tv_below_one_and_stable(model):
    a = estimate_kernel_tv(model, white(), State(0, 0), State(0.1, 0), 100_000, seed=1, h=H)
    b = estimate_kernel_tv(model, white(), State(0, 0), State(0.1, 0), 100_000, seed=2, h=H)
    assert a.tv < 1.0 and abs(a.tv - b.tv) <= 0.02


def test_maximal_coupling_of_identical_samples():
    rng = np.random.default_rng(0)
    xs = (rng.normal(size=500), rng.uniform(-1, 1, 500))
    y, z, yp, zp, c = maximal_coupling_draw(xs, xs, BINS, rng, 1000)
    assert np.all(c) and np.array_equal(y, yp) and np.array_equal(z, zp)


def test_maximal_coupling_of_disjoint_samples():
    rng = np.random.default_rng(1)
    xs = (np.full(50, -1.0), np.zeros(50))
    xps = (np.full(50, 1.0), np.zeros(50))
    *_, c = maximal_coupling_draw(xs, xps, BINS, rng, 200)
    assert not np.any(c)


def test_coupled_pair_stays_coupled(model):
    rng = np.random.default_rng(4)
    pair = CoupledPair(State(0.5, 0.1), State(0.5, 0.1), coupled=True)
    for _ in range(5):
        pair = coupled_step(pair, model, white(), model.p, 0.25, rng=rng, h=H)
        assert pair.coupled and pair.x == pair.x_prime
    with pytest.raises(PreconditionError):
        CoupledPair(State(0, 0), State(1, 0), coupled=True)


def test_same_point_in_ball_couples(model):
    rng = np.random.default_rng(5)
    cfg = CouplingConfig(1024, BINS)
    hits = 0
    for _ in range(50):
        # same start but not yet flagged: the near-p branch must merge them
        pair = CoupledPair(State(0.05, 0.0), State(0.05, 1e-12))
        hits += coupled_step(pair, model, white(), model.p, 0.25, cfg, rng, h=H).coupled
    assert hits >= 40


def test_far_pairs_move_independently(model):
    rng = np.random.default_rng(6)
    pair = coupled_step(CoupledPair(State(3, 0), State(-3, 0)), model, white(), model.p, 0.25, rng=rng, h=H)
    assert not pair.coupled and pair.k == 1


def test_coupling_identity_small(model):
    x, xp = State(0, 0), State(0.3, 0)
    kt = estimate_kernel_tv(model, white(), x, xp, 5000, BINS, seed=1, h=H)
    ci = coupling_failure_rate(model, white(), x, xp, 5000, CouplingConfig(5000, BINS), group=1000,
                               seed=2, h=H)
    assert abs(ci.failure_rate - kt.tv) <= 0.03


def test_coupled_chains_identical_start(model):
    st = run_coupled_chains(State(1, 0), State(1, 0), model, white(), model.p, 0.25, 10, 20, h=H)
    assert np.all(st.sigma == 0)


def test_coupled_chains_tail(model):
    cfg = CouplingConfig(128, BINS, common_noise=True)
    st = run_coupled_chains(State(3, 0), State(-3, 0), model, white(), model.p, 2.0, 100, 400, cfg,
                            seed=7, h=H)
    assert st.fit is not None and st.fit.slope < 0 and st.gamma_hat > 0
    assert st.v_sum == 20.0


def test_coupled_marginal_preserved(model):
    cfg = CouplingConfig(128, BINS)
    n, k = 1000, 3
    y, z, *_ = coupled_states(State(1, 0), State(-1, 0), model, white(), model.p, 2.0, k, n, cfg,
                              seed=8, h=H)
    chain = Chain(model, white(), H)

    def uncoupled(seed):
        rng = np.random.default_rng(seed)
        yy, zz = np.full(n, 1.0), np.zeros(n)
        for _ in range(k):
            chain.advance(yy, zz, rng)
        return EmpiricalMeasure.from_samples(yy, zz, BINS)

    null = np.array([tv_distance(uncoupled(s), uncoupled(s + 50)) for s in range(8)])
    tv = tv_distance(EmpiricalMeasure.from_samples(y, z, BINS), uncoupled(99))
    assert tv <= null.mean() + 3 * null.std(ddof=1)


# -- invariant measure and mixing ---------------------------------------------

@pytest.fixture(scope="module")
def invariant(model):
    return empirical_invariant(model, white(), burn_in=100, K=40_000, seed=11, cfg=MeasureConfig(40, 20, 5.0), h=H)


def test_invariant_seed_consistency(model, invariant):
    other = empirical_invariant(model, white(), burn_in=100, K=40_000, seed=12, cfg=MeasureConfig(40, 20, 5.0),
                                h=H)
    assert tv_distance(invariant.measure, other.measure) <= 2 * invariant.floor(40_000)


def test_invariant_symmetry(invariant):
    m = invariant.measure
    assert tv_distance(m, m.mirrored()) <= 2 * invariant.floor(40_000)


def test_invariant_deterministic_limit(model):
    inv = empirical_invariant(model, NONE, burn_in=50, K=2000, seed=0, h=H)
    y_rep, _ = inv.measure.cfg.representative(np.flatnonzero(inv.measure.counts))
    bin_w = 2 * inv.measure.cfg.ymax / inv.measure.cfg.ny
    assert np.all(np.abs(y_rep) <= bin_w)


def test_invariant_overflow_guard(model):
    with pytest.raises(PreconditionError):
        empirical_invariant(model, white(), burn_in=1, K=1000, cfg=MeasureConfig(10, 4, 0.2), h=H)


def test_mixing_from_point_mass(model, invariant):
    rep = estimate_mixing_rate(model, white(), [(State(5, 0), 1.0)], 15, 10_000, invariant, seed=13, h=H)
    assert rep.fit is not None and rep.fit.slope < 0 and rep.fit.r2 > 0.9
    assert np.all((0 <= rep.tv) & (rep.tv <= 1))
    assert rep.v_lambda == 26.0


def test_mixing_restart_from_invariant(model, invariant):
    rep = estimate_mixing_rate(model, white(), invariant, 5, 10_000, invariant, seed=14, h=H)
    assert rep.at_floor()
    assert rep.fit is None and rep.lower_bound is not None


def test_mixing_envelopes_ordered_by_V(model, invariant):
    near = estimate_mixing_rate(model, white(), [(State(2, 0), 1.0)], 4, 10_000, invariant, seed=15, h=H)
    far = estimate_mixing_rate(model, white(), [(State(6, 0), 1.0)], 4, 10_000, invariant, seed=15, h=H)
    assert np.all(near.tv[1:4] <= far.tv[1:4] + near.floor)


def test_mixing_intra_step_probe(model, invariant):
    rep = estimate_mixing_rate(model, white(), [(State(5, 0), 1.0)], 4, 5000, invariant, seed=16, h=H,
                               probe=0.5)
    assert np.isnan(rep.tv_intra[0])
    # halfway through step k the law is between steps k - 1 and k
    assert rep.tv_intra[1] >= rep.tv[1] - rep.floor


def test_sample_kernel_deterministic(model):
    a = sample_kernel(model, white(), State(0, 0), 1000, seed=5, h=H)
    b = sample_kernel(model, white(), State(0, 0), 1000, seed=5, h=H)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    assert np.max(np.abs(a[1])) <= 1.0
