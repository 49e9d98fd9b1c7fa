"""Monte Carlo certificates for the mixing of the discrete chain x_k = S(x_{k-1}; eta_k).

One step of the chain integrates the system over a reference interval [0, T0]
with a fresh noise realisation.  Ensembles run in fixed-size blocks with
per-block generators (see ``ensemble``), so every estimate here is a
deterministic function of its seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dynamics import DriftModel, State, grid_size, lyapunov, propagate
from .ensemble import BLOCK_SIZE, map_blocks
from .exceptions import PreconditionError
from .measure import EmpiricalMeasure, MeasureConfig, split_floor, tv_distance
from .noise import NoiseSpec

DEFAULT_DELTA_HAT = 0.25
DEFAULT_N_AUX = 4096
COUPLING_BINS = MeasureConfig(ny=20, nz=10, ymax=5.0)
AUX_CHUNK = 1 << 16


def default_step(model: DriftModel) -> float:
    return 1e-3 * model.t0


@dataclass(frozen=True)
class Chain:
    """The discrete chain: drift, noise law and inner Euler step."""

    model: DriftModel
    noise: NoiseSpec
    h: Optional[float] = None

    @property
    def step(self) -> float:
        return default_step(self.model) if self.h is None else float(self.h)

    @property
    def substeps(self) -> int:
        return grid_size(self.model.t0, self.step)

    def advance(self, y: np.ndarray, z: np.ndarray, rng: np.random.Generator, n_sub: Optional[int] = None):
        """One chain step in place (or its first ``n_sub`` substeps)."""
        t0, h = self.model.t0, self.step
        incr = self.noise.increments(rng, y.size, t0, h, n_sub)
        k = self.substeps if n_sub is None else n_sub
        propagate(y, z, self.model.f, incr, h, n_sub=k)
        return y, z

    def draw(self, rng: np.random.Generator, n: int):
        """Forcing increments for ``n`` paths over one step (None when unforced)."""
        return self.noise.increments(rng, n, self.model.t0, self.step)

    def advance_with(self, y: np.ndarray, z: np.ndarray, incr):
        propagate(y, z, self.model.f, incr, self.step, n_sub=self.substeps)
        return y, z

    def advance_split(self, y, z, rng, n_first: int):
        """One full step that also returns the state after ``n_first`` substeps."""
        t0, h = self.model.t0, self.step
        incr = self.noise.increments(rng, y.size, t0, h)
        m = self.substeps
        if incr is None:
            propagate(y, z, self.model.f, None, h, n_sub=n_first)
            mid = (y.copy(), z.copy())
            propagate(y, z, self.model.f, None, h, n_sub=m - n_first)
        else:
            propagate(y, z, self.model.f, incr[:, :n_first], h)
            mid = (y.copy(), z.copy())
            propagate(y, z, self.model.f, incr[:, n_first:], h)
        return mid


def _as_chain(model, noise, h) -> Chain:
    return Chain(model, noise, h)


def _concat(parts):
    return np.concatenate(parts) if parts else np.zeros(0)


def sample_kernel(model: DriftModel, noise: NoiseSpec, x: State, n: int, seed: int,
                  stream: str = "kernel", h: Optional[float] = None):
    """``n`` independent draws of x_1 given x_0 = x, as arrays (y, z)."""
    chain = _as_chain(model, noise, h)

    def block(rng, start, stop):
        y = np.full(stop - start, x.y)
        z = np.full(stop - start, x.z)
        chain.advance(y, z, rng)
        return y, z

    parts = map_blocks(block, n, seed, stream)
    return _concat([p[0] for p in parts]), _concat([p[1] for p in parts])


# ---------------------------------------------------------------------------
# Lyapunov drift


@dataclass
class LyapunovPoint:
    x0: State
    v0: float
    mean_v1: float
    se: float
    bound: float
    corrected_bound: float

    @property
    def passed(self) -> bool:
        return self.mean_v1 <= self.bound + 3 * self.se

    @property
    def corrected_passed(self) -> bool:
        return self.mean_v1 <= self.corrected_bound + 3 * self.se


@dataclass
class LyapunovReport:
    q: float
    A: float
    q_hat: float
    A_hat: float
    points: list

    @property
    def corrected_A(self) -> float:
        return (1.0 - self.q) * (1.0 + self.A)

    @property
    def passed(self) -> bool:
        return all(p.passed for p in self.points)

    @property
    def corrected_passed(self) -> bool:
        return all(p.corrected_passed for p in self.points)

    def summary(self) -> dict:
        return {
            "q": self.q, "A": self.A, "q_hat": self.q_hat, "A_hat": self.A_hat,
            "corrected_A": self.corrected_A, "passed": self.passed,
            "corrected_passed": self.corrected_passed,
            "points": [{"y": p.x0.y, "z": p.x0.z, "V": p.v0, "mean_V1": p.mean_v1, "se": p.se,
                        "bound": p.bound, "corrected_bound": p.corrected_bound,
                        "passed": p.passed} for p in self.points],
        }


def lyapunov_constants(model: DriftModel) -> tuple[float, float]:
    """q = exp(-2 alpha T0) and A = (2C + 1)/(2 alpha) for unit white noise."""
    return math.exp(-2.0 * model.alpha * model.t0), (2.0 * model.c_lyap + 1.0) / (2.0 * model.alpha)


def lyapunov_drift_check(model: DriftModel, noise: NoiseSpec, grid: Sequence[State], N: int,
                         seed: int = 0, h: Optional[float] = None, min_n: int = 2) -> LyapunovReport:
    """Monte Carlo E_x V(x_1) on a grid of starts against q V(x) + A.

    ``bound`` is the stated white-noise bound q V + A.  ``corrected_bound``
    uses the intercept (1 - q)(1 + A), which is what integrating
    d E y^2 <= (-2 alpha E y^2 + 2C + 1) dt gives for V = 1 + y^2.
    (q_hat, A_hat) is the least-squares line through the grid means, with
    A_hat then raised until the line covers every mean.
    """
    if N < min_n:
        raise PreconditionError(f"ensemble size N = {N} too small for a standard error")
    if not grid:
        raise PreconditionError("empty start grid")
    q, A = lyapunov_constants(model)
    A_corr = (1.0 - q) * (1.0 + A)
    points = []
    for i, x0 in enumerate(grid):
        y, _ = sample_kernel(model, noise, x0, N, seed, stream=f"lyapunov/{i}", h=h)
        v1 = lyapunov(y)
        v0 = 1.0 + x0.y ** 2
        points.append(LyapunovPoint(x0, v0, float(v1.mean()), float(v1.std(ddof=1) / math.sqrt(N)),
                                    q * v0 + A, q * v0 + A_corr))
    v0s = np.array([p.v0 for p in points])
    means = np.array([p.mean_v1 for p in points])
    if np.ptp(v0s) > 0:
        slope, icpt = np.polyfit(v0s, means, 1)
    else:
        slope, icpt = 0.0, float(means.max())
    icpt = float(np.max(means - slope * v0s))
    return LyapunovReport(q, A, float(slope), icpt, points)


# ---------------------------------------------------------------------------
# tails


@dataclass
class TailFit:
    slope: float
    intercept: float
    r2: float
    se_slope: float
    window: tuple

    @property
    def rate(self) -> float:
        return -self.slope


def survival_curve(samples: np.ndarray, K: int) -> np.ndarray:
    """S(k) = P(sample > k) for k = 0..K; censored samples are stored as K + 1."""
    counts = np.bincount(np.minimum(samples, K + 1), minlength=K + 2)
    return 1.0 - np.cumsum(counts)[: K + 1] / samples.size


def fit_log_linear(k: np.ndarray, values: np.ndarray) -> Optional[TailFit]:
    """Least squares of log(values) on k; None with fewer than three points."""
    k = np.asarray(k, dtype=float)
    v = np.asarray(values, dtype=float)
    if k.size < 3:
        return None
    lv = np.log(v)
    A = np.vstack([k, np.ones_like(k)]).T
    (slope, icpt), *_ = np.linalg.lstsq(A, lv, rcond=None)
    resid = lv - (slope * k + icpt)
    ss_tot = float(np.sum((lv - lv.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 0.0
    se = math.sqrt(float(np.sum(resid ** 2)) / (k.size - 2) / float(np.sum((k - k.mean()) ** 2)))
    return TailFit(float(slope), float(icpt), r2, se, (int(k[0]), int(k[-1])))


def fit_geometric_tail(survival: np.ndarray, N: int, k_min: int = 1) -> Optional[TailFit]:
    """Fit log S(k) on the window k >= k_min where S(k) > 10/N."""
    k = np.arange(survival.size)
    ok = (k >= k_min) & (survival > 10.0 / N)
    # the window is the leading run of admissible k
    idx = np.flatnonzero(ok)
    if idx.size == 0:
        return None
    stop = idx[0]
    while stop + 1 < survival.size and ok[stop + 1]:
        stop += 1
    kk = k[idx[0]: stop + 1]
    return fit_log_linear(kk, survival[kk])


@dataclass
class HittingStats:
    samples: np.ndarray
    K: int
    survival: np.ndarray
    fit: Optional[TailFit]
    diagnostic: str = ""

    @property
    def censored(self) -> int:
        return int(np.count_nonzero(self.samples > self.K))

    @property
    def kappa_hat(self) -> Optional[float]:
        return None if self.fit is None else self.fit.rate

    def exp_moment(self, kappa: float) -> tuple[float, float]:
        """Empirical E exp(kappa tau) and its standard error (censored runs count at K + 1)."""
        w = np.exp(kappa * self.samples.astype(float))
        return float(w.mean()), float(w.std(ddof=1) / math.sqrt(w.size))


def hitting_time(model: DriftModel, noise: NoiseSpec, x0: State, p: State, delta: float, K: int, N: int,
                 seed: int = 0, h: Optional[float] = None) -> HittingStats:
    """First k >= 1 with |x_k - p| <= delta over N runs, censored at K."""
    if not delta > 0:
        raise PreconditionError(f"delta must be > 0, got {delta}")
    if not abs(p.z) + delta < 1:
        raise PreconditionError("the ball B(p, delta) must lie inside the interior |z| < 1")
    if K < 1 or N < 1:
        raise PreconditionError("K and N must be >= 1")
    chain = _as_chain(model, noise, h)

    def block(rng, start, stop):
        n = stop - start
        tau = np.full(n, K + 1, dtype=np.int64)
        active = np.arange(n)
        y = np.full(n, x0.y)
        z = np.full(n, x0.z)
        for k in range(1, K + 1):
            chain.advance(y, z, rng)
            hit = np.hypot(y - p.y, z - p.z) <= delta
            if np.any(hit):
                tau[active[hit]] = k
                keep = ~hit
                active, y, z = active[keep], y[keep], z[keep]
            if active.size == 0:
                break
        return tau

    tau = _concat(map_blocks(block, N, seed, "hitting")).astype(np.int64)
    surv = survival_curve(tau, K)
    fit = fit_geometric_tail(surv, N)
    diag = ""
    if np.all(tau > K):
        fit = None
        diag = "every run censored: enlarge delta or K, or strengthen the noise"
    elif fit is None:
        diag = "fewer than three points above the 10/N floor; tail too short to fit"
    return HittingStats(tau, K, surv, fit, diag)


# ---------------------------------------------------------------------------
# kernel TV and coupling


@dataclass
class KernelTV:
    tv: float
    floor: float
    N: int


def estimate_kernel_tv(model: DriftModel, noise: NoiseSpec, x: State, x_prime: State, N: int,
                       cfg: MeasureConfig = MeasureConfig(), seed: int = 0, h: Optional[float] = None,
                       common_random_numbers: bool = False) -> KernelTV:
    """Histogram TV between P_1(x, .) and P_1(x', .) from N one-step samples each."""
    if N < 4:
        raise PreconditionError("N must be >= 4")
    y1, z1 = sample_kernel(model, noise, x, N, seed, stream="kernel-tv/x", h=h)
    stream2 = "kernel-tv/x" if common_random_numbers else "kernel-tv/x'"
    y2, z2 = sample_kernel(model, noise, x_prime, N, seed, stream=stream2, h=h)
    m1 = EmpiricalMeasure.from_samples(y1, z1, cfg)
    m2 = EmpiricalMeasure.from_samples(y2, z2, cfg)
    return KernelTV(tv_distance(m1, m2), split_floor(y1, z1, cfg, N, N), N)


@dataclass(frozen=True)
class CouplingConfig:
    """Approximate maximal coupling: both kernels are estimated by ``n_aux``
    samples, binned on ``bins`` and coupled exactly as discrete laws."""

    n_aux: int = DEFAULT_N_AUX
    bins: MeasureConfig = COUPLING_BINS
    common_noise: bool = False

    def __post_init__(self):
        if self.n_aux < 1:
            raise PreconditionError("coupling needs n_aux >= 1 auxiliary samples")


@dataclass
class CoupledPair:
    x: State
    x_prime: State
    coupled: bool = False
    k: int = 0

    def __post_init__(self):
        if self.coupled and self.x != self.x_prime:
            raise PreconditionError("a coupled pair must have identical states")


def maximal_coupling_draw(xs: tuple, xps: tuple, bins: MeasureConfig, rng: np.random.Generator,
                          n_draws: int = 1):
    """Draw from the maximal coupling of the binned laws of two samples.

    Returns (y, z, y', z', coupled) arrays of length ``n_draws``.  On the
    common part both coordinates receive the same representative, taken
    uniformly from the first sample within the chosen bin; otherwise each
    side draws a bin from its residual mass and a representative from its
    own sample.  Each side picks a uniformly random element of its own
    sample whenever it is not on the common part, and the first side always
    does, so its marginal is exactly the law of one sample element.
    """
    bx = bins.bin_index(*xs)
    bq = bins.bin_index(*xps)
    nb = bins.n_bins
    p = np.bincount(bx, minlength=nb) / bx.size
    q = np.bincount(bq, minlength=nb) / bq.size
    w = np.minimum(p, q)
    s = float(w.sum())
    order_x = np.argsort(bx, kind="stable")
    order_q = np.argsort(bq, kind="stable")
    start_x = np.searchsorted(bx[order_x], np.arange(nb))
    start_q = np.searchsorted(bq[order_q], np.arange(nb))
    cnt_x = np.bincount(bx, minlength=nb)
    cnt_q = np.bincount(bq, minlength=nb)

    def pick(weights, total, order, start, cnt, n):
        b = np.searchsorted(np.cumsum(weights), rng.random(n) * total, side="right")
        b = np.minimum(b, nb - 1)
        # guard against landing on a zero-weight bin through rounding
        bad = weights[b] <= 0
        if np.any(bad):
            nz = np.flatnonzero(weights > 0)
            b[bad] = nz[np.searchsorted(nz, b[bad]).clip(0, nz.size - 1)]
        j = start[b] + (rng.random(n) * cnt[b]).astype(np.int64)
        return order[j]

    coupled = rng.random(n_draws) < s
    y = np.empty(n_draws)
    z = np.empty(n_draws)
    yp = np.empty(n_draws)
    zp = np.empty(n_draws)
    nc = int(coupled.sum())
    if nc:
        i = pick(w, s, order_x, start_x, cnt_x, nc)
        y[coupled] = xs[0][i]
        z[coupled] = xs[1][i]
        yp[coupled] = xs[0][i]
        zp[coupled] = xs[1][i]
    nf = n_draws - nc
    if nf:
        rx = p - w
        rq = q - w
        i = pick(rx, rx.sum(), order_x, start_x, cnt_x, nf)
        iq = pick(rq, rq.sum(), order_q, start_q, cnt_q, nf)
        free = ~coupled
        y[free] = xs[0][i]
        z[free] = xs[1][i]
        yp[free] = xps[0][iq]
        zp[free] = xps[1][iq]
    return y, z, yp, zp, coupled


def _in_ball(y, z, p: State, radius: float):
    return np.hypot(y - p.y, z - p.z) <= radius


def _aux_samples(chain: Chain, starts: Sequence[tuple], n_aux: int, rng, common: bool):
    """n_aux one-step samples from every start in each group of starts.

    ``starts`` is a sequence of (ys, zs) arrays of equal length; the result
    holds one (y, z) pair of arrays of shape (len(ys), n_aux) per group.
    With ``common`` all groups are driven by the same noise realisations.
    """
    n = len(starts[0][0])
    outs = [(np.empty((n, n_aux)), np.empty((n, n_aux))) for _ in starts]
    per = max(1, AUX_CHUNK // n_aux)
    for s in range(0, n, per):
        e = min(n, s + per)
        shared = chain.draw(rng, (e - s) * n_aux) if common else None
        for (ys, zs), (oy, oz) in zip(starts, outs):
            y = np.repeat(np.asarray(ys[s:e], dtype=float), n_aux)
            z = np.repeat(np.asarray(zs[s:e], dtype=float), n_aux)
            chain.advance_with(y, z, shared if common else chain.draw(rng, y.size))
            oy[s:e] = y.reshape(e - s, n_aux)
            oz[s:e] = z.reshape(e - s, n_aux)
    return outs


def _coupled_advance(chain: Chain, y, z, yp, zp, coupled, p: State, delta_hat: float,
                     ccfg: CouplingConfig, rng):
    """One step of the coupled chain for arrays of pairs, in place."""
    coupled |= (y == yp) & (z == zp)
    attempt = ~coupled & _in_ball(y, z, p, delta_hat) & _in_ball(yp, zp, p, delta_hat)
    free = ~coupled & ~attempt
    ic = np.flatnonzero(coupled)
    if ic.size:
        cy, cz = y[ic], z[ic]
        chain.advance(cy, cz, rng)
        y[ic], z[ic], yp[ic], zp[ic] = cy, cz, cy, cz
    ifr = np.flatnonzero(free)
    if ifr.size:
        fy = np.concatenate([y[ifr], yp[ifr]])
        fz = np.concatenate([z[ifr], zp[ifr]])
        chain.advance(fy, fz, rng)
        m = ifr.size
        y[ifr], z[ifr], yp[ifr], zp[ifr] = fy[:m], fz[:m], fy[m:], fz[m:]
    ia = np.flatnonzero(attempt)
    if ia.size:
        (ax, az), (bx, bz) = _aux_samples(chain, [(y[ia], z[ia]), (yp[ia], zp[ia])], ccfg.n_aux, rng,
                                          ccfg.common_noise)
        for j, i in enumerate(ia):
            ny, nz_, nyp, nzp, c = maximal_coupling_draw((ax[j], az[j]), (bx[j], bz[j]), ccfg.bins, rng)
            y[i], z[i], yp[i], zp[i] = ny[0], nz_[0], nyp[0], nzp[0]
            coupled[i] = bool(c[0])
    return coupled


def coupled_step(pair: CoupledPair, model: DriftModel, noise: NoiseSpec, p: State, delta_hat: float,
                 ccfg: CouplingConfig = CouplingConfig(), rng: Optional[np.random.Generator] = None,
                 h: Optional[float] = None) -> CoupledPair:
    if rng is None:
        rng = np.random.default_rng()
    chain = _as_chain(model, noise, h)
    y = np.array([pair.x.y])
    z = np.array([pair.x.z])
    yp = np.array([pair.x_prime.y])
    zp = np.array([pair.x_prime.z])
    coupled = np.array([pair.coupled])
    _coupled_advance(chain, y, z, yp, zp, coupled, p, delta_hat, ccfg, rng)
    return CoupledPair(State(y[0], z[0]), State(yp[0], zp[0]), bool(coupled[0]), pair.k + 1)


@dataclass
class CouplingIdentity:
    failure_rate: float
    se: float
    trials: int


def coupling_failure_rate(model: DriftModel, noise: NoiseSpec, x: State, x_prime: State, trials: int,
                          ccfg: CouplingConfig = CouplingConfig(), group: int = 1, seed: int = 0,
                          h: Optional[float] = None) -> CouplingIdentity:
    """Frequency of P{R_1 != R_2} for the near-p coupling at fixed (x, x').

    Trials come in groups that share one pair of auxiliary kernel samples;
    every group redraws them, so the frequency is an unbiased estimate of the
    failure probability of the procedure.  The standard error is computed
    across groups.
    """
    if trials < 1 or group < 1:
        raise PreconditionError("trials and group must be >= 1")
    chain = _as_chain(model, noise, h)
    n_groups = -(-trials // group)

    def block(rng, start, stop):
        out = []
        for g in range(start, stop):
            size = min(group, trials - g * group)
            (ax, az), (bx, bz) = _aux_samples(chain, [([x.y], [x.z]), ([x_prime.y], [x_prime.z])],
                                              ccfg.n_aux, rng, ccfg.common_noise)
            *_, c = maximal_coupling_draw((ax[0], az[0]), (bx[0], bz[0]), ccfg.bins, rng, size)
            out.append((size, int(size - c.sum())))
        return out

    rows = [r for part in map_blocks(block, n_groups, seed, "coupling-identity", block_size=1) for r in part]
    sizes = np.array([r[0] for r in rows], dtype=float)
    fails = np.array([r[1] for r in rows], dtype=float)
    rate = float(fails.sum() / sizes.sum())
    if len(rows) > 1:
        per = fails / sizes
        se = float(per.std(ddof=1) / math.sqrt(len(rows)))
    else:
        se = math.sqrt(rate * (1 - rate) / sizes.sum())
    return CouplingIdentity(rate, se, int(sizes.sum()))


def coupled_states(x0: State, x0_prime: State, model: DriftModel, noise: NoiseSpec, p: State,
                   delta_hat: float, k: int, N: int, ccfg: CouplingConfig = CouplingConfig(),
                   seed: int = 0, h: Optional[float] = None):
    """States (y, z, y', z', coupled) of N coupled pairs after k steps; used to check marginals."""
    if k < 0 or N < 1:
        raise PreconditionError("k must be >= 0 and N >= 1")
    chain = _as_chain(model, noise, h)

    def block(rng, start, stop):
        n = stop - start
        y, z = np.full(n, x0.y), np.full(n, x0.z)
        yp, zp = np.full(n, x0_prime.y), np.full(n, x0_prime.z)
        coupled = np.zeros(n, dtype=bool)
        for _ in range(k):
            _coupled_advance(chain, y, z, yp, zp, coupled, p, delta_hat, ccfg, rng)
        return y, z, yp, zp, coupled

    parts = map_blocks(block, N, seed, "coupled-states")
    return tuple(np.concatenate([q[i] for q in parts]) for i in range(5))


@dataclass
class CouplingStats:
    sigma: np.ndarray
    K: int
    survival: np.ndarray
    fit: Optional[TailFit]
    v_sum: float
    diagnostic: str = ""

    @property
    def censored(self) -> int:
        return int(np.count_nonzero(self.sigma > self.K))

    @property
    def gamma_hat(self) -> Optional[float]:
        return None if self.fit is None else self.fit.rate

    def exp_moment(self, gamma: float) -> tuple[float, float]:
        w = np.exp(gamma * self.sigma.astype(float))
        return float(w.mean()), float(w.std(ddof=1) / math.sqrt(w.size))


def run_coupled_chains(x0: State, x0_prime: State, model: DriftModel, noise: NoiseSpec, p: State,
                       delta_hat: float, K: int, N: int, ccfg: CouplingConfig = CouplingConfig(),
                       seed: int = 0, h: Optional[float] = None) -> CouplingStats:
    """Coupling times sigma of N coupled pairs, censored at K (stored as K + 1)."""
    if not delta_hat > 0:
        raise PreconditionError("delta_hat must be > 0")
    if K < 1 or N < 1:
        raise PreconditionError("K and N must be >= 1")
    chain = _as_chain(model, noise, h)

    def block(rng, start, stop):
        n = stop - start
        sigma = np.full(n, K + 1, dtype=np.int64)
        idx = np.arange(n)
        y = np.full(n, x0.y)
        z = np.full(n, x0.z)
        yp = np.full(n, x0_prime.y)
        zp = np.full(n, x0_prime.z)
        coupled = np.zeros(n, dtype=bool)
        if x0 == x0_prime:
            sigma[:] = 0
            return sigma
        for k in range(1, K + 1):
            _coupled_advance(chain, y, z, yp, zp, coupled, p, delta_hat, ccfg, rng)
            if np.any(coupled):
                sigma[idx[coupled]] = k
                keep = ~coupled
                idx, y, z, yp, zp, coupled = idx[keep], y[keep], z[keep], yp[keep], zp[keep], coupled[keep]
            if idx.size == 0:
                break
        return sigma

    sigma = _concat(map_blocks(block, N, seed, "coupling")).astype(np.int64)
    surv = survival_curve(sigma, K)
    fit = fit_geometric_tail(surv, N, k_min=1)
    diag = ""
    if np.all(sigma > K):
        fit = None
        diag = "no couplings observed: enlarge delta_hat or K"
    elif fit is None:
        diag = "fewer than three points above the 10/N floor; tail too short to fit"
    vsum = 2.0 + x0.y ** 2 + x0_prime.y ** 2
    return CouplingStats(sigma, K, surv, fit, vsum, diag)


# ---------------------------------------------------------------------------
# invariant measure and mixing


@dataclass
class InvariantSample:
    measure: EmpiricalMeasure
    y: np.ndarray
    z: np.ndarray

    def floor(self, n: int) -> float:
        """Expected TV between an n-sample histogram and this one, both of the same law."""
        return split_floor(self.y, self.z, self.measure.cfg, n, self.y.size)


def empirical_invariant(model: DriftModel, noise: NoiseSpec, burn_in: int = 1000, K: int = 100_000,
                        thinning: int = 1, seed: int = 0, cfg: MeasureConfig = MeasureConfig(),
                        h: Optional[float] = None, n_chains: Optional[int] = None,
                        max_overflow: float = 0.01) -> InvariantSample:
    """K stationary samples from parallel chains after ``burn_in`` steps.

    Chains start uniformly on [-1, 1]^2 and contribute ``thinning``-spaced
    states.  Samples are stored chain by chain, so the two halves used for the
    split-sample floor come from disjoint sets of chains.
    """
    if burn_in < 1:
        raise PreconditionError("burn_in must be >= 1")
    if thinning < 1 or K < 1:
        raise PreconditionError("thinning and K must be >= 1")
    chain = _as_chain(model, noise, h)
    n_chains = min(K, 4096) if n_chains is None else min(K, n_chains)
    rounds = -(-K // n_chains)

    def block(rng, start, stop):
        n = stop - start
        y = rng.uniform(-1.0, 1.0, n)
        z = rng.uniform(-1.0, 1.0, n)
        for _ in range(burn_in):
            chain.advance(y, z, rng)
        ys = np.empty((n, rounds))
        zs = np.empty((n, rounds))
        for r in range(rounds):
            for _ in range(thinning):
                chain.advance(y, z, rng)
            ys[:, r] = y
            zs[:, r] = z
        return ys.ravel(), zs.ravel()

    parts = map_blocks(block, n_chains, seed, "invariant")
    y = _concat([q[0] for q in parts])[:K]
    z = _concat([q[1] for q in parts])[:K]
    m = EmpiricalMeasure.from_samples(y, z, cfg)
    if m.overflow_fraction > max_overflow:
        raise PreconditionError(
            f"{100 * m.overflow_fraction:.2f}% of the stationary mass has |y| > {cfg.ymax}; widen ymax")
    return InvariantSample(m, y, z)


@dataclass
class MixingReport:
    tv: np.ndarray
    floor: float
    fit: Optional[TailFit]
    v_lambda: float
    floor_factor: float
    tv_intra: Optional[np.ndarray] = None
    lower_bound: Optional[float] = None

    @property
    def gamma_hat(self) -> Optional[float]:
        return None if self.fit is None else self.fit.rate

    @property
    def C_hat(self) -> Optional[float]:
        return None if self.fit is None else math.exp(self.fit.intercept) / self.v_lambda

    @property
    def window(self) -> Optional[tuple]:
        return None if self.fit is None else self.fit.window

    def at_floor(self, factor: Optional[float] = None) -> bool:
        f = self.floor_factor if factor is None else factor
        return bool(np.all(self.tv[1:] <= f * self.floor))

    def summary(self) -> dict:
        return {
            "gamma_hat": self.gamma_hat, "C_hat": self.C_hat, "floor": self.floor,
            "window": self.window, "r2": None if self.fit is None else self.fit.r2,
            "se_gamma": None if self.fit is None else self.fit.se_slope,
            "V_lambda": self.v_lambda, "lower_bound": self.lower_bound,
        }


def _draw_starts(starts, n: int, rng: np.random.Generator):
    if isinstance(starts, InvariantSample):
        i = rng.integers(0, starts.y.size, n)
        return starts.y[i].copy(), starts.z[i].copy()
    states = [s for s, _ in starts]
    w = np.array([wt for _, wt in starts], dtype=float)
    if np.any(w < 0) or not w.sum() > 0:
        raise PreconditionError("start weights must be nonnegative with positive sum")
    i = rng.choice(len(states), size=n, p=w / w.sum())
    ys = np.array([s.y for s in states])
    zs = np.array([s.z for s in states])
    return ys[i], zs[i]


def mean_lyapunov(starts) -> float:
    if isinstance(starts, InvariantSample):
        return float(np.mean(lyapunov(starts.y)))
    w = np.array([wt for _, wt in starts], dtype=float)
    v = np.array([1.0 + s.y ** 2 for s, _ in starts])
    return float(np.dot(w, v) / w.sum())


def estimate_mixing_rate(model: DriftModel, noise: NoiseSpec, starts, K: int, N: int,
                         reference: InvariantSample, seed: int = 0, h: Optional[float] = None,
                         floor_factor: float = 2.0, probe: Optional[float] = None) -> MixingReport:
    """TV(P*_k lambda, mu_hat) for k = 0..K and a log-linear fit before the floor.

    ``starts`` is a list of (State, weight) describing lambda, or an
    InvariantSample to restart from stationary draws.  The fit window is the
    leading run of k >= 1 with TV > floor_factor * floor.  With ``probe`` in
    (0, 1) the TV is also recorded at intra-step times (k - 1 + probe) T0.
    """
    if K < 1 or N < 1:
        raise PreconditionError("K and N must be >= 1")
    chain = _as_chain(model, noise, h)
    cfg = reference.measure.cfg
    n_first = None
    if probe is not None:
        if not 0 < probe < 1:
            raise PreconditionError("probe must lie in (0, 1)")
        n_first = max(1, min(chain.substeps - 1, int(round(probe * chain.substeps))))

    def block(rng, start, stop):
        n = stop - start
        y, z = _draw_starts(starts, n, rng)
        hist = np.zeros((K + 1, cfg.n_bins), dtype=np.int64)
        intra = np.zeros((K + 1, cfg.n_bins), dtype=np.int64) if n_first else None
        hist[0] = np.bincount(cfg.bin_index(y, z), minlength=cfg.n_bins)
        for k in range(1, K + 1):
            if n_first:
                my, mz = chain.advance_split(y, z, rng, n_first)
                intra[k] = np.bincount(cfg.bin_index(my, mz), minlength=cfg.n_bins)
            else:
                chain.advance(y, z, rng)
            hist[k] = np.bincount(cfg.bin_index(y, z), minlength=cfg.n_bins)
        return hist, intra

    parts = map_blocks(block, N, seed, "mixing")
    hist = sum(p[0] for p in parts)
    tv = np.array([tv_distance(EmpiricalMeasure(cfg, hist[k]), reference.measure) for k in range(K + 1)])
    tv_intra = None
    if n_first:
        intra = sum(p[1] for p in parts)
        tv_intra = np.array([np.nan] + [tv_distance(EmpiricalMeasure(cfg, intra[k]), reference.measure)
                                        for k in range(1, K + 1)])
    floor = reference.floor(N)
    above = tv > floor_factor * floor
    k = 1
    while k <= K and above[k]:
        k += 1
    window = np.arange(1, k)
    fit = fit_log_linear(window, tv[window]) if window.size else None
    lower = None
    if fit is None:
        # resolvable decay is too short: TV fell to the floor by step k
        lower = -math.log(max(floor_factor * floor, 1e-300)) / max(1, k)
    return MixingReport(tv, floor, fit, mean_lyapunov(starts), floor_factor, tv_intra, lower)
