"""Random forcing: Brownian segments, decomposable noise and trigonometric projections.

Two readings of a forcing realisation on one reference interval [0, T0]:

* ``path``   -- values eta(t) of a path with eta(0) = 0; the system is driven
                by its derivative, so each solver step consumes an increment.
* ``direct`` -- values zeta(t) of the force itself; each step consumes
                h * zeta(t_left).

The trigonometric basis of L^2((0, T0)) is ordered constant, cos, sin, cos,
sin, ... : phi_1 = 1/sqrt(T0), phi_{2m} = sqrt(2/T0) cos(2 pi m t / T0),
phi_{2m+1} = sqrt(2/T0) sin(2 pi m t / T0).  Its antiderivatives e_j span the
subspaces F_j used for projecting Brownian paths.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .dynamics import fmt, grid_size
from .ensemble import map_blocks
from .exceptions import PreconditionError

KINDS = ("path", "direct")


@dataclass
class ForcingPath:
    kind: str
    step: float
    values: np.ndarray
    seed: Optional[int] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PreconditionError(f"unknown forcing kind {self.kind!r}")
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1 or self.values.size < 2:
            raise PreconditionError("a forcing path needs at least two grid values")
        if not self.step > 0:
            raise PreconditionError("grid step must be > 0")
        if self.kind == "path" and self.values[0] != 0.0:
            raise PreconditionError("a path must start at 0")

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.values.size) * self.step

    @property
    def horizon(self) -> float:
        return self.step * (self.values.size - 1)

    def __call__(self, t):
        return np.interp(t, self.times, self.values)

    def increments(self, t_left, h):
        t_left = np.asarray(t_left, dtype=float)
        if self.kind == "path":
            n = t_left.size
            if math.isclose(h, self.step, rel_tol=1e-12) and n <= self.values.size - 1:
                return np.diff(self.values[: n + 1])
            return self(t_left + h) - self(t_left)
        return h * self(t_left)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "value"])
            for t, v in zip(self.times, self.values):
                w.writerow([fmt(t), fmt(v)])


@dataclass(frozen=True)
class BasisSpec:
    T0: float
    J: int

    def __post_init__(self):
        if not self.T0 > 0:
            raise PreconditionError("T0 must be > 0")
        if int(self.J) != self.J or self.J < 1:
            raise PreconditionError(f"basis dimension J must be a positive integer, got {self.J}")


def _basis_arrays(j: int, t, T0: float):
    t = np.asarray(t, dtype=float)
    if j == 1:
        c = 1.0 / math.sqrt(T0)
        return np.full_like(t, c), c * t
    m = j // 2
    w = 2.0 * math.pi * m / T0
    amp = math.sqrt(2.0 / T0)
    if j % 2 == 0:
        return amp * np.cos(w * t), amp * np.sin(w * t) / w
    return amp * np.sin(w * t), amp * (1.0 - np.cos(w * t)) / w


def basis_eval(j: int, t, T0: float):
    """The j-th trigonometric basis function and its antiderivative from 0."""
    if int(j) != j or j < 1:
        raise PreconditionError(f"basis index must be >= 1, got {j}")
    arr = np.asarray(t, dtype=float)
    if np.any(arr < 0) or np.any(arr > T0 * (1 + 1e-12)):
        raise PreconditionError(f"t must lie in [0, {T0}]")
    phi, e = _basis_arrays(int(j), arr, T0)
    if np.ndim(t) == 0:
        return float(phi), float(e)
    return phi, e


def basis_matrix(J: int, t, T0: float):
    """Rows phi_1..phi_J and e_1..e_J evaluated on the grid t."""
    t = np.asarray(t, dtype=float)
    phi = np.empty((J, t.size))
    e = np.empty((J, t.size))
    for j in range(1, J + 1):
        phi[j - 1], e[j - 1] = _basis_arrays(j, t, T0)
    return phi, e


def sample_brownian(T0: float, h: float, seed: int) -> ForcingPath:
    """One discrete Brownian path on [0, T0] with step h."""
    return ForcingPath("path", h, brownian_paths(T0, h, 1, seed)[0], seed=seed)


def brownian_paths(T0: float, h: float, n: int, seed: int) -> np.ndarray:
    """``n`` independent discrete Brownian paths, shape (n, T0/h + 1)."""
    if not h > 0:
        raise PreconditionError(f"h must be > 0, got {h}")
    m = grid_size(T0, h)
    sq = math.sqrt(h)

    def block(rng, start, stop):
        out = np.zeros((stop - start, m + 1))
        np.cumsum(sq * rng.standard_normal((stop - start, m)), axis=1, out=out[:, 1:])
        return out

    parts = map_blocks(block, n, seed, "brownian")
    return np.concatenate(parts, axis=0) if parts else np.zeros((0, m + 1))


class Projector:
    """P_{F_J} on a fixed grid.

    Coefficients are left-point Riemann-Stieltjes sums c_n = sum_i phi_n(t_i)
    (eta(t_{i+1}) - eta(t_i)).  On a finite grid these are not exactly
    biorthogonal to the discrete increments of e_n, so the coefficients are
    corrected by the Gram matrix G_mn = sum_i phi_m(t_i) (e_n(t_{i+1}) - e_n(t_i)).
    The resulting operator is an exact (oblique) projection: it fixes F_J
    and is idempotent up to rounding.
    """

    def __init__(self, basis: BasisSpec, step: float, n_points: int):
        t = np.arange(n_points) * step
        self.basis = basis
        phi, e = basis_matrix(basis.J, t, basis.T0)
        self.phi_left = phi[:, :-1]
        self.e = e
        de = np.diff(e, axis=1)
        self.gram = self.phi_left @ de.T

    def coefficients(self, values: np.ndarray) -> np.ndarray:
        d = np.diff(np.atleast_2d(values), axis=1)
        c = d @ self.phi_left.T
        return np.linalg.solve(self.gram, c.T).T

    def reconstruct(self, xi: np.ndarray) -> np.ndarray:
        return xi @ self.e


def project_path(path: ForcingPath, basis: BasisSpec) -> ForcingPath:
    if path.kind != "path":
        raise PreconditionError("projection applies to paths (kind='path')")
    if basis.J < 1:
        raise PreconditionError("J must be >= 1")
    proj = Projector(basis, path.step, path.values.size)
    xi = proj.coefficients(path.values)
    rec = proj.reconstruct(xi)[0]
    rec[0] = 0.0
    return ForcingPath("path", path.step, rec, seed=path.seed)


RhoSpec = Union[str, Callable[[np.random.Generator, tuple], np.ndarray]]

_RHO = {
    "normal": lambda rng, size: rng.standard_normal(size),
    "laplace": lambda rng, size: rng.laplace(0.0, 1.0 / math.sqrt(2.0), size),
    "logistic": lambda rng, size: rng.logistic(0.0, math.sqrt(3.0) / math.pi, size),
}


def rho_sampler(rho: RhoSpec):
    """Sampler for a named unit-variance density, or a user callable (rng, size) -> array."""
    if callable(rho):
        return rho
    if rho in _RHO:
        return _RHO[rho]
    raise PreconditionError(f"density {rho!r} is not sampleable; known: {sorted(_RHO)}")


def geometric_weights(J: int, ratio: float = 0.5, scale: float = 1.0) -> np.ndarray:
    return scale * ratio ** np.arange(J)


@dataclass
class DecomposableLaw:
    """eta = sum_j b_j xi_j phi_j with i.i.d. xi_j ~ rho, truncated at J terms.

    ``b`` may list more than J weights; the squared tail beyond J must then be
    below ``tail_tol``.
    """

    b: Sequence[float]
    rho: RhoSpec = "normal"
    J: int = 64
    tail_tol: float = 1e-8

    def __post_init__(self):
        b = np.asarray(self.b, dtype=float)
        if b.ndim != 1 or b.size < self.J:
            raise PreconditionError(f"need at least J = {self.J} weights, got {b.size}")
        if self.J < 1:
            raise PreconditionError("J must be >= 1")
        if np.any(b == 0) or not np.all(np.isfinite(b)):
            raise PreconditionError("all weights b_j must be finite and nonzero")
        tail = float(np.sum(b[self.J:] ** 2))
        if tail > self.tail_tol:
            raise PreconditionError(f"squared tail {tail:.3g} beyond J = {self.J} exceeds {self.tail_tol:g}")
        self.b = b
        self._sampler = rho_sampler(self.rho)

    @property
    def weights(self) -> np.ndarray:
        return self.b[: self.J]

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Coefficients b_j xi_j, shape (n, J)."""
        xi = np.asarray(self._sampler(rng, (n, self.J)), dtype=float)
        return xi * self.weights


def sample_decomposable(law: DecomposableLaw, basis: BasisSpec, h: float, seed: int) -> ForcingPath:
    if basis.J != law.J:
        raise PreconditionError(f"basis dimension {basis.J} differs from the law's J = {law.J}")
    return ForcingPath("direct", h, decomposable_paths(law, basis, h, 1, seed)[0], seed=seed)


def decomposable_paths(law: DecomposableLaw, basis: BasisSpec, h: float, n: int, seed: int) -> np.ndarray:
    m = grid_size(basis.T0, h)
    phi, _ = basis_matrix(law.J, np.arange(m + 1) * h, basis.T0)

    def block(rng, start, stop):
        return law.draw(rng, stop - start) @ phi

    parts = map_blocks(block, n, seed, "decomposable")
    return np.concatenate(parts, axis=0) if parts else np.zeros((0, m + 1))


@dataclass
class NoiseSpec:
    """Per-step law of the forcing for the discrete chain x_k = S(x_{k-1}; eta_k)."""

    kind: str = "white"
    law: Optional[DecomposableLaw] = None
    _phi_cache: dict = None

    def __post_init__(self):
        if self.kind not in ("white", "decomposable", "none"):
            raise PreconditionError(f"unknown noise kind {self.kind!r}")
        if self.kind == "decomposable" and self.law is None:
            raise PreconditionError("decomposable noise needs a law")
        self._phi_cache = {}

    def increments(self, rng: np.random.Generator, n: int, t0: float, h: float, n_sub: Optional[int] = None):
        """Forcing increments for ``n`` paths over one reference interval, shape (n, n_sub).

        ``n_sub`` may truncate the interval (intra-step probes); None means all of [0, t0].
        Returns None for the unforced system.
        """
        m = grid_size(t0, h)
        k = m if n_sub is None else n_sub
        if self.kind == "none":
            return None
        if self.kind == "white":
            incr = rng.standard_normal((n, m))
            incr *= math.sqrt(h)
            return incr[:, :k]
        key = (t0, h)
        if key not in self._phi_cache:
            phi, _ = basis_matrix(self.law.J, np.arange(m) * h, t0)
            self._phi_cache[key] = phi
        return h * (self.law.draw(rng, n) @ self._phi_cache[key])[:, :k]


def white() -> NoiseSpec:
    return NoiseSpec("white")
