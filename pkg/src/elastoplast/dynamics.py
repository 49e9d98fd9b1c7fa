"""State space, drift models and the projected Euler scheme.

The system is the differential inclusion

    y' = f(y, z) + zeta,     y in z' + dg(z),

where g is the indicator of [-1, 1].  Inside the interval z' = y; on z = +1
(resp. -1) the normal cone absorbs any outward velocity, so z freezes while
y > 0 (resp. y < 0).  One explicit Euler step followed by clamping z to
[-1, 1] is the exact resolvent of this piecewise motion, which is the scheme
implemented here.
"""

from __future__ import annotations

import csv
import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .exceptions import BlowUpError, PreconditionError

Y_CAP = 1e9
FD_STEP = 1e-6


@dataclass(frozen=True)
class State:
    """A point (y, z) of M = R x [-1, 1]."""

    y: float
    z: float

    def __post_init__(self):
        y, z = float(self.y), float(self.z)
        if not (math.isfinite(y) and math.isfinite(z)):
            raise PreconditionError(f"non-finite state ({y!r}, {z!r})")
        if abs(z) > 1.0:
            raise PreconditionError(f"|z| = {abs(z)!r} > 1 violates the constraint")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)

    def as_array(self) -> np.ndarray:
        return np.array([self.y, self.z])

    def distance(self, other: "State") -> float:
        return math.hypot(self.y - other.y, self.z - other.z)

    def reflected(self) -> "State":
        return State(-self.y, -self.z)

    @classmethod
    def parse(cls, text: str) -> "State":
        parts = [p for p in text.replace(" ", "").split(",") if p]
        if len(parts) != 2:
            raise PreconditionError(f"cannot parse state {text!r}; expected 'y,z'")
        return cls(float(parts[0]), float(parts[1]))


Drift = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class DriftModel:
    """Drift f together with its Lyapunov certificate and smooth point.

    ``f`` must broadcast over numpy arrays; scalar inputs are used by the
    single-trajectory integrator and arrays by the ensemble engine.
    """

    f: Drift
    alpha: float
    c_lyap: float
    p: State = field(default_factory=lambda: State(0.0, 0.0))
    smooth_radius: float = 0.5
    t0: float = 1.0
    df_dy: Optional[Drift] = None
    df_dz: Optional[Drift] = None
    name: str = "custom"

    def __post_init__(self):
        if not self.alpha > 0:
            raise PreconditionError(f"alpha must be > 0, got {self.alpha}")
        if not self.c_lyap >= 0:
            raise PreconditionError(f"c_lyap must be >= 0, got {self.c_lyap}")
        if not abs(self.p.z) < 1:
            raise PreconditionError("the smooth point p must lie in the interior |z| < 1")
        if not self.smooth_radius > 0:
            raise PreconditionError("smooth_radius must be > 0")
        if not 0 < self.t0 <= 1:
            raise PreconditionError(f"t0 must lie in (0, 1], got {self.t0}")

    def __call__(self, y, z):
        return self.f(y, z)

    def partials(self, y, z):
        """(df/dy, df/dz), analytic when supplied, else central differences."""
        y = np.asarray(y, dtype=float)
        z = np.asarray(z, dtype=float)
        if self.df_dy is not None:
            dy = np.broadcast_to(np.asarray(self.df_dy(y, z), dtype=float), y.shape)
        else:
            dy = (self.f(y + FD_STEP, z) - self.f(y - FD_STEP, z)) / (2 * FD_STEP)
        if self.df_dz is not None:
            dz = np.broadcast_to(np.asarray(self.df_dz(y, z), dtype=float), y.shape)
        else:
            dz = (self.f(y, z + FD_STEP) - self.f(y, z - FD_STEP)) / (2 * FD_STEP)
        return np.asarray(dy, dtype=float), np.asarray(dz, dtype=float)

    def reflected(self) -> "DriftModel":
        """The drift seen through the symmetry (y, z, u) -> (-y, -z, -u)."""
        f = self.f
        dfy, dfz = self.df_dy, self.df_dz
        return DriftModel(
            f=lambda y, z: -f(-y, -z),
            alpha=self.alpha,
            c_lyap=self.c_lyap,
            p=self.p.reflected(),
            smooth_radius=self.smooth_radius,
            t0=self.t0,
            df_dy=None if dfy is None else (lambda y, z: dfy(-y, -z)),
            df_dz=None if dfz is None else (lambda y, z: dfz(-y, -z)),
            name=f"reflected({self.name})",
        )


@dataclass(frozen=True)
class SolverConfig:
    h: float
    T: float
    seed: int = 0

    def __post_init__(self):
        if not (self.h > 0 and math.isfinite(self.h)):
            raise PreconditionError(f"time step h must be > 0, got {self.h}")
        if not (self.T > 0 and math.isfinite(self.T)):
            raise PreconditionError(f"horizon T must be > 0, got {self.T}")
        if self.h > self.T * (1 + 1e-12):
            raise PreconditionError(f"h = {self.h} exceeds the horizon T = {self.T}")

    @property
    def n_steps(self) -> int:
        return grid_size(self.T, self.h)


def grid_size(T: float, h: float) -> int:
    """Number of steps of size h covering [0, T]; T/h must be an integer."""
    n = round(T / h)
    if n < 1 or abs(n * h - T) > 1e-9 * max(1.0, T):
        raise PreconditionError(f"step {h} does not divide the horizon {T}")
    return int(n)


@dataclass
class Trajectory:
    times: np.ndarray
    y: np.ndarray
    z: np.ndarray
    seed: Optional[int] = None

    def __len__(self):
        return len(self.times)

    @property
    def states(self) -> list[State]:
        return [State(a, b) for a, b in zip(self.y, self.z)]

    @property
    def endpoint(self) -> State:
        return State(self.y[-1], self.z[-1])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "y", "z"])
            for row in zip(self.times, self.y, self.z):
                w.writerow([fmt(v) for v in row])


def fmt(value: float) -> str:
    """17 significant digits, the round-trip precision of a double."""
    return format(float(value), ".17g")


class ConstraintMonitor:
    """Process-wide record of how many states were produced and the largest |z| seen."""

    def __init__(self):
        self._lock = threading.Lock()
        self.steps = 0
        self.max_abs_z = 0.0

    def record(self, n_states: int, max_abs_z: float) -> None:
        with self._lock:
            self.steps += int(n_states)
            if max_abs_z > self.max_abs_z:
                self.max_abs_z = float(max_abs_z)

    @property
    def max_excess(self) -> float:
        """max |z| - 1; zero once the boundary has been touched, never positive."""
        return self.max_abs_z - 1.0

    def reset(self) -> None:
        with self._lock:
            self.steps = 0
            self.max_abs_z = 0.0


MONITOR = ConstraintMonitor()


def lyapunov_value(x: State) -> float:
    return 1.0 + x.y * x.y


def lyapunov(y):
    """Vectorised V(y, z) = 1 + y^2."""
    y = np.asarray(y, dtype=float)
    return 1.0 + y * y


def clamp_step(x: State, model: DriftModel, forcing_increment: float, h: float) -> State:
    """One projected Euler step; z is clamped to [-1, 1] after its update."""
    if not (h > 0 and math.isfinite(h)):
        raise PreconditionError(f"h must be > 0, got {h}")
    if not math.isfinite(forcing_increment):
        raise PreconditionError(f"non-finite forcing increment {forcing_increment!r}")
    drift = float(model.f(x.y, x.z))
    if not math.isfinite(drift):
        raise PreconditionError(f"drift is non-finite at ({x.y}, {x.z})")
    y_new = x.y + h * drift + forcing_increment
    z_new = min(1.0, max(-1.0, x.z + h * x.y))
    MONITOR.record(1, abs(z_new))
    return State(y_new, z_new)


def integrate(x0: State, model: DriftModel, forcing, cfg: SolverConfig, y_cap: float = Y_CAP) -> Trajectory:
    """Integrate over [0, cfg.T] with step cfg.h.

    ``forcing`` is None (unforced) or anything exposing ``horizon`` and
    ``increments(t_left, h)``, i.e. a ForcingPath or a ControlSchedule.
    """
    n = cfg.n_steps
    h = cfg.h
    times = np.arange(n + 1) * h
    if forcing is None:
        incr = np.zeros(n)
    else:
        if forcing.horizon < cfg.T - 1e-9 * max(1.0, cfg.T):
            raise PreconditionError(
                f"forcing covers [0, {forcing.horizon}] but the horizon is {cfg.T}")
        incr = np.asarray(forcing.increments(times[:-1], h), dtype=float)
    if not np.all(np.isfinite(incr)):
        raise PreconditionError("forcing produced non-finite increments")

    f = model.f
    ys = np.empty(n + 1)
    zs = np.empty(n + 1)
    y, z = x0.y, x0.z
    ys[0], zs[0] = y, z
    for i in range(n):
        y_next = y + h * float(f(y, z)) + incr[i]
        z = z + h * y
        if z > 1.0:
            z = 1.0
        elif z < -1.0:
            z = -1.0
        y = y_next
        if not abs(y) <= y_cap:
            raise BlowUpError(f"|y| exceeded {y_cap:g} at t = {times[i + 1]:.6g}")
        ys[i + 1] = y
        zs[i + 1] = z
    MONITOR.record(n, np.max(np.abs(zs)))
    return Trajectory(times, ys, zs, seed=getattr(forcing, "seed", None))


def propagate(y: np.ndarray, z: np.ndarray, f: Drift, increments: Optional[np.ndarray], h: float,
              n_sub: Optional[int] = None, y_cap: float = Y_CAP):
    """Advance an ensemble of states in place by the columns of ``increments``.

    ``increments`` has shape (n_paths, n_sub); None means zero forcing for
    ``n_sub`` steps.
    """
    if increments is not None:
        n_sub = increments.shape[1]
    zmax = 0.0
    for i in range(n_sub):
        y_next = y + h * f(y, z)
        if increments is not None:
            y_next += increments[:, i]
        z += h * y
        np.clip(z, -1.0, 1.0, out=z)
        y[:] = y_next
        if z.size:
            zmax = max(zmax, float(z.max()), -float(z.min()))
    if y.size:
        peak = float(np.max(np.abs(y)))
        if not peak <= y_cap:
            raise BlowUpError(f"ensemble |y| exceeded {y_cap:g}")
    MONITOR.record(y.size * n_sub, zmax)
    return y, z


@dataclass
class DriftReport:
    max_violation: float
    argmax: tuple
    passed: bool
    n_points: int


def validate_drift(model: DriftModel, ymax: float = 10.0, ny: int = 201, nz: int = 41) -> DriftReport:
    """Check y f(y,z) <= -alpha y^2 + C on a regular grid over [-ymax, ymax] x [-1, 1]."""
    if ny < 1 or nz < 1:
        raise PreconditionError("empty validation grid")
    ys = np.linspace(-ymax, ymax, ny) if ny > 1 else np.array([0.0])
    zs = np.linspace(-1.0, 1.0, nz) if nz > 1 else np.array([0.0])
    Y, Z = np.meshgrid(ys, zs, indexing="ij")
    lhs = Y * model.f(Y, Z)
    rhs = -model.alpha * Y * Y + model.c_lyap
    excess = lhs - rhs
    k = np.unravel_index(np.argmax(excess), excess.shape)
    worst = float(excess[k])
    return DriftReport(
        max_violation=worst,
        argmax=(float(Y[k]), float(Z[k])),
        passed=worst <= 1e-12,
        n_points=int(excess.size),
    )


@dataclass
class DwellReport:
    passed: bool
    max_distance: float
    n_starts: int
    worst_start: Optional[State]


def dwell_starts(p: State, r0: float, n_rings: int = 5, n_angles: int = 16) -> list[State]:
    """Polar grid of starts in the closed ball of radius r0 around p, restricted to M."""
    if r0 < 0:
        raise PreconditionError("r0 must be >= 0")
    starts = [p]
    if r0 > 0:
        for i in range(1, n_rings + 1):
            r = r0 * i / n_rings
            for j in range(n_angles):
                th = 2 * math.pi * j / n_angles
                y, z = p.y + r * math.cos(th), p.z + r * math.sin(th)
                if abs(z) <= 1.0:
                    starts.append(State(y, z))
    return starts


def verify_dwell(model: DriftModel, r0: float, cfg: Optional[SolverConfig] = None,
                 n_rings: int = 5, n_angles: int = 16) -> DwellReport:
    """Certify that unforced motion from B(p, r0) stays in the smooth ball for [0, t0]."""
    if cfg is None:
        cfg = SolverConfig(h=1e-3 * model.t0, T=model.t0)
    horizon = SolverConfig(h=cfg.h, T=model.t0, seed=cfg.seed)
    starts = dwell_starts(model.p, r0, n_rings, n_angles)
    if not starts:
        raise PreconditionError("no admissible starting points")
    worst, worst_start = 0.0, None
    for x0 in starts:
        tr = integrate(x0, model, None, horizon)
        d = float(np.max(np.hypot(tr.y - model.p.y, tr.z - model.p.z)))
        if d >= worst:
            worst, worst_start = d, x0
    return DwellReport(worst < model.smooth_radius, worst, len(starts), worst_start)
