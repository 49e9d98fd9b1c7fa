"""Explicit controls steering the elasto-plastic system between states.

Every segment is described by a closed-form state profile (y(s), z(s)) on its
local time s in [0, duration] together with y'(s); the control is recovered as
u = y' - f(y, z).  Because adjacent profiles match in state and in y', the
glued control is continuous.

Targets with y_T < 0 are reached through the upper corner U = (0, 1): ramp the
elastic component to z = 1, drain the velocity in the plastic phase, then
descend into the interior.  Targets with y_T > 0 use the mirror image of the
same construction under (y, z, u) -> (-y, -z, -u).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .dynamics import DriftModel, SolverConfig, State, Trajectory, fmt, grid_size, integrate
from .exceptions import InfeasibleError, PreconditionError
from .noise import ForcingPath

CASE_TAGS = ("kickoff", "ramp_to_plastic", "plastic_drain", "traverse", "descend_from_corner", "linear")

A_CAP = 8.0
KICKOFF_SUBSTEPS = 2000
JUNCTION_TOL = 1e-9


@dataclass
class Profile:
    """State path of a segment: y(s), z(s) and dy/ds, all vectorised in s."""

    y: Callable
    z: Callable
    ydot: Callable

    def mirrored(self) -> "Profile":
        y, z, yd = self.y, self.z, self.ydot
        return Profile(lambda s: -y(s), lambda s: -z(s), lambda s: -yd(s))


@dataclass
class ControlSegment:
    case_tag: str
    duration: float
    params: dict
    rule: Callable
    profile: Optional[Profile] = None

    def __post_init__(self):
        if self.case_tag not in CASE_TAGS:
            raise PreconditionError(f"unknown case tag {self.case_tag!r}")
        if not self.duration > 0:
            raise PreconditionError(f"segment duration must be > 0, got {self.duration}")

    def u(self, s):
        s = np.asarray(s, dtype=float)
        return np.broadcast_to(np.asarray(self.rule(s), dtype=float), s.shape).copy()

    def state(self, s) -> State:
        if self.profile is None:
            raise PreconditionError(f"segment {self.case_tag!r} carries no state profile")
        return State(float(self.profile.y(s)), float(np.clip(self.profile.z(s), -1.0, 1.0)))

    @property
    def start(self) -> State:
        return self.state(0.0)

    @property
    def end(self) -> State:
        return self.state(self.duration)

    def mirrored(self) -> "ControlSegment":
        rule = self.rule
        params = dict(self.params, mirrored=not self.params.get("mirrored", False))
        prof = None if self.profile is None else self.profile.mirrored()
        return ControlSegment(self.case_tag, self.duration, params, lambda s: -rule(s), prof)


def _profile_segment(tag, duration, params, model: DriftModel, y, z, ydot) -> ControlSegment:
    f = model.f

    def rule(s):
        return ydot(s) - f(y(s), z(s))

    return ControlSegment(tag, duration, params, rule, Profile(y, z, ydot))


class ControlSchedule:
    """Piecewise control on [0, T]; a junction instant belongs to the later segment."""

    kind = "direct"
    seed = None

    def __init__(self, segments: Sequence[ControlSegment], T: Optional[float] = None):
        self.segments = list(segments)
        durations = [s.duration for s in self.segments]
        self.starts = np.concatenate([[0.0], np.cumsum(durations)])[:-1] if durations else np.zeros(0)
        total = float(math.fsum(durations))
        if T is None:
            T = total
        if abs(total - T) > 1e-12 * max(1.0, T):
            raise PreconditionError(f"segment durations sum to {total!r}, not T = {T!r}")
        self.T = float(T)

    @property
    def horizon(self) -> float:
        return self.T

    def __len__(self):
        return len(self.segments)

    def u(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape)
        if not self.segments:
            return out
        idx = np.clip(np.searchsorted(self.starts, t, side="right") - 1, 0, len(self.segments) - 1)
        for i, seg in enumerate(self.segments):
            mask = idx == i
            if np.any(mask):
                out[mask] = seg.u(np.clip(t[mask] - self.starts[i], 0.0, seg.duration))
        return out

    def __call__(self, t):
        return self.u(t)

    def increments(self, t_left, h):
        return h * self.u(t_left)

    def junction_residuals(self) -> list[float]:
        res = []
        for a, b in zip(self.segments, self.segments[1:]):
            res.append(abs(float(a.u(a.duration)) - float(b.u(0.0))))
        return res

    def mirrored(self) -> "ControlSchedule":
        return ControlSchedule([s.mirrored() for s in self.segments], self.T)

    def to_csv(self, path, h: float) -> None:
        import csv

        n = grid_size(self.T, h)
        t = np.arange(n + 1) * h
        u = self.u(t)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "u"])
            for a, b in zip(t, u):
                w.writerow([fmt(a), fmt(b)])

    def metadata(self) -> dict:
        return {
            "T": self.T,
            "segments": [
                {"case_tag": s.case_tag, "start": float(t0), "duration": s.duration,
                 "params": {k: v for k, v in s.params.items()}}
                for s, t0 in zip(self.segments, self.starts)
            ],
            "junction_residuals": self.junction_residuals(),
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.metadata(), fh, indent=2, sort_keys=True)
            fh.write("\n")


# ---------------------------------------------------------------------------
# segments


def ramp_to_plastic(x0: State, epsilon: float, model: DriftModel) -> ControlSegment:
    """Constant acceleration a carrying z exactly onto the plastic line in time epsilon.

    For y0 > 0 the target line is z = 1 with a = 2(1 - z0 - y0 eps)/eps^2; for
    y0 < 0 it is the mirror image toward z = -1.
    """
    y0, z0 = x0.y, x0.z
    if y0 == 0:
        raise PreconditionError("ramp_to_plastic needs y0 != 0; use kickoff first")
    sgn = 1.0 if y0 > 0 else -1.0
    gap = 1.0 - sgn * z0
    if not gap > 0:
        raise PreconditionError(f"already on the plastic line z = {sgn:+.0f}")
    eps0 = gap / abs(y0)
    if not 0 < epsilon < eps0:
        raise PreconditionError(f"epsilon must lie in (0, {eps0!r}), got {epsilon!r}")
    a = 2.0 * (gap - abs(y0) * epsilon) / epsilon ** 2
    line = sgn

    def y(s):
        return y0 + sgn * a * np.asarray(s, dtype=float)

    def z(s):
        s = np.asarray(s, dtype=float)
        return np.where(s >= epsilon, line, z0 + y0 * s + sgn * 0.5 * a * s * s)

    def ydot(s):
        return np.full(np.shape(s), sgn * a)

    params = {"a": a, "epsilon": epsilon, "epsilon0": eps0, "y0": y0, "z0": z0}
    return _profile_segment("ramp_to_plastic", epsilon, params, model, y, z, ydot)


def ramp_endpoint(x0: State, epsilon: float) -> tuple[float, float, float]:
    """(a, y(eps), z(eps)) of the upward ramp in closed form, without the clamp."""
    y0, z0 = x0.y, x0.z
    a = 2.0 * (1.0 - z0 - y0 * epsilon) / epsilon ** 2
    return a, epsilon * a + y0, epsilon ** 2 * a / 2 + y0 * epsilon + z0


def ramp_epsilon_for_slope(x0: State, a: float) -> float:
    """The epsilon whose ramp has acceleration |a|: root of a e^2 + 2|y0| e - 2 gap = 0."""
    if not a > 0:
        raise PreconditionError(f"ramp acceleration must be > 0, got {a}")
    sgn = 1.0 if x0.y > 0 else -1.0
    gap = 1.0 - sgn * x0.z
    v = abs(x0.y)
    return (-v + math.sqrt(v * v + 2.0 * a * gap)) / a


def plastic_drain(x0: State, T_tilde: float, model: DriftModel,
                  initial_slope: Optional[float] = None) -> ControlSegment:
    """Bring y to 0 while z rests on the plastic line.

    Without ``initial_slope`` the velocity decays linearly, y = y0 (1 - s/T).
    With it, y follows the cubic Hermite curve from (y0, initial_slope) to
    (0, 0); both ends then have prescribed derivatives, which is what keeps
    the glued control continuous.
    """
    y0, z0 = x0.y, x0.z
    if z0 == 1.0:
        sgn = 1.0
    elif z0 == -1.0:
        sgn = -1.0
    else:
        raise PreconditionError(f"plastic_drain needs z0 = +-1, got z0 = {z0!r}")
    if sgn * y0 < 0:
        raise PreconditionError("velocity points into the interior; not in the plastic phase")
    if not T_tilde > 0:
        raise PreconditionError(f"T_tilde must be > 0, got {T_tilde}")
    D = float(T_tilde)
    params = {"y0": y0, "T_tilde": D, "line": sgn}

    def z(s):
        return np.full(np.shape(s), sgn)

    if initial_slope is None:
        def y(s):
            return y0 * (1.0 - np.asarray(s, dtype=float) / D)

        def ydot(s):
            return np.full(np.shape(s), -y0 / D)
    else:
        m0 = float(initial_slope)
        if sgn * m0 < 0:
            raise PreconditionError("initial slope would push y through zero")
        params["initial_slope"] = m0

        def y(s):
            r = np.asarray(s, dtype=float) / D
            return y0 * (2 * r ** 3 - 3 * r ** 2 + 1) + D * m0 * (r ** 3 - 2 * r ** 2 + r)

        def ydot(s):
            r = np.asarray(s, dtype=float) / D
            return y0 * (6 * r ** 2 - 6 * r) / D + m0 * (3 * r ** 2 - 4 * r + 1)

    return _profile_segment("plastic_drain", D, params, model, y, z, ydot)


def kickoff(x0: State, level: float, epsilon: float, model: DriftModel,
            substeps: int = KICKOFF_SUBSTEPS) -> ControlSegment:
    """Constant control ``level`` for time epsilon, lifting y above zero.

    The state profile has no closed form for general f; it is tabulated by a
    fine RK4 integration and interpolated.
    """
    f0 = float(model.f(x0.y, x0.z))
    if not f0 + level > 0:
        raise PreconditionError(f"kickoff needs f(x0) + level > 0, got {f0 + level!r}")
    if not epsilon > 0:
        raise PreconditionError(f"epsilon must be > 0, got {epsilon}")
    n = int(substeps)
    dt = epsilon / n
    ys = np.empty(n + 1)
    zs = np.empty(n + 1)
    y, z = x0.y, x0.z
    ys[0], zs[0] = y, z
    f = model.f

    def rhs(yy, zz):
        return float(f(yy, zz)) + level, yy

    for i in range(n):
        k1y, k1z = rhs(y, z)
        k2y, k2z = rhs(y + 0.5 * dt * k1y, z + 0.5 * dt * k1z)
        k3y, k3z = rhs(y + 0.5 * dt * k2y, z + 0.5 * dt * k2z)
        k4y, k4z = rhs(y + dt * k3y, z + dt * k3z)
        y += dt * (k1y + 2 * k2y + 2 * k3y + k4y) / 6
        z += dt * (k1z + 2 * k2z + 2 * k3z + k4z) / 6
        ys[i + 1], zs[i + 1] = y, z
    if not ys[-1] > 0:
        raise PreconditionError(f"kickoff ends with y = {ys[-1]!r} <= 0; epsilon too large")
    if np.max(np.abs(zs)) > 1.0 + 1e-12 or abs(zs[-1]) >= 1.0:
        raise PreconditionError("kickoff leaves the admissible strip; epsilon too large")
    zs = np.clip(zs, -1.0, 1.0)
    grid = np.linspace(0.0, epsilon, n + 1)
    ydots = f(ys, zs) + level

    params = {"level": float(level), "epsilon": float(epsilon), "y0": x0.y, "z0": x0.z,
              "y_end": float(ys[-1]), "z_end": float(zs[-1])}
    prof = Profile(lambda s: np.interp(s, grid, ys), lambda s: np.interp(s, grid, zs),
                   lambda s: np.interp(s, grid, ydots))
    return ControlSegment("kickoff", float(epsilon), params,
                          lambda s: np.full(np.shape(s), float(level)), prof)


def traverse(duration: float, model: DriftModel) -> ControlSegment:
    """From the lower corner (0, -1) to the upper corner (0, 1).

    y = (60/D) r^2 (1 - r)^2 integrates to 2 and has y = y' = 0 at both ends.
    """
    D = float(duration)
    if not D > 0:
        raise PreconditionError("traverse duration must be > 0")

    def y(s):
        r = np.asarray(s, dtype=float) / D
        return 60.0 / D * r * r * (1 - r) ** 2

    def z(s):
        r = np.asarray(s, dtype=float) / D
        return np.clip(-1.0 + 2.0 * (10 * r ** 3 - 15 * r ** 4 + 6 * r ** 5), -1.0, 1.0)

    def ydot(s):
        r = np.asarray(s, dtype=float) / D
        return 120.0 / D ** 2 * r * (1 - r) * (1 - 2 * r)

    return _profile_segment("traverse", D, {"T_tilde": D}, model, y, z, ydot)


def descend_from_corner(target: State, T_tilde: float, model: DriftModel,
                        monotone: bool = True, family: Optional[str] = None) -> ControlSegment:
    """From (0, 1) to a target with y_T < 0 and |z_T| < 1 in time T_tilde.

    The velocity profile phi starts at 0 with zero slope, ends at y_T and
    integrates to z_T - 1.  With r = (1 - z_T) / (|y_T| T_tilde), a monotone
    nonpositive phi exists iff r < 1.  Families:

    * ``power``: phi = y_T (s/T)^beta with beta = 1/r - 1 (needs r < 1/2);
    * ``smoothstep``: phi = y_T w over a ramp window of length L, w = 3u^2 - 2u^3,
      constant elsewhere.  For r < 1/2 the ramp closes the interval,
      L = 2 r T; otherwise it opens it, L = 2 (1 - r) T.  Flat at both ends;
    * ``bump``: phi = y_T w(q) + c q^2 (1 - q)^2 with c fixed by the integral.
      For r >= 1 it is nonpositive but overshoots below y_T.

    By default smoothstep is used when r < 1 and, unless ``monotone``, bump
    otherwise.  Flat ends keep the control continuous at the corner and
    bounded at the target.
    """
    yT, zT = target.y, target.z
    if not yT < 0:
        raise PreconditionError(f"descend_from_corner needs y_T < 0, got {yT!r}")
    if not abs(zT) < 1:
        raise PreconditionError(f"target z_T must lie in (-1, 1), got {zT!r}")
    if not T_tilde > 0:
        raise PreconditionError(f"T_tilde must be > 0, got {T_tilde}")
    D = float(T_tilde)
    I = zT - 1.0
    r = -I / (-yT * D)
    if family is None:
        family = "smoothstep" if r < 1.0 else "bump"
    if family not in ("power", "smoothstep", "bump"):
        raise PreconditionError(f"unknown descent family {family!r}")
    if r >= 1.0 and (monotone or family != "bump"):
        raise InfeasibleError(
            f"no monotone descent: T_tilde = {D!r} must exceed (1 - z_T)/|y_T| = {I / yT!r}")
    params = {"y_T": yT, "z_T": zT, "T_tilde": D, "r": r, "family": family}

    if family == "power":
        if not r < 0.5:
            raise InfeasibleError(f"power-law descent needs r < 1/2, got r = {r!r}")
        beta = 1.0 / r - 1.0
        params["beta"] = beta

        def y(s):
            q = np.asarray(s, dtype=float) / D
            return yT * q ** beta

        def z(s):
            q = np.asarray(s, dtype=float) / D
            return 1.0 + yT * D * q ** (beta + 1) / (beta + 1)

        def ydot(s):
            q = np.asarray(s, dtype=float) / D
            return yT * beta * q ** (beta - 1) / D
    elif family == "smoothstep":
        if r < 0.5:
            L = 2.0 * r * D
            s0 = D - L
        else:
            L = 2.0 * (1.0 - r) * D
            s0 = 0.0
        params.update(window_start=s0, window=L)

        def y(s):
            w = np.clip((np.asarray(s, dtype=float) - s0) / L, 0.0, 1.0)
            return yT * (3 * w * w - 2 * w ** 3)

        def z(s):
            s = np.asarray(s, dtype=float)
            w = np.clip((s - s0) / L, 0.0, 1.0)
            return 1.0 + yT * L * (w ** 3 - 0.5 * w ** 4) + yT * np.maximum(s - s0 - L, 0.0)

        def ydot(s):
            s = np.asarray(s, dtype=float)
            w = np.clip((s - s0) / L, 0.0, 1.0)
            return yT * 6 * w * (1 - w) / L
    else:
        c = 30.0 * (I / D - yT / 2.0)
        if c > -3.0 * yT:
            # near q = 0 the bump c q^2 outgrows |y_T| w = 3 |y_T| q^2
            raise InfeasibleError(f"bump descent not nonpositive for r = {r!r}")
        params["c"] = c

        def y(s):
            q = np.asarray(s, dtype=float) / D
            return yT * (3 * q * q - 2 * q ** 3) + c * q * q * (1 - q) ** 2

        def z(s):
            q = np.asarray(s, dtype=float) / D
            return 1.0 + D * (yT * (q ** 3 - 0.5 * q ** 4)
                              + c * (q ** 3 / 3 - q ** 4 / 2 + q ** 5 / 5))

        def ydot(s):
            q = np.asarray(s, dtype=float) / D
            return (yT * 6 * q * (1 - q) + c * (2 * q - 6 * q * q + 4 * q ** 3)) / D

    return _profile_segment("descend_from_corner", D, params, model, y, z, ydot)


def minimal_descent_time(target: State) -> float:
    """Shortest corner-to-target time admitting a monotone nonpositive velocity profile."""
    if target.y == 0:
        raise PreconditionError("target needs y_T != 0")
    # y_T < 0 descends from (0, 1); y_T > 0 climbs from (0, -1)
    gap = 1.0 - target.z if target.y < 0 else 1.0 + target.z
    return gap / abs(target.y)


# ---------------------------------------------------------------------------
# gluing


def _to_upper_corner(x0: State, T: float, model: DriftModel) -> tuple[list, float]:
    """Segments steering x0 to (0, 1); returns them with their total duration."""
    y0, z0 = x0.y, x0.z
    T1 = 5.0 * T / 8.0
    segs: list[ControlSegment] = []
    if z0 == 1.0 and y0 >= 0:
        segs.append(plastic_drain(x0, T1, model, initial_slope=0.0))
        return segs, T1

    if y0 > 0:
        eps0 = (1.0 - z0) / y0
        eps_cap = ramp_epsilon_for_slope(x0, A_CAP)
        eps = min(T / 8.0, max(eps0 / 2.0, eps_cap))
        ramp = ramp_to_plastic(x0, eps, model)
        a = ramp.params["a"]
        segs.append(ramp)
        T1 = eps + T / 2.0
        segs.append(plastic_drain(State(y0 + eps * a, 1.0), T / 2.0, model, initial_slope=a))
        return segs, T1

    if y0 == 0:
        eps_k = min(0.01, T / 100.0)
        a_star = 2.0 * (1.0 - z0) / (T / 8.0) ** 2
        level = a_star - float(model.f(y0, z0))
        kick = kickoff(x0, level, eps_k, model)
        xk = kick.end
        a = level + float(model.f(xk.y, xk.z))
        if not a > 0:
            raise InfeasibleError("drift reverses during the kickoff; horizon too short")
        eps2 = ramp_epsilon_for_slope(xk, a)
        drain = T1 - eps_k - eps2
        if not drain > 0:
            raise InfeasibleError(f"horizon T = {T!r} too short to reach the plastic line")
        ramp = ramp_to_plastic(xk, eps2, model)
        segs += [kick, ramp,
                 plastic_drain(State(xk.y + eps2 * ramp.params["a"], 1.0), drain, model,
                               initial_slope=ramp.params["a"])]
        return segs, T1

    # y0 < 0: mirrored ramp and drain to the lower corner, then cross to the upper one
    refl = model.reflected()
    xr = x0.reflected()
    lower_time = T / 4.0
    if xr.z < 1.0:
        eps0 = (1.0 - xr.z) / xr.y
        eps = min(T / 8.0, max(eps0 / 2.0, ramp_epsilon_for_slope(xr, A_CAP)))
        ramp = ramp_to_plastic(xr, eps, refl)
        a = ramp.params["a"]
        segs.append(ramp.mirrored())
        segs.append(plastic_drain(State(xr.y + eps * a, 1.0), lower_time - eps, refl,
                                  initial_slope=a).mirrored())
    else:
        segs.append(plastic_drain(xr, lower_time, refl, initial_slope=0.0).mirrored())
    segs.append(traverse(T1 - lower_time, model))
    return segs, T1


def _synthesize_negative(x0: State, xT: State, T: float, model: DriftModel, monotone: bool) -> list:
    if x0 == State(0.0, 1.0):
        return [descend_from_corner(xT, T, model, monotone=monotone)]
    segs, T1 = _to_upper_corner(x0, T, model)
    segs.append(descend_from_corner(xT, T - T1, model, monotone=monotone))
    return segs


def synthesize_exact_control(x0: State, xT: State, T: float, model: DriftModel,
                             monotone: bool = False) -> ControlSchedule:
    """A continuous control with S_T(x0, u) = xT, routed through a plastic corner.

    With ``monotone`` the descent must use a monotone velocity profile, which
    fails (InfeasibleError) when the descent window is shorter than
    minimal_descent_time(xT).
    """
    if not (T > 0 and math.isfinite(T)):
        raise InfeasibleError(f"horizon must be > 0, got {T!r}")
    if xT.y == 0:
        raise PreconditionError("target must have y_T != 0")
    if not abs(xT.z) < 1:
        raise PreconditionError("target must have |z_T| < 1")
    if xT.y < 0:
        segs = _synthesize_negative(x0, xT, T, model, monotone)
        sched = ControlSchedule(segs, T)
    else:
        segs = _synthesize_negative(x0.reflected(), xT.reflected(), T, model.reflected(), monotone)
        sched = ControlSchedule(segs, T).mirrored()
    worst = max(sched.junction_residuals(), default=0.0)
    if worst > JUNCTION_TOL:
        raise RuntimeError(f"internal gluing error: control jumps by {worst!r} at a junction")
    return sched


# ---------------------------------------------------------------------------
# verification


@dataclass
class ControlReport:
    endpoint_error: float
    max_violation: float
    junction_residuals: list = field(default_factory=list)
    trajectory: Optional[Trajectory] = None

    @property
    def max_junction_residual(self) -> float:
        return max(self.junction_residuals, default=0.0)

    def passed(self, tol: float = 1e-3) -> bool:
        return (self.endpoint_error <= tol and self.max_violation == 0.0
                and self.max_junction_residual <= JUNCTION_TOL)

    def summary(self) -> dict:
        return {"endpoint_error": self.endpoint_error, "max_violation": self.max_violation,
                "max_junction_residual": self.max_junction_residual}


def verify_control(x0: State, schedule: ControlSchedule, xT: State, model: DriftModel,
                   cfg: Optional[SolverConfig] = None) -> ControlReport:
    if not schedule.segments and schedule.T == 0:
        return ControlReport(x0.distance(xT), 0.0, [], None)
    if cfg is None:
        cfg = SolverConfig(h=1e-4, T=schedule.T)
    tr = integrate(x0, model, schedule, cfg)
    viol = max(0.0, float(np.max(np.abs(tr.z))) - 1.0)
    return ControlReport(tr.endpoint.distance(xT), viol, schedule.junction_residuals(), tr)


# ---------------------------------------------------------------------------
# linearised controllability


@dataclass
class LinearizedSystem:
    """Y' = a(t) Y + b(t) Z + V, Z' = Y along a reference trajectory."""

    times: np.ndarray
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.a = np.asarray(self.a, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        if not (self.times.shape == self.a.shape == self.b.shape) or self.times.size < 2:
            raise PreconditionError("coefficient paths must share the reference grid")

    @property
    def T0(self) -> float:
        return float(self.times[-1] - self.times[0])

    @classmethod
    def constant(cls, a: float, b: float, T0: float, h: float) -> "LinearizedSystem":
        n = grid_size(T0, h)
        t = np.arange(n + 1) * h
        return cls(t, np.full(n + 1, float(a)), np.full(n + 1, float(b)))


def linearize(model: DriftModel, reference: Trajectory) -> LinearizedSystem:
    y, z = np.asarray(reference.y, dtype=float), np.asarray(reference.z, dtype=float)
    dist = np.hypot(y - model.p.y, z - model.p.z)
    if np.max(dist) >= model.smooth_radius:
        raise PreconditionError(
            f"reference leaves the smooth ball: distance {float(np.max(dist))!r} >= {model.smooth_radius!r}")
    a, b = model.partials(y, z)
    return LinearizedSystem(reference.times, a, b)


def linear_profile(T0: float, Y1: float, Z1: float) -> tuple[float, float]:
    """(a, b) with phi = a t^2 + b t, phi(T0) = Y1 and int_0^T0 phi = Z1."""
    if not T0 > 0:
        raise PreconditionError(f"T0 must be > 0, got {T0}")
    M = np.array([[T0 ** 2, T0], [T0 ** 3 / 3.0, T0 ** 2 / 2.0]])
    a, b = np.linalg.solve(M, np.array([Y1, Z1], dtype=float))
    return float(a), float(b)


def linear_control(sys: LinearizedSystem, target: tuple[float, float]) -> ForcingPath:
    Y1, Z1 = float(target[0]), float(target[1])
    if not (math.isfinite(Y1) and math.isfinite(Z1)):
        raise PreconditionError("target must be finite")
    t = sys.times - sys.times[0]
    pa, pb = linear_profile(sys.T0, Y1, Z1)
    phi = pa * t * t + pb * t
    Phi = pa * t ** 3 / 3.0 + pb * t * t / 2.0
    V = 2 * pa * t + pb - sys.a * phi - sys.b * Phi
    return ForcingPath("direct", float(t[1] - t[0]), V)


def integrate_linear(sys: LinearizedSystem, V, Y0: float = 0.0, Z0: float = 0.0):
    """Heun integration of the linearised system on its own grid.

    ``V`` is a direct forcing path or an array of shape (n_points,) or
    (n_controls, n_points); returns the endpoint(s) (Y, Z).
    """
    vals = V.values if isinstance(V, ForcingPath) else np.asarray(V, dtype=float)
    vals = np.atleast_2d(vals)
    if vals.shape[1] != sys.times.size:
        raise PreconditionError("control is not sampled on the system grid")
    dt = np.diff(sys.times)
    Y = np.full(vals.shape[0], float(Y0))
    Z = np.full(vals.shape[0], float(Z0))
    a, b = sys.a, sys.b
    for i in range(dt.size):
        h = dt[i]
        kY = a[i] * Y + b[i] * Z + vals[:, i]
        kZ = Y
        Yp = Y + h * kY
        Zp = Z + h * kZ
        Y = Y + 0.5 * h * (kY + a[i + 1] * Yp + b[i + 1] * Zp + vals[:, i + 1])
        Z = Z + 0.5 * h * (kZ + Yp)
    if isinstance(V, ForcingPath) or np.ndim(V) == 1:
        return float(Y[0]), float(Z[0])
    return Y, Z
