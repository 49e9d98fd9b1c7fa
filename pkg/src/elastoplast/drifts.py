"""Registry of named drifts usable from experiment configs.

Each builder takes keyword parameters and returns ``(f, df_dy, df_dz, alpha, C)``
where (alpha, C) is a valid certificate for y f(y, z) <= -alpha y^2 + C.
"""

from __future__ import annotations

import numpy as np

from .dynamics import DriftModel, State
from .exceptions import ConfigError

_REGISTRY = {}


def register(name):
    def deco(builder):
        _REGISTRY[name] = builder
        return builder
    return deco


def names():
    return sorted(_REGISTRY)


@register("linear")
def _linear(**params):
    if params:
        raise ConfigError("model.params", f"'linear' takes no parameters, got {sorted(params)}")
    return (
        lambda y, z: -y,
        lambda y, z: -np.ones_like(y),
        lambda y, z: np.zeros_like(y),
        1.0,
        0.0,
    )


@register("linear-coupled")
def _linear_coupled(c=1.0, **rest):
    if rest:
        raise ConfigError("model.params", f"unknown parameters {sorted(rest)}")
    c = float(c)
    # y(-y + c z) <= -y^2 + |c||y| <= -y^2/2 + c^2/2
    return (
        lambda y, z: -y + c * z,
        lambda y, z: -np.ones_like(y),
        lambda y, z: c * np.ones_like(y),
        0.5,
        0.5 * c * c,
    )


@register("cubic-sat")
def _cubic_sat(k=1.0, **rest):
    """f = -k y - y^3/(1 + y^2): cubic near the origin, linear growth far out."""
    if rest:
        raise ConfigError("model.params", f"unknown parameters {sorted(rest)}")
    k = float(k)
    if not k > 0:
        raise ConfigError("model.params.k", "must be > 0")
    return (
        lambda y, z: -k * y - y ** 3 / (1.0 + y * y),
        lambda y, z: -k - (3 * y * y + y ** 4) / (1.0 + y * y) ** 2,
        lambda y, z: np.zeros_like(y),
        k,
        0.0,
    )


def build_model(drift: str, params=None, alpha=None, c_lyap=None, p=(0.0, 0.0),
                smooth_radius=0.5, t0=1.0) -> DriftModel:
    """Instantiate a registered drift; alpha and C default to the builder's certificate."""
    if drift not in _REGISTRY:
        raise ConfigError("model.drift", f"unknown drift {drift!r}; known: {', '.join(names())}")
    f, dfy, dfz, a0, c0 = _REGISTRY[drift](**(params or {}))
    return DriftModel(
        f=f,
        alpha=a0 if alpha is None else float(alpha),
        c_lyap=c0 if c_lyap is None else float(c_lyap),
        p=State(*p),
        smooth_radius=float(smooth_radius),
        t0=float(t0),
        df_dy=dfy,
        df_dz=dfz,
        name=drift,
    )


def canonical_model(**overrides) -> DriftModel:
    """f(y, z) = -y with alpha = 1, C = 0, p = (0, 0), T0 = 1."""
    return build_model("linear", **overrides)
