"""Experiment configuration: JSON schema, defaults, validation and hashing.

A config has five top-level keys, all optional except ``model.drift``:

    {
      "seed": 0,
      "model":  {"drift": "linear", "params": {}, "alpha": null, "c_lyap": null,
                 "p": [0, 0], "smooth_radius": 0.5, "t0": 1.0},
      "noise":  {"kind": "white", "b": null, "b_ratio": 0.5, "rho": "normal", "J": 64},
      "solver": {"h": null, "T": null},
      "experiment": {...}
    }

``alpha``/``c_lyap`` default to the drift's own certificate, ``solver.h`` to
1e-3 * t0 and ``solver.T`` to t0.  Unknown keys anywhere are rejected.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass
from typing import Any

from .drifts import build_model, names as drift_names
from .dynamics import DriftModel, State
from .ergodics import CouplingConfig
from .exceptions import ConfigError
from .measure import MeasureConfig
from .noise import DecomposableLaw, NoiseSpec, geometric_weights

MAX_SEED = 2 ** 64 - 1

MODEL_DEFAULTS = {"drift": "linear", "params": {}, "alpha": None, "c_lyap": None,
                  "p": [0.0, 0.0], "smooth_radius": 0.5, "t0": 1.0}
NOISE_DEFAULTS = {"kind": "white", "b": None, "b_ratio": 0.5, "rho": "normal", "J": 64}
SOLVER_DEFAULTS = {"h": None, "T": None}
BINS_DEFAULTS = {"ny": 200, "nz": 100, "ymax": 10.0}
COUPLING_BINS_DEFAULTS = {"ny": 20, "nz": 10, "ymax": 5.0}
EXPERIMENT_DEFAULTS = {
    # single trajectories and controls
    "x0": [0.0, 0.0],
    "target": [-1.0, 0.0],
    "T": 4.0,
    "tolerance": 1e-3,
    "monotone": False,
    # linearised control
    "reference": None,
    "linear_target": [1.0, 1.0],
    # ensembles
    "N": 10000,
    "K": 200,
    "grid": [[-4.0, -1.0], [-4.0, 0.0], [-4.0, 1.0], [0.0, -1.0], [0.0, 0.0], [0.0, 1.0],
             [4.0, -1.0], [4.0, 0.0], [4.0, 1.0]],
    "p": None,
    "delta": 0.5,
    "delta_hat": 0.25,
    "x": [0.0, 0.0],
    "x_prime": [0.1, 0.0],
    "x0_prime": [-3.0, 0.0],
    "n_aux": 4096,
    "common_noise": False,
    "burn_in": 1000,
    "samples": 100000,
    "thinning": 1,
    "floor_factor": 2.0,
    "probe": None,
    "bins": BINS_DEFAULTS,
    "coupling_bins": COUPLING_BINS_DEFAULTS,
    # noise diagnostics
    "J_list": [4, 16, 64],
    "n_paths": 100,
    # drift validation grid
    "ymax": 10.0,
    "ny": 201,
    "nz": 41,
    "r0": 0.1,
}


def _fail(key, msg):
    raise ConfigError(key, msg)


def _num(value, key, lo=None, hi=None, lo_open=False, allow_none=False):
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        _fail(key, f"expected a number, got {value!r}")
    v = float(value)
    if not math.isfinite(v):
        _fail(key, "must be finite")
    if lo is not None and (v <= lo if lo_open else v < lo):
        _fail(key, f"must be {'>' if lo_open else '>='} {lo}, got {v}")
    if hi is not None and v > hi:
        _fail(key, f"must be <= {hi}, got {v}")
    return v


def _int(value, key, lo=None, allow_none=False):
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, int):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        else:
            _fail(key, f"expected an integer, got {value!r}")
    if lo is not None and value < lo:
        _fail(key, f"must be >= {lo}, got {value}")
    return int(value)


def _pair(value, key, allow_none=False):
    if value is None and allow_none:
        return None
    if isinstance(value, str):
        try:
            s = State.parse(value)
        except ValueError as e:
            _fail(key, str(e))
        return [s.y, s.z]
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        _fail(key, f"expected [y, z], got {value!r}")
    y = _num(value[0], f"{key}[0]")
    z = _num(value[1], f"{key}[1]", -1.0, 1.0)
    return [y, z]


def _merge(section: str, given, defaults: dict) -> dict:
    if given is None:
        given = {}
    if not isinstance(given, dict):
        _fail(section, f"expected an object, got {type(given).__name__}")
    unknown = sorted(set(given) - set(defaults))
    if unknown:
        _fail(f"{section}.{unknown[0]}", f"unknown key (allowed: {', '.join(sorted(defaults))})")
    out = copy.deepcopy(defaults)
    out.update(copy.deepcopy(given))
    return out


def _bins(value, key, defaults) -> dict:
    b = _merge(key, value, defaults)
    b["ny"] = _int(b["ny"], f"{key}.ny", 1)
    b["nz"] = _int(b["nz"], f"{key}.nz", 1)
    b["ymax"] = _num(b["ymax"], f"{key}.ymax", 0.0, lo_open=True)
    return b


def resolve(raw: dict) -> dict:
    """Validate a raw config dictionary and fill every default."""
    if not isinstance(raw, dict):
        _fail("<root>", "config must be a JSON object")
    allowed = {"seed", "model", "noise", "solver", "experiment"}
    unknown = sorted(set(raw) - allowed)
    if unknown:
        _fail(unknown[0], f"unknown key (allowed: {', '.join(sorted(allowed))})")
    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed <= MAX_SEED:
        _fail("seed", f"expected an integer in [0, 2^64 - 1], got {seed!r}")

    model = _merge("model", raw.get("model"), MODEL_DEFAULTS)
    if model["drift"] not in drift_names():
        _fail("model.drift", f"unknown drift {model['drift']!r}; known: {', '.join(drift_names())}")
    if not isinstance(model["params"], dict):
        _fail("model.params", "expected an object")
    model["alpha"] = _num(model["alpha"], "model.alpha", 0.0, lo_open=True, allow_none=True)
    model["c_lyap"] = _num(model["c_lyap"], "model.c_lyap", 0.0, allow_none=True)
    model["p"] = _pair(model["p"], "model.p")
    if not abs(model["p"][1]) < 1:
        _fail("model.p[1]", "the smooth point must satisfy |z| < 1")
    model["smooth_radius"] = _num(model["smooth_radius"], "model.smooth_radius", 0.0, lo_open=True)
    model["t0"] = _num(model["t0"], "model.t0", 0.0, 1.0, lo_open=True)

    noise = _merge("noise", raw.get("noise"), NOISE_DEFAULTS)
    if noise["kind"] not in ("white", "decomposable", "none"):
        _fail("noise.kind", f"expected white, decomposable or none, got {noise['kind']!r}")
    noise["J"] = _int(noise["J"], "noise.J", 1)
    noise["b_ratio"] = _num(noise["b_ratio"], "noise.b_ratio", 0.0, 1.0, lo_open=True)
    if noise["b"] is not None:
        if not isinstance(noise["b"], list) or not noise["b"]:
            _fail("noise.b", "expected a nonempty list of weights")
        noise["b"] = [_num(v, f"noise.b[{i}]") for i, v in enumerate(noise["b"])]
    if not isinstance(noise["rho"], str):
        _fail("noise.rho", "expected a density name")

    solver = _merge("solver", raw.get("solver"), SOLVER_DEFAULTS)
    t0 = model["t0"]
    solver["h"] = _num(solver["h"], "solver.h", 0.0, lo_open=True, allow_none=True)
    if solver["h"] is None:
        solver["h"] = 1e-3 * t0
    solver["T"] = _num(solver["T"], "solver.T", 0.0, lo_open=True, allow_none=True)
    if solver["T"] is None:
        solver["T"] = t0
    if solver["h"] > solver["T"]:
        _fail("solver.h", f"step {solver['h']} exceeds the horizon {solver['T']}")

    exp = _merge("experiment", raw.get("experiment"), EXPERIMENT_DEFAULTS)
    for k in ("x0", "target", "x", "x_prime", "x0_prime"):
        exp[k] = _pair(exp[k], f"experiment.{k}")
    for k in ("reference", "p"):
        exp[k] = _pair(exp[k], f"experiment.{k}", allow_none=True)
    lt = exp["linear_target"]
    if not isinstance(lt, (list, tuple)) or len(lt) != 2:
        _fail("experiment.linear_target", "expected [Y1, Z1]")
    exp["linear_target"] = [_num(lt[0], "experiment.linear_target[0]"),
                            _num(lt[1], "experiment.linear_target[1]")]
    exp["T"] = _num(exp["T"], "experiment.T", 0.0, lo_open=True)
    exp["tolerance"] = _num(exp["tolerance"], "experiment.tolerance", 0.0, lo_open=True)
    for k in ("monotone", "common_noise"):
        if not isinstance(exp[k], bool):
            _fail(f"experiment.{k}", "expected true or false")
    for k in ("N", "K", "burn_in", "samples", "thinning", "n_aux", "n_paths", "ny", "nz"):
        exp[k] = _int(exp[k], f"experiment.{k}", 1)
    if not isinstance(exp["grid"], list) or not exp["grid"]:
        _fail("experiment.grid", "expected a nonempty list of [y, z] pairs")
    exp["grid"] = [_pair(g, f"experiment.grid[{i}]") for i, g in enumerate(exp["grid"])]
    for k in ("delta", "delta_hat", "floor_factor", "ymax"):
        exp[k] = _num(exp[k], f"experiment.{k}", 0.0, lo_open=True)
    exp["r0"] = _num(exp["r0"], "experiment.r0", 0.0)
    exp["probe"] = _num(exp["probe"], "experiment.probe", 0.0, 1.0, lo_open=True, allow_none=True)
    if exp["probe"] is not None and exp["probe"] >= 1:
        _fail("experiment.probe", "must lie in (0, 1)")
    if not isinstance(exp["J_list"], list) or not exp["J_list"]:
        _fail("experiment.J_list", "expected a nonempty list of integers")
    exp["J_list"] = [_int(j, f"experiment.J_list[{i}]", 1) for i, j in enumerate(exp["J_list"])]
    exp["bins"] = _bins(exp["bins"], "experiment.bins", BINS_DEFAULTS)
    exp["coupling_bins"] = _bins(exp["coupling_bins"], "experiment.coupling_bins", COUPLING_BINS_DEFAULTS)

    resolved = {"seed": seed, "model": model, "noise": noise, "solver": solver, "experiment": exp}
    # building the objects runs every remaining module-level precondition early
    cfg = ExperimentConfig(resolved)
    cfg.model()
    cfg.noise()
    return resolved


@dataclass
class ExperimentConfig:
    data: dict

    @property
    def seed(self) -> int:
        return self.data["seed"]

    @property
    def h(self) -> float:
        return self.data["solver"]["h"]

    @property
    def T(self) -> float:
        return self.data["solver"]["T"]

    @property
    def experiment(self) -> dict:
        return self.data["experiment"]

    def model(self) -> DriftModel:
        m = self.data["model"]
        try:
            return build_model(m["drift"], m["params"], m["alpha"], m["c_lyap"], tuple(m["p"]),
                               m["smooth_radius"], m["t0"])
        except TypeError as e:
            raise ConfigError("model.params", str(e)) from None
        except ConfigError:
            raise
        except ValueError as e:
            raise ConfigError("model", str(e)) from None

    def noise(self) -> NoiseSpec:
        n = self.data["noise"]
        if n["kind"] != "decomposable":
            return NoiseSpec(n["kind"])
        b = n["b"] if n["b"] is not None else list(geometric_weights(n["J"], n["b_ratio"]))
        try:
            return NoiseSpec("decomposable", DecomposableLaw(b, n["rho"], n["J"]))
        except ValueError as e:
            raise ConfigError("noise", str(e)) from None

    def bins(self, key: str = "bins") -> MeasureConfig:
        b = self.experiment[key]
        return MeasureConfig(b["ny"], b["nz"], b["ymax"])

    def coupling(self) -> CouplingConfig:
        e = self.experiment
        return CouplingConfig(e["n_aux"], self.bins("coupling_bins"), e["common_noise"])

    def state(self, key: str) -> State:
        v = self.experiment[key]
        return State(*v)

    def canonical(self) -> str:
        return canonical_json(self.data)

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()


def canonical_json(data: Any) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"), allow_nan=False)


def parse_config_text(text: str, source: str = "<config>") -> dict:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(source, f"JSON parse error at line {e.lineno}, column {e.colno}: {e.msg}") from None
    return raw


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(str(path), f"cannot read config: {e.strerror}") from None
    return ExperimentConfig(resolve(parse_config_text(text, str(path))))


def from_dict(raw: dict) -> ExperimentConfig:
    return ExperimentConfig(resolve(copy.deepcopy(raw)))


def set_path(raw: dict, dotted: str, value) -> None:
    """Assign ``value`` at a dotted key path, creating intermediate objects."""
    parts = dotted.split(".")
    node = raw
    for part in parts[:-1]:
        nxt = node.setdefault(part, {})
        if not isinstance(nxt, dict):
            raise ConfigError(dotted, f"{part!r} is not an object")
        node = nxt
    node[parts[-1]] = value
