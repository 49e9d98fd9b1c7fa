import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from elastoplast import ConfigError
from elastoplast.config import canonical_json, from_dict, load_config, set_path


def write(tmp_path, data, name="c.json"):
    p = tmp_path / name
    p.write_text(data if isinstance(data, str) else json.dumps(data))
    return p


def test_minimal_config_fills_defaults(tmp_path):
    cfg = load_config(write(tmp_path, {"model": {"drift": "linear"}}))
    assert cfg.h == pytest.approx(1e-3)
    assert cfg.T == 1.0
    assert cfg.data["noise"]["J"] == 64
    assert cfg.experiment["delta_hat"] == 0.25
    assert cfg.experiment["bins"]["ymax"] == 10.0
    m = cfg.model()
    assert (m.alpha, m.c_lyap) == (1.0, 0.0)


def test_step_default_scales_with_t0():
    cfg = from_dict({"model": {"drift": "linear", "t0": 0.5}})
    assert cfg.h == pytest.approx(5e-4) and cfg.T == 0.5


def test_negative_alpha_rejected(tmp_path):
    with pytest.raises(ConfigError) as e:
        load_config(write(tmp_path, {"model": {"drift": "linear", "alpha": -1}}))
    assert e.value.key == "model.alpha"


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError) as e:
        from_dict({"model": {"drift": "linear", "alfa": 1}})
    assert e.value.key == "model.alfa"
    with pytest.raises(ConfigError) as e:
        from_dict({"experiment": {"bins": {"nx": 3}}})
    assert e.value.key == "experiment.bins.nx"


def test_unknown_drift_rejected():
    with pytest.raises(ConfigError) as e:
        from_dict({"model": {"drift": "quartic"}})
    assert e.value.key == "model.drift"


def test_parse_error_reports_position(tmp_path):
    with pytest.raises(ConfigError) as e:
        load_config(write(tmp_path, '{"model": {"drift": "linear",}\n'))
    assert "line 1, column" in str(e.value)


def test_round_trip_is_idempotent(tmp_path):
    cfg = from_dict({"seed": 9, "model": {"drift": "linear-coupled", "params": {"c": 0.5}},
                     "noise": {"kind": "decomposable", "J": 8}, "experiment": {"N": 123}})
    again = load_config(write(tmp_path, cfg.canonical()))
    assert again.data == cfg.data
    assert again.digest() == cfg.digest()


def test_hash_ignores_key_order():
    a = from_dict({"seed": 1, "model": {"drift": "linear", "t0": 1.0}})
    b = from_dict({"model": {"t0": 1.0, "drift": "linear"}, "seed": 1})
    assert a.digest() == b.digest()
    assert a.digest() != from_dict({"seed": 2}).digest()


def test_decomposable_noise_from_config():
    cfg = from_dict({"noise": {"kind": "decomposable", "J": 4, "b": [1, 0.5, 0.25, 0.125], "rho": "laplace"}})
    noise = cfg.noise()
    assert noise.kind == "decomposable" and list(noise.law.weights) == [1, 0.5, 0.25, 0.125]
    with pytest.raises(ConfigError):
        from_dict({"noise": {"kind": "decomposable", "J": 4, "b": [1, 0, 1, 1]}})


def test_solver_step_within_horizon():
    with pytest.raises(ConfigError) as e:
        from_dict({"solver": {"h": 2.0, "T": 1.0}})
    assert e.value.key == "solver.h"


def test_seed_range():
    with pytest.raises(ConfigError):
        from_dict({"seed": -1})
    assert from_dict({"seed": 2 ** 64 - 1}).seed == 2 ** 64 - 1


def test_state_validation():
    with pytest.raises(ConfigError) as e:
        from_dict({"experiment": {"target": [0.0, 2.0]}})
    assert e.value.key.startswith("experiment.target")
    assert from_dict({"experiment": {"x0": "0.5,0"}}).state("x0").y == 0.5


def test_set_path():
    raw = {}
    set_path(raw, "experiment.bins.ny", 10)
    assert raw == {"experiment": {"bins": {"ny": 10}}}
    with pytest.raises(ConfigError):
        set_path({"a": 1}, "a.b", 2)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 64 - 1), N=st.integers(4, 10 ** 6), dh=st.floats(0.01, 3.0))
def test_canonical_round_trip_property(seed, N, dh):
    cfg = from_dict({"seed": seed, "experiment": {"N": N, "delta_hat": dh}})
    again = from_dict(json.loads(canonical_json(cfg.data)))
    assert again.data == cfg.data
