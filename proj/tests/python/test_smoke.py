import json

import numpy as np
import pytest

import cvarstable as cs

BETA = np.array([[1.0], [0.5]])
ALPHA = np.array([[0.1], [-0.3]])


def _series(seed=3, T=300):
    tau = list(range(49, T, 50))
    return cs.simulate(BETA, ALPHA, np.eye(2), stable=[cs.StableParams(1.3)] * 2, tau_idx=tau, T=T, seed=seed)


def test_stable_cf_frozen_value():
    v = cs.stable_cf(cs.StableParams(1.3, 0.5, 1.0, 0.0), 0.7)
    assert v.real == pytest.approx(0.53184785519317934, abs=1e-12)
    assert v.imag == pytest.approx(0.037132953812067007, abs=1e-12)


def test_sampler_is_seeded():
    a = cs.sample_stable(cs.StableParams(1.5), 100, seed=11)
    b = cs.sample_stable(cs.StableParams(1.5), 100, seed=11)
    assert a == b


def test_fit_recovers_gaussian_case():
    x = cs.sample_stable(cs.StableParams(2.0, 0.0, 1.0, 0.0), 20000, seed=5)
    f = cs.fit_stable(x)
    assert f["params"].a > 1.9
    assert f["params"].gamma == pytest.approx(1.0, rel=0.05)


def test_bad_params_raise_value_error():
    with pytest.raises(ValueError):
        cs.StableParams(a=2.5)


def test_transform_round_trip():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(2, 2))
    sigma = a @ a.T + np.eye(2)
    ts = cs.build_transform(sigma, np.array([2.0, 3.0]), 8, 10, [3, 7])
    b = rng.normal(size=(3, 2))
    np.testing.assert_allclose(cs.recover_B(cs.forward_B(b, ts), ts), b, atol=1e-10)


def test_simulate_and_johansen():
    s = _series()
    assert s["prices"].shape == (300, 2)
    assert s["tau_idx"] == list(range(49, 300, 50))
    j = cs.johansen(s["prices"], s["tau_idx"])
    assert j["beta"][0, 0] == 1.0
    assert j["beta"][1, 0] == pytest.approx(0.5, abs=0.1)


@pytest.mark.parametrize("method", ["gaussian-bayes", "gibbs-exact"])
def test_short_chains(method):
    s = _series()
    e = cs.estimate(s["prices"], s["tau_idx"], method, [cs.StableParams(1.3)] * 2, burnin=100, draws=200, seed=1)
    assert e["draws"].shape == (200, len(e["columns"]))
    assert e["columns"][0] == "beta[2,1]"
    assert e["mean"]["beta[2,1]"] == pytest.approx(0.5, abs=0.15)


def test_abc_chain_records_distances():
    s = _series(T=200)
    e = cs.estimate(s["prices"], s["tau_idx"], "abc", [cs.StableParams(1.3, 0.5)] * 2, burnin=50, draws=100,
                    seed=2, blockwise=True, calibrate_quantile=50)
    assert len(e["distance"]) == 100
    assert max(e["distance"]) <= e["epsilon"]


def test_exact_sampler_refuses_skew():
    s = _series()
    with pytest.raises(ValueError):
        cs.estimate(s["prices"], s["tau_idx"], "gibbs-exact", [cs.StableParams(1.3, 0.5)] * 2, burnin=10, draws=10)


def test_run_command_simulate_then_estimate(tmp_path):
    cfg = "\n".join([
        "seed = 9",
        "replicates = 2",
        "T = 200",
        "model.beta = [[1], [0.5]]",
        "model.alpha_adj = [[0.1], [-0.3]]",
        "noise.stable.a = 1.5",
        "tau.modulus = 20",
        "chain.burnin = 100",
        "chain.draws = 200",
    ])
    sim = cs.run_command("simulate", cfg, tmp_path / "sim")
    assert len(sim["replicates"]) == 2
    files = [tmp_path / "sim" / r["file"] for r in sim["replicates"]]
    est = cs.run_command("estimate", cfg, tmp_path / "est", inputs=files)
    assert est["replicates"] == 2
    with open(tmp_path / "est" / "estimate.json") as fh:
        assert json.load(fh)["config_hash"] == est["config_hash"]


def test_run_command_rejects_unknown_key(tmp_path):
    with pytest.raises(ValueError, match="unknown config keys"):
        cs.run_command("simulate", "seed = 1\nfoo = 2", tmp_path)
