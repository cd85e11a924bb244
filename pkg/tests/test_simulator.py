import json
from dataclasses import replace

import numpy as np
import pytest

from recruitsim.demographics import SchemaError, SiteModel
from recruitsim.metrics import kl_divergence
from recruitsim.policy import SolverConfig
from recruitsim.simulator import (
    SimulationConfig,
    first_divergence,
    recruit_batch,
    replay_check,
    run_simulation,
)

# Mean MKLD of 10^4 draws from the target against the target itself, 100
# replicates (oracle computed by sampling the target directly, seed 2024).
NOISE_FLOOR_ORACLE = 0.004094


def small(**kw):
    base = dict(n_total=2000, iterations=4, seed=3)
    base.update(kw)
    return SimulationConfig(**base)


def test_recruit_batch(rng):
    np.testing.assert_array_equal(recruit_batch([0.3, 0.7], 0, rng), [0, 0])
    np.testing.assert_array_equal(recruit_batch([0.0, 1.0, 0.0], 17, rng), [0, 17, 0])
    counts = recruit_batch([0.25, 0.75], 100_000, rng)
    assert counts.sum() == 100_000
    np.testing.assert_allclose(counts, [25_000, 75_000], rtol=0.01)


def test_config_validation():
    with pytest.raises(ValueError, match="divisible"):
        SimulationConfig(n_total=1001, iterations=20)
    with pytest.raises(ValueError):
        SimulationConfig(iterations=0)
    with pytest.raises(ValueError):
        SimulationConfig(lam=0)
    c = SimulationConfig(policy="thompson", prior="uninformed", metric="ds")
    assert SimulationConfig.from_dict(c.to_dict()) == c
    assert c.batch == 500


def test_schema_mismatch(sites, target):
    from conftest import TOY_2X2
    from recruitsim.demographics import JointDistribution

    odd = SiteModel("odd", JointDistribution([0.25] * 4, TOY_2X2))
    with pytest.raises(SchemaError):
        run_simulation(small(), [odd], target)


def test_noise_floor_single_site_equals_target(target):
    site = [SiteModel("census", target)]
    finals = [
        run_simulation(SimulationConfig(policy="uniform", seed=s), site, target).final_distances["mkld"]
        for s in range(100)
    ]
    assert np.mean(finals) < 0.005
    assert np.mean(finals) == pytest.approx(NOISE_FLOOR_ORACLE, abs=0.0005)


@pytest.mark.parametrize("policy", ["adaptive", "thompson", "informed_static", "random_site"])
def test_noise_floor_any_policy(policy, target):
    site = [SiteModel("census", target)]
    r = run_simulation(SimulationConfig(policy=policy, prior="uninformed", seed=1), site, target)
    assert r.final_distances["mkld"] < 0.01


def test_one_hot_converges_to_site(sites, target):
    j = 4
    vals = []
    for seed in range(10):
        r = run_simulation(SimulationConfig(policy="uniform", seed=seed), [sites[j]], target)
        vals.append(kl_divergence(r.cohort.distribution().probs, sites[j].response.probs))
    assert np.mean(vals) < 0.01


@pytest.mark.parametrize("policy,prior", [
    ("adaptive", "informed"), ("adaptive", "uninformed"), ("thompson", "empiric"),
    ("informed_static", "informed"), ("uniform", "informed"), ("random_site", "informed"),
])
def test_run_invariants(policy, prior, sites, target):
    cfg = small(policy=policy, prior=prior, lam=1.1, kappa=0.9)
    r = run_simulation(cfg, sites, target)
    assert len(r.records) == cfg.iterations
    prev = np.zeros(80)
    for rec in r.records:
        assert rec.counts.sum() == cfg.batch
        assert rec.recruits.sum() == cfg.batch
        np.testing.assert_array_equal(rec.recruits.sum(axis=1), rec.counts)
        assert rec.cohort_total == rec.t * cfg.batch
        assert abs(rec.rho.sum() - 1) < 1e-9
        cum = prev + rec.recruits.sum(axis=0)
        assert np.all(cum >= prev)
        prev = cum
    assert r.cohort.total == cfg.n_total
    np.testing.assert_array_equal(r.cohort.counts, prev)
    pre = {"empiric": cfg.empiric_samples * 9}.get(prior, 0)
    if policy == "informed_static":
        pre = cfg.static_samples * 9
    assert r.belief_added == pytest.approx(cfg.n_total + pre)


def test_informed_static_is_frozen(sites, target):
    r = run_simulation(small(policy="informed_static"), sites, target)
    for rec in r.records[1:]:
        np.testing.assert_array_equal(rec.rho, r.records[0].rho)


def test_uniform_rows(sites, target):
    r = run_simulation(small(policy="uniform"), sites, target)
    np.testing.assert_allclose(r.allocation_matrix(), 1 / 9)


def test_single_iteration_adaptive_equals_informed_static(sites, target):
    common = dict(n_total=500, iterations=1, seed=11, empiric_samples=1000, static_samples=1000)
    a = run_simulation(SimulationConfig(policy="adaptive", prior="empiric", **common), sites, target)
    b = run_simulation(SimulationConfig(policy="informed_static", **common), sites, target)
    np.testing.assert_array_equal(a.records[0].rho, b.records[0].rho)
    assert first_divergence(a, b) is None


def test_replay(sites, target):
    cfg = small(policy="adaptive", prior="uninformed", lam=1.2)
    r = run_simulation(cfg, sites, target)
    assert replay_check(r, cfg, sites, target)
    assert not replay_check(r, replace(cfg, seed=cfg.seed + 1), sites, target)
    assert not replay_check(r, replace(cfg, lam=1.0), sites, target)


def test_static_dynamics_identity(sites, target):
    a = run_simulation(small(policy="thompson"), sites, target)
    b = run_simulation(small(policy="thompson", lam=1.0, kappa=1.0), sites, target)
    assert first_divergence(a, b) is None


def test_outputs(sites, target):
    r = run_simulation(small(policy="adaptive", solver=SolverConfig(draws=2)), sites, target)
    doc = json.loads(json.dumps(r.to_dict()))
    assert doc["schema_version"] == "recruitsim.result/1"
    assert len(doc["iterations"]) == 4 and sum(doc["final_cohort"]) == 2000
    lines = r.to_csv().splitlines()
    assert lines[0].startswith("# schema=recruitsim.result/1 seed=3")
    assert lines[1] == "iteration,site,rho,recruits,mkld,ukld,ds"
    assert len(lines) == 2 + 4 * 9
