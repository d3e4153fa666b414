import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlmetomo.engine import (
    EngineConfig,
    EngineError,
    initial_state,
    lambda_sweep,
    mlme_step,
    normalized_log_likelihood,
    r_operator,
    reconstruct,
    relative_entropy,
    resolve_mode,
    script_r,
)
from mlmetomo.measurement import (
    Dataset,
    Pom,
    PomError,
    probabilities,
    random_complete_pom,
    random_imperfect_pom,
)
from mlmetomo.operators import basis_projector, random_hs_state, trace_distance, von_neumann_entropy

from oracles import diagonal_family_scan, pauli_pom, qubit_mlme_population

Z = Pom(np.array([basis_projector(2, 0), basis_projector(2, 1)]))
seeds = st.integers(min_value=0, max_value=2**32 - 1)


class TestConfig:
    @pytest.mark.parametrize(
        "kw",
        [{"lam": -1}, {"epsilon": 0}, {"gradient_tolerance": 0}, {"step_shrink": 1.0}, {"step_growth": 0.5}],
    )
    def test_rejects(self, kw):
        with pytest.raises(EngineError):
            EngineConfig(**kw)

    def test_defaults(self):
        c = EngineConfig()
        assert (c.lam, c.epsilon, c.max_iterations, c.gradient_tolerance, c.eigenvalue_floor, c.step_shrink) == (
            1e-3, 0.1, 50_000, 1e-8, 1e-12, 0.5)


class TestFunctionals:
    def test_self_likelihood(self):
        p = np.array([0.2, 0.3, 0.5])
        assert normalized_log_likelihood(p, p) == pytest.approx(np.sum(p * np.log(p)))

    def test_likelihood_examples(self):
        assert normalized_log_likelihood([1, 0], [0.5, 0.5]) == pytest.approx(np.log(0.5))
        assert normalized_log_likelihood([0.5, 0.5], [0.2, 0.2], eta=0.4) == pytest.approx(np.log(0.5))

    def test_likelihood_sentinel(self):
        assert normalized_log_likelihood([0.5, 0.5], [1.0, 0.0]) == -np.inf
        # unobserved outcomes with p = 0 are fine
        assert normalized_log_likelihood([1.0, 0.0], [1.0, 0.0]) == 0.0

    def test_relative_entropy(self):
        assert relative_entropy([0.3, 0.7], [0.3, 0.7]) == pytest.approx(0, abs=1e-15)
        assert relative_entropy([1, 0], [0.5, 0.5]) == pytest.approx(np.log(2))

    @given(seeds)
    @settings(max_examples=30, deadline=None)
    def test_gibbs(self, seed):
        rng = np.random.default_rng(seed)
        f, p = rng.dirichlet(np.ones(4)), rng.dirichlet(np.ones(4))
        assert relative_entropy(f, p) >= -1e-12


class TestOperators:
    def test_r_complete_self(self):
        pom = random_complete_pom(3, 5, np.random.default_rng(0))
        rho = random_hs_state(3, np.random.default_rng(1))
        p = probabilities(rho, pom)
        np.testing.assert_allclose(r_operator(p, p, pom), np.eye(3), atol=1e-10)

    def test_r_single_effect(self):
        pom = Pom(0.3 * basis_projector(2, 0))
        p = probabilities(np.eye(2) / 2, pom)
        np.testing.assert_allclose(r_operator([1.0], p, pom), 2 * basis_projector(2, 0), atol=1e-12)

    @given(seeds)
    @settings(max_examples=20, deadline=None)
    def test_r_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        pom = random_imperfect_pom(3, 4, rng)
        f = rng.dirichlet(np.ones(4))
        p = probabilities(random_hs_state(3, rng), pom)
        expect = sum(f[j] / p[j] * pom.effects[j] for j in range(4))
        np.testing.assert_allclose(r_operator(f, p, pom), expect, atol=1e-12)

    def test_r_drops_unobserved(self):
        p = np.array([1.0, 0.0])
        np.testing.assert_allclose(r_operator([1.0, 0.0], p, Z), basis_projector(2, 0))

    def test_script_r_zero_at_fit(self):
        pom = random_complete_pom(2, 4, np.random.default_rng(2))
        rho = random_hs_state(2, np.random.default_rng(3))
        f = probabilities(rho, pom)
        assert np.abs(script_r(rho, f, pom, EngineConfig(lam=0))).max() < 1e-10

    def test_script_r_lossy_assembly(self):
        pom = Pom(0.3 * basis_projector(2, 0))
        got = script_r(np.eye(2) / 2, [1.0], pom, EngineConfig(lam=0), mode="lossy")
        expect = 2 * basis_projector(2, 0) - pom.group_sum() / 0.15
        np.testing.assert_allclose(got, expect, atol=1e-12)

    def test_script_r_maximally_mixed(self):
        pom = random_complete_pom(3, 6, np.random.default_rng(4))
        rho = np.eye(3) / 3
        f = probabilities(rho, pom)
        for lam in (0.0, 1e-3, 1.0):
            assert np.abs(script_r(rho, f, pom, EngineConfig(lam=lam))).max() < 1e-10

    def test_mode_resolution(self):
        assert resolve_mode(Z) == "perfect"
        assert resolve_mode(Pom(0.5 * np.eye(2))) == "lossy"
        assert resolve_mode(Z, "lossy") == "lossy"
        with pytest.raises(EngineError):
            resolve_mode(Z, "bogus")


class TestStep:
    def test_fixed_point(self):
        f = [0.5, 0.5]
        cfg = EngineConfig(lam=0)
        s0 = initial_state(f, Z, cfg)
        s1 = mlme_step(s0, f, Z, cfg)
        np.testing.assert_allclose(s1.rho, np.eye(2) / 2, atol=1e-14)

    def test_one_step_hand_computation(self):
        f = [1.0, 0.0]
        cfg = EngineConfig(lam=0, epsilon=0.1, step_growth=1.0)
        s1 = mlme_step(initial_state(f, Z, cfg), f, Z, cfg)
        # R - 1 = diag(1, -1); (1 + 0.1 r) rho (1 + 0.1 r) / tr = diag(1.21, 0.81) / 2.02
        np.testing.assert_allclose(s1.rho, np.diag([1.21, 0.81]) / 2.02, atol=1e-12)
        assert s1.rho[0, 0].real > 0.5
        assert s1.objective >= np.log(0.5)

    def test_accepted_steps_ascend(self):
        rng = np.random.default_rng(5)
        pom = random_imperfect_pom(3, 4, rng)
        f = rng.dirichlet(np.ones(4))
        cfg = EngineConfig()
        state = initial_state(f, pom, cfg)
        for _ in range(200):
            nxt = mlme_step(state, f, pom, cfg)
            assert nxt.objective >= state.objective - 1e-12
            vals = np.linalg.eigvalsh(nxt.rho)
            assert vals.min() >= -1e-10
            assert abs(np.trace(nxt.rho).real - 1) < 1e-10
            state = nxt


class TestReconstruct:
    def test_complete_qubit_ml_limit(self):
        data = Dataset([7500, 2500])
        rep = reconstruct(data, Z, EngineConfig(lam=0))
        assert rep.converged
        assert trace_distance(rep.estimator, np.diag([0.75, 0.25])) < 1e-4

    def test_complete_qubit_mlme_root(self):
        # at lam = 1e-3 the entropy term shifts the population by ~2e-4; the
        # oracle is the exact stationary point of the 1-parameter objective
        rep = reconstruct(Dataset([7500, 2500]), Z, EngineConfig(lam=1e-3))
        a = qubit_mlme_population(0.75, 1e-3)
        assert rep.converged
        assert rep.estimator[0, 0].real == pytest.approx(a, abs=1e-6)
        assert abs(rep.estimator[0, 1]) < 1e-9
        assert trace_distance(rep.estimator, np.diag([0.75, 0.25])) == pytest.approx(0.75 - a, abs=1e-6)

    def test_no_information(self):
        rep = reconstruct(Dataset([37]), Pom(0.5 * np.eye(2)), EngineConfig(lam=1e-3))
        np.testing.assert_allclose(rep.estimator, np.eye(2) / 2, atol=1e-6)

    def test_single_lossy_effect_max_entropy(self):
        pom = Pom(0.5 * basis_projector(2, 0))
        rep = reconstruct(Dataset([100]), pom, EngineConfig(lam=1e-3))
        a = diagonal_family_scan([[0.5, 0.0]], [1.0])
        assert trace_distance(rep.estimator, np.diag([a, 1 - a])) <= 1e-4
        assert rep.estimator[0, 0].real < 0.6
        p = probabilities(rep.estimator, pom)
        assert p[0] / p.sum() == pytest.approx(1.0)

    def test_lossy_mode_reported(self):
        pom = random_imperfect_pom(2, 2, np.random.default_rng(0))
        rep = reconstruct(Dataset([30, 70]), pom)
        assert rep.mode == "lossy"
        assert 0 < rep.final_eta < 1

    def test_counts_must_match(self):
        with pytest.raises(EngineError):
            reconstruct(Dataset([1, 2, 3]), Z)

    def test_empty_dataset(self):
        with pytest.raises(PomError):
            reconstruct(Dataset([0, 0]), Z)

    def test_non_convergence_reported(self):
        rep = reconstruct(Dataset([60, 40]), random_imperfect_pom(2, 2, np.random.default_rng(1)),
                          EngineConfig(max_iterations=3))
        assert not rep.converged
        assert rep.iterations_used == 3

    def test_objective_trace_monotone(self):
        rng = np.random.default_rng(8)
        pom = random_imperfect_pom(3, 5, rng)
        data = Dataset(rng.integers(1, 100, 5).astype(float))
        rep = reconstruct(data, pom)
        assert np.all(np.diff(rep.objective_trace) >= -1e-12)
        assert rep.converged and rep.final_gradient_norm <= 1e-8

    def test_count_scaling_invariance(self):
        rng = np.random.default_rng(4)
        pom = random_imperfect_pom(2, 3, rng)
        data = Dataset([120.0, 340.0, 55.0])
        a = reconstruct(data, pom).estimator
        b = reconstruct(data.scaled(10), pom).estimator
        assert trace_distance(a, b) <= 1e-8

    def test_data_consistency(self):
        # frequencies generated by a state are achievable, so the estimator
        # reproduces them; the entropy weight biases them by O(lam)
        rng = np.random.default_rng(2)
        for _ in range(3):
            pom = random_imperfect_pom(3, 4, rng)
            pt = probabilities(random_hs_state(3, rng), pom)
            f = pt / pt.sum()
            rep = reconstruct(Dataset(f * 1e4), pom, EngineConfig(lam=1e-7))
            p = probabilities(rep.estimator, pom)
            np.testing.assert_allclose(p / p.sum(), f, atol=1e-6)

    def test_report_json(self):
        rep = reconstruct(Dataset([3, 1]), Z)
        obj = json.loads(json.dumps(rep.to_json()))
        assert obj["estimator"]["dim"] == 2
        assert obj["converged"] is True


class TestLambdaSweep:
    def test_large_lambda_maximally_mixed(self):
        rng = np.random.default_rng(3)
        pom = random_imperfect_pom(3, 3, rng)
        (lam, ent, _), = lambda_sweep(Dataset([10, 50, 5]), pom, EngineConfig(), [1e3])
        assert ent == pytest.approx(np.log(3), abs=1e-5)

    def test_tradeoff_monotone(self):
        rng = np.random.default_rng(6)
        pom = random_imperfect_pom(3, 4, rng)
        data = Dataset([400.0, 250.0, 90.0, 260.0])
        rows = lambda_sweep(data, pom, EngineConfig(), [1e-2, 1e-4, 1e-3])
        lams = [r[0] for r in rows]
        assert lams == sorted(lams)
        ents = [r[1] for r in rows]
        lls = [r[2] for r in rows]
        assert all(b >= a - 1e-6 for a, b in zip(ents, ents[1:]))
        assert all(b <= a + 1e-6 for a, b in zip(lls, lls[1:]))

    def test_ml_limit_on_complete_ic_data(self):
        pom = Pom(pauli_pom())
        rho = random_hs_state(2, np.random.default_rng(9))
        data = Dataset(probabilities(rho, pom) * 1e4)
        a = reconstruct(data, pom, EngineConfig(lam=0)).estimator
        b = reconstruct(data, pom, EngineConfig(lam=1e-6)).estimator
        assert trace_distance(a, b) <= 1e-5

    def test_empty_list(self):
        with pytest.raises(EngineError):
            lambda_sweep(Dataset([1, 1]), Z, EngineConfig(), [])

    def test_entropy_matches_estimator(self):
        pom = random_imperfect_pom(2, 2, np.random.default_rng(0))
        rep = reconstruct(Dataset([10, 20]), pom)
        assert rep.final_entropy == pytest.approx(von_neumann_entropy(rep.estimator), abs=1e-12)
