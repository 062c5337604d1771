import math

import numpy as np
import pytest

from treesample.baselines import WeightedAtoms
from treesample.exact import exact_kl, solve_exact
from treesample.metrics import (
    EvalReport,
    delta_kl_atoms,
    delta_kl_sampler,
    energy_entropy_deltas,
    evaluate_method,
)
from treesample.model import Factor, FactorGraph
from treesample.prior import HeuristicPrior
from treesample.search import build_tree

from conftest import all_configs, make_random_graph


def _uniform_graph(n, k):
    return FactorGraph(
        num_variables=n,
        num_states=k,
        factors=tuple(Factor(id=v - 1, scope=(v,), table=np.zeros(k)) for v in range(1, n + 1)),
        ordering=tuple(range(1, n + 1)),
    )


def _target_atoms(graph, sol):
    atoms = list(all_configs(graph.num_variables, graph.num_states))
    weights = [math.exp(sol.log_joint(x)) for x in atoms]
    total = sum(weights)
    return WeightedAtoms(atoms=atoms, weights=[w / total for w in weights])


class TestDeltaKlAtoms:
    def test_plug_in_identity(self):
        rng = np.random.default_rng(7)
        g = make_random_graph(rng, 3, 2, num_extra_factors=2)
        sol = solve_exact(g)
        atoms = _target_atoms(g, sol)
        assert delta_kl_atoms(atoms, g) == pytest.approx(-sol.log_z, abs=1e-9)

    def test_single_atom_is_negative_density(self):
        rng = np.random.default_rng(11)
        g = make_random_graph(rng, 3, 2, num_extra_factors=1)
        x = max(all_configs(3, 2), key=g.log_unnormalized_density)
        atoms = WeightedAtoms(atoms=[x], weights=[1.0])
        assert delta_kl_atoms(atoms, g) == pytest.approx(-g.log_unnormalized_density(x), abs=1e-12)

    def test_matches_independent_summation(self):
        rng = np.random.default_rng(13)
        g = make_random_graph(rng, 3, 3, num_extra_factors=2)
        configs = list(all_configs(3, 3))
        picks = rng.choice(len(configs), size=6, replace=False)
        w = rng.random(6)
        w /= w.sum()
        atoms = WeightedAtoms(atoms=[tuple(configs[i]) for i in picks], weights=w.tolist())
        direct = 0.0
        for x, wi in zip(atoms.atoms, atoms.weights):
            direct += wi * math.log(wi) - wi * g.log_unnormalized_density(x)
        assert delta_kl_atoms(atoms, g) == pytest.approx(direct, abs=1e-12)

    def test_zero_mass_atom_gives_inf(self):
        table = np.array([0.0, -np.inf])
        g = FactorGraph(
            num_variables=1, num_states=2,
            factors=(Factor(id=0, scope=(1,), table=table),), ordering=(1,),
        )
        atoms = WeightedAtoms(atoms=[(2,)], weights=[1.0])
        assert delta_kl_atoms(atoms, g) == math.inf


class TestDeltaKlSampler:
    def test_full_tree_recovers_log_z(self):
        rng = np.random.default_rng(17)
        g = make_random_graph(rng, 3, 2, num_extra_factors=2)
        sol = solve_exact(g)
        tree = build_tree(g, HeuristicPrior(), budget=2 + 4 + 8, seed=1)
        est, stderr = delta_kl_sampler(tree, g, num_samples=4000, seed=3)
        assert abs(est - (-sol.log_z)) < max(3 * stderr, 1e-9)

    def test_constant_integrand_has_zero_stderr(self):
        g = _uniform_graph(3, 2)
        tree = build_tree(g, HeuristicPrior(), budget=0, seed=1)
        est, stderr = delta_kl_sampler(tree, g, num_samples=100, seed=5)
        assert est == pytest.approx(-3 * math.log(2), abs=1e-12)
        assert stderr == pytest.approx(0.0, abs=1e-13)

    def test_seed_invariance_within_stderr(self):
        rng = np.random.default_rng(19)
        g = make_random_graph(rng, 4, 2, num_extra_factors=2)
        tree = build_tree(g, HeuristicPrior(), budget=12, seed=2)
        e1, s1 = delta_kl_sampler(tree, g, num_samples=4000, seed=101)
        e2, s2 = delta_kl_sampler(tree, g, num_samples=4000, seed=202)
        assert abs(e1 - e2) < 4 * math.hypot(s1, s2)

    def test_stderr_shrinks_like_sqrt(self):
        rng = np.random.default_rng(23)
        g = make_random_graph(rng, 4, 2, num_extra_factors=3)
        tree = build_tree(g, HeuristicPrior(), budget=10, seed=2)
        _, s_small = delta_kl_sampler(tree, g, num_samples=100, seed=7)
        _, s_big = delta_kl_sampler(tree, g, num_samples=10_000, seed=7)
        ratio = s_small / s_big
        assert 5 < ratio < 20  # ideal is 10


class TestEnergyEntropyDeltas:
    def test_exact_target_gives_zero_zero(self):
        rng = np.random.default_rng(29)
        g = make_random_graph(rng, 3, 2, num_extra_factors=2)
        sol = solve_exact(g)
        atoms = _target_atoms(g, sol)
        de, dh = energy_entropy_deltas(atoms, sol, g)
        assert de == pytest.approx(0.0, abs=1e-9)
        assert dh == pytest.approx(0.0, abs=1e-9)

    def test_point_mass_on_uniform_target(self):
        g = _uniform_graph(1, 2)
        sol = solve_exact(g)
        atoms = WeightedAtoms(atoms=[(1,)], weights=[1.0])
        de, dh = energy_entropy_deltas(atoms, sol, g)
        assert de == pytest.approx(0.0, abs=1e-12)
        assert dh == pytest.approx(-math.log(2), abs=1e-12)

    def test_kl_reconstruction_identity(self):
        rng = np.random.default_rng(31)
        g = make_random_graph(rng, 3, 2, num_extra_factors=2)
        sol = solve_exact(g)
        configs = list(all_configs(3, 2))
        w = rng.random(len(configs))
        w /= w.sum()
        atoms = WeightedAtoms(atoms=[tuple(x) for x in configs], weights=w.tolist())
        de, dh = energy_entropy_deltas(atoms, sol, g)
        kl = exact_kl(atoms, sol)
        assert kl == pytest.approx(de - dh, abs=1e-9)


class TestEvaluateMethod:
    def test_report_fields_with_oracle(self):
        rng = np.random.default_rng(37)
        g = make_random_graph(rng, 3, 2, num_extra_factors=1)
        sol = solve_exact(g)
        tree = build_tree(g, HeuristicPrior(), budget=14, seed=0)
        report = evaluate_method("treesample", tree, g, oracle=sol, num_samples=500, seed=1, budget=14)
        assert report.kl == pytest.approx(report.delta_kl + sol.log_z, abs=1e-12)
        assert report.budget_spent == 14
        assert report.delta_energy is not None and report.delta_entropy is not None
        data = report.to_json_dict()
        assert data["method"] == "treesample"

    def test_ranking_preserved(self):
        rng = np.random.default_rng(41)
        g = make_random_graph(rng, 3, 2, num_extra_factors=2)
        sol = solve_exact(g)
        good = _target_atoms(g, sol)
        x = max(all_configs(3, 2), key=g.log_unnormalized_density)
        bad = WeightedAtoms(atoms=[x], weights=[1.0])
        d_good, d_bad = delta_kl_atoms(good, g), delta_kl_atoms(bad, g)
        k_good, k_bad = exact_kl(good, sol), exact_kl(bad, sol)
        assert (d_good < d_bad) == (k_good < k_bad)
        assert k_good == pytest.approx(d_good + sol.log_z, abs=1e-9)

    def test_inf_encoding_in_json(self):
        report = EvalReport(method="sis", delta_kl=math.inf, num_samples=1)
        assert report.to_json_dict()["delta_kl"] == "inf"
