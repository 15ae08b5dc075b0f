import itertools
import math

import numpy as np
import pytest

from evopunn.evolution import (STRUCTURAL_OPS, EAParams, Individual, _add_nodes, _delete_connection,
                               _Editable, deletable_input_links, evolve_generation, init_population,
                               parametric_mutation, random_network, run_ea, stream, structural_mutation,
                               temperature, update_variance_one_fifth)
from evopunn.network import PUNetwork

from conftest import toy_split


def small(**kw):
    kw.setdefault("population_size", 20)
    kw.setdefault("max_generations", 5)
    kw.setdefault("max_hidden", 3)
    return EAParams(**kw)


def assert_valid(net, params):
    net.validate(max_hidden=params.max_hidden)


class TestParams:
    def test_defaults_follow_common_settings(self):
        p = EAParams()
        assert p.population_size == 1000
        assert p.weight_init_range == (-5.0, 5.0)
        assert (p.parametric_fraction, p.structural_fraction) == (0.10, 0.90)
        assert (p.alpha1_init, p.alpha2_init) == (0.5, 1.0)
        assert (p.input_link_mutation_pct, p.output_link_mutation_pct) == (0.30, 0.05)
        assert p.nodes_per_structural_op == (1, 2)

    @pytest.mark.parametrize("bad", [
        {"population_size": 5}, {"parametric_fraction": 0.2}, {"weight_init_range": (1, 1)},
        {"one_fifth_factor": 1.0}, {"alpha1_init": 0.0},
    ])
    def test_invalid(self, bad):
        with pytest.raises(ValueError):
            EAParams(**bad)


class TestInitPopulation:
    def test_full_size_population(self, toy):
        params = EAParams(max_hidden=4)
        pop = init_population(params, toy.n_inputs, toy.n_classes, 3, toy.train)
        assert len(pop) == 1000
        for ind in pop:
            assert_valid(ind.network, params)
            assert ind.fitness == pytest.approx(1 / (1 + ind.error))
        sizes = {ind.network.n_hidden for ind in pop}
        assert sizes == {1, 2, 3, 4}

    def test_single_hidden_node(self, toy):
        pop = init_population(small(max_hidden=1), toy.n_inputs, 2, 0, toy.train)
        assert all(ind.network.n_hidden == 1 for ind in pop)

    def test_deterministic(self, toy):
        a = init_population(small(), toy.n_inputs, 2, 42, toy.train)
        b = init_population(small(), toy.n_inputs, 2, 42, toy.train)
        for x, y in zip(a, b):
            assert np.array_equal(x.network.exponents, y.network.exponents)
            assert np.array_equal(x.network.coefficients, y.network.coefficients)
            assert x.error == y.error

    def test_weights_inside_init_ranges(self, toy):
        for ind in init_population(small(), toy.n_inputs, 2, 1, toy.train):
            net = ind.network
            assert np.all(np.abs(net.exponents) <= 5) and np.all(np.abs(net.coefficients) <= 5)


class TestTemperature:
    @pytest.mark.parametrize("error, t", [(0.0, 0.0), (1.0, 0.5), (math.log(3), 0.5235)])
    def test_values(self, error, t):
        net = random_network(2, 2, 1, small(), np.random.default_rng(0))
        assert temperature(Individual(net, error)) == pytest.approx(t, abs=5e-5)


class TestOneFifthRule:
    def test_increase(self):
        assert update_variance_one_fifth(0.5, 0.5, 0.85) == pytest.approx(0.5882, abs=5e-5)

    def test_boundary_unchanged(self):
        assert update_variance_one_fifth(0.2, 0.7, 0.85) == 0.7

    def test_decrease(self):
        assert update_variance_one_fifth(0.0, 1.0, 0.85) == 0.85

    @pytest.mark.parametrize("ratio", [0.0, 0.1, 0.19, 0.21, 0.5, 1.0])
    def test_strict_direction(self, ratio):
        new = update_variance_one_fifth(ratio, 1.0, 0.85)
        assert (new > 1.0) if ratio > 0.2 else (new < 1.0)

    def test_bad_ratio(self):
        with pytest.raises(ValueError):
            update_variance_one_fifth(1.5, 1.0)


class TestParametricMutation:
    def test_zero_temperature_is_identity(self, toy):
        net = random_network(toy.n_inputs, 2, 2, small(), np.random.default_rng(0))
        ind = Individual(net, 0.0)
        out, s1, s2 = parametric_mutation(ind, 0.5, 1.0, np.random.default_rng(1), toy.train, small())
        assert out is ind and not s1 and not s2

    def test_never_worsens(self, toy):
        params = small()
        rng = np.random.default_rng(3)
        for seed in range(30):
            ind = Individual.evaluate(random_network(toy.n_inputs, 2, 3, params, rng), toy.train)
            out, s1, s2 = parametric_mutation(ind, 0.5, 1.0, stream(seed, 1, 1), toy.train, params)
            assert out.fitness >= ind.fitness
            if out.fitness > ind.fitness:
                assert s1 or s2
            if not (s1 or s2):
                assert out.fitness == ind.fitness
            assert out.network.topology == ind.network.topology
            assert np.array_equal(out.network.input_mask, ind.network.input_mask)

    def test_deltas_follow_seeded_stream(self, toy):
        params = small()
        checked = 0
        for seed in range(40):
            net = random_network(toy.n_inputs, 2, 3, params, np.random.default_rng(seed))
            ind = Individual.evaluate(net, toy.train)
            out, _, _ = parametric_mutation(ind, 0.5, 1.0, stream(seed, 2, 3), toy.train, params)
            # replay the exponent step from a fresh copy of the same stream
            rng = stream(seed, 2, 3)
            links = np.flatnonzero(net.input_mask)
            n = max(1, int(math.floor(0.3 * links.size + 0.5)))
            pick = rng.choice(links, n, replace=False)
            deltas = rng.normal(0.0, 0.5 * temperature(ind), n)
            expected = net.exponents.copy()
            expected.flat[pick] += deltas
            if np.array_equal(out.network.exponents, net.exponents):
                continue  # exponent step rejected
            assert np.array_equal(out.network.exponents, expected)
            checked += 1
        assert checked > 5


def editable(hidden_masks, out_mask, n_classes=2):
    wm = np.array(hidden_masks, dtype=bool)
    bm = np.array(out_mask, dtype=bool)
    net = PUNetwork(np.where(wm, 1.0, 0.0), wm, np.where(bm, 1.0, 0.0), bm, np.zeros(bm.shape[0]), n_classes)
    net.validate()
    return _Editable(net)


class _FixedChoice:
    """Stands in for a Generator so every deletion choice can be enumerated."""

    def __init__(self, r):
        self.r = r

    def integers(self, *args, **kwargs):
        return self.r


class TestStructuralMutation:
    def test_hot_individual_fires_every_operator(self, toy):
        params = small(max_hidden=4)
        net = random_network(toy.n_inputs, 2, 2, params, np.random.default_rng(0))
        ind = Individual(net, 1e12)
        for seed in range(50):
            fired = []
            structural_mutation(ind, params, stream(seed, 0, 0), toy.train, fired_out=fired)
            assert fired == [0, 1, 2, 3]

    def test_firing_frequency_matches_temperature(self, toy):
        params = small(max_hidden=4)
        net = random_network(toy.n_inputs, 2, 2, params, np.random.default_rng(0))
        ind = Individual(net, 1.0)  # T = 0.5
        counts = np.zeros(4)
        trials = 4000
        for seed in range(trials):
            fired = []
            structural_mutation(ind, params, stream(seed, 9, 9), toy.train, fired_out=fired)
            counts[fired] += 1
        # each fires w.p. T, plus 1/4 of the none-fired fallback
        expected = 0.5 + 0.5 ** 4 / 4
        assert np.all(np.abs(counts / trials - expected) < 0.03)

    def test_node_addition_at_limit_is_skipped(self):
        params = small(max_hidden=2)
        e = editable([[1, 0], [0, 1]], [[1, 1]])
        assert _add_nodes(e, params, np.random.default_rng(0)) is False
        assert e.n_hidden == 2

    def test_connection_deletion_never_orphans(self):
        # every one-node net over three inputs, with or without its output link
        params = small()
        for bits in itertools.product([0, 1], repeat=3):
            if not any(bits):
                continue
            for out_link in (0, 1):
                base = editable([bits], [[out_link]])
                total = deletable_input_links(base.wm).size + int(base.bm.sum())
                assert total == (sum(bits) if sum(bits) >= 2 else 0) + out_link
                for r in range(total):
                    e = editable([bits], [[out_link]])
                    assert _delete_connection(e, params, _FixedChoice(r))
                    e.freeze().validate()
                if total == 0:
                    assert not _delete_connection(editable([bits], [[out_link]]), params, _FixedChoice(0))

    def test_mutants_stay_valid_and_evaluable(self, toy3):
        params = small(max_hidden=4)
        rng = np.random.default_rng(0)
        for seed in range(300):
            net = random_network(toy3.n_inputs, 3, int(rng.integers(1, 5)), params, rng)
            ind = Individual(net, float(rng.uniform(0, 5)))
            out = structural_mutation(ind, params, stream(seed, 1, 1), toy3.train)
            assert_valid(out.network, params)
            assert math.isfinite(out.error) or out.fitness == 0.0

    def test_operator_order(self):
        assert [op.__name__ for op in STRUCTURAL_OPS] == [
            "_add_nodes", "_delete_nodes", "_add_connection", "_delete_connection"]


class TestEvolveGeneration:
    def test_elitism_and_size(self, toy):
        params = small(population_size=30)
        pop = init_population(params, toy.n_inputs, 2, 5, toy.train)
        for gen in range(1, 6):
            best_before = max(i.fitness for i in pop)
            pop, stats = evolve_generation(pop, params, toy.train, 0.5, 1.0, 5, gen)
            assert len(pop) == 30
            assert max(i.fitness for i in pop) >= best_before
            assert stats.attempts == 2  # 3 best minus the untouched elite
            for ind in pop:
                assert_valid(ind.network, params)

    def test_perfect_population_keeps_best(self, toy):
        params = small()
        pop = [Individual(random_network(toy.n_inputs, 2, 2, params, stream(0, 0, i)), 0.0) for i in range(20)]
        best = pop[0]
        new, _ = evolve_generation(pop, params, toy.train, 0.5, 1.0, 0, 1)
        assert new[0] is best and new[0].fitness == 1.0

    def test_slot_streams_make_order_irrelevant(self, toy):
        params = small()
        pop = init_population(params, toy.n_inputs, 2, 8, toy.train)
        new, _ = evolve_generation(pop, params, toy.train, 0.5, 1.0, 8, 3)
        ranked = sorted(pop, key=lambda i: -i.fitness)
        ranked[-2:] = ranked[:2]
        # redo the structural slots one by one, in reverse order
        for slot in reversed(range(2, 20)):
            again = structural_mutation(ranked[slot], params, stream(8, 3, slot), toy.train)
            assert again.error == new[slot].error
            assert np.array_equal(again.network.exponents, new[slot].network.exponents)


class TestRunEA:
    def test_zero_generations_returns_initial_best(self, toy):
        params = small(max_generations=0)
        result = run_ea(params, toy, seed=4)
        pop = init_population(params, toy.n_inputs, 2, 4, toy.train)
        assert result.best.fitness == max(i.fitness for i in pop)
        assert len(result.trace) == 1

    def test_deterministic(self, toy):
        a = run_ea(small(), toy, seed=9)
        b = run_ea(small(), toy, seed=9)
        assert a.summary() | {"seconds": 0} == b.summary() | {"seconds": 0}
        assert [r.best_fitness for r in a.trace] == [r.best_fitness for r in b.trace]
        assert np.array_equal(a.best.network.exponents, b.best.network.exponents)

    def test_trace_is_elitist(self, toy3):
        result = run_ea(small(max_generations=15, population_size=30), toy3, seed=1)
        best = [r.best_fitness for r in result.trace]
        assert all(b2 >= b1 for b1, b2 in zip(best, best[1:]))
        assert len(result.trace) == 16

    def test_one_fifth_updates_on_window(self, toy):
        result = run_ea(small(max_generations=12, one_fifth_window=5), toy, seed=2)
        alphas = [(r.alpha1, r.alpha2) for r in result.trace]
        assert alphas[0] == alphas[4] == (0.5, 1.0)
        assert alphas[5] != (0.5, 1.0) or alphas[10] != (0.5, 1.0)
        assert alphas[5] == alphas[9]

    def test_result_fields(self, toy):
        result = run_ea(small(), toy, seed=3)
        net = result.best.network
        assert result.topology == f"{net.n_inputs}:{net.n_hidden}:{net.n_outputs}"
        assert 0 <= result.test_ccr <= 100 and result.seconds > 0

    def test_learns_toy_problem(self, toy):
        result = run_ea(small(population_size=60, max_generations=20), toy, seed=0)
        assert result.train_ccr >= 85.0

    def test_dimension_mismatch(self, toy):
        bad = toy_split(k=3)
        bad.test = toy_split(k=4).test
        with pytest.raises(ValueError):
            run_ea(small(), bad, seed=0)

    def test_dataset_name_mismatch(self, toy):
        from evopunn.grid import ExperimentConfig
        with pytest.raises(ValueError):
            run_ea(ExperimentConfig("Cancer", "1", small()), toy, seed=0)

    def test_full_output_layout(self, toy3):
        result = run_ea(small(reference_output=False), toy3, seed=0)
        assert result.topology.endswith(":3")
