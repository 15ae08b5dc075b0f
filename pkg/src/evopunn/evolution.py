"""Evolutionary training of product-unit networks.

The loop uses replication and mutation only.  Each generation the population
is ranked by fitness, the best tenth is copied over the worst tenth, the best
tenth (bar the single best, which passes through untouched) receives
parametric mutation and everyone else structural mutation.  Mutation strength
scales with the temperature ``1 - fitness`` and the parametric step sizes
adapt with the 1/5 success rule.

Every individual slot in every generation draws from its own random stream
keyed on ``(seed, generation, slot)``, so results do not depend on the order
in which individuals are processed.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .network import PUNetwork, ccr, count_connections, cross_entropy, fitness

INIT_GENERATION = 0


@dataclass
class EAParams:
    population_size: int = 1000
    max_generations: int = 100
    max_hidden: int = 3
    weight_init_range: tuple[float, float] = (-5.0, 5.0)
    coeff_init_range: tuple[float, float] = (-5.0, 5.0)
    parametric_fraction: float = 0.10
    structural_fraction: float = 0.90
    alpha1_init: float = 0.5
    alpha2_init: float = 1.0
    input_link_mutation_pct: float = 0.30
    output_link_mutation_pct: float = 0.05
    nodes_per_structural_op: tuple[int, int] = (1, 2)
    one_fifth_window: int = 10
    one_fifth_factor: float = 0.85
    reference_output: bool = True

    def __post_init__(self):
        self.weight_init_range = tuple(self.weight_init_range)
        self.coeff_init_range = tuple(self.coeff_init_range)
        self.nodes_per_structural_op = tuple(self.nodes_per_structural_op)
        self.validate()

    def validate(self) -> None:
        if self.population_size < 10:
            raise ValueError("population_size must be at least 10")
        if self.max_generations < 0 or self.max_hidden < 1:
            raise ValueError("max_generations >= 0 and max_hidden >= 1 required")
        if not math.isclose(self.parametric_fraction + self.structural_fraction, 1.0):
            raise ValueError("parametric and structural fractions must sum to 1")
        if not 0 < self.parametric_fraction < 1:
            raise ValueError("parametric_fraction must be in (0, 1)")
        for lo, hi in (self.weight_init_range, self.coeff_init_range):
            if not lo < hi:
                raise ValueError("degenerate initialisation range")
        lo, hi = self.nodes_per_structural_op
        if not 1 <= lo <= hi:
            raise ValueError("bad nodes_per_structural_op")
        if self.alpha1_init <= 0 or self.alpha2_init <= 0:
            raise ValueError("initial alphas must be positive")
        if not 0 < self.one_fifth_factor < 1 or self.one_fifth_window < 1:
            raise ValueError("bad 1/5 rule settings")

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("weight_init_range", "coeff_init_range", "nodes_per_structural_op"):
            d[key] = list(d[key])
        return d


class Individual:
    """A network with its cached training error and fitness."""

    __slots__ = ("network", "error", "fitness")

    def __init__(self, network: PUNetwork, error: float):
        self.network = network
        self.error = error
        self.fitness = fitness(error) if math.isfinite(error) else 0.0

    @classmethod
    def evaluate(cls, network: PUNetwork, data) -> Individual:
        return cls(network, cross_entropy(network, data))

    def __repr__(self):
        return f"Individual({self.network.topology}, fitness={self.fitness:.6f})"


def stream(seed: int, generation: int, slot: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, generation, slot])))


def temperature(ind: Individual) -> float:
    return 1.0 - ind.fitness


def _n_mutated(pct: float, available: int) -> int:
    return min(available, max(1, int(math.floor(pct * available + 0.5))))


def _random_input_mask(k: int, rng: np.random.Generator) -> np.ndarray:
    while True:
        mask = rng.random(k) < 0.5
        if mask.any():
            return mask


def random_network(n_inputs: int, n_classes: int, n_hidden: int, params: EAParams,
                   rng: np.random.Generator) -> PUNetwork:
    n_out = n_classes - 1 if params.reference_output else n_classes
    wm = np.array([_random_input_mask(n_inputs, rng) for _ in range(n_hidden)])
    w = np.where(wm, rng.uniform(*params.weight_init_range, size=wm.shape), 0.0)
    bm = rng.random((n_out, n_hidden)) < 0.5
    b = np.where(bm, rng.uniform(*params.coeff_init_range, size=bm.shape), 0.0)
    bias = rng.uniform(*params.coeff_init_range, size=n_out)
    return PUNetwork(w, wm, b, bm, bias, n_classes)


def init_population(params: EAParams, n_inputs: int, n_classes: int, seed: int, data) -> list[Individual]:
    """Random initial population evaluated on ``data`` (the train partition)."""
    population = []
    for slot in range(params.population_size):
        rng = stream(seed, INIT_GENERATION, slot)
        h = int(rng.integers(1, params.max_hidden + 1))
        population.append(Individual.evaluate(random_network(n_inputs, n_classes, h, params, rng), data))
    return population


def parametric_mutation(ind: Individual, alpha1: float, alpha2: float, rng: np.random.Generator,
                        data, params: EAParams) -> tuple[Individual, bool, bool]:
    """Gaussian perturbation of exponents, then of output coefficients and biases.

    The two steps are accepted or reverted separately (a step is kept when it
    does not lower fitness) and report separate success flags, one per step
    size.  Noise standard deviation is ``alpha * T`` with ``T`` the
    temperature of the incoming individual.
    """
    if alpha1 <= 0 or alpha2 <= 0:
        raise ValueError("alphas must be positive")
    t = temperature(ind)
    if t <= 0.0:
        return ind, False, False
    net = ind.network

    links = np.flatnonzero(net.input_mask)
    pick = rng.choice(links, _n_mutated(params.input_link_mutation_pct, links.size), replace=False)
    w = net.exponents.copy()
    w.flat[pick] += rng.normal(0.0, alpha1 * t, pick.size)
    trial = Individual.evaluate(
        PUNetwork(w, net.input_mask, net.coefficients, net.output_mask, net.bias, net.n_classes), data)
    exp_success = trial.fitness > ind.fitness
    if trial.fitness >= ind.fitness:
        ind, net = trial, trial.network

    # output links first, then biases, in one flat index space
    out_links = np.flatnonzero(net.output_mask)
    n_params = out_links.size + net.n_outputs
    pick = rng.choice(n_params, _n_mutated(params.output_link_mutation_pct, n_params), replace=False)
    noise = rng.normal(0.0, alpha2 * t, pick.size)
    b = net.coefficients.copy()
    bias = net.bias.copy()
    is_link = pick < out_links.size
    b.flat[out_links[pick[is_link]]] += noise[is_link]
    bias[pick[~is_link] - out_links.size] += noise[~is_link]
    trial = Individual.evaluate(
        PUNetwork(net.exponents, net.input_mask, b, net.output_mask, bias, net.n_classes), data)
    coef_success = trial.fitness > ind.fitness
    if trial.fitness >= ind.fitness:
        ind = trial
    return ind, bool(exp_success), bool(coef_success)


def update_variance_one_fifth(success_ratio: float, alpha: float, factor: float = 0.85) -> float:
    if not 0.0 <= success_ratio <= 1.0:
        raise ValueError("success ratio must be in [0, 1]")
    if alpha <= 0 or not 0 < factor < 1:
        raise ValueError("alpha > 0 and factor in (0, 1) required")
    if success_ratio > 0.2:
        return alpha / factor
    if success_ratio < 0.2:
        return alpha * factor
    return alpha


class _Editable:
    """Mutable copy of a network's arrays used while applying structural ops."""

    def __init__(self, net: PUNetwork):
        self.w = net.exponents.copy()
        self.wm = net.input_mask.copy()
        self.b = net.coefficients.copy()
        self.bm = net.output_mask.copy()
        self.bias = net.bias.copy()
        self.n_classes = net.n_classes

    @property
    def n_hidden(self) -> int:
        return self.w.shape[0]

    def freeze(self) -> PUNetwork:
        return PUNetwork(self.w, self.wm, self.b, self.bm, self.bias, self.n_classes)


def _add_nodes(net: _Editable, params: EAParams, rng) -> bool:
    room = params.max_hidden - net.n_hidden
    if room <= 0:
        return False
    lo, hi = params.nodes_per_structural_op
    count = min(int(rng.integers(lo, hi + 1)), room)
    k, n_out = net.w.shape[1], net.b.shape[0]
    for _ in range(count):
        wm = _random_input_mask(k, rng)
        w = np.where(wm, rng.uniform(*params.weight_init_range, size=k), 0.0)
        bm = rng.random(n_out) < 0.5
        b = np.where(bm, rng.uniform(*params.coeff_init_range, size=n_out), 0.0)
        net.w = np.vstack([net.w, w])
        net.wm = np.vstack([net.wm, wm])
        net.b = np.hstack([net.b, b[:, None]])
        net.bm = np.hstack([net.bm, bm[:, None]])
    return True


def _delete_nodes(net: _Editable, params: EAParams, rng) -> bool:
    if net.n_hidden <= 1:
        return False
    lo, hi = params.nodes_per_structural_op
    count = min(int(rng.integers(lo, hi + 1)), net.n_hidden - 1)
    keep = np.sort(rng.permutation(net.n_hidden)[count:])
    net.w, net.wm = net.w[keep], net.wm[keep]
    net.b, net.bm = net.b[:, keep], net.bm[:, keep]
    return True


def _add_connection(net: _Editable, params: EAParams, rng) -> bool:
    absent_in = np.flatnonzero(~net.wm)
    absent_out = np.flatnonzero(~net.bm)
    total = absent_in.size + absent_out.size
    if total == 0:
        return False
    r = int(rng.integers(total))
    if r < absent_in.size:
        net.wm.flat[absent_in[r]] = True
        net.w.flat[absent_in[r]] = rng.uniform(*params.weight_init_range)
    else:
        idx = absent_out[r - absent_in.size]
        net.bm.flat[idx] = True
        net.b.flat[idx] = rng.uniform(*params.coeff_init_range)
    return True


def deletable_input_links(input_mask: np.ndarray) -> np.ndarray:
    """Flat indices of input links whose removal leaves every node connected."""
    spare = input_mask & (input_mask.sum(axis=1, keepdims=True) >= 2)
    return np.flatnonzero(spare)


def _delete_connection(net: _Editable, params: EAParams, rng) -> bool:
    del_in = deletable_input_links(net.wm)
    del_out = np.flatnonzero(net.bm)
    total = del_in.size + del_out.size
    if total == 0:
        return False
    r = int(rng.integers(total))
    if r < del_in.size:
        net.wm.flat[del_in[r]] = False
        net.w.flat[del_in[r]] = 0.0
    else:
        idx = del_out[r - del_in.size]
        net.bm.flat[idx] = False
        net.b.flat[idx] = 0.0
    return True


STRUCTURAL_OPS = (_add_nodes, _delete_nodes, _add_connection, _delete_connection)


def structural_mutation(ind: Individual, params: EAParams, rng: np.random.Generator, data,
                        *, fired_out: list | None = None) -> Individual:
    """Node addition, node deletion, connection addition, connection deletion.

    Each operator fires with probability ``T``, in that order; when none fires
    one is picked uniformly.  Infeasible operators are skipped.  Indices of
    the operators that fired are appended to ``fired_out`` when given.
    """
    t = temperature(ind)
    fired = [i for i, u in enumerate(rng.random(len(STRUCTURAL_OPS))) if u < t]
    if not fired:
        fired = [int(rng.integers(len(STRUCTURAL_OPS)))]
    if fired_out is not None:
        fired_out.extend(fired)
    net = _Editable(ind.network)
    changed = False
    for i in fired:
        changed |= STRUCTURAL_OPS[i](net, params, rng)
    if not changed:
        return ind
    return Individual.evaluate(net.freeze(), data)


@dataclass
class GenerationStats:
    attempts: int = 0
    exp_successes: int = 0
    coef_successes: int = 0


def evolve_generation(population: list[Individual], params: EAParams, data, alpha1: float, alpha2: float,
                      seed: int, generation: int) -> tuple[list[Individual], GenerationStats]:
    n = len(population)
    fit = np.array([ind.fitness for ind in population])
    ranked = [population[i] for i in np.argsort(-fit, kind="stable")]
    n_best = max(1, int(math.floor(params.parametric_fraction * n + 0.5)))
    ranked[n - n_best:] = ranked[:n_best]

    stats = GenerationStats()
    nxt = [ranked[0]]
    for slot in range(1, n):
        rng = stream(seed, generation, slot)
        if slot < n_best:
            child, s1, s2 = parametric_mutation(ranked[slot], alpha1, alpha2, rng, data, params)
            stats.attempts += 1
            stats.exp_successes += s1
            stats.coef_successes += s2
        else:
            child = structural_mutation(ranked[slot], params, rng, data)
        nxt.append(child)
    return nxt, stats


@dataclass
class GenerationRecord:
    generation: int
    best_fitness: float
    mean_fitness: float
    best_train_ccr: float
    alpha1: float
    alpha2: float
    success_ratio: float | None


@dataclass
class RunResult:
    best: Individual
    train_ccr: float
    test_ccr: float
    connections: int
    topology: str
    seconds: float
    seed: int
    trace: list[GenerationRecord] = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "seed": self.seed,
            "train_ccr": self.train_ccr,
            "test_ccr": self.test_ccr,
            "connections": self.connections,
            "topology": self.topology,
            "seconds": self.seconds,
        }


def _best(population: list[Individual]) -> Individual:
    return max(population, key=lambda ind: ind.fitness)


def run_ea(config, data, seed: int) -> RunResult:
    """One seeded evolutionary run on a :class:`~evopunn.data.SplitDataset`.

    ``config`` is an :class:`EAParams` or anything carrying one as ``.params``
    (an :class:`~evopunn.grid.ExperimentConfig`).
    """
    params: EAParams = getattr(config, "params", config)
    dataset = getattr(config, "dataset", None)
    if dataset and data.name and dataset.lower() != data.name.lower():
        raise ValueError(f"config is for {dataset!r} but data is {data.name!r}")
    if data.train.features.shape[1] != data.test.features.shape[1]:
        raise ValueError("train and test feature counts differ")
    if data.train.n_classes != data.test.n_classes:
        raise ValueError("train and test class counts differ")
    if len(data.train) == 0 or len(data.test) == 0:
        raise ValueError("empty partition")
    start = time.perf_counter()
    train = data.train
    population = init_population(params, data.n_inputs, data.n_classes, seed, train)
    alpha1, alpha2 = params.alpha1_init, params.alpha2_init
    window = GenerationStats()
    trace = []

    def record(gen: int, ratio):
        best = _best(population)
        trace.append(GenerationRecord(
            gen, best.fitness, float(np.mean([i.fitness for i in population])),
            ccr(best.network, train), alpha1, alpha2, ratio))

    record(0, None)
    for gen in range(1, params.max_generations + 1):
        population, stats = evolve_generation(population, params, train, alpha1, alpha2, seed, gen)
        window.attempts += stats.attempts
        window.exp_successes += stats.exp_successes
        window.coef_successes += stats.coef_successes
        ratio = (stats.exp_successes + stats.coef_successes) / (2 * stats.attempts) if stats.attempts else None
        if gen % params.one_fifth_window == 0 and window.attempts:
            alpha1 = update_variance_one_fifth(window.exp_successes / window.attempts, alpha1,
                                               params.one_fifth_factor)
            alpha2 = update_variance_one_fifth(window.coef_successes / window.attempts, alpha2,
                                               params.one_fifth_factor)
            window = GenerationStats()
        record(gen, ratio)

    best = _best(population)
    return RunResult(
        best=best,
        train_ccr=ccr(best.network, train),
        test_ccr=ccr(best.network, data.test),
        connections=count_connections(best.network),
        topology=best.network.topology,
        seconds=time.perf_counter() - start,
        seed=seed,
        trace=trace,
    )
