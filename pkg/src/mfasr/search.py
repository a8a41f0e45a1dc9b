"""Latency-constrained evolutionary search over the genotype space,
with an exhaustive enumeration oracle.

Fitness is the mean luma PSNR of the sliced sub-generator over a
validation set; no candidate is ever trained or calibrated during
search. Latency comes from a lookup table and acts as a hard
feasibility constraint, not a penalty.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import engine, latency
from .dataio import psnr_y
from .errors import ConfigError, NoFeasibleCandidate, PipelineError
from .graph import Genotype, ModelFamily
from .rng import Rng
from .weights import WeightStore, slice_for_genotype


@dataclass(frozen=True)
class SearchConfig:
    latency_budget_us: float
    population: int = 32
    generations: int = 40
    mutation_rate: float = 0.1
    crossover: str = "uniform"
    elite_k: int = 8
    tournament: int = 2
    seed: int = 0

    def __post_init__(self):
        problems = []
        if self.population < 2:
            problems.append(f"population must be >= 2, got {self.population}")
        if not 0 <= self.elite_k < self.population:
            problems.append(f"elite_k must be in [0, population), got {self.elite_k}")
        if not 0.0 < self.mutation_rate < 1.0:
            problems.append(f"mutation_rate must be in (0, 1), got {self.mutation_rate}")
        if self.crossover != "uniform":
            problems.append(f"unsupported crossover {self.crossover!r}")
        if self.tournament < 1:
            problems.append(f"tournament must be >= 1, got {self.tournament}")
        if problems:
            raise ConfigError("; ".join(problems))


@dataclass(frozen=True)
class Candidate:
    genotype: Genotype
    fitness: float
    latency_us: float
    feasible: bool


class FitnessEvaluator:
    """Memoized PSNR-Y fitness of sliced sub-generators.

    ``evals`` counts actual network evaluations, so tests can verify
    that memoization short-circuits repeated genotypes.
    """

    def __init__(self, family: ModelFamily, super_store: WeightStore, valset,
                 border: int | None = None):
        if super_store.genotype is None:
            raise PipelineError("shared store carries no genotype tag")
        self.family = family
        self.store = super_store
        self.border = family.scale if border is None else border
        self.pairs = list(valset)
        if not self.pairs:
            raise PipelineError("validation set is empty")
        shapes = {p[0].shape for p in self.pairs}
        self._batched = len(shapes) == 1
        if self._batched:
            self._lr = np.stack([p[0] for p in self.pairs]).astype(np.float32)
        self.cache: dict[Genotype, float] = {}
        self.evals = 0

    def __call__(self, genotype: Genotype) -> float:
        if genotype in self.cache:
            return self.cache[genotype]
        sub = slice_for_genotype(self.store, self.store.genotype, genotype,
                                 self.family.build)
        graph = self.family.build(genotype)
        if self._batched:
            sr = engine.predict(graph, sub, self._lr)
            srs = [sr[i] for i in range(len(self.pairs))]
        else:
            srs = [engine.predict(graph, sub, p[0][None])[0] for p in self.pairs]
        self.evals += 1
        score = float(np.mean([
            psnr_y(np.clip(s, 0.0, 1.0), p[1], border=self.border)
            for s, p in zip(srs, self.pairs)]))
        self.cache[genotype] = score
        return score


def fitness(genotype: Genotype, super_store: WeightStore, valset,
            scale: int = 4, family: ModelFamily | None = None,
            border: int | None = None) -> float:
    """One-off fitness evaluation (see FitnessEvaluator for the cached form)."""
    family = family or ModelFamily(scale=scale)
    return FitnessEvaluator(family, super_store, valset, border)(genotype)


class _LatencyMemo:
    def __init__(self, family, lut, input_hw):
        self.family = family
        self.lut = lut
        self.input_hw = tuple(input_hw)
        self.cache: dict[Genotype, float] = {}

    def __call__(self, genotype: Genotype) -> float:
        if genotype not in self.cache:
            self.cache[genotype] = latency.predict(
                self.family.build(genotype), self.lut, self.input_hw)
        return self.cache[genotype]


def _sample_genotype(choices, rng: Rng) -> Genotype:
    return Genotype(tuple(rng.choice(choices) for _ in range(8)))


def _clamp_downward(genotype: Genotype, choices, lat, budget) -> Genotype | None:
    """Lower genes one choice-step at a time, round-robin, until feasible."""
    ladder = sorted(choices)
    genes = list(genotype.genes)
    for _ in range(len(ladder) * len(genes)):
        if lat(Genotype(tuple(genes))) <= budget:
            return Genotype(tuple(genes))
        for i in range(len(genes)):
            pos = ladder.index(genes[i])
            if pos > 0:
                genes[i] = ladder[pos - 1]
                break
        else:
            break
    g = Genotype(tuple(genes))
    return g if lat(g) <= budget else None


def _feasible_universe(family, lat, budget):
    return [g for g in family.genotypes() if lat(g) <= budget]


def evolutionary_search(cfg: SearchConfig, super_store: WeightStore, valset,
                        lut: latency.LatencyTable, input_hw,
                        family: ModelFamily | None = None,
                        evaluator: FitnessEvaluator | None = None):
    """Run the genetic search; returns (best Candidate, history).

    History has one record per generation: best/mean fitness over the
    population and the best-ever genotype so far.
    """
    family = family or ModelFamily()
    fit = evaluator or FitnessEvaluator(family, super_store, valset)
    lat = _LatencyMemo(family, lut, input_hw)
    rng = Rng(cfg.seed)
    budget = cfg.latency_budget_us
    choices = tuple(sorted(family.choices))

    # Rejection-sample a feasible initial population; fall back to a full
    # feasibility scan only if sampling keeps missing.
    population: list[Genotype] = []
    tries = 0
    init_rng = rng.split(0)
    while len(population) < cfg.population and tries < 100 * cfg.population:
        g = _sample_genotype(choices, init_rng)
        tries += 1
        if lat(g) <= budget:
            population.append(g)
    if len(population) < cfg.population:
        universe = _feasible_universe(family, lat, budget)
        if not universe:
            raise NoFeasibleCandidate(
                f"no genotype satisfies the {budget} us budget")
        while len(population) < cfg.population:
            population.append(universe[len(population) % len(universe)])

    def ranked(pop):
        return sorted(pop, key=lambda g: (-fit(g), g.genes))

    def pick_parent(pop, gen_rng):
        entrants = [pop[int(gen_rng.integers(0, len(pop)))]
                    for _ in range(cfg.tournament)]
        return min(entrants, key=lambda g: (-fit(g), g.genes))

    history = []
    best: Genotype | None = None
    for gen in range(cfg.generations):
        gen_rng = rng.split(gen + 1)
        order = ranked(population)
        if best is None or (fit(order[0]), ) > (fit(best), ):
            best = order[0]
        history.append({
            "generation": gen,
            "best_fitness": fit(best),
            "pop_best": fit(order[0]),
            "pop_mean": float(np.mean([fit(g) for g in population])),
            "best_genotype": list(best.genes),
        })
        next_pop = order[:cfg.elite_k]
        seen = set(next_pop)
        while len(next_pop) < cfg.population:
            child = None
            attempt = None
            # duplicate offspring only re-visit cached fitness, so re-roll
            # clones while the attempt budget lasts
            for _ in range(100):
                p1 = pick_parent(population, gen_rng)
                p2 = pick_parent(population, gen_rng)
                genes = []
                for a, b in zip(p1.genes, p2.genes):
                    g = a if gen_rng.integers(0, 2) == 0 else b
                    if float(gen_rng.uniform()) < cfg.mutation_rate:
                        g = gen_rng.choice(choices)
                    genes.append(g)
                attempt = Genotype(tuple(genes))
                if lat(attempt) <= budget and attempt not in seen:
                    child = attempt
                    break
            if child is None and lat(attempt) <= budget:
                child = attempt
            if child is None:
                child = _clamp_downward(attempt, choices, lat, budget)
            if child is None:
                child = order[0]  # feasible by construction
            next_pop.append(child)
            seen.add(child)
        population = next_pop
    order = ranked(population)
    if best is None or (fit(order[0]), ) > (fit(best), ):
        best = order[0]
    return Candidate(best, fit(best), lat(best), True), history


def exhaustive_search(super_store: WeightStore, valset, lut: latency.LatencyTable,
                      budget: float, input_hw,
                      family: ModelFamily | None = None,
                      evaluator: FitnessEvaluator | None = None,
                      on_candidate=None) -> Candidate:
    """Enumerate the whole space; argmax fitness under the budget.

    Ties go to the lexicographically smallest genotype (the enumeration
    order guarantees it). ``on_candidate`` is called with every visited
    (genotype, latency_us, feasible) triple.
    """
    family = family or ModelFamily()
    fit = evaluator or FitnessEvaluator(family, super_store, valset)
    lat = _LatencyMemo(family, lut, input_hw)
    best: Candidate | None = None
    for g in family.genotypes():
        us = lat(g)
        feasible = us <= budget
        if on_candidate is not None:
            on_candidate(g, us, feasible)
        if not feasible:
            continue
        score = fit(g)
        if best is None or score > best.fitness:
            best = Candidate(g, score, us, True)
    if best is None:
        raise NoFeasibleCandidate(f"no genotype satisfies the {budget} us budget")
    return best
