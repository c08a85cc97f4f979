import json

import numpy as np
import pytest

from qmotif.dsl import RELEVANT, Program, Unitary, cycle, mask, oracle, pivot
from qmotif.evolve import (
    TIERS, Candidate, ConfigError, ConfigurationSpace, HyperParams, Mutation, Search,
    chop_and_join, explore_probability, load_space, make_children, mutate_dropout,
    mutate_insert, mutate_property, run_search, sample_program, select, solves, stopping_condition,
)
from qmotif.fitness import Budget, FitnessReport
from qmotif.tasks import get_task

STEP = Budget.step_capped()


def small_hp(**kw):
    base = dict(init_size=24, n_batch=2, max_generations=4, rng_seed=3, budget=STEP)
    base.update(kw)
    return HyperParams(**base)


def report(f, min_pair=None, oracle_calls=1):
    return FitnessReport(raw_per_q={2: f}, f_raw=f, penalties={}, f_total=f,
                         trained_params={2: []}, chosen_r={2: 1},
                         pair_scores={2: [f if min_pair is None else min_pair]}, oracle_calls=oracle_calls)


# -- configuration spaces ---------------------------------------------------


def test_space_validation():
    d = load_space("qft", "small").to_dict()
    with pytest.raises(ConfigError):
        ConfigurationSpace.from_dict({**d, "kind_probs": {"cycle": 0.5, "pivot": 0.6}})
    with pytest.raises(ConfigError):
        ConfigurationSpace.from_dict({**d, "kind_probs": {"cycle": -0.5, "pivot": 1.5}})
    with pytest.raises(ConfigError):
        ConfigurationSpace.from_dict({**d, "pivot_patterns": []})
    with pytest.raises(ConfigError):
        ConfigurationSpace.from_dict({**d, "pivot_patterns": ["1**"]})
    with pytest.raises(ConfigError):
        load_space("qft", "gigantic")


@pytest.mark.parametrize("task", ["qft", "deutsch_jozsa", "grover"])
def test_tiers_grow(task):
    counts = [load_space(task, t).primitive_count() for t in TIERS]
    assert counts == sorted(set(counts))


def test_primitive_count_by_hand():
    cs = load_space("deutsch_jozsa", "small")
    # cycle: 3 unitaries; pivot: 3 unitaries x 2 patterns; mask: 2; unmask: 1; oracle: 1
    assert cs.primitive_count() == 3 + 6 + 2 + 1 + 1


def test_space_roundtrip():
    for t in TIERS:
        cs = load_space("grover", t)
        assert ConfigurationSpace.from_dict(json.loads(json.dumps(cs.to_dict()))) == cs


def allowed(cs, m):
    if cs.kind_probs.get(m.kind, 0) <= 0:
        return False
    return all(getattr(m, name) in cs.allowed(m.kind, name) for name in RELEVANT[m.kind])


def test_samples_respect_space():
    rng = np.random.default_rng(0)
    for t in TIERS:
        cs = load_space("grover", t)
        for _ in range(200):
            p = sample_program(cs, 3, rng)
            assert all(allowed(cs, m) for m in p.body)
    with pytest.raises(ConfigError):
        sample_program(cs, 0, rng)


# -- mutations --------------------------------------------------------------


CS = load_space("grover", "medium")
P1 = Program((oracle(), cycle(Unitary.H), pivot(Unitary.X, "1*")))
P2 = Program((cycle(Unitary.X), mask("1*")))


def test_mutate_property_changes_one_motif():
    rng = np.random.default_rng(1)
    for _ in range(200):
        child = mutate_property(P1, CS, rng)
        assert len(child) == len(P1)
        diffs = sum(a != b for a, b in zip(child.body, P1.body))
        assert diffs <= 1
        assert all(allowed(CS, m) or m in P1.body for m in child.body)


def test_mutate_insert_and_dropout():
    rng = np.random.default_rng(2)
    for _ in range(50):
        ins = mutate_insert(P1, CS, rng)
        assert len(ins) == len(P1) + 1
        drop = mutate_dropout(P1, rng)
        assert len(drop) == len(P1) - 1
        assert all(m in P1.body for m in drop.body)
    single = Program((cycle(Unitary.H),))
    assert mutate_dropout(single, rng) == single


def test_chop_and_join_swaps_heads():
    rng = np.random.default_rng(3)
    for _ in range(100):
        a, b = chop_and_join(P1, P2, rng)
        assert len(a) + len(b) == len(P1) + len(P2)
        assert len(a) and len(b)
        # a = head of P2 + tail of P1, b = head of P1 + tail of P2
        assert any(a.body == P2.body[:k] + P1.body[len(P1) - (len(a) - k):]
                   for k in range(len(P2) + 1) if 0 <= len(a) - k <= len(P1))


def test_make_children_shape():
    kids = make_children(P1, P2, CS, np.random.default_rng(4))
    assert len(kids) == 8
    kinds = [k for _, k, _ in kids]
    assert kinds.count(Mutation.CHOP_JOIN) == 2
    assert {Mutation.PROPERTY, Mutation.INSERT, Mutation.DROPOUT} <= set(kinds)
    for _, kind, who in kids:
        assert len(who) == (2 if kind is Mutation.CHOP_JOIN else 1)


# -- selection and stopping -------------------------------------------------


def test_explore_schedule():
    hp = HyperParams()
    assert explore_probability(0, hp) == pytest.approx(hp.explore_ceiling)
    assert explore_probability(hp.explore_period / 2, hp) == pytest.approx(hp.explore_floor)
    assert explore_probability(hp.explore_period, hp) == pytest.approx(hp.explore_ceiling)
    for t in range(0, 400, 7):
        assert hp.explore_floor - 1e-12 <= explore_probability(t, hp) <= hp.explore_ceiling + 1e-12


def make_pop(values):
    return [Candidate(i, P1, report(v)) for i, v in enumerate(values)]


def test_tournament_full_pressure_picks_top_two():
    pop = make_pop([0.1, 0.9, 0.5, 0.95, 0.2])
    a, b = select(pop, 0.0, 1.0, np.random.default_rng(0))
    assert (a.id, b.id) == (3, 1)


def test_tournament_ties_break_on_id():
    pop = make_pop([0.5, 0.7, 0.7, 0.7])
    a, b = select(pop, 0.0, 1.0, np.random.default_rng(0))
    assert (a.id, b.id) == (1, 2)


def test_random_selection_gives_distinct_parents():
    pop = make_pop([0.1] * 10)
    rng = np.random.default_rng(5)
    for _ in range(50):
        a, b = select(pop, 1.0, 0.05, rng)
        assert a.id != b.id


def test_solves_and_stopping():
    ok = Candidate(0, P1, report(0.995))
    low = Candidate(1, P1, report(0.995, min_pair=0.5))
    greedy = Candidate(2, P1, report(0.995, oracle_calls=2))
    assert solves(ok, 0.99, True)
    assert not solves(low, 0.99, True)
    assert not solves(greedy, 0.99, True) and solves(greedy, 0.99, False)
    hp = HyperParams(max_runtime=0)
    assert stopping_condition([low], hp, 0.0, 0.99, True)
    assert not stopping_condition([low], HyperParams(), 1e9, 0.99, True)


def test_hyperparam_validation():
    with pytest.raises(ConfigError):
        HyperParams(tournament_pressure=0)
    with pytest.raises(ConfigError):
        HyperParams(explore_floor=0.8, explore_ceiling=0.2)
    with pytest.raises(ConfigError):
        HyperParams.from_dict({"no_such_field": 1})
    hp = small_hp()
    assert HyperParams.from_dict(json.loads(json.dumps(hp.to_dict()))) == hp


def test_candidate_parent_arity():
    with pytest.raises(ValueError):
        Candidate(3, P1, None, (1,), Mutation.CHOP_JOIN)
    with pytest.raises(ValueError):
        Candidate(3, P1, None, (1, 2), Mutation.INSERT)
    c = Candidate(3, P1, report(0.5), (1, 2), Mutation.CHOP_JOIN, 4)
    assert Candidate.from_dict(json.loads(json.dumps(c.to_dict()))).to_dict() == c.to_dict()


# -- whole searches ---------------------------------------------------------


DJ = get_task("dj")
DJ_SMALL = load_space("deutsch_jozsa", "small")


def pop_dump(res):
    return [c.to_dict() for c in res.population]


@pytest.fixture(scope="module")
def dj_run():
    return run_search(DJ, DJ_SMALL, small_hp(stop_threshold=1.1))


def test_population_size_identity(dj_run):
    hp = small_hp()
    assert dj_run.generations == hp.max_generations
    assert len(dj_run.population) == hp.init_size + 8 * hp.n_batch * dj_run.generations
    assert dj_run.evaluations == len(dj_run.population)
    assert not dj_run.success


def test_lineage_is_a_dag(dj_run):
    pop = dj_run.population
    assert [c.id for c in pop] == list(range(len(pop)))
    for c in pop:
        assert all(p < c.id for p in c.parents)
        assert all(pop[p].generation < c.generation for p in c.parents)
        if c.mutation is Mutation.INIT:
            assert c.generation == 0 and c.parents == ()


def test_seeded_runs_are_identical(dj_run):
    again = run_search(DJ, DJ_SMALL, small_hp(stop_threshold=1.1))
    assert pop_dump(again) == pop_dump(dj_run)


def test_checkpoint_resume_is_bit_exact(dj_run):
    first = Search(DJ, DJ_SMALL, small_hp(stop_threshold=1.1, max_generations=2))
    first.run()
    blob = json.dumps(first.checkpoint())
    resumed = Search.from_checkpoint(json.loads(blob), max_generations=4)
    res = resumed.run()
    assert json.dumps(pop_dump(res)) == json.dumps(pop_dump(dj_run))


def test_checkpoint_schema_checked():
    with pytest.raises(ConfigError):
        Search.from_checkpoint({"schema": "other"})


def test_zero_runtime_keeps_generation_zero():
    res = run_search(DJ, DJ_SMALL, small_hp(max_runtime=0, max_generations=None))
    assert res.generations == 0 and len(res.population) == 24
    assert all(c.generation == 0 for c in res.population)


def test_memoised_reports_match_fresh_evaluation(dj_run):
    from qmotif.fitness import evaluate
    seen = {}
    for c in dj_run.population:
        text = str(c.program)
        if text in seen:
            assert c.report is seen[text]
        seen[text] = c.report
    c = dj_run.population[-1]
    assert evaluate(c.program, DJ.training_set(), budget=STEP).to_dict() == c.report.to_dict()


def test_parallel_evaluation_matches_serial(dj_run):
    par = run_search(DJ, DJ_SMALL, small_hp(stop_threshold=1.1, jobs=2))
    assert pop_dump(par) == pop_dump(dj_run)


def test_sampling_ignores_kind_order_in_source():
    d = DJ_SMALL.to_dict()
    flipped = {**d, "kind_probs": dict(reversed(list(d["kind_probs"].items())))}
    cs = ConfigurationSpace.from_dict(flipped)
    a = [sample_program(DJ_SMALL, 3, np.random.default_rng(9)) for _ in range(5)]
    b = [sample_program(cs, 3, np.random.default_rng(9)) for _ in range(5)]
    assert a == b
