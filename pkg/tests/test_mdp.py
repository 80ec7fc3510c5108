import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from equibus.errors import InadmissibleActionError, InvalidAssignmentError
from equibus.mdp import (Action, LineAssignment, StateEvaluator, all_states, apply_action,
                         enumerate_actions, random_state, reward, sort_line)
from equibus.territory import (BUS_CANDIDATE, Centroid, Point, Poi, Scenario, Stop,
                               city_scenario, generate_grid_scenario)
from oracles import conditioned_line_size_law, shortest_hamiltonian_path


def four_stop_scenario(seed=0):
    return generate_grid_scenario(2, 2, 1.0, [], [1.0, 2.0, 0.5, 1.0], seed, num_lines=2)


def test_assignment_validation():
    with pytest.raises(InvalidAssignmentError):
        LineAssignment((0, 1, 2), (1, 1, 1), 2)  # line 2 empty
    with pytest.raises(InvalidAssignmentError):
        LineAssignment((0, 2, 1), (1, 2, 1), 2)  # ids not ascending
    with pytest.raises(InvalidAssignmentError):
        LineAssignment((0, 1), (1, 3), 2)
    with pytest.raises(InvalidAssignmentError):
        LineAssignment.from_lines([[0, 1], [1, 2]])
    st_ = LineAssignment.from_lines([[2, 0], [1]])
    assert st_.labels == (1, 2, 1) and st_.lines() == ((0, 2), (1,)) and st_.sizes() == (2, 1)


def test_actions_skip_singletons_and_own_line():
    st_ = LineAssignment((0, 1, 2, 3), (1, 2, 2, 2), 2)
    acts = enumerate_actions(st_)
    assert acts == [Action(1, 1), Action(2, 1), Action(3, 1)]
    assert acts == sorted(acts)


@pytest.mark.parametrize("action", [Action(0, 2), Action(1, 2), Action(1, 3), Action(9, 1)])
def test_inadmissible_actions(action):
    st_ = LineAssignment((0, 1, 2, 3), (1, 2, 2, 2), 2)
    with pytest.raises(InadmissibleActionError):
        apply_action(st_, action)


def test_state_space_of_four_stops_two_lines():
    states = all_states(four_stop_scenario())
    assert len(states) == 14
    unlabelled = {frozenset(frozenset(ln) for ln in x.lines()) for x in states}
    assert len(unlabelled) == 7


def test_random_state_is_conditioned_uniform():
    s = four_stop_scenario()
    rng = np.random.default_rng(0)
    n = 14000
    counts = Counter(random_state(s, rng).labels for _ in range(n))
    assert len(counts) == 14
    # each of the 14 states has probability 1/14; 5 sigma band
    sd = math.sqrt(n * (1 / 14) * (13 / 14))
    assert all(abs(c - n / 14) < 5 * sd for c in counts.values())
    law = conditioned_line_size_law(4, 2)
    assert law == pytest.approx({1: 4 / 14, 2: 6 / 14, 3: 4 / 14})


def test_random_state_reproducible():
    s = city_scenario(6, 6, 0, metro_lines=2, num_lines=3)
    assert random_state(s, 5) == random_state(s, 5)
    assert random_state(s, 5) != random_state(s, 6)


def test_sort_line_matches_exact_path_on_small_sets():
    rng = np.random.default_rng(3)
    for _ in range(30):
        n = int(rng.integers(1, 7))
        locs = {i: Point(*rng.uniform(0, 5, 2)) for i in range(n)}
        order = sort_line(locs, locs)
        assert sorted(order) == list(range(n))
        length = sum(math.hypot(locs[a].x - locs[b].x, locs[a].y - locs[b].y)
                     for a, b in zip(order, order[1:]))
        assert length >= shortest_hamiltonian_path(list(locs.values())) - 1e-9


def test_sort_line_collinear():
    locs = {7: Point(2, 0), 3: Point(0, 0), 5: Point(1, 0), 9: Point(3, 0)}
    assert sort_line(locs, locs) == [3, 5, 7, 9]


def test_evaluator_caches_and_counts():
    s = city_scenario(4, 4, 0, metro_lines=2, num_lines=2)
    ev = StateEvaluator(s, 20)
    st_ = random_state(s, 1)
    v = ev.value(st_)
    assert ev.value(st_) == v and ev.evaluations == 1
    fresh = StateEvaluator(s, 20, threads=3)
    assert fresh.value(st_) == v


def test_evaluator_rejects_foreign_assignment():
    s = city_scenario(4, 4, 0, metro_lines=2, num_lines=2)
    with pytest.raises(InvalidAssignmentError):
        StateEvaluator(s).value(LineAssignment((0, 1), (1, 2), 2))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), steps=st.integers(1, 15))
def test_mdp_laws(seed, steps):
    s = city_scenario(4, 3, 0, metro_lines=2, num_lines=3)
    ev = StateEvaluator(s, 20)
    rng = np.random.default_rng(seed)
    st0 = random_state(s, rng)
    cur, total = st0, 0.0
    for _ in range(steps):
        a = enumerate_actions(cur)[int(rng.integers(len(enumerate_actions(cur))))]
        nxt = apply_action(cur, a)
        assert nxt == apply_action(cur, a)
        assert nxt.stop_ids == cur.stop_ids and all(x > 0 for x in nxt.sizes())
        assert nxt.line_of(a.stop) == a.target_line
        total += reward(s, cur, a, 20, evaluator=ev)
        cur = nxt
    assert abs(total - (ev.value(cur) - ev.value(st0))) <= 1e-9


def test_frozen_mdp_when_one_stop_per_line():
    s = generate_grid_scenario(2, 1, 1.0, [], [1.0, 1.0], 0, num_lines=2)
    assert enumerate_actions(random_state(s, 0)) == []
