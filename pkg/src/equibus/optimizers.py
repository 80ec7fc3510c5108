"""Search procedures over line assignments: online Q-learning, random search,
and a genetic algorithm with order crossover.

All three share :class:`~equibus.mdp.StateEvaluator`, so identical
assignments always get identical objective values.  Budgets are wall-clock
seconds, optionally capped by a number of objective evaluations (the cap makes
runs reproducible independently of machine speed).
"""

from __future__ import annotations

import math
import time
import zlib
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from . import qnet
from .errors import ConfigurationError
from .mdp import (Action, LineAssignment, StateEvaluator, apply_action, enumerate_actions,
                  random_state)
from .territory import Scenario


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent named random stream derived from a single run seed."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


class TrajectoryPoint(NamedTuple):
    seconds: float
    evaluations: int
    value: float


@dataclass
class OptimizerResult:
    best_value: float
    best_assignment: LineAssignment
    trajectory: list[TrajectoryPoint] = field(default_factory=list)
    evaluations: int = 0
    info: dict = field(default_factory=dict)


class _Tracker:
    """Wall-clock/evaluation budget plus best-so-far bookkeeping."""

    def __init__(self, ev: StateEvaluator, budget_seconds: float, max_evals: int | None):
        if not budget_seconds > 0:
            raise ConfigurationError("budget_seconds must be > 0")
        self.ev = ev
        self.budget = budget_seconds
        self.max_evals = max_evals
        self.start = time.perf_counter()
        self.calls = 0
        self.best_value = -math.inf
        self.best_state: LineAssignment | None = None
        self.trajectory: list[TrajectoryPoint] = []

    def exhausted(self) -> bool:
        if self.max_evals is not None and self.calls >= self.max_evals:
            return True
        return time.perf_counter() - self.start >= self.budget

    def evaluate(self, st: LineAssignment) -> float:
        value = self.ev.value(st)
        self.calls += 1
        if value > self.best_value:
            self.best_value, self.best_state = value, st
            self.trajectory.append(
                TrajectoryPoint(time.perf_counter() - self.start, self.calls, value))
        return value

    def result(self, **info) -> OptimizerResult:
        return OptimizerResult(self.best_value, self.best_state, self.trajectory,
                               self.calls, info)


# --------------------------------------------------------------------------- #
# reinforcement learning

def _pick_greedy(q: np.ndarray) -> tuple[int, int]:
    flat = int(np.argmax(q))  # first maximum in stop-major order
    return divmod(flat, q.shape[1])


def _pick_random(mask: np.ndarray, rng: np.random.Generator) -> tuple[int, int]:
    cells = np.flatnonzero(mask)
    return divmod(int(cells[rng.integers(len(cells))]), mask.shape[1])


def _state_input(ev: StateEvaluator, st: LineAssignment) -> qnet.GraphInput:
    return qnet.build_features(ev.scenario, st, ev.bus_lines(st))


def default_config(s: Scenario, **overrides) -> qnet.QNetConfig:
    return qnet.QNetConfig(k=s.num_lines, **overrides)


def train_rl(s: Scenario | Sequence[Scenario], q: float, budget_seconds: float,
             stall_limit: int = 5, qnet_params: qnet.QNetworkParams | None = None,
             seed: int = 0, *, max_evals: int | None = None, threads: int = 1,
             config: qnet.QNetConfig | None = None,
             on_step: Callable[[dict], None] | None = None
             ) -> tuple[OptimizerResult, qnet.QNetworkParams]:
    """Online one-step Q-learning over episodes of stop moves.

    Each episode starts from a random partition and tries epsilon-greedy
    moves.  A move that improves the episode's best value is kept and trains
    the network with one semi-gradient step; any other move is rolled back and
    masked for the rest of the visit to that state, so the episode's graph
    only changes on improvement.  The episode ends after ``stall_limit``
    consecutive rejected moves.  Given several scenarios, episodes cycle
    through them and the result reports the first one.
    """
    scenarios = [s] if isinstance(s, Scenario) else list(s)
    if stall_limit < 1:
        raise ConfigurationError("stall_limit must be >= 1")
    evaluators = [StateEvaluator(sc, q, threads=threads) for sc in scenarios]
    tracker = _Tracker(evaluators[0], budget_seconds, max_evals)
    params = qnet_params.copy() if qnet_params is not None else \
        qnet.QNetworkParams.init(config or default_config(scenarios[0]), substream(seed, "params"))
    cfg = params.config
    init_rng = substream(seed, "init")
    policy_rng = substream(seed, "policy")
    steps = updates = episodes = 0

    while True:
        ev = evaluators[episodes % len(evaluators)]
        primary = ev is evaluators[0]
        st = random_state(ev.scenario, init_rng)
        value = tracker.evaluate(st) if primary else ev.value(st)
        episodes += 1
        inp = _state_input(ev, st)
        mask = inp.admissible()
        q_values = None  # unchanged while moves are rejected
        stall = 0
        while stall < stall_limit and mask.any() and not tracker.exhausted():
            if policy_rng.random() < cfg.epsilon(steps):
                i, line = _pick_random(mask, policy_rng)
            else:
                if q_values is None:
                    q_values = qnet.q_matrix(params, inp)
                i, line = _pick_greedy(np.where(mask, q_values, -np.inf))
            steps += 1
            action = Action(st.stop_ids[i], line + 1)
            nxt = apply_action(st, action)
            nxt_value = tracker.evaluate(nxt) if primary else ev.value(nxt)
            if nxt_value > value:
                nxt_inp = _state_input(ev, nxt)
                tr = qnet.Transition(inp, action, nxt_value - value, nxt_inp)
                loss, grads = qnet.loss_and_grads(params, tr, cfg.gamma)
                params = qnet.sgd_step(params, qnet.clip_grads(grads, cfg.grad_clip),
                                       cfg.learning_rate)
                updates += 1
                if on_step is not None:
                    on_step({"episode": episodes, "step": steps, "loss": loss,
                             "value": nxt_value})
                st, value, inp = nxt, nxt_value, nxt_inp
                mask = inp.admissible()
                q_values = None
                stall = 0
            else:
                mask[i, line] = False
                stall += 1
        if tracker.exhausted():
            break
    return tracker.result(episodes=episodes, steps=steps, updates=updates), params


def test_policy(s: Scenario, q: float, budget_seconds: float,
                qnet_params: qnet.QNetworkParams, seed: int = 0, *,
                max_evals: int | None = None, threads: int = 1,
                initial: LineAssignment | None = None) -> OptimizerResult:
    """Greedy rollout of a trained network, without learning.

    The greedy move is taken when it improves the objective; otherwise the
    current state is treated as a local optimum and a uniformly random
    admissible move is applied instead.
    """
    ev = StateEvaluator(s, q, threads=threads)
    tracker = _Tracker(ev, budget_seconds, max_evals)
    rng = substream(seed, "policy")
    st = initial if initial is not None else random_state(s, substream(seed, "init"))
    value = tracker.evaluate(st)
    kicks = 0
    while not tracker.exhausted():
        inp = _state_input(ev, st)
        mask = inp.admissible()
        if not mask.any():
            break
        i, line = _pick_greedy(qnet.q_matrix(qnet_params, inp))
        nxt = apply_action(st, Action(st.stop_ids[i], line + 1))
        nxt_value = tracker.evaluate(nxt)
        if nxt_value > value:
            st, value = nxt, nxt_value
            continue
        if tracker.exhausted():
            break
        i, line = _pick_random(mask, rng)
        st = apply_action(st, Action(st.stop_ids[i], line + 1))
        value = tracker.evaluate(st)
        kicks += 1
    return tracker.result(kicks=kicks)


# --------------------------------------------------------------------------- #
# random search

def random_search(s: Scenario, q: float, budget_seconds: float, seed: int = 0, *,
                  max_evals: int | None = None, threads: int = 1) -> OptimizerResult:
    """Best of independently drawn random partitions (at least one draw)."""
    ev = StateEvaluator(s, q, threads=threads, cache_size=64)
    tracker = _Tracker(ev, budget_seconds, max_evals)
    rng = substream(seed, "random-search")
    while True:
        tracker.evaluate(random_state(s, rng))
        if tracker.exhausted():
            break
    return tracker.result()


# --------------------------------------------------------------------------- #
# genetic algorithm

@dataclass(frozen=True)
class GaConfig:
    n_pop: int = 50
    n_par: int = 10
    p_mut: float = 0.05
    tournament_size: int = 3

    def __post_init__(self):
        if not 2 <= self.n_par <= self.n_pop:
            raise ConfigurationError("need 2 <= n_par <= n_pop")
        if not 0.0 <= self.p_mut <= 1.0:
            raise ConfigurationError("p_mut must lie in [0, 1]")
        if self.tournament_size < 1:
            raise ConfigurationError("tournament_size must be >= 1")


@dataclass(frozen=True)
class Genome:
    """A permutation of all candidate stops cut into k consecutive segments.

    ``cuts`` holds the k-1 segment boundaries; segment ``i`` is line ``i+1``.
    """

    perm: tuple[int, ...]
    cuts: tuple[int, ...]

    def segments(self) -> list[tuple[int, ...]]:
        bounds = (0,) + self.cuts + (len(self.perm),)
        return [self.perm[a:b] for a, b in zip(bounds, bounds[1:])]

    def decode(self, k: int) -> LineAssignment:
        return LineAssignment.from_lines(repair(self, k).segments())


def ox1(p1: Sequence, p2: Sequence, i: int, j: int) -> list:
    """Order crossover: keep ``p1[i..j]`` (inclusive) in place, fill the other
    slots from position ``j+1`` onward, cyclically, with the genes of ``p2`` in
    its cyclic order from ``j+1``, skipping those already present."""
    n = len(p1)
    child = [None] * n
    child[i:j + 1] = p1[i:j + 1]
    kept = set(p1[i:j + 1])
    fill = [p2[(j + 1 + t) % n] for t in range(n) if p2[(j + 1 + t) % n] not in kept]
    slots = [(j + 1 + t) % n for t in range(n - (j - i + 1))]
    for pos, gene in zip(slots, fill):
        child[pos] = gene
    return child


def repair_lengths(lengths: Sequence[int]) -> list[int]:
    """Give every empty segment one stop, taken from the larger of the nearest
    segments on either side that can spare one (ties to the right).

    Intermediate singleton segments pass a stop along, so their size is kept.
    """
    lengths = list(lengths)
    if sum(lengths) < len(lengths):
        raise ConfigurationError("fewer stops than segments")
    while 0 in lengths:
        j = lengths.index(0)
        left = next((d for d in range(j - 1, -1, -1) if lengths[d] >= 2), None)
        right = next((d for d in range(j + 1, len(lengths)) if lengths[d] >= 2), None)
        if right is None or (left is not None and lengths[left] > lengths[right]):
            donor = left
        else:
            donor = right
        lengths[donor] -= 1
        lengths[j] += 1
    return lengths


def repair(g: Genome, k: int) -> Genome:
    n = len(g.perm)
    cuts = sorted(min(max(int(c), 0), n) for c in g.cuts)
    if len(cuts) != k - 1:
        raise ConfigurationError(f"genome has {len(cuts)} cuts, expected {k - 1}")
    bounds = [0] + cuts + [n]
    lengths = repair_lengths([b - a for a, b in zip(bounds, bounds[1:])])
    return Genome(tuple(g.perm), tuple(np.cumsum(lengths)[:-1].tolist()))


def mutate(g: Genome, p_mut: float, rng: np.random.Generator) -> Genome:
    """Swap each position with a random one with probability ``p_mut``; shift
    each cut by +-1 with the same probability."""
    perm = list(g.perm)
    n = len(perm)
    for i in range(n):
        if rng.random() < p_mut:
            j = int(rng.integers(n))
            perm[i], perm[j] = perm[j], perm[i]
    cuts = list(g.cuts)
    for c in range(len(cuts)):
        if rng.random() < p_mut:
            cuts[c] += 1 if rng.random() < 0.5 else -1
    return Genome(tuple(perm), tuple(cuts))


def encode(ev: StateEvaluator, st: LineAssignment) -> Genome:
    """Genome of the sorted lines of ``st`` laid end to end."""
    lines = [ev.line_order(ln) for ln in st.lines()]
    perm = tuple(b for ln in lines for b in ln)
    return Genome(perm, tuple(np.cumsum([len(ln) for ln in lines])[:-1].tolist()))


def crossover(p1: Genome, p2: Genome, rng: np.random.Generator) -> Genome:
    n = len(p1.perm)
    i, j = sorted(int(x) for x in rng.integers(n, size=2))
    cuts = p1.cuts if rng.random() < 0.5 else p2.cuts
    return Genome(tuple(ox1(p1.perm, p2.perm, i, j)), cuts)


def genetic_search(s: Scenario, q: float, budget_seconds: float, cfg: GaConfig | None = None,
                   seed: int = 0, *, max_evals: int | None = None,
                   threads: int = 1) -> OptimizerResult:
    """Generational GA: tournament parents, OX1 children, mutation, line re-sort."""
    cfg = cfg or GaConfig()
    k = s.num_lines
    ev = StateEvaluator(s, q, threads=threads, cache_size=4 * cfg.n_pop)
    tracker = _Tracker(ev, budget_seconds, max_evals)
    rng = substream(seed, "ga")

    def individual(st):
        return encode(ev, st), tracker.evaluate(st)

    pop = []
    for _ in range(cfg.n_pop):
        pop.append(individual(random_state(s, rng)))
        if tracker.exhausted():
            break
    generations = 0
    while not tracker.exhausted():
        parents = []
        for _ in range(cfg.n_par):
            size = min(cfg.tournament_size, len(pop))
            contenders = rng.choice(len(pop), size=size, replace=False)
            parents.append(pop[max(contenders, key=lambda c: (pop[c][1], -c))])
        children = []
        while len(children) < cfg.n_pop and not tracker.exhausted():
            a, b = rng.choice(len(parents), size=2, replace=False)
            child = mutate(crossover(parents[a][0], parents[b][0], rng), cfg.p_mut, rng)
            children.append(individual(child.decode(k)))
        pop = children or pop
        generations += 1
    return tracker.result(generations=generations)
test_policy.__test__ = False  # keep pytest from collecting it
