"""Better-reply dynamics on identical-interest games."""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field

from .games import PolytensorGame, VerifyOptions, nash_regret
from .numerics import ZERO, Q

POLICIES = ("first-improving", "best-improving", "round-robin")


@dataclass(frozen=True)
class DynamicsConfig:
    policy: str = "first-improving"
    max_steps: int = 1_000_000
    threshold: object = ZERO

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy {self.policy!r}")
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")
        object.__setattr__(self, "threshold", Q(self.threshold))
        if self.threshold < 0:
            raise ValueError("threshold must be nonnegative")


@dataclass(frozen=True)
class Step:
    player: int
    old: int
    new: int
    before: object
    after: object


@dataclass
class Trace:
    initial: tuple
    steps: list = field(default_factory=list)
    status: str = "budget-exhausted"
    final: tuple = ()

    @property
    def final_utility(self):
        return self.steps[-1].after if self.steps else None


class GameOracle:
    """Incremental view of an explicit identical-interest game."""

    def __init__(self, game, profile):
        self.game = game
        self.num_players = game.num_players
        self.action_counts = game.action_counts
        self.prof = list(profile)
        if isinstance(game, PolytensorGame):
            self.neighbors = []
            for p in range(self.num_players):
                near = {p}
                for t in game.tensors_of(p):
                    near.update(t.S)
                self.neighbors.append(sorted(near))
        else:
            everyone = list(range(self.num_players))
            self.neighbors = [everyone] * self.num_players
        self.total = game.common_utility(self.prof)

    def utility(self):
        return self.game.common_utility(self.prof)

    def gain(self, player, action):
        return self.game.deviation_gain(self.prof, player, action)

    def best_response(self, player):
        best_a, best = self.prof[player], ZERO
        for a in range(self.action_counts[player]):
            if a == self.prof[player]:
                continue
            gain = self.gain(player, a)
            if gain > best:
                best_a, best = a, gain
        return best_a, best

    def apply(self, player, action):
        self.total += self.gain(player, action)
        self.prof[player] = action
        return self.neighbors[player]

    @property
    def profile(self):
        return tuple(self.prof)


class IdenticalInterestOracle:
    """Adapter for a bare utility function over pure profiles."""

    def __init__(self, action_counts, utility):
        self.action_counts = tuple(action_counts)
        self.num_players = len(self.action_counts)
        self._utility = utility

    def common_utility(self, profile):
        return self._utility(tuple(profile))

    def deviation_gain(self, profile, player, action):
        alt = list(profile)
        alt[player] = action
        return self._utility(tuple(alt)) - self._utility(tuple(profile))


def _oracle_for(game, profile):
    from .engine import GadgetEngine
    from .gadget import GadgetRoster

    if isinstance(game, GadgetRoster):
        return GadgetEngine(game, profile)
    if isinstance(game, (GameOracle, GadgetEngine)):
        return game
    return GameOracle(game, profile)


def better_reply_step(game, profile, config: DynamicsConfig = DynamicsConfig(), start: int = 0):
    """One improving deviation (player, action) per the policy, or None at a pure Nash equilibrium."""
    oracle = _oracle_for(game, profile)
    n = oracle.num_players
    if config.policy == "best-improving":
        best = None
        for p in range(n):
            a, gain = oracle.best_response(p)
            if gain > config.threshold and (best is None or gain > best[2]):
                best = (p, a, gain)
        return None if best is None else best[:2]
    order = range(n) if config.policy == "first-improving" else [(start + s) % n for s in range(n)]
    for p in order:
        a, gain = oracle.best_response(p)
        if gain > config.threshold:
            return p, a
    return None


def run_dynamics(game, init, config: DynamicsConfig = DynamicsConfig(), on_step=None) -> Trace:
    """Play improving deviations until none is left or the step budget runs out.

    Only players whose local view changed are re-examined; everyone else is
    known to be at a best response.  Under first-improving this is the same
    as scanning all players in index order before every step.
    """
    oracle = _oracle_for(game, init)
    n = oracle.num_players
    trace = Trace(tuple(init))
    threshold = config.threshold
    dirty = [True] * n
    if config.policy == "best-improving":
        cached = {}
        positive = set()
        while True:
            for p in [q for q in range(n) if dirty[q]]:
                dirty[p] = False
                a, gain = oracle.best_response(p)
                cached[p] = (a, gain)
                if gain > threshold:
                    positive.add(p)
                else:
                    positive.discard(p)
            if not positive:
                trace.status = "pure-nash"
                break
            if len(trace.steps) >= config.max_steps:
                break
            p = max(positive, key=lambda q: (cached[q][1], -q))
            a = cached[p][0]
            before = oracle.total
            old = oracle.prof[p]
            for q in oracle.apply(p, a):
                dirty[q] = True
            positive.discard(p)
            _record(trace, p, old, a, before, oracle.total, on_step)
        trace.final = oracle.profile
        return trace

    current = list(range(n))
    heapq.heapify(current)
    later = []
    pointer = 0
    while True:
        if not current:
            if not later:
                trace.status = "pure-nash"
                break
            current, later = later, []
            heapq.heapify(current)
            pointer = 0
        p = heapq.heappop(current)
        if not dirty[p]:
            continue
        dirty[p] = False
        a, gain = oracle.best_response(p)
        if gain <= threshold:
            continue
        if len(trace.steps) >= config.max_steps:
            dirty[p] = True
            break
        before = oracle.total
        old = oracle.prof[p]
        marks = oracle.apply(p, a)
        if config.policy == "round-robin":
            pointer = p + 1
        for q in marks:
            if not dirty[q]:
                dirty[q] = True
                heapq.heappush(later if config.policy == "round-robin" and q < pointer else current, q)
        _record(trace, p, old, a, before, oracle.total, on_step)
    trace.final = oracle.profile
    return trace


def _record(trace, p, old, new, before, after, on_step):
    if not after > before:
        raise AssertionError(f"step by player {p} did not increase the utility")
    step = Step(p, old, new, before, after)
    trace.steps.append(step)
    if on_step is not None:
        on_step(step)


def verify_pure_nash(game, profile) -> bool:
    """Exact zero-regret check over every pure deviation."""
    from .gadget import GadgetRoster

    if isinstance(game, GadgetRoster):
        oracle = _oracle_for(game, profile)
        return all(oracle.best_response(p)[1] <= 0 for p in range(oracle.num_players))
    if isinstance(game, PolytensorGame):
        return nash_regret(game, list(profile), VerifyOptions(0)).verdict
    oracle = GameOracle(game, profile)
    return all(oracle.best_response(p)[1] <= 0 for p in range(oracle.num_players))


@dataclass(frozen=True)
class Annotation:
    step: int
    player: str
    team_values: dict
    guide: tuple
    circuits: tuple  # per sample: "correct" | "weakly-correct" | "incorrect"
    decoded: tuple  # per sample: grid point read from the input wires


def annotate_trace(roster, trace: Trace, every: int = 1) -> list:
    """Replay a gadget trace and record team values, guide and circuit status."""
    from .engine import GadgetEngine
    from .gadget import SAMPLES, TEAMS

    if len(trace.initial) != roster.num_players:
        raise ValueError("trace does not belong to this roster")
    eng = GadgetEngine(roster, trace.initial)
    limit = roster.params.eps_P / roster.params.eps_C
    labels = [f"x{r}" for r in TEAMS] + ["y1", "y2"]
    out = []

    def snapshot(idx, who):
        circuits = []
        points = []
        for p in range(len(SAMPLES)):
            wrong = eng.wrong_count[p]
            circuits.append("correct" if wrong == 0 else "weakly-correct" if wrong <= limit else "incorrect")
            point = []
            for row in roster.circuit.input_wires:
                v = ZERO
                for k, wid in enumerate(row, 1):
                    if eng.values[p][wid]:
                        v += Q(1, 1 << k)
                point.append(v)
            points.append(tuple(point))
        values = {lab: eng.stats[t].value for t, lab in enumerate(labels)}
        out.append(Annotation(idx, who, values, SAMPLES[eng.prof[roster.guide]], tuple(circuits), tuple(points)))

    snapshot(0, "")
    for idx, step in enumerate(trace.steps, 1):
        if eng.prof[step.player] != step.old:
            raise ValueError(f"step {idx} does not match the replayed profile")
        eng.apply(step.player, step.new)
        if idx % every == 0 or idx == len(trace.steps):
            snapshot(idx, roster.player_id(step.player))
    return out
