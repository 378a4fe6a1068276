"""Explicit congestion games, polytensor identical-interest games, and Nash checks."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

from .numerics import ONE, ZERO, Q, parse_rat, rat_str


def _mixed_radix(S, counts):
    strides, step = [], 1
    for p in reversed(S):
        strides.append(step)
        step *= counts[p]
    return tuple(reversed(strides)), step


@dataclass(frozen=True)
class Tensor:
    """Interaction among players ``S`` (sorted) with a dense table over their action box."""

    S: tuple
    table: tuple
    strides: tuple = field(compare=False, default=())

    def value(self, profile):
        idx = 0
        for p, st in zip(self.S, self.strides):
            idx += profile[p] * st
        return self.table[idx]


class PolytensorGame:
    """Identical-interest game whose common utility is a sum of low-arity tensors."""

    def __init__(self, action_counts, tensors, order=None):
        self.action_counts = tuple(int(a) for a in action_counts)
        built = []
        for S, table in tensors:
            S = tuple(S)
            if list(S) != sorted(set(S)):
                raise ValueError(f"tensor players {S} must be sorted and distinct")
            if not S:
                raise ValueError("tensors must involve at least one player")
            strides, size = _mixed_radix(S, self.action_counts)
            table = tuple(Q(v) for v in table)
            if len(table) != size:
                raise ValueError(f"tensor over {S} needs {size} entries, got {len(table)}")
            built.append(Tensor(S, table, strides))
        self.tensors = tuple(built)
        arity = max((len(t.S) for t in self.tensors), default=0)
        self.order = arity if order is None else int(order)
        if arity > self.order:
            raise ValueError(f"tensor arity {arity} exceeds declared order {self.order}")
        self._by_player = [[] for _ in self.action_counts]
        for t in self.tensors:
            for p in t.S:
                self._by_player[p].append(t)

    @property
    def num_players(self) -> int:
        return len(self.action_counts)

    def tensors_of(self, player: int):
        return self._by_player[player]

    def common_utility(self, profile):
        return polytensor_common_utility(self, profile)

    def player_utility(self, player, profile):
        return self.common_utility(profile)

    def deviation_gain(self, profile, player, action):
        """Change in common utility when ``player`` switches to ``action``."""
        if profile[player] == action:
            return ZERO
        alt = list(profile)
        alt[player] = action
        gain = ZERO
        for t in self._by_player[player]:
            gain += t.value(alt) - t.value(profile)
        return gain

    def to_doc(self) -> dict:
        return {
            "c": self.order,
            "players": list(self.action_counts),
            "tensors": [{"S": list(t.S), "entries": [rat_str(v) for v in t.table]} for t in self.tensors],
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "PolytensorGame":
        tensors = [(tuple(t["S"]), [parse_rat(v) for v in t["entries"]]) for t in doc["tensors"]]
        return cls(doc["players"], tensors, doc.get("c"))


def polytensor_common_utility(ptg: PolytensorGame, profile):
    _check_pure(profile, ptg.action_counts)
    total = ZERO
    for t in ptg.tensors:
        total += t.value(profile)
    return total


def expected_common_utility(ptg: PolytensorGame, profile):
    """Multilinear extension: sum over tensors of table entries times product probabilities."""
    profile = as_mixed(profile, ptg.action_counts)
    total = ZERO
    for t in ptg.tensors:
        total += _tensor_expectation(t, profile)
    return total


def _tensor_expectation(t: Tensor, profile, fixed=None):
    supports = []
    for p in t.S:
        if fixed is not None and p == fixed[0]:
            supports.append([(fixed[1], ONE)])
        else:
            supports.append([(a, w) for a, w in enumerate(profile[p]) if w])
    total = ZERO
    for combo in itertools.product(*supports):
        idx = 0
        weight = ONE
        for (a, w), st in zip(combo, t.strides):
            idx += a * st
            weight *= w
        total += weight * t.table[idx]
    return total


class CongestionGame:
    """Players pick facility subsets; each facility pays l_f(number of users).

    A facility's cost table covers loads 1..u where u is the number of
    players who can reach it.
    """

    def __init__(self, facility_costs, player_actions):
        self.facility_costs = [tuple(Q(v) for v in costs) for costs in facility_costs]
        self.player_actions = []
        for i, actions in enumerate(player_actions):
            acts = []
            for a in actions:
                a = tuple(sorted(set(a)))
                for f in a:
                    if not 0 <= f < len(self.facility_costs):
                        raise ValueError(f"player {i} uses unknown facility {f}")
                acts.append(a)
            if not acts:
                raise ValueError(f"player {i} has no actions")
            self.player_actions.append(tuple(acts))
        users = [0] * len(self.facility_costs)
        for acts in self.player_actions:
            for f in set().union(*acts):
                users[f] += 1
        for f, costs in enumerate(self.facility_costs):
            if len(costs) < users[f]:
                raise ValueError(f"facility {f} needs costs for loads 1..{users[f]}")
        self.action_counts = tuple(len(a) for a in self.player_actions)

    @property
    def num_players(self) -> int:
        return len(self.player_actions)

    def loads(self, profile):
        _check_pure(profile, self.action_counts)
        load = {}
        for i, a in enumerate(profile):
            for f in self.player_actions[i][a]:
                load[f] = load.get(f, 0) + 1
        return load

    def player_utility(self, player, profile):
        return congestion_utility(self, profile, player)

    def total_cost(self, profile):
        """Sum over used facilities of l_f(load), each facility counted once."""
        return sum((self.facility_costs[f][c - 1] for f, c in self.loads(profile).items()), ZERO)

    def to_doc(self) -> dict:
        return {
            "facilities": [{"id": f, "costs": [rat_str(v) for v in c]} for f, c in enumerate(self.facility_costs)],
            "players": [{"actions": [list(a) for a in acts]} for acts in self.player_actions],
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "CongestionGame":
        facilities = sorted(doc["facilities"], key=lambda f: f["id"])
        return cls([[parse_rat(v) for v in f["costs"]] for f in facilities],
                   [[tuple(a) for a in p["actions"]] for p in doc["players"]])


def congestion_utility(game: CongestionGame, profile, player: int):
    load = game.loads(profile)
    if not 0 <= profile[player] < game.action_counts[player]:
        raise IndexError("action index out of range")
    return sum((game.facility_costs[f][load[f] - 1] for f in game.player_actions[player][profile[player]]), ZERO)


def polytensor_to_congestion(ptg: PolytensorGame) -> CongestionGame:
    """One facility per tensor entry; it pays the entry when all of S use it."""
    n = ptg.num_players
    costs = []
    actions = [[[] for _ in range(ptg.action_counts[i])] for i in range(n)]
    for t in ptg.tensors:
        boxes = [range(ptg.action_counts[p]) for p in t.S]
        for combo in itertools.product(*boxes):
            f = len(costs)
            idx = sum(a * st for a, st in zip(combo, t.strides))
            row = [ZERO] * len(t.S)
            row[-1] = t.table[idx]
            costs.append(row)
            for p, a in zip(t.S, combo):
                actions[p][a].append(f)
    return CongestionGame(costs, actions)


# ---- profiles and regret -----------------------------------------------------

def _check_pure(profile, counts):
    if len(profile) != len(counts):
        raise ValueError(f"profile has {len(profile)} players, game has {len(counts)}")
    for i, (a, c) in enumerate(zip(profile, counts)):
        if not 0 <= a < c:
            raise IndexError(f"player {i}: action {a} outside 0..{c - 1}")


def pure_to_mixed(profile, counts):
    return tuple(tuple(ONE if a == b else ZERO for b in range(c)) for a, c in zip(profile, counts))


def as_mixed(profile, counts):
    """Accept a pure profile (ints) or per-player probability vectors; validate."""
    if len(profile) != len(counts):
        raise ValueError(f"profile has {len(profile)} players, game has {len(counts)}")
    if all(isinstance(a, int) for a in profile):
        _check_pure(profile, counts)
        return pure_to_mixed(profile, counts)
    out = []
    for i, (vec, c) in enumerate(zip(profile, counts)):
        vec = tuple(Q(v) for v in vec)
        if len(vec) != c:
            raise ValueError(f"player {i}: {len(vec)} probabilities for {c} actions")
        if any(v < 0 for v in vec) or sum(vec, ZERO) != ONE:
            raise ValueError(f"player {i}: not a probability vector")
        out.append(vec)
    return tuple(out)


@dataclass(frozen=True)
class VerifyOptions:
    eps: object = ZERO
    mode: str = "approximate"  # or "well_supported"

    def __post_init__(self):
        if Q(self.eps) < 0:
            raise ValueError("eps must be nonnegative")
        if self.mode not in ("approximate", "well_supported"):
            raise ValueError(f"unknown verification mode {self.mode!r}")


@dataclass(frozen=True)
class RegretReport:
    per_player: tuple
    max_regret: object
    verdict: bool
    mode: str


def action_values(game, profile, player):
    """Expected utility of each pure action of ``player`` against the others' mix."""
    if isinstance(game, PolytensorGame):
        vals = []
        for a in range(game.action_counts[player]):
            vals.append(sum((_tensor_expectation(t, profile, (player, a)) for t in game.tensors_of(player)), ZERO))
        return vals
    supports = [[(b, w) for b, w in enumerate(vec) if w] for vec in profile]
    vals = []
    for a in range(game.action_counts[player]):
        supports[player] = [(a, ONE)]
        total = ZERO
        for combo in itertools.product(*supports):
            w = ONE
            for _, pw in combo:
                w *= pw
            total += w * game.player_utility(player, tuple(b for b, _ in combo))
        vals.append(total)
    return vals


def nash_regret(game, profile, opts: VerifyOptions = VerifyOptions()) -> RegretReport:
    profile = as_mixed(profile, game.action_counts)
    per = []
    for i in range(game.num_players):
        vals = action_values(game, profile, i)
        best = max(vals)
        if opts.mode == "approximate":
            current = sum((w * v for w, v in zip(profile[i], vals)), ZERO)
            per.append(best - current)
        else:
            per.append(max(best - v for w, v in zip(profile[i], vals) if w))
    worst = max(per, default=ZERO)
    return RegretReport(tuple(per), worst, worst <= Q(opts.eps), opts.mode)


def profile_to_doc(profile) -> dict:
    return {str(i): [rat_str(v) for v in vec] for i, vec in enumerate(profile)}


def profile_from_doc(doc: dict, counts):
    vecs = [None] * len(counts)
    for key, vec in doc.items():
        i = int(key)
        if not 0 <= i < len(counts):
            raise ValueError(f"profile names unknown player {key}")
        vecs[i] = [parse_rat(v) for v in vec]
    if any(v is None for v in vecs):
        raise ValueError("profile is missing players")
    return as_mixed(vecs, counts)


def random_identical_interest(rng, n, max_actions, values=range(-8, 9)):
    """Single full-arity tensor with random integer payoffs."""
    counts = [rng.randint(1, max_actions) for _ in range(n)]
    size = 1
    for c in counts:
        size *= c
    table = [Q(rng.choice(values)) for _ in range(size)]
    return PolytensorGame(counts, [(tuple(range(n)), table)])


def random_polytensor(rng, n, max_actions, order, num_tensors, values=range(-6, 7)):
    counts = [rng.randint(1, max_actions) for _ in range(n)]
    tensors = []
    for _ in range(num_tensors):
        k = rng.randint(1, min(order, n))
        S = tuple(sorted(rng.sample(range(n), k)))
        size = 1
        for p in S:
            size *= counts[p]
        tensors.append((S, [Q(rng.choice(values), rng.choice((1, 2, 4))) for _ in range(size)]))
    return PolytensorGame(counts, tensors, order)
