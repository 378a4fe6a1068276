"""The bit/veto/guide/circuit game that turns a potential into an identical-interest game.

Players, in scan order: x-team bits by (team, position), x-team vetoes,
y-team bits, y-team vetoes, circuit wires by (sample, wire id) and the
guide.  A pure profile is a sequence of action indices, one per player;
a mixed profile is a sequence of probability vectors.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .games import PolytensorGame, as_mixed, polytensor_to_congestion
from .numerics import (ONE, ZERO, Q, TeamState, VetoAction, VetoType, bits_value, parse_rat, pow2,
                       post_veto_bits, rat_str, team_value, tilde_value, veto_suffix_bits)
from .potential import ArithmeticCircuit, GDInstance, derive_params, lift_grid_solution
from .synthesis import BooleanCircuit, compile_with_depth_feedback, gate_output

I_SET = (-1, 0, 1)
J_SET = (1, 2)
TEAMS = tuple((i, j) for i in I_SET for j in J_SET)
SAMPLES = tuple((i1, i2) for i1 in I_SET for i2 in I_SET)
CENTER = SAMPLES.index((0, 0))
VETO_TYPES = 6

TERM_NAMES = ("imitation", "circuit", "potential", "gradient", "x_bit_imitation",
              "y_bit_imitation", "bit_gradient", "veto")


def team_index(r) -> int:
    return TEAMS.index(tuple(r))


def samples_of_team(r) -> tuple:
    """Indices of the three samples whose coordinate r[1] is read from team r."""
    i, j = r
    return tuple(n for n, p in enumerate(SAMPLES) if p[j - 1] == i)


def team_of_sample(p, j) -> int:
    return team_index((p[j - 1], j))


def veto_of_index(a: int, K: int):
    """(m, t) for veto action index a; non-canonical no-veto actions keep their t."""
    m, t = divmod(a, VETO_TYPES)
    return m + 1, VetoType(t)


def _suffix_bit(a: int, k: int, K: int):
    """Bit at position k written by veto action a, or None when k is not vetoed."""
    m, t = veto_of_index(a, K)
    if k < m:
        return None
    return veto_suffix_bits(t, K - m + 1)[k - m]


# ---- parameters --------------------------------------------------------------

@dataclass(frozen=True)
class ReductionParams:
    K: int
    N_in: int
    N_out: int
    D: int
    eps_S: object
    eps_C: object
    eps_C_bar: object
    eps_P: object
    eps_G: object
    eps_T: object
    eps_R: object
    lam: object
    mode: str = "desk"
    separation: object = 4
    eps: object = None
    alpha: object = None
    kappa: tuple = (4, 4, 4)

    def __post_init__(self):
        for name in ("K", "N_in", "N_out", "D"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        for name in ("eps_S", "eps_C", "eps_C_bar", "eps_P", "eps_G", "eps_T", "eps_R", "lam", "separation"):
            value = Q(getattr(self, name))
            if value <= 0:
                raise ValueError(f"{name} must be positive")
            object.__setattr__(self, name, value)
        for name in ("eps", "alpha"):
            if getattr(self, name) is not None:
                object.__setattr__(self, name, Q(getattr(self, name)))
        object.__setattr__(self, "kappa", tuple(Q(k) for k in self.kappa))
        if self.mode not in ("strict", "desk"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if (self.eps_S * (1 << self.K)).denominator != 1:
            raise ValueError("eps_S must be a multiple of 2^-K")
        if not 1 <= self.k_C <= self.K:
            raise ValueError(f"k_C = {self.k_C} outside [1, K]")

    @property
    def k_C(self) -> int:
        """floor(-log2 eps_C_bar)."""
        v = self.eps_C_bar
        n = 0
        while pow2(-(n + 1)) >= v:
            n += 1
        while n > -4096 and pow2(-n) < v:
            n -= 1
        return n

    def to_doc(self) -> dict:
        doc = {"K": self.K, "N_in": self.N_in, "N_out": self.N_out, "D": self.D, "mode": self.mode}
        for name in ("eps_S", "eps_C", "eps_C_bar", "eps_P", "eps_G", "eps_T", "eps_R", "lam", "separation"):
            doc[name] = rat_str(getattr(self, name))
        for name in ("eps", "alpha"):
            if getattr(self, name) is not None:
                doc[name] = rat_str(getattr(self, name))
        doc["kappa"] = [rat_str(k) for k in self.kappa]
        return doc

    @classmethod
    def from_doc(cls, doc: dict) -> "ReductionParams":
        kw = {name: int(doc[name]) for name in ("K", "N_in", "N_out", "D")}
        for name in ("eps_S", "eps_C", "eps_C_bar", "eps_P", "eps_G", "eps_T", "eps_R", "lam", "separation"):
            kw[name] = parse_rat(doc[name])
        for name in ("eps", "alpha"):
            if name in doc:
                kw[name] = parse_rat(doc[name])
        if "kappa" in doc:
            kw["kappa"] = tuple(parse_rat(k) for k in doc["kappa"])
        return cls(mode=doc.get("mode", "desk"), **kw)


@dataclass(frozen=True)
class ChainLink:
    left: str
    right: str
    ok: bool


@dataclass(frozen=True)
class ValidationReport:
    mode: str
    links: tuple
    passed: bool
    deviations: tuple = ()


def _chain(params: ReductionParams):
    """(name, squared value) along the parameter hierarchy, largest first."""
    p = params
    N, K, D = p.N_in, p.K, p.D
    sq = lambda v: Q(v) * Q(v)  # noqa: E731
    head = []
    if p.eps is not None:
        head.append(("eps", sq(p.eps)))
    if p.alpha is not None:
        head.append(("1/alpha", sq(ONE / p.alpha)))
    body = [
        ("2^-N_in", sq(pow2(-N))),
        ("eps_R", sq(p.eps_R)),
        ("2^-1.5N_in", pow2(-3 * N)),
        ("lambda", sq(p.lam)),
        ("eps_S", sq(p.eps_S)),
        ("eps_C_bar", sq(p.eps_C_bar)),
        ("eps_C_bar^2", sq(p.eps_C_bar ** 2)),
        ("eps_C", sq(p.eps_C)),
        ("eps_C*2^-2D", sq(p.eps_C * pow2(-2 * D))),
        ("eps_C^2*2^-2D", sq(p.eps_C ** 2 * pow2(-2 * D))),
        ("eps_P", sq(p.eps_P)),
        ("eps_G", sq(p.eps_G)),
        ("lambda*eps_G", sq(p.lam * p.eps_G)),
        ("2^-K", sq(pow2(-K))),
        ("2^-2K", sq(pow2(-2 * K))),
        ("eps_T", sq(p.eps_T)),
    ]
    return head, body


def validate_params(params: ReductionParams) -> ValidationReport:
    """Check left >= separation * right along every adjacent pair of the hierarchy."""
    s2 = params.separation ** 2
    head, body = _chain(params)
    links = []
    for name, value in head:
        links.append(ChainLink(name, body[0][0], value >= s2 * body[0][1]))
    for (ln, lv), (rn, rv) in zip(body, body[1:]):
        links.append(ChainLink(ln, rn, lv >= s2 * rv))
    bad = tuple(f"{ln.left} >> {ln.right}" for ln in links if not ln.ok)
    if params.mode == "strict":
        return ValidationReport("strict", tuple(links), not bad, bad)
    return ValidationReport("desk", tuple(links), True, bad)


def desk_params(D: int, N_out: int, K: int = 8, N_in: int = 3, eps=None, alpha=ONE,
                eps_S=None, eps_C_bar=None) -> ReductionParams:
    """Small fixed preset under which better-reply dynamics reach a decodable equilibrium.

    The circuit weight is scaled with the depth so that the deepest wire's
    correctness still outweighs the potential reward of a single output bit.
    """
    eps_C = pow2(2 * D + 6)
    alpha = Q(alpha)
    return ReductionParams(
        K=K, N_in=N_in, N_out=N_out, D=D,
        eps_S=pow2(-min(5, K)) if eps_S is None else Q(eps_S), eps_C=eps_C,
        eps_C_bar=pow2(-min(4, max(1, K - 1))) if eps_C_bar is None else Q(eps_C_bar), eps_P=pow2(4), eps_G=ONE,
        eps_T=pow2(-24) / eps_C, eps_R=pow2(-((4 * N_in + 2) // 3)), lam=alpha * pow2(-2 * N_in),
        mode="desk", separation=4, eps=eps, alpha=alpha,
    )


def strict_params(instance: GDInstance, D: int, N_out: int, N_in: int = None, separation=4) -> ReductionParams:
    """Powers of two chosen greedily down the hierarchy with the given separation."""
    grid = derive_params(instance, boolean_depth_hint=D)
    N_in = grid.N_in if N_in is None else N_in
    s = Q(separation)

    def below(v):
        n = 0
        while pow2(-n) * s > v:
            n += 1
        return pow2(-n)

    lam = Q(instance.alpha) * pow2(-2 * N_in)
    eps_R = (Q(instance.eps) / (6 * Q(instance.alpha))) ** 4
    eps_S = below(lam)
    eps_C_bar = below(eps_S)
    eps_C = below(eps_C_bar ** 2 / s)
    eps_P = below(eps_C ** 2 * pow2(-2 * D))
    eps_G = below(eps_P)
    K = 1
    while pow2(-K) * s > lam * eps_G:
        K += 1
    eps_T = below(pow2(-2 * K))
    return ReductionParams(K=K, N_in=N_in, N_out=N_out, D=D, eps_S=eps_S, eps_C=eps_C, eps_C_bar=eps_C_bar,
                           eps_P=eps_P, eps_G=eps_G, eps_T=eps_T, eps_R=eps_R, lam=lam, mode="strict",
                           separation=s, eps=instance.eps, alpha=instance.alpha)


# ---- roster ------------------------------------------------------------------

class GadgetRoster:
    """Player layout and static wiring of the gadget game."""

    def __init__(self, params: ReductionParams, circuit: BooleanCircuit, arith: ArithmeticCircuit = None):
        if circuit.J != 2:
            raise ValueError("the gadget game needs a two-dimensional circuit")
        if circuit.N_in != params.N_in or circuit.N_out != params.N_out:
            raise ValueError("boolean circuit was compiled for different N_in / N_out")
        if params.N_in > params.K:
            raise ValueError("N_in exceeds K")
        self.params = params
        self.circuit = circuit
        self.arith = arith
        K = self.K = params.K
        L = self.L = circuit.size
        self.V = VETO_TYPES * (K + 1)
        self.x_bit_base = 0
        self.x_veto_base = 6 * K
        self.y_bit_base = 6 * K + 6
        self.y_veto_base = 8 * K + 6
        self.wire_base = 8 * (K + 1)
        self.guide = self.wire_base + 9 * L
        self.num_players = self.guide + 1
        counts = [2] * (6 * K) + [self.V] * 6 + [2] * (2 * K) + [self.V] * 2 + [2] * (9 * L) + [len(SAMPLES)]
        self.action_counts = tuple(counts)
        self.consumers = circuit.consumers()
        self.input_of = {}
        for j, row in enumerate(circuit.input_wires, 1):
            for k, wid in enumerate(row, 1):
                self.input_of[wid] = (j, k)
        roles = {}
        for k, wid in enumerate(circuit.phi_bits, 1):
            roles.setdefault(wid, []).append(("phi", k))
        for j, wid in enumerate(circuit.delta_sign, 1):
            roles.setdefault(wid, []).append(("sign", j))
        for j, row in enumerate(circuit.delta_bits, 1):
            for k, wid in enumerate(row, 1):
                roles.setdefault(wid, []).append(("mag", j, k))
        self.output_roles = roles
        self.wire_weight = tuple(pow2(-2 * w.depth) for w in circuit.wires)

    # team t: 0..5 are x-teams in TEAMS order, 6 and 7 are y_1 and y_2
    def team_bits(self, t: int) -> range:
        if t < 6:
            return range(t * self.K, (t + 1) * self.K)
        return range(self.y_bit_base + (t - 6) * self.K, self.y_bit_base + (t - 5) * self.K)

    def team_veto(self, t: int) -> int:
        return self.x_veto_base + t if t < 6 else self.y_veto_base + (t - 6)

    def team_players(self, t: int) -> list:
        return list(self.team_bits(t)) + [self.team_veto(t)]

    def wire_player(self, p: int, l: int) -> int:
        return self.wire_base + p * self.L + l

    def kind(self, player: int) -> tuple:
        """("bit", team, k) | ("veto", team) | ("wire", sample, wire) | ("guide",)."""
        K = self.K
        if not 0 <= player < self.num_players:
            raise IndexError(f"player {player} out of range")
        if player < self.x_veto_base:
            return ("bit", player // K, player % K + 1)
        if player < self.y_bit_base:
            return ("veto", player - self.x_veto_base)
        if player < self.y_veto_base:
            off = player - self.y_bit_base
            return ("bit", 6 + off // K, off % K + 1)
        if player < self.wire_base:
            return ("veto", 6 + player - self.y_veto_base)
        if player < self.guide:
            p, l = divmod(player - self.wire_base, self.L)
            return ("wire", p, l)
        return ("guide",)

    @staticmethod
    def _team_label(t):
        if t < 6:
            i, j = TEAMS[t]
            return f"x.r=({i},{j})"
        return f"y.j={t - 5}"

    def player_id(self, player: int) -> str:
        kind = self.kind(player)
        if kind[0] == "bit":
            return f"{self._team_label(kind[1])}.bit.{kind[2]}"
        if kind[0] == "veto":
            return f"{self._team_label(kind[1])}.veto"
        if kind[0] == "wire":
            i1, i2 = SAMPLES[kind[1]]
            return f"c.p=({i1},{i2}).wire.{kind[2]}"
        return "guide"

    def player_index(self, pid: str) -> int:
        if not hasattr(self, "_index"):
            self._index = {self.player_id(n): n for n in range(self.num_players)}
        try:
            return self._index[pid]
        except KeyError:
            raise ValueError(f"unknown player id {pid!r}") from None

    def team_state(self, profile, t: int) -> TeamState:
        bits = tuple(profile[n] for n in self.team_bits(t))
        m, ty = veto_of_index(profile[self.team_veto(t)], self.K)
        return TeamState(bits, VetoAction(m, ty))

    def sample_values(self, profile, p: int) -> list:
        base = self.wire_player(p, 0)
        return list(profile[base: base + self.L])

    def to_doc(self) -> dict:
        return {
            "params": self.params.to_doc(),
            "circuit": self.circuit.to_doc(),
            "arith": None if self.arith is None else self.arith.to_doc(),
            "teams": [{"team": self._team_label(t), "players": self.team_players(t)} for t in range(8)],
            "guide": {"player": self.guide, "samples": [list(p) for p in SAMPLES]},
            "num_players": self.num_players,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "GadgetRoster":
        arith = None if doc.get("arith") is None else ArithmeticCircuit.from_doc(doc["arith"])
        return cls(ReductionParams.from_doc(doc["params"]), BooleanCircuit.from_doc(doc["circuit"]), arith)


def build_roster(params: ReductionParams, circuit: BooleanCircuit, arith: ArithmeticCircuit = None) -> GadgetRoster:
    return GadgetRoster(params, circuit, arith)


# ---- profiles ------------------------------------------------------------------

def compose_profile(roster: GadgetRoster, teams: dict, guide=(0, 0), wires=None) -> list:
    """Pure profile from team states (missing teams are zero); circuits correct unless given."""
    K = roster.K
    prof = [0] * roster.num_players
    states = [teams.get(t, TeamState.zeros(K)) for t in range(8)]
    for t, ts in enumerate(states):
        if ts.K != K:
            raise ValueError("team state has the wrong length")
        for n, b in zip(roster.team_bits(t), ts.bits):
            prof[n] = b
        prof[roster.team_veto(t)] = ts.veto.index(K)
    for p in range(len(SAMPLES)):
        if wires is not None and wires[p] is not None:
            vals = list(wires[p])
        else:
            vals = correct_wire_values(roster, states, p)
        base = roster.wire_player(p, 0)
        prof[base: base + roster.L] = vals
    prof[roster.guide] = SAMPLES.index(tuple(guide))
    return prof


def correct_wire_values(roster: GadgetRoster, states, p: int) -> list:
    """Wire actions of sample p that compute correctly from the teams' realized bits."""
    N_in = roster.params.N_in
    inputs = []
    for j in J_SET:
        realized = post_veto_bits(states[team_of_sample(SAMPLES[p], j)])
        inputs.append(realized[:N_in])
    return roster.circuit.evaluate(inputs)


def perfect_imitation_profile(roster: GadgetRoster, y_values, guide=(0, 0)) -> list:
    """x-teams sit exactly on their shifted targets, no vetoes, circuits correct."""
    K, eps_S = roster.K, roster.params.eps_S
    teams = {}
    for j in J_SET:
        teams[5 + j] = TeamState.from_value(Q(y_values[j - 1]), K)
    for t, (i, j) in enumerate(TEAMS):
        teams[t] = TeamState.from_value(Q(y_values[j - 1]) + i * eps_S, K)
    return compose_profile(roster, teams, guide)


def wrong_flags(roster: GadgetRoster, p: int, values, realized_by_team) -> list:
    """w^p_l for every wire of sample p given its wire actions and the teams' realized strings."""
    out = []
    for w in roster.circuit.wires:
        if w.kind == "INPUT":
            j, k = roster.input_of[w.id]
            want = realized_by_team[team_of_sample(SAMPLES[p], j)][k - 1]
        else:
            want = gate_output(w.kind, [values[i] for i in w.inputs])
        out.append(int(values[w.id] != want))
    return out


# ---- utility (pure) ----------------------------------------------------------

def gadget_utility_terms(roster: GadgetRoster, profile) -> dict:
    """The eight utility terms, summed literally over samples, dimensions and bits."""
    prm = roster.params
    K = roster.K
    if len(profile) != roster.num_players:
        raise ValueError(f"profile has {len(profile)} actions, roster has {roster.num_players} players")
    for n, a in enumerate(profile):
        if not 0 <= a < roster.action_counts[n]:
            raise ValueError(f"player {roster.player_id(n)}: action {a} out of range")
    states = [roster.team_state(profile, t) for t in range(8)]
    val = [team_value(ts) for ts in states]
    tilde = [[tilde_value(ts, k) for k in range(1, K + 1)] for ts in states]
    realized = [post_veto_bits(ts) for ts in states]
    g = profile[roster.guide]
    terms = dict.fromkeys(TERM_NAMES, ZERO)
    for pn, p in enumerate(SAMPLES):
        ind = 1 if pn == g else 0
        for j in J_SET:
            t = team_of_sample(p, j)
            y = val[5 + j]
            shift = p[j - 1] * prm.eps_S
            terms["imitation"] -= (1 + ind) * (val[t] - y - shift) ** 2
            for k in range(K):
                terms["x_bit_imitation"] -= prm.eps_T * (tilde[t][k] - y - shift) ** 2
                terms["y_bit_imitation"] -= prm.eps_T * (1 + ind) * (val[t] - tilde[5 + j][k] - shift) ** 2
        values = roster.sample_values(profile, pn)
        wrong = wrong_flags(roster, pn, values, realized)
        weighted = sum((roster.wire_weight[l] for l, w in enumerate(wrong) if w), ZERO)
        terms["circuit"] -= prm.eps_C * (prm.eps_T + ind) * weighted
        if ind:
            phi, deltas = roster.circuit.decode(values)
            terms["potential"] += prm.eps_P * phi
            for j in J_SET:
                terms["gradient"] += prm.eps_G * val[5 + j] * deltas[j - 1]
                for k in range(K):
                    terms["bit_gradient"] += prm.eps_T * prm.eps_G * tilde[5 + j][k] * deltas[j - 1]
    terms["veto"] = prm.eps_T * sum(ts.veto.m for ts in states)
    return terms


def gadget_utility(roster: GadgetRoster, profile):
    return sum(gadget_utility_terms(roster, profile).values(), ZERO)


# ---- utility (mixed, closed form) --------------------------------------------

@dataclass(frozen=True)
class TeamMoments:
    mean: object
    var: object
    tilde_mean: tuple
    tilde_var: tuple
    bit_one: tuple  # P[realized bit k = 1]
    veto_mean: object  # E[M]


def team_moments(bit_probs, veto_dist, K: int) -> TeamMoments:
    """Moments of a team's realized value by conditioning on the veto action."""
    mean = second = ZERO
    tm = [ZERO] * K
    t2 = [ZERO] * K
    one = [ZERO] * K
    m_mean = ZERO
    bit_var = [p * (1 - p) for p in bit_probs]
    for a, q in enumerate(veto_dist):
        if not q:
            continue
        m, t = veto_of_index(a, K)
        suffix = veto_suffix_bits(t, K - m + 1) if m <= K else ()
        mu = var = ZERO
        for k in range(1, min(m, K + 1)):
            mu += pow2(-k) * bit_probs[k - 1]
            var += pow2(-2 * k) * bit_var[k - 1]
        for k in range(m, K + 1):
            if suffix[k - m]:
                mu += pow2(-k)
        mean += q * mu
        second += q * (var + mu * mu)
        m_mean += q * m
        for k in range(1, K + 1):
            if k < m:
                mk, vk, pr = mu, var, bit_probs[k - 1]
            else:
                s = suffix[k - m]
                mk = mu + pow2(-k) * (bit_probs[k - 1] - s)
                vk = var + pow2(-2 * k) * bit_var[k - 1]
                pr = Q(s)
            tm[k - 1] += q * mk
            t2[k - 1] += q * (vk + mk * mk)
            one[k - 1] += q * pr
    tv = tuple(b - a * a for a, b in zip(tm, t2))
    return TeamMoments(mean, second - mean * mean, tuple(tm), tv, tuple(one), m_mean)


def _team_moments_from_profile(roster, mixed, t):
    bits = [mixed[n][1] for n in roster.team_bits(t)]
    return team_moments(bits, mixed[roster.team_veto(t)], roster.K)


def _wire_wrong_probability(roster, mixed, p, l, moments):
    wire = roster.circuit.wires[l]
    one = mixed[roster.wire_player(p, l)][1]
    if wire.kind == "INPUT":
        j, k = roster.input_of[l]
        b = moments[team_of_sample(SAMPLES[p], j)].bit_one[k - 1]
        return one * (1 - b) + (1 - one) * b
    srcs = sorted(set(wire.inputs))
    total = ZERO
    for combo in itertools.product((0, 1), repeat=len(srcs)):
        w = ONE
        for s, v in zip(srcs, combo):
            q = mixed[roster.wire_player(p, s)][1]
            w *= q if v else 1 - q
        if not w:
            continue
        lookup = dict(zip(srcs, combo))
        out = gate_output(wire.kind, [lookup[i] for i in wire.inputs])
        total += w * ((1 - one) if out else one)
    return total


def _expected_outputs(roster, mixed, p):
    """(E[phi^p], [E[Delta^p_j]]) under independent wire players."""
    c = roster.circuit
    prob = lambda wid: mixed[roster.wire_player(p, wid)][1]  # noqa: E731
    phi = sum((pow2(-k) * prob(w) for k, w in enumerate(c.phi_bits, 1)), ZERO)
    deltas = []
    for j in range(2):
        s = c.delta_sign[j]
        ps = prob(s)
        total = ZERO
        for k, w in enumerate(c.delta_bits[j], 1):
            term = -prob(w) if w == s else (1 - 2 * ps) * prob(w)
            total += pow2(-k) * term
        deltas.append(total)
    return phi, deltas


def gadget_expected_utility_terms(roster: GadgetRoster, profile) -> dict:
    prm = roster.params
    K = roster.K
    mixed = as_mixed(profile, roster.action_counts)
    mom = [_team_moments_from_profile(roster, mixed, t) for t in range(8)]
    guide = mixed[roster.guide]
    terms = dict.fromkeys(TERM_NAMES, ZERO)
    exp_delta = [ZERO, ZERO]
    for pn, p in enumerate(SAMPLES):
        gp = guide[pn]
        for j in J_SET:
            x, y = mom[team_of_sample(p, j)], mom[5 + j]
            shift = p[j - 1] * prm.eps_S
            terms["imitation"] -= (1 + gp) * ((x.mean - y.mean - shift) ** 2 + x.var + y.var)
            for k in range(K):
                terms["x_bit_imitation"] -= prm.eps_T * ((x.tilde_mean[k] - y.mean - shift) ** 2
                                                        + x.tilde_var[k] + y.var)
                terms["y_bit_imitation"] -= prm.eps_T * (1 + gp) * ((x.mean - y.tilde_mean[k] - shift) ** 2
                                                                    + x.var + y.tilde_var[k])
        weighted = sum((roster.wire_weight[l] * _wire_wrong_probability(roster, mixed, pn, l, mom)
                        for l in range(roster.L)), ZERO)
        terms["circuit"] -= prm.eps_C * (prm.eps_T + gp) * weighted
        if gp:
            phi, deltas = _expected_outputs(roster, mixed, pn)
            terms["potential"] += prm.eps_P * gp * phi
            for j in range(2):
                exp_delta[j] += gp * deltas[j]
    for j in J_SET:
        y = mom[5 + j]
        terms["gradient"] += prm.eps_G * y.mean * exp_delta[j - 1]
        terms["bit_gradient"] += prm.eps_T * prm.eps_G * sum(y.tilde_mean, ZERO) * exp_delta[j - 1]
    terms["veto"] = prm.eps_T * sum((m.veto_mean for m in mom), ZERO)
    return terms


def gadget_expected_utility(roster: GadgetRoster, profile):
    return sum(gadget_expected_utility_terms(roster, profile).values(), ZERO)


def brute_force_expected_utility(roster: GadgetRoster, profile):
    """Expectation of the pure utility by enumerating the mixed players' supports."""
    mixed = as_mixed(profile, roster.action_counts)
    supports = [[(a, w) for a, w in enumerate(vec) if w] for vec in mixed]
    free = [n for n, s in enumerate(supports) if len(s) > 1]
    base = [s[0][0] for s in supports]
    total = ZERO
    for combo in itertools.product(*(supports[n] for n in free)):
        prof = list(base)
        w = ONE
        for n, (a, pw) in zip(free, combo):
            prof[n] = a
            w *= pw
        total += w * gadget_utility(roster, prof)
    return total


# ---- polytensor expansion ----------------------------------------------------

class GameTooLarge(ValueError):
    def __init__(self, entries: int, limit: int):
        super().__init__(f"expansion needs about {entries} tensor entries (limit {limit})")
        self.entries = entries
        self.limit = limit


class _Poly:
    """Sum of dense tables, each over a sorted tuple of players; () holds the constant."""

    def __init__(self, counts, dry=False):
        self.counts = counts
        self.dry = dry
        self.terms = {}

    def add(self, S, table):
        S = tuple(S)
        if self.dry:
            self.terms[S] = None
            return
        if not isinstance(table, np.ndarray):
            table = np.array(table, dtype=object)
        if S in self.terms:
            table = self.terms[S] + table
            if not isinstance(table, np.ndarray):
                table = np.array(table, dtype=object)
        self.terms[S] = table

    def add_const(self, c):
        self.add((), np.array(Q(c), dtype=object))

    def table(self, S, fn):
        """Add a table over S whose entry at action tuple a is fn(*a)."""
        if self.dry:
            self.add(S, None)
            return
        shape = tuple(self.counts[n] for n in S)
        arr = np.empty(shape, dtype=object)
        for idx in np.ndindex(*shape):
            arr[idx] = fn(*idx)
        self.add(S, arr)

    def scaled(self, c):
        out = _Poly(self.counts, self.dry)
        c = Q(c)
        for S, arr in self.terms.items():
            out.add(S, None if self.dry else arr * c)
        return out

    def extend(self, other, c=ONE):
        c = Q(c)
        for S, arr in other.terms.items():
            self.add(S, None if self.dry else (arr if c == 1 else arr * c))

    def _expand(self, arr, S, U):
        return arr.reshape(tuple(self.counts[n] if n in S else 1 for n in U))

    def times(self, other):
        out = _Poly(self.counts, self.dry)
        for S1, a1 in self.terms.items():
            for S2, a2 in other.terms.items():
                U = tuple(sorted(set(S1) | set(S2)))
                if self.dry:
                    out.add(U, None)
                else:
                    out.add(U, self._expand(a1, S1, U) * self._expand(a2, S2, U))
        return out

    def entries(self) -> int:
        total = 0
        for S in self.terms:
            size = 1
            for n in S:
                size *= self.counts[n]
            total += size
        return total


def _team_forms(roster: GadgetRoster, poly_of, t: int):
    """(value form, [tilde forms]) for team t as sums of (bit, veto) tables."""
    K = roster.K
    bits = list(roster.team_bits(t))
    veto = roster.team_veto(t)

    def realized(k):
        def fn(b, a):
            s = _suffix_bit(a, k, K)
            return pow2(-k) * (b if s is None else s)
        return fn

    value = poly_of()
    pieces = []
    for k in range(1, K + 1):
        piece = poly_of()
        piece.table((bits[k - 1], veto), realized(k))
        pieces.append(piece)
        value.extend(piece)
    tildes = []
    for k in range(1, K + 1):
        tl = poly_of()
        for k2, piece in enumerate(pieces, 1):
            if k2 != k:
                tl.extend(piece)
        tl.table((bits[k - 1],), lambda b, k=k: pow2(-k) * b)
        tildes.append(tl)
    return value, tildes


def _expand_utility(roster: GadgetRoster, dry: bool) -> _Poly:
    prm = roster.params
    K = roster.K
    counts = roster.action_counts
    G = roster.guide
    poly_of = lambda: _Poly(counts, dry)  # noqa: E731
    total = poly_of()
    forms = [_team_forms(roster, poly_of, t) for t in range(8)]

    def guide_table(fn):
        gp = poly_of()
        gp.table((G,), fn)
        return gp

    for t, (i, j) in enumerate(TEAMS):
        xval, xtil = forms[t]
        yval, ytil = forms[5 + j]
        shift = i * prm.eps_S
        diff = poly_of()
        diff.extend(xval)
        diff.extend(yval, -1)
        diff.add_const(-shift)
        own = set(samples_of_team((i, j)))
        weighted = diff.times(diff)
        for k in range(K):
            d2 = poly_of()
            d2.extend(xval)
            d2.extend(ytil[k], -1)
            d2.add_const(-shift)
            weighted.extend(d2.times(d2), prm.eps_T)
        total.extend(weighted.times(guide_table(lambda g, own=own: -(3 + (1 if g in own else 0)))))
        for k in range(K):
            d3 = poly_of()
            d3.extend(xtil[k])
            d3.extend(yval, -1)
            d3.add_const(-shift)
            total.extend(d3.times(d3), -3 * prm.eps_T)
    for t in range(8):
        total.table((roster.team_veto(t),), lambda a: prm.eps_T * (a // VETO_TYPES + 1))

    c = roster.circuit
    coef = []
    for j in J_SET:
        yval, ytil = forms[5 + j]
        cf = poly_of()
        cf.extend(yval, prm.eps_G)
        for k in range(K):
            cf.extend(ytil[k], prm.eps_T * prm.eps_G)
        coef.append(cf)
    for pn, p in enumerate(SAMPLES):
        wp = lambda l, pn=pn: roster.wire_player(pn, l)  # noqa: E731
        ind = guide_table(lambda g, pn=pn: 1 if g == pn else 0)
        pot = poly_of()
        for k, w in enumerate(c.phi_bits, 1):
            pot.table((wp(w),), lambda v, k=k: prm.eps_P * pow2(-k) * v)
        total.extend(pot.times(ind))
        for j in range(2):
            s = c.delta_sign[j]
            delta = poly_of()
            for k, w in enumerate(c.delta_bits[j], 1):
                if w == s:
                    delta.table((wp(w),), lambda v, k=k: -pow2(-k) * v)
                else:
                    S = tuple(sorted((wp(s), wp(w))))
                    if S[0] == wp(s):
                        delta.table(S, lambda sv, mv, k=k: pow2(-k) * (1 - 2 * sv) * mv)
                    else:
                        delta.table(S, lambda mv, sv, k=k: pow2(-k) * (1 - 2 * sv) * mv)
            total.extend(coef[j].times(delta.times(ind)))
        circ = poly_of()
        for w in c.wires:
            weight = roster.wire_weight[w.id]
            if w.kind == "INPUT":
                jj, k = roster.input_of[w.id]
                t = team_of_sample(p, jj)
                bit = list(roster.team_bits(t))[k - 1]
                veto = roster.team_veto(t)

                def wrong_in(b, a, v, k=k, weight=weight):
                    s = _suffix_bit(a, k, K)
                    return weight * int(v != (b if s is None else s))
                circ.table((bit, veto, wp(w.id)), wrong_in)
            else:
                srcs = sorted(set(w.inputs) | {w.id})
                players = tuple(wp(s) for s in srcs)

                def wrong_gate(*vals, w=w, srcs=srcs, weight=weight):
                    look = dict(zip(srcs, vals))
                    return weight * int(look[w.id] != gate_output(w.kind, [look[i] for i in w.inputs]))
                circ.table(players, wrong_gate)
        scale = guide_table(lambda g, pn=pn: -prm.eps_C * (prm.eps_T + (1 if g == pn else 0)))
        total.extend(circ.times(scale))
    return total


def estimate_polytensor_entries(roster: GadgetRoster) -> int:
    return _expand_utility(roster, dry=True).entries() + roster.action_counts[roster.guide]


def to_polytensor(roster: GadgetRoster, max_entries: int = 5_000_000) -> PolytensorGame:
    """Order-5 identical-interest game whose tensor sum equals the gadget utility."""
    estimate = estimate_polytensor_entries(roster)
    if max_entries is not None and estimate > max_entries:
        raise GameTooLarge(estimate, max_entries)
    poly = _expand_utility(roster, dry=False)
    const = poly.terms.pop((), None)
    G = roster.guide
    if const is not None:
        guide_key = (G,)
        shift = np.full(roster.action_counts[G], const.item(), dtype=object)
        poly.add(guide_key, shift)
    tensors = [(S, list(arr.ravel())) for S, arr in sorted(poly.terms.items())]
    return PolytensorGame(roster.action_counts, tensors, order=5)


# ---- diagnostics and decoding -------------------------------------------------

IMITATION_CLASSES = ("strongly-perfect", "perfect", "approx-perfect", "mild", "none")


@dataclass(frozen=True)
class TeamDiagnostics:
    team: tuple
    target: object
    surrogate: object
    mean: object
    mse: object
    guide_mass: object
    imitation: str


@dataclass(frozen=True)
class SampleDiagnostics:
    sample: tuple
    wrong_mass: object
    correctness: str
    decoded: tuple = None


@dataclass(frozen=True)
class Diagnostics:
    k_C: int
    teams: tuple
    problematic: tuple  # per dimension: i* or None
    errors: tuple  # per dimension: E_j
    expected_delta: tuple
    samples: tuple
    y_means: tuple = field(default=())


def _binary_prefix(value, n):
    """First n binary digits of value in [0,1), or None outside that range."""
    if value < 0 or value >= 1:
        return None
    scaled = value * (1 << n)
    whole = scaled.numerator // scaled.denominator
    return tuple((whole >> (n - k)) & 1 for k in range(1, n + 1))


def diagnostics(roster: GadgetRoster, profile) -> Diagnostics:
    prm = roster.params
    K, N_in = roster.K, prm.N_in
    k1, k2, k3 = prm.kappa
    mixed = as_mixed(profile, roster.action_counts)
    mom = [_team_moments_from_profile(roster, mixed, t) for t in range(8)]
    guide = mixed[roster.guide]
    kC = prm.k_C
    teams = []
    for t, (i, j) in enumerate(TEAMS):
        x = mom[t]
        target = mom[5 + j].mean + i * prm.eps_S
        veto = mixed[roster.team_veto(t)]
        support = [a for a, q in enumerate(veto) if q]
        m_min = min(veto_of_index(a, K)[0] for a in support)
        if m_min < kC and m_min <= K:
            best = max((veto[a], -a) for a in support if veto_of_index(a, K)[0] == m_min)
            m, ty = veto_of_index(-best[1], K)
            bits = [mixed[n][1] for n in roster.team_bits(t)]
            prefix = sum((pow2(-k) * bits[k - 1] for k in range(1, m)), ZERO)
            tail = veto_suffix_bits(ty, K - m + 1)
            surrogate = prefix + sum((pow2(-(m + o)) for o, b in enumerate(tail) if b), ZERO)
        else:
            surrogate = x.mean
        mse = (x.mean - target) ** 2 + x.var
        mass = sum((guide[n] for n in samples_of_team((i, j))), ZERO)
        if mse <= k1 * pow2(-2 * K):
            cls = "perfect"
            digits = _binary_prefix(target, N_in)
            pure_bits = all(mixed[n][1] in (0, 1) for n in list(roster.team_bits(t))[:N_in])
            unvetoed = all(veto_of_index(a, K)[0] > N_in for a in support)
            if digits is not None and pure_bits and unvetoed:
                if all(mixed[n][1] == d for n, d in zip(list(roster.team_bits(t))[:N_in], digits)):
                    cls = "strongly-perfect"
        elif mse <= k2 * prm.eps_G:
            cls = "approx-perfect"
        elif mse <= k3 * prm.eps_C_bar:
            cls = "mild"
        else:
            cls = "none"
        teams.append(TeamDiagnostics((i, j), target, surrogate, x.mean, mse, mass, cls))

    problematic, errors = [], []
    for j in J_SET:
        bad = [d for d in teams if d.team[1] == j and d.imitation not in ("strongly-perfect", "perfect")]
        if len(bad) == 1:
            problematic.append(bad[0].team[0])
            errors.append(bad[0].mean - bad[0].target)
        else:
            problematic.append(None)
            errors.append(ZERO)

    exp_delta = [ZERO, ZERO]
    samples = []
    limit = prm.eps_P / prm.eps_C
    for pn, p in enumerate(SAMPLES):
        mass = sum((_wire_wrong_probability(roster, mixed, pn, l, mom) for l in range(roster.L)), ZERO)
        cls = "correct" if mass == 0 else "weakly-correct" if mass <= limit else "incorrect"
        samples.append(SampleDiagnostics(p, mass, cls, _sample_point(roster, mixed, pn)))
        if guide[pn]:
            _, deltas = _expected_outputs(roster, mixed, pn)
            for j in range(2):
                exp_delta[j] += guide[pn] * deltas[j]
    return Diagnostics(kC, tuple(teams), tuple(problematic), tuple(errors), tuple(exp_delta), tuple(samples),
                       tuple(mom[5 + j].mean for j in J_SET))


def _sample_point(roster, mixed, pn):
    """Grid point read from the input wires of sample pn, or None if any is mixed."""
    point = []
    for row in roster.circuit.input_wires:
        v = ZERO
        for k, wid in enumerate(row, 1):
            q = mixed[roster.wire_player(pn, wid)][1]
            if q not in (0, 1):
                return None
            v += pow2(-k) * q
        point.append(v)
    return tuple(point)


class DecodeUndefined(ValueError):
    pass


@dataclass(frozen=True)
class Decoded:
    sample: tuple
    grid_point: tuple
    lifted: tuple
    verdict: bool
    violation: tuple = None
    deltas: tuple = ()


def decode_solution(roster: GadgetRoster, profile, arith: ArithmeticCircuit = None) -> Decoded:
    """Read the grid point of a guide-supported sample with pure inputs and lift it."""
    arith = arith or roster.arith
    if arith is None:
        raise ValueError("decoding needs the arithmetic circuit")
    mixed = as_mixed(profile, roster.action_counts)
    guide = mixed[roster.guide]
    for pn in sorted(range(len(SAMPLES)), key=lambda n: (-guide[n], n)):
        if not guide[pn]:
            break
        point = _sample_point(roster, mixed, pn)
        if point is None:
            continue
        res = lift_grid_solution(point, roster.params.N_in, roster.params.eps_R, arith)
        return Decoded(SAMPLES[pn], point, res.point, res.verdict, res.violation, res.deltas)
    raise DecodeUndefined("decode undefined: no guide-supported sample has pure input players")


# ---- end-to-end ----------------------------------------------------------------

@dataclass
class Reduction:
    instance: GDInstance
    params: ReductionParams
    boolean: BooleanCircuit
    roster: GadgetRoster
    validation: ValidationReport
    polytensor: PolytensorGame = None
    congestion: object = None
    skipped: str = None

    def decode(self, profile) -> Decoded:
        """Decode a gadget profile, or a congestion/polytensor profile (same player order)."""
        return decode_solution(self.roster, profile, self.instance.circuit)


def reduce_end_to_end(instance: GDInstance, mode: str = "desk", K: int = 8, N_in: int = 3,
                      max_entries: int = 5_000_000, emit_games: bool = True, overrides: dict = None) -> Reduction:
    """Potential -> boolean circuit -> gadget roster -> polytensor -> congestion game."""
    if mode == "desk":
        grid = derive_params(instance, N_in_override=N_in, mode="desk")
        bc, N_out, D = compile_with_depth_feedback(instance.circuit, grid.N_in)
        D = max(D, 1)  # a gate-free circuit still needs a positive depth weight
        params = desk_params(D, N_out, K=K, N_in=grid.N_in, eps=instance.eps, alpha=instance.alpha)
        params = replace(params, eps_R=grid.eps_R)
    elif mode == "strict":
        grid = derive_params(instance)
        if grid.N_in > 12:
            raise GameTooLarge(_strict_size_hint(grid.N_in), max_entries)
        bc, N_out, D = compile_with_depth_feedback(instance.circuit, grid.N_in)
        D = max(D, 1)  # a gate-free circuit still needs a positive depth weight
        params = strict_params(instance, D, N_out, grid.N_in)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    if overrides:
        params = replace(params, **overrides)
    report = validate_params(params)
    if mode == "strict" and not report.passed:
        raise ValueError("strict parameters violate: " + ", ".join(report.deviations))
    roster = build_roster(params, bc, instance.circuit)
    red = Reduction(instance, params, bc, roster, report)
    if not emit_games:
        red.skipped = "game emission disabled"
        return red
    try:
        red.polytensor = to_polytensor(roster, max_entries)
    except GameTooLarge as exc:
        if mode == "strict":
            raise
        red.skipped = str(exc)
        return red
    red.congestion = polytensor_to_congestion(red.polytensor)
    return red


def _strict_size_hint(N_in: int) -> int:
    """Lower bound on the expansion size for a strict run: K exceeds 2 N_in bits."""
    K = 2 * N_in
    V = VETO_TYPES * (K + 1)
    return 6 * K * K * 4 * V * V * len(SAMPLES)


# ---- the worked two-dimensional instance -------------------------------------

def scenario_circuit() -> ArithmeticCircuit:
    """phi(x) = 1 - (x1 - 3/8)^2 - (x2 - 1/2)^2."""
    return ArithmeticCircuit.from_ops(2, [
        ("c1", "CONST", [], Q(3, 8)),
        ("c2", "CONST", [], Q(1, 2)),
        ("one", "CONST", [], ONE),
        ("d1", "SUB", ["x1", "c1"]),
        ("d2", "SUB", ["x2", "c2"]),
        ("s1", "MUL", ["d1", "d1"]),
        ("s2", "MUL", ["d2", "d2"]),
        ("s", "ADD", ["s1", "s2"]),
        ("phi", "SUB", ["one", "s"]),
    ], output="phi", alpha=2)


def scenario_instance() -> GDInstance:
    return GDInstance(scenario_circuit(), Q(1, 2), Q(2))


def all_zeros_profile(roster: GadgetRoster) -> list:
    """Every bit and wire 0, no vetoes, guide on the centre sample."""
    return compose_profile(roster, {}, (0, 0), wires=[[0] * roster.L] * len(SAMPLES))
