"""Incremental utility bookkeeping for the gadget game.

The common utility is regrouped per x-team, per y-team and per sample so
that the gain of a unilateral deviation only touches a handful of cached
quantities.  ``apply`` returns the players whose best response may have
changed, which lets better-reply dynamics skip everyone else.
"""
from __future__ import annotations

from dataclasses import dataclass

from .gadget import (J_SET, SAMPLES, TEAMS, VETO_TYPES, GadgetRoster, samples_of_team, team_index,
                     team_of_sample, veto_of_index)
from .numerics import ZERO, Q, pow2, veto_suffix_bits
from .synthesis import gate_output


@dataclass(frozen=True)
class _Stats:
    value: object
    dev: object  # sum over k of (tilde_k - value)
    dev2: object  # sum over k of (tilde_k - value)^2
    realized: tuple
    m: int


class GadgetEngine:
    def __init__(self, roster: GadgetRoster, profile):
        if len(profile) != roster.num_players:
            raise ValueError("profile does not match the roster")
        self.roster = roster
        self.num_players = roster.num_players
        self.action_counts = roster.action_counts
        prm = self.params = roster.params
        K = self.K = roster.K
        self.p2 = [None] + [pow2(-k) for k in range(1, K + 1)]
        self.p4 = [None] + [pow2(-2 * k) for k in range(1, K + 1)]
        self.denom = 1 << K
        self.suffix = {}
        for a in range(VETO_TYPES * (K + 1)):
            m, t = veto_of_index(a, K)
            self.suffix[a] = (m, veto_suffix_bits(t, K - m + 1) if m <= K else ())
        self.own = [frozenset(samples_of_team(r)) for r in TEAMS]
        self.prof = list(profile)
        for n, a in enumerate(self.prof):
            if not 0 <= a < self.action_counts[n]:
                raise ValueError(f"player {roster.player_id(n)}: action {a} out of range")
        self.c_eT = prm.eps_C * prm.eps_T
        self.stats = [self._team_stats(t, None, None) for t in range(8)]
        c = roster.circuit
        self.L = roster.L
        self.values = [roster.sample_values(self.prof, p) for p in range(len(SAMPLES))]
        self.wrong = [[0] * self.L for _ in SAMPLES]
        self.ws = [ZERO] * len(SAMPLES)
        self.wrong_count = [0] * len(SAMPLES)
        for p in range(len(SAMPLES)):
            for l in range(self.L):
                self.wrong[p][l] = self._is_wrong(p, l)
                if self.wrong[p][l]:
                    self.ws[p] += roster.wire_weight[l]
                    self.wrong_count[p] += 1
        self.phi = [ZERO] * len(SAMPLES)
        self.delta = [[ZERO, ZERO] for _ in SAMPLES]
        for p in range(len(SAMPLES)):
            self.phi[p], d = c.decode(self.values[p])
            self.delta[p] = list(d)
        self.input_rows = [list(row[: prm.N_in]) for row in c.input_wires]
        self.inputs_of = [tuple(sorted(set(w.inputs))) for w in c.wires]
        self.total = self.utility()

    # ---- team statistics --------------------------------------------------------
    def _team_stats(self, t, changed_player, action):
        r = self.roster
        K = self.K
        bits = [self.prof[n] for n in r.team_bits(t)]
        veto = self.prof[r.team_veto(t)]
        if changed_player is not None:
            if changed_player == r.team_veto(t):
                veto = action
            else:
                bits[changed_player - r.team_bits(t)[0]] = action
        m, suffix = self.suffix[veto]
        realized = bits[: m - 1] + list(suffix) if m <= K else bits
        n = 0
        dev = dev2 = ZERO
        for k in range(1, K + 1):
            rb = realized[k - 1]
            if rb:
                n += 1 << (K - k)
            d = bits[k - 1] - rb
            if d:
                dev += d * self.p2[k]
                dev2 += self.p4[k]
        return _Stats(Q(n, self.denom), dev, dev2, tuple(realized), m)

    # ---- utility pieces ------------------------------------------------------------
    def _team_term(self, t, xs, ys, g):
        prm = self.params
        i, _ = TEAMS[t]
        D = xs.value - ys.value - i * prm.eps_S
        w = 4 if g in self.own[t] else 3
        D2 = D * D
        K = self.K
        return (-w * D2
                - 3 * prm.eps_T * (K * D2 + 2 * D * xs.dev + xs.dev2)
                - prm.eps_T * w * (K * D2 - 2 * D * ys.dev + ys.dev2)
                + prm.eps_T * xs.m)

    def _coef(self, ys):
        prm = self.params
        return prm.eps_G * ys.value + prm.eps_T * prm.eps_G * (self.K * ys.value + ys.dev)

    def _y_term(self, j, ys, g):
        return self._coef(ys) * self.delta[g][j - 1] + self.params.eps_T * ys.m

    def _is_wrong(self, p, l, override=None):
        """Wrong-computation flag of wire l in sample p; override = (wire, value) or team stats."""
        r = self.roster
        vals = self.values[p]
        w = r.circuit.wires[l]
        if w.kind == "INPUT":
            j, k = r.input_of[l]
            t = team_of_sample(SAMPLES[p], j)
            realized = self.stats[t].realized
            if override is not None and override[0] == "team" and override[1] == t:
                realized = override[2].realized
            mine = vals[l]
            if override is not None and override[0] == "wire" and override[1] == l:
                mine = override[2]
            return int(mine != realized[k - 1])
        if override is not None and override[0] == "wire":
            ow, ov = override[1], override[2]
            get = lambda i: ov if i == ow else vals[i]  # noqa: E731
        else:
            get = vals.__getitem__
        return int(get(l) != gate_output(w.kind, [get(i) for i in w.inputs]))

    def _input_circuit(self, t, realized):
        """Circuit term of the input wires that read team t."""
        prm = self.params
        r = self.roster
        _, j = TEAMS[t]
        g = self.prof[r.guide]
        total = ZERO
        row = self.input_rows[j - 1]
        for p in self.own[t]:
            vals = self.values[p]
            wrong = ZERO
            for k, wid in enumerate(row, 1):
                if vals[wid] != realized[k - 1]:
                    wrong += r.wire_weight[wid]
            if wrong:
                total -= (self.c_eT + (prm.eps_C if p == g else 0)) * wrong
        return total

    def utility(self):
        """Common utility recomputed from the caches."""
        prm = self.params
        g = self.prof[self.roster.guide]
        total = ZERO
        for t, (_, j) in enumerate(TEAMS):
            total += self._team_term(t, self.stats[t], self.stats[5 + j], g)
        for j in J_SET:
            total += self._y_term(j, self.stats[5 + j], g)
        for p in range(len(SAMPLES)):
            total -= (self.c_eT + (prm.eps_C if p == g else 0)) * self.ws[p]
        total += prm.eps_P * self.phi[g]
        return total

    # ---- deviation gains -------------------------------------------------------------
    def _local_team(self, t, stats, g=None):
        g = self.prof[self.roster.guide] if g is None else g
        if t < 6:
            _, j = TEAMS[t]
            return self._team_term(t, stats, self.stats[5 + j], g) + self._input_circuit(t, stats.realized)
        j = t - 5
        total = self._y_term(j, stats, g)
        for i in (-1, 0, 1):
            x = team_index((i, j))
            total += self._team_term(x, self.stats[x], stats, g)
        return total

    def _outputs_with(self, p, l, v):
        """(phi, deltas) of sample p if wire l took value v."""
        roles = self.roster.output_roles.get(l)
        phi = self.phi[p]
        deltas = list(self.delta[p])
        old = self.values[p][l]
        if not roles or v == old:
            return phi, deltas
        c = self.roster.circuit
        vals = self.values[p]
        redo = set()
        for role in roles:
            if role[0] == "phi":
                phi += (v - old) * pow2(-role[1])
            elif role[0] == "sign":
                redo.add(role[1])
        for role in roles:
            if role[0] == "mag" and role[1] not in redo:
                j, k = role[1], role[2]
                sign = vals[c.delta_sign[j - 1]]
                deltas[j - 1] += (v - old) * pow2(-k) * (1 - 2 * sign)
        for j in redo:
            get = lambda i: v if i == l else vals[i]  # noqa: E731
            mag = sum((pow2(-k) for k, w in enumerate(c.delta_bits[j - 1], 1) if get(w)), ZERO)
            deltas[j - 1] = -mag if get(c.delta_sign[j - 1]) else mag
        return phi, deltas

    def _local_wire(self, p, l, v):
        prm = self.params
        r = self.roster
        g = self.prof[r.guide]
        weight = self.c_eT + (prm.eps_C if p == g else 0)
        override = ("wire", l, v)
        wrong = r.wire_weight[l] * self._is_wrong(p, l, override)
        for c in r.consumers[l]:
            wrong += r.wire_weight[c] * self._is_wrong(p, c, override)
        total = -weight * wrong
        if p == g and l in r.output_roles:
            phi, deltas = self._outputs_with(p, l, v)
            total += prm.eps_P * phi
            for j in J_SET:
                total += self._coef(self.stats[5 + j]) * deltas[j - 1]
        return total

    def _local_guide(self, g):
        prm = self.params
        total = ZERO
        for t, (_, j) in enumerate(TEAMS):
            total += self._team_term(t, self.stats[t], self.stats[5 + j], g)
        for j in J_SET:
            total += self._coef(self.stats[5 + j]) * self.delta[g][j - 1]
        total -= prm.eps_C * self.ws[g]
        total += prm.eps_P * self.phi[g]
        return total

    def gain(self, player, action):
        """Exact change of the common utility if ``player`` switches to ``action``."""
        old = self.prof[player]
        if action == old:
            return ZERO
        kind = self.roster.kind(player)
        if kind[0] in ("bit", "veto"):
            t = kind[1]
            new_stats = self._team_stats(t, player, action)
            return self._local_team(t, new_stats) - self._local_team(t, self.stats[t])
        if kind[0] == "wire":
            _, p, l = kind
            return self._local_wire(p, l, action) - self._local_wire(p, l, old)
        return self._local_guide(action) - self._local_guide(old)

    def best_response(self, player):
        """(action, gain) maximizing the gain; ties go to the lowest action index."""
        best_a, best = self.prof[player], ZERO
        kind = self.roster.kind(player)
        if kind[0] in ("bit", "veto"):
            t = kind[1]
            base = self._local_team(t, self.stats[t])
            for a in range(self.action_counts[player]):
                if a == self.prof[player]:
                    continue
                gain = self._local_team(t, self._team_stats(t, player, a)) - base
                if gain > best or (gain == best and gain > 0 and a < best_a):
                    best_a, best = a, gain
            return best_a, best
        if kind[0] == "guide":
            base = self._local_guide(self.prof[player])
            for a in range(self.action_counts[player]):
                if a == self.prof[player]:
                    continue
                gain = self._local_guide(a) - base
                if gain > best or (gain == best and gain > 0 and a < best_a):
                    best_a, best = a, gain
            return best_a, best
        other = 1 - self.prof[player]
        gain = self.gain(player, other)
        return (other, gain) if gain > 0 else (self.prof[player], ZERO)

    # ---- applying moves -------------------------------------------------------------
    def apply(self, player, action):
        """Play the deviation, update caches and return players to re-examine."""
        r = self.roster
        old = self.prof[player]
        if action == old:
            return []
        self.total += self.gain(player, action)
        kind = r.kind(player)
        self.prof[player] = action
        marks = [r.guide]
        if kind[0] in ("bit", "veto"):
            t = kind[1]
            self.stats[t] = self._team_stats(t, None, None)
            marks += r.team_players(t)
            if t < 6:
                _, j = TEAMS[t]
                marks += r.team_players(5 + j)
                for p in self.own[t]:
                    for wid in self.input_rows[j - 1]:
                        self._refresh_wrong(p, wid)
                        marks.append(r.wire_player(p, wid))
            else:
                j = t - 5
                for i in (-1, 0, 1):
                    marks += r.team_players(team_index((i, j)))
                g = self.prof[r.guide]
                c = r.circuit
                for wid in (c.delta_sign[j - 1],) + tuple(c.delta_bits[j - 1]):
                    marks.append(r.wire_player(g, wid))
        elif kind[0] == "wire":
            _, p, l = kind
            phi, deltas = self._outputs_with(p, l, action)
            self.values[p][l] = action
            self.phi[p], self.delta[p] = phi, deltas
            self._refresh_wrong(p, l)
            for c in r.consumers[l]:
                self._refresh_wrong(p, c)
            marks.append(player)
            touched = {l}
            touched.update(r.consumers[l])
            touched.update(self.inputs_of[l])
            for c in r.consumers[l]:
                touched.update(self.inputs_of[c])
            roles = r.output_roles.get(l, ())
            circ = r.circuit
            for role in roles:
                if role[0] == "sign":
                    touched.update(circ.delta_bits[role[1] - 1])
                elif role[0] == "mag":
                    touched.add(circ.delta_sign[role[1] - 1])
            marks += [r.wire_player(p, w) for w in touched]
            if l in r.input_of:
                j, _ = r.input_of[l]
                marks += r.team_players(team_of_sample(SAMPLES[p], j))
            if roles:
                for role in roles:
                    if role[0] in ("sign", "mag"):
                        marks += r.team_players(5 + role[1])
        else:
            for t in range(6):
                if old in self.own[t] or action in self.own[t]:
                    marks += r.team_players(t)
            marks += r.team_players(6) + r.team_players(7)
            for p in (old, action):
                marks += [r.wire_player(p, l) for l in range(self.L)]
        return marks

    def _refresh_wrong(self, p, l):
        now = self._is_wrong(p, l)
        if now != self.wrong[p][l]:
            w = self.roster.wire_weight[l]
            self.ws[p] += w if now else -w
            self.wrong_count[p] += 1 if now else -1
            self.wrong[p][l] = now

    @property
    def profile(self):
        return tuple(self.prof)
