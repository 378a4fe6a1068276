import itertools
import random

import pytest

from gdcongestion.dynamics import (
    DynamicsConfig, IdenticalInterestOracle, Step, Trace, annotate_trace, better_reply_step, run_dynamics,
    verify_pure_nash,
)
from gdcongestion.gadget import (
    SAMPLES, build_roster, desk_params, gadget_utility, perfect_imitation_profile,
)
from gdcongestion.games import PolytensorGame, nash_regret, random_identical_interest, random_polytensor
from gdcongestion.numerics import Q, VetoAction, VetoType, pow2
from gdcongestion.potential import ArithmeticCircuit
from gdcongestion.synthesis import compile_with_depth_feedback

COORD = PolytensorGame([2, 2], [((0, 1), [1, 0, 0, 1])])


def deviations(game, prof):
    for p in range(game.num_players):
        for a in range(game.action_counts[p]):
            if a != prof[p]:
                yield p, a, game.deviation_gain(prof, p, a)


def naive_best(game, prof, p):
    """Lowest action among the strictly best deviations of p, or None."""
    gains = [(g, -a) for q, a, g in deviations(game, prof) if q == p and g > 0]
    return None if not gains else -max(gains)[1]


class TestStep:
    def test_nash_gives_none(self):
        assert better_reply_step(COORD, (1, 1)) is None

    def test_coordination_moves_onto_diagonal(self):
        p, a = better_reply_step(COORD, (0, 1))
        prof = [0, 1]
        prof[p] = a
        assert prof[0] == prof[1]

    def test_best_improving_is_argmax(self):
        rng = random.Random(1)
        cfg = DynamicsConfig("best-improving")
        for _ in range(30):
            g = random_polytensor(rng, 3, 3, 2, 3)
            prof = tuple(rng.randrange(c) for c in g.action_counts)
            got = better_reply_step(g, prof, cfg)
            gains = list(deviations(g, prof))
            top = max((gn for _, _, gn in gains), default=0)
            if top <= 0:
                assert got is None
            else:
                assert g.deviation_gain(prof, *got) == top

    def test_round_robin_start(self):
        g = PolytensorGame([2, 2, 2], [((0,), [0, 1]), ((2,), [0, 1])])
        assert better_reply_step(g, (0, 0, 0), DynamicsConfig("round-robin"), start=1) == (2, 1)
        assert better_reply_step(g, (0, 0, 0)) == (0, 1)


class TestRun:
    def test_already_optimal(self):
        tr = run_dynamics(COORD, (1, 1))
        assert tr.status == "pure-nash" and tr.steps == [] and tr.final_utility is None

    def test_single_step(self):
        tr = run_dynamics(COORD, (0, 1))
        assert tr.status == "pure-nash" and len(tr.steps) == 1
        assert tr.final[0] == tr.final[1]

    def test_budget_exhausted(self):
        g = PolytensorGame([3], [((0,), [0, 1, 2])])
        tr = run_dynamics(g, (0,), DynamicsConfig(max_steps=1, policy="round-robin"))
        tr2 = run_dynamics(PolytensorGame([2, 2], [((0,), [0, 1]), ((1,), [0, 1])]), (0, 0),
                           DynamicsConfig(max_steps=1))
        assert tr.status == "pure-nash" and tr.final == (2,)  # best response jumps straight to the top
        assert tr2.status == "budget-exhausted" and len(tr2.steps) == 1

    def test_config_validation(self):
        with pytest.raises(ValueError):
            DynamicsConfig(policy="random")
        with pytest.raises(ValueError):
            DynamicsConfig(max_steps=0)
        with pytest.raises(ValueError):
            DynamicsConfig(threshold=-1)

    @pytest.mark.parametrize("policy", ["first-improving", "best-improving", "round-robin"])
    def test_terminal_soundness(self, policy):
        rng = random.Random(hash(policy) % 1000)
        for _ in range(25):
            g = random_identical_interest(rng, rng.randint(1, 4), 4)
            init = tuple(rng.randrange(c) for c in g.action_counts)
            tr = run_dynamics(g, init, DynamicsConfig(policy))
            assert tr.status == "pure-nash"
            assert all(s.after > s.before for s in tr.steps)
            assert nash_regret(g, list(tr.final)).max_regret == 0
            assert verify_pure_nash(g, tr.final)

    def test_first_improving_matches_naive_scan(self):
        rng = random.Random(11)
        for _ in range(20):
            g = random_polytensor(rng, 4, 3, 2, 4)
            prof = [rng.randrange(c) for c in g.action_counts]
            tr = run_dynamics(g, prof)
            for s in tr.steps:
                movers = [p for p in range(g.num_players) if naive_best(g, prof, p) is not None]
                assert s.player == movers[0] and s.new == naive_best(g, prof, s.player)
                prof[s.player] = s.new
            assert tuple(prof) == tr.final

    def test_round_robin_matches_cyclic_scan(self):
        rng = random.Random(12)
        for _ in range(20):
            g = random_polytensor(rng, 4, 3, 2, 4)
            prof = [rng.randrange(c) for c in g.action_counts]
            tr = run_dynamics(g, prof, DynamicsConfig("round-robin"))
            nxt = 0
            n = g.num_players
            for s in tr.steps:
                order = [(nxt + k) % n for k in range(n)]
                mover = next(p for p in order if naive_best(g, prof, p) is not None)
                assert s.player == mover and s.new == naive_best(g, prof, mover)
                prof[mover] = s.new
                nxt = mover + 1
            assert tuple(prof) == tr.final

    def test_best_improving_matches_global_argmax(self):
        rng = random.Random(13)
        for _ in range(20):
            g = random_polytensor(rng, 4, 3, 2, 4)
            prof = [rng.randrange(c) for c in g.action_counts]
            tr = run_dynamics(g, prof, DynamicsConfig("best-improving"))
            for s in tr.steps:
                top = max(gn for _, _, gn in deviations(g, prof))
                assert g.deviation_gain(prof, s.player, s.new) == top
                prof[s.player] = s.new

    def test_callback_and_function_oracle(self):
        table = {prof: Q(sum(prof)) for prof in itertools.product(range(3), range(2))}
        game = IdenticalInterestOracle((3, 2), table.__getitem__)
        seen = []
        tr = run_dynamics(game, (0, 0), on_step=seen.append)
        assert tr.final == (2, 1) and seen == tr.steps


@pytest.fixture(scope="module")
def roster():
    arith = ArithmeticCircuit.from_ops(2, [], output="x1")
    bc, N_out, D = compile_with_depth_feedback(arith, 2)
    return build_roster(desk_params(D, N_out, K=3, N_in=2, eps_S=Q(1, 8)), bc, arith)


class TestAnnotate:
    def scripted(self, roster):
        """Veto the y_1 suffix, match the vetoed bit, lift the veto, then move the guide."""
        K = roster.K
        prof = perfect_imitation_profile(roster, (Q(3, 8), Q(1, 2)))  # y_1 bits 011
        veto, bits = roster.team_veto(6), list(roster.team_bits(6))
        moves = [(veto, VetoAction(1, VetoType.SUF10).index(K)), (bits[0], 1), (bits[1], 0), (bits[2], 0),
                 (veto, VetoAction(K + 1, VetoType.ALL0).index(K)), (roster.guide, 0)]
        steps, cur = [], list(prof)
        for n, a in moves:
            before = gadget_utility(roster, cur)
            old, cur[n] = cur[n], a
            steps.append(Step(n, old, a, before, gadget_utility(roster, cur)))
        return Trace(tuple(prof), steps, "budget-exhausted", tuple(cur))

    def test_narrative_quantities(self, roster):
        notes = annotate_trace(roster, self.scripted(roster))
        y1 = [a.team_values["y1"] for a in notes]
        assert y1[0] == Q(3, 8) and y1[1] == Q(1, 2)  # the veto moves y_1 up by 2^-3
        assert y1[1] - y1[0] == pow2(-roster.K)
        assert y1[2:] == [Q(1, 2)] * 5  # vetoed bits flip without moving the value
        assert notes[5].team_values == notes[6].team_values
        assert notes[5].guide == (0, 0) and notes[6].guide == SAMPLES[0]
        assert notes[0].circuits == ("correct",) * 9

    def test_every(self, roster):
        notes = annotate_trace(roster, self.scripted(roster), every=4)
        assert [a.step for a in notes] == [0, 4, 6]

    def test_mismatch(self, roster):
        tr = self.scripted(roster)
        bad = Trace(tr.initial, [Step(tr.steps[0].player, 99, 0, 0, 1)])
        with pytest.raises(ValueError):
            annotate_trace(roster, bad)
        with pytest.raises(ValueError):
            annotate_trace(roster, Trace((0, 0), []))

    def test_gadget_dynamics_terminate(self, roster):
        from gdcongestion.gadget import all_zeros_profile

        tr = run_dynamics(roster, all_zeros_profile(roster))
        assert tr.status == "pure-nash"
        assert verify_pure_nash(roster, tr.final)
        assert tr.steps[-1].after == gadget_utility(roster, list(tr.final))
