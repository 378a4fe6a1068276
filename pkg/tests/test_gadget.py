import random
from dataclasses import replace

import pytest

from gdcongestion.engine import GadgetEngine
from gdcongestion.gadget import (
    SAMPLES, TEAMS, DecodeUndefined, GameTooLarge, GadgetRoster, ReductionParams, brute_force_expected_utility,
    build_roster, compose_profile, desk_params, diagnostics, decode_solution, gadget_expected_utility,
    gadget_expected_utility_terms, gadget_utility, gadget_utility_terms, perfect_imitation_profile,
    reduce_end_to_end, samples_of_team, scenario_circuit, team_index, to_polytensor, validate_params,
)
from gdcongestion.games import pure_to_mixed
from gdcongestion.numerics import Q, TeamState, pow2
from gdcongestion.potential import ArithmeticCircuit, GDInstance
from gdcongestion.synthesis import BooleanCircuit, Wire, compile_with_depth_feedback


def ten_wire_circuit():
    """Hand-wired one-bit circuit: 2 inputs and 8 gates, with two leaves."""
    w = [Wire(0, "INPUT", (), 0), Wire(1, "INPUT", (), 0), Wire(2, "AND", (0, 1), 1), Wire(3, "NOT", (0,), 1),
         Wire(4, "XOR", (0, 1), 1), Wire(5, "BUF", (2,), 2), Wire(6, "OR", (3, 4), 2), Wire(7, "CONST0", (), 1),
         Wire(8, "NOT", (5,), 3), Wire(9, "BUF", (6,), 3)]
    return BooleanCircuit(2, 1, 1, tuple(w), ((0,), (1,)), (8,), (7, 7), ((9,), (2,)))


def tiny_roster(K=2):
    return build_roster(desk_params(3, 1, K=K, N_in=1, eps_S=pow2(-K)), ten_wire_circuit())


@pytest.fixture(scope="module")
def linear_roster():
    arith = ArithmeticCircuit.from_ops(2, [], output="x1")
    bc, N_out, D = compile_with_depth_feedback(arith, 2)
    return build_roster(desk_params(D, N_out, K=3, N_in=2, eps_S=Q(1, 8)), bc, arith)


@pytest.fixture(scope="module")
def tiny_game():
    ros = tiny_roster()
    return ros, to_polytensor(ros)


def random_pure(rng, roster):
    return [rng.randrange(c) for c in roster.action_counts]


class TestParams:
    def test_separated_chain_passes(self):
        prm = ReductionParams(K=12, N_in=1, N_out=1, D=1, eps_S=Q(1, 4), eps_C=Q(1, 16), eps_C_bar=Q(1, 4),
                              eps_P=pow2(-10), eps_G=pow2(-10), eps_T=pow2(-24), eps_R=Q(1, 2), lam=Q(1, 4),
                              mode="strict", separation=1)
        rep = validate_params(prm)
        assert rep.passed and not rep.deviations

    def test_last_link_fails(self):
        prm = ReductionParams(K=12, N_in=1, N_out=1, D=1, eps_S=Q(1, 4), eps_C=Q(1, 16), eps_C_bar=Q(1, 4),
                              eps_P=pow2(-10), eps_G=pow2(-10), eps_T=pow2(-23), eps_R=Q(1, 2), lam=Q(1, 4),
                              mode="strict", separation=1)
        rep = validate_params(prm)
        assert not rep.passed
        assert [ln.ok for ln in rep.links][-1] is False
        assert all(ln.ok for ln in rep.links[:-1])

    def test_desk_preset_records_deviations(self):
        rep = validate_params(desk_params(57, 120))
        assert rep.passed and rep.deviations

    def test_nonpositive(self):
        with pytest.raises(ValueError):
            replace(desk_params(3, 1, K=2, N_in=1, eps_S=Q(1, 4)), eps_G=0)

    def test_shift_must_be_on_the_bit_grid(self):
        with pytest.raises(ValueError):
            desk_params(3, 1, K=2, N_in=1, eps_S=Q(1, 8))

    def test_k_c(self):
        assert desk_params(3, 1, K=8).k_C == 4
        assert desk_params(3, 1, K=2, N_in=1, eps_S=Q(1, 4)).k_C == 1

    def test_doc_round_trip(self):
        prm = desk_params(57, 120, eps=Q(1, 2), alpha=2)
        assert ReductionParams.from_doc(prm.to_doc()) == prm


class TestRoster:
    def test_player_count(self):
        ros = tiny_roster(K=4)
        assert ros.num_players == 8 * 5 + 9 * 10 + 1 == 131

    def test_action_counts(self):
        ros = tiny_roster(K=4)
        assert ros.action_counts[ros.guide] == 9
        for t in range(8):
            assert ros.action_counts[ros.team_veto(t)] == 30
            assert all(ros.action_counts[n] == 2 for n in ros.team_bits(t))

    def test_team_sample_incidence(self):
        for r in TEAMS:
            ps = samples_of_team(r)
            assert len(ps) == 3
            assert all(SAMPLES[p][r[1] - 1] == r[0] for p in ps)
        assert team_index((1, 2)) == 5

    def test_player_ids_unique_and_invertible(self):
        ros = tiny_roster()
        ids = [ros.player_id(n) for n in range(ros.num_players)]
        assert len(set(ids)) == len(ids)
        assert all(ros.player_index(pid) == n for n, pid in enumerate(ids))

    def test_doc_round_trip(self):
        ros = tiny_roster()
        assert GadgetRoster.from_doc(ros.to_doc()).to_doc() == ros.to_doc()

    def test_mismatched_circuit(self):
        with pytest.raises(ValueError):
            build_roster(desk_params(3, 2, K=2, N_in=1, eps_S=Q(1, 4)), ten_wire_circuit())


class TestPureUtility:
    def test_perfect_imitation_zeros(self, linear_roster):
        ros = linear_roster
        prof = perfect_imitation_profile(ros, (Q(3, 8), Q(1, 2)))
        terms = gadget_utility_terms(ros, prof)
        for name in ("imitation", "circuit", "x_bit_imitation", "y_bit_imitation"):
            assert terms[name] == 0
        assert terms["veto"] == ros.params.eps_T * 8 * (ros.K + 1)

    def test_zero_y_kills_gradient_term(self, linear_roster):
        prof = compose_profile(linear_roster, {})
        assert gadget_utility_terms(linear_roster, prof)["gradient"] == 0

    def test_leaf_flip_circuit_term(self, linear_roster):
        ros = linear_roster
        prm = ros.params
        prof = perfect_imitation_profile(ros, (Q(1, 4), Q(1, 4)))
        centre = SAMPLES.index((0, 0))
        leaves = [w for w in ros.circuit.wires if not ros.consumers[w.id]]
        for w in leaves[:5]:
            flipped = list(prof)
            n = ros.wire_player(centre, w.id)
            flipped[n] = 1 - flipped[n]
            gap = gadget_utility_terms(ros, prof)["circuit"] - gadget_utility_terms(ros, flipped)["circuit"]
            assert gap == prm.eps_C * (prm.eps_T + 1) * pow2(-2 * w.depth)

    def test_incomplete_profile(self, linear_roster):
        with pytest.raises(ValueError):
            gadget_utility(linear_roster, [0] * 5)

    def test_engine_matches_literal(self, linear_roster):
        ros = linear_roster
        rng = random.Random(4)
        eng = GadgetEngine(ros, random_pure(rng, ros))
        for _ in range(60):
            n = rng.randrange(ros.num_players)
            a = rng.randrange(ros.action_counts[n])
            before = gadget_utility(ros, eng.prof)
            g = eng.gain(n, a)
            eng.apply(n, a)
            assert gadget_utility(ros, eng.prof) - before == g
        assert eng.total == gadget_utility(ros, eng.prof)


class TestExpectedUtility:
    def test_pure_profiles(self, linear_roster):
        rng = random.Random(0)
        for _ in range(3):
            prof = random_pure(rng, linear_roster)
            assert gadget_expected_utility(linear_roster, prof) == gadget_utility(linear_roster, prof)

    def test_fair_bit_imitation(self, linear_roster):
        ros = linear_roster
        y = (Q(3, 8), Q(1, 2))
        prof = pure_to_mixed(perfect_imitation_profile(ros, y), ros.action_counts)
        for t, (i, j) in enumerate(TEAMS):
            k = ros.K  # least significant bit
            mixed = list(prof)
            n = ros.team_bits(t)[k - 1]
            mixed[n] = (Q(1, 2), Q(1, 2))
            target = y[j - 1] + i * ros.params.eps_S
            state = ros.team_state(perfect_imitation_profile(ros, y), t)
            mean = sum((pow2(-kk) * b for kk, b in enumerate(state.bits, 1) if kk != k), Q(0)) + pow2(-k) / 2
            g_r = 1 if i == 0 else 0  # guide sits on the centre sample
            want = -(3 + g_r) * ((mean - target) ** 2 + pow2(-2 * k) / 4)
            assert gadget_expected_utility_terms(ros, mixed)["imitation"] == want

    def test_against_brute_force(self, linear_roster):
        ros = linear_roster
        rng = random.Random(5)
        for _ in range(4):
            prof = pure_to_mixed(random_pure(rng, ros), ros.action_counts)
            prof = list(prof)
            for n in rng.sample(range(ros.num_players), 2):
                c = ros.action_counts[n]
                a, b = rng.sample(range(c), 2)
                w = Q(rng.randint(1, 6), 7)
                vec = [Q(0)] * c
                vec[a], vec[b] = w, 1 - w
                prof[n] = tuple(vec)
            assert gadget_expected_utility(ros, prof) == brute_force_expected_utility(ros, prof)


class TestPolytensor:
    def test_arity_five(self, tiny_game):
        _, ptg = tiny_game
        assert max(len(t.S) for t in ptg.tensors) == 5

    def test_widest_tensor_shape(self, tiny_game):
        ros, ptg = tiny_game
        widest = [t.S for t in ptg.tensors if len(t.S) == 5]
        kinds = [sorted(ros.kind(n)[0] for n in S) for S in widest]
        assert ["bit", "bit", "guide", "veto", "veto"] in kinds

    def test_sum_matches_utility(self, tiny_game):
        ros, ptg = tiny_game
        rng = random.Random(6)
        for _ in range(25):
            prof = random_pure(rng, ros)
            assert ptg.common_utility(prof) == gadget_utility(ros, prof)

    def test_size_guard(self):
        with pytest.raises(GameTooLarge):
            to_polytensor(tiny_roster(), max_entries=1000)


class TestDiagnostics:
    def test_perfect_profile(self, linear_roster):
        ros = linear_roster
        d = diagnostics(ros, perfect_imitation_profile(ros, (Q(3, 8), Q(1, 2))))
        assert all(t.imitation == "strongly-perfect" for t in d.teams)
        assert d.errors == (0, 0) and d.problematic == (None, None)
        assert all(s.correctness == "correct" for s in d.samples)

    def test_approx_perfect_team(self):
        ros = tiny_roster(K=4)
        ros = build_roster(replace(ros.params, eps_G=Q(1, 64), kappa=(1, 1, 1)), ros.circuit)
        y = Q(1, 2)
        teams = {6: TeamState.from_value(y, 4), 7: TeamState.from_value(y, 4)}
        for t, (i, j) in enumerate(TEAMS):
            teams[t] = TeamState.from_value(y + i * ros.params.eps_S, 4)
        teams[1] = TeamState.from_value(y - ros.params.eps_S + Q(1, 8), 4)  # team (-1, 2) off by 1/8
        d = diagnostics(ros, compose_profile(ros, teams))
        odd = d.teams[1]
        assert odd.mse == Q(1, 64) and odd.imitation == "approx-perfect"
        assert d.problematic == (None, -1) and d.errors[1] == Q(1, 8)

    def test_weakly_correct_sample(self, linear_roster):
        ros = linear_roster
        prm = ros.params
        prof = list(pure_to_mixed(perfect_imitation_profile(ros, (Q(3, 8), Q(1, 2))), ros.action_counts))
        leaf = next(w for w in ros.circuit.wires if not ros.consumers[w.id] and w.kind != "INPUT")
        n = ros.wire_player(0, leaf.id)
        q = prm.eps_P / (2 * prm.eps_C)
        right = prof[n].index(1)
        vec = [Q(0), Q(0)]
        vec[right], vec[1 - right] = 1 - q, q
        prof[n] = tuple(vec)
        d = diagnostics(ros, prof)
        assert d.samples[0].correctness == "weakly-correct"
        assert d.samples[0].wrong_mass == q


class TestDecode:
    def test_constant_potential(self):
        const = ArithmeticCircuit.from_ops(2, [("c", "CONST", [], Q(1, 2))], output="c")
        red = reduce_end_to_end(GDInstance(const, Q(1, 2), Q(1)), emit_games=False)
        dec = red.decode(perfect_imitation_profile(red.roster, (Q(1, 4), Q(1, 2))))
        assert dec.grid_point == (Q(1, 4), Q(1, 2)) and dec.verdict

    def test_mixed_input_is_undefined(self, linear_roster):
        ros = linear_roster
        prof = list(pure_to_mixed(perfect_imitation_profile(ros, (Q(1, 4), Q(1, 4))), ros.action_counts))
        for p in range(len(SAMPLES)):
            wid = ros.circuit.input_wires[0][0]
            prof[ros.wire_player(p, wid)] = (Q(1, 2), Q(1, 2))
        with pytest.raises(DecodeUndefined, match="decode undefined"):
            decode_solution(ros, prof)

    def test_needs_arithmetic_circuit(self):
        with pytest.raises(ValueError):
            decode_solution(tiny_roster(), [0] * tiny_roster().num_players)


class TestEndToEnd:
    def test_strict_mode_refuses_large_instances(self):
        with pytest.raises(GameTooLarge):
            reduce_end_to_end(GDInstance(scenario_circuit(), Q(1, 2), Q(2)), mode="strict")

    def test_desk_mode_reports_skipped_games(self):
        red = reduce_end_to_end(GDInstance(scenario_circuit(), Q(1, 2), Q(2)), max_entries=10)
        assert red.polytensor is None and "tensor entries" in red.skipped

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            reduce_end_to_end(GDInstance(scenario_circuit(), Q(1, 2), Q(2)), mode="fast")


@pytest.fixture(scope="module")
def scenario_roster():
    return reduce_end_to_end(GDInstance(scenario_circuit(), Q(1, 2), Q(2)), emit_games=False).roster


class TestShiftResponse:
    """Raising y_1 by one step from perfect imitation: gradient gain against imitation loss."""

    @pytest.mark.parametrize("y1", [Q(40, 256), Q(72, 256), Q(104, 256)])
    def test_improving_exactly_when_gradient_wins(self, scenario_roster, y1):
        ros = scenario_roster
        prm, K = ros.params, ros.K
        h = pow2(-K)
        prof = perfect_imitation_profile(ros, (y1, Q(1, 2)))
        guided = prof[ros.guide]
        delta = ros.circuit.decode(ros.sample_values(prof, guided))[1][0]
        moved = list(prof)
        moved[list(ros.team_bits(6))[-1]] = 1  # y1 has a zero last bit, so this adds 2^-K
        before, after = gadget_utility_terms(ros, prof), gadget_utility_terms(ros, moved)
        change = {k: after[k] - before[k] for k in before}

        # nine samples read y1, the guided one twice; the bit terms add K copies at weight eps_T
        loss = h * h * (10 + 19 * K * prm.eps_T)
        gain = prm.eps_G * h * delta * (1 + K * prm.eps_T)
        assert -(change["imitation"] + change["x_bit_imitation"] + change["y_bit_imitation"]) == loss
        assert change["gradient"] + change["bit_gradient"] == gain
        assert change["circuit"] == change["potential"] == change["veto"] == 0
        assert (gadget_utility(ros, moved) > gadget_utility(ros, prof)) == (gain > loss)

    def test_both_outcomes_occur(self, scenario_roster):
        ros = scenario_roster
        outcomes = set()
        for y1 in (Q(40, 256), Q(104, 256)):
            prof = perfect_imitation_profile(ros, (y1, Q(1, 2)))
            moved = list(prof)
            moved[list(ros.team_bits(6))[-1]] = 1
            outcomes.add(gadget_utility(ros, moved) > gadget_utility(ros, prof))
        assert outcomes == {True, False}
