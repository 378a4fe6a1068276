import json
import random

import pytest

from gdcongestion.cli import main, profile_doc
from gdcongestion.gadget import SAMPLES, GadgetRoster
from gdcongestion.games import (
    CongestionGame, PolytensorGame, polytensor_to_congestion, pure_to_mixed, random_polytensor,
)
from gdcongestion.numerics import Q
from gdcongestion.potential import ArithmeticCircuit
from gdcongestion.variants import Polynomial, random_concave_polynomial

CONSTANT = {"circuit": {"J": 2, "gates": [{"id": "c", "kind": "CONST", "inputs": [], "const": "1/2"}],
                        "output": "c"}, "eps": "1/2", "alpha": "1"}
ARTIFACTS = ("params.json", "roster.json", "boolean.json", "polytensor.json", "congestion.json")


def write(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


def read(path):
    return json.loads(path.read_text())


def compile_constant(tmp, out):
    inst = write(tmp / "const.json", CONSTANT)
    return main(["compile", "--instance", inst, "--K", "1", "--Nin", "1", "--out", str(out)])


@pytest.fixture(scope="module")
def compiled(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("compile")
    assert compile_constant(tmp, tmp / "a") == 0
    return tmp / "a"


class TestCompile:
    def test_all_artifacts_and_determinism(self, compiled, tmp_path):
        assert compile_constant(tmp_path, tmp_path / "b") == 0
        for name in ARTIFACTS:
            first, second = (compiled / name).read_bytes(), (tmp_path / "b" / name).read_bytes()
            assert first == second, name
            doc = json.loads(first)
            assert doc["format"] == "gdcongestion/1" and doc["params"]["K"] == 1

    def test_deviations_embedded(self, compiled):
        meta = read(compiled / "params.json")
        failing = [f"{ln['left']} >> {ln['right']}" for ln in meta["validation"]["links"] if not ln["ok"]]
        assert meta["mode"] == "desk" and meta["deviations"] == failing and failing
        assert meta["validation"]["passed"]  # desk mode records deviations instead of refusing

    def test_games_agree(self, compiled):
        poly = PolytensorGame.from_doc(read(compiled / "polytensor.json")["game"])
        cong = CongestionGame.from_doc(read(compiled / "congestion.json")["game"])
        rng = random.Random(0)
        assert cong.num_players == poly.num_players
        for _ in range(5):
            prof = tuple(rng.randrange(c) for c in poly.action_counts)
            alt = list(prof)
            alt[0] = 1 - prof[0]
            assert cong.player_utility(0, tuple(alt)) - cong.player_utility(0, prof) == \
                poly.deviation_gain(prof, 0, alt[0])

    def test_malformed_gate_reference(self, tmp_path, capsys):
        bad = {"circuit": {"J": 2, "gates": [{"id": "g7", "kind": "ADD", "inputs": ["x1", "nope"]}],
                           "output": "g7"}, "eps": "1/2"}
        code = main(["compile", "--instance", write(tmp_path / "bad.json", bad), "--out", str(tmp_path)])
        err = capsys.readouterr().err
        assert code == 2 and "g7" in err and "nope" in err

    def test_json_syntax_error_has_position(self, tmp_path, capsys):
        path = tmp_path / "broken.json"
        path.write_text('{"circuit": {"J": 2,\n "gates": [}')
        assert main(["compile", "--instance", str(path)]) == 2
        assert "line 2" in capsys.readouterr().err

    def test_workspace_root(self, tmp_path, monkeypatch):
        write(tmp_path / "const.json", CONSTANT)
        monkeypatch.setenv("GDCONGESTION_WORKSPACE", str(tmp_path))
        assert main(["compile", "--instance", "const.json", "--K", "1", "--Nin", "1", "--out", "ws"]) == 0
        assert (tmp_path / "ws" / "roster.json").exists()


class TestVerify:
    COORD = PolytensorGame([2, 2], [((0, 1), [1, 0, 0, 1])])

    def test_zero_regret(self, tmp_path, capsys):
        game = write(tmp_path / "g.json", {"game": self.COORD.to_doc()})
        prof = write(tmp_path / "p.json", {"0": 1, "1": 1})
        assert main(["verify", "--game", game, "--profile", prof]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["verdict"] and out["max_regret"] == "0/1"

    def test_mixed_regret_fail(self, tmp_path, capsys):
        skewed = PolytensorGame([2, 2], [((0, 1), [2, 0, 0, 1])])
        game = write(tmp_path / "g.json", {"game": skewed.to_doc()})
        prof = write(tmp_path / "p.json", {"0": ["1/2", "1/2"], "1": ["1/2", "1/2"]})
        assert main(["verify", "--game", game, "--profile", prof, "--eps", "1/5"]) == 1
        assert json.loads(capsys.readouterr().out)["max_regret"] == "1/4"

    def test_congestion_game(self, tmp_path, capsys):
        game = write(tmp_path / "g.json", {"game": polytensor_to_congestion(self.COORD).to_doc()})
        prof = write(tmp_path / "p.json", {"0": 0, "1": 0})
        assert main(["verify", "--game", game, "--profile", prof]) == 0

    def test_profile_errors(self, tmp_path):
        game = write(tmp_path / "g.json", {"game": self.COORD.to_doc()})
        assert main(["verify", "--game", game, "--profile", write(tmp_path / "p.json", {"0": 1})]) == 2
        assert main(["verify", "--game", game, "--profile", write(tmp_path / "q.json", {"0": 5, "1": 0})]) == 2

    def test_fixed_point_on_constant(self, tmp_path, capsys):
        inst = write(tmp_path / "c.json", CONSTANT)
        assert main(["verify", "--instance", inst, "--point", "1/3,2/3"]) == 0
        assert json.loads(capsys.readouterr().out)["gradient"] == ["0/1", "0/1"]

    def test_polynomial_checks(self, tmp_path):
        poly = Polynomial(2, [(-1, (2, 0)), (-1, (0, 2))])
        path = write(tmp_path / "poly.json", {"poly": poly.to_doc()})
        assert main(["verify", "--poly", path, "--point", "0,0", "--eps", "1/10"]) == 0
        assert main(["verify", "--poly", path, "--point", "0,0", "--check", "kkt",
                     "--eps-bar", "1/10", "--kappa", "1/100", "--alpha", "2"]) == 0


class TestRound:
    def test_expl_to_kkt_header(self, capsys):
        assert main(["round", "--from", "expl", "--to", "kkt", "--eps", "3/10", "--alpha", "1", "--J", "2"]) == 0
        head = json.loads(capsys.readouterr().out)["params"]
        # eps/(6 J alpha) and eps^2/(24 J alpha)
        assert head["eps_bar"] == "1/40" and head["kappa"] == "3/1600"

    def test_params_file(self, tmp_path, capsys):
        path = write(tmp_path / "r.json", {"eps": "1/2", "alpha": "2", "J": 3})
        assert main(["round", "--from", "expl", "--to", "kkt", "--params", path]) == 0
        head = json.loads(capsys.readouterr().out)["params"]
        assert head["eps_bar"] == "1/72" and head["kappa"] == "1/576"

    def test_missing_parameter(self, capsys):
        assert main(["round", "--from", "expl", "--to", "kkt", "--eps", "1/2"]) == 2
        assert "--alpha" in capsys.readouterr().err

    def test_no_map(self):
        assert main(["round", "--from", "ccls", "--to", "kkt", "--eps", "1/2"]) == 2

    def test_deg5_encoding(self, tmp_path, capsys):
        game = write(tmp_path / "g.json", {"game": PolytensorGame([2, 2], [((0, 1), [1, 0, 0, 1])]).to_doc()})
        assert main(["round", "--from", "polytensor", "--to", "deg5", "--game", game, "--eps", "1"]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["params"]["eps_N"] == "1/1" and "instance" in out


@pytest.fixture(scope="module")
def solved(compiled, tmp_path_factory):
    trace = tmp_path_factory.mktemp("solve") / "trace.json"
    assert main(["solve", "--roster", str(compiled / "roster.json"), "--out", str(trace)]) == 0
    ros = GadgetRoster.from_doc(read(compiled / "roster.json")["roster"])
    final = read(trace)["final"]
    return ros, [final[ros.player_id(n)] for n in range(ros.num_players)]


class TestDecodeAndDynamics:
    def test_decode_equilibrium(self, compiled, solved, tmp_path, capsys):
        ros, prof = solved
        path = write(tmp_path / "p.json", profile_doc(prof, ros.action_counts, ros.player_id))
        assert main(["decode", "--roster", str(compiled / "roster.json"), "--profile", path]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["verdict"] and len(out["grid_point"]) == 2

    def test_decode_undefined(self, compiled, solved, tmp_path, capsys):
        ros, pure = solved
        prof = list(pure_to_mixed(pure, ros.action_counts))
        wid = ros.circuit.input_wires[0][0]
        for p in range(len(SAMPLES)):
            prof[ros.wire_player(p, wid)] = (Q(1, 2), Q(1, 2))
        path = write(tmp_path / "p.json", profile_doc(prof, ros.action_counts, ros.player_id))
        assert main(["decode", "--roster", str(compiled / "roster.json"), "--profile", path]) == 1
        out = json.loads(capsys.readouterr().out)
        assert not out["verdict"] and out["reason"].startswith("decode undefined")

    def test_solve_then_trace(self, compiled, tmp_path, capsys):
        roster = str(compiled / "roster.json")
        trace = tmp_path / "trace.json"
        assert main(["solve", "--roster", roster, "--out", str(trace)]) == 0
        doc = read(trace)
        assert doc["status"] == "pure-nash" and doc["steps"]
        assert main(["verify", "--roster", roster, "--profile", write(tmp_path / "f.json", doc["final"])]) == 0
        capsys.readouterr()
        assert main(["trace", "--roster", roster, "--trace", str(trace), "--every", "5"]) == 0
        rows = json.loads(capsys.readouterr().out)["rows"]
        n = len(doc["steps"])
        assert [r["step"] for r in rows] == sorted(set(range(0, n + 1, 5)) | {n})
        assert rows[-1]["circuits"] == ["correct"] * len(SAMPLES)

    def test_solve_budget(self, tmp_path, capsys):
        game = write(tmp_path / "g.json", {"game": PolytensorGame([2, 2], [((0,), [0, 1]), ((1,), [0, 1])]).to_doc()})
        assert main(["solve", "--game", game, "--max-steps", "1"]) == 1
        assert json.loads(capsys.readouterr().out)["status"] == "budget-exhausted"

    def test_solve_rejects_congestion(self, tmp_path):
        game = write(tmp_path / "g.json", {"game": polytensor_to_congestion(TestVerify.COORD).to_doc()})
        assert main(["solve", "--game", game]) == 2


class TestUsage:
    def test_unknown_command(self):
        assert main(["frobnicate"]) == 2

    def test_missing_required(self):
        assert main(["decode"]) == 2

    def test_missing_file(self, tmp_path, capsys):
        assert main(["compile", "--instance", str(tmp_path / "nope.json")]) == 2
        assert "cannot read" in capsys.readouterr().err


class TestRoundTrip:
    def test_polytensor_and_congestion(self):
        rng = random.Random(4)
        for _ in range(10):
            g = random_polytensor(rng, rng.randint(1, 4), 3, 3, 4)
            assert PolytensorGame.from_doc(g.to_doc()).to_doc() == g.to_doc()
            cg = polytensor_to_congestion(g)
            assert CongestionGame.from_doc(cg.to_doc()).to_doc() == cg.to_doc()

    def test_polynomial(self):
        rng = random.Random(5)
        for _ in range(10):
            p = random_concave_polynomial(rng, 2, 4)
            assert Polynomial.from_doc(p.to_doc()).to_doc() == p.to_doc()

    def test_circuit_and_roster(self, compiled):
        doc = read(compiled / "roster.json")["roster"]
        assert GadgetRoster.from_doc(doc).to_doc() == doc
        circ = ArithmeticCircuit.from_doc(CONSTANT["circuit"])
        assert ArithmeticCircuit.from_doc(circ.to_doc()).to_doc() == circ.to_doc()

    def test_json_text_is_stable(self, compiled):
        for name in ARTIFACTS:
            text = (compiled / name).read_text()
            assert json.dumps(json.loads(text), indent=1, sort_keys=True) + "\n" == text
