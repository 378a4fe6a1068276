"""Command-line front end: compile, solve, verify, decode, round, trace."""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import __version__
from .dynamics import DynamicsConfig, Trace, Step, annotate_trace, run_dynamics, verify_pure_nash
from .gadget import (
    DecodeUndefined, GadgetRoster, GameTooLarge, ReductionParams, SAMPLES, all_zeros_profile,
    decode_solution, reduce_end_to_end,
)
from .games import CongestionGame, PolytensorGame, VerifyOptions, as_mixed, nash_regret
from .numerics import Q, parse_rat, rat_str
from .potential import (
    ArithmeticCircuit, CircuitError, GDInstance, check_gd_fp, finite_difference_oracle,
)
from .variants import (
    CCLSParams, KKTParams, Polynomial, ccls_check, ccls_solution_to_con_gd, ccls_to_con_gd_params,
    con_gd_to_ccls_params, expl_to_kkt_params, gradient_oracle, kkt_check, kkt_solution_to_expl,
    kkt_to_expl_params, normalize_to_profile, polytensor_to_deg5,
)

FORMAT = "gdcongestion/1"
EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


# ---- document helpers --------------------------------------------------------------

def _workspace(path):
    root = os.environ.get("GDCONGESTION_WORKSPACE")
    p = Path(path)
    return p if p.is_absolute() or not root else Path(root) / p


def load_doc(path, what="document"):
    if path is None:
        raise UsageError(f"missing {what} file")
    try:
        with open(_workspace(path)) as fh:
            return json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read {what} {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc


def dump(doc) -> str:
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def emit(doc, out):
    text = dump(doc)
    if out:
        target = _workspace(out)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(text)
    else:
        sys.stdout.write(text)


def envelope(kind, params, **body):
    return {"format": FORMAT, "kind": kind, "params": params, **body}


def _rat(text, field):
    try:
        return parse_rat(text)
    except (ValueError, ZeroDivisionError, TypeError) as exc:
        raise UsageError(f"field {field}: not a rational: {text!r}") from exc


def load_instance(path) -> GDInstance:
    doc = load_doc(path, "instance")
    if "circuit" not in doc or "eps" not in doc:
        raise UsageError(f"{path}: instance needs 'circuit' and 'eps'")
    try:
        circuit = ArithmeticCircuit.from_doc(doc["circuit"])
    except CircuitError as exc:
        raise UsageError(f"{path}: circuit: {exc}") from exc
    alpha = _rat(doc["alpha"], "alpha") if "alpha" in doc else circuit.alpha
    return GDInstance(circuit, _rat(doc["eps"], "eps"), alpha)


def load_game(path):
    doc = load_doc(path, "game")
    body = doc.get("game", doc)
    try:
        if "tensors" in body:
            return PolytensorGame.from_doc(body)
        if "facilities" in body:
            return CongestionGame.from_doc(body)
    except (KeyError, ValueError, TypeError) as exc:
        raise UsageError(f"{path}: malformed game: {exc}") from exc
    raise UsageError(f"{path}: not a polytensor or congestion game document")


def load_roster(path) -> GadgetRoster:
    doc = load_doc(path, "roster")
    try:
        return GadgetRoster.from_doc(doc.get("roster", doc))
    except (KeyError, ValueError, TypeError) as exc:
        raise UsageError(f"{path}: malformed roster: {exc}") from exc


def profile_doc(profile, counts, names=None):
    """Pure players as an action index, mixed ones as probability lists."""
    out = {}
    for i, vec in enumerate(as_mixed(profile, counts)):
        key = names(i) if names else str(i)
        support = [a for a, w in enumerate(vec) if w]
        out[key] = support[0] if len(support) == 1 else [rat_str(w) for w in vec]
    return out


def load_profile(path, counts, index_of=None):
    doc = load_doc(path, "profile")
    doc = doc.get("profile", doc)
    vecs = [None] * len(counts)
    for key, val in doc.items():
        try:
            i = int(key)
        except ValueError:
            if index_of is None:
                raise UsageError(f"profile key {key!r} is not a player index") from None
            try:
                i = index_of(key)
            except (KeyError, ValueError) as exc:
                raise UsageError(f"profile names unknown player {key!r}") from exc
        if not 0 <= i < len(counts):
            raise UsageError(f"profile names unknown player {key!r}")
        if isinstance(val, int):
            if not 0 <= val < counts[i]:
                raise UsageError(f"player {key}: action {val} out of range")
            vecs[i] = val
        else:
            vecs[i] = [_rat(v, f"profile[{key}]") for v in val]
    missing = [i for i, v in enumerate(vecs) if v is None]
    if missing:
        raise UsageError(f"profile is missing {len(missing)} players (first {missing[0]})")
    if all(isinstance(v, int) for v in vecs):
        return vecs
    try:
        return as_mixed([[Q(1) if a == v else Q(0) for a in range(c)] if isinstance(v, int) else v
                         for v, c in zip(vecs, counts)], counts)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _point(text):
    if text is None:
        return None
    return tuple(_rat(v.strip(), "point") for v in text.split(","))


def _overrides(path):
    if path is None:
        return {}
    doc = load_doc(path, "params")
    known = set(ReductionParams.__dataclass_fields__)
    out = {}
    for key, val in doc.items():
        if key not in known:
            raise UsageError(f"params: unknown field {key!r}")
        if key in ("K", "N_in", "N_out", "D"):
            out[key] = int(val)
        elif key == "kappa":
            out[key] = tuple(_rat(v, "kappa") for v in val)
        elif key == "mode":
            out[key] = str(val)
        else:
            out[key] = _rat(val, key)
    return out


# ---- commands ---------------------------------------------------------------------

def cmd_compile(args):
    inst = load_instance(args.instance)
    overrides = _overrides(args.params)
    try:
        red = reduce_end_to_end(inst, mode=args.mode, K=args.K, N_in=args.Nin,
                                max_entries=args.max_entries, overrides=overrides or None)
    except GameTooLarge as exc:
        raise UsageError(f"strict parameters: {exc}") from exc
    except ValueError as exc:
        if args.mode == "strict":
            emit(envelope("failure", None, reason=str(exc)), None)
            return EXIT_FAIL
        raise UsageError(str(exc)) from exc
    params = red.params.to_doc()
    out = Path(args.out or ".")
    deviations = list(red.validation.deviations)
    meta = envelope("params", params, mode=args.mode, deviations=deviations,
                    validation={"passed": red.validation.passed,
                                "links": [{"left": ln.left, "right": ln.right, "ok": ln.ok}
                                          for ln in red.validation.links]},
                    instance={"circuit": inst.circuit.to_doc(), "eps": rat_str(inst.eps),
                              "alpha": rat_str(inst.alpha)},
                    games_skipped=red.skipped, num_players=red.roster.num_players)
    emit(meta, out / "params.json")
    emit(envelope("roster", params, roster=red.roster.to_doc()), out / "roster.json")
    emit(envelope("boolean-circuit", params, circuit=red.boolean.to_doc()), out / "boolean.json")
    if red.polytensor is not None:
        emit(envelope("polytensor", params, game=red.polytensor.to_doc()), out / "polytensor.json")
        emit(envelope("congestion", params, game=red.congestion.to_doc()), out / "congestion.json")
    return EXIT_PASS


def _trace_doc(trace: Trace, names, counts, config, params):
    steps = [{"player": s.player, "id": names(s.player), "old": s.old, "new": s.new,
              "before": rat_str(s.before), "after": rat_str(s.after)} for s in trace.steps]
    return envelope("trace", params, policy=config.policy, max_steps=config.max_steps,
                    status=trace.status, steps=steps,
                    initial=profile_doc(trace.initial, counts, names),
                    final=profile_doc(trace.final, counts, names))


def _game_and_names(args):
    if args.roster:
        roster = load_roster(args.roster)
        return roster, roster.action_counts, roster.player_id, roster.player_index, roster.params.to_doc()
    if args.game:
        game = load_game(args.game)
        if isinstance(game, CongestionGame):
            raise UsageError("dynamics need an identical-interest game; pass the polytensor document")
        return game, game.action_counts, str, int, None
    raise UsageError("pass --roster or --game")


def cmd_solve(args):
    game, counts, names, index_of, params = _game_and_names(args)
    if args.start:
        init = load_profile(args.start, counts, index_of)
        if not all(isinstance(a, int) for a in init):
            raise UsageError("dynamics start from a pure profile")
    elif isinstance(game, GadgetRoster):
        init = all_zeros_profile(game)
    else:
        init = [0] * len(counts)
    config = DynamicsConfig(args.policy, args.max_steps)
    trace = run_dynamics(game, init, config)
    if trace.status == "pure-nash" and not verify_pure_nash(game, trace.final):
        raise AssertionError("terminal profile has an improving deviation")
    emit(_trace_doc(trace, names, counts, config, params), args.out)
    return EXIT_PASS if trace.status == "pure-nash" else EXIT_FAIL


def cmd_verify(args):
    eps = _rat(args.eps or "0", "eps")
    if args.game or args.roster:
        if args.roster:
            roster = load_roster(args.roster)
            prof = load_profile(args.profile, roster.action_counts, roster.player_index)
            if not all(isinstance(a, int) for a in prof):
                raise UsageError("gadget verification supports pure profiles")
            ok = verify_pure_nash(roster, prof)
            emit(envelope("verdict", roster.params.to_doc(), check="pure-nash", verdict=ok), args.out)
            return EXIT_PASS if ok else EXIT_FAIL
        game = load_game(args.game)
        prof = load_profile(args.profile, game.action_counts)
        mode = "well_supported" if args.well_supported else "approximate"
        rep = nash_regret(game, prof, VerifyOptions(eps, mode))
        emit(envelope("verdict", {"eps": rat_str(eps), "mode": mode}, check="nash",
                      verdict=rep.verdict, max_regret=rat_str(rep.max_regret),
                      per_player=[rat_str(r) for r in rep.per_player]), args.out)
        return EXIT_PASS if rep.verdict else EXIT_FAIL
    x = _point(args.point)
    if x is None:
        raise UsageError("pass --point with --instance or --poly")
    if args.poly:
        poly = Polynomial.from_doc(load_doc(args.poly, "polynomial").get("poly", load_doc(args.poly)))
        if args.check == "ccls":
            p = CCLSParams(_rat(args.eps_bar, "eps-bar"), _rat(args.delta, "delta"))
            v = ccls_check(poly, x, p)
            emit(envelope("verdict", p.to_doc(), check="ccls", verdict=v.passed,
                          slack=[[rat_str(a), rat_str(b)] for a, b in v.slack]), args.out)
            return EXIT_PASS if v.passed else EXIT_FAIL
        if args.check == "kkt":
            p = KKTParams(_rat(args.eps_bar, "eps-bar"), _rat(args.kappa, "kappa"), _rat(args.alpha, "alpha"))
            v = kkt_check(poly, x, p)
            emit(envelope("verdict", p.to_doc(), check="kkt", verdict=v.passed, axis=v.axis_ok,
                          ball=v.ball_ok, certificate=v.certificate_ok, samples=v.samples), args.out)
            return EXIT_PASS if v.passed else EXIT_FAIL
        v = check_gd_fp(gradient_oracle(poly), x, eps)
    else:
        inst = load_instance(args.instance)
        eps = _rat(args.eps, "eps") if args.eps else inst.eps
        v = check_gd_fp(finite_difference_oracle(inst.circuit), x, eps)
    emit(envelope("verdict", {"eps": rat_str(eps)}, check="gd-fixed-point", verdict=v.passed,
                  gradient=[rat_str(g) for g in v.gradient], slack=[rat_str(s) for s in v.slack]), args.out)
    return EXIT_PASS if v.passed else EXIT_FAIL


def cmd_decode(args):
    roster = load_roster(args.roster)
    prof = load_profile(args.profile, roster.action_counts, roster.player_index)
    try:
        dec = decode_solution(roster, prof)
    except DecodeUndefined as exc:
        emit(envelope("decode", roster.params.to_doc(), verdict=False, reason=str(exc)), args.out)
        return EXIT_FAIL
    emit(envelope("decode", roster.params.to_doc(), verdict=dec.verdict, sample=list(dec.sample),
                  grid_point=[rat_str(v) for v in dec.grid_point], lifted=[rat_str(v) for v in dec.lifted],
                  deltas=[rat_str(d) for d in dec.deltas],
                  violation=None if dec.violation is None else [str(v) for v in dec.violation]), args.out)
    return EXIT_PASS if dec.verdict else EXIT_FAIL


def _param(args, doc, name, flag):
    val = getattr(args, name, None)
    if val is None:
        val = doc.get(name)
    if val is None:
        raise UsageError(f"missing --{flag}")
    return _rat(val, name)


def cmd_round(args):
    doc = load_doc(args.params, "params") if args.params else {}
    pair = (args.from_, args.to)
    x = _point(args.point)
    J = int(args.J if args.J is not None else doc.get("J", len(x) if x else 2))
    body = {}
    if pair == ("expl", "kkt"):
        eps, alpha = _param(args, doc, "eps", "eps"), _param(args, doc, "alpha", "alpha")
        params = expl_to_kkt_params(eps, alpha, J)
        header = {"eps": rat_str(eps), "alpha": rat_str(alpha), "J": J, **params.to_doc()}
        if x:
            body["solution"] = [rat_str(v) for v in kkt_solution_to_expl(x, params)]
    elif pair == ("kkt", "expl"):
        eps_bar, kappa = _param(args, doc, "eps_bar", "eps-bar"), _param(args, doc, "kappa", "kappa")
        eps = kkt_to_expl_params(eps_bar, kappa, J)
        header = {"eps_bar": rat_str(eps_bar), "kappa": rat_str(kappa), "J": J, "eps": rat_str(eps)}
        if x:
            body["solution"] = [rat_str(v) for v in x]
    elif pair == ("con", "ccls"):
        eps, alpha = _param(args, doc, "eps", "eps"), _param(args, doc, "alpha", "alpha")
        params = con_gd_to_ccls_params(eps, alpha, J)
        header = {"eps": rat_str(eps), "alpha": rat_str(alpha), "J": J, **params.to_doc()}
        if x:
            body["solution"] = [rat_str(v) for v in ccls_solution_to_con_gd(x, params)]
    elif pair == ("ccls", "con"):
        eps_bar = _param(args, doc, "eps_bar", "eps-bar")
        header = {"eps_bar": rat_str(eps_bar), "eps": rat_str(ccls_to_con_gd_params(eps_bar))}
        if x:
            body["solution"] = [rat_str(v) for v in x]
    elif args.to == "deg5" and args.from_ in ("polytensor", "deg5"):
        game = load_game(args.game)
        if not isinstance(game, PolytensorGame):
            raise UsageError("deg5 encoding needs a polytensor game")
        eps_N = _param(args, doc, "eps", "eps")
        inst = polytensor_to_deg5(game, eps_N)
        header = {"eps_N": rat_str(eps_N), "eps": rat_str(inst.eps), "C": rat_str(inst.C), "A": inst.A}
        body["instance"] = inst.to_doc()
        if x:
            body["profile"] = [[rat_str(v) for v in vec] for vec in normalize_to_profile(inst, x)]
    else:
        raise UsageError(f"no map from {args.from_} to {args.to}")
    emit(envelope("round", header, map={"from": args.from_, "to": args.to}, **body), args.out)
    return EXIT_PASS


def cmd_trace(args):
    roster = load_roster(args.roster)
    doc = load_doc(args.trace, "trace")
    try:
        init = load_profile_doc(doc["initial"], roster)
        steps = [Step(int(s["player"]), int(s["old"]), int(s["new"]), parse_rat(s["before"]),
                      parse_rat(s["after"])) for s in doc["steps"]]
    except KeyError as exc:
        raise UsageError(f"trace document missing field {exc}") from exc
    trace = Trace(tuple(init), steps, doc.get("status", "budget-exhausted"))
    try:
        notes = annotate_trace(roster, trace, every=args.every)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    rows = [{"step": a.step, "player": a.player,
             "teams": {k: rat_str(v) for k, v in a.team_values.items()},
             "guide": list(a.guide), "circuits": list(a.circuits),
             "decoded": [[rat_str(v) for v in p] for p in a.decoded]} for a in notes]
    emit(envelope("annotated-trace", roster.params.to_doc(), samples=[list(p) for p in SAMPLES], rows=rows),
         args.out)
    return EXIT_PASS


def load_profile_doc(doc, roster):
    prof = [None] * roster.num_players
    for key, val in doc.items():
        prof[roster.player_index(key)] = val
    if any(v is None or not isinstance(v, int) for v in prof):
        raise UsageError("trace start must be a complete pure profile")
    return prof


# ---- argument parsing -----------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(prog="gdcongestion", description=__doc__)
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    c = sub.add_parser("compile", help="potential instance -> gadget roster and games")
    c.add_argument("--instance", required=True)
    c.add_argument("--params", help="JSON overrides for reduction parameters")
    c.add_argument("--mode", choices=("desk", "strict"), default="desk")
    c.add_argument("--K", type=int, default=8)
    c.add_argument("--Nin", type=int, default=3)
    c.add_argument("--max-entries", type=int, default=5_000_000)
    c.add_argument("--out", help="output directory")
    c.set_defaults(func=cmd_compile)

    s = sub.add_parser("solve", help="run better-reply dynamics")
    s.add_argument("--roster")
    s.add_argument("--game")
    s.add_argument("--start", help="pure starting profile")
    s.add_argument("--policy", choices=("first-improving", "best-improving", "round-robin"),
                   default="first-improving")
    s.add_argument("--max-steps", type=int, default=1_000_000)
    s.add_argument("--out")
    s.set_defaults(func=cmd_solve)

    v = sub.add_parser("verify", help="check Nash, fixed-point, CCLS or KKT conditions")
    v.add_argument("--game")
    v.add_argument("--roster")
    v.add_argument("--profile")
    v.add_argument("--instance")
    v.add_argument("--poly")
    v.add_argument("--check", choices=("gd", "ccls", "kkt"), default="gd")
    v.add_argument("--point", help="comma-separated rationals")
    v.add_argument("--eps")
    v.add_argument("--eps-bar", dest="eps_bar")
    v.add_argument("--delta")
    v.add_argument("--kappa")
    v.add_argument("--alpha")
    v.add_argument("--well-supported", action="store_true")
    v.add_argument("--out")
    v.set_defaults(func=cmd_verify)

    d = sub.add_parser("decode", help="decode a gadget profile to a fixed point")
    d.add_argument("--roster", required=True)
    d.add_argument("--profile", required=True)
    d.add_argument("--out")
    d.set_defaults(func=cmd_decode)

    r = sub.add_parser("round", help="parameter and solution maps between problem variants")
    r.add_argument("--from", dest="from_", required=True, choices=("ccls", "con", "kkt", "expl", "deg5", "polytensor"))
    r.add_argument("--to", required=True, choices=("ccls", "con", "kkt", "expl", "deg5"))
    r.add_argument("--params", help="JSON with eps, alpha, eps_bar, kappa, J")
    r.add_argument("--eps")
    r.add_argument("--alpha")
    r.add_argument("--eps-bar", dest="eps_bar")
    r.add_argument("--kappa")
    r.add_argument("--J", type=int)
    r.add_argument("--point")
    r.add_argument("--game")
    r.add_argument("--out")
    r.set_defaults(func=cmd_round)

    t = sub.add_parser("trace", help="annotate a gadget trace")
    t.add_argument("--roster", required=True)
    t.add_argument("--trace", required=True)
    t.add_argument("--every", type=int, default=1)
    t.add_argument("--out")
    t.set_defaults(func=cmd_trace)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_PASS
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except AssertionError as exc:
        print(f"internal invariant breach: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (ValueError, ZeroDivisionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
