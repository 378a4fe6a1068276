"""Arithmetic-circuit potentials on [0,1]^J, grid parameters and fixed-point checks."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

from .numerics import ONE, ZERO, Q, parse_rat, pow2, rat_str

BINARY_KINDS = ("ADD", "SUB", "MUL", "MAX", "MIN", "GT")
UNARY_KINDS = ("MUL_CONST",)
SOURCE_KINDS = ("INPUT", "CONST")
GATE_KINDS = SOURCE_KINDS + UNARY_KINDS + BINARY_KINDS


class CircuitError(ValueError):
    """Malformed circuit (bad reference, cycle, wrong arity)."""


@dataclass(frozen=True)
class Gate:
    id: str
    kind: str
    inputs: tuple = ()
    const: object = None  # rational for CONST / MUL_CONST, coordinate index for INPUT


@dataclass(frozen=True)
class ArithmeticCircuit:
    """A gate DAG over inputs x_1..x_J.  Gates are stored in topological order."""

    J: int
    gates: tuple
    output: str
    alpha: object = ONE

    def __post_init__(self):
        seen = {}
        for g in self.gates:
            if g.kind not in GATE_KINDS:
                raise CircuitError(f"gate {g.id!r}: unknown kind {g.kind!r}")
            if g.id in seen:
                raise CircuitError(f"gate {g.id!r}: duplicate id")
            want = 2 if g.kind in BINARY_KINDS else 1 if g.kind in UNARY_KINDS else 0
            if len(g.inputs) != want:
                raise CircuitError(f"gate {g.id!r}: {g.kind} takes {want} inputs, got {len(g.inputs)}")
            for src in g.inputs:
                if src not in seen:
                    raise CircuitError(f"gate {g.id!r}: input {src!r} is undefined or not earlier in order")
            if g.kind == "INPUT" and not (isinstance(g.const, int) and 1 <= g.const <= self.J):
                raise CircuitError(f"gate {g.id!r}: input coordinate must be in 1..{self.J}")
            if g.kind in ("CONST", "MUL_CONST") and g.const is None:
                raise CircuitError(f"gate {g.id!r}: missing constant")
            seen[g.id] = g
        if self.output not in seen:
            raise CircuitError(f"output {self.output!r} is not a gate")
        object.__setattr__(self, "_by_id", seen)

    def gate(self, gid: str) -> Gate:
        return self._by_id[gid]

    @property
    def size(self) -> int:
        return len(self.gates)

    # ---- construction helpers -------------------------------------------------
    @classmethod
    def from_ops(cls, J, ops, output=None, alpha=ONE):
        """Build from (id, kind, inputs, const) tuples; inputs x1..xJ are implicit."""
        gates = [Gate(f"x{j}", "INPUT", (), j) for j in range(1, J + 1)]
        for op in ops:
            gid, kind, inputs = op[0], op[1], tuple(op[2])
            const = op[3] if len(op) > 3 else None
            if const is not None:
                const = Q(const)
            gates.append(Gate(gid, kind, inputs, const))
        return cls(J, tuple(gates), output or gates[-1].id, Q(alpha))

    @classmethod
    def from_doc(cls, doc: dict) -> "ArithmeticCircuit":
        try:
            J = int(doc["J"])
            alpha = parse_rat(doc.get("alpha", "1"))
            ops = []
            for g in doc["gates"]:
                const = g.get("const")
                ops.append((str(g["id"]), g["kind"], [str(i) for i in g.get("inputs", [])],
                            None if const is None else parse_rat(const)))
        except (KeyError, TypeError) as exc:
            raise CircuitError(f"circuit document missing field: {exc}") from exc
        return cls.from_ops(J, ops, str(doc["output"]), alpha)

    def to_doc(self) -> dict:
        gates = []
        for g in self.gates:
            if g.kind == "INPUT":
                continue
            entry = {"id": g.id, "kind": g.kind, "inputs": list(g.inputs)}
            if g.const is not None:
                entry["const"] = rat_str(g.const)
            gates.append(entry)
        return {"J": self.J, "alpha": rat_str(self.alpha), "gates": gates, "output": self.output}


def _apply(kind, a, b, const):
    if kind == "ADD":
        return a + b
    if kind == "SUB":
        return a - b
    if kind == "MUL":
        return a * b
    if kind == "MUL_CONST":
        return const * a
    if kind == "MAX":
        return a if a >= b else b
    if kind == "MIN":
        return a if a <= b else b
    if kind == "GT":
        return ONE if a > b else ZERO  # ties output 0
    raise CircuitError(f"unknown kind {kind}")


def eval_all(circuit: ArithmeticCircuit, x) -> dict:
    """Exact value of every gate at x."""
    if len(x) != circuit.J:
        raise ValueError(f"expected {circuit.J} coordinates, got {len(x)}")
    vals = {}
    for g in circuit.gates:
        if g.kind == "INPUT":
            vals[g.id] = Q(x[g.const - 1])
        elif g.kind == "CONST":
            vals[g.id] = g.const
        else:
            a = vals[g.inputs[0]]
            b = vals[g.inputs[1]] if len(g.inputs) > 1 else None
            vals[g.id] = _apply(g.kind, a, b, g.const)
    return vals


def eval_arith(circuit: ArithmeticCircuit, x):
    """Exact value of the circuit output at x in [0,1]^J."""
    for xi in x:
        if not ZERO <= Q(xi) <= ONE:
            raise ValueError(f"coordinate {xi} outside [0,1]")
    return eval_all(circuit, x)[circuit.output]


def mul_depth(circuit: ArithmeticCircuit) -> int:
    """Largest number of MUL gates on any input-to-output path."""
    depth = {}
    for g in circuit.gates:
        here = 1 if g.kind == "MUL" else 0
        depth[g.id] = here + max((depth[i] for i in g.inputs), default=0)
    return depth[circuit.output]


@dataclass(frozen=True)
class WellBehavedReport:
    mul_count: int
    bound: int
    passed: bool


def check_well_behaved(circuit: ArithmeticCircuit) -> WellBehavedReport:
    bound = math.ceil(math.log2(circuit.size)) if circuit.size > 1 else 0
    count = mul_depth(circuit)
    return WellBehavedReport(count, bound, count <= bound)


def grid_delta(circuit: ArithmeticCircuit, x, j: int, N_in: int):
    """phi(x + 2^-N_in e_j) - phi(x) for a grid point x."""
    h = pow2(-N_in)
    x = [Q(v) for v in x]
    for v in x:
        if (v / h).denominator != 1:
            raise ValueError(f"{v} is not on the 2^-{N_in} grid")
    if x[j - 1] > ONE - h:
        raise ValueError(f"coordinate {j} is at the upper grid edge")
    up = list(x)
    up[j - 1] += h
    return eval_arith(circuit, up) - eval_arith(circuit, x)


@dataclass(frozen=True)
class GDVerdict:
    passed: bool
    gradient: tuple
    slack: tuple  # per dimension: eps minus the worst applicable violation


def check_gd_fp(gradient_oracle, x, eps, upper=ONE) -> GDVerdict:
    """Box-constrained fixed-point test on [0, upper]^J: each active face condition within eps."""
    eps = Q(eps)
    grads, slack = [], []
    for j in range(1, len(x) + 1):
        g = gradient_oracle(x, j)
        if g is None:
            raise ValueError(f"gradient oracle failed in dimension {j}")
        g = Q(g)
        s = None
        if x[j - 1] > 0:
            s = eps + g
        if x[j - 1] < upper:
            up = eps - g
            s = up if s is None else min(s, up)
        grads.append(g)
        slack.append(eps if s is None else s)
    return GDVerdict(all(s >= 0 for s in slack), tuple(grads), tuple(slack))


def finite_difference_oracle(circuit: ArithmeticCircuit, h=None, N_in: int = None):
    """Central difference gradient, one-sided at the box faces.

    The default step is 2^(-N_in-2) when N_in is given, else 2^-12.
    """
    if h is None:
        h = pow2(-(N_in + 2)) if N_in is not None else pow2(-12)
    h = Q(h)

    def oracle(x, j):
        lo = list(map(Q, x))
        hi = list(lo)
        hi[j - 1] = min(ONE, hi[j - 1] + h)
        lo[j - 1] = max(ZERO, lo[j - 1] - h)
        width = hi[j - 1] - lo[j - 1]
        return (eval_arith(circuit, hi) - eval_arith(circuit, lo)) / width

    return oracle


@dataclass(frozen=True)
class GDInstance:
    circuit: ArithmeticCircuit
    eps: object
    alpha: object

    def __post_init__(self):
        if Q(self.eps) <= 0 or Q(self.alpha) <= 0:
            raise ValueError("eps and alpha must be positive")


@dataclass(frozen=True)
class DerivedGridParams:
    N_in: int
    eps_R: object
    lam: object
    N_out: int
    D: int
    mul_depth: int
    notes: tuple = field(default_factory=tuple)


def grid_exponent(eps, alpha) -> int:
    """Smallest n with 2^-n <= (eps / 6 alpha)^3 (may be <= 0)."""
    target = (Q(eps) / (6 * Q(alpha))) ** 3
    n = 0
    while pow2(-n) > target:
        n += 1
    while n > -64 and pow2(-(n - 1)) <= target:
        n -= 1
    return n


def derive_params(instance: GDInstance, boolean_depth_hint: int = 1, N_in_override: int = None,
                  mode: str = "strict") -> DerivedGridParams:
    notes = []
    ratio = Q(instance.eps) / (6 * Q(instance.alpha))
    N_in = grid_exponent(instance.eps, instance.alpha)
    eps_R = ratio ** 4
    if N_in < 1:
        warnings.warn(f"grid exponent {N_in} clamped to 1")
        notes.append(f"N_in clamped from {N_in} to 1")
        N_in = 1
    if N_in_override is not None:
        if mode != "desk":
            raise ValueError("N_in override is only allowed in desk mode")
        if N_in_override < 1:
            raise ValueError("parameters produce N_in < 1")
        if N_in_override != N_in:
            notes.append(f"N_in overridden from {N_in} to {N_in_override}")
            N_in = N_in_override
            # keep eps_R = (2^-N_in)^(4/3), rounded to a power of two
            eps_R = pow2(-((4 * N_in + 2) // 3))
    D = max(1, int(boolean_depth_hint))
    md = mul_depth(instance.circuit)
    lam = Q(instance.alpha) * pow2(-2 * N_in)
    return DerivedGridParams(N_in, eps_R, lam, (N_in + D) * (1 << md), D, md, tuple(notes))


def grid_points(N_in: int, J: int = 2):
    """All points of [0,1)^J on the 2^-N_in grid, lexicographic."""
    n = 1 << N_in
    h = pow2(-N_in)
    if J == 1:
        return [(i * h,) for i in range(n)]
    return [tuple(p) + (i * h,) for p in grid_points(N_in, J - 1) for i in range(n)]


@dataclass(frozen=True)
class LiftResult:
    point: tuple
    verdict: bool
    violation: tuple = None  # (j, delta_j) when verdict is false
    deltas: tuple = ()


def lift_grid_solution(x_grid, N_in: int, eps_R, circuit: ArithmeticCircuit) -> LiftResult:
    """Check the grid finite-difference condition and rescale onto [0,1]^J."""
    h = pow2(-N_in)
    x = tuple(Q(v) for v in x_grid)
    for v in x:
        if not ZERO <= v <= ONE - h or (v / h).denominator != 1:
            raise ValueError(f"{v} is not a point of the 2^-{N_in} grid in [0,1)")
    eps_R = Q(eps_R)
    deltas = []
    violation = None
    for j in range(1, len(x) + 1):
        up = list(x)
        up[j - 1] += h
        d = eval_arith(circuit, up) - eval_arith(circuit, x)
        deltas.append(d)
        if violation is None:
            if x[j - 1] != ONE - h and d > eps_R:
                violation = (j, d)
            elif x[j - 1] != ZERO and d < -eps_R:
                violation = (j, d)
    lifted = tuple(v / (ONE - h) for v in x)
    return LiftResult(lifted, violation is None, violation, tuple(deltas))
