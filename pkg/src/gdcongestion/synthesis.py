"""Lowering an arithmetic circuit to a boolean circuit on the input grid.

Numbers are two's-complement fixed-point words whose width and number of
fractional bits are chosen by exact interval analysis, so every
intermediate value is represented without rounding.  Adders are
ripple-carry, multipliers shift-and-add, comparisons use the sign of a
difference.  Constant bits are folded away and structurally equal gates
are shared.  A final pass inserts buffer trees so that no wire feeds more
than two gates.

The compiled circuit reads the N_in-bit grid coordinates of x and
outputs phi(x) and Delta_j(x) = phi(x + 2^-N_in e_j) - phi(x), truncated
to N_out fractional bits.  phi is clamped to [0, 1 - 2^-N_out]; each
Delta_j is emitted as a sign bit plus N_out magnitude bits.
"""
from __future__ import annotations

from dataclasses import dataclass

from .numerics import ONE, ZERO, Q, pow2
from .potential import ArithmeticCircuit, mul_depth


class SynthesisError(ValueError):
    pass


WIRE_KINDS = ("INPUT", "CONST0", "CONST1", "NOT", "BUF", "AND", "OR", "XOR")

_C0 = ("const", 0)
_C1 = ("const", 1)


def _is_const(s):
    return isinstance(s, tuple)


@dataclass(frozen=True)
class Wire:
    id: int
    kind: str
    inputs: tuple
    depth: int


@dataclass(frozen=True)
class BooleanCircuit:
    J: int
    N_in: int
    N_out: int
    wires: tuple
    input_wires: tuple  # input_wires[j-1][k-1] is bit k (MSB first) of x_j
    phi_bits: tuple  # phi_bits[k-1] carries weight 2^-k
    delta_sign: tuple  # delta_sign[j-1]
    delta_bits: tuple  # delta_bits[j-1][k-1]

    @property
    def size(self) -> int:
        return len(self.wires)

    @property
    def depth(self) -> int:
        return max((w.depth for w in self.wires), default=0)

    def consumers(self) -> list:
        out = [[] for _ in self.wires]
        for w in self.wires:
            for src in w.inputs:
                out[src].append(w.id)
        return out

    def gate_value(self, wire: Wire, values) -> int:
        """The correct action of ``wire`` given the actions of its inputs."""
        return gate_output(wire.kind, [values[i] for i in wire.inputs])

    def evaluate(self, input_bits) -> list:
        """Correct value of every wire given input_bits[j-1][k-1]."""
        vals = [0] * len(self.wires)
        lookup = {}
        for j, row in enumerate(self.input_wires):
            for k, wid in enumerate(row):
                lookup[wid] = int(input_bits[j][k])
        for w in self.wires:
            if w.kind == "INPUT":
                vals[w.id] = lookup[w.id]
            else:
                vals[w.id] = gate_output(w.kind, [vals[i] for i in w.inputs])
        return vals

    def decode(self, values):
        """(phi, [Delta_1..Delta_J]) read from wire values."""
        phi = sum((pow2(-k) for k, wid in enumerate(self.phi_bits, 1) if values[wid]), ZERO)
        deltas = []
        for j in range(self.J):
            mag = sum((pow2(-k) for k, wid in enumerate(self.delta_bits[j], 1) if values[wid]), ZERO)
            deltas.append(-mag if values[self.delta_sign[j]] else mag)
        return phi, deltas

    def evaluate_grid_point(self, x):
        return self.decode(self.evaluate(grid_bits(x, self.N_in)))

    def to_doc(self) -> dict:
        return {
            "J": self.J,
            "N_in": self.N_in,
            "N_out": self.N_out,
            "wires": [{"id": w.id, "kind": w.kind, "inputs": list(w.inputs), "depth": w.depth}
                      for w in self.wires],
            "inputs": [list(r) for r in self.input_wires],
            "phi_bits": list(self.phi_bits),
            "delta_bits": [{"sign": s, "bits": list(b)} for s, b in zip(self.delta_sign, self.delta_bits)],
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "BooleanCircuit":
        wires = tuple(Wire(int(w["id"]), w["kind"], tuple(w["inputs"]), int(w["depth"])) for w in doc["wires"])
        return cls(int(doc["J"]), int(doc["N_in"]), int(doc["N_out"]), wires,
                   tuple(tuple(r) for r in doc["inputs"]), tuple(doc["phi_bits"]),
                   tuple(d["sign"] for d in doc["delta_bits"]),
                   tuple(tuple(d["bits"]) for d in doc["delta_bits"]))


def gate_output(kind: str, ins) -> int:
    if kind == "CONST0":
        return 0
    if kind == "CONST1":
        return 1
    if kind == "NOT":
        return 1 - ins[0]
    if kind == "BUF":
        return ins[0]
    if kind == "AND":
        return ins[0] & ins[1]
    if kind == "OR":
        return ins[0] | ins[1]
    if kind == "XOR":
        return ins[0] ^ ins[1]
    raise SynthesisError(f"wire kind {kind} has no gate function")


def grid_bits(x, N_in: int):
    """N_in-bit binary expansions (MSB first) of grid coordinates in [0,1)."""
    rows = []
    for v in x:
        n = Q(v) * (1 << N_in)
        if n.denominator != 1 or not 0 <= n < (1 << N_in):
            raise ValueError(f"{v} is not a point of the 2^-{N_in} grid in [0,1)")
        n = int(n)
        rows.append([(n >> (N_in - k)) & 1 for k in range(1, N_in + 1)])
    return rows


# ---- netlist builder ---------------------------------------------------------

class _Netlist:
    def __init__(self):
        self.kinds = []
        self.inputs = []
        self.cache = {}

    def new(self, kind, inputs=()):
        key = (kind, inputs)
        if kind not in ("INPUT",) and key in self.cache:
            return self.cache[key]
        wid = len(self.kinds)
        self.kinds.append(kind)
        self.inputs.append(inputs)
        if kind != "INPUT":
            self.cache[key] = wid
        return wid

    def NOT(self, a):
        if _is_const(a):
            return _C1 if a == _C0 else _C0
        if self.kinds[a] == "NOT":
            return self.inputs[a][0]
        return self.new("NOT", (a,))

    def AND(self, a, b):
        if a == _C0 or b == _C0:
            return _C0
        if a == _C1:
            return b
        if b == _C1:
            return a
        if a == b:
            return a
        return self.new("AND", tuple(sorted((a, b))))

    def OR(self, a, b):
        if a == _C1 or b == _C1:
            return _C1
        if a == _C0:
            return b
        if b == _C0:
            return a
        if a == b:
            return a
        return self.new("OR", tuple(sorted((a, b))))

    def XOR(self, a, b):
        if _is_const(a) and _is_const(b):
            return _C1 if a != b else _C0
        if a == _C0:
            return b
        if b == _C0:
            return a
        if a == _C1:
            return self.NOT(b)
        if b == _C1:
            return self.NOT(a)
        if a == b:
            return _C0
        return self.new("XOR", tuple(sorted((a, b))))

    def MUX(self, sel, if_one, if_zero):
        if if_one == if_zero:
            return if_one
        return self.OR(self.AND(sel, if_one), self.AND(self.NOT(sel), if_zero))

    def OR_all(self, sigs):
        acc = _C0
        for s in sigs:
            acc = self.OR(acc, s)
        return acc


@dataclass
class _Word:
    bits: list  # LSB first, two's complement
    frac: int
    lo: object
    hi: object


def _signed_width(lo, hi, frac):
    L = lo * (1 << frac)
    H = hi * (1 << frac)
    assert L.denominator == 1 and H.denominator == 1
    L, H = int(L), int(H)
    n = 1
    while not (-(1 << (n - 1)) <= L and H <= (1 << (n - 1)) - 1):
        n += 1
    return n


def _dyadic(value):
    """(c, s) with value = c / 2^s, or None."""
    v = Q(value)
    den = v.denominator
    if den & (den - 1):
        return None
    return int(v.numerator), den.bit_length() - 1


class _Arith:
    """Word-level arithmetic on top of the netlist."""

    def __init__(self, net: _Netlist, max_frac: int):
        self.net = net
        self.max_frac = max_frac

    def _check(self, frac, where):
        if frac > self.max_frac:
            raise SynthesisError(
                f"gate {where!r} needs {frac} fractional bits, beyond the {self.max_frac}-bit output window")

    def align(self, w: _Word, frac: int, width: int) -> list:
        bits = [_C0] * (frac - w.frac) + list(w.bits)
        sign = bits[-1]
        if len(bits) > width:
            bits = bits[:width]
        return bits + [sign] * (width - len(bits))

    def const(self, value, where):
        d = _dyadic(value)
        if d is None:
            raise SynthesisError(f"gate {where!r}: constant {value} has no exact binary expansion")
        c, s = d
        self._check(s, where)
        v = Q(value)
        n = _signed_width(v, v, s)
        bits = [(_C1 if (c >> i) & 1 else _C0) for i in range(n)]
        return _Word(bits, s, v, v)

    def add(self, a: _Word, b: _Word, subtract=False) -> _Word:
        net = self.net
        frac = max(a.frac, b.frac)
        lo = a.lo - b.hi if subtract else a.lo + b.lo
        hi = a.hi - b.lo if subtract else a.hi + b.hi
        n = _signed_width(lo, hi, frac)
        width = max(n, len(a.bits) + frac - a.frac, len(b.bits) + frac - b.frac) + 1
        xa = self.align(a, frac, width)
        xb = self.align(b, frac, width)
        if subtract:
            xb = [net.NOT(s) for s in xb]
        carry = _C1 if subtract else _C0
        out = []
        for i in range(n):
            p = net.XOR(xa[i], xb[i])
            out.append(net.XOR(p, carry))
            if i + 1 < n:
                carry = net.OR(net.AND(xa[i], xb[i]), net.AND(carry, p))
        return _Word(out, frac, lo, hi)

    def negate(self, a: _Word) -> _Word:
        zero = _Word([_C0], a.frac, ZERO, ZERO)
        return self.add(zero, a, subtract=True)

    def mul(self, a: _Word, b: _Word, where) -> _Word:
        net = self.net
        frac = a.frac + b.frac
        self._check(frac, where)
        cands = [a.lo * b.lo, a.lo * b.hi, a.hi * b.lo, a.hi * b.hi]
        lo, hi = min(cands), max(cands)
        n = _signed_width(lo, hi, frac)
        xa = self.align(a, a.frac, n)
        xb = self.align(b, b.frac, n)
        acc = [_C0] * n
        for i in range(n):
            if xa[i] == _C0:
                continue
            row = [_C0] * i + [net.AND(xa[i], xb[k - i]) for k in range(i, n)]
            acc = self._add_unsigned(acc, row)
        return _Word(acc, frac, lo, hi)

    def mul_const(self, a: _Word, zeta, where) -> _Word:
        d = _dyadic(zeta)
        if d is None:
            raise SynthesisError(f"gate {where!r}: constant {zeta} has no exact binary expansion")
        c, s = d
        frac = a.frac + s
        self._check(frac, where)
        z = Q(zeta)
        lo, hi = sorted((z * a.lo, z * a.hi))
        n = max(_signed_width(lo, hi, frac), _signed_width(abs(z) * a.lo, abs(z) * a.hi, frac))
        mag = abs(c)
        xa = self.align(a, a.frac, n)
        acc = [_C0] * n
        i = 0
        while mag >> i:
            if (mag >> i) & 1:
                acc = self._add_unsigned(acc, [_C0] * i + xa[: n - i])
            i += 1
        word = _Word(acc, frac, *sorted((abs(z) * a.lo, abs(z) * a.hi)))
        if c < 0:
            word = self.negate(word)
        word.lo, word.hi = lo, hi
        word.bits = self.align(word, frac, n)
        return word

    def _add_unsigned(self, xa, xb):
        net = self.net
        carry = _C0
        out = []
        for i in range(len(xa)):
            p = net.XOR(xa[i], xb[i])
            out.append(net.XOR(p, carry))
            if i + 1 < len(xa):
                carry = net.OR(net.AND(xa[i], xb[i]), net.AND(carry, p))
        return out

    def less_than_zero(self, w: _Word):
        return w.bits[-1]

    def gt(self, a: _Word, b: _Word) -> _Word:
        diff = self.add(b, a, subtract=True)  # a > b iff b - a < 0
        bit = diff.bits[-1]
        return _Word([bit, _C0], 0, ZERO, ONE)

    def select(self, sel, if_one: _Word, if_zero: _Word, lo, hi) -> _Word:
        frac = max(if_one.frac, if_zero.frac)
        n = max(_signed_width(lo, hi, frac), len(if_one.bits) + frac - if_one.frac,
                len(if_zero.bits) + frac - if_zero.frac)
        xa = self.align(if_one, frac, n)
        xb = self.align(if_zero, frac, n)
        return _Word([self.net.MUX(sel, p, q) for p, q in zip(xa, xb)], frac, lo, hi)

    def maximum(self, a, b):
        a_less = self.add(a, b, subtract=True).bits[-1]
        return self.select(a_less, b, a, max(a.lo, b.lo), max(a.hi, b.hi))

    def minimum(self, a, b):
        a_less = self.add(a, b, subtract=True).bits[-1]
        return self.select(a_less, a, b, min(a.lo, b.lo), min(a.hi, b.hi))


def _lower(circuit: ArithmeticCircuit, arith: _Arith, inputs) -> _Word:
    words = {}
    for g in circuit.gates:
        if g.kind == "INPUT":
            words[g.id] = inputs[g.const - 1]
        elif g.kind == "CONST":
            words[g.id] = arith.const(g.const, g.id)
        elif g.kind == "ADD":
            words[g.id] = arith.add(words[g.inputs[0]], words[g.inputs[1]])
        elif g.kind == "SUB":
            words[g.id] = arith.add(words[g.inputs[0]], words[g.inputs[1]], subtract=True)
        elif g.kind == "MUL":
            words[g.id] = arith.mul(words[g.inputs[0]], words[g.inputs[1]], g.id)
        elif g.kind == "MUL_CONST":
            words[g.id] = arith.mul_const(words[g.inputs[0]], g.const, g.id)
        elif g.kind == "MAX":
            words[g.id] = arith.maximum(words[g.inputs[0]], words[g.inputs[1]])
        elif g.kind == "MIN":
            words[g.id] = arith.minimum(words[g.inputs[0]], words[g.inputs[1]])
        elif g.kind == "GT":
            words[g.id] = arith.gt(words[g.inputs[0]], words[g.inputs[1]])
    return words[circuit.output]


def _fraction_bits(net: _Netlist, w: _Word, N_out: int):
    """(bits k=1..N_out of the fractional part, OR of integer bits) of a word."""
    frac_bits = []
    for k in range(1, N_out + 1):
        idx = w.frac - k
        frac_bits.append(w.bits[idx] if 0 <= idx < len(w.bits) - 1 else _C0)
    overflow = net.OR_all(w.bits[w.frac:-1])
    return frac_bits, overflow


def compile_boolean(circuit: ArithmeticCircuit, N_in: int, N_out: int) -> BooleanCircuit:
    """Boolean circuit computing phi and every Delta_j on the 2^-N_in grid."""
    if N_in < 1 or N_out < 1:
        raise SynthesisError("N_in and N_out must be positive")
    J = circuit.J
    net = _Netlist()
    arith = _Arith(net, N_out)
    h = pow2(-N_in)
    input_ids, base, shifted = [], [], []
    for j in range(J):
        row = [net.new("INPUT") for _ in range(N_in)]  # MSB first
        input_ids.append(row)
        lsb_first = list(reversed(row))
        base.append(_Word(lsb_first + [_C0, _C0], N_in, ZERO, ONE - h))
        carry, inc = _C1, []
        for s in lsb_first:
            inc.append(net.XOR(s, carry))
            carry = net.AND(s, carry)
        shifted.append(_Word(inc + [carry, _C0], N_in, h, ONE))

    phi_word = _lower(circuit, arith, base)
    phi_frac, phi_over = _fraction_bits(net, phi_word, N_out)
    phi_neg = phi_word.bits[-1]
    keep = net.NOT(phi_neg)
    phi_out = [net.AND(keep, net.OR(phi_over, b)) for b in phi_frac]

    delta_sign, delta_out = [], []
    for j in range(J):
        point = [shifted[i] if i == j else base[i] for i in range(J)]
        up = _lower(circuit, arith, point)
        diff = arith.add(up, phi_word, subtract=True)
        neg = diff.bits[-1]
        bound = max(abs(diff.lo), abs(diff.hi))
        flipped = arith.negate(diff)
        mag = arith.select(neg, flipped, diff, ZERO, bound)
        mag_frac, mag_over = _fraction_bits(net, mag, N_out)
        delta_sign.append(neg)
        delta_out.append([net.OR(mag_over, b) for b in mag_frac])

    return _finalize(net, J, N_in, N_out, input_ids, phi_out, delta_sign, delta_out)


def _finalize(net, J, N_in, N_out, input_ids, phi_out, delta_sign, delta_out) -> BooleanCircuit:
    """Drop dead logic, materialize constant outputs, cap fan-out at two."""
    outputs = list(phi_out) + list(delta_sign) + [b for row in delta_out for b in row]
    live = [False] * len(net.kinds)
    for row in input_ids:
        for wid in row:
            live[wid] = True
    stack = [s for s in outputs if not _is_const(s)]
    while stack:
        w = stack.pop()
        if live[w] and net.kinds[w] != "INPUT":
            continue
        live[w] = True
        stack.extend(net.inputs[w])

    consumers = {}
    for w in range(len(net.kinds)):
        if live[w]:
            for slot, src in enumerate(net.inputs[w]):
                consumers.setdefault(src, []).append((w, slot))

    kinds, ins, depth = [], [], []
    new_id = {}
    feed = {}  # (consumer, slot) -> new wire id of the source to read

    def emit(kind, inputs):
        wid = len(kinds)
        kinds.append(kind)
        ins.append(tuple(inputs))
        depth.append(1 + max((depth[i] for i in inputs), default=-1) if inputs else 0)
        return wid

    def distribute(src, slots):
        if len(slots) <= 2:
            for s in slots:
                feed[s] = src
            return
        half = (len(slots) + 1) // 2
        for part in (slots[:half], slots[half:]):
            if len(part) == 1:
                feed[part[0]] = src
            else:
                distribute(emit("BUF", (src,)), part)

    for w in range(len(net.kinds)):
        if not live[w]:
            continue
        srcs = [feed[(w, slot)] for slot in range(len(net.inputs[w]))]
        new_id[w] = emit(net.kinds[w], srcs)
        distribute(new_id[w], consumers.get(w, []))

    const_ids = {}

    def out_id(s):
        if _is_const(s):
            kind = "CONST1" if s == _C1 else "CONST0"
            if kind not in const_ids:
                const_ids[kind] = emit(kind, ())
            return const_ids[kind]
        return new_id[s]

    phi_bits = tuple(out_id(s) for s in phi_out)
    d_sign = tuple(out_id(s) for s in delta_sign)
    d_bits = tuple(tuple(out_id(s) for s in row) for row in delta_out)
    wires = tuple(Wire(i, kinds[i], ins[i], depth[i]) for i in range(len(kinds)))
    inputs = tuple(tuple(new_id[w] for w in row) for row in input_ids)
    return BooleanCircuit(J, N_in, N_out, wires, inputs, phi_bits, d_sign, d_bits)


def exact_outputs(circuit: ArithmeticCircuit, x, N_in: int, N_out: int):
    """Reference values: phi and Delta_j truncated the way the circuit emits them."""
    from .potential import eval_arith

    scale = 1 << N_out
    top = Q(scale - 1, scale)
    phi = eval_arith(circuit, x)
    phi_t = min(max(Q(int(_floor(phi * scale)), scale), ZERO), top)
    deltas = []
    for j in range(len(x)):
        up = list(x)
        up[j] = Q(up[j]) + pow2(-N_in)
        d = eval_arith(circuit, up) - phi
        mag = min(Q(int(_floor(abs(d) * scale)), scale), top)
        deltas.append(-mag if d < 0 else mag)
    return phi_t, deltas


def _floor(v):
    v = Q(v)
    return v.numerator // v.denominator


def compile_with_depth_feedback(circuit: ArithmeticCircuit, N_in: int, N_out: int = None):
    """Compile, then set N_out = (N_in + D) * 2^(mul depth) from the measured depth D.

    Returns (boolean circuit, N_out, D).  When N_out is given it is used as is.
    """
    md = mul_depth(circuit)
    if N_out is not None:
        bc = compile_boolean(circuit, N_in, N_out)
        return bc, N_out, bc.depth
    guess = N_in * (1 << md) + 8
    first = compile_boolean(circuit, N_in, guess)
    D = first.depth
    for _ in range(3):
        N_out = (N_in + D) * (1 << md)
        bc = compile_boolean(circuit, N_in, N_out)
        if bc.depth == D:
            return bc, N_out, D
        D = bc.depth
    raise SynthesisError("depth feedback did not stabilize")
