"""Polynomial potentials, CCLS and KKT checkers, rounding maps, and the degree-5 game encoding."""
from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .games import PolytensorGame, VerifyOptions, nash_regret
from .numerics import ONE, ZERO, Q, parse_rat, pow2, rat_str
from .potential import ArithmeticCircuit, check_gd_fp, eval_arith

# Float screens discard candidates only when they fail by more than this;
# every surviving candidate is re-decided in exact arithmetic.
SCREEN_TOL = 1e-9


class Polynomial:
    """Sparse polynomial with exact rational coefficients."""

    def __init__(self, nvars, monomials=()):
        self.nvars = int(nvars)
        terms = {}
        for coeff, exps in monomials:
            exps = tuple(int(e) for e in exps)
            if len(exps) != self.nvars or any(e < 0 for e in exps):
                raise ValueError(f"bad exponent vector {exps}")
            terms[exps] = terms.get(exps, ZERO) + Q(coeff)
        self.terms = {e: c for e, c in sorted(terms.items()) if c != 0}

    @property
    def degree(self) -> int:
        return max((sum(e) for e in self.terms), default=0)

    def __call__(self, x):
        return poly_eval(self, x)

    def __add__(self, other):
        if other.nvars != self.nvars:
            raise ValueError("variable counts differ")
        return Polynomial(self.nvars, [(c, e) for e, c in self.terms.items()] +
                          [(c, e) for e, c in other.terms.items()])

    def __eq__(self, other):
        return isinstance(other, Polynomial) and self.nvars == other.nvars and self.terms == other.terms

    def componentwise_concave(self) -> bool:
        """Every monomial is concave along each single coordinate on the nonnegative orthant."""
        return all(c < 0 or max(e, default=0) <= 1 for e, c in self.terms.items())

    def smoothness_bound(self, upper=ONE):
        """Upper bound on the spectral norm of the Hessian over [0, upper]^J (sum of entry bounds)."""
        upper = Q(upper)
        total = ZERO
        for exps, c in self.terms.items():
            deg = sum(exps)
            if deg < 2:
                continue
            scale = abs(c) * upper ** (deg - 2)
            for i in range(self.nvars):
                for j in range(self.nvars):
                    if i == j:
                        f = exps[i] * (exps[i] - 1)
                    else:
                        f = exps[i] * exps[j]
                    total += scale * f
        return total

    def eval_array(self, X):
        """Float evaluation; X has shape (nvars, N)."""
        X = np.asarray(X, dtype=float)
        out = np.zeros(X.shape[1:])
        for exps, c in self.terms.items():
            term = np.full(X.shape[1:], float(c))
            for v, e in enumerate(exps):
                if e:
                    term = term * X[v] ** e
            out += term
        return out

    def grad_array(self, X, j):
        X = np.asarray(X, dtype=float)
        out = np.zeros(X.shape[1:])
        for exps, c in self.terms.items():
            e = exps[j - 1]
            if not e:
                continue
            term = np.full(X.shape[1:], float(c * e))
            for v, ev in enumerate(exps):
                p = ev - 1 if v == j - 1 else ev
                if p:
                    term = term * X[v] ** p
            out += term
        return out

    def to_doc(self) -> dict:
        return {"vars": self.nvars,
                "monomials": [{"coeff": rat_str(c), "exps": list(e)} for e, c in self.terms.items()]}

    @classmethod
    def from_doc(cls, doc: dict) -> "Polynomial":
        return cls(doc["vars"], [(parse_rat(m["coeff"]), m["exps"]) for m in doc["monomials"]])

    def __repr__(self):
        return f"Polynomial({self.nvars}, {len(self.terms)} monomials)"


def _check_point(poly, x):
    if len(x) != poly.nvars:
        raise ValueError(f"point has {len(x)} coordinates, polynomial has {poly.nvars} variables")


def poly_eval(poly: Polynomial, x):
    _check_point(poly, x)
    x = [Q(v) for v in x]
    total = ZERO
    for exps, c in poly.terms.items():
        term = c
        for v, e in zip(x, exps):
            if e:
                term *= v ** e
        total += term
    return total


def poly_grad(poly: Polynomial, x, j: int):
    """Exact partial derivative in coordinate j (1-based)."""
    _check_point(poly, x)
    if not 1 <= j <= poly.nvars:
        raise IndexError(f"coordinate {j} out of range")
    x = [Q(v) for v in x]
    total = ZERO
    for exps, c in poly.terms.items():
        e = exps[j - 1]
        if not e:
            continue
        term = c * e
        for v, (xv, ev) in enumerate(zip(x, exps)):
            p = ev - 1 if v == j - 1 else ev
            if p:
                term *= xv ** p
        total += term
    return total


def gradient_oracle(poly: Polynomial):
    return lambda x, j: poly_grad(poly, x, j)


def _as_function(phi):
    if isinstance(phi, ArithmeticCircuit):
        return lambda x: eval_arith(phi, x)
    return phi


def _check_unit_box(x):
    if any(not 0 <= Q(v) <= 1 for v in x):
        raise ValueError("point must lie in the unit box")


# ---- CCLS -------------------------------------------------------------------

@dataclass(frozen=True)
class CCLSParams:
    eps_bar: object
    delta: object

    def __post_init__(self):
        object.__setattr__(self, "eps_bar", Q(self.eps_bar))
        object.__setattr__(self, "delta", Q(self.delta))
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.eps_bar <= 0:
            raise ValueError("eps_bar must be positive")

    def to_doc(self):
        return {"eps_bar": rat_str(self.eps_bar), "delta": rat_str(self.delta)}


@dataclass(frozen=True)
class CCLSVerdict:
    passed: bool
    slack: tuple  # per coordinate: (down, up) margins, both must be >= 0


def ccls_check(phi, x, params: CCLSParams) -> CCLSVerdict:
    """Multiplicative-deviation local optimality in every coordinate."""
    _check_unit_box(x)
    f = _as_function(phi)
    x = [Q(v) for v in x]
    here = f(x)
    delta, eps_bar = params.delta, params.eps_bar
    slack = []
    for j in range(len(x)):
        down = list(x)
        down[j] = (1 - delta) * x[j]
        up = list(x)
        up[j] = (1 - delta) * x[j] + delta
        slack.append((here - f(down) + eps_bar, here - f(up) + eps_bar))
    return CCLSVerdict(all(a >= 0 and b >= 0 for a, b in slack), tuple(slack))


def concavity_witness_check(phi, j: int, x_a, x_b, x_c) -> bool:
    """True iff the collinear triple shows phi dipping below its chord along coordinate j."""
    pts = [[Q(v) for v in p] for p in (x_a, x_b, x_c)]
    n = len(pts[0])
    if not 1 <= j <= n or any(len(p) != n for p in pts):
        raise ValueError("points must share a dimension containing j")
    for i in range(n):
        if i != j - 1 and not pts[0][i] == pts[1][i] == pts[2][i]:
            raise ValueError(f"points differ outside coordinate {j}")
    a, b, c = (p[j - 1] for p in pts)
    if a == c:
        raise ValueError("degenerate triple: outer points coincide")
    if not (a < b < c or c < b < a):
        raise ValueError("middle point must lie strictly between the outer points")
    f = _as_function(phi)
    fa, fb, fc = (f(p) for p in pts)
    lam = (b - a) / (c - a)
    return fb < (1 - lam) * fa + lam * fc


def boundary_round(x, threshold):
    """Snap coordinates within threshold of 0 or 1 to that face."""
    threshold = Q(threshold)
    if threshold >= Q(1, 2):
        raise ValueError("rounding threshold must be below 1/2")
    out = []
    for v in x:
        v = Q(v)
        if v < threshold:
            out.append(ZERO)
        elif v > 1 - threshold:
            out.append(ONE)
        else:
            out.append(v)
    return tuple(out)


def con_gd_to_ccls_params(eps, alpha, J: int) -> CCLSParams:
    eps, alpha = Q(eps), Q(alpha)
    if eps <= 0 or alpha <= 0:
        raise ValueError("eps and alpha must be positive")
    delta = eps / (4 * alpha)
    if delta >= Q(1, 2):
        raise ValueError(f"delta = {delta} is at least 1/2; rounding cases overlap")
    return CCLSParams(eps ** 3 / (64 * J * alpha ** 2), delta)


def ccls_solution_to_con_gd(x, params: CCLSParams):
    return boundary_round(x, params.delta)


def ccls_to_con_gd_params(eps_bar):
    eps_bar = Q(eps_bar)
    if eps_bar <= 0:
        raise ValueError("eps_bar must be positive")
    return eps_bar


def con_gd_solution_to_ccls(x):
    return tuple(Q(v) for v in x)


# ---- KKT --------------------------------------------------------------------

@dataclass(frozen=True)
class KKTParams:
    eps_bar: object
    kappa: object
    alpha: object

    def __post_init__(self):
        for name in ("eps_bar", "kappa", "alpha"):
            v = Q(getattr(self, name))
            if v <= 0:
                raise ValueError(f"{name} must be positive")
            object.__setattr__(self, name, v)

    def to_doc(self):
        return {"eps_bar": rat_str(self.eps_bar), "kappa": rat_str(self.kappa), "alpha": rat_str(self.alpha)}


@dataclass(frozen=True)
class KKTVerdict:
    passed: bool
    axis_ok: bool
    ball_ok: bool
    certificate_ok: bool
    worst_slack: object
    samples: int


@functools.lru_cache(maxsize=16)
def ball_offsets(J: int, resolution: int):
    """Nonzero integer offsets o with |o| <= resolution, as a (count, J) array."""
    r = int(resolution)
    if r < 1:
        raise ValueError("resolution must be positive")
    offs = np.array(list(itertools.product(range(-r, r + 1), repeat=J)), dtype=np.int64)
    keep = (offs * offs).sum(axis=1) <= r * r
    keep &= np.any(offs != 0, axis=1)
    return offs[keep]


def kkt_check(phi, x, params: KKTParams, grid_resolution: int = 57) -> KKTVerdict:
    """Ball condition on axis probes and a lattice sample, plus a gradient certificate.

    The certificate bounds grad . d over the ball intersected with the box by
    eps_bar times the norm of the gradient with outward-blocked components
    removed; when that is at most kappa the ball condition holds everywhere
    for any function whose gradient is alpha-Lipschitz.
    """
    _check_unit_box(x)
    x = tuple(Q(v) for v in x)
    J = len(x)
    f = _as_function(phi)
    here = f(x)
    budget = params.alpha / 2 * params.eps_bar ** 2 + params.kappa
    worst = None

    def slack_at(y):
        return here - f(y) + budget

    axis_ok = True
    for j in range(J):
        for sgn in (1, -1):
            y = list(x)
            y[j] += sgn * params.eps_bar
            if 0 <= y[j] <= 1:
                s = slack_at(y)
                worst = s if worst is None else min(worst, s)
                axis_ok &= s >= 0

    offs = ball_offsets(J, grid_resolution)
    step = params.eps_bar / grid_resolution
    fx = np.array([float(v) for v in x])
    pts = fx + offs * float(step)
    # lattice points within float noise of a face are kept and clipped exactly below
    slop = 1e-12
    inside = np.all((pts >= -slop) & (pts <= 1 + slop), axis=1)
    offs, pts = offs[inside], pts[inside]
    ball_ok = True
    samples = 0
    if len(offs):
        if isinstance(phi, Polynomial):
            approx = float(here) - phi.eval_array(np.clip(pts, 0, 1).T) + float(budget)
            suspects = offs[approx < SCREEN_TOL * (1 + abs(float(here)))]
        else:
            suspects = offs
        for o in suspects:
            y = tuple(xv + int(ov) * step for xv, ov in zip(x, o))
            if not all(0 <= v <= 1 for v in y):
                continue
            s = slack_at(y)
            worst = s if worst is None else min(worst, s)
            if s < 0:
                ball_ok = False
                break
        samples = len(offs)

    certificate_ok = False
    if isinstance(phi, Polynomial):
        norm2 = ZERO
        for j in range(1, J + 1):
            g = poly_grad(phi, x, j)
            if (x[j - 1] == 1 and g > 0) or (x[j - 1] == 0 and g < 0):
                continue
            norm2 += g * g
        certificate_ok = params.eps_bar ** 2 * norm2 <= params.kappa ** 2
    passed = axis_ok and ball_ok and certificate_ok
    return KKTVerdict(passed, axis_ok, ball_ok, certificate_ok, worst, samples)


def expl_to_kkt_params(eps, alpha, J: int) -> KKTParams:
    eps, alpha = Q(eps), Q(alpha)
    if eps <= 0 or alpha <= 0:
        raise ValueError("eps and alpha must be positive")
    eps_bar = eps / (6 * J * alpha)
    if eps_bar >= Q(1, 2):
        raise ValueError(f"eps_bar = {eps_bar} is at least 1/2; rounding cases overlap")
    return KKTParams(eps_bar, eps ** 2 / (24 * J * alpha), alpha)


def kkt_solution_to_expl(x, params: KKTParams):
    return boundary_round(x, params.eps_bar)


def kkt_to_expl_params(eps_bar, kappa, J: int):
    eps_bar, kappa = Q(eps_bar), Q(kappa)
    if eps_bar <= 0 or kappa <= 0:
        raise ValueError("eps_bar and kappa must be positive")
    return kappa / (J * eps_bar)


# ---- degree-5 encoding of polytensor games ------------------------------------

@dataclass
class Deg5Instance:
    poly: Polynomial
    eps: object
    C: object
    eps_N: object
    offsets: tuple  # first coordinate of each player's block
    action_counts: tuple
    source: PolytensorGame = field(repr=False, default=None)
    upper: object = Q(2)

    @property
    def A(self) -> int:
        return sum(self.action_counts)

    def coord(self, player: int, action: int) -> int:
        return self.offsets[player] + action

    def to_doc(self) -> dict:
        return {"poly": self.poly.to_doc(), "eps": rat_str(self.eps), "C": rat_str(self.C),
                "eps_N": rat_str(self.eps_N), "action_counts": list(self.action_counts),
                "domain": [0, rat_str(self.upper)]}


def polytensor_to_deg5(ptg: PolytensorGame, eps_N) -> Deg5Instance:
    """phi(x) = -C sum_i (s_i - 1)^2 + U(x) on [0,2]^A with U the multilinear game utility."""
    eps_N = Q(eps_N)
    if eps_N <= 0:
        raise ValueError("eps_N must be positive")
    if ptg.order > 5:
        raise ValueError(f"game order {ptg.order} exceeds 5")
    counts = ptg.action_counts
    offsets, acc = [], 0
    for c in counts:
        offsets.append(acc)
        acc += c
    A, n = acc, len(counts)
    C = Q(4 * 2 ** A)
    monos = []

    def unit(*coords):
        e = [0] * A
        for v in coords:
            e[v] += 1
        return tuple(e)

    for i, c in enumerate(counts):
        block = [offsets[i] + k for k in range(c)]
        for k in block:
            monos.append((-C, unit(k, k)))
            monos.append((2 * C, unit(k)))
        for k, k2 in itertools.combinations(block, 2):
            monos.append((-2 * C, unit(k, k2)))
        monos.append((-C, unit()))
    for t in ptg.tensors:
        boxes = [range(counts[p]) for p in t.S]
        for combo in itertools.product(*boxes):
            idx = sum(a * st for a, st in zip(combo, t.strides))
            if t.table[idx]:
                monos.append((t.table[idx], unit(*(offsets[p] + a for p, a in zip(t.S, combo)))))
    poly = Polynomial(A, monos)
    eps = eps_N * pow2(-n) / 3
    return Deg5Instance(poly, eps, C, eps_N, tuple(offsets), tuple(counts), ptg)


def block_sums(inst: Deg5Instance, x):
    return tuple(sum((Q(x[inst.offsets[i] + k]) for k in range(c)), ZERO)
                 for i, c in enumerate(inst.action_counts))


def normalize_to_profile(inst: Deg5Instance, x):
    """Divide each player's block by its sum to get a mixed profile."""
    out = []
    for i, (c, s) in enumerate(zip(inst.action_counts, block_sums(inst, x))):
        if s == 0:
            raise ValueError(f"player {i} has zero total weight; cannot normalize")
        out.append(tuple(Q(x[inst.offsets[i] + k]) / s for k in range(c)))
    return tuple(out)


def check_deg5_fp(inst: Deg5Instance, x):
    return check_gd_fp(gradient_oracle(inst.poly), x, inst.eps, upper=inst.upper)


# ---- random test material -----------------------------------------------------

def random_concave_polynomial(rng, J: int = 2, max_degree: int = 4, terms: int = 6) -> Polynomial:
    """Random polynomial that is concave along every coordinate on the nonnegative orthant.

    Monomials with an exponent of 2 or more get a negative coefficient; the rest
    are multilinear and may carry either sign.
    """
    monos = []
    for _ in range(terms):
        while True:
            exps = [rng.randint(0, 2) for _ in range(J)]
            if 0 < sum(exps) <= max_degree:
                break
        c = Q(rng.randint(1, 8), rng.choice((1, 2, 4)))
        if max(exps) >= 2 or rng.random() < 0.5:
            c = -c
        monos.append((c, exps))
    return Polynomial(J, monos)


# ---- exhaustive grid sweeps ---------------------------------------------------

def unit_grid(N: int, J: int = 2, upper=ONE):
    """All points of the 2^-N lattice in [0, upper]^J, as (exact points, float array)."""
    h = pow2(-N)
    steps = int(Q(upper) / h)
    axis = [h * a for a in range(steps + 1)]
    pts = list(itertools.product(axis, repeat=J))
    arr = np.array([[float(v) for v in p] for p in pts]).T
    return pts, arr


def gd_grid_solutions(poly: Polynomial, eps, N: int = 8, upper=ONE):
    """Every 2^-N lattice point passing check_gd_fp, found exactly after a float screen."""
    eps = Q(eps)
    pts, arr = unit_grid(N, poly.nvars, upper)
    keep = np.ones(len(pts), dtype=bool)
    fe = float(eps)
    for j in range(1, poly.nvars + 1):
        g = poly.grad_array(arr, j)
        tol = SCREEN_TOL * (1 + np.abs(g))
        lo_face = arr[j - 1] == 0
        hi_face = arr[j - 1] == float(upper)
        keep &= np.where(lo_face, True, g >= -fe - tol)
        keep &= np.where(hi_face, True, g <= fe + tol)
    oracle = gradient_oracle(poly)
    return [pts[i] for i in np.nonzero(keep)[0] if check_gd_fp(oracle, pts[i], eps, upper).passed]


def ccls_grid_solutions(poly: Polynomial, params: CCLSParams, N: int = 8):
    pts, arr = unit_grid(N, poly.nvars)
    here = poly.eval_array(arr)
    keep = np.ones(len(pts), dtype=bool)
    d, eb = float(params.delta), float(params.eps_bar)
    for j in range(poly.nvars):
        for shift in (0.0, d):
            moved = arr.copy()
            moved[j] = (1 - d) * arr[j] + shift
            other = poly.eval_array(moved)
            keep &= here - other + eb >= -SCREEN_TOL * (1 + np.abs(here))
    return [pts[i] for i in np.nonzero(keep)[0] if ccls_check(poly, pts[i], params).passed]


def kkt_grid_solutions(poly: Polynomial, params: KKTParams, N: int = 8, grid_resolution: int = 57):
    """Lattice points passing kkt_check; the axis probes screen candidates first."""
    pts, arr = unit_grid(N, poly.nvars)
    here = poly.eval_array(arr)
    budget = float(params.alpha / 2 * params.eps_bar ** 2 + params.kappa)
    eb = float(params.eps_bar)
    keep = np.ones(len(pts), dtype=bool)
    for j in range(poly.nvars):
        for sgn in (1, -1):
            moved = arr.copy()
            moved[j] = arr[j] + sgn * eb
            inside = (moved[j] >= 0) & (moved[j] <= 1)
            other = poly.eval_array(np.clip(moved, 0, 1))
            keep &= ~inside | (here - other + budget >= -SCREEN_TOL * (1 + np.abs(here)))
    return [pts[i] for i in np.nonzero(keep)[0] if kkt_check(poly, pts[i], params, grid_resolution).passed]


@dataclass
class SweepReport:
    checked: int = 0
    counterexamples: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.counterexamples

    def merge(self, other: "SweepReport"):
        self.checked += other.checked
        self.counterexamples.extend(other.counterexamples)


CCLS_SWEEP_DELTAS = (Q(1, 64), Q(1, 8), Q(1, 4), Q(7, 16))


def sweep_con_gd_to_ccls(poly, eps, N=8, deltas=CCLS_SWEEP_DELTAS) -> SweepReport:
    """Fixed points at eps pass the CCLS condition with eps_bar = eps for each delta."""
    rep = SweepReport()
    for x in gd_grid_solutions(poly, eps, N):
        y = con_gd_solution_to_ccls(x)
        for d in deltas:
            rep.checked += 1
            if not ccls_check(poly, y, CCLSParams(ccls_to_con_gd_params(eps), d)).passed:
                rep.counterexamples.append(("con->ccls", x, d))
    return rep


def sweep_ccls_to_con_gd(poly, eps, alpha, N=8) -> SweepReport:
    """CCLS solutions under the derived (eps_bar, delta) round to fixed points at eps."""
    params = con_gd_to_ccls_params(eps, alpha, poly.nvars)
    rep = SweepReport()
    oracle = gradient_oracle(poly)
    for x in ccls_grid_solutions(poly, params, N):
        rep.checked += 1
        if not check_gd_fp(oracle, ccls_solution_to_con_gd(x, params), eps).passed:
            rep.counterexamples.append(("ccls->con", x))
    return rep


def sweep_expl_to_kkt(poly, eps_bar, kappa, alpha, N=8, grid_resolution=57) -> SweepReport:
    """Fixed points at kappa/(J eps_bar) pass kkt_check."""
    eps = kkt_to_expl_params(eps_bar, kappa, poly.nvars)
    params = KKTParams(eps_bar, kappa, alpha)
    rep = SweepReport()
    for x in gd_grid_solutions(poly, eps, N):
        rep.checked += 1
        if not kkt_check(poly, x, params, grid_resolution).passed:
            rep.counterexamples.append(("expl->kkt", x))
    return rep


def sweep_kkt_to_expl(poly, eps, alpha, N=8, grid_resolution=57) -> SweepReport:
    """KKT solutions under the derived (eps_bar, kappa) round to fixed points at eps."""
    params = expl_to_kkt_params(eps, alpha, poly.nvars)
    rep = SweepReport()
    oracle = gradient_oracle(poly)
    for x in kkt_grid_solutions(poly, params, N, grid_resolution):
        rep.checked += 1
        if not check_gd_fp(oracle, kkt_solution_to_expl(x, params), eps).passed:
            rep.counterexamples.append(("kkt->expl", x))
    return rep


def _block_solutions(u, C, eps, h, upper):
    """All lattice blocks v in [0, upper]^m meeting one player's face conditions.

    Each partial is -2C(t - 1) + u_k with t = sum(v), so the conditions
    depend on the block only through t and which faces it touches.
    """
    m = len(u)
    lo = [1 + (uk - eps) / (2 * C) for uk in u]  # interior or zero needs t >= lo
    hi = [1 + (uk + eps) / (2 * C) for uk in u]  # interior or upper needs t <= hi
    top = int(upper / h)
    found = set()
    for corner in itertools.product((0, top), repeat=m):
        t = sum(corner) * h
        if all((t >= lo[k]) if c == 0 else (t <= hi[k]) for k, c in enumerate(corner)):
            found.add(corner)
    sums = set()
    for k in range(m):
        a = math.ceil(lo[k] / h)
        while a * h <= hi[k]:
            sums.add(a)
            a += 1
    for total in sorted(sums):
        t = total * h
        allowed = []
        for k in range(m):
            opts = []
            if t >= lo[k]:
                opts.append("zero")
            if lo[k] <= t <= hi[k]:
                opts.append("mid")
            if t <= hi[k]:
                opts.append("top")
            allowed.append(opts)

        def rec(k, rem, acc):
            if k == m:
                if rem == 0:
                    found.add(tuple(acc))
                return
            rest_max = (m - k - 1) * top
            for kind in allowed[k]:
                if kind == "zero":
                    vals = [0]
                elif kind == "top":
                    vals = [top]
                else:
                    vals = range(max(1, rem - rest_max), min(top - 1, rem) + 1)
                for v in vals:
                    if 0 <= rem - v <= rest_max:
                        rec(k + 1, rem - v, acc + [v])

        if 0 <= total <= m * top:
            rec(0, total, [])
    return sorted(found)


def deg5_grid_solutions(inst: Deg5Instance, N: int = 8):
    """All 2^-N lattice points of [0,2]^A passing check_deg5_fp for a two-player game.

    Player 0's block (at most two actions) is enumerated in full; player 1's
    block is then solved from its own face conditions, and every candidate is
    confirmed by the exact checker.
    """
    if len(inst.action_counts) != 2:
        raise ValueError("lattice solver handles two-player games only")
    swap = inst.action_counts[0] > inst.action_counts[1]
    first, second = (1, 0) if swap else (0, 1)
    if inst.action_counts[first] > 2:
        raise ValueError("one player must have at most two actions")
    h = pow2(-N)
    top = int(inst.upper / h)
    m1 = inst.action_counts[first]
    to_second = _affine_payoffs(inst, first, second)
    to_first = _affine_payoffs(inst, second, first)
    # Whatever faces a block touches, its sum must lie within
    # 1 +- (|u| + eps) / 2C, so blocks far from the simplex are skipped.
    reach = max(abs(b) + inst.upper * sum(abs(s[k]) for s in to_first[1])
                for k, b in enumerate(to_first[0]))
    band = (reach + inst.eps) / (2 * inst.C)
    lo_sum, hi_sum = math.ceil((1 - band) / h), math.floor((1 + band) / h)
    results = []
    for block in itertools.product(range(top + 1), repeat=m1):
        if not lo_sum <= sum(block) <= hi_sum:
            continue
        u = _affine_eval(to_second, block, h)
        for sol in _block_solutions(u, inst.C, inst.eps, h, inst.upper):
            if not _faces_ok(_affine_eval(to_first, sol, h), block, h, inst.C, inst.eps, top):
                continue
            y = [ZERO] * inst.A
            for k, a in enumerate(block):
                y[inst.coord(first, k)] = a * h
            for k, a in enumerate(sol):
                y[inst.coord(second, k)] = a * h
            if check_deg5_fp(inst, y).passed:
                results.append(tuple(y))
    return results


def _affine_payoffs(inst, src, dst):
    """u_k = U(e_k for dst, x_src) as base + sum_a slope[a] * x_src[a].

    With two players U(e_k, x_src) is affine in the other block; at a unit
    block the penalty part of the partial vanishes, leaving exactly that value.
    """
    def payoff(block_values):
        x = [ZERO] * inst.A
        for k, v in enumerate(block_values):
            x[inst.coord(src, k)] = v
        return [poly_grad(inst.poly, _with_block(inst, x, dst, k), inst.coord(dst, k) + 1)
                for k in range(inst.action_counts[dst])]

    m = inst.action_counts[src]
    base = payoff([ZERO] * m)
    slopes = []
    for a in range(m):
        unit = payoff([ONE if b == a else ZERO for b in range(m)])
        slopes.append([uv - bv for uv, bv in zip(unit, base)])
    return base, slopes


def _affine_eval(affine, block, h):
    base, slopes = affine
    u = list(base)
    for a, count in enumerate(block):
        if count:
            for k in range(len(u)):
                u[k] += slopes[a][k] * count * h
    return u


def _faces_ok(u, block, h, C, eps, top):
    """Face conditions of one block whose partials are -2C(t - 1) + u_k."""
    t = sum(block) * h
    for uk, v in zip(u, block):
        grad = -2 * C * (t - 1) + uk
        if v < top and grad > eps:
            return False
        if v > 0 and grad < -eps:
            return False
    return True


def _with_block(inst, x, player, k):
    """Copy of x with player's block set to the unit vector e_k (so s = 1)."""
    y = list(x)
    for a in range(inst.action_counts[player]):
        y[inst.coord(player, a)] = ONE if a == k else ZERO
    return y


def sweep_deg5(inst: Deg5Instance, N: int = 8) -> SweepReport:
    """Lattice fixed points have block sums in [1/2, 3/2] and normalize to eps_N-equilibria."""
    rep = SweepReport()
    for x in deg5_grid_solutions(inst, N):
        rep.checked += 1
        sums = block_sums(inst, x)
        if not all(Q(1, 2) <= s <= Q(3, 2) for s in sums):
            rep.counterexamples.append(("block-sum", x, sums))
            continue
        prof = normalize_to_profile(inst, x)
        if not nash_regret(inst.source, prof, VerifyOptions(inst.eps_N)).verdict:
            rep.counterexamples.append(("regret", x))
    return rep
