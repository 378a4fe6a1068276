"""Exact rationals and the bit-team encoding of numbers in [0, 1).

A team is K bit players plus one veto player.  Bit index 1 is the most
significant bit.  The veto player may overwrite the suffix starting at
position ``m`` with one of six canonical strings; ``m = K + 1`` means no
veto.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction

try:  # GMP-backed rationals are an order of magnitude faster
    from gmpy2 import mpq as _mpq

    def Q(num=0, den=1):
        """Build an exact rational (GMP backend)."""
        if isinstance(num, str):
            return _mpq(num)
        if isinstance(num, Fraction):
            return _mpq(num.numerator, num.denominator) / den
        return _mpq(num, den)

    BACKEND = "gmpy2"
except ImportError:  # pragma: no cover - exercised only without gmpy2

    def Q(num=0, den=1):
        """Build an exact rational (pure-Python backend)."""
        if isinstance(num, str):
            return Fraction(num)
        return Fraction(num) / den

    BACKEND = "fractions"

ZERO = Q(0)
ONE = Q(1)


def pow2(e: int):
    """Exact 2**e for any integer e."""
    return Q(1 << e) if e >= 0 else Q(1, 1 << -e)


def rat_str(value) -> str:
    """Serialize a rational as "num/den"."""
    v = Q(value)
    return f"{v.numerator}/{v.denominator}"


def parse_rat(text) -> object:
    """Parse "num/den", an integer, or a decimal string exactly."""
    if isinstance(text, int):
        return Q(text)
    if not isinstance(text, str):
        raise ValueError(f"not a rational literal: {text!r}")
    s = text.strip()
    try:
        return Q(Fraction(s))
    except (ValueError, ZeroDivisionError) as exc:
        raise ValueError(f"not a rational literal: {text!r}") from exc


class VetoType(enum.IntEnum):
    ALL0 = 0
    SUF001 = 1  # 0011...1
    SUF01 = 2  # 011...1
    SUF10 = 3  # 100...0
    SUF110 = 4  # 1100...0
    ALL1 = 5

    @property
    def token(self) -> str:
        return _TOKENS[self]

    @classmethod
    def from_token(cls, token: str) -> "VetoType":
        try:
            return _FROM_TOKEN[token]
        except KeyError:
            raise ValueError(f"unknown veto type {token!r}") from None


_TOKENS = {
    VetoType.ALL0: "ALL0",
    VetoType.SUF001: "00SUF1",
    VetoType.SUF01: "0SUF1",
    VetoType.SUF10: "1SUF0",
    VetoType.SUF110: "11SUF0",
    VetoType.ALL1: "ALL1",
}
_FROM_TOKEN = {v: k for k, v in _TOKENS.items()}


def veto_suffix_bits(t: VetoType, length: int) -> tuple:
    """The canonical suffix string of the given length for veto type ``t``.

    Patterns are truncated when the suffix is too short to hold their head.
    """
    if length < 1:
        raise ValueError("suffix length must be positive")
    head, tail = {
        VetoType.ALL0: ((), 0),
        VetoType.SUF001: ((0, 0), 1),
        VetoType.SUF01: ((0,), 1),
        VetoType.SUF10: ((1,), 0),
        VetoType.SUF110: ((1, 1), 0),
        VetoType.ALL1: ((), 1),
    }[t]
    bits = list(head[:length])
    bits.extend([tail] * (length - len(bits)))
    return tuple(bits)


@dataclass(frozen=True)
class VetoAction:
    m: int
    t: VetoType = VetoType.ALL0

    def canonical(self, K: int) -> "VetoAction":
        if not 1 <= self.m <= K + 1:
            raise ValueError(f"veto position {self.m} outside [1, {K + 1}]")
        if self.m == K + 1 and self.t != VetoType.ALL0:
            return VetoAction(K + 1, VetoType.ALL0)
        return self

    def index(self, K: int) -> int:
        """Action index in the veto player's 6(K+1) action list."""
        return (self.m - 1) * 6 + int(self.t)

    @staticmethod
    def from_index(idx: int, K: int) -> "VetoAction":
        if not 0 <= idx < 6 * (K + 1):
            raise ValueError(f"veto action index {idx} out of range")
        return VetoAction(idx // 6 + 1, VetoType(idx % 6))


def no_veto(K: int) -> VetoAction:
    return VetoAction(K + 1, VetoType.ALL0)


def _check_bits(bits) -> tuple:
    bits = tuple(int(b) for b in bits)
    if any(b not in (0, 1) for b in bits):
        raise ValueError("bits must be 0 or 1")
    return bits


def prefix_value(bits, k: int):
    """Value of the bits strictly more significant than position k."""
    K = len(bits)
    if not 1 <= k <= K + 1:
        raise IndexError(f"position {k} outside [1, {K + 1}]")
    return _weighted(bits, 1, k - 1)


def prefix_value_le(bits, k: int):
    """Value of bits at positions <= k."""
    K = len(bits)
    if not 0 <= k <= K:
        raise IndexError(f"position {k} outside [0, {K}]")
    return _weighted(bits, 1, k)


def suffix_value_ge(bits, k: int):
    """Value of bits at positions >= k (weights stay 2^-position)."""
    K = len(bits)
    if not 1 <= k <= K + 1:
        raise IndexError(f"position {k} outside [1, {K + 1}]")
    return _weighted(bits, k, K)


def suffix_value_gt(bits, k: int):
    """Value of bits at positions > k."""
    K = len(bits)
    if not 0 <= k <= K:
        raise IndexError(f"position {k} outside [0, {K}]")
    return _weighted(bits, k + 1, K)


def _weighted(bits, lo: int, hi: int):
    K = len(bits)
    num = 0
    for pos in range(lo, hi + 1):
        if bits[pos - 1]:
            num += 1 << (K - pos)
    return Q(num, 1 << K) if K else ZERO


def bits_value(bits):
    return _weighted(bits, 1, len(bits))


def veto_suffix_value(m: int, t: VetoType, K: int):
    """v(m, t): value of the veto suffix string occupying positions m..K."""
    if m == K + 1:
        raise ValueError("no suffix exists when m = K + 1")
    if not 1 <= m <= K:
        raise ValueError(f"veto position {m} outside [1, {K}]")
    suffix = veto_suffix_bits(VetoType(t), K - m + 1)
    num = 0
    for offset, b in enumerate(suffix):
        if b:
            num += 1 << (K - m - offset)
    return Q(num, 1 << K)


@dataclass(frozen=True)
class TeamState:
    bits: tuple
    veto: VetoAction

    def __post_init__(self):
        object.__setattr__(self, "bits", _check_bits(self.bits))
        object.__setattr__(self, "veto", self.veto.canonical(len(self.bits)))

    @property
    def K(self) -> int:
        return len(self.bits)

    @classmethod
    def zeros(cls, K: int) -> "TeamState":
        return cls((0,) * K, no_veto(K))

    @classmethod
    def from_value(cls, value, K: int) -> "TeamState":
        """Unvetoed team whose bits spell ``value`` (a multiple of 2^-K)."""
        scaled = Q(value) * (1 << K)
        if scaled.denominator != 1 or not 0 <= scaled < (1 << K):
            raise ValueError(f"{value} is not a K-bit value in [0,1)")
        n = int(scaled)
        bits = tuple((n >> (K - pos)) & 1 for pos in range(1, K + 1))
        return cls(bits, no_veto(K))


def post_veto_bits(ts: TeamState) -> tuple:
    """The realized string: bit players' prefix followed by the veto suffix."""
    m, K = ts.veto.m, ts.K
    if m == K + 1:
        return ts.bits
    return ts.bits[: m - 1] + veto_suffix_bits(ts.veto.t, K - m + 1)


def team_value(ts: TeamState):
    """Realized number x_{<m} + v(m, t)."""
    m, K = ts.veto.m, ts.K
    if m == K + 1:
        return prefix_value(ts.bits, K + 1)
    return prefix_value(ts.bits, m) + veto_suffix_value(m, ts.veto.t, K)


def tilde_value(ts: TeamState, k: int):
    """Realized number with only position k taken from the bit player."""
    K = ts.K
    if not 1 <= k <= K:
        raise IndexError(f"position {k} outside [1, {K}]")
    realized = post_veto_bits(ts)
    return bits_value(realized) + (ts.bits[k - 1] - realized[k - 1]) * pow2(-k)


def team_to_doc(ts: TeamState) -> dict:
    return {
        "bits": "".join(map(str, ts.bits)),
        "m": ts.veto.m,
        "t": ts.veto.t.token,
    }


def team_from_doc(doc: dict) -> TeamState:
    bits = tuple(int(c) for c in doc["bits"])
    return TeamState(bits, VetoAction(int(doc["m"]), VetoType.from_token(doc["t"])))


# ---- finite distributions ------------------------------------------------------

def _check_dist(dist: dict):
    if not dist or any(q < 0 for q in dist.values()) or sum(dist.values(), ZERO) != 1:
        raise ValueError("distribution must be non-empty with non-negative weights summing to 1")


def mean(dist: dict):
    """Expectation of a finite {value: probability} distribution."""
    _check_dist(dist)
    return sum((Q(v) * q for v, q in dist.items()), ZERO)


def variance(dist: dict):
    mu = mean(dist)
    return sum(((Q(v) - mu) ** 2 * q for v, q in dist.items()), ZERO)


def weighted_square_gap(weight: dict, x: dict, y: dict):
    """E[A (X - Y)^2] for independent A, X, Y, via means and variances only."""
    return mean(weight) * ((mean(x) - mean(y)) ** 2 + variance(x) + variance(y))
