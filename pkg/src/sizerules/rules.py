"""Bounded-size edge-selection rules and their combinatorial signatures.

A (K, ell)-rule looks at the truncated component sizes of ell randomly
sampled vertices (sizes above K collapse to the symbol omega) and picks one
of the ell/2 candidate edges. This module represents such rules as plain
decision functions, derives their extinction rates and slow/fast partition,
and provides the built-in rule family used throughout the package.
"""

from __future__ import annotations

import itertools
import json
from collections import Counter
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Mapping, Sequence, Union

import numpy as np

ENUMERATION_BUDGET = 10_000_000

# Tables above this size are never materialized; the decision function is
# called directly instead (a (K+1)^ell table can be astronomically large).
TABLE_CACHE_LIMIT = 10_000_000


class RuleError(ValueError):
    """Invalid rule construction or contract violation."""


class EnumerationBudgetError(RuleError):
    """Exact enumeration of the size-vector space is infeasible."""


class DegenerateRuleError(RuleError):
    """Operation requires a non-degenerate rule (ext > 0)."""


class _Omega:
    """Size class for components larger than the truncation bound.

    Orders strictly above every integer, so mixed comparisons, min/max and
    sorting behave like the total order 1 < 2 < ... < K < omega.
    """

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "omega"

    def __lt__(self, other):
        if isinstance(other, (int, _Omega)):
            return False
        return NotImplemented

    def __le__(self, other):
        if isinstance(other, _Omega):
            return True
        if isinstance(other, int):
            return False
        return NotImplemented

    def __gt__(self, other):
        if isinstance(other, _Omega):
            return False
        if isinstance(other, int):
            return True
        return NotImplemented

    def __ge__(self, other):
        if isinstance(other, (int, _Omega)):
            return True
        return NotImplemented

    def __eq__(self, other):
        return isinstance(other, _Omega)

    def __hash__(self):
        return hash("omega-size-class")

    def __reduce__(self):
        return (_Omega, ())


OMEGA = _Omega()

SizeClass = Union[int, _Omega]


def trunc(value, K: int):
    """Collapse a component size to the (K-truncated) size class."""
    if value is OMEGA or (isinstance(value, _Omega)):
        return OMEGA
    return value if value <= K else OMEGA


def size_classes(K: int) -> tuple:
    """All size classes for truncation bound K, in increasing order."""
    return tuple(range(1, K + 1)) + (OMEGA,)


def _check_size_class(value, K: int):
    if isinstance(value, _Omega):
        return
    if isinstance(value, (int, np.integer)) and 1 <= value <= K:
        return
    raise RuleError(f"invalid size class {value!r} for K={K}")


@dataclass(frozen=True)
class RuleSpec:
    """A (K, ell)-rule: a total decision function on truncated size vectors.

    ``chooser`` maps an ell-tuple of size classes to a 1-based edge index in
    [ell/2]; it must be pure and deterministic. Use :meth:`decide` for the
    contract-checked entry point.
    """

    K: int
    ell: int
    chooser: Callable[[tuple], int]
    name: str

    def __post_init__(self):
        if self.K < 1:
            raise RuleError(f"K must be >= 1, got {self.K}")
        if self.ell < 2 or self.ell % 2 != 0:
            raise RuleError(f"ell must be even and >= 2, got {self.ell}")

    @property
    def half(self) -> int:
        return self.ell // 2

    def decide(self, sizes: Sequence) -> int:
        """Edge index in [ell/2] chosen for the given size vector."""
        sizes = tuple(sizes)
        if len(sizes) != self.ell:
            raise RuleError(
                f"size vector has length {len(sizes)}, rule expects {self.ell}"
            )
        for s in sizes:
            _check_size_class(s, self.K)
        i = self.chooser(sizes)
        if not 1 <= i <= self.half:
            raise RuleError(f"rule {self.name!r} returned edge index {i} outside [1, {self.half}]")
        return i

    @property
    def table_size(self) -> int:
        return (self.K + 1) ** self.ell

    @cached_property
    def table(self) -> "np.ndarray | None":
        """Materialized decision table (uint8, 1-based indices), or None if too big.

        Entry order matches mixed-radix encoding with digit ``size-1`` for
        sizes 1..K and digit ``K`` for omega, leftmost position most
        significant.
        """
        if self.table_size > TABLE_CACHE_LIMIT:
            return None
        classes = size_classes(self.K)
        out = np.empty(self.table_size, dtype=np.uint8)
        for m, vec in enumerate(itertools.product(classes, repeat=self.ell)):
            out[m] = self.chooser(vec)
        if out.min() < 1 or out.max() > self.half:
            raise RuleError(f"rule {self.name!r} produced an out-of-range edge index")
        return out


@dataclass(frozen=True)
class RuleSignature:
    """Derived combinatorics of a rule: extinction rates and the slow/fast split."""

    ext_per_size: Mapping[int, int]
    ext: int
    slow: frozenset
    fast: frozenset
    degenerate: bool


def decide(rule: RuleSpec, sizes: Sequence) -> int:
    return rule.decide(sizes)


def extinction_rate(rule: RuleSpec, k: int) -> int:
    """k times the number of positions where a lone k among omegas gets merged.

    Probes exactly ell vectors: for each position p, the vector with k at p
    and omega elsewhere; position p is "good" if the chosen edge covers p.
    """
    if not 1 <= k <= rule.K:
        raise RuleError(f"k={k} outside [1, {rule.K}]")
    good = 0
    for p in range(rule.ell):
        vec = [OMEGA] * rule.ell
        vec[p] = k
        i = rule.decide(vec)
        if p in (2 * i - 2, 2 * i - 1):
            good += 1
    return k * good


def signature(rule: RuleSpec) -> RuleSignature:
    ext_per_size = {k: extinction_rate(rule, k) for k in range(1, rule.K + 1)}
    ext = min(ext_per_size.values())
    slow = frozenset(k for k, v in ext_per_size.items() if v == ext)
    fast = frozenset(range(1, rule.K + 1)) - slow
    return RuleSignature(ext_per_size, ext, slow, fast, degenerate=(ext == 0))


def extend(rule: RuleSpec, K_prime: int) -> RuleSpec:
    """View the rule as a (K', ell)-rule by composing with componentwise truncation."""
    if K_prime <= rule.K:
        raise RuleError(f"K'={K_prime} must exceed K={rule.K}")
    base_K = rule.K
    base = rule.chooser

    def chooser(sizes):
        return base(tuple(trunc(s, base_K) for s in sizes))

    return RuleSpec(K_prime, rule.ell, chooser, name=f"{rule.name}(K={K_prime})")


def applicability_guard(rule: RuleSpec) -> "int | None":
    """None if the Gumbel analysis applies directly (ext < 2K+2), else the
    smallest K' whose truncation-extended rule satisfies the bound.

    Raises DegenerateRuleError for degenerate rules, which follow the
    quadratic-time path instead.
    """
    sig = signature(rule)
    if sig.degenerate:
        raise DegenerateRuleError(
            f"rule {rule.name!r} is degenerate (ext = 0); the connectivity-time "
            "analysis does not apply - see the degenerate scaling path"
        )
    if sig.ext < 2 * rule.K + 2:
        return None
    K_prime = rule.K + 1
    while True:
        if signature(extend(rule, K_prime)).ext < 2 * K_prime + 2:
            return K_prime
        K_prime += 1


def _pair_key(a, b) -> frozenset:
    return frozenset((a, b))


def enumerate_C(rule: RuleSpec, mu, nu, budget: int = ENUMERATION_BUDGET) -> set:
    """Exact set of size vectors whose chosen edge joins a mu- and a nu-component."""
    _check_size_class(mu, rule.K)
    _check_size_class(nu, rule.K)
    if rule.table_size > budget:
        raise EnumerationBudgetError(
            f"enumeration infeasible: (K+1)^ell = {rule.table_size} exceeds budget "
            f"{budget}; use a closed-form right-hand side for this rule"
        )
    target = _pair_key(mu, nu)
    half = rule.half
    chooser = rule.chooser
    out = set()
    for vec in itertools.product(size_classes(rule.K), repeat=rule.ell):
        i = chooser(vec)
        if not 1 <= i <= half:
            raise RuleError(f"rule {rule.name!r} returned edge index {i} outside [1, {half}]")
        if _pair_key(vec[2 * i - 2], vec[2 * i - 1]) == target:
            out.add(vec)
    return out


def merge_class_monomials(rule: RuleSpec, budget: int = ENUMERATION_BUDGET) -> dict:
    """Aggregate, per unordered merge class {mu, nu}, the monomial counts of its vectors.

    Returns {frozenset({mu, nu}): Counter{exponents: multiplicity}} where
    ``exponents`` is a (K+1)-tuple counting occurrences of sizes 1..K and
    omega in the vector. This is all the ODE synthesis needs and avoids
    materializing vector sets.
    """
    if rule.table_size > budget:
        raise EnumerationBudgetError(
            f"enumeration infeasible: (K+1)^ell = {rule.table_size} exceeds budget "
            f"{budget}; use a closed-form right-hand side for this rule"
        )
    K = rule.K
    chooser = rule.chooser
    index_of = {s: idx for idx, s in enumerate(size_classes(K))}
    acc: dict = {}
    for vec in itertools.product(size_classes(K), repeat=rule.ell):
        i = chooser(vec)
        key = _pair_key(vec[2 * i - 2], vec[2 * i - 1])
        expo = [0] * (K + 1)
        for s in vec:
            expo[index_of[s]] += 1
        acc.setdefault(key, Counter())[tuple(expo)] += 1
    return acc


# ---------------------------------------------------------------------------
# Built-in rules


def erdos_renyi() -> RuleSpec:
    """The (1,2)-rule with no actual choice: always take the single edge."""
    return RuleSpec(1, 2, lambda sizes: 1, name="ER")


def bohman_frieze() -> RuleSpec:
    """Take the first edge iff both its endpoints are isolated vertices."""

    def chooser(sizes):
        return 1 if sizes[0] == 1 and sizes[1] == 1 else 2

    return RuleSpec(1, 4, chooser, name="BF")


def kp() -> RuleSpec:
    """Take the first edge iff at least one of its endpoints is isolated."""

    def chooser(sizes):
        return 1 if sizes[0] == 1 or sizes[1] == 1 else 2

    return RuleSpec(1, 4, chooser, name="KP")


def kp_prime() -> RuleSpec:
    """The KP rule viewed with truncation bound 2, which makes its analysis apply."""
    rule = extend(kp(), 2)
    return RuleSpec(rule.K, rule.ell, rule.chooser, name="KP'")


def lexicographic(K: int, ell: int) -> RuleSpec:
    """Greedily merge the smallest components: sort each candidate edge's
    endpoint sizes and take the lexicographically smallest pair, ties to the
    smallest eligible edge index. Requires K >= ell/2."""
    if ell < 2 or ell % 2 != 0:
        raise RuleError(f"ell must be even and >= 2, got {ell}")
    if K < ell // 2:
        raise RuleError(f"lexicographic rule needs K >= ell/2, got K={K}, ell={ell}")

    def chooser(sizes):
        best_i = 1
        a, b = sizes[0], sizes[1]
        best = (a, b) if a <= b else (b, a)
        for i in range(2, len(sizes) // 2 + 1):
            a, b = sizes[2 * i - 2], sizes[2 * i - 1]
            pair = (a, b) if a <= b else (b, a)
            if pair < best:
                best = pair
                best_i = i
        return best_i

    return RuleSpec(K, ell, chooser, name=f"lex(K={K},ell={ell})")


def omega_avoider(K: int, ell: int) -> RuleSpec:
    """Degenerate test rule: take an (omega, omega)-edge whenever one is
    available; otherwise take the edge with the fewest small endpoints."""

    def chooser(sizes):
        best_i = 1
        best_small = 3
        for i in range(1, len(sizes) // 2 + 1):
            a, b = sizes[2 * i - 2], sizes[2 * i - 1]
            n_small = (a is not OMEGA) + (b is not OMEGA)
            if n_small == 0:
                return i
            if n_small < best_small:
                best_small = n_small
                best_i = i
        return best_i

    return RuleSpec(K, ell, chooser, name=f"avoider(K={K},ell={ell})")


# Registry used by the CLI and by worker processes (decision functions are
# not picklable, so workers rebuild rules from selectors).

_BUILTIN_FACTORIES = {
    "er": erdos_renyi,
    "erdos-renyi": erdos_renyi,
    "bf": bohman_frieze,
    "bohman-frieze": bohman_frieze,
    "kp": kp,
    "kp-prime": kp_prime,
    "lex": lexicographic,
    "lexicographic": lexicographic,
    "omega-avoider": omega_avoider,
}

_PARAMETRIC = {"lex", "lexicographic", "omega-avoider"}


def builtin_names() -> tuple:
    return tuple(sorted(_BUILTIN_FACTORIES))


def make_builtin(name: str, K: "int | None" = None, ell: "int | None" = None) -> RuleSpec:
    key = name.lower()
    if key not in _BUILTIN_FACTORIES:
        raise RuleError(f"unknown builtin rule {name!r}; known: {', '.join(builtin_names())}")
    if key in _PARAMETRIC:
        if K is None or ell is None:
            raise RuleError(f"rule {name!r} requires both K and ell")
        return _BUILTIN_FACTORIES[key](K, ell)
    return _BUILTIN_FACTORIES[key]()


def resolve(selector: Mapping) -> RuleSpec:
    """Build a rule from a plain selector mapping.

    Accepts {"name": <builtin>, ["K": int, "ell": int]} or {"file": path}
    pointing at a serialized rule document.
    """
    if "file" in selector:
        with open(selector["file"], "r", encoding="utf-8") as fh:
            return rule_from_document(json.load(fh))
    if "name" not in selector:
        raise RuleError(f"rule selector needs 'name' or 'file': {selector!r}")
    return make_builtin(selector["name"], selector.get("K"), selector.get("ell"))


def selector_of(rule_name: str, K=None, ell=None, file=None) -> dict:
    if file is not None:
        return {"file": str(file)}
    sel = {"name": rule_name}
    if K is not None:
        sel["K"] = int(K)
    if ell is not None:
        sel["ell"] = int(ell)
    return sel


# ---------------------------------------------------------------------------
# Serialization


def _size_to_json(s):
    return "omega" if isinstance(s, _Omega) else int(s)


def _size_from_json(v, K):
    if v == "omega":
        return OMEGA
    s = int(v)
    _check_size_class(s, K)
    return s


def rule_to_document(rule: RuleSpec, kind: "str | None" = None) -> dict:
    """Serialize a rule to a JSON-ready document.

    ``kind`` is "builtin:<name>" (optionally with params recorded) or
    "table"; table serialization lists every (vector -> index) entry and
    round-trips losslessly, but is only possible for small rules.
    """
    doc = {"name": rule.name, "K": rule.K, "ell": rule.ell}
    if kind is not None and kind.startswith("builtin:"):
        doc["kind"] = kind
        return doc
    if rule.table_size > TABLE_CACHE_LIMIT:
        raise RuleError(
            f"rule {rule.name!r} is too large to serialize as a table "
            f"({rule.table_size} entries)"
        )
    entries = []
    for vec in itertools.product(size_classes(rule.K), repeat=rule.ell):
        entries.append([[_size_to_json(s) for s in vec], rule.chooser(vec)])
    doc["kind"] = "table"
    doc["entries"] = entries
    return doc


def rule_from_document(doc: Mapping) -> RuleSpec:
    kind = doc.get("kind", "")
    K, ell, name = int(doc["K"]), int(doc["ell"]), str(doc.get("name", "rule"))
    if kind.startswith("builtin:"):
        parts = kind.split(":", 1)[1]
        return make_builtin(parts, doc.get("K"), doc.get("ell"))
    if kind != "table":
        raise RuleError(f"unknown rule document kind {kind!r}")
    mapping = {}
    for vec_json, idx in doc["entries"]:
        vec = tuple(_size_from_json(v, K) for v in vec_json)
        if len(vec) != ell:
            raise RuleError(f"table entry has length {len(vec)}, expected {ell}")
        mapping[vec] = int(idx)
    if len(mapping) != (K + 1) ** ell:
        raise RuleError(
            f"table rule must be total: got {len(mapping)} entries, "
            f"expected {(K + 1) ** ell}"
        )

    def chooser(sizes):
        return mapping[tuple(sizes)]

    return RuleSpec(K, ell, chooser, name=name)
