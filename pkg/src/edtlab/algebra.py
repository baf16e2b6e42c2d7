"""Finite monoids, products, and actions with exhaustive law verification.

Everything here is exact integer arithmetic over finite carriers: a law
either holds on the whole domain or the report carries a violation count
and a witness. Floating-point tolerances never appear at this layer.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class StructureError(ValueError):
    """A table or action is malformed (not merely violating a law)."""


@dataclass(frozen=True)
class LawReport:
    """Outcome of one exhaustive law check.

    ``violations`` counts offending tuples over the full finite domain;
    ``witness`` is the lexicographically first offender (None when clean).
    ``max_residual`` stays 0.0 for exact checks and is kept so learned
    approximations can reuse the same record shape.
    """

    law: str
    violations: int
    witness: tuple | None = None
    max_residual: float = 0.0
    breakdown: dict[str, int] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.violations == 0

    def summary(self) -> str:
        status = "ok" if self.ok else f"{self.violations} violation(s), witness={self.witness}"
        return f"{self.law}: {status}"


@dataclass(frozen=True)
class MonoidTable:
    """A finite monoid given by its Cayley table.

    ``table[a, b]`` is the element id of a*b; ids run over 0..n-1.
    """

    table: np.ndarray
    identity: int

    def __post_init__(self):
        tab = np.asarray(self.table, dtype=np.int64)
        object.__setattr__(self, "table", tab)
        if tab.ndim != 2 or tab.shape[0] != tab.shape[1]:
            raise StructureError(f"table must be square, got shape {tab.shape}")
        n = tab.shape[0]
        if n == 0:
            raise StructureError("monoid needs at least one element")
        if tab.min() < 0 or tab.max() >= n:
            bad = np.argwhere((tab < 0) | (tab >= n))[0]
            raise StructureError(
                f"table entry out of range at ({bad[0]},{bad[1]}): {tab[bad[0], bad[1]]}"
            )
        if not 0 <= self.identity < n:
            raise StructureError(f"identity id {self.identity} out of range for n={n}")

    @property
    def n(self) -> int:
        return self.table.shape[0]

    def compose(self, a: int, b: int) -> int:
        return int(self.table[a, b])

    def power(self, a: int, k: int) -> int:
        """Element id of a composed with itself k times (k=0 gives identity)."""
        acc = self.identity
        for _ in range(k):
            acc = int(self.table[acc, a])
        return acc

    def elements(self) -> range:
        return range(self.n)


def monoid_verify(m: MonoidTable) -> LawReport:
    """Exhaustively check associativity and the two-sided identity law."""
    tab = m.table
    n = m.n
    # (a*b)*c vs a*(b*c) over all triples, vectorized.
    left = tab[tab, :]          # left[a,b,c] = tab[tab[a,b], c]
    right = tab[:, tab]         # right[a,b,c] = tab[a, tab[b,c]]
    assoc_bad = np.argwhere(left != right)
    e = m.identity
    ident_bad = [a for a in range(n) if tab[e, a] != a or tab[a, e] != a]
    breakdown = {"associativity": len(assoc_bad), "identity": len(ident_bad)}
    witness = None
    if len(assoc_bad):
        witness = ("associativity",) + tuple(int(x) for x in assoc_bad[0])
    elif ident_bad:
        witness = ("identity", ident_bad[0])
    return LawReport(
        law="monoid",
        violations=len(assoc_bad) + len(ident_bad),
        witness=witness,
        breakdown=breakdown,
    )


def monoid_cyclic(n: int) -> MonoidTable:
    """Cyclic group C_n as a table: a*b = (a+b) mod n, identity 0."""
    if n < 1:
        raise StructureError(f"cyclic monoid needs n >= 1, got {n}")
    idx = np.arange(n, dtype=np.int64)
    return MonoidTable(table=(idx[:, None] + idx[None, :]) % n, identity=0)


def monoid_saturating(n: int) -> MonoidTable:
    """Truncated addition on 0..n-1: a*b = min(a+b, n-1), identity 0.

    A finite stand-in for natural-number addition; saturation keeps the
    laws (min(min(a+b,M)+c,M) = min(a+b+c,M)) while destroying inverses,
    so for n >= 2 this is a monoid that is not a group.
    """
    if n < 1:
        raise StructureError(f"saturating monoid needs n >= 1, got {n}")
    idx = np.arange(n, dtype=np.int64)
    return MonoidTable(table=np.minimum(idx[:, None] + idx[None, :], n - 1), identity=0)


def monoid_product(m1: MonoidTable, m2: MonoidTable) -> MonoidTable:
    """Componentwise product; pair (a1,a2) is flattened row-major as a1*n2+a2."""
    n1, n2 = m1.n, m2.n
    a1, a2 = np.divmod(np.arange(n1 * n2, dtype=np.int64), n2)
    c1 = m1.table[np.ix_(a1, a1)]   # first component of every pair product
    c2 = m2.table[np.ix_(a2, a2)]
    return MonoidTable(table=c1 * n2 + c2, identity=m1.identity * n2 + m2.identity)


def pair_id(a1: int, a2: int, n2: int) -> int:
    return a1 * n2 + a2


def is_group(m: MonoidTable) -> bool:
    """Inverse scan: every element has a two-sided inverse."""
    e = m.identity
    for a in range(m.n):
        row = m.table[a]
        col = m.table[:, a]
        if not np.any((row == e) & (col == e)):
            return False
    return True


@dataclass(frozen=True)
class GeneratorSet:
    monoid: MonoidTable
    gens: tuple[int, ...]

    def __post_init__(self):
        gens = tuple(int(g) for g in self.gens)
        object.__setattr__(self, "gens", gens)
        for g in gens:
            if not 0 <= g < self.monoid.n:
                raise StructureError(f"generator id {g} out of range")

    @property
    def is_generating(self) -> bool:
        return len(closure_from_generators(self)) == self.monoid.n


def closure_from_generators(g: GeneratorSet) -> set[int]:
    """Least subset containing the identity and gens, closed under the table."""
    tab = g.monoid.table
    closed = {g.monoid.identity, *g.gens}
    frontier = list(closed)
    while frontier:
        nxt = []
        for a in frontier:
            for b in list(closed):
                for c in (int(tab[a, b]), int(tab[b, a])):
                    if c not in closed:
                        closed.add(c)
                        nxt.append(c)
        frontier = nxt
    return closed


@dataclass(frozen=True)
class FiniteAction:
    """An action of a finite monoid on a finite carrier {0..m-1}.

    ``maps[a]`` is the endofunction of element a as an index array, so
    act(a, x) = maps[a, x].
    """

    monoid: MonoidTable
    maps: np.ndarray

    def __post_init__(self):
        maps = np.asarray(self.maps, dtype=np.int64)
        object.__setattr__(self, "maps", maps)
        if maps.ndim != 2 or maps.shape[0] != self.monoid.n:
            raise StructureError(
                f"maps must be (n_elements, carrier), got {maps.shape} for n={self.monoid.n}"
            )
        m = maps.shape[1]
        if m == 0:
            raise StructureError("carrier must be nonempty")
        if maps.min() < 0 or maps.max() >= m:
            bad = np.argwhere((maps < 0) | (maps >= m))[0]
            raise StructureError(
                f"carrier map entry out of range at element {bad[0]}, point {bad[1]}"
            )

    @property
    def carrier_size(self) -> int:
        return self.maps.shape[1]

    def act(self, a: int, x: int) -> int:
        return int(self.maps[a, x])


def action_verify(act: FiniteAction) -> LawReport:
    """Check identity preservation and compatibility with composition.

    maps[a*b] must equal maps[a] o maps[b] for every element pair, and the
    identity element must map to the identity endofunction.
    """
    maps = act.maps
    tab = act.monoid.table
    m = act.carrier_size
    composed = maps[tab]          # composed[a,b] = maps[a*b]
    chained = maps[:, maps]       # chained[a,b,x] = maps[a, maps[b,x]]
    comp_bad = np.argwhere(np.any(composed != chained, axis=2))
    ident_dev = maps[act.monoid.identity] != np.arange(m)
    ident_bad = int(ident_dev.sum())
    witness = None
    if len(comp_bad):
        a, b = (int(v) for v in comp_bad[0])
        x = int(np.argwhere(composed[a, b] != chained[a, b])[0][0])
        witness = ("composition", a, b, x)
    elif ident_bad:
        witness = ("identity", int(np.argwhere(ident_dev)[0][0]))
    return LawReport(
        law="action",
        violations=len(comp_bad) + ident_bad,
        witness=witness,
        breakdown={"composition": len(comp_bad), "identity": ident_bad},
    )


def action_properties(act: FiniteAction) -> dict:
    """Faithfulness, triviality, and the number of distinct endofunctions."""
    distinct = {tuple(int(v) for v in row) for row in act.maps}
    image_size = len(distinct)
    ident = tuple(range(act.carrier_size))
    return {
        "faithful": image_size == act.monoid.n,
        "trivial": distinct == {ident},
        "image_size": image_size,
    }


def product_action(a1: FiniteAction, a2: FiniteAction) -> FiniteAction:
    """Componentwise action of the product monoid on the product carrier.

    Carriers flatten row-major: point (x1,x2) gets id x1*m2+x2, mirroring
    the element flattening of ``monoid_product``.
    """
    n1, n2 = a1.monoid.n, a2.monoid.n
    m1, m2 = a1.carrier_size, a2.carrier_size
    e1, e2 = np.divmod(np.arange(n1 * n2, dtype=np.int64), n2)
    x1, x2 = np.divmod(np.arange(m1 * m2, dtype=np.int64), m2)
    out1 = a1.maps[np.ix_(e1, x1)]
    out2 = a2.maps[np.ix_(e2, x2)]
    return FiniteAction(monoid=monoid_product(a1.monoid, a2.monoid), maps=out1 * m2 + out2)


def product_decomposition_report(prod: FiniteAction, n1: int, n2: int) -> LawReport:
    """Check both decomposition orders of a product action exactly.

    For every pair (a1,a2) the endofunction must equal (a1,e2) after
    (e1,a2) and also (e1,a2) after (a1,e2).
    """
    maps = prod.maps
    n = n1 * n2
    if prod.monoid.n != n:
        raise StructureError(f"product action has {prod.monoid.n} elements, expected {n}")
    # Identity of each side sits at pair id (a1, e2) resp. (e1, a2); the
    # product identity's coordinates recover e1 and e2.
    e1, e2 = divmod(prod.monoid.identity, n2)
    violations = 0
    witness = None
    for a1 in range(n1):
        for a2 in range(n2):
            full = maps[pair_id(a1, a2, n2)]
            first = maps[pair_id(a1, e2, n2)]
            second = maps[pair_id(e1, a2, n2)]
            order1 = first[second]
            order2 = second[first]
            bad = int(np.any(order1 != full)) + int(np.any(order2 != full))
            if bad and witness is None:
                witness = ("decomposition", a1, a2)
            violations += bad
    return LawReport(law="product-decomposition", violations=violations, witness=witness)


# --- plain-text serialization -------------------------------------------------
#
# Line 1: "MONOID n identity", then n rows of n space-separated ids.
# An action appends "ACTION m" and one map row per element.


def dump_monoid(m: MonoidTable, action: FiniteAction | None = None) -> str:
    buf = io.StringIO()
    buf.write(f"MONOID {m.n} {m.identity}\n")
    for row in m.table:
        buf.write(" ".join(str(int(v)) for v in row) + "\n")
    if action is not None:
        if action.monoid.n != m.n or np.any(action.monoid.table != m.table):
            raise StructureError("action does not belong to the serialized monoid")
        buf.write(f"ACTION {action.carrier_size}\n")
        for row in action.maps:
            buf.write(" ".join(str(int(v)) for v in row) + "\n")
    return buf.getvalue()


def load_monoid(text: str) -> tuple[MonoidTable, FiniteAction | None]:
    lines = [ln for ln in (raw.strip() for raw in text.splitlines()) if ln]
    if not lines or not lines[0].startswith("MONOID"):
        raise StructureError("expected 'MONOID n identity' header")
    head = lines[0].split()
    if len(head) != 3:
        raise StructureError(f"malformed monoid header: {lines[0]!r}")
    n, identity = int(head[1]), int(head[2])
    if len(lines) < 1 + n:
        raise StructureError(f"expected {n} table rows, found {len(lines) - 1}")
    table = np.array([[int(v) for v in lines[1 + i].split()] for i in range(n)])
    if table.shape != (n, n):
        raise StructureError("table row length mismatch")
    monoid = MonoidTable(table=table, identity=identity)
    action = None
    rest = lines[1 + n:]
    if rest:
        if not rest[0].startswith("ACTION"):
            raise StructureError(f"unexpected trailing line: {rest[0]!r}")
        m = int(rest[0].split()[1])
        if len(rest) != 1 + n:
            raise StructureError(f"expected {n} action rows, found {len(rest) - 1}")
        maps = np.array([[int(v) for v in rest[1 + i].split()] for i in range(n)])
        if maps.shape != (n, m):
            raise StructureError("action row length mismatch")
        action = FiniteAction(monoid=monoid, maps=maps)
    return monoid, action


def restricted_form_count(actions: Sequence[FiniteAction]) -> tuple[int, int]:
    """Distinct single-factor endofunctions vs the full product image.

    Returns (restricted, full): ``restricted`` counts distinct maps among
    all (e,..,a_i,..,e) forms across factors (identities coincide), and
    ``full`` counts distinct maps of the complete product action.
    """
    prod = actions[0]
    for nxt in actions[1:]:
        prod = product_action(prod, nxt)
    sizes = [a.carrier_size for a in actions]
    counts = [a.monoid.n for a in actions]
    restricted: set[tuple[int, ...]] = set()
    for i, act in enumerate(actions):
        for a in range(counts[i]):
            elems = [actions[k].monoid.identity for k in range(len(actions))]
            elems[i] = a
            restricted.add(tuple(int(v) for v in _product_map(actions, sizes, elems)))
    full = {tuple(int(v) for v in row) for row in prod.maps}
    return len(restricted), len(full)


def rotation_action(n: int) -> FiniteAction:
    """Cyclic group acting on {0..n-1} by rotation."""
    idx = np.arange(n, dtype=np.int64)
    return FiniteAction(
        monoid=monoid_cyclic(n), maps=(idx[:, None] + idx[None, :]) % n
    )


def saturating_action(n: int) -> FiniteAction:
    """Saturating monoid acting on {0..n-1} by truncated shift."""
    idx = np.arange(n, dtype=np.int64)
    return FiniteAction(
        monoid=monoid_saturating(n), maps=np.minimum(idx[:, None] + idx[None, :], n - 1)
    )


def verify_constructions(n_max: int = 12) -> list[tuple[str, LawReport]]:
    """Exhaustive law sweep over the stock constructions.

    Checks cyclic(n) and saturating(n) for n up to n_max (tables, canonical
    actions, singleton-generator closure) and every pairwise product of the
    two families including both decomposition orders.
    """
    reports: list[tuple[str, LawReport]] = []
    families = {"cyclic": (monoid_cyclic, rotation_action),
                "saturating": (monoid_saturating, saturating_action)}
    for name, (make, make_act) in families.items():
        for n in range(1, n_max + 1):
            tag = f"{name}({n})"
            m = make(n)
            reports.append((f"{tag} monoid", monoid_verify(m)))
            reports.append((f"{tag} action", action_verify(make_act(n))))
            gens = (1,) if n > 1 else ()
            closure = closure_from_generators(GeneratorSet(monoid=m, gens=gens))
            closure_ok = len(closure) == n
            reports.append(
                (
                    f"{tag} generator closure",
                    LawReport(
                        law="generator-closure",
                        violations=0 if closure_ok else 1,
                        witness=None if closure_ok else ("closure-size", len(closure)),
                    ),
                )
            )
    pairs = [(f1, n1, f2, n2)
             for f1, f2 in (("cyclic", "saturating"), ("saturating", "cyclic"))
             for n1 in range(1, n_max + 1) for n2 in range(1, n_max + 1)]
    for f1, n1, f2, n2 in pairs:
        act1 = families[f1][1](n1)
        act2 = families[f2][1](n2)
        prod = product_action(act1, act2)
        tag = f"{f1}({n1})x{f2}({n2})"
        reports.append((f"{tag} monoid", monoid_verify(prod.monoid)))
        reports.append((f"{tag} action", action_verify(prod)))
        reports.append((f"{tag} decomposition", product_decomposition_report(prod, n1, n2)))
    return reports


def _product_map(actions: Sequence[FiniteAction], sizes: Sequence[int], elems: Iterable[int]) -> np.ndarray:
    total = int(np.prod(sizes))
    pts = np.arange(total, dtype=np.int64)
    coords = []
    rem = pts
    for size in reversed(sizes):
        rem, c = np.divmod(rem, size)
        coords.append(c)
    coords.reverse()
    out = np.zeros(total, dtype=np.int64)
    for c, size, act, a in zip(coords, sizes, actions, elems):
        out = out * size + act.maps[a][c]
    return out
