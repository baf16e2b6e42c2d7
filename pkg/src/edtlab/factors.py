"""Concrete label factors, their ground-truth actions, and the product space.

A factor is one component of the label tuple (color, shape, position, ...)
together with the finite monoid that moves it: cyclic rotation for periodic
or categorical factors, saturating shift for ordinal ones.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .algebra import (
    FiniteAction,
    GeneratorSet,
    MonoidTable,
    StructureError,
    closure_from_generators,
    monoid_cyclic,
    monoid_saturating,
)

FactorTuple = tuple[int, ...]


class FactorKind(enum.Enum):
    CATEGORICAL = "categorical"
    CYCLIC = "cyclic"
    ORDINAL = "ordinal"


_KIND_TAGS = {FactorKind.CATEGORICAL: 0, FactorKind.CYCLIC: 1, FactorKind.ORDINAL: 2}
_TAG_KINDS = {v: k for k, v in _KIND_TAGS.items()}


def kind_tag(kind: FactorKind) -> int:
    return _KIND_TAGS[kind]


def kind_from_tag(tag: int) -> FactorKind:
    if tag not in _TAG_KINDS:
        raise StructureError(f"unknown factor kind tag {tag}")
    return _TAG_KINDS[tag]


@dataclass(frozen=True)
class FactorSpec:
    """One label component with its monoid action on value ids 0..card-1."""

    name: str
    kind: FactorKind
    cardinality: int
    monoid: MonoidTable
    action: FiniteAction

    @property
    def generator(self) -> int | None:
        """The single-step generator, or None for one-value factors."""
        return 1 if self.cardinality > 1 else None

    def generator_set(self) -> GeneratorSet:
        gens = () if self.generator is None else (self.generator,)
        return GeneratorSet(monoid=self.monoid, gens=gens)

    def act(self, a: int, value: int) -> int:
        return self.action.act(a, value)


def make_factor(name: str, kind: FactorKind, cardinality: int) -> FactorSpec:
    """Build a factor with its canonical monoid and action.

    Cyclic and categorical factors rotate value ids modulo the cardinality
    (categories get a fixed arbitrary ordering); ordinal factors shift with
    saturation at cardinality-1.
    """
    if cardinality < 1:
        raise StructureError(f"factor {name!r} needs cardinality >= 1")
    values = np.arange(cardinality, dtype=np.int64)
    if kind in (FactorKind.CYCLIC, FactorKind.CATEGORICAL):
        monoid = monoid_cyclic(cardinality)
        maps = (values[None, :] + values[:, None]) % cardinality
    elif kind is FactorKind.ORDINAL:
        monoid = monoid_saturating(cardinality)
        maps = np.minimum(values[None, :] + values[:, None], cardinality - 1)
    else:
        raise StructureError(f"unknown factor kind {kind}")
    return FactorSpec(
        name=name,
        kind=kind,
        cardinality=cardinality,
        monoid=monoid,
        action=FiniteAction(monoid=monoid, maps=maps),
    )


@dataclass(frozen=True)
class ProductLabelSpace:
    """Ordered product of factors; the combination grid Y."""

    factors: tuple[FactorSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))
        if not self.factors:
            raise StructureError("label space needs at least one factor")
        names = [f.name for f in self.factors]
        if len(set(names)) != len(names):
            raise StructureError(f"duplicate factor names in {names}")

    @property
    def n_factors(self) -> int:
        return len(self.factors)

    @property
    def cardinalities(self) -> tuple[int, ...]:
        return tuple(f.cardinality for f in self.factors)

    @property
    def grid_size(self) -> int:
        return int(np.prod(self.cardinalities, dtype=np.int64))

    def factor_index(self, name: str) -> int:
        for i, f in enumerate(self.factors):
            if f.name == name:
                return i
        raise KeyError(f"no factor named {name!r}")

    def tuple_to_id(self, y: FactorTuple) -> int:
        self.validate_tuple(y)
        acc = 0
        for value, card in zip(y, self.cardinalities):
            acc = acc * card + value
        return acc

    def id_to_tuple(self, cid: int) -> FactorTuple:
        if not 0 <= cid < self.grid_size:
            raise StructureError(f"combination id {cid} out of range")
        out = []
        for card in reversed(self.cardinalities):
            cid, v = divmod(cid, card)
            out.append(v)
        return tuple(reversed(out))

    def grid(self) -> np.ndarray:
        """All combinations as an (grid_size, n_factors) array, id order."""
        cards = self.cardinalities
        cols = []
        repeat = 1
        for i in reversed(range(self.n_factors)):
            block = np.repeat(np.arange(cards[i]), repeat)
            cols.append(np.tile(block, self.grid_size // (repeat * cards[i])))
            repeat *= cards[i]
        return np.stack(list(reversed(cols)), axis=1).astype(np.int64)

    def validate_tuple(self, y: FactorTuple):
        if len(y) != self.n_factors:
            raise StructureError(f"tuple arity {len(y)} != {self.n_factors}")
        for i, (value, card) in enumerate(zip(y, self.cardinalities)):
            if not 0 <= value < card:
                raise StructureError(f"factor {i} value {value} out of range [0,{card})")


def act_factor(space: ProductLabelSpace, i: int, a: int, y: FactorTuple) -> FactorTuple:
    """Move component i by element a, leaving every other component alone."""
    space.validate_tuple(y)
    if not 0 <= i < space.n_factors:
        raise StructureError(f"factor index {i} out of range")
    f = space.factors[i]
    if not 0 <= a < f.monoid.n:
        raise StructureError(f"element {a} out of range for factor {f.name!r}")
    out = list(y)
    out[i] = f.act(a, y[i])
    return tuple(out)


def act_tuple(space: ProductLabelSpace, elems: tuple[int, ...], y: FactorTuple) -> FactorTuple:
    """Componentwise action of one element per factor."""
    if len(elems) != space.n_factors:
        raise StructureError(f"element arity {len(elems)} != {space.n_factors}")
    space.validate_tuple(y)
    return tuple(f.act(a, v) for f, a, v in zip(space.factors, elems, y))


def act_factor_array(space: ProductLabelSpace, i: int, a: int, ys: np.ndarray) -> np.ndarray:
    """Vectorized ``act_factor`` over an (N, n_factors) array of tuples."""
    out = ys.copy()
    out[:, i] = space.factors[i].action.maps[a][ys[:, i]]
    return out


def values_to_ids(space: ProductLabelSpace, ys: np.ndarray) -> np.ndarray:
    """Row-major combination ids for an (N, n_factors) array of tuples."""
    ids = np.zeros(len(ys), dtype=np.int64)
    for k, card in enumerate(space.cardinalities):
        ids = ids * card + ys[:, k]
    return ids


def project(space: ProductLabelSpace, i: int, y: FactorTuple) -> int:
    space.validate_tuple(y)
    if not 0 <= i < space.n_factors:
        raise StructureError(f"factor index {i} out of range")
    return y[i]


def generating_closure(f: FactorSpec) -> set[int]:
    return closure_from_generators(f.generator_set())


def default_minisprites() -> ProductLabelSpace:
    """The desk-scale sprite roster: 5x3x3x8x8 = 2880 combinations."""
    return ProductLabelSpace(
        factors=(
            make_factor("color", FactorKind.CYCLIC, 5),
            make_factor("shape", FactorKind.CATEGORICAL, 3),
            make_factor("scale", FactorKind.ORDINAL, 3),
            make_factor("pos_x", FactorKind.ORDINAL, 8),
            make_factor("pos_y", FactorKind.ORDINAL, 8),
        )
    )


def parse_factor_roster(text: str) -> ProductLabelSpace:
    """Parse 'name:kind:card,name:kind:card,...' into a label space."""
    factors = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = chunk.split(":")
        if len(parts) != 3:
            raise StructureError(f"bad factor spec {chunk!r}, want name:kind:cardinality")
        name, kind_name, card = parts
        try:
            kind = FactorKind(kind_name.strip().lower())
        except ValueError:
            raise StructureError(f"unknown factor kind {kind_name!r}") from None
        factors.append(make_factor(name.strip(), kind, int(card)))
    if not factors:
        raise StructureError("empty factor roster")
    return ProductLabelSpace(factors=tuple(factors))


def roster_text(space: ProductLabelSpace) -> str:
    return ",".join(f"{f.name}:{f.kind.value}:{f.cardinality}" for f in space.factors)
