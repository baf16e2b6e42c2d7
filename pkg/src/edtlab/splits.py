"""Combination-shift splits over the factor grid and augmentation pair mining.

A split partitions the set of factor combinations (cells) into train and
test; every factor value must appear in at least one train cell so the
model can observe each value even when most combinations are held out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .factors import ProductLabelSpace, act_factor_array, values_to_ids


class SplitError(ValueError):
    """A split request cannot be satisfied on this grid."""


@dataclass(frozen=True)
class SplitMask:
    """Train membership over combination ids; test is the complement."""

    scheme: str
    seed: int
    cardinalities: tuple[int, ...]
    train_ids: np.ndarray

    def __post_init__(self):
        ids = np.unique(np.asarray(self.train_ids, dtype=np.int64))
        object.__setattr__(self, "train_ids", ids)
        total = self.grid_size
        if len(ids) and (ids[0] < 0 or ids[-1] >= total):
            raise SplitError("train id out of range for the grid")

    @property
    def grid_size(self) -> int:
        return int(np.prod(self.cardinalities, dtype=np.int64))

    @property
    def n_train(self) -> int:
        return len(self.train_ids)

    @property
    def n_test(self) -> int:
        return self.grid_size - self.n_train

    def train_mask(self) -> np.ndarray:
        mask = np.zeros(self.grid_size, dtype=bool)
        mask[self.train_ids] = True
        return mask

    def test_ids(self) -> np.ndarray:
        return np.flatnonzero(~self.train_mask())


@dataclass(frozen=True)
class PairSet:
    """Ordered (source, target) combination ids for one single-factor move."""

    factor_index: int
    element: int
    pairs: np.ndarray  # (k, 2) combination ids, both endpoints in train

    @property
    def is_empty(self) -> bool:
        return len(self.pairs) == 0


def _grid_values(space: ProductLabelSpace) -> np.ndarray:
    return space.grid()


def _ids_from_mask(mask: np.ndarray) -> np.ndarray:
    return np.flatnonzero(mask).astype(np.int64)


def coverage_missing(space: ProductLabelSpace, mask: SplitMask) -> list[tuple[int, int]]:
    """(factor, value) pairs that appear in no train cell."""
    grid = _grid_values(space)
    train_values = grid[mask.train_ids]
    missing = []
    for i, card in enumerate(space.cardinalities):
        present = np.zeros(card, dtype=bool)
        if len(train_values):
            present[train_values[:, i]] = True
        missing.extend((i, int(v)) for v in np.flatnonzero(~present))
    return missing


def _repair_coverage(
    space: ProductLabelSpace, train: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Add a uniformly chosen cell for every missing factor value."""
    grid = _grid_values(space)
    train = train.copy()
    for i, card in enumerate(space.cardinalities):
        present = np.zeros(card, dtype=bool)
        present[grid[train, i]] = True
        for value in np.flatnonzero(~present):
            candidates = np.flatnonzero(grid[:, i] == value)
            train = np.append(train, rng.choice(candidates))
    return np.unique(train)


def split_axis(
    space: ProductLabelSpace, domain_factor: int, label_factor: int, seed: int = 0
) -> SplitMask:
    """Train on one full domain row plus one full label column.

    The reference value is 0 for both designated factors, so on a DxL grid
    the train side has D + L - 1 cells.
    """
    if domain_factor == label_factor:
        raise SplitError("axis split needs two distinct factors")
    grid = _grid_values(space)
    keep = (grid[:, domain_factor] == 0) | (grid[:, label_factor] == 0)
    return SplitMask(
        scheme="axis", seed=seed, cardinalities=space.cardinalities,
        train_ids=_ids_from_mask(keep),
    )


def split_step(
    space: ProductLabelSpace,
    domain_factor: int,
    label_factor: int,
    block: int,
    seed: int = 0,
) -> SplitMask:
    """Staircase split: domain d trains on `block` labels starting at d*stride.

    The stride is ceil(L / D) so the staircase wraps once around all labels;
    blocks shorter than the stride would leave labels uncovered and are
    rejected.
    """
    if domain_factor == label_factor:
        raise SplitError("step split needs two distinct factors")
    n_dom = space.cardinalities[domain_factor]
    n_lab = space.cardinalities[label_factor]
    if block > n_lab:
        raise SplitError(f"block {block} exceeds label cardinality {n_lab}")
    stride = max(1, math.ceil(n_lab / n_dom))
    covered = set()
    allowed = np.zeros((n_dom, n_lab), dtype=bool)
    for d in range(n_dom):
        for k in range(block):
            lab = (d * stride + k) % n_lab
            allowed[d, lab] = True
            covered.add(lab)
    if len(covered) != n_lab:
        raise SplitError(
            f"staircase with block {block} covers {len(covered)}/{n_lab} labels"
        )
    grid = _grid_values(space)
    keep = allowed[grid[:, domain_factor], grid[:, label_factor]]
    return SplitMask(
        scheme=f"step:{block}", seed=seed, cardinalities=space.cardinalities,
        train_ids=_ids_from_mask(keep),
    )


def split_rand(space: ProductLabelSpace, rho: float, seed: int = 0) -> SplitMask:
    """Uniformly sample ceil(rho * grid) train cells, then repair coverage."""
    if not 0.0 < rho < 1.0:
        raise SplitError(f"rho must lie in (0,1), got {rho}")
    total = space.grid_size
    n_train = math.ceil(rho * total)
    if n_train < max(space.cardinalities):
        raise SplitError(
            f"rho {rho} gives {n_train} cells; cannot cover a factor with "
            f"{max(space.cardinalities)} values"
        )
    rng = np.random.default_rng(seed)
    train = rng.choice(total, size=n_train, replace=False).astype(np.int64)
    train = _repair_coverage(space, train, rng)
    return SplitMask(
        scheme=f"rand:{rho:g}", seed=seed, cardinalities=space.cardinalities,
        train_ids=train,
    )


def split_paths(
    space: ProductLabelSpace, n_paths: int, path_len: int, seed: int = 0
) -> SplitMask:
    """Union of random single-factor walks, plus coverage repair cells.

    Each walk starts at a uniform cell and takes `path_len` steps; a step
    picks a factor (with at least two values) and moves it to a uniformly
    chosen different value, so consecutive cells differ in exactly one
    factor. A walk of length k therefore touches at most k+1 cells.
    """
    if n_paths < 1:
        raise SplitError("need at least one path")
    rng = np.random.default_rng(seed)
    cards = space.cardinalities
    movable = [i for i, c in enumerate(cards) if c > 1]
    if not movable and path_len > 0:
        raise SplitError("no factor has more than one value; cannot walk")
    visited: set[int] = set()
    for _ in range(n_paths):
        current = [int(rng.integers(c)) for c in cards]
        visited.add(space.tuple_to_id(tuple(current)))
        for _ in range(path_len):
            i = movable[int(rng.integers(len(movable)))]
            shift = int(rng.integers(1, cards[i]))
            current[i] = (current[i] + shift) % cards[i]
            visited.add(space.tuple_to_id(tuple(current)))
    train = np.array(sorted(visited), dtype=np.int64)
    train = _repair_coverage(space, train, rng)
    return SplitMask(
        scheme=f"paths:{n_paths},{path_len}", seed=seed,
        cardinalities=space.cardinalities, train_ids=train,
    )


def select_pairs(space: ProductLabelSpace, mask: SplitMask, i: int, a: int) -> PairSet:
    """All ordered train pairs (y, act(i, a, y)).

    Saturation fixed points contribute (y, y) pairs; an empty result is a
    valid warning state (the caller skips training that augmenter).
    """
    f = space.factors[i]
    if not 0 <= a < f.monoid.n:
        raise SplitError(f"element {a} out of range for factor {f.name!r}")
    grid = _grid_values(space)
    src = mask.train_ids
    moved = act_factor_array(space, i, a, grid[src])
    dst = values_to_ids(space, moved)
    in_train = mask.train_mask()[dst]
    pairs = np.stack([src[in_train], dst[in_train]], axis=1)
    return PairSet(factor_index=i, element=a, pairs=pairs)


def parse_split_spec(
    space: ProductLabelSpace,
    spec: str,
    seed: int,
    domain_factor: int = 0,
    label_factor: int = 1,
    step_block: int = 3,
) -> SplitMask:
    """Build a split from 'axis' | 'step' | 'rand:<rho>' | 'paths:<n>,<len>'."""
    name, _, arg = spec.partition(":")
    name = name.strip().lower()
    if name == "axis":
        return split_axis(space, domain_factor, label_factor, seed)
    if name == "step":
        block = int(arg) if arg else step_block
        return split_step(space, domain_factor, label_factor, block, seed)
    if name == "rand":
        if not arg:
            raise SplitError("rand split needs a ratio, e.g. rand:0.5")
        return split_rand(space, float(arg), seed)
    if name == "paths":
        parts = arg.split(",") if arg else []
        if len(parts) != 2:
            raise SplitError("paths split needs counts, e.g. paths:10,56")
        return split_paths(space, int(parts[0]), int(parts[1]), seed)
    raise SplitError(f"unknown split scheme {spec!r}")


def write_split(path, mask: SplitMask):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"SPLIT {mask.scheme} {mask.seed}\n")
        for cid in mask.train_ids:
            fh.write(f"{int(cid)}\n")


def read_split(path, space: ProductLabelSpace) -> SplitMask:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 3 or header[0] != "SPLIT":
            raise SplitError(f"bad split header in {path}")
        scheme, seed = header[1], int(header[2])
        ids = [int(line) for line in fh if line.strip()]
    return SplitMask(
        scheme=scheme, seed=seed, cardinalities=space.cardinalities,
        train_ids=np.array(ids, dtype=np.int64),
    )
