"""Deterministic sprite renderer and the exact ground-truth image action.

Images are 3x16x16 float32 in [0,1], rendered with integer rasterization
and no anti-aliasing so that re-rendering an acted-on factor tuple gives a
bit-exact reference for learned augmentations.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from .algebra import StructureError
from .factors import (
    FactorKind,
    FactorTuple,
    ProductLabelSpace,
    act_tuple,
    kind_from_tag,
    kind_tag,
    make_factor,
)

CHANNELS, HEIGHT, WIDTH = 3, 16, 16
PIXELS = CHANNELS * HEIGHT * WIDTH

DATASET_MAGIC = b"EDT1"

# Factor names the renderer knows how to interpret.
ROLE_COLOR, ROLE_SHAPE, ROLE_SCALE, ROLE_POS_X, ROLE_POS_Y = (
    "color", "shape", "scale", "pos_x", "pos_y",
)


class LabelingError(ValueError):
    """An (image, tuple) pair disagrees with the renderer."""


def _square(size: int) -> np.ndarray:
    return np.ones((size, size), dtype=bool)


def _plus(size: int) -> np.ndarray:
    mask = np.zeros((size, size), dtype=bool)
    lo, hi = size // 3, size - size // 3
    mask[lo:hi, :] = True
    mask[:, lo:hi] = True
    return mask


def _triangle(size: int) -> np.ndarray:
    r = np.arange(size)
    return r[None, :] <= r[:, None]  # lower-left right triangle


_SHAPE_FUNCS = (_square, _plus, _triangle)
SHAPE_NAMES = ("square", "plus", "triangle")


@dataclass(frozen=True)
class RenderParams:
    """Palette, shape masks, size map, and defaults for absent factors."""

    palette: np.ndarray = field(
        default_factory=lambda: np.array(
            [
                [1.0, 0.0, 0.0],  # red
                [1.0, 1.0, 0.0],  # yellow
                [0.0, 1.0, 0.0],  # green
                [0.0, 0.0, 1.0],  # blue
                [0.5, 0.0, 0.5],  # purple
            ],
            dtype=np.float32,
        )
    )
    sizes: tuple[int, ...] = (4, 6, 8)
    default_color: int = 0
    default_shape: int = 0
    default_scale: int = 0
    default_pos: int = 0

    def __post_init__(self):
        object.__setattr__(self, "palette", np.asarray(self.palette, dtype=np.float32))
        if self.palette.ndim != 2 or self.palette.shape[1] != 3:
            raise StructureError("palette must be (k, 3) RGB rows")
        if self.palette.min() < 0.0 or self.palette.max() > 1.0:
            raise StructureError("palette intensities must lie in [0,1]")

    def mask(self, shape_id: int, size: int) -> np.ndarray:
        return _SHAPE_FUNCS[shape_id](size)

    def validate(self, space: ProductLabelSpace):
        """Reject rosters the renderer cannot place inside the canvas."""
        names = {f.name: f for f in space.factors}
        if ROLE_COLOR in names and names[ROLE_COLOR].cardinality > len(self.palette):
            raise StructureError("color cardinality exceeds palette size")
        if ROLE_SHAPE in names and names[ROLE_SHAPE].cardinality > len(_SHAPE_FUNCS):
            raise StructureError("shape cardinality exceeds mask count")
        if ROLE_SCALE in names and names[ROLE_SCALE].cardinality > len(self.sizes):
            raise StructureError("scale cardinality exceeds size map")
        max_size = (
            max(self.sizes[: names[ROLE_SCALE].cardinality])
            if ROLE_SCALE in names
            else self.sizes[self.default_scale]
        )
        for role in (ROLE_POS_X, ROLE_POS_Y):
            max_pos = names[role].cardinality - 1 if role in names else self.default_pos
            if max_pos + max_size > WIDTH:
                raise StructureError(
                    f"{role} range {max_pos} plus size {max_size} overflows the canvas"
                )


def render(space: ProductLabelSpace, params: RenderParams, y: FactorTuple) -> np.ndarray:
    """Render one factor tuple to a (3,16,16) float32 image.

    Background is black; the shape mask at the tuple's size and anchor is
    filled with the palette color. Factors absent from the roster fall back
    to the params defaults, so small rosters still render.
    """
    space.validate_tuple(y)
    by_name = {f.name: y[i] for i, f in enumerate(space.factors)}
    color = by_name.get(ROLE_COLOR, params.default_color)
    shape = by_name.get(ROLE_SHAPE, params.default_shape)
    scale = by_name.get(ROLE_SCALE, params.default_scale)
    px = by_name.get(ROLE_POS_X, params.default_pos)
    py = by_name.get(ROLE_POS_Y, params.default_pos)
    size = params.sizes[scale]
    img = np.zeros((CHANNELS, HEIGHT, WIDTH), dtype=np.float32)
    mask = params.mask(shape, size)
    rgb = params.palette[color]
    region = img[:, py : py + size, px : px + size]
    region[:, mask] = rgb[:, None]
    return img


def render_flat(space: ProductLabelSpace, params: RenderParams, y: FactorTuple) -> np.ndarray:
    return render(space, params, y).reshape(-1)


def render_grid(space: ProductLabelSpace, params: RenderParams) -> np.ndarray:
    """Render every combination, id order, as an (grid_size, 768) array."""
    grid = space.grid()
    out = np.empty((len(grid), PIXELS), dtype=np.float32)
    for cid, row in enumerate(grid):
        out[cid] = render_flat(space, params, tuple(int(v) for v in row))
    return out


def image_digest(img: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(img, dtype=np.float32).tobytes()).hexdigest()


def oracle_augment(
    space: ProductLabelSpace,
    params: RenderParams,
    elems: tuple[int, ...],
    labeled: tuple[FactorTuple, np.ndarray],
) -> np.ndarray:
    """Exact image action: re-render the componentwise-acted factor tuple.

    Raises LabelingError when the supplied image is not the rendering of
    the supplied tuple (checked bit-exactly).
    """
    y, img = labeled
    expect = render(space, params, y)
    if img.shape != expect.shape or not np.array_equal(img, expect):
        raise LabelingError(f"image does not match render of tuple {y}")
    return render(space, params, act_tuple(space, elems, y))


def injectivity_check(
    space: ProductLabelSpace, params: RenderParams
) -> tuple[bool, tuple[FactorTuple, FactorTuple] | None]:
    """True iff all grid renders are pairwise distinct (hash then verify)."""
    grid = space.grid()
    seen: dict[str, int] = {}
    images = render_grid(space, params)
    for cid in range(len(grid)):
        key = hashlib.sha256(images[cid].tobytes()).hexdigest()
        if key in seen:
            other = seen[key]
            if np.array_equal(images[cid], images[other]):
                return False, (
                    tuple(int(v) for v in grid[other]),
                    tuple(int(v) for v in grid[cid]),
                )
        seen[key] = cid
    return True, None


def oracle_image_laws(
    space: ProductLabelSpace,
    params: RenderParams,
    n_tuples: int = 100,
    seed: int = 0,
    grid_images: np.ndarray | None = None,
) -> list[tuple[str, int]]:
    """Bit-exact law checks of the re-rendering action on sampled tuples.

    For each sampled tuple: composition within every factor monoid over all
    element pairs, cross-factor commutativity of generator moves over all
    factor pairs, and identity elements acting as the identity image.
    Returns (law, violation count) entries; all counts are exact.
    """
    if grid_images is None:
        grid_images = render_grid(space, params)
    rng = np.random.default_rng(seed)
    ids = rng.integers(space.grid_size, size=n_tuples)
    grid = space.grid()

    def image_of(values: np.ndarray) -> np.ndarray:
        cid = 0
        for v, card in zip(values, space.cardinalities):
            cid = cid * card + int(v)
        return grid_images[cid]

    composition_bad = 0
    commutativity_bad = 0
    identity_bad = 0
    for cid in ids:
        y = grid[cid]
        for i, f in enumerate(space.factors):
            maps = f.action.maps
            table = f.monoid.table
            for a in range(f.monoid.n):
                for b in range(f.monoid.n):
                    via_b = y.copy()
                    via_b[i] = maps[b][y[i]]
                    via_ab = via_b.copy()
                    via_ab[i] = maps[a][via_b[i]]
                    direct = y.copy()
                    direct[i] = maps[table[a, b]][y[i]]
                    if not np.array_equal(image_of(via_ab), image_of(direct)):
                        composition_bad += 1
            ident = y.copy()
            ident[i] = maps[f.monoid.identity][y[i]]
            if not np.array_equal(image_of(ident), grid_images[cid]):
                identity_bad += 1
        for i in range(space.n_factors):
            for j in range(i + 1, space.n_factors):
                gi = 1 if space.factors[i].cardinality > 1 else 0
                gj = 1 if space.factors[j].cardinality > 1 else 0
                ij = y.copy()
                ij[i] = space.factors[i].action.maps[gi][ij[i]]
                ij[j] = space.factors[j].action.maps[gj][ij[j]]
                ji = y.copy()
                ji[j] = space.factors[j].action.maps[gj][ji[j]]
                ji[i] = space.factors[i].action.maps[gi][ji[i]]
                if not np.array_equal(image_of(ij), image_of(ji)):
                    commutativity_bad += 1
    return [
        ("oracle-composition", composition_bad),
        ("oracle-commutativity", commutativity_bad),
        ("oracle-identity", identity_bad),
    ]


def image_endofunction_counts(
    space: ProductLabelSpace, params: RenderParams, grid_images: np.ndarray | None = None
) -> tuple[int, int]:
    """Distinct restricted-form vs full-product endofunctions on images.

    Every factor element (with the others at identity) and every full
    element tuple induces a map on the rendered grid; maps are compared by
    the hashes of the images they produce, so counts reflect distinctness
    on images rather than on abstract labels.
    """
    if grid_images is None:
        grid_images = render_grid(space, params)
    digests = [hashlib.sha256(grid_images[cid].tobytes()).hexdigest()
               for cid in range(space.grid_size)]
    # Equal images share one canonical id, so signatures compare image
    # content even when the renderer is not injective.
    first_of: dict[str, int] = {}
    canonical = np.empty(space.grid_size, dtype=np.int64)
    for cid, digest in enumerate(digests):
        canonical[cid] = first_of.setdefault(digest, cid)
    grid = space.grid()

    def signature(elems: tuple[int, ...]) -> bytes:
        moved = grid.copy()
        for i, a in enumerate(elems):
            moved[:, i] = space.factors[i].action.maps[a][moved[:, i]]
        ids = np.zeros(len(moved), dtype=np.int64)
        for k, card in enumerate(space.cardinalities):
            ids = ids * card + moved[:, k]
        return hashlib.sha256(canonical[ids].tobytes()).digest()

    identities = tuple(f.monoid.identity for f in space.factors)
    restricted: set[bytes] = set()
    for i, f in enumerate(space.factors):
        for a in range(f.monoid.n):
            elems = list(identities)
            elems[i] = a
            restricted.add(signature(tuple(elems)))
    full: set[bytes] = set()
    for cid in range(int(np.prod([f.monoid.n for f in space.factors]))):
        elems = []
        rem = cid
        for f in reversed(space.factors):
            rem, a = divmod(rem, f.monoid.n)
            elems.append(a)
        full.add(signature(tuple(reversed(elems))))
    return len(restricted), len(full)


# --- dataset file (binary, little-endian) -------------------------------------
#
# magic "EDT1"; u32 factor count; per factor: u32 name length, name bytes,
# u8 kind tag, u32 cardinality; u32 instance count; per instance: one u32
# per factor value followed by 768 float32 pixels.


def write_dataset(path, space: ProductLabelSpace, values: np.ndarray, images: np.ndarray):
    values = np.asarray(values, dtype=np.uint32)
    images = np.ascontiguousarray(images, dtype=np.float32)
    if images.shape != (len(values), PIXELS):
        raise StructureError(f"images must be (n, {PIXELS}), got {images.shape}")
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<I", space.n_factors))
        for f in space.factors:
            name = f.name.encode("utf-8")
            fh.write(struct.pack("<I", len(name)))
            fh.write(name)
            fh.write(struct.pack("<BI", kind_tag(f.kind), f.cardinality))
        fh.write(struct.pack("<I", len(values)))
        for row, img in zip(values, images):
            fh.write(row.astype("<u4").tobytes())
            fh.write(img.astype("<f4").tobytes())


def read_dataset(path) -> tuple[ProductLabelSpace, np.ndarray, np.ndarray]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != DATASET_MAGIC:
            raise StructureError(f"bad dataset magic {magic!r}")
        (n_factors,) = struct.unpack("<I", fh.read(4))
        factors = []
        for _ in range(n_factors):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode("utf-8")
            tag, card = struct.unpack("<BI", fh.read(5))
            factors.append(make_factor(name, kind_from_tag(tag), card))
        space = ProductLabelSpace(factors=tuple(factors))
        (count,) = struct.unpack("<I", fh.read(4))
        values = np.empty((count, n_factors), dtype=np.int64)
        images = np.empty((count, PIXELS), dtype=np.float32)
        row_bytes = 4 * n_factors + 4 * PIXELS
        for i in range(count):
            row = fh.read(row_bytes)
            if len(row) != row_bytes:
                raise StructureError("dataset file truncated")
            values[i] = np.frombuffer(row, dtype="<u4", count=n_factors)
            images[i] = np.frombuffer(row, dtype="<f4", offset=4 * n_factors, count=PIXELS)
        return space, values, images
