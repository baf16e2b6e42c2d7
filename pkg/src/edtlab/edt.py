"""Learned single-factor augmentations with algebraic regularization.

One augmenter per factor approximates the image action of that factor's
generator; higher powers are realized by repeated application. Training
minimizes a pixel distance on mined pairs (l0) plus compositionality (l1)
and cross-factor commutativity (l2) penalties, and the factor predictor is
trained with an equivariance term (l3) that supervises augmented images
with action-transformed labels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffcore import (
    AdamState,
    Network,
    distance_bce,
    distance_mse,
    glorot_network,
    loss_mse,
    loss_softmax_ce,
)
from .factors import (
    FactorKind,
    ProductLabelSpace,
    act_factor_array,
    values_to_ids,
)
from .scenes import PIXELS, RenderParams, render_grid
from .splits import PairSet, SplitMask, select_pairs

TRUNK_DIMS = (256, 64)


class TrainingDataError(RuntimeError):
    """A factor has no usable augmentation pairs at all."""


@dataclass
class EdtConfig:
    """Loss weights, optimizer settings, and sizes for one training run."""

    l0: float = 1.0
    l1: float = 1.0
    l2: float = 1.0
    l3: float = 1.0
    pixel_distance: str = "bce"  # training distance; law reports use mse
    lr_aug: float = 1e-3
    lr_pred: float = 1e-4
    batch: int = 32
    aug_iters: int = 10000
    pred_iters: int = 5000
    aug_hidden: int = 512
    l3_max_power: int = 1
    use_aug: str = "learned"  # learned | oracle | none
    seed: int = 0
    log_every: int = 100

    def __post_init__(self):
        for name in ("l0", "l1", "l2", "l3"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"{name} weight must be finite and >= 0, got {value}")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.pixel_distance not in ("bce", "mse"):
            raise ValueError(f"unknown pixel distance {self.pixel_distance!r}")
        if self.use_aug not in ("learned", "oracle", "none"):
            raise ValueError(f"unknown use_aug mode {self.use_aug!r}")


def pixel_distance_fn(name: str):
    """Two-sided pixel distance: (loss, grad_pred, grad_target)."""
    return distance_bce if name == "bce" else distance_mse


# --- augmenters -----------------------------------------------------------------


@dataclass
class Augmenter:
    """Trainable endofunction on images for one factor generator."""

    factor_index: int
    element: int
    net: Network

    def chain(self) -> list[Network]:
        return [self.net]


@dataclass
class IdentityAugmenter:
    """The exact identity map; usable wherever an augmenter is expected."""

    factor_index: int | None = None
    element: int | None = None

    def chain(self) -> list[Network]:
        return []


@dataclass
class ComposedAugmenter:
    """outer after inner, differentiable through both."""

    inner: object
    outer: object

    @property
    def factor_index(self):
        return self.inner.factor_index

    def chain(self) -> list[Network]:
        return list(self.inner.chain()) + list(self.outer.chain())


@dataclass
class OracleAugmenter:
    """Exact generator action realized by grid lookup of the re-rendering."""

    factor_index: int
    element: int


def make_augmenter_net(hidden: int, rng: np.random.Generator, dtype=np.float32) -> Network:
    return glorot_network(
        [PIXELS, hidden, PIXELS], ["relu", "sigmoid"], rng, dtype=dtype
    )


class GradSink:
    """Accumulates parameter gradients per network across loss terms."""

    def __init__(self):
        self._grads: dict[int, list[np.ndarray]] = {}

    def add(self, net: Network, grads: list[np.ndarray], scale: float = 1.0):
        cur = self._grads.get(id(net))
        if cur is None:
            self._grads[id(net)] = [scale * g for g in grads]
        else:
            for c, g in zip(cur, grads):
                c += scale * g

    def get(self, net: Network) -> list[np.ndarray] | None:
        return self._grads.get(id(net))

    def get_or_zero(self, net: Network) -> list[np.ndarray]:
        return self._grads.get(id(net)) or net.zero_grads()


def chain_forward(nets: list[Network], x: np.ndarray) -> tuple[np.ndarray, list]:
    """Apply networks in order; caches allow backprop through the whole chain."""
    caches = []
    out = x
    for net in nets:
        out, cache = net.forward(out)
        caches.append(cache)
    return out, caches


def chain_backward(
    nets: list[Network], caches: list, gout: np.ndarray, sink: GradSink, scale: float = 1.0
) -> np.ndarray:
    """Backprop through a chain, accumulating per-network parameter grads."""
    g = gout
    for net, cache in zip(reversed(nets), reversed(caches)):
        g, grads = net.backward(cache, g)
        sink.add(net, grads, scale)
    return g


# --- augmentation losses ----------------------------------------------------------


def loss_l0(
    aug: Augmenter, x: np.ndarray, x_target: np.ndarray, distance: str = "bce"
) -> tuple[float, GradSink]:
    """Pixel distance between aug(x) and the paired target image."""
    if len(x) == 0:
        raise ValueError("empty batch")
    sink = GradSink()
    out, caches = chain_forward(aug.chain(), x)
    loss, gout, _ = pixel_distance_fn(distance)(out, x_target)
    chain_backward(aug.chain(), caches, gout, sink)
    return loss, sink


def loss_l1(
    aug_j, aug_k, aug_jk, x: np.ndarray, distance: str = "mse"
) -> tuple[float, GradSink]:
    """Compositionality: distance between aug_j(aug_k(x)) and aug_jk(x)."""
    indices = {a.factor_index for a in (aug_j, aug_k, aug_jk) if a.factor_index is not None}
    if len(indices) > 1:
        raise ValueError(f"augmenters belong to different factors: {indices}")
    sink = GradSink()
    left_chain = list(aug_k.chain()) + list(aug_j.chain())
    left, left_caches = chain_forward(left_chain, x)
    right_chain = aug_jk.chain()
    right, right_caches = chain_forward(right_chain, x)
    loss, gleft, gright = pixel_distance_fn(distance)(left, right)
    chain_backward(left_chain, left_caches, gleft, sink)
    chain_backward(right_chain, right_caches, gright, sink)
    return loss, sink


def loss_l2(aug_a, aug_b, x: np.ndarray, distance: str = "mse") -> tuple[float, GradSink]:
    """Commutativity: the two application orders should give the same image."""
    ia, ib = aug_a.factor_index, aug_b.factor_index
    if ia is not None and ib is not None and ia == ib:
        raise ValueError("commutativity applies to augmenters of distinct factors")
    sink = GradSink()
    chain_ab = list(aug_a.chain()) + list(aug_b.chain())  # b after a
    chain_ba = list(aug_b.chain()) + list(aug_a.chain())
    out_ab, caches_ab = chain_forward(chain_ab, x)
    out_ba, caches_ba = chain_forward(chain_ba, x)
    loss, gab, gba = pixel_distance_fn(distance)(out_ab, out_ba)
    chain_backward(chain_ab, caches_ab, gab, sink)
    chain_backward(chain_ba, caches_ba, gba, sink)
    return loss, sink


# --- predictor --------------------------------------------------------------------


@dataclass
class Predictor:
    """Shared trunk with one head per factor.

    Categorical and cyclic heads emit logits over the factor values; ordinal
    heads emit one sigmoid scalar interpreted as value/(cardinality-1).
    """

    trunk: Network
    heads: list[Network]
    head_kinds: list[FactorKind]
    factor_names: list[str] = field(default_factory=list)

    def params(self) -> list[np.ndarray]:
        out = list(self.trunk.params())
        for head in self.heads:
            out.extend(head.params())
        return out

    def networks(self) -> dict[str, Network]:
        nets = {"trunk": self.trunk}
        for name, head in zip(self.factor_names, self.heads):
            nets[f"head:{name}"] = head
        return nets


def make_predictor(space: ProductLabelSpace, rng: np.random.Generator, dtype=np.float32) -> Predictor:
    trunk = glorot_network(
        [PIXELS, *TRUNK_DIMS], ["relu"] * len(TRUNK_DIMS), rng, dtype=dtype
    )
    heads, kinds, names = [], [], []
    feat = TRUNK_DIMS[-1]
    for f in space.factors:
        if f.kind is FactorKind.ORDINAL:
            head = glorot_network([feat, 1], ["sigmoid"], rng, dtype=dtype)
        else:
            head = glorot_network([feat, f.cardinality], ["identity"], rng, dtype=dtype)
        heads.append(head)
        kinds.append(f.kind)
        names.append(f.name)
    return Predictor(trunk=trunk, heads=heads, head_kinds=kinds, factor_names=names)


def predictor_forward(pred: Predictor, x: np.ndarray):
    feats, trunk_cache = pred.trunk.forward(x)
    outs, caches = [], []
    for head in pred.heads:
        out, cache = head.forward(feats)
        outs.append(out)
        caches.append(cache)
    return outs, (trunk_cache, caches)


def predictor_loss(
    pred: Predictor,
    x: np.ndarray,
    labels: np.ndarray,
    cardinalities: tuple[int, ...],
) -> tuple[float, list[float], list[np.ndarray]]:
    """Summed per-head supervised loss with grads aligned to pred.params().

    Cross-entropy for categorical/cyclic heads, mean squared error on the
    normalized scalar for ordinal heads.
    """
    outs, (trunk_cache, head_caches) = predictor_forward(pred, x)
    per_head = []
    gfeats = None
    head_grads = []
    for i, (head, kind, out, cache) in enumerate(
        zip(pred.heads, pred.head_kinds, outs, head_caches)
    ):
        if kind is FactorKind.ORDINAL:
            target = (labels[:, i] / max(cardinalities[i] - 1, 1)).astype(out.dtype)
            loss, gout = loss_mse(out, target[:, None])
        else:
            loss, gout = loss_softmax_ce(out, labels[:, i])
        gx, grads = head.backward(cache, gout)
        per_head.append(loss)
        head_grads.append(grads)
        gfeats = gx if gfeats is None else gfeats + gx
    _, trunk_grads = pred.trunk.backward(trunk_cache, gfeats)
    all_grads = list(trunk_grads)
    for grads in head_grads:
        all_grads.extend(grads)
    return float(sum(per_head)), per_head, all_grads


def predict_values(pred: Predictor, x: np.ndarray, cardinalities: tuple[int, ...]) -> np.ndarray:
    """Hard per-factor predictions (argmax / rounded scaled scalar)."""
    outs, _ = predictor_forward(pred, x)
    cols = []
    for i, (kind, out) in enumerate(zip(pred.head_kinds, outs)):
        if kind is FactorKind.ORDINAL:
            scaled = out[:, 0] * (cardinalities[i] - 1)
            cols.append(np.clip(np.rint(scaled), 0, cardinalities[i] - 1).astype(np.int64))
        else:
            cols.append(np.argmax(out, axis=1).astype(np.int64))
    return np.stack(cols, axis=1)


def loss_l3(
    pred: Predictor,
    space: ProductLabelSpace,
    aug_images: np.ndarray,
    labels: np.ndarray,
    factor_index: int,
    element: int,
) -> tuple[float, list[float], list[np.ndarray]]:
    """Equivariance term: supervised loss on augmented images with moved labels.

    The target of the augmented factor's head follows the action (the
    equivariance branch); every other head keeps its label (the invariance
    branch). Both are realized at once by transforming the full tuple.
    """
    moved = act_factor_array(space, factor_index, element, labels)
    return predictor_loss(pred, aug_images, moved, space.cardinalities)


# --- training ----------------------------------------------------------------------


def _generator_powers(space: ProductLabelSpace, i: int, k: int) -> int:
    """Element id of the factor generator composed k times."""
    return space.factors[i].monoid.power(1, k)


def apply_augmenter(
    aug,
    images: np.ndarray,
    labels: np.ndarray,
    space: ProductLabelSpace,
    grid_images: np.ndarray | None = None,
    power: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """Apply an augmenter `power` times; labels move by the composed element.

    Learned augmenters run their network forward `power` times; oracle
    augmenters look up the re-rendered grid image of the moved tuple.
    """
    i = aug.factor_index
    element = _generator_powers(space, i, power)
    moved = act_factor_array(space, i, element, labels)
    if isinstance(aug, OracleAugmenter):
        if grid_images is None:
            raise ValueError("oracle augmentation needs pre-rendered grid images")
        return grid_images[values_to_ids(space, moved)], moved
    out = images
    for _ in range(power):
        out, _ = chain_forward(aug.chain(), out)
    return out, moved


def _augmentable_factors(space: ProductLabelSpace) -> list[int]:
    return [i for i, f in enumerate(space.factors) if f.cardinality > 1]


def mine_pairs(space: ProductLabelSpace, mask: SplitMask) -> dict[int, PairSet]:
    """Generator pair sets per augmentable factor; aborts if one is empty."""
    out = {}
    empty = []
    for i in _augmentable_factors(space):
        ps = select_pairs(space, mask, i, 1)
        if ps.is_empty:
            empty.append(space.factors[i].name)
        out[i] = ps
    if empty:
        raise TrainingDataError(
            f"no augmentation pairs in train cells for factor(s): {', '.join(empty)}"
        )
    return out


def train_augmenters(
    space: ProductLabelSpace,
    params: RenderParams,
    mask: SplitMask,
    config: EdtConfig,
    grid_images: np.ndarray | None = None,
) -> tuple[list[Augmenter], list[dict]]:
    """Train one augmenter per factor generator on the split's train cells.

    Each iteration takes an l0 step on mined pairs for every factor, then
    l1 self-consistency on one factor's generator powers and l2 order
    symmetry on one cross-factor pair, all on unpaired train-cell images.
    """
    if grid_images is None:
        grid_images = render_grid(space, params)
    pairs = mine_pairs(space, mask)
    factor_ids = sorted(pairs)
    rng = np.random.default_rng([config.seed, 1])
    augs = {
        i: Augmenter(factor_index=i, element=1, net=make_augmenter_net(config.aug_hidden, rng))
        for i in factor_ids
    }
    adam = {i: AdamState(lr=config.lr_aug) for i in factor_ids}
    train_ids = mask.train_ids
    cross_pairs = [(a, b) for ai, a in enumerate(factor_ids) for b in factor_ids[ai + 1:]]
    log: list[dict] = []
    running = {"l0": 0.0, "l1": 0.0, "l2": 0.0, "count": 0}
    for it in range(1, config.aug_iters + 1):
        sinks = {i: GradSink() for i in factor_ids}
        l0_total = 0.0
        for i in factor_ids:
            pp = pairs[i].pairs
            take = rng.integers(len(pp), size=min(config.batch, len(pp)))
            x = grid_images[pp[take, 0]]
            xp = grid_images[pp[take, 1]]
            value, sink = loss_l0(augs[i], x, xp, config.pixel_distance)
            sinks[i].add(augs[i].net, sink.get(augs[i].net), config.l0)
            l0_total += value
        l0_mean = l0_total / len(factor_ids)
        l1_val = l2_val = 0.0
        if config.l1 > 0:
            i = factor_ids[int(rng.integers(len(factor_ids)))]
            x = grid_images[train_ids[rng.integers(len(train_ids), size=config.batch)]]
            card = space.factors[i].cardinality
            # Generator powers (1, card-1): the left path applies the net
            # card times, the right realizes the composed element directly
            # (zero applications for cyclic wrap, card-1 at saturation).
            jk_elem = _generator_powers(space, i, card)
            value, sink = loss_l1(
                augs[i],
                _power_augmenter(augs[i], card - 1),
                _power_augmenter(augs[i], jk_elem),
                x,
                config.pixel_distance,
            )
            sinks[i].add(augs[i].net, sink.get(augs[i].net), config.l1)
            l1_val = value
        if config.l2 > 0 and cross_pairs:
            a, b = cross_pairs[int(rng.integers(len(cross_pairs)))]
            x = grid_images[train_ids[rng.integers(len(train_ids), size=config.batch)]]
            value, sink = loss_l2(augs[a], augs[b], x, config.pixel_distance)
            sinks[a].add(augs[a].net, sink.get(augs[a].net), config.l2)
            sinks[b].add(augs[b].net, sink.get(augs[b].net), config.l2)
            l2_val = value
        for i in factor_ids:
            grads = sinks[i].get(augs[i].net)
            if grads is not None:
                adam[i].step(augs[i].net.params(), grads)
        running["l0"] += l0_mean
        running["l1"] += l1_val
        running["l2"] += l2_val
        running["count"] += 1
        if it % config.log_every == 0 or it == config.aug_iters:
            n = running["count"]
            log.append(
                {
                    "iter": it,
                    "l0": running["l0"] / n,
                    "l1": running["l1"] / n,
                    "l2": running["l2"] / n,
                    "l3": None,
                    "sup": None,
                }
            )
            running = {"l0": 0.0, "l1": 0.0, "l2": 0.0, "count": 0}
    return [augs[i] for i in factor_ids], log


def _power_augmenter(aug: Augmenter, k: int):
    """aug applied k times as a composable chain (k=0 is the identity)."""
    if k == 0:
        return IdentityAugmenter(factor_index=aug.factor_index, element=0)
    out = aug
    for _ in range(k - 1):
        out = ComposedAugmenter(inner=out, outer=aug)
    return out


def train_predictor(
    space: ProductLabelSpace,
    augmenters: list,
    mask: SplitMask,
    config: EdtConfig,
    grid_images: np.ndarray,
) -> tuple[Predictor, list[dict]]:
    """Supervised training on train cells plus the weighted equivariance term.

    With l3 = 0 or use_aug = "none" this is exactly the ERM baseline. Each
    iteration with augmentation samples one (factor, generator power) and
    supervises the augmented batch with its action-transformed labels;
    augmenters are frozen here.
    """
    grid = space.grid()
    rng = np.random.default_rng([config.seed, 2])
    pred = make_predictor(space, rng)
    adam = AdamState(lr=config.lr_pred)
    by_factor = {a.factor_index: a for a in augmenters}
    usable = sorted(by_factor)
    train_ids = mask.train_ids
    use_l3 = config.l3 > 0 and config.use_aug != "none" and usable
    log: list[dict] = []
    running = {"sup": 0.0, "l3": 0.0, "count": 0}
    for it in range(1, config.pred_iters + 1):
        ids = train_ids[rng.integers(len(train_ids), size=config.batch)]
        x = grid_images[ids]
        labels = grid[ids]
        sup, _, grads = predictor_loss(pred, x, labels, space.cardinalities)
        l3_val = 0.0
        if use_l3:
            i = usable[int(rng.integers(len(usable)))]
            power = int(rng.integers(1, config.l3_max_power + 1))
            aug_x, moved = apply_augmenter(
                by_factor[i], x, labels, space, grid_images, power=power
            )
            element = _generator_powers(space, i, power)
            l3_val, _, l3_grads = loss_l3(pred, space, aug_x, labels, i, element)
            for g, g3 in zip(grads, l3_grads):
                g += config.l3 * g3
        adam.step(pred.params(), grads)
        running["sup"] += sup
        running["l3"] += l3_val
        running["count"] += 1
        if it % config.log_every == 0 or it == config.pred_iters:
            n = running["count"]
            log.append(
                {
                    "iter": it,
                    "l0": None,
                    "l1": None,
                    "l2": None,
                    "l3": running["l3"] / n,
                    "sup": running["sup"] / n,
                }
            )
            running = {"sup": 0.0, "l3": 0.0, "count": 0}
    return pred, log


def oracle_augmenters(space: ProductLabelSpace) -> list[OracleAugmenter]:
    return [OracleAugmenter(factor_index=i, element=1) for i in _augmentable_factors(space)]


# --- law report -------------------------------------------------------------------


def law_report(
    space: ProductLabelSpace,
    augmenters: list,
    images: np.ndarray,
    labels: np.ndarray,
    grid_images: np.ndarray,
) -> list[dict]:
    """Quantify how far augmenters drift from the exact algebra.

    Per augmenter (mse distances): deviation from the oracle action,
    compositionality residual over generator powers, commutativity residual
    against every other augmenter, and label leakage of non-target factors
    after nearest-grid-image decoding.
    """
    records: list[dict] = []
    by_factor = {a.factor_index: a for a in augmenters}
    for i, aug in sorted(by_factor.items()):
        name = space.factors[i].name
        card = space.factors[i].cardinality
        one_step, moved = apply_augmenter(aug, images, labels, space, grid_images, power=1)
        oracle_imgs = grid_images[values_to_ids(space, moved)]
        records.append(
            {
                "factor": name,
                "law": "aug_vs_oracle",
                "value": float(loss_mse(one_step, oracle_imgs)[0]),
            }
        )
        left, _ = apply_augmenter(aug, images, labels, space, grid_images, power=card)
        right_power = _power_steps(space, i, card)
        right, _ = apply_augmenter(aug, images, labels, space, grid_images, power=right_power)
        records.append(
            {
                "factor": name,
                "law": "compositionality",
                "value": float(loss_mse(left, right)[0]),
            }
        )
        comm_vals = []
        for j, other in sorted(by_factor.items()):
            if j == i:
                continue
            ij, _ = apply_augmenter(other, one_step, moved, space, grid_images)
            ji_first, moved_j = apply_augmenter(other, images, labels, space, grid_images)
            ji, _ = apply_augmenter(aug, ji_first, moved_j, space, grid_images)
            comm_vals.append(loss_mse(ij, ji)[0])
        records.append(
            {
                "factor": name,
                "law": "commutativity",
                "value": float(np.mean(comm_vals)) if comm_vals else 0.0,
            }
        )
        decoded = nearest_grid_tuples(space, one_step, grid_images)
        non_target = [j for j in range(space.n_factors) if j != i]
        leak = float(np.mean([(decoded[:, j] != labels[:, j]).mean() for j in non_target]))
        target_hit = float((decoded[:, i] == moved[:, i]).mean())
        records.append({"factor": name, "law": "leakage", "value": leak})
        records.append({"factor": name, "law": "target_accuracy", "value": target_hit})
    return records


def _power_steps(space: ProductLabelSpace, i: int, k: int) -> int:
    """Number of generator applications realizing gen^k's element id."""
    return int(_generator_powers(space, i, k))


def nearest_grid_tuples(
    space: ProductLabelSpace, images: np.ndarray, grid_images: np.ndarray
) -> np.ndarray:
    """Decode images to factor tuples by exhaustive nearest-image lookup."""
    # ||a-b||^2 = ||a||^2 - 2ab + ||b||^2; the ||a||^2 term is constant per row.
    cross = images.astype(np.float32) @ grid_images.T
    norms = np.einsum("ij,ij->i", grid_images, grid_images)
    ids = np.argmax(2.0 * cross - norms[None, :], axis=1)
    return space.grid()[ids]


def aggregate_residuals(records: list[dict]) -> dict[str, float]:
    """Mean residual per law across augmenters."""
    out: dict[str, list[float]] = {}
    for rec in records:
        out.setdefault(rec["law"], []).append(rec["value"])
    return {law: float(np.mean(vals)) for law, vals in out.items()}
