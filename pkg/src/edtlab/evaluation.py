"""Metrics, the multi-seed ablation harness, and result tables.

Categorical and cyclic factors are scored by misclassification rate in
percent; ordinal factors by mean squared error of the normalized scalar
head, scaled by 100 so the numbers sit in a readable range.
"""

from __future__ import annotations

import multiprocessing as mp
from dataclasses import dataclass, replace

import numpy as np

from .edt import (
    EdtConfig,
    Predictor,
    law_report,
    oracle_augmenters,
    predictor_forward,
    train_augmenters,
    train_predictor,
)
from .factors import FactorKind, ProductLabelSpace, parse_factor_roster, roster_text
from .scenes import RenderParams, render_grid
from .splits import SplitMask, parse_split_spec

ARM_ORDER = ("erm", "edt-l0l3", "edt-full", "edt-oracle")
ARM_LABELS = {
    "erm": "ERM",
    "edt-l0l3": "EDT (l0, l3)",
    "edt-full": "EDT (l0, l1, l2, l3)",
    "edt-oracle": "EDT-oracle",
}


@dataclass(frozen=True)
class MetricsRecord:
    """Per-factor scores of one trained predictor on one split side."""

    arm: str
    split: str
    seed: int
    side: str
    metrics: dict[str, float]

    def as_dict(self) -> dict:
        return {
            "arm": self.arm,
            "split": self.split,
            "seed": self.seed,
            "side": self.side,
            **self.metrics,
        }


def metric_keys(space: ProductLabelSpace) -> list[str]:
    keys = []
    for f in space.factors:
        suffix = "mse" if f.kind is FactorKind.ORDINAL else "err"
        keys.append(f"{f.name}_{suffix}")
    return keys


def evaluate(
    pred: Predictor,
    space: ProductLabelSpace,
    values: np.ndarray,
    images: np.ndarray,
    mask: SplitMask,
    side: str,
    arm: str = "",
    seed: int = 0,
) -> MetricsRecord:
    """Score a predictor on the train or test cells of a split."""
    if side not in ("train", "test"):
        raise ValueError(f"side must be train or test, got {side!r}")
    keep = mask.train_mask() if side == "train" else ~mask.train_mask()
    ids = np.flatnonzero(keep)
    if len(ids) == 0:
        raise ValueError(f"{side} side of split {mask.scheme!r} is empty")
    x = images[ids]
    labels = values[ids]
    outs, _ = predictor_forward(pred, x)
    metrics = {}
    for i, (f, out) in enumerate(zip(space.factors, outs)):
        if f.kind is FactorKind.ORDINAL:
            target = labels[:, i] / max(f.cardinality - 1, 1)
            err = np.mean((out[:, 0].astype(np.float64) - target) ** 2) * 100.0
            metrics[f"{f.name}_mse"] = float(err)
        else:
            rate = np.mean(np.argmax(out, axis=1) != labels[:, i]) * 100.0
            metrics[f"{f.name}_err"] = float(rate)
    return MetricsRecord(arm=arm, split=mask.scheme, seed=seed, side=side, metrics=metrics)


def arm_config(arm: str, base: EdtConfig, seed: int) -> EdtConfig:
    if arm == "erm":
        return replace(base, l3=0.0, use_aug="none", seed=seed)
    if arm == "edt-l0l3":
        return replace(base, l1=0.0, l2=0.0, use_aug="learned", seed=seed)
    if arm == "edt-full":
        return replace(base, use_aug="learned", seed=seed)
    if arm == "edt-oracle":
        return replace(base, use_aug="oracle", seed=seed)
    raise ValueError(f"unknown arm {arm!r}")


def run_experiment(
    space: ProductLabelSpace,
    params: RenderParams,
    split_spec: str,
    arm: str,
    seed: int,
    base_config: EdtConfig,
    grid_images: np.ndarray | None = None,
    law_batch: int = 128,
) -> dict:
    """One (arm, seed) pipeline: split, train, evaluate, law residuals."""
    config = arm_config(arm, base_config, seed)
    if grid_images is None:
        grid_images = render_grid(space, params)
    mask = parse_split_spec(space, split_spec, seed)
    grid = space.grid()
    augmenters: list = []
    if config.use_aug == "learned":
        augmenters, _ = train_augmenters(space, params, mask, config, grid_images)
    elif config.use_aug == "oracle":
        augmenters = oracle_augmenters(space)
    pred, _ = train_predictor(space, augmenters, mask, config, grid_images)
    records = [
        evaluate(pred, space, grid, grid_images, mask, side, arm=arm, seed=seed)
        for side in ("train", "test")
    ]
    residuals = None
    if augmenters:
        rng = np.random.default_rng([seed, 99])
        ids = mask.train_ids[rng.integers(len(mask.train_ids), size=law_batch)]
        rows = law_report(space, augmenters, grid_images[ids], grid[ids], grid_images)
        residuals = rows
    return {
        "arm": arm,
        "seed": seed,
        "records": [r.as_dict() for r in records],
        "residuals": residuals,
    }


def _ablation_worker(payload: dict) -> dict:
    space = parse_factor_roster(payload["roster"])
    config = EdtConfig(**payload["config"])
    return run_experiment(
        space,
        RenderParams(),
        payload["split"],
        payload["arm"],
        payload["seed"],
        config,
        law_batch=payload["law_batch"],
    )


def ablation(
    space: ProductLabelSpace,
    split_spec: str,
    arms: list[str],
    seeds: list[int],
    base_config: EdtConfig,
    jobs: int = 0,
    law_batch: int = 128,
) -> dict:
    """Run every arm for every seed and aggregate mean (std) per metric.

    Jobs are fully independent and may run in parallel worker processes; a
    failed arm is marked failed without disturbing the other arms.
    """
    if len(set(seeds)) != len(seeds):
        raise ValueError("seeds must be distinct")
    for arm in arms:
        arm_config(arm, base_config, 0)  # fail fast on unknown arms
    payloads = [
        {
            "roster": roster_text(space),
            "split": split_spec,
            "arm": arm,
            "seed": seed,
            "config": base_config.__dict__.copy(),
            "law_batch": law_batch,
        }
        for arm in arms
        for seed in seeds
    ]
    results: list[dict] = []
    failures: dict[str, str] = {}
    n_jobs = jobs if jobs > 0 else (mp.cpu_count() or 1)
    n_jobs = min(n_jobs, len(payloads))
    if n_jobs > 1:
        with mp.get_context("fork").Pool(n_jobs) as pool:
            raw = pool.map(_ablation_worker_safe, payloads)
    else:
        raw = [_ablation_worker_safe(p) for p in payloads]
    for payload, outcome in zip(payloads, raw):
        if "error" in outcome:
            failures[payload["arm"]] = outcome["error"]
        else:
            results.append(outcome)
    results.sort(key=lambda r: (ARM_ORDER.index(r["arm"]) if r["arm"] in ARM_ORDER else 99, r["seed"]))
    agg = aggregate(results, side="test")
    return {
        "arms": arms,
        "seeds": seeds,
        "split": split_spec,
        "results": results,
        "aggregate": agg,
        "failed": failures,
        "residual_means": residual_means(results),
    }


def _ablation_worker_safe(payload: dict) -> dict:
    try:
        return _ablation_worker(payload)
    except Exception as exc:  # failures are reported per arm, not fatal
        return {"error": f"{type(exc).__name__}: {exc}", "arm": payload["arm"]}


def aggregate(results: list[dict], side: str = "test") -> dict[str, dict[str, dict]]:
    """Per arm and metric: mean, sample std (ddof=1), and per-seed values."""
    buckets: dict[str, dict[str, list[float]]] = {}
    for res in results:
        for rec in res["records"]:
            if rec["side"] != side:
                continue
            arm = rec["arm"]
            for key, value in rec.items():
                if key in ("arm", "split", "seed", "side"):
                    continue
                buckets.setdefault(arm, {}).setdefault(key, []).append(value)
    agg: dict[str, dict[str, dict]] = {}
    for arm, metrics in buckets.items():
        agg[arm] = {}
        for key, vals in metrics.items():
            arr = np.asarray(vals, dtype=np.float64)
            std = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
            agg[arm][key] = {"mean": float(arr.mean()), "std": std, "values": vals}
    return agg


def residual_means(results: list[dict]) -> dict[str, dict[str, float]]:
    """Mean law residual per arm across seeds and augmenters."""
    by_arm: dict[str, dict[str, list[float]]] = {}
    for res in results:
        if not res.get("residuals"):
            continue
        for row in res["residuals"]:
            by_arm.setdefault(res["arm"], {}).setdefault(row["law"], []).append(row["value"])
    return {
        arm: {law: float(np.mean(vals)) for law, vals in laws.items()}
        for arm, laws in by_arm.items()
    }


def format_cell(mean: float, std: float) -> str:
    return f"{mean:.2f} ({std:.2f})"


def render_table(agg: dict, arms: list[str], keys: list[str]) -> str:
    """Fixed-width text table; the best (lowest mean) arm per column gets *."""
    best = {}
    for key in keys:
        means = {arm: agg[arm][key]["mean"] for arm in arms if arm in agg and key in agg[arm]}
        if means:
            best[key] = min(means, key=means.get)
    header = ["arm"] + keys
    rows = []
    for arm in arms:
        row = [ARM_LABELS.get(arm, arm)]
        for key in keys:
            if arm in agg and key in agg[arm]:
                cell = format_cell(agg[arm][key]["mean"], agg[arm][key]["std"])
                if best.get(key) == arm:
                    cell = "*" + cell
            else:
                cell = "failed"
            row.append(cell)
        rows.append(row)
    widths = [max(len(r[c]) for r in [header] + rows) for c in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)))
    return "\n".join(lines) + "\n"


def ordering_checks(agg: dict, keys: list[str]) -> dict[str, bool]:
    """Directional checks: edt-full < edt-l0l3 < erm, oracle <= all learned."""
    out = {}
    for key in keys:
        try:
            full = agg["edt-full"][key]["mean"]
            part = agg["edt-l0l3"][key]["mean"]
            erm = agg["erm"][key]["mean"]
            oracle = agg["edt-oracle"][key]["mean"]
        except KeyError:
            out[key] = False
            continue
        out[key] = full < part < erm and oracle <= min(full, part, erm)
    return out
