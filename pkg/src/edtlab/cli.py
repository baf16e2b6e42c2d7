"""Command-line pipeline: generate, verify, train, evaluate, ablate.

Commands compose through files only (dataset, split, checkpoints, metrics)
and every output directory carries a config echo with a digest, so a rerun
with the same config and seed reproduces the metrics byte for byte.

Exit codes: 0 success, 2 law violation, 3 config error, 4 missing artifact.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .algebra import (
    LawReport,
    StructureError,
    action_verify,
    load_monoid,
    monoid_verify,
    verify_constructions,
)
from .config import ConfigError, RunConfig, load_config, write_echo
from .diffcore import Network, NumericsError, read_checkpoint, write_checkpoint
from .edt import (
    Augmenter,
    Predictor,
    TrainingDataError,
    law_report,
    make_predictor,
    oracle_augmenters,
    train_augmenters,
    train_predictor,
)
from .evaluation import (
    ablation,
    evaluate,
    metric_keys,
    ordering_checks,
    render_table,
)
from .factors import ProductLabelSpace, values_to_ids
from .scenes import (
    RenderParams,
    image_endofunction_counts,
    injectivity_check,
    oracle_image_laws,
    read_dataset,
    render_grid,
    write_dataset,
)
from .splits import SplitError, parse_split_spec, read_split, write_split

EXIT_OK = 0
EXIT_LAW = 2
EXIT_CONFIG = 3
EXIT_MISSING = 4


class MissingArtifact(FileNotFoundError):
    pass


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "split", None):
        cfg.split = args.split
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require(path_str: str | None, what: str) -> Path:
    if not path_str:
        raise MissingArtifact(f"{what} path not given")
    path = Path(path_str)
    if not path.exists():
        raise MissingArtifact(f"{what} not found: {path}")
    return path


def _dataset_as_grid(space: ProductLabelSpace, values, images):
    """Reorder a full-grid dataset by combination id; reject partial grids."""
    if len(values) != space.grid_size:
        raise MissingArtifact(
            f"dataset has {len(values)} instances, expected the full grid "
            f"of {space.grid_size}"
        )
    ids = values_to_ids(space, values)
    if len(np.unique(ids)) != space.grid_size:
        raise MissingArtifact("dataset does not enumerate the grid exactly once")
    order = np.argsort(ids)
    return images[order]


def _write_json(path: Path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_jsonl(path: Path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def _write_csv(path: Path, header: list[str], rows: list[list]):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")


def _augmenter_checkpoint(augs: list[Augmenter], space: ProductLabelSpace, path: Path):
    nets = {
        f"aug:{space.factors[a.factor_index].name}:{a.element}": a.net for a in augs
    }
    write_checkpoint(path, nets)


def _load_augmenters(path: Path, space: ProductLabelSpace) -> list[Augmenter]:
    nets, _ = read_checkpoint(path)
    augs = []
    for name, net in nets.items():
        kind, _, rest = name.partition(":")
        if kind != "aug":
            raise StructureError(f"unexpected network {name!r} in augmenter checkpoint")
        factor_name, _, element = rest.partition(":")
        augs.append(
            Augmenter(
                factor_index=space.factor_index(factor_name),
                element=int(element),
                net=net,
            )
        )
    augs.sort(key=lambda a: a.factor_index)
    return augs


def _predictor_checkpoint(pred: Predictor, path: Path):
    write_checkpoint(path, pred.networks())


def _load_predictor(path: Path, space: ProductLabelSpace) -> Predictor:
    nets, _ = read_checkpoint(path)
    if "trunk" not in nets:
        raise StructureError("predictor checkpoint lacks a trunk network")
    template = make_predictor(space, np.random.default_rng(0))
    heads = []
    for name in template.factor_names:
        key = f"head:{name}"
        if key not in nets:
            raise StructureError(f"predictor checkpoint lacks {key!r}")
        heads.append(nets[key])
    return Predictor(
        trunk=nets["trunk"],
        heads=heads,
        head_kinds=template.head_kinds,
        factor_names=template.factor_names,
    )


# --- commands -------------------------------------------------------------------


def cmd_gen(args) -> int:
    cfg = _load_run_config(args)
    space = cfg.space()
    params = RenderParams()
    params.validate(space)
    out = _out_dir(args)
    write_echo(cfg, out)
    ok, witness = injectivity_check(space, params)
    if not ok:
        print(f"renderer collision: tuples {witness[0]} and {witness[1]} "
              "produce identical images", file=sys.stderr)
        return EXIT_LAW
    images = render_grid(space, params)
    grid = space.grid()
    write_dataset(out / "dataset.edt1", space, grid, images)
    from .figures import save_sample_grid

    save_sample_grid(images, out / "samples.png")
    print(f"wrote {out / 'dataset.edt1'}: {space.grid_size} instances, "
          f"digest {cfg.digest()}")
    return EXIT_OK


def cmd_verify_algebra(args) -> int:
    cfg = _load_run_config(args)
    lines: list[str] = []
    failed = False

    def record(name: str, report: LawReport):
        nonlocal failed
        lines.append(f"{name}: {report.summary()}")
        failed = failed or not report.ok

    if args.input:
        path = _require(args.input, "monoid file")
        monoid, action = load_monoid(path.read_text(encoding="utf-8"))
        record("monoid", monoid_verify(monoid))
        if action is not None:
            record("action", action_verify(action))
    else:
        for name, report in verify_constructions(n_max=12):
            if not report.ok:
                record(name, report)
        lines.append(f"construction sweep (n<=12): {'FAILED' if failed else 'all laws hold'}")
        space = cfg.space()
        params = RenderParams()
        params.validate(space)
        for f in space.factors:
            record(f"factor {f.name} monoid", monoid_verify(f.monoid))
            record(f"factor {f.name} action", action_verify(f.action))
        grid_images = render_grid(space, params)
        for law, bad in oracle_image_laws(space, params, n_tuples=100,
                                          seed=cfg.seed, grid_images=grid_images):
            lines.append(f"{law}: {bad} violation(s)")
            failed = failed or bad > 0
        restricted, full = image_endofunction_counts(space, params, grid_images)
        bound = sum(f.monoid.n for f in space.factors)
        lines.append(
            f"image endofunctions: {restricted} restricted forms "
            f"(bound sum |A_i| = {bound}) vs {full} full products"
        )
    text = "\n".join(lines) + "\n"
    print(text, end="")
    if args.out:
        out = _out_dir(args)
        (out / "algebra_report.txt").write_text(text, encoding="utf-8")
    return EXIT_LAW if failed else EXIT_OK


def _prepare_training(args, cfg: RunConfig):
    data_path = _require(args.data, "dataset")
    space, values, images = read_dataset(data_path)
    grid_images = _dataset_as_grid(space, values, images)
    mask = parse_split_spec(space, cfg.split, cfg.seed)
    return space, grid_images, mask


def cmd_train_aug(args) -> int:
    cfg = _load_run_config(args)
    space, grid_images, mask = _prepare_training(args, cfg)
    out = _out_dir(args)
    write_echo(cfg, out)
    write_split(out / "split.txt", mask)
    augs, log = train_augmenters(space, RenderParams(), mask, cfg.edt_config(), grid_images)
    _augmenter_checkpoint(augs, space, out / "augmenters.edtw")
    _write_jsonl(out / "aug_log.jsonl", log)
    print(f"trained {len(augs)} augmenters on {mask.n_train} train cells "
          f"(seed {cfg.seed}, digest {cfg.digest()})")
    return EXIT_OK


def _arm_overrides(args, cfg: RunConfig):
    arm = getattr(args, "arm", None) or "edt"
    if arm == "erm":
        cfg.l3 = 0.0
        cfg.use_aug = "none"
    elif arm == "edt-oracle":
        cfg.use_aug = "oracle"
    elif arm != "edt":
        raise ConfigError(f"unknown arm {arm!r}")
    for key in ("l0", "l1", "l2", "l3"):
        value = getattr(args, key, None)
        if value is not None:
            setattr(cfg, key, value)
    if getattr(args, "no_aug", False):
        cfg.use_aug = "none"
    return cfg


def cmd_train_pred(args) -> int:
    cfg = _arm_overrides(args, _load_run_config(args))
    space, grid_images, mask = _prepare_training(args, cfg)
    out = _out_dir(args)
    write_echo(cfg, out)
    write_split(out / "split.txt", mask)
    augmenters: list = []
    if cfg.use_aug == "learned" and cfg.l3 > 0:
        aug_path = _require(args.aug, "augmenter checkpoint")
        augmenters = _load_augmenters(aug_path, space)
    elif cfg.use_aug == "oracle":
        augmenters = oracle_augmenters(space)
    pred, log = train_predictor(space, augmenters, mask, cfg.edt_config(), grid_images)
    _predictor_checkpoint(pred, out / "predictor.edtw")
    _write_jsonl(out / "pred_log.jsonl", log)
    print(f"trained predictor ({cfg.use_aug} augmentation, l3={cfg.l3}) "
          f"on {mask.n_train} train cells (digest {cfg.digest()})")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_run_config(args)
    data_path = _require(args.data, "dataset")
    pred_path = _require(args.pred, "predictor checkpoint")
    space, values, images = read_dataset(data_path)
    grid_images = _dataset_as_grid(space, values, images)
    pred = _load_predictor(pred_path, space)
    if args.split_file:
        mask = read_split(_require(args.split_file, "split file"), space)
    else:
        mask = parse_split_spec(space, cfg.split, cfg.seed)
    out = _out_dir(args)
    write_echo(cfg, out)
    grid = space.grid()
    records = [
        evaluate(pred, space, grid, grid_images, mask, side,
                 arm=getattr(args, "arm", None) or "", seed=cfg.seed)
        for side in ("train", "test")
    ]
    payload = {
        "config_digest": cfg.digest(),
        "seed": cfg.seed,
        "split": mask.scheme,
        "records": [r.as_dict() for r in records],
    }
    _write_json(out / "metrics.json", payload)
    keys = metric_keys(space)
    rows = [
        [r.side, r.seed] + [f"{r.metrics[k]:.6f}" for k in keys] for r in records
    ]
    _write_csv(out / "metrics.csv", ["side", "seed"] + keys, rows)
    for r in records:
        summary = "  ".join(f"{k}={r.metrics[k]:.2f}" for k in keys)
        print(f"{r.side}: {summary}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _load_run_config(args)
    if args.arms:
        cfg.arms = args.arms
    if args.seeds:
        cfg.n_seeds = args.seeds
    if args.jobs is not None:
        cfg.jobs = args.jobs
    space = cfg.space()
    params = RenderParams()
    params.validate(space)
    out = _out_dir(args)
    write_echo(cfg, out)
    seeds = [cfg.seed + k for k in range(cfg.n_seeds)]
    outcome = ablation(
        space, cfg.split, cfg.arm_list(), seeds, cfg.edt_config(),
        jobs=cfg.jobs, law_batch=cfg.law_batch,
    )
    rows = []
    for res in outcome["results"]:
        for rec in res["records"]:
            rows.append({"config_digest": cfg.digest(), **rec})
    _write_jsonl(out / "results.jsonl", rows)
    keys = metric_keys(space)
    arms = cfg.arm_list()
    table = render_table(outcome["aggregate"], arms, keys)
    (out / "table.txt").write_text(table, encoding="utf-8")
    csv_rows = []
    for arm in arms:
        for key in keys:
            cell = outcome["aggregate"].get(arm, {}).get(key)
            if cell:
                csv_rows.append([arm, key, f"{cell['mean']:.6f}", f"{cell['std']:.6f}"])
            else:
                csv_rows.append([arm, key, "failed", "failed"])
    _write_csv(out / "table.csv", ["arm", "metric", "mean", "std"], csv_rows)
    res_rows = [
        [arm, law, f"{value:.10f}"]
        for arm, laws in sorted(outcome["residual_means"].items())
        for law, value in sorted(laws.items())
    ]
    _write_csv(out / "law_residuals.csv", ["arm", "law", "mean_residual"], res_rows)
    from .figures import save_ablation_figure

    save_ablation_figure(outcome["aggregate"], arms, keys, out / "ablation.png")
    print(table, end="")
    checks = ordering_checks(outcome["aggregate"], keys)
    for key, ok in checks.items():
        print(f"ordering {key}: {'holds' if ok else 'not satisfied'}")
    if outcome["failed"]:
        for arm, err in outcome["failed"].items():
            print(f"arm {arm} failed: {err}", file=sys.stderr)
        if not outcome["results"]:
            return EXIT_CONFIG
    return EXIT_OK


def cmd_law_report(args) -> int:
    cfg = _load_run_config(args)
    space_data = _prepare_training(args, cfg)
    space, grid_images, mask = space_data
    out = _out_dir(args)
    write_echo(cfg, out)
    if args.oracle:
        augmenters = oracle_augmenters(space)
    else:
        aug_path = _require(args.aug, "augmenter checkpoint")
        augmenters = _load_augmenters(aug_path, space)
    rng = np.random.default_rng([cfg.seed, 99])
    ids = mask.train_ids[rng.integers(mask.n_train, size=cfg.law_batch)]
    grid = space.grid()
    records = law_report(space, augmenters, grid_images[ids], grid[ids], grid_images)
    payload = {"config_digest": cfg.digest(), "seed": cfg.seed, "records": records}
    _write_json(out / "law_report.json", payload)
    _write_csv(
        out / "law_report.csv",
        ["factor", "law", "value"],
        [[r["factor"], r["law"], f"{r['value']:.10f}"] for r in records],
    )
    from .figures import save_law_report_figure

    save_law_report_figure(records, out / "law_report.png")
    for r in records:
        print(f"{r['factor']:>8s}  {r['law']:<16s} {r['value']:.3e}")
    return EXIT_OK


# --- argument plumbing -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file")
    common.add_argument("--seed", type=int, default=None, help="override config seed")
    common.add_argument("--out", help="output directory (default: cwd)")

    parser = argparse.ArgumentParser(
        prog="edtlab",
        description="Combination-shift toolkit: algebraic verification, "
                    "procedural data, learned augmentations, ablations.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="render the grid dataset")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("verify-algebra", parents=[common],
                       help="exhaustive monoid/action/oracle law checks")
    p.add_argument("--input", help="verify a serialized monoid/action file instead")
    p.set_defaults(func=cmd_verify_algebra)

    p = sub.add_parser("train-aug", parents=[common], help="train augmenters")
    p.add_argument("--data", required=True, help="dataset file from gen")
    p.add_argument("--split", help="override split spec, e.g. rand:0.5")
    p.set_defaults(func=cmd_train_aug)

    p = sub.add_parser("train-pred", parents=[common], help="train the predictor")
    p.add_argument("--data", required=True)
    p.add_argument("--aug", help="augmenter checkpoint (learned augmentation)")
    p.add_argument("--arm", choices=["erm", "edt", "edt-oracle"], default="edt")
    p.add_argument("--no-aug", action="store_true", help="disable augmentation use")
    p.add_argument("--split", help="override split spec")
    for key in ("l0", "l1", "l2", "l3"):
        p.add_argument(f"--{key}", type=float, default=None, help=f"{key} weight")
    p.set_defaults(func=cmd_train_pred)

    p = sub.add_parser("eval", parents=[common], help="score a predictor")
    p.add_argument("--data", required=True)
    p.add_argument("--pred", required=True, help="predictor checkpoint")
    p.add_argument("--split", help="override split spec")
    p.add_argument("--split-file", help="use a split file written by training")
    p.add_argument("--arm", help="arm label for the records")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", parents=[common], help="multi-seed arm comparison")
    p.add_argument("--arms", help="comma list, e.g. erm,edt-l0l3,edt-full,edt-oracle")
    p.add_argument("--seeds", type=int, help="number of seeds (default 5)")
    p.add_argument("--split", help="override split spec")
    p.add_argument("--jobs", type=int, default=None, help="parallel workers")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("law-report", parents=[common],
                       help="residuals of augmenters against the exact algebra")
    p.add_argument("--data", required=True)
    p.add_argument("--aug", help="augmenter checkpoint")
    p.add_argument("--oracle", action="store_true", help="report on oracle augmenters")
    p.add_argument("--split", help="override split spec")
    p.set_defaults(func=cmd_law_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MissingArtifact as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (ConfigError, SplitError, StructureError, TrainingDataError,
            NumericsError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
