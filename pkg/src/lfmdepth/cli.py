"""Command-line entry point: gen, train, infer, eval, ablate, replay.

Exit codes: 0 success, 1 runtime failure, 2 usage error (bad flags, missing paths).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import ablation, fileio, plotting
from .config import RESOLVED_NAME, ConfigError, RunConfig, parse_overrides, resolve
from .evalkit import Aggregate, evaluate, metrics_csv
from .normalize import DepthMap
from .synthdata import generate, read_dataset, write_dataset
from .trainer import Trainer, TrainingDiverged, log_csv, prepare, run_ablation, ablation_table

log = logging.getLogger("lfmdepth")


class UsageError(Exception):
    pass


def _require(path, what: str) -> Path:
    if path is None:
        raise UsageError(f"{what} is required")
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {p}")
    return p


def _checkpoint_stem(path) -> Path:
    p = Path(path)
    if p.suffix in (".bin", ".manifest"):
        p = p.with_suffix("")
    if not p.with_suffix(".manifest").exists():
        raise UsageError(f"checkpoint not found: {p}.manifest")
    return p


def _write_text(path: Path, text: str) -> None:
    fileio.atomic_write_bytes(path, text.encode("utf-8"))


def _record(cfg: RunConfig, args: argparse.Namespace, out: Path) -> None:
    """Write the resolved config plus the command that produced it."""
    data = cfg.to_dict()
    cmd = {k: v for k, v in vars(args).items() if k not in ("handler", "config", "set")}
    data["command"] = {k: (str(v) if isinstance(v, Path) else v) for k, v in cmd.items()}
    fileio.atomic_write_bytes(out / RESOLVED_NAME, (json.dumps(data, indent=2, sort_keys=True) + "\n").encode())


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    samples = generate(cfg.scene, args.count)
    write_dataset(samples, out)
    _record(cfg, args, out)
    log.info("wrote %d samples to %s", len(samples), out)
    return 0


def cmd_train(args, cfg: RunConfig) -> int:
    data_dir = _require(args.data, "--data")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    samples = read_dataset(data_dir)
    if args.resume:
        trainer = Trainer.load(_checkpoint_stem(args.resume))
        # the step target may move; everything else comes from the checkpoint
        resumed = dataclasses.replace(trainer.cfg, steps=cfg.train.steps)
        if resumed != cfg.train:
            log.warning("resuming with the checkpoint's training config; file/flag values ignored")
        trainer.cfg = cfg.train = resumed
    else:
        trainer = Trainer(cfg.train, image_size=samples[0].depth.values.shape[0])
    _record(cfg, args, out)
    data = prepare(samples, trainer.cfg)
    remaining = max(trainer.cfg.steps - trainer.step, 0)
    try:
        trainer.fit(data, steps=remaining, log_every=args.log_every,
                    checkpoint_every=args.checkpoint_every, out_dir=out)
    finally:
        log_path = out / "train_log.csv"
        prior = []
        if args.resume and log_path.exists():
            prior = log_path.read_text().splitlines()[1:]
        text = log_csv(trainer.history)
        if prior:
            head, *rows = text.splitlines()
            kept = [r for r in prior if int(float(r.split(",")[0])) <= trainer.step - len(trainer.history)]
            text = "\n".join([head, *kept, *rows]) + "\n"
        _write_text(log_path, text)
    trainer.save(out / "model")
    if trainer.history:
        plotting.loss_curves({"L_total": [[h["L_total"] for h in trainer.history]]}, out / "loss.png")
    log.info("trained to step %d; checkpoint %s", trainer.step, out / "model")
    return 0


def _images_to_infer(path: Path) -> list[tuple[str, np.ndarray]]:
    if path.is_dir() or path.name == fileio.MANIFEST_NAME:
        rows = fileio.read_manifest(path)
        return [(Path(img).name, fileio.read_pfm(img)) for img, _, _ in rows]
    img = fileio.read_pfm(path)
    if img.ndim != 3:
        raise fileio.FormatError("expected a 3-channel PF image", 0, path)
    return [(path.name, img)]


def _depth_name(image_name: str) -> str:
    if image_name.endswith(".image.pfm"):
        return image_name[: -len(".image.pfm")] + ".depth.pfm"
    return Path(image_name).stem + ".depth.pfm"


def cmd_infer(args, cfg: RunConfig) -> int:
    stem = _checkpoint_stem(args.checkpoint)
    src = _require(args.image, "--image")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trainer = Trainer.load(stem)
    cfg.train = trainer.cfg
    _record(cfg, args, out)
    items = _images_to_infer(src)
    images = np.stack([img for _, img in items])
    preds = trainer.infer(images, runs=cfg.infer.runs, seed=cfg.infer.seed, steps=cfg.infer.ddim_steps)
    for (name, _), pred in zip(items, preds):
        dname = _depth_name(name)
        fileio.write_pfm(out / dname, pred.astype(np.float32))
        fileio.write_pgm(out / (dname[: -len(".pfm")] + ".preview.pgm"),
                         fileio.to_preview(pred, -1.0, 1.0, 255), 255)
    log.info("wrote %d depth maps to %s", len(items), out)
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    pred_dir = _require(args.pred_dir, "--pred-dir")
    gt = _require(args.gt_dir, "--gt-dir")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _record(cfg, args, out)
    agg = Aggregate()
    for _, depth_path, _ in fileio.read_manifest(gt):
        name = Path(depth_path).name
        pred_path = pred_dir / name
        if not pred_path.exists():
            raise UsageError(f"missing prediction {pred_path}")
        gt_map = DepthMap(fileio.read_pfm(depth_path))
        pred = fileio.read_pfm(pred_path)
        agg.add(evaluate(DepthMap(pred, units="normalized"), gt_map, name=name))
    summary = agg.summary()
    _write_text(out / "metrics.csv", metrics_csv(agg.reports, summary))
    plotting.band_bars({"ALL": summary.band_delta1}, out / "bands.png")
    log.info("AbsRel %.4f delta1 %.4f over %d images", summary.absrel, summary.delta1, len(agg.reports))
    return 0


def cmd_ablate(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _record(cfg, args, out)
    configs = ablation.suite_configs(args.suite, cfg.train)
    train = generate(cfg.scene, args.train_count)
    eval_spec = type(cfg.scene)(**{**cfg.scene.__dict__, "seed": cfg.scene.seed + 1})
    eval_set = generate(eval_spec, args.eval_count)
    results = run_ablation(configs, train, eval_set, args.seeds, steps=cfg.train.steps,
                           runs=cfg.infer.runs, ddim_steps=cfg.infer.ddim_steps)
    _write_text(out / f"{args.suite}.csv", ablation_table(results))
    _write_text(out / f"{args.suite}_curves.csv", ablation.loss_curves_csv(results))
    _write_text(out / f"{args.suite}_summary.txt", ablation.summary_text(args.suite, results))
    curves: dict[str, list] = {}
    bands: dict[str, list] = {}
    for res in results:
        curves.setdefault(res.config, []).append([h["L_total"] for h in res.history])
        bands.setdefault(res.config, []).append(res.summary.band_delta1)
    plotting.loss_curves(curves, out / f"{args.suite}_loss.png", title=f"{args.suite} suite")
    mean_bands = {k: [None if any(v[b] is None for v in vs) else float(np.mean([v[b] for v in vs]))
                      for b in range(4)] for k, vs in bands.items()}
    plotting.band_bars(mean_bands, out / f"{args.suite}_bands.png", title=f"{args.suite} suite")
    print(ablation.summary_text(args.suite, results), end="")
    return 0


def cmd_replay(args, _cfg) -> int:
    path = _require(args.resolved, "resolved config")
    data = json.loads(path.read_text(encoding="utf-8"))
    command = data.pop("command", None)
    if not command or command.get("command") not in HANDLERS:
        raise UsageError(f"{path} does not record a command")
    ns = argparse.Namespace(**command)
    if args.out is not None:
        ns.out = args.out
    cfg = resolve(overrides=data)
    return HANDLERS[command["command"]](ns, cfg)


HANDLERS = {"gen": cmd_gen, "train": cmd_train, "infer": cmd_infer, "eval": cmd_eval, "ablate": cmd_ablate}


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lfmdepth", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", type=Path, help="JSON run config (sections: train, scene, infer)")
        sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value; may repeat")
        sp.add_argument("--out", type=Path, required=True)

    g = sub.add_parser("gen", help="write a synthetic dataset and manifest")
    common(g)
    g.add_argument("--spec", type=Path, help="JSON scene spec (same keys as the config's scene section)")
    g.add_argument("--count", type=int, default=256)
    g.add_argument("--seed", type=int)

    t = sub.add_parser("train", help="train a model on a dataset directory")
    common(t)
    t.add_argument("--data", type=Path, required=True)
    t.add_argument("--steps", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--resume", type=Path, help="checkpoint stem to continue from")
    t.add_argument("--checkpoint-every", type=int, default=0)
    t.add_argument("--log-every", type=int, default=50)

    i = sub.add_parser("infer", help="ensemble inference on an image or dataset")
    common(i)
    i.add_argument("--checkpoint", type=Path, required=True)
    i.add_argument("--image", type=Path, required=True, help="3-channel PF image or dataset directory")
    i.add_argument("--runs", type=int)
    i.add_argument("--seed", type=int)
    i.add_argument("--ddim-steps", type=int)

    e = sub.add_parser("eval", help="align predictions and write metrics CSV")
    common(e)
    e.add_argument("--pred-dir", type=Path, required=True)
    e.add_argument("--gt-dir", type=Path, required=True)

    a = sub.add_parser("ablate", help="run an ablation suite on synthetic data")
    common(a)
    a.add_argument("--suite", choices=ablation.SUITES, required=True)
    a.add_argument("--seeds", type=_int_list, default=[0, 1, 2])
    a.add_argument("--steps", type=int)
    a.add_argument("--train-count", type=int, default=256)
    a.add_argument("--eval-count", type=int, default=64)
    a.add_argument("--runs", type=int)
    a.add_argument("--ddim-steps", type=int)

    r = sub.add_parser("replay", help="rerun the command recorded in a resolved config")
    r.add_argument("resolved", type=Path)
    r.add_argument("--out", type=Path)
    return p


def _flag_overrides(args) -> dict[str, dict]:
    """Dedicated flags take precedence over --set and the config file."""
    over: dict[str, dict] = {}

    def put(section, key, value):
        if value is not None:
            over.setdefault(section, {})[key] = value

    cmd = args.command
    if cmd == "gen":
        put("scene", "seed", args.seed)
    if cmd in ("train", "ablate"):
        put("train", "steps", args.steps)
    if cmd == "train":
        put("train", "seed", args.seed)
    if cmd in ("infer", "ablate"):
        put("infer", "runs", args.runs)
        put("infer", "ddim_steps", args.ddim_steps)
    if cmd == "infer":
        put("infer", "seed", args.seed)
    return over


def _load_config(args) -> RunConfig:
    overrides: dict[str, dict] = {}
    if getattr(args, "spec", None) is not None:
        spec = json.loads(_require(args.spec, "--spec").read_text(encoding="utf-8"))
        overrides["scene"] = dict(spec)
    for src in (parse_overrides(args.set), _flag_overrides(args)):
        for section, values in src.items():
            overrides.setdefault(section, {}).update(values)
    cfg_path = _require(args.config, "--config") if args.config is not None else None
    return resolve(cfg_path, overrides)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        if args.command == "replay":
            return cmd_replay(args, None)
        cfg = _load_config(args)
        return HANDLERS[args.command](args, cfg)
    except (UsageError, ConfigError, KeyError) as err:
        print(f"lfmdepth {args.command}: error: {err}", file=sys.stderr)
        return 2
    except (TrainingDiverged, fileio.FormatError, ValueError, OSError) as err:
        print(f"lfmdepth {args.command}: failed: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
