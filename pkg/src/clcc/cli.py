"""Command-line entry point: ``python -m clcc <command> ...``.

Commands: synth, train, eval, augment, report, ingest.  Errors are reported as
one line ``error: <Kind>: <message>`` on stderr with exit status 1; usage
errors exit with status 2.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import io_format
from .augment import FULL_AUG, WB_AUG, IlluminantsTooClose, build_quadruple
from .color_math import normalized
from .evaluate import COLUMNS, BaselineMethod, cluster_robustness, compute_metrics, cross_validate
from .model import ModelConfig, ModelParams, predict
from .scene_synth import SensorModel, synth_dataset
from .training import Learner, TrainConfig, network_input, train

LEARNED = {"baseline": "baseline", "clcc-wb": "clcc_wb", "clcc-full": "clcc_full"}


def read_config(path) -> TrainConfig:
    """Flat ``key = value`` file mirroring TrainConfig fields; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        values[key] = [v.strip() for v in value.split(",")] if key == "channels" else value
    return TrainConfig.from_dict(values)


def write_config(path, cfg: TrainConfig) -> None:
    lines = []
    for k, v in cfg.to_dict().items():
        lines.append(f"{k} = {', '.join(map(str, v)) if isinstance(v, list) else v}")
    Path(path).write_text("\n".join(lines) + "\n")


def _fmt(x: float) -> str:
    return repr(float(x))


def cmd_synth(args) -> int:
    samples, meta = synth_dataset(args.scenes, args.illums, SensorModel(), args.seed,
                                  mean_neutral=args.mean_neutral, white_patch=args.white_patch,
                                  shading=args.shading, n_materials=args.materials)
    io_format.write_dataset(args.out, samples, meta)
    print(f"wrote {len(samples)} images to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = read_config(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        cfg = TrainConfig.from_dict({**cfg.to_dict(), "seed": args.seed})
    samples, _ = io_format.read_dataset(args.data)
    params, history = train(samples, cfg, LEARNED[args.mode])
    config = {"mode": args.mode, "train": cfg.to_dict(), "model": params.config.to_dict()}
    io_format.write_checkpoint(args.out, params, config)
    log_path = Path(args.log) if args.log else Path(str(args.out) + ".log.csv")
    keys = sorted({k for h in history for k in h}, key=lambda k: (k != "epoch", k))
    with open(log_path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(keys)
        for h in history:
            w.writerow([h.get(k, "") if k == "epoch" else _fmt(h[k]) if k in h else "" for k in keys])
    print(f"trained {args.mode} for {cfg.epochs} epochs; checkpoint {args.out}")
    return 0


class CheckpointMethod:
    """Evaluate a saved model on every sample (no training; not a CV protocol)."""

    learns = False

    def __init__(self, path):
        tensors, config = io_format.read_checkpoint(path)
        model_cfg = ModelConfig.from_dict(config["model"])
        self.params = ModelParams(tensors, model_cfg)
        self.crop = model_cfg.crop

    def fit(self, train_samples=None):
        return lambda samples: predict(self.params, np.stack([network_input(s, self.crop) for s in samples]))


def _method(name, cfg):
    if name in LEARNED:
        return Learner(cfg, LEARNED[name])
    return BaselineMethod(name)


def _metric_rows(method, fold, cluster, report):
    return [method, fold, cluster, report.n, *(_fmt(v) for v in report.row())]


def cmd_eval(args) -> int:
    samples, _ = io_format.read_dataset(args.data)
    cfg = read_config(args.config) if args.config else TrainConfig()
    rows, per_sample, summary = [], [], {}
    for name in args.method:
        if name == "checkpoint":
            if not args.checkpoint:
                raise ValueError("--method checkpoint needs --checkpoint")
            method = CheckpointMethod(args.checkpoint)
        else:
            method = _method(name, TrainConfig.from_dict({**cfg.to_dict(), "seed": args.seed}))
        res = cross_validate(samples, method, args.folds, args.seed)
        for k, rep in enumerate(res.fold_reports):
            rows.append(_metric_rows(name, k, "all", rep))
        rows.append(_metric_rows(name, "pooled", "all", res.pooled))
        if args.clusters:
            cl = cluster_robustness(samples, res.errors, args.clusters, args.seed)
            for c, rep in enumerate(cl.reports):
                rows.append(_metric_rows(name, "pooled", c, rep))
        fold_of = np.empty(len(samples), dtype=int)
        for k, f in enumerate(res.folds):
            fold_of[f] = k
        for i, s in enumerate(samples):
            gt = normalized(s.illuminant)
            per_sample.append([name, i, s.scene_id, s.illuminant_id, int(fold_of[i]),
                               *(_fmt(v) for v in gt), *(_fmt(v) for v in res.estimates[i]),
                               _fmt(res.errors[i])])
        summary[name] = res.pooled.as_dict()
        print(name, " ".join(f"{c}={v:.4f}" for c, v in zip(COLUMNS, res.pooled.row())))

    with open(args.csv, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["method", "fold", "cluster", "n", *COLUMNS])
        w.writerows(rows)
    if args.errors:
        with open(args.errors, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["method", "index", "scene_id", "illuminant_id", "fold",
                        "gt_r", "gt_g", "gt_b", "est_r", "est_g", "est_b", "error"])
            w.writerows(per_sample)
    json_path = Path(args.json) if args.json else Path(args.csv).with_suffix(".json")
    json_path.write_text(json.dumps({"folds": args.folds, "seed": args.seed, "methods": summary},
                                    indent=1, sort_keys=True) + "\n")
    return 0


def cmd_report(args) -> int:
    by_method = {}
    with open(args.errors, newline="") as f:
        for r in csv.DictReader(f):
            by_method.setdefault(r["method"], []).append(r)
    rows, summary = [], {}
    for name, recs in by_method.items():
        gts = np.array([[float(r["gt_r"]), float(r["gt_g"]), float(r["gt_b"])] for r in recs])
        errs = np.array([float(r["error"]) for r in recs])
        overall = compute_metrics(errs)
        rows.append(_metric_rows(name, "pooled", "all", overall))
        cl = cluster_robustness(gts, errs, args.clusters, args.seed)
        clusters = []
        for c, rep in enumerate(cl.reports):
            rows.append(_metric_rows(name, "pooled", c, rep))
            clusters.append({"centroid": [float(v) for v in cl.centroids[c]], **rep.as_dict()})
        summary[name] = {"all": overall.as_dict(), "clusters": clusters}
    with open(args.csv, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["method", "fold", "cluster", "n", *COLUMNS])
        w.writerows(rows)
    json_path = Path(args.json) if args.json else Path(args.csv).with_suffix(".json")
    json_path.write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    return 0


def cmd_augment(args) -> int:
    samples, _ = io_format.read_dataset(args.data)
    mode = {"full": FULL_AUG, "wb": WB_AUG}[args.mode]
    cfg = TrainConfig()
    rng = np.random.default_rng(args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for q_idx in range(args.count):
        i = int(rng.integers(len(samples)))
        for _ in range(100):
            j = int(rng.integers(len(samples)))
            if samples[j].scene_id == samples[i].scene_id:
                continue
            try:
                q = build_quadruple(samples[i], samples[j], mode, cfg.mix_config(),
                                    cfg.perturb_config(), rng)
                break
            except IlluminantsTooClose:
                continue
        else:
            raise RuntimeError(f"no contrastive partner found for sample {i}")
        files = {}
        for view in q.VIEWS:
            name = f"quad_{q_idx:04d}_{view}.clccimg"
            io_format.write_image(out / name, getattr(q, view))
            files[view] = name
        records.append({"files": files, "anchor_illuminant": q.anchor_illuminant.tolist(),
                        "novel_illuminant": q.novel_illuminant.tolist(), **q.provenance})
    (out / "quadruples.json").write_text(json.dumps({"seed": args.seed, "quadruples": records},
                                                    indent=1, sort_keys=True) + "\n")
    print(f"wrote {args.count} quadruples to {out}")
    return 0


INGEST_HELP = """\
Convert externally prepared linear raw images into the dataset layout.

Input is a JSON file holding a list of records:
  {"file": "<path to .npy HxWx3 float array, black-level subtracted, linear>",
   "scene_id": int, "illuminant_id": int,
   "illuminant": [r, g, b],          # measured from the gray patches
   "checker": [[r, g, b] x 24],      # patch colors, neutral ramp last (18..23)
   "checker_region": [y0, x0, h, w]} # pixels to hide from estimators
Decoding camera raw files, demosaicing and checker detection are not done here.
"""


def cmd_ingest(args) -> int:
    from .scene_synth import LabeledImage

    records = json.loads(Path(args.labels).read_text())
    base = Path(args.labels).parent
    samples = []
    for r in records:
        img = np.load(base / r["file"]).astype(np.float32)
        samples.append(LabeledImage(img, np.asarray(r["illuminant"], float), np.asarray(r["checker"], float),
                                    int(r["scene_id"]), int(r["illuminant_id"]),
                                    tuple(int(v) for v in r["checker_region"])))
    io_format.write_dataset(args.out, samples, {"source": "ingest"})
    print(f"wrote {len(samples)} images to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="clcc", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic labeled dataset")
    p.add_argument("--scenes", type=int, required=True)
    p.add_argument("--illums", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--mean-neutral", action="store_true", help="scenes average to a neutral reflectance")
    p.add_argument("--white-patch", action="store_true", help="add one unit-reflectance patch")
    p.add_argument("--shading", type=float, default=0.0)
    p.add_argument("--materials", type=int, default=0,
                   help="draw scene surfaces from a shared library of this many materials (0: fresh per scene)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train an estimator on a dataset")
    p.add_argument("--mode", choices=sorted(LEARNED), required=True)
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--log")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="cross-validated angular-error metrics")
    p.add_argument("--method", action="append", required=True,
                   help="gray-world, white-patch, shades-of-gray, gray-edge, baseline, clcc-wb, "
                        "clcc-full or checkpoint (repeatable)")
    p.add_argument("--data", required=True)
    p.add_argument("--folds", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", required=True)
    p.add_argument("--json")
    p.add_argument("--errors", help="also write per-sample errors here")
    p.add_argument("--clusters", type=int, default=0)
    p.add_argument("--config")
    p.add_argument("--checkpoint")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("augment", help="dump contrastive quadruples for inspection")
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=["full", "wb"], default="full")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("report", help="per-cluster metrics from a per-sample errors file")
    p.add_argument("--errors", required=True)
    p.add_argument("--clusters", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", required=True)
    p.add_argument("--json")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("ingest", help="import prepared linear images", description=INGEST_HELP,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # one-line, machine-parseable failure
        msg = str(exc).replace("\n", " ")
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
