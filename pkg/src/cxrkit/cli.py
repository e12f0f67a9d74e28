"""Operator command line: classify, explain, evaluate, split, preprocess,
fixture, serve.

Exit codes: 0 success; 2 missing or unreadable input file; 3 weight-file
format or integrity error; 4 manifest/data error (duplicates, empty
manifest, unreadable image, bad stage); 5 invalid flag or config value.
"""

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import explain as ex
from .augment import AugmentConfig
from .errors import (
    ConfigError,
    CxrError,
    DecodeError,
    FormatError,
    IntegrityError,
    ManifestError,
    UnsupportedFormat,
)
from .evalmetrics import (
    CLASS_LABELS,
    load_manifest,
    macro_metrics,
    save_manifest,
    stratified_split,
)
from .imagecore import (
    ClaheParams,
    NormalizationStats,
    center_crop,
    channel_normalize,
    clahe,
    decode_image,
    inference_preprocess,
    minmax_scale,
    replicate_channels,
    resize_shorter_side,
)
from .fixtures import write_fixture
from .models import BUILDERS
from .nn import WeightStore, graph_execute, save_weights, softmax
from .service import ServiceSettings, create_app_from_path, load_model

EXIT_FILE = 2
EXIT_WEIGHTS = 3
EXIT_DATA = 4
EXIT_USAGE = 5

PREPROCESS_STAGES = {
    1: "clahe",
    2: "resize256",
    3: "crop224",
    4: "minmax",
    5: "replicate",
    6: "normalize",
}


@dataclass
class CliConfig:
    clahe: ClaheParams = field(default_factory=ClaheParams)
    normalization: NormalizationStats = field(default_factory=NormalizationStats)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    service: ServiceSettings = field(default_factory=ServiceSettings)
    model_path: str = ""


def load_config(path=None) -> CliConfig:
    """Parse the TOML config; every range constraint is validated up front."""
    cfg = CliConfig()
    if path is None:
        return cfg
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from exc
    try:
        if "clahe" in data:
            c = data["clahe"]
            cfg.clahe = ClaheParams(
                clip_limit=c.get("clip_limit", 2.0),
                grid=tuple(c.get("grid", (8, 8))),
                bins=c.get("bins", 256),
            )
        if "normalize" in data:
            n = data["normalize"]
            cfg.normalization = NormalizationStats(
                mean=tuple(n.get("mean", NormalizationStats().mean)),
                std=tuple(n.get("std", NormalizationStats().std)),
            )
        if "augment" in data:
            a = data["augment"]
            cfg.augment = AugmentConfig(
                crop_area_ratio=tuple(a.get("crop_area_ratio", (0.4, 0.8))),
                out_size=a.get("out_size", 224),
                perspective_distortion=a.get("perspective_distortion", 0.4),
                perspective_prob=a.get("perspective_prob", 0.6),
                rotation_degrees=tuple(a.get("rotation_degrees", (-45.0, 45.0))),
            )
        if "service" in data:
            s = data["service"]
            cfg.service = ServiceSettings(
                port=s.get("port", 8080),
                max_body_mb=s.get("max_body_mb", 20),
                scorecam_batch=s.get("scorecam_batch", 16),
                cors_origins=tuple(s.get("cors_origins", ("*",))),
                clahe=cfg.clahe,
                normalization=cfg.normalization,
            )
            cfg.model_path = s.get("model_path", "")
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"config value out of range: {exc}") from exc
    cfg.service.clahe = cfg.clahe
    cfg.service.normalization = cfg.normalization
    return cfg


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        print(f"error: cannot read {path}: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_FILE) from exc


def _load_model_or_exit(path):
    if not Path(path).exists():
        print(f"error: weight file {path} does not exist", file=sys.stderr)
        raise SystemExit(EXIT_FILE)
    try:
        return load_model(path)
    except (FormatError, IntegrityError, CxrError) as exc:
        print(f"error: bad weight file {path}: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_WEIGHTS) from exc


def _decode_or_exit(path):
    data = _read_bytes(path)
    try:
        return decode_image(data)
    except (DecodeError, UnsupportedFormat) as exc:
        print(f"error: cannot decode {path}: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_DATA) from exc


def _classify(model, gray, cfg):
    tensor = inference_preprocess(gray, cfg.clahe, cfg.normalization)
    logits, _ = graph_execute(model.graph, model.store, tensor, capture=())
    return tensor, softmax(logits)


def cmd_classify(args) -> int:
    cfg = load_config(args.config)
    model = _load_model_or_exit(args.model)
    gray = _decode_or_exit(args.image)
    _, probs = _classify(model, gray, cfg)
    labels = model.labels
    predicted = labels[int(np.argmax(probs))]
    if args.json:
        payload = {
            "probabilities": {label: float(probs[i]) for i, label in enumerate(labels)},
            "predicted": predicted,
            "model": model.store.architecture,
            "preprocessing": {
                "clahe_clip": cfg.clahe.clip_limit,
                "clahe_grid": list(cfg.clahe.grid),
                "normalize_mean": list(cfg.normalization.mean),
                "normalize_std": list(cfg.normalization.std),
            },
        }
        print(json.dumps(payload, indent=2))
    else:
        for i, label in enumerate(labels):
            print(f"{label:12s} {probs[i]:.6f}")
        print(f"predicted: {predicted}")
    return 0


def cmd_explain(args) -> int:
    cfg = load_config(args.config)
    model = _load_model_or_exit(args.model)
    gray = _decode_or_exit(args.image)
    tensor, probs = _classify(model, gray, cfg)
    target = int(np.argmax(probs)) if args.target is None else model.labels.index(args.target)
    try:
        layer = args.layer or ex.gap_input_layer(model.graph)
        if args.method == "gap_head":
            weights = ex.gap_head_weights(model.graph, model.store, target)
        else:
            weights = ex.score_cam_weights(model.graph, model.store, tensor, layer,
                                           target, top_k=args.top_k)
    except CxrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE) from exc
    _, acts = graph_execute(model.graph, model.store, tensor, capture={weights.layer_id})
    stack = ex.ActivationStack(layer_id=weights.layer_id, maps=acts[weights.layer_id][0])
    heat = ex.render_heatmap(ex.cam_combine(stack, weights), gray.shape[0], gray.shape[1])
    composite = ex.overlay(heat, gray, args.alpha)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "heatmap.png").write_bytes(ex.heatmap_to_png(heat))
    (out / "overlay.png").write_bytes(ex.rgb_to_png(composite))
    print(f"wrote {out / 'heatmap.png'} and {out / 'overlay.png'}")
    print(f"target: {model.labels[target]}  method: {weights.method}  layer: {weights.layer_id}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config)
    model = _load_model_or_exit(args.model)
    try:
        entries = load_manifest(args.manifest)
    except OSError as exc:
        print(f"error: cannot read manifest: {exc}", file=sys.stderr)
        return EXIT_FILE
    except ManifestError as exc:
        print(f"error: bad manifest: {exc}", file=sys.stderr)
        return EXIT_DATA
    if not entries:
        print("error: empty manifest", file=sys.stderr)
        return EXIT_DATA

    def run_one(entry):
        try:
            gray = decode_image(Path(entry.path).read_bytes())
        except (OSError, DecodeError, UnsupportedFormat) as exc:
            raise ManifestError(f"{entry.path}: {exc}") from exc
        _, probs = _classify(model, gray, cfg)
        return probs

    try:
        with ThreadPoolExecutor(max_workers=args.workers) as pool:
            rows = list(pool.map(run_one, entries))
    except ManifestError as exc:
        print(f"error: unreadable image: {exc}", file=sys.stderr)
        return EXIT_DATA
    probabilities = np.stack(rows)
    labels = np.array([CLASS_LABELS.index(e.label) for e in entries])
    report = macro_metrics(probabilities, labels)

    header = f"{'Class':<12} {'Acc.':>8} {'Recall':>8} {'Precision':>10} {'Auc':>8} {'F1 score':>9}"
    print(header)
    for label in CLASS_LABELS:
        m = report.per_class[label]
        print(f"{label:<12} {m.accuracy:>8.4f} {m.recall:>8.4f} {m.precision:>10.4f} "
              f"{m.auc:>8.4f} {m.f1:>9.4f}")
    mm = report.macro
    print(f"{'macro':<12} {mm['accuracy']:>8.4f} {mm['recall']:>8.4f} {mm['precision']:>10.4f} "
          f"{mm['auc']:>8.4f} {mm['f1']:>9.4f}")
    print(f"overall top-1 accuracy: {report.overall_accuracy:.4f} over {report.samples} samples")
    if args.out:
        Path(args.out).write_text(report.to_json())
        print(f"report written to {args.out}")
    return 0


def cmd_split(args) -> int:
    try:
        entries = load_manifest(args.manifest)
    except OSError as exc:
        print(f"error: cannot read manifest: {exc}", file=sys.stderr)
        return EXIT_FILE
    except ManifestError as exc:
        print(f"error: bad manifest: {exc}", file=sys.stderr)
        return EXIT_DATA
    train, val, test = stratified_split(entries, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_manifest(train, out / "train.jsonl")
    save_manifest(val, out / "val.jsonl")
    save_manifest(test, out / "test.jsonl")

    def counts(rows):
        return [sum(1 for e in rows if e.label == label) for label in CLASS_LABELS]

    print(f"{'':<12}" + "".join(f"{label:>12}" for label in CLASS_LABELS) + f"{'total':>12}")
    for name, rows in (("train", train), ("val", val), ("test", test)):
        c = counts(rows)
        print(f"{name:<12}" + "".join(f"{v:>12}" for v in c) + f"{sum(c):>12}")
    c = counts(entries)
    print(f"{'total':<12}" + "".join(f"{v:>12}" for v in c) + f"{sum(c):>12}")
    print(f"manifests written to {out}", file=sys.stderr)
    return 0


def cmd_preprocess(args) -> int:
    cfg = load_config(args.config)
    gray = _decode_or_exit(args.image)
    if args.stage not in PREPROCESS_STAGES:
        print(f"error: stage must be 1..6, got {args.stage}", file=sys.stderr)
        return EXIT_DATA
    t = clahe(gray, cfg.clahe).astype(np.float32)[None, :, :]
    if args.stage >= 2:
        t = resize_shorter_side(t, 256)
    if args.stage >= 3:
        t = center_crop(t, 224, 224)
    if args.stage >= 4:
        t = minmax_scale(t)
    if args.stage >= 5:
        t = replicate_channels(t)
    if args.stage >= 6:
        t = channel_normalize(t, cfg.normalization)
    name = f"stage{args.stage}_{PREPROCESS_STAGES[args.stage]}"
    save_weights(WeightStore(tensors={name: t}, architecture="preprocess-dump"), args.out)
    print(f"wrote tensor {name} with shape {tuple(t.shape)} to {args.out}")
    return 0


def cmd_fixture(args) -> int:
    if args.arch not in BUILDERS:
        print(f"error: unknown architecture {args.arch}", file=sys.stderr)
        return EXIT_USAGE
    write_fixture(args.arch, args.seed, args.out)
    print(f"wrote {args.arch} fixture (seed {args.seed}) to {args.out}")
    return 0


def cmd_serve(args) -> int:
    import os

    import uvicorn

    cfg = load_config(args.config)
    model_path = args.model or os.environ.get("CXR_MODEL_PATH") or cfg.model_path
    if not model_path:
        print("error: no model path (flag --model, CXR_MODEL_PATH, or config)", file=sys.stderr)
        return EXIT_USAGE
    settings = cfg.service
    settings.port = int(args.port or os.environ.get("CXR_PORT") or settings.port)
    settings.max_body_mb = int(os.environ.get("CXR_MAX_BODY_MB") or settings.max_body_mb)
    settings.scorecam_batch = int(os.environ.get("CXR_SCORECAM_BATCH") or settings.scorecam_batch)
    app = create_app_from_path(model_path, settings)
    uvicorn.run(app, host=args.host, port=settings.port, log_level="info")
    return 0


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with the documented invalid-arguments code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="cxrkit",
        description="Explainable chest X-ray classification toolkit",
        epilog="exit codes: 0 ok, 2 file error, 3 weight-format error, "
               "4 manifest/data error, 5 invalid arguments or config",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("classify", help="classify one image")
    p.add_argument("model")
    p.add_argument("image")
    p.add_argument("--json", action="store_true", help="emit the ClassifyResponse JSON")
    p.add_argument("--config")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("explain", help="write heatmap and overlay PNGs")
    p.add_argument("model")
    p.add_argument("image")
    p.add_argument("--method", choices=("gap_head", "score_cam"), default="score_cam")
    p.add_argument("--layer", help="capture layer (default: tensor entering GAP)")
    p.add_argument("--top-k", type=int, dest="top_k")
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--target", choices=CLASS_LABELS)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("evaluate", help="evaluate a model over a manifest")
    p.add_argument("model")
    p.add_argument("manifest")
    p.add_argument("--out", help="write report JSON here")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--config")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("split", help="stratified train/val/test split")
    p.add_argument("manifest")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("preprocess", help="dump the tensor after stage N")
    p.add_argument("image")
    p.add_argument("--stage", type=int, required=True,
                   help="1=clahe 2=resize256 3=crop224 4=minmax 5=replicate 6=normalize")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("fixture", help="write a deterministic random-weight CXRW")
    p.add_argument("--arch", required=True, choices=sorted(BUILDERS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fixture)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--model")
    p.add_argument("--port", type=int)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--config")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SystemExit:
        raise
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, IntegrityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_WEIGHTS
    except CxrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
