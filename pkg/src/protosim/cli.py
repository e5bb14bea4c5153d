"""Command-line pipeline: train -> index -> compare -> probe/ablate/viz/serve.

Exit codes: 0 success, 1 usage or input-validation error, 2 runtime failure.
Config files are flat key=value lines (fields of the train/probe configs;
pair values comma-separated); command-line --set overrides file values.
"""

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import torch


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's default 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


class CliError(Exception):
    """Input validation problem: reported and exits 1 before any work."""


def _parse_dataset_specs(specs: list[str]):
    from .data import DatasetDescriptor

    datasets = []
    for spec in specs:
        for part in spec.split(","):
            dataset_id, sep, root = part.partition("=")
            if not sep:
                raise CliError(f"dataset spec {part!r} must look like id=path")
            root_path = Path(root)
            if not root_path.is_dir():
                raise CliError(f"dataset path {root_path} does not exist")
            labels = root_path / "labels.csv"
            datasets.append(DatasetDescriptor(
                dataset_id.strip(), dataset_id.strip(), root_path,
                labels if labels.is_file() else None))
    if not datasets:
        raise CliError("at least one dataset is required")
    return datasets


def _coerce(raw: str, target_type):
    if target_type is bool:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise CliError(f"expected a boolean, got {raw!r}")
    if target_type is int:
        return int(raw)
    if target_type is float:
        return float(raw)
    if target_type is str:
        return raw
    # tuples like 0.4,1.0 or 32,32
    values = [v.strip() for v in raw.split(",")]
    return tuple(float(v) if "." in v or "e" in v.lower() else int(v) for v in values)


def _read_config_file(path: Path) -> dict:
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise CliError(f"{path}:{lineno}: expected key=value, got {line!r}")
        values[key.strip()] = value.strip()
    return values


def _build_config(config_cls, file_path, overrides: list[str]):
    from .augment import AugmentConfig

    raw = _read_config_file(file_path) if file_path else {}
    for item in overrides or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise CliError(f"--set expects key=value, got {item!r}")
        raw[key.strip()] = value.strip()

    main_fields = {f.name: f for f in dataclasses.fields(config_cls)}
    augment_fields = {f.name: f for f in dataclasses.fields(AugmentConfig)}
    main_kwargs, augment_kwargs = {}, {}
    for key, value in raw.items():
        if key in main_fields and key != "augment":
            field = main_fields[key]
            target = field.type if isinstance(field.type, type) else _annotation_type(field)
            main_kwargs[key] = _coerce(value, target)
        elif key in augment_fields:
            augment_kwargs[key] = _coerce(value, _annotation_type(augment_fields[key]))
        else:
            raise CliError(f"unknown config key {key!r}")
    try:
        if "augment" in main_fields:
            return config_cls(augment=AugmentConfig(**augment_kwargs), **main_kwargs)
        if augment_kwargs:
            raise CliError(f"augment keys not valid here: {sorted(augment_kwargs)}")
        return config_cls(**main_kwargs)
    except (TypeError, ValueError) as exc:
        raise CliError(str(exc))


def _annotation_type(field):
    text = field.type if isinstance(field.type, str) else getattr(field.type, "__name__", "")
    if "int" == text or text.startswith("int"):
        return int
    if text.startswith("float"):
        return float
    if text.startswith("bool"):
        return bool
    if text.startswith("str"):
        return str
    return tuple


def cmd_train(args) -> int:
    from .backbone import load_pretrained
    from .config import TrainConfig
    from .training import train

    datasets = _parse_dataset_specs(args.datasets)
    config = _build_config(TrainConfig, args.config, args.set)
    handle = load_pretrained(args.backbone)
    out_dir = Path(args.out)

    def log(entry):
        print(f"epoch {entry['epoch']}: loss={entry['loss']:.4f} "
              f"cos={entry['avg_cosine_sim']:.4f} mode={entry['mode']}")

    train(datasets, config, handle, out_dir=out_dir, log_fn=log)
    print(f"checkpoint written to {out_dir / 'checkpoint.pt'}")
    return 0


def cmd_index(args) -> int:
    from .checkpoint import load_checkpoint, sha256_file
    from .indexing import build_index, index_dataset, save_index

    datasets = _parse_dataset_specs(args.dataset)
    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        raise CliError(f"checkpoint {ckpt} does not exist")
    bundle = load_checkpoint(ckpt)
    records = []
    for descriptor in datasets:
        records += index_dataset(
            bundle, descriptor, batch_size=args.batch_size,
            progress=lambda done, total: print(f"{done}/{total}", flush=True))
    index = build_index(records, bundle.num_prototypes, bundle.num_patches,
                        datasets=datasets, checkpoint_hash=sha256_file(ckpt))
    save_index(index, Path(args.out))
    print(f"index with {index.num_images} images written to {args.out}")
    return 0


def cmd_compare(args) -> int:
    from .analytics import compare_report
    from .checkpoint import load_checkpoint
    from .indexing import load_index
    from .report_html import write_html_report

    index = load_index(Path(args.index))
    bundle = load_checkpoint(Path(args.checkpoint))
    report = compare_report(index, bundle.bank.numpy(), threshold=args.threshold,
                            min_occurrences=args.min_occurrences)
    if report.mode == "summarisation":
        print("warning: single-dataset index; specificity omitted "
              "(summarisation mode)", file=sys.stderr)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(
        json.dumps(report.to_json(), indent=2, sort_keys=True))
    roots = {d.dataset_id: d.root for d in index.datasets}
    write_html_report(report, out_dir, roots)
    print(f"report written to {out_dir / 'report.json'}")
    return 0


def cmd_probe(args) -> int:
    from .checkpoint import atomic_torch_save, load_checkpoint
    from .config import ProbeConfig
    from .data import DatasetDescriptor, load_labels
    from .probe import extract_features, train_probe

    config = _build_config(ProbeConfig, args.config, args.set)
    datasets = _parse_dataset_specs([args.dataset])
    labels_path = Path(args.labels)
    if not labels_path.is_file():
        raise CliError(f"label file {labels_path} does not exist")
    labels = load_labels(labels_path)
    bundle = load_checkpoint(Path(args.checkpoint))
    features, names, _ = extract_features(bundle, datasets[0], labels)
    result = train_probe(features, names, config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = result.to_payload()
    payload["dataset"] = datasets[0].to_json()
    payload["labels_path"] = str(labels_path)
    atomic_torch_save(payload, out_dir / "probe.pt")
    (out_dir / "probe.json").write_text(json.dumps({
        "config": config.to_dict(),
        "overall_accuracy": result.overall_accuracy,
        "per_class": [{"class": c, "accuracy": result.per_class_accuracy.get(c)}
                      for c in result.classes],
        "ablation": [],
    }, indent=2, sort_keys=True))
    print(f"probe accuracy {result.overall_accuracy:.4f}; written to {out_dir}")
    return 0


def cmd_ablate(args) -> int:
    from .analytics import semantic_alignment
    from .checkpoint import load_checkpoint
    from .data import DatasetDescriptor, load_labels
    from .indexing import build_index, index_dataset
    from .probe import ProbeResult, zero_prototype_ablation

    probe_path = Path(args.probe)
    if not probe_path.is_file():
        raise CliError(f"probe artifact {probe_path} does not exist")
    payload = torch.load(probe_path, map_location="cpu", weights_only=False)
    probe = ProbeResult.from_payload(payload)
    dataset = DatasetDescriptor.from_json(payload["dataset"])
    labels = load_labels(Path(payload["labels_path"]))
    bundle = load_checkpoint(Path(args.checkpoint))

    records = index_dataset(bundle, dataset)
    index = build_index(records, bundle.num_prototypes, bundle.num_patches)
    alignment = semantic_alignment(index, labels, dataset.dataset_id)

    selector = args.classes
    ranked = sorted(
        alignment.class_to_prototype,
        key=lambda c: -max(alignment.class_prototype_counts[c].values())
        / sum(alignment.class_prototype_counts[c].values()))
    if selector.startswith("top:"):
        ranked = ranked[:int(selector.split(":", 1)[1])]
    elif selector != "all":
        raise CliError(f"--classes must be 'all' or 'top:N', got {selector!r}")
    class_map = {c: alignment.class_to_prototype[c] for c in ranked}

    result = zero_prototype_ablation(bundle, probe, class_map, dataset, labels,
                                     reroute=args.reroute)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "ablation.json").write_text(json.dumps({
        "config": probe.config.to_dict(),
        "overall_accuracy": probe.overall_accuracy,
        "per_class": [{"class": c, "accuracy": probe.per_class_accuracy.get(c)}
                      for c in probe.classes],
        "ablation": result["rows"],
        "mean_target_delta": result["mean_target_delta"],
        "reroute": result["reroute"],
    }, indent=2, sort_keys=True))
    print(f"mean per-class accuracy delta {result['mean_target_delta']:+.4f}; "
          f"written to {out_dir / 'ablation.json'}")
    return 0


def cmd_viz(args) -> int:
    from .checkpoint import load_checkpoint
    from .data import load_image
    from .viz import attention_map, grid_to_json, render_overlay

    image_path = Path(args.image)
    if not image_path.is_file():
        raise CliError(f"image {image_path} does not exist")
    bundle = load_checkpoint(Path(args.checkpoint))
    image = load_image(image_path)
    grid = attention_map(bundle, image, args.prototype)
    out = Path(args.out)
    render_overlay(image, grid, out, colormap=args.colormap)
    if args.grid_json:
        Path(args.grid_json).write_text(grid_to_json(grid, args.prototype))
    print(f"overlay written to {out}")
    return 0


def cmd_serve(args) -> int:
    from .service import serve

    serve(Path(args.index), Path(args.checkpoint), Path(args.report), bind=args.bind,
          cache_dir=Path(args.cache_dir) if args.cache_dir else None,
          ui_dir=Path(args.ui) if args.ui else None)
    return 0


def cmd_synth(args) -> int:
    from .synthetic import make_planted_pair

    desc_a, desc_b, truth = make_planted_pair(
        Path(args.out), images_per_dataset=args.images_per_dataset, seed=args.seed,
        size=args.size)
    print(f"planted datasets written: {desc_a.root} and {desc_b.root}")
    print(f"dataset-specific concepts: {truth['specific']}; shared: {truth['shared']}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="protosim",
                     description="prototype-based dataset comparison toolkit")
    parser.add_argument("--workers", type=int, default=None,
                        help="cap intra-op parallelism (torch threads)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="learn a prototype bank over dataset unions")
    p.add_argument("--datasets", action="append", required=True,
                   metavar="a=path,b=path")
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--set", action="append", metavar="key=value",
                   help="override a train config value")
    p.add_argument("--backbone", default="toy-vit-s8-d64")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("index", help="record hard assignments for datasets")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", action="append", required=True, metavar="id=path")
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("compare", help="specificity report over an index")
    p.add_argument("--index", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--threshold", type=float, default=0.95)
    p.add_argument("--min-occurrences", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("probe", help="linear classification on frozen features")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True, metavar="id=path")
    p.add_argument("--labels", required=True)
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--set", action="append", metavar="key=value")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("ablate", help="zero class prototypes and re-evaluate the probe")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--probe", required=True, help="probe.pt from the probe subcommand")
    p.add_argument("--classes", default="top:100", metavar="top:N|all")
    p.add_argument("--reroute", action="store_true",
                   help="re-route tokens to the next-best prototype instead of "
                        "projecting zeros")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("viz", help="attention overlay for one image and prototype")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--prototype", type=int, required=True)
    p.add_argument("--colormap", default="inferno")
    p.add_argument("--grid-json", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_viz)

    p = sub.add_parser("serve", help="read-only inspection API")
    p.add_argument("--index", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--bind", default="127.0.0.1:8000")
    p.add_argument("--cache-dir", default=None,
                   help="overlay cache (defaults to $PROTOSIM_CACHE_DIR)")
    p.add_argument("--ui", default=None, help="static UI assets to host at /ui")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("synth", help="generate planted synthetic dataset pairs")
    p.add_argument("--out", required=True)
    p.add_argument("--images-per-dataset", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=32)
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 1
    if args.workers:
        torch.set_num_threads(args.workers)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure contract
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
