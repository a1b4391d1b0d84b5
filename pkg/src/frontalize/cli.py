"""Command-line entry point.

Exit codes: 0 success, 1 usage, 2 validation, 3 runtime. Every artifact path
written is printed to stdout, one per line.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch

from .checkpoint import CheckpointError, load_models
from .dataset import (
    AlignmentError,
    ManifestError,
    ProtocolError,
    build_protocol,
    load_manifest,
    load_protocol,
    pose_bin,
    save_protocol,
    write_manifest,
)
from .evaluator import (
    EmbeddingSet,
    EvaluationError,
    cached_embeddings,
    extract_embeddings,
    file_digest,
    frontalize,
    pose_binned_report,
    rank1,
    report_csv,
    report_text,
)
from .images import image_grid, write_image
from .losses import LossError
from .parsing import MaskError
from .toy import ToySpec, generate_toy_dataset, toy_identity_extractor, toy_records
from .trainer import (
    TrainConfig,
    TrainingError,
    build_models,
    build_pair_dataset,
    fit,
    frontal_partner,
    load_aligned,
)
from .verify import run_all

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2, 3

VALIDATION_ERRORS = (ManifestError, ProtocolError, AlignmentError, MaskError, EvaluationError, LossError)
RUNTIME_ERRORS = (TrainingError, CheckpointError, OSError, RuntimeError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _module_of(exc: BaseException, command: str) -> str:
    mod = type(exc).__module__
    return command if mod == "builtins" else mod.rsplit(".", 1)[-1]


def _image_root(manifest: Path, override=None) -> Path:
    """Images resolve against --image-root, a sibling protocol.json, or the manifest's directory."""
    if override:
        return Path(override)
    meta = manifest.parent / "protocol.json"
    if meta.exists():
        root = json.loads(meta.read_text(encoding="utf-8")).get("image_root")
        if root:
            return Path(root)
    return manifest.parent


# -- commands -------------------------------------------------------------------


def cmd_toygen(args) -> int:
    spec = ToySpec.from_json(args.spec)
    if args.no_images:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "toyspec.json").write_text(json.dumps(spec.to_json(), indent=1) + "\n", encoding="utf-8")
        manifest = write_manifest(toy_records(spec), out / "manifest.jsonl")
    else:
        manifest = generate_toy_dataset(spec, args.out)
    print(manifest)
    print(Path(args.out) / "toyspec.json")
    return EXIT_OK


def cmd_protocol_build(args) -> int:
    records = load_manifest(args.manifest, mode=args.mode)
    split = build_protocol(records, args.train_subjects, args.seed)
    paths = save_protocol(split, args.out, seed=args.seed, image_root=Path(args.manifest).parent)
    c = split.counts()
    print(f"train {c['train']:,}")
    print(f"probes {c['probes']:,}")
    print(f"gallery {c['gallery']:,}")
    for p in paths:
        print(p)
    return EXIT_OK


def _load_config(args) -> TrainConfig:
    data = {}
    if args.config:
        data = json.loads(Path(args.config).read_text(encoding="utf-8"))
    config = TrainConfig.from_dict(data)
    return config.with_overrides(
        epochs=args.epochs, batch_size=args.batch_size, seed=args.seed, max_steps=args.max_steps
    )


def cmd_train(args) -> int:
    config = _load_config(args)
    split = load_protocol(args.protocol)
    if not split.image_root:
        raise ProtocolError(f"{args.protocol}: protocol.json has no image_root")
    dataset = build_pair_dataset(split.train, split.image_root, config.image_size, align=config.align)
    torch.manual_seed(config.seed)
    models = build_models(config)
    ckdir = Path(args.checkpoints)
    fit(models, dataset, config, ckdir, resume=not args.no_resume)
    latest = ckdir / (ckdir / "LATEST").read_text().strip()
    print(latest)
    print(ckdir / "trace.jsonl")
    return EXIT_OK


def _generator_from(checkpoint):
    models, header = load_models(checkpoint)
    if "generator" not in models:
        raise CheckpointError(f"{checkpoint}: no generator stored")
    cfg = header["meta"].get("config", {})
    return models["generator"], bool(cfg.get("align", True))


def cmd_synthesize(args) -> int:
    generator, align = _generator_from(args.checkpoint)
    size = generator.size
    records = load_manifest(args.manifest, mode="lax")
    root = _image_root(Path(args.manifest), args.image_root)
    partners = frontal_partner(records)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    todo = [r for r in records if r.pose != (0.0, 0.0)]
    if args.limit is not None:
        todo = todo[: args.limit]
    rows = []
    for rec in todo:
        x, _ = load_aligned(rec, root, size, align)
        y_hat = frontalize(generator, torch.from_numpy(x.transpose(2, 0, 1)[None]).float())[0]
        y_hat = y_hat.permute(1, 2, 0).double().numpy()
        front = partners.get((rec.subject_id, rec.attribute, rec.illumination))
        y = load_aligned(front, root, size, align)[0] if front else -np.ones_like(x)
        stem = Path(rec.image_ref).with_suffix("")
        gen_path = out / f"{stem}_gen.png"
        gen_path.parent.mkdir(parents=True, exist_ok=True)
        write_image(gen_path, y_hat)
        # synthesized | input | ground truth
        side = image_grid([[y_hat, x, y]])
        side_path = out / f"{stem}_triplet.png"
        write_image(side_path, side)
        print(gen_path)
        print(side_path)
        if len(rows) < args.grid_rows:
            rows.append([y_hat, x, y])
    if rows:
        grid_path = out / "grid.png"
        write_image(grid_path, image_grid(rows))
        print(grid_path)
    return EXIT_OK


def make_extractor(ident: str):
    kind, _, arg = ident.partition(":")
    if kind == "toy":
        return toy_identity_extractor(int(arg) if arg else 0)
    raise EvaluationError(f"unknown extractor id {ident!r} (available: toy, toy:<seed>)")


def cmd_eval_rank1(args) -> int:
    split = load_protocol(args.protocol)
    gallery_ids = {r.subject_id for r in split.gallery}
    missing = sorted({r.subject_id for r in split.probes} - gallery_ids)
    if missing:
        raise EvaluationError(f"gallery has no record for subject(s) {missing}")
    generator, align = _generator_from(args.checkpoint)
    size = generator.size
    extractor = make_extractor(args.extractor)
    root = Path(split.image_root or Path(args.protocol))

    def load(records):
        return torch.from_numpy(
            np.stack([load_aligned(r, root, size, align)[0].transpose(2, 0, 1) for r in records]).astype(np.float32)
        )

    ckpt_id = file_digest(args.checkpoint)
    man_hash = file_digest(Path(args.protocol) / "probes.jsonl") + file_digest(Path(args.protocol) / "gallery.jsonl")
    report = Path(args.report)
    report.parent.mkdir(parents=True, exist_ok=True)
    cache_dir = report.parent / "embedding-cache"
    key = f"{ckpt_id}|{args.extractor}"
    probes = load(split.probes)
    e_orig = cached_embeddings(cache_dir, key, man_hash, "original", lambda: extract_embeddings(extractor, probes))
    e_gen = cached_embeddings(
        cache_dir, key, man_hash, "frontalized", lambda: extract_embeddings(extractor, frontalize(generator, probes))
    )
    e_gal = cached_embeddings(cache_dir, key, man_hash, "gallery", lambda: extract_embeddings(extractor, load(split.gallery)))

    labels = [r.subject_id for r in split.probes]
    bins = [pose_bin(r) for r in split.probes]
    gallery = EmbeddingSet([r.subject_id for r in split.gallery], e_gal)
    fused = rank1(EmbeddingSet(labels, e_orig), EmbeddingSet(labels, e_gen, "frontalized"), gallery, labels, bins)
    original = rank1(EmbeddingSet(labels, e_orig), None, gallery, labels, bins)

    tables = pose_binned_report(fused)
    report.write_text(report_csv(tables), encoding="utf-8")
    text_path = report.with_suffix(".txt")
    text_path.write_text(report_text(tables), encoding="utf-8")
    base_path = report.with_name(report.stem + ".original" + report.suffix)
    base_path.write_text(report_csv(pose_binned_report(original)), encoding="utf-8")
    summary = report.with_name(report.stem + ".summary.json")
    summary.write_text(
        json.dumps({"rank1_fused": fused.accuracy, "rank1_original": original.accuracy, "probes": len(labels)}, indent=1) + "\n",
        encoding="utf-8",
    )
    print(report_text(tables), file=sys.stderr)
    print(f"rank-1 fused {fused.accuracy:.2f}% / original only {original.accuracy:.2f}%", file=sys.stderr)
    for p in (report, text_path, base_path, summary):
        print(p)
    return EXIT_OK


def cmd_verify(args) -> int:
    results = run_all(args.only or None)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_RUNTIME


# -- parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="frontalize", description="Face frontalization training and evaluation pipeline.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("toygen", help="render a procedural toy corpus")
    t.add_argument("--spec", required=True, help="JSON file with ToySpec fields")
    t.add_argument("--out", required=True)
    t.add_argument("--no-images", action="store_true", help="write the manifest only (for protocol arithmetic)")
    t.set_defaults(func=cmd_toygen)

    pr = sub.add_parser("protocol", help="train/probe/gallery protocol")
    prs = pr.add_subparsers(dest="action", required=True, parser_class=_Parser)
    b = prs.add_parser("build")
    b.add_argument("--manifest", required=True)
    b.add_argument("--train-subjects", type=int, default=162)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--mode", choices=("strict", "lax"), default="strict")
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_protocol_build)

    tr = sub.add_parser("train", help="fit the generator and both discriminators")
    tr.add_argument("--protocol", required=True)
    tr.add_argument("--config", help="JSON file with TrainConfig fields")
    tr.add_argument("--checkpoints", required=True)
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--batch-size", type=int)
    tr.add_argument("--seed", type=int)
    tr.add_argument("--max-steps", type=int)
    tr.add_argument("--no-resume", action="store_true")
    tr.set_defaults(func=cmd_train)

    sy = sub.add_parser("synthesize", help="frontalize every non-frontal image of a manifest")
    sy.add_argument("--checkpoint", required=True)
    sy.add_argument("--manifest", required=True)
    sy.add_argument("--out", required=True)
    sy.add_argument("--image-root", help="directory image_ref paths are relative to")
    sy.add_argument("--limit", type=int)
    sy.add_argument("--grid-rows", type=int, default=8)
    sy.set_defaults(func=cmd_synthesize)

    ev = sub.add_parser("eval", help="recognition via generation")
    evs = ev.add_subparsers(dest="metric", required=True, parser_class=_Parser)
    r1 = evs.add_parser("rank1")
    r1.add_argument("--checkpoint", required=True)
    r1.add_argument("--protocol", required=True)
    r1.add_argument("--extractor", default="toy")
    r1.add_argument("--report", required=True)
    r1.set_defaults(func=cmd_eval_rank1)

    v = sub.add_parser("verify", help="run oracle, gradient and protocol self-checks")
    v.add_argument("--only", nargs="*", choices=("protocol", "losses", "gradients", "rank1"))
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (*VALIDATION_ERRORS, ValueError, KeyError) as exc:
        print(f"error [{_module_of(exc, args.command)}]: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except RUNTIME_ERRORS as exc:
        print(f"error [{_module_of(exc, args.command)}]: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
