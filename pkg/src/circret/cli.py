"""Command-line entry point: ``circret <command> ...``.

Exit codes: 0 success, 1 operational failure, 2 usage error. Errors are
printed to stderr as a one-line JSON object ``{"error": ..., "message": ...}``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
MODALITY_CHOICES = ("text", "image", "code")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse's default prints plain text
        raise UsageError(message)


def _emit_error(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": message, "exit_code": code}), file=sys.stderr)
    return code


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {path}")
    return p


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=False))


# ---------------------------------------------------------------- commands


def cmd_parse(args) -> int:
    from .spice import parse_netlist

    ir = parse_netlist(_existing(args.file).read_text(encoding="utf-8"))
    _print_json(ir.to_json())
    return EXIT_OK


def cmd_graph(args) -> int:
    from .graph import build_graph
    from .spice import parse_netlist

    ir = parse_netlist(_existing(args.file).read_text(encoding="utf-8"))
    _print_json(build_graph(ir, args.fanout_cap).to_json())
    return EXIT_OK


def cmd_gen_data(args) -> int:
    from .corpus import generate_synthetic_corpus

    families = args.families.split(",") if args.families else None
    m = generate_synthetic_corpus(args.out, args.per_family, families, args.seed, args.feature_dim,
                                  feature_format=args.feature_format)
    _print_json({"manifest": str(Path(args.out) / "manifest.jsonl"), "records": len(m.records),
                 "train": len(m.split("train")), "test": len(m.split("test"))})
    return EXIT_OK


def cmd_cluster(args) -> int:
    from .corpus import load_manifest, save_manifest
    from .curriculum import cluster_captions

    m = load_manifest(_existing(args.manifest))
    recs = m.split("train") if args.train_only else m.records
    ca = cluster_captions([r.id for r in recs], [r.caption for r in recs], args.k, args.seed)
    label = dict(zip(ca.ids, ca.labels.tolist()))
    for r in m.records:
        if r.id in label:
            r.cluster_id = int(label[r.id])
    if args.out:
        save_manifest(m, args.out)
    sizes = np.bincount(ca.labels, minlength=args.k).tolist()
    _print_json({"k": args.k, "inertia": ca.inertia, "iterations": ca.n_iter, "sizes": sizes,
                 "assignments": label})
    return EXIT_OK


def cmd_train(args) -> int:
    from .corpus import load_manifest
    from .model import load_config
    from .trainer import train

    cfg_path = _existing(args.config)
    config, extra = load_config(cfg_path)
    if args.seed is not None:
        config.seed = args.seed
    manifest = args.manifest or extra.get("manifest")
    out_dir = args.out or extra.get("out_dir")
    if manifest is None:
        raise UsageError("no manifest given (config key 'manifest' or --manifest)")
    manifest_path = Path(manifest)
    if not manifest_path.is_absolute() and args.manifest is None:
        manifest_path = cfg_path.parent / manifest_path
    if out_dir is not None and not Path(out_dir).is_absolute() and args.out is None:
        out_dir = cfg_path.parent / out_dir
    res = train(load_manifest(_existing(str(manifest_path))), config, out_dir)
    summary = {"out_dir": str(out_dir) if out_dir else None, "steps": sum("step" in r for r in res.log)}
    if res.report is not None:
        summary["report"] = res.report.to_json()
        print(res.report.to_table(), file=sys.stderr)
    _print_json(summary)
    return EXIT_OK


def _embed_manifest(model, manifest, split: str | None):
    from .graph import build_graph
    from .spice import parse_netlist

    recs = manifest.records if split in (None, "all") else manifest.split(split)
    ids = [r.id for r in recs]
    out = {}
    for m in model.config.modalities:
        if m == "code":
            items = [build_graph(parse_netlist(manifest.netlist_text(r))) for r in recs]
        elif m == "text":
            items = [r.caption for r in recs]
        else:
            items = [manifest.image_features(r) for r in recs]
        out[m] = (ids, model.embed_many(m, items))
    return out


def cmd_index(args) -> int:
    from .corpus import load_manifest
    from .model import load_model
    from .retrieval import build_index

    model = load_model(_existing(args.checkpoint))
    manifest = load_manifest(_existing(args.manifest))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    emb = _embed_manifest(model, manifest, args.split)
    for m, (ids, vecs) in emb.items():
        build_index(ids, vecs, m).save(out / f"{m}.arix")
    meta = {"checkpoint": str(Path(args.checkpoint).resolve()), "modalities": list(emb),
            "count": len(next(iter(emb.values()))[0])}
    (out / "index.json").write_text(json.dumps(meta, indent=2))
    _print_json(meta)
    return EXIT_OK


def _query_vector(model, modality: str, value: str) -> np.ndarray:
    from .corpus import read_features
    from .graph import build_graph
    from .spice import parse_netlist

    if modality == "text":
        p = Path(value)
        caption = p.read_text(encoding="utf-8").strip() if p.is_file() else value
        return model.encode_text(caption).vector
    if modality == "code":
        return model.encode_circuit(build_graph(parse_netlist(_existing(value).read_text(encoding="utf-8")))).vector
    return model.encode_image_features(read_features(_existing(value))).vector


def cmd_query(args) -> int:
    from .model import load_model
    from .retrieval import EmbeddingIndex

    index_dir = Path(args.index)
    meta_path = index_dir / "index.json"
    ckpt = args.checkpoint
    if ckpt is None:
        if not meta_path.is_file():
            raise UsageError(f"{index_dir} has no index.json; pass --checkpoint")
        ckpt = json.loads(meta_path.read_text())["checkpoint"]
    model = load_model(_existing(ckpt))
    if args.from_ not in model.config.modalities:
        raise UsageError(f"checkpoint has no {args.from_} encoder")
    idx = EmbeddingIndex.load(_existing(str(index_dir / f"{args.to}.arix")), args.to)
    q = _query_vector(model, args.from_, args.input)
    hits = idx.top_k(q, args.k)
    _print_json([{"rank": i + 1, "id": h, "score": s} for i, (h, s) in enumerate(hits)])
    return EXIT_OK


def cmd_eval(args) -> int:
    from .corpus import load_manifest
    from .model import load_model
    from .retrieval import evaluate_six_directions

    model = load_model(_existing(args.checkpoint))
    manifest = load_manifest(_existing(args.manifest))
    report = evaluate_six_directions(_embed_manifest(model, manifest, args.split))
    if args.json:
        _print_json(report.to_json())
    else:
        print(report.to_table())
    return EXIT_OK


def cmd_validate(args) -> int:
    from .corpus import find_simulator, load_manifest, validate_corpus

    manifest = load_manifest(_existing(args.manifest))
    if find_simulator(args.simulator) is None:
        _print_json({"skipped": True, "reason": "no SPICE simulator found"})
        print("warning: no SPICE simulator found; validation skipped", file=sys.stderr)
        return EXIT_OK
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        report = validate_corpus(manifest, args.simulator, args.timeout, args.jobs)
    _print_json(report.to_json())
    return EXIT_OK if report.compile_rate == 100.0 or not args.strict else EXIT_FAIL


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="circret", description="Netlist / caption / image-feature circuit retrieval.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("parse", help="print the parsed netlist as JSON")
    s.add_argument("file")
    s.set_defaults(func=cmd_parse)

    s = sub.add_parser("graph", help="print the circuit graph as JSON")
    s.add_argument("file")
    s.add_argument("--fanout-cap", type=int, default=32)
    s.set_defaults(func=cmd_graph)

    s = sub.add_parser("gen-data", help="write a seeded synthetic corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--per-family", type=int, default=40)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--families", default=None, help="comma-separated subset")
    s.add_argument("--feature-dim", type=int, default=512)
    s.add_argument("--feature-format", choices=("f32", "json"), default="f32")
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("cluster", help="k-means over caption vectors")
    s.add_argument("--manifest", required=True)
    s.add_argument("--k", type=int, default=30)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--train-only", action="store_true")
    s.add_argument("--out", default=None, help="write the manifest with cluster ids here")
    s.set_defaults(func=cmd_cluster)

    s = sub.add_parser("train", help="three-phase training from a JSON/TOML config")
    s.add_argument("--config", required=True)
    s.add_argument("--manifest", default=None)
    s.add_argument("--out", default=None)
    s.add_argument("--seed", type=int, default=None)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("index", help="embed a manifest and write per-modality indices")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--split", choices=("train", "test", "all"), default="all")
    s.set_defaults(func=cmd_index)

    s = sub.add_parser("query", help="rank index entries for one query")
    s.add_argument("--index", required=True)
    s.add_argument("--checkpoint", default=None)
    s.add_argument("--from", dest="from_", choices=MODALITY_CHOICES, required=True)
    s.add_argument("--to", choices=MODALITY_CHOICES, required=True)
    s.add_argument("-k", "--k", type=int, default=10)
    s.add_argument("input", help="caption text (or file), netlist path, or feature file")
    s.set_defaults(func=cmd_query)

    s = sub.add_parser("eval", help="six-direction Recall@K table")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--split", choices=("train", "test", "all"), default="test")
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("validate", help="compile every netlist with an external simulator")
    s.add_argument("--manifest", required=True)
    s.add_argument("--simulator", default=None)
    s.add_argument("--timeout", type=float, default=30.0)
    s.add_argument("--jobs", type=int, default=4)
    s.add_argument("--strict", action="store_true", help="exit 1 unless every netlist compiles")
    s.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _emit_error("UsageError", str(exc), EXIT_USAGE)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        return _emit_error("UsageError", str(exc), EXIT_USAGE)
    except KeyboardInterrupt:
        return _emit_error("Interrupted", "interrupted", EXIT_FAIL)
    except Exception as exc:  # every other failure is operational
        return _emit_error(type(exc).__name__, str(exc), EXIT_FAIL)


if __name__ == "__main__":
    sys.exit(main())
