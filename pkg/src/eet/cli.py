"""Command line entry point: ``eet <command> --config <path> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import Config
from .errors import EETError

SEED_KEYS = {
    "profile": "model.seed",
    "synth": "synth.seed",
    "encode": "model.seed",
    "optimize-codes": "hash.seed",
    "fit-heads": "model.seed",
    "pipeline": "synth.seed",
}


def _load_config(args) -> Config:
    config = Config.load(args.config) if args.config else Config()
    overrides = {}
    for item in args.set or []:
        key, _, value = item.partition("=")
        overrides[key.strip()] = value
    if getattr(args, "seed", None) is not None:
        overrides[SEED_KEYS[args.command]] = args.seed
    return config.with_overrides(overrides) if overrides else config


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eet", description="Pruned-ViT hashing and Hamming retrieval toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str, out_required: bool = True):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        p.add_argument("--seed", type=int, help=f"override {SEED_KEYS.get(name, 'the seed')}")
        p.add_argument("--out", required=out_required, help="output path")
        return p

    p = add("profile", "token counts, analytic GFLOPs and latency", out_required=False)
    p.add_argument("--runs", type=int, help="timed runs per configuration (0 skips timing)")

    add("synth", "generate a synthetic dataset")

    p = add("encode", "encode manifest images into features and codes")
    p.add_argument("--manifest", required=True)
    p.add_argument("--weights", help="EETW weights (default: seeded random init)")
    p.add_argument("--no-masked", action="store_true", help="skip region-masked features")

    p = add("optimize-codes", "alternating optimization of training-set binary codes")
    p.add_argument("--manifest", required=True)

    p = add("fit-heads", "fit classification and hash heads against optimized codes")
    p.add_argument("--features", required=True)
    p.add_argument("--codes", required=True, help="EETB codes with labels (targets)")
    p.add_argument("--teacher", help="EETC teacher codes")
    p.add_argument("--masked-features", help="EETC features of region-masked images")
    p.add_argument("--weights", help="EETW base weights")

    p = add("eval", "mAP and PR curve of query codes against database codes", out_required=False)
    p.add_argument("--queries", required=True)
    p.add_argument("--db", required=True)
    p.add_argument("--raw-out", help="CSV of per-rank mean recall/precision")

    add("pipeline", "synth -> encode -> optimize -> fit -> encode queries -> eval")
    return parser


def run(args) -> int:
    config = _load_config(args)
    cmd = args.command
    if cmd == "profile":
        report = pipeline.cmd_profile(config, args.runs)
        text = "\n".join(report.lines())
        print(text)
        if args.out:
            Path(args.out).write_text(text + "\n")
    elif cmd == "synth":
        paths = pipeline.cmd_synth(config, args.out)
        print(f"wrote {paths.train_manifest}, {paths.query_manifest}, {paths.teacher}")
    elif cmd == "encode":
        result = pipeline.cmd_encode(config, args.manifest, args.out, args.weights, with_masked=not args.no_masked)
        print(f"encoded {result.codes.n} images, {len(result.failures)} failed")
        if result.failures:
            return 1
    elif cmd == "optimize-codes":
        codes = pipeline.cmd_optimize_codes(config, args.manifest, args.out)
        print(f"optimized {codes.n} codes of {codes.k} bits")
    elif cmd == "fit-heads":
        report = pipeline.cmd_fit_heads(
            config, args.features, args.codes, args.out,
            teacher_path=args.teacher, masked_path=args.masked_features, weights_path=args.weights,
        )
        print(f"loss {report.loss_trace[0]:.6f} -> {report.loss_trace[-1]:.6f}; bit error rate {report.bit_error_rate:.4f}")
    elif cmd == "eval":
        result = pipeline.cmd_eval(config, args.queries, args.db, pr_out=args.out, raw_out=args.raw_out)
        print(f"mAP {pipeline.format_map(result.map)}")
    elif cmd == "pipeline":
        result = pipeline.run_pipeline(config, args.out)
        print(f"mAP {pipeline.format_map(result.map)}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except (EETError, OSError, KeyError) as exc:
        print(f"eet: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
