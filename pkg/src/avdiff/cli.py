"""Command line entry point: make-data, train, sample, evaluate."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import RunConfig


def cmd_make_data(args) -> int:
    from .data import make_corpus, make_misaligned, write_manifest

    samples = make_corpus(args.n, args.split, args.duration)
    if args.misaligned:
        if len(samples) < 2:
            raise ValueError("a misaligned set needs at least 2 samples")
        samples = [make_misaligned(s, samples[(i + 1) % len(samples)].audio) for i, s in enumerate(samples)]
    write_manifest(samples, args.out)
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def cmd_config(args) -> int:
    RunConfig().save(args.out)
    print(f"wrote default config to {args.out}")
    return 0


def cmd_train(args) -> int:
    from .train import save_run, train

    cfg = RunConfig.load(args.config)
    if args.steps is not None:
        cfg.steps = args.steps
    if args.output_dir is not None:
        cfg.output_dir = args.output_dir
    result = train(cfg)
    ckpt = save_run(result, cfg.resolved_output_dir())
    first, last = result.log[0]["total"], result.log[-1]["total"]
    print(json.dumps({"checkpoint": str(ckpt), "config_hash": cfg.config_hash, "seed": cfg.seed,
                      "steps": len(result.log), "first_total": first, "last_total": last}))
    return 0


def cmd_sample(args) -> int:
    from .sample import sample_to_dir
    from .train import load_model

    model, codecs, _ = load_model(args.ckpt)
    out = args.out or str(model.cfg.resolved_output_dir() / "samples")
    manifest = sample_to_dir(model, codecs, args.caption, out, seed=args.seed, steps=args.steps, png=not args.no_png)
    print(f"wrote {len(args.caption)} sample(s); manifest {manifest}")
    return 0


def cmd_evaluate(args) -> int:
    from .evaluate import evaluate_manifest

    report = evaluate_manifest(args.manifest, args.metrics, reference=args.reference, out_path=args.out)
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="avdiff", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-data", help="render a synthetic corpus and its manifest")
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--split", choices=("train", "eval"), default="train")
    p.add_argument("--duration", type=float, default=2.0)
    p.add_argument("--misaligned", action="store_true", help="pair every video with the next clip's audio")
    p.add_argument("--out", required=True, help="manifest path (.jsonl)")
    p.set_defaults(func=cmd_make_data)

    p = sub.add_parser("config", help="write the default run config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_config)

    p = sub.add_parser("train", help="train from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="generate audible videos from captions")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--caption", action="append", required=True, help="repeat for several captions")
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--no-png", action="store_true")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("evaluate", help="score a manifest of samples")
    p.add_argument("--manifest", required=True, help="manifest file or a sample directory")
    p.add_argument("--metrics", default="avh,clipsim")
    p.add_argument("--reference", help="reference manifest for fvd/kvd/fad")
    p.add_argument("--out", help="write the report JSON here")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
