"""``stylestory`` command line.

Exit status: 0 success, 2 usage (bad flags, missing files, empty inputs, bad
config), 3 data (malformed or insufficient input records), 4 numeric
(non-finite loss during training).
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__, pipeline
from .errors import ConfigError, NonFiniteLoss, StyleStoryError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("stylestory")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=0, help="seed for splitting, training, sampling (default 0)")
    p.add_argument("--config", type=Path, help="JSON config for this command, or a shared file keyed by command name")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    return p


def _asset_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--corpus", type=Path, required=True, help="stories as jsonl (id, sentences) or ROCStories csv")
    p.add_argument("--lexicon", type=Path, required=True, help="emotion lexicon in NRC word-level TSV layout")
    p.add_argument("--stopwords", type=Path, help="stop-word list, one per line (default: bundled)")
    p.add_argument("--tagger-lexicon", type=Path, help="word<TAB>tag lexicon for the POS tagger (default: bundled)")
    p.add_argument("--names-dir", type=Path, help="directory with male.txt, female.txt, neutral.txt")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stylestory", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common()

    p = sub.add_parser("annotate", parents=[common], help="split, fit statistics on train, label every story")
    _asset_flags(p)
    p = sub.add_parser("stats", parents=[common], help="fit IDF, banned stems and style statistics only")
    _asset_flags(p)
    sub.add_parser("synth", parents=[common], help="write a synthetic corpus and its emotion lexicon")

    p = sub.add_parser("train", parents=[common], help="train a model on the annotated train split")
    p.add_argument("--annotated", type=Path, required=True, help="annotated.jsonl or the annotate output directory")

    p = sub.add_parser("generate", parents=[common], help="sample both styles for each beginning of a split")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--annotated", type=Path, required=True)

    p = sub.add_parser("evaluate", parents=[common], help="score a generation file")
    p.add_argument("--generations", type=Path, required=True, help="generations.jsonl from the generate command")
    p.add_argument("--annotation-dir", type=Path, required=True, help="output directory of the annotate command")
    p.add_argument("--checkpoint", type=Path, help="model checkpoint; enables perplexity")
    p.add_argument("--ssc", action="store_true", help="train the SSC-lite classifier and report SSC")
    return parser


def _assets(args) -> pipeline.AssetPaths:
    return pipeline.AssetPaths(args.lexicon, args.stopwords, args.tagger_lexicon, args.names_dir)


def run(args: argparse.Namespace) -> Path:
    cfg = pipeline.load_config(args.config, args.command)
    if args.command == "annotate":
        return pipeline.run_annotate(args.corpus, _assets(args), args.out, args.seed, cfg)
    if args.command == "stats":
        return pipeline.run_stats(args.corpus, _assets(args), args.out, args.seed, cfg)
    if args.command == "synth":
        return pipeline.run_synth(args.out, args.seed, cfg)
    if args.command == "train":
        return pipeline.run_train(args.annotated, args.out, args.seed, cfg)[0]
    if args.command == "generate":
        return pipeline.run_generate(args.checkpoint, args.annotated, args.out, args.seed, cfg)
    if args.command == "evaluate":
        if args.ssc:
            cfg = {**cfg, "ssc": True}
        return pipeline.run_evaluate(args.generations, args.annotation_dir, args.out, args.seed,
                                     args.checkpoint, cfg)
    raise AssertionError(args.command)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        out = run(args)
    except (pipeline.UsageError, ConfigError) as exc:
        print(f"stylestory {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NonFiniteLoss as exc:
        print(f"stylestory {args.command}: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (StyleStoryError, ValueError, KeyError) as exc:
        print(f"stylestory {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    print(out / pipeline.MANIFEST)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
