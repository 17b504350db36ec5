"""Extractor CLI: embed words, images, or prompts into containers.

    extractor run --mode text-joint --input words.txt --out words.aec
    extractor run --mode image-joint --input images/ --out images.aec
    extractor run --mode prompt-grid --input prompts.txt --out grids.aec
    extractor inspect grids.aec

Exit codes: 0 success, 1 data/encoder error, 2 usage error.
"""

import argparse
import json
import sys

from affectsteer import dataio

from .encoders import EncoderLoadError, PromptTooLongError, ReferenceEncoder, get_encoder
from .jobs import MODES, ExtractionJob, run_job


def _read_lines(path):
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh if line.strip()]


def cmd_run(args):
    inputs = args.input if args.mode == "image-joint" else _read_lines(args.input)
    job = ExtractionJob(args.mode, inputs, args.out, batch_size=args.batch_size)
    summary = run_job(job, get_encoder(args.checkpoint))
    print(json.dumps(summary, indent=2))
    for name, reason in summary["skipped"]:
        print(f"skipped {name}: {reason}", file=sys.stderr)
    return 0


def cmd_inspect(args):
    container = dataio.read_container(args.path)
    info = {
        "shape": list(container.shape),
        "keys": container.keys if len(container.keys) <= 10 else container.keys[:10] + ["..."],
        "meta": container.meta,
    }
    print(json.dumps(info, indent=2))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="extractor",
        description="Embed words, images, or prompts into affect-toolkit containers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an extraction job")
    p.add_argument("--mode", required=True, choices=MODES)
    p.add_argument("--input", required=True, help="word/prompt list file, or image directory")
    p.add_argument("--out", required=True, help="output container path")
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument(
        "--checkpoint",
        default=ReferenceEncoder.checkpoint_id,
        help="encoder checkpoint id; the default is the deterministic reference encoder",
    )
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("inspect", help="print a container's shape, keys, and header")
    p.add_argument("path")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, EncoderLoadError, PromptTooLongError, dataio.FormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
