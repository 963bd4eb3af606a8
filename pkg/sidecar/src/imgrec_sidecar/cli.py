"""Command-line interface: extract features from images, verify IFV1 files.

Exit codes: 0 success, 1 extraction finished but skipped more than 1% of
manifest items, 2 bad input or invalid file.
"""

import argparse
import os
import sys

from .errors import FormatError, InputError, SidecarError

SKIP_FRACTION_LIMIT = 0.01


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="imgrec-sidecar",
        description="ResNet50 image features -> IFV1 files for the recommender engine",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    ext = sub.add_parser("extract", help="run images through ResNet50")
    ext.add_argument("--manifest", required=True, help="item_key<TAB>image_path lines")
    ext.add_argument("--out-final", required=True, help="2048-dim IFV1 output path")
    ext.add_argument("--out-cut", required=True, help="1024-dim IFV1 output path")
    ext.add_argument("--image-size", type=int, default=224, help="center-crop size")
    ext.add_argument(
        "--weights",
        default="imagenet",
        help="'imagenet', 'random' (seeded, for offline tests), or a state-dict path",
    )
    ext.add_argument("--seed", type=int, default=0, help="seed for --weights random")

    ver = sub.add_parser("verify", help="validate an IFV1 file and print statistics")
    ver.add_argument("path", help="IFV1 file to check")
    return parser


def _apply_thread_cap() -> None:
    raw = os.environ.get("IMGREC_THREADS")
    if raw is None:
        return
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n < 1:
        raise InputError("IMGREC_THREADS must be a positive integer")
    import torch

    torch.set_num_threads(n)


def cmd_extract(args) -> int:
    _apply_thread_cap()
    from . import extractor
    from .ifv1 import write_ifv1

    entries = extractor.parse_manifest(args.manifest)
    model = extractor.build_model(args.weights, seed=args.seed)
    spec = extractor.ImageSpec(size=args.image_size)
    result = extractor.extract(entries, model, spec)
    for key, path, reason in result.skipped:
        print(f"skipped {key} ({path}): {reason}", file=sys.stderr)
    write_ifv1(args.out_final, result.keys, result.final)
    write_ifv1(args.out_cut, result.keys, result.cut)
    print(f"items={len(result.keys)}")
    print(f"skipped={len(result.skipped)}")
    print(f"final={args.out_final} dim={extractor.FINAL_DIM}")
    print(f"cut={args.out_cut} dim={extractor.CUT_DIM}")
    if result.skip_fraction > SKIP_FRACTION_LIMIT:
        print(
            f"error: skipped {result.skip_fraction:.1%} of manifest items "
            f"(limit {SKIP_FRACTION_LIMIT:.0%})",
            file=sys.stderr,
        )
        return 1
    return 0


def cmd_verify(args) -> int:
    from .ifv1 import format_verify_report, verify

    print(format_verify_report(verify(args.path)))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "extract":
            return cmd_extract(args)
        return cmd_verify(args)
    except (FormatError, InputError, SidecarError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
