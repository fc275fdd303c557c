"""gdsc-export command line: descriptor export and t-SNE map plots."""

from __future__ import annotations

import argparse
import json
import sys

from .export import ExportError, ExtractorSpec, export_descriptors
from .tsne import TsneError, tsne_plot


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gdsc-export")
    sub = parser.add_subparsers(dest="command", required=True)

    p_exp = sub.add_parser("export", help="embed an image directory into a GDSC file")
    p_exp.add_argument("--model", required=True,
                       help="'random-projection' or 'torchscript:<path>'")
    p_exp.add_argument("--images", required=True, help="image directory (frame order)")
    p_exp.add_argument("--out", required=True, help="output GDSC path")
    p_exp.add_argument("--dim", type=int, default=128, help="model output length")
    p_exp.add_argument("--resize", default="224x224", help="input size HxW")
    p_exp.add_argument("--crop128", action="store_true", default=False,
                       help="truncate to 128 dims and L2-normalize")
    p_exp.add_argument("--batch-size", dest="batch_size", type=int, default=8)
    p_exp.add_argument("--device", default="cpu")
    p_exp.add_argument("--no-resume", dest="resume", action="store_false", default=True)

    p_tsne = sub.add_parser("tsne", help="2-D scatter colored by map location")
    p_tsne.add_argument("--descriptors", required=True, help="GDSC file")
    p_tsne.add_argument("--summary", required=True, help="locations.jsonl map summary")
    p_tsne.add_argument("--out", required=True, help="output SVG path")
    p_tsne.add_argument("--seed", type=int, default=0)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "export":
            try:
                h, w = (int(v) for v in args.resize.lower().split("x"))
            except ValueError:
                print("error: --resize must look like 480x640", file=sys.stderr)
                return 2
            spec = ExtractorSpec(
                model=args.model,
                resize=(h, w),
                dim=args.dim,
                crop128=args.crop128,
                batch_size=args.batch_size,
                device=args.device,
            )
            info = export_descriptors(spec, args.images, args.out, resume=args.resume)
        else:
            info = tsne_plot(args.descriptors, args.summary, args.out, seed=args.seed)
    except (ExportError, TsneError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(info, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
