"""Command-line surface: train-unet, train-pix2pix, predict.

Training commands take a JSON spec file (dataset, checkpoint, epochs,
batch_size, learning_rate, reconstruction_weight, seed) so the pipeline
can drive this package as a subprocess with a single artifact.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .dataformat import FormatError
from .training import DivergenceError, TrainSpec, predict, train_pix2pix, train_unet

log = logging.getLogger("nn_refine")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nn-refine",
                                     description="neural stage-two refinement")
    parser.add_argument("--verbose", "-v", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, fn in (("train-unet", train_unet), ("train-pix2pix", train_pix2pix)):
        p = sub.add_parser(name)
        p.add_argument("--spec", required=True, help="JSON TrainSpec file")
        p.set_defaults(trainer=fn)

    p = sub.add_parser("predict")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--name", help="method name recorded in predictions.json")
    p.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        if args.command in ("train-unet", "train-pix2pix"):
            spec = TrainSpec.from_json(args.spec)
            out = args.trainer(spec)
            log.info("checkpoint written to %s", out)
        else:
            out = predict(args.checkpoint, args.dataset, args.split, args.out,
                          method_name=args.name)
            log.info("predictions written to %s", out)
        return 0
    except (FormatError, FileNotFoundError) as exc:
        log.error("data error: %s", exc)
        return 3
    except DivergenceError as exc:
        log.error("training diverged: %s", exc)
        return 4
    except (ValueError, KeyError, TypeError) as exc:
        log.error("configuration error: %s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
