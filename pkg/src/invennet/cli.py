"""Command-line entry point.

Exit codes: 0 success, 1 usage/contract/format/I-O errors, 2 numeric or
training failures (including a failed check).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import enhancer, gradcheck, niqe, toyset, trainer
from . import tensor as T
from .config import TrainConfig, load_config
from .errors import ContractError, FormatError, ImageIOError, InvEnNetError, NumericError
from .imageio import DatasetIndex, load_tensor, save_tensor, scan_directory
from .invnet import squeeze

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERIC = 2
INVERT_TOLERANCE = 1e-3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Reports bad usage with exit code 1 instead of argparse's 2."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _add_train(sub):
    p = sub.add_parser("train", help="train a model on unpaired low/normal folders")
    p.add_argument("--config", help="key = value config file (defaults otherwise)")
    p.add_argument("--low", required=True, help="folder of low-light images")
    p.add_argument("--normal", required=True, help="folder of normal-light images")
    p.add_argument("--out", required=True, help="checkpoint to write")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--iterations", type=int, help="override the configured iteration count")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--log-every", type=int, help="log losses every K steps (0 disables)")
    p.add_argument("--checkpoint-every", type=int, help="write the checkpoint every M steps")
    p.add_argument("--log", help="also append loss lines to this file")


def _add_inference(sub, name, help_text):
    p = sub.add_parser(name, help=help_text)
    p.add_argument("--model", required=True, help="checkpoint")
    p.add_argument("--input", required=True, help="input image (.png or .ppm)")
    p.add_argument("--output", required=True, help="output image (.png or .ppm)")
    p.add_argument("--mode", choices=enhancer.MODES, default="progressive",
                   help="progressive (default) or direct unsqueeze")
    p.add_argument("--no-clamp", action="store_true", help="skip the final clamp to [0, 1]")


def build_parser():
    parser = _Parser(prog="invennet", description="Invertible low-light enhancement toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _add_train(sub)
    _add_inference(sub, "enhance", "enhance one image")
    _add_inference(sub, "degrade", "darken one image with the inverse pass")

    p = sub.add_parser("check-invert", help="measure the forward/inverse round-trip error")
    p.add_argument("--model", required=True, help="checkpoint")
    p.add_argument("--trials", type=int, default=10, help="random inputs to try")
    p.add_argument("--seed", type=int, default=0, help="seed for the random inputs")
    p.add_argument("--height", type=int, default=64, help="input height (even)")
    p.add_argument("--width", type=int, default=96, help="input width (even)")

    p = sub.add_parser("grad-check", help="compare autodiff with finite differences")
    p.add_argument("--seed", type=int, default=0, help="seed for the test arrays")

    p = sub.add_parser("niqe-fit", help="fit a NIQE model on a folder of pristine images")
    p.add_argument("--corpus", required=True, help="folder of pristine images")
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--patch-size", type=int, default=niqe.PATCH_SIZE, help="patch size in pixels")

    p = sub.add_parser("niqe-score", help="score one image with a NIQE model")
    p.add_argument("--model", required=True, help="NIQE model file")
    p.add_argument("--input", required=True, help="image to score")

    p = sub.add_parser("make-toyset", help="write the synthetic unpaired dataset")
    p.add_argument("--out", required=True, help="output folder")
    p.add_argument("--count", type=int, default=64, help="images per training pool")
    p.add_argument("--seed", type=int, default=0, help="generator seed")
    p.add_argument("--test-count", type=int, default=8, help="held-out low/normal test pairs")
    return parser


# ---------------------------------------------------------------- commands


def cmd_train(args, out):
    config = load_config(args.config) if args.config else TrainConfig()
    changes = {}
    if args.iterations is not None:
        changes["iterations"] = args.iterations
    if args.seed is not None:
        changes["seed"] = args.seed
    if changes:
        config = config.replace(**changes)
    dataset = DatasetIndex.scan(args.low, args.normal, config.seed)
    log_stream = None
    try:
        if args.log:
            try:
                log_stream = open(args.log, "a", encoding="utf-8")
            except OSError as exc:
                raise ImageIOError(f"{args.log}: cannot open ({exc.strerror or exc})") from None
        stream = _Tee(out, log_stream)
        trainer.train_loop(config, dataset, out_path=args.out, resume=args.resume,
                           log_stream=stream, checkpoint_every=args.checkpoint_every,
                           log_every=args.log_every)
    finally:
        if log_stream is not None:
            log_stream.close()
    return EXIT_OK


class _Tee:
    def __init__(self, *streams):
        self.streams = [s for s in streams if s is not None]

    def write(self, text):
        for s in self.streams:
            s.write(text)

    def flush(self):
        for s in self.streams:
            s.flush()


def _cmd_inference(args, direction):
    model = trainer.load_generator(args.model)
    image = load_tensor(args.input)
    options = enhancer.EnhanceOptions(args.mode, direction, clamp=not args.no_clamp)
    save_tensor(args.output, enhancer.process_any_size(image, model, options))
    return EXIT_OK


def round_trip_error(model, trials, seed=0, height=64, width=96):
    """Max |x - inverse(forward(x))| and the other order over random inputs in [0, 1]."""
    if height % 2 or width % 2 or trials < 1:
        raise ContractError("check-invert needs even sizes and at least one trial")
    rng = np.random.default_rng(seed)
    worst = 0.0
    with T.no_grad():
        for _ in range(trials):
            x = rng.random((1, 3, height, width), dtype=np.float32)
            subs = squeeze(x)
            there, _ = model.forward(subs)
            back, _ = model.inverse(there)
            down, _ = model.inverse(subs)
            up, _ = model.forward(down)
            for a, b, c in zip(subs, back, up):
                worst = max(worst, float(np.abs(a.data - b.data).max()),
                            float(np.abs(a.data - c.data).max()))
    return worst


def cmd_check_invert(args, out):
    model = trainer.load_generator(args.model)
    err = round_trip_error(model, args.trials, args.seed, args.height, args.width)
    out.write(f"max_round_trip_error={err!r}\n")
    return EXIT_OK if err < INVERT_TOLERANCE else EXIT_NUMERIC


def cmd_grad_check(args, out):
    results = gradcheck.run_suite(args.seed)
    ok = True
    for name, err in results.items():
        passed = err < gradcheck.TOLERANCE
        ok &= passed
        out.write(f"{name}: rel_error={err:.3e} {'ok' if passed else 'FAIL'}\n")
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_niqe_fit(args, out):
    paths = scan_directory(args.corpus)
    model = niqe.fit_model([load_tensor(p) for p in paths], patch_size=args.patch_size)
    model.save(args.out)
    out.write(f"fitted {len(paths)} images, {model.meta['patches']} patches\n")
    return EXIT_OK


def cmd_niqe_score(args, out):
    model = niqe.NiqeModel.load(args.model)
    out.write(f"{niqe.niqe_score(load_tensor(args.input), model):.6f}\n")
    return EXIT_OK


def cmd_make_toyset(args, out):
    toy = toyset.write_toyset(args.out, args.count, args.seed, args.test_count)
    out.write(f"normal={len(toy.normal)} low={len(toy.low)} test={len(toy.test_low)} "
              f"mean_luma_normal={toyset.mean_luminance(toy.normal):.4f} "
              f"mean_luma_low={toyset.mean_luminance(toy.low):.4f}\n")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "enhance": lambda a, o: _cmd_inference(a, "enhance"),
    "degrade": lambda a, o: _cmd_inference(a, "degrade"),
    "check-invert": cmd_check_invert,
    "grad-check": cmd_grad_check,
    "niqe-fit": cmd_niqe_fit,
    "niqe-score": cmd_niqe_score,
    "make-toyset": cmd_make_toyset,
}


def run(argv=None, out=None, err=None):
    """Parse ``argv`` and dispatch; returns the process exit code."""
    out = sys.stdout if out is None else out
    err = sys.stderr if err is None else err
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        err.write(f"{exc}\n")
        return EXIT_USAGE
    if args.verbose:
        logging.basicConfig(level=logging.INFO, stream=err, format="%(message)s")
    try:
        return COMMANDS[args.command](args, out)
    except NumericError as exc:
        err.write(f"error: {exc}\n")
        return EXIT_NUMERIC
    except (ContractError, FormatError, ImageIOError, InvEnNetError) as exc:
        err.write(f"error: {exc}\n")
        return EXIT_USAGE
    except OSError as exc:
        name = getattr(exc, "filename", None)
        err.write(f"error: {name + ': ' if name else ''}{exc.strerror or exc}\n")
        return EXIT_USAGE


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
