"""``metascript`` command line.

Flags override config-file keys, and config-file keys override built-in defaults.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

FONT_ENV = "METASCRIPT_FONT"

log = logging.getLogger("metascript")


def _read_refs(directory, count: int, resolution: int) -> np.ndarray:
    from metascript.glyphs import read_glyph

    paths = sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".bmp"))
    if len(paths) < count:
        raise ValueError(f"{directory} holds {len(paths)} reference images, {count} needed")
    return np.stack([read_glyph(p, resolution) for p in paths[:count]])


def _resolve_font(flag, checkpoint=None):
    font = flag or (checkpoint.config.font if checkpoint and checkpoint.config else "") or os.environ.get(FONT_ENV)
    if not font:
        raise ValueError(f"no font given: pass --font or set {FONT_ENV}")
    if not Path(font).is_file():
        raise FileNotFoundError(f"font not found: {font}")
    return font


def _parse_sets(pairs) -> dict:
    out = {}
    for pair in pairs or []:
        key, sep, value = pair.partition("=")
        if not sep:
            raise ValueError(f"--set expects key=value, got {pair!r}")
        out[key.strip()] = value.strip()
    return out


# ---------------------------------------------------------------------------
# subcommands


def cmd_import_casia(args) -> int:
    from metascript.casia import import_casia

    counts = import_casia(args.gnt_dir, args.root, args.resolution, font=args.font)
    print(
        f"imported {counts['images']} images: {counts['writers']} writers, "
        f"{counts['characters']} characters, {counts['prototypes']} prototypes"
    )
    return 0


def cmd_render_prototypes(args) -> int:
    from metascript.casia import render_prototypes

    text = Path(args.chars_file).read_text(encoding="utf-8") if args.chars_file else (args.chars or "")
    codepoints = sorted({ord(ch) for ch in text if not ch.isspace()})
    if not codepoints:
        raise ValueError("no characters given (use --chars or --chars-file)")
    count = render_prototypes(args.font, codepoints, args.root, args.resolution)
    print(f"rendered {count} of {len(codepoints)} prototypes into {Path(args.root) / 'prototypes'}")
    return 0


def cmd_train(args) -> int:
    from metascript.training import load_config, train

    overrides = _parse_sets(args.set)
    for key in ("name", "seed", "iterations", "dataset_root", "runs_dir", "profile", "font"):
        value = getattr(args, key)
        if value is not None:
            overrides[key] = value
    config = load_config(args.config, overrides)

    def progress(row):
        if row["iter"] % args.log_every == 0 or row["iter"] == config.iterations:
            log.info("iter %d  G %.4f  D %.4f  rec %.4f  D-acc %.2f", row["iter"], row["g_total"], row["d_total"],
                     row["g_rec"], row["d_accuracy"])

    result = train(config, progress=progress)
    print(f"checkpoint: {result.checkpoint}")
    print(f"log: {result.log_path}")
    return 0


def cmd_train_classifier(args) -> int:
    from metascript.evaluation import ClassifierConfig, save_classifier, train_eval_classifier
    from metascript.glyphs import load_dataset

    index = load_dataset(args.dataset, args.resolution)
    config = ClassifierConfig(backbone=args.backbone, steps=args.steps, seed=args.seed)
    model, report = train_eval_classifier(index, config)
    save_classifier(model, args.out)
    print(json.dumps(report) if args.json else " ".join(f"{k}={v:.3f}" for k, v in report.items()))
    return 0


def cmd_eval(args) -> int:
    from metascript.evaluation import evaluate_generator, load_classifier
    from metascript.glyphs import load_dataset
    from metascript.training import load_checkpoint

    ckpt = load_checkpoint(args.checkpoint, with_discriminator=False)
    classifier = load_classifier(args.classifier)
    testset = load_dataset(args.testset, ckpt.model.resolution)
    refs = _read_refs(args.refs, ckpt.model.references, ckpt.model.resolution) if args.refs else None
    metrics = evaluate_generator(ckpt.generator, classifier, testset, refs, seed=args.seed, splits=args.splits)
    if args.json:
        print(json.dumps(metrics))
    else:
        print("RA | IS | FID | n")
        print(f"{100 * metrics['RA']:.1f}% | {metrics['IS']:.3f} | {metrics['FID']:.3f} | {metrics['count']}")
    return 0


def cmd_generate(args) -> int:
    import torch

    from metascript.glyphs import render_prototype, write_glyph
    from metascript.training import load_checkpoint

    ckpt = load_checkpoint(args.checkpoint, with_discriminator=False)
    if len(args.char) != 1:
        raise ValueError("--char takes exactly one character")
    font = _resolve_font(args.font, ckpt)
    refs = _read_refs(args.refs, ckpt.model.references, ckpt.model.resolution)
    template = render_prototype(font, ord(args.char), ckpt.model.resolution)
    with torch.no_grad():
        fake = ckpt.generator(torch.from_numpy(refs[None]), torch.from_numpy(template[None, None]))
    write_glyph(fake[0, 0].numpy(), args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_compose(args) -> int:
    from metascript.training import load_checkpoint
    from metascript.typewriter import Jitter, LayoutSpec, compose

    ckpt = load_checkpoint(args.checkpoint, with_discriminator=False)
    font = _resolve_font(args.font, ckpt)
    text = sys.stdin.read() if args.text == "-" else Path(args.text).read_text(encoding="utf-8")
    refs = _read_refs(args.refs, ckpt.model.references, ckpt.model.resolution)
    spec = LayoutSpec(
        size_c=args.size,
        width_l=args.width,
        line_spacing=args.line_spacing,
        margin=args.margin,
        seed=args.seed,
        jitter=Jitter.none() if args.no_jitter else Jitter(),
    )
    page = compose(refs, text, spec, ckpt.generator, font)
    page.save(args.out)
    print(f"wrote {args.out} ({page.image.shape[1]}x{page.image.shape[0]}, {page.layout.lines} lines)")
    return 0


def cmd_make_toy(args) -> int:
    from metascript.synth import TOY_CHARACTERS, build_toy_font, write_toy_gnt

    out = Path(args.out)
    font = build_toy_font(out / "toy.ttf")
    chars = args.chars or "".join(TOY_CHARACTERS)
    unknown = [ch for ch in chars if ch not in TOY_CHARACTERS]
    if unknown:
        raise ValueError(f"characters not in the toy font: {''.join(unknown)}")
    paths = write_toy_gnt(out / "gnt", font, chars, args.writers, seed=args.seed)
    print(f"font: {font}")
    print(f"gnt: {out / 'gnt'} ({len(paths)} writers, {len(chars)} characters)")
    return 0


def cmd_ablate(args) -> int:
    from metascript.training import format_table, load_config, parse_delta, run_ablation

    overrides = _parse_sets(args.set)
    if args.seed is not None:
        overrides["seed"] = args.seed
    base = load_config(args.config, overrides)
    matrix = [parse_delta(d) for d in args.delta]
    evaluate = None
    if args.classifier and args.testset:
        from metascript.evaluation import evaluate_generator, load_classifier
        from metascript.glyphs import load_dataset
        from metascript.training import load_checkpoint

        classifier = load_classifier(args.classifier)

        def evaluate(path, config):
            ckpt = load_checkpoint(path, with_discriminator=False)
            testset = load_dataset(args.testset, ckpt.model.resolution)
            return evaluate_generator(ckpt.generator, classifier, testset, seed=config.seed)

    rows = run_ablation(base, matrix, evaluate=evaluate)
    print(json.dumps(rows, indent=2) if args.json else format_table(rows, ("RA", "IS", "FID", "g_rec")))
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metascript", description=__doc__.splitlines()[0] if __doc__ else None)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    p = sub.add_parser("import-casia", help="convert CASIA .gnt files into the PNG dataset layout")
    p.add_argument("gnt_dir", help="directory of .gnt files, one per writer")
    p.add_argument("root", help="dataset root to write writers/ (and prototypes/) into")
    p.add_argument("--font", help="standard font; when given, prototypes are rendered for every imported character")
    p.add_argument("--resolution", type=int, default=128, help="canonical glyph side (default 128)")
    p.set_defaults(func=cmd_import_casia)

    p = sub.add_parser("render-prototypes", help="render standard-font prototypes into <root>/prototypes")
    p.add_argument("--font", required=True, help="font file")
    p.add_argument("--root", required=True, help="dataset root")
    p.add_argument("--chars", help="characters to render")
    p.add_argument("--chars-file", help="UTF-8 file with characters to render")
    p.add_argument("--resolution", type=int, default=128, help="glyph side (default 128)")
    p.set_defaults(func=cmd_render_prototypes)

    p = sub.add_parser("train", help="train generator and discriminator")
    p.add_argument("--config", help="flat 'key = value' config file")
    p.add_argument("--name", help="run name (checkpoints go to <runs dir>/<name>)")
    p.add_argument("--seed", type=int, help="random seed for sampling and initialization")
    p.add_argument("--iterations", type=int, help="number of training iterations")
    p.add_argument("--dataset-root", dest="dataset_root", help="dataset root")
    p.add_argument("--runs-dir", dest="runs_dir", help="runs directory (default $METASCRIPT_RUNS_DIR or ./runs)")
    p.add_argument("--profile", choices=["paper", "desk"], help="network size profile")
    p.add_argument("--font", help="prototype font recorded in the checkpoint for later composition")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key (repeatable)")
    p.add_argument("--log-every", type=int, default=50, help="progress log cadence in iterations")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("train-classifier", help="train the character classifier used by eval")
    p.add_argument("--dataset", required=True, help="dataset root")
    p.add_argument("--out", required=True, help="classifier checkpoint path")
    p.add_argument("--resolution", type=int, default=128, help="glyph side the classifier sees")
    p.add_argument("--backbone", default="small", choices=["small", "efficientnet_v2_s"], help="feature network")
    p.add_argument("--steps", type=int, default=400, help="optimizer steps")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--json", action="store_true", help="machine-readable output")
    p.set_defaults(func=cmd_train_classifier)

    p = sub.add_parser("eval", help="RA / IS / FID of a generator on a test set")
    p.add_argument("--checkpoint", required=True, help="generator checkpoint")
    p.add_argument("--classifier", required=True, help="classifier checkpoint")
    p.add_argument("--testset", required=True, help="dataset root of the test writers")
    p.add_argument("--refs", help="directory of reference images used for every test writer")
    p.add_argument("--seed", type=int, default=0, help="seed for per-writer reference draws")
    p.add_argument("--splits", type=int, default=1, help="inception score splits (default 1)")
    p.add_argument("--json", action="store_true", help="machine-readable output")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("generate", help="generate a single character")
    p.add_argument("--checkpoint", required=True, help="generator checkpoint")
    p.add_argument("--refs", required=True, help="directory of reference images")
    p.add_argument("--char", required=True, help="character to generate")
    p.add_argument("--font", help=f"prototype font (default: checkpoint's, then ${FONT_ENV})")
    p.add_argument("--out", required=True, help="output PNG")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("compose", help="typeset text into a handwritten page")
    p.add_argument("--checkpoint", required=True, help="generator checkpoint")
    p.add_argument("--refs", required=True, help="directory of reference images")
    p.add_argument("--text", required=True, help="UTF-8 text file, or - for stdin")
    p.add_argument("--font", help=f"prototype and punctuation font (default: checkpoint's, then ${FONT_ENV})")
    p.add_argument("--size", type=int, default=64, help="character cell size in pixels")
    p.add_argument("--width", type=int, default=1024, help="line width in pixels")
    p.add_argument("--line-spacing", type=float, default=1.15, help="line advance as a multiple of --size")
    p.add_argument("--margin", type=int, default=32, help="page margin in pixels")
    p.add_argument("--seed", type=int, default=7, help="jitter seed")
    p.add_argument("--no-jitter", action="store_true", help="disable random glyph transforms")
    p.add_argument("--out", required=True, help="output PNG")
    p.set_defaults(func=cmd_compose)

    p = sub.add_parser("make-toy", help="write the synthetic toy font and GNT files for testing")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--chars", help="subset of toy characters (default: all)")
    p.add_argument("--writers", type=int, default=2, help="number of synthetic writers")
    p.add_argument("--seed", type=int, default=0, help="writer style seed")
    p.set_defaults(func=cmd_make_toy)

    p = sub.add_parser("ablate", help="train one run per ablation delta and print a results table")
    p.add_argument("--config", help="base config file")
    p.add_argument("--delta", action="append", required=True,
                   help="'baseline', 'remove=<adv|cls|str|sty|rec>' or 'key=value[,key=value]' (repeatable)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a base config key (repeatable)")
    p.add_argument("--seed", type=int, help="random seed")
    p.add_argument("--classifier", help="classifier checkpoint for RA/IS/FID columns")
    p.add_argument("--testset", help="test dataset root for RA/IS/FID columns")
    p.add_argument("--json", action="store_true", help="machine-readable output")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError, RuntimeError) as err:
        message = err.args[0] if isinstance(err, KeyError) and err.args else err
        print(f"metascript {args.command}: error: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
