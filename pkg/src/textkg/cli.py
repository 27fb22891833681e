"""Command-line entry point: ``textkg <command> [options]``.

Every command exits 0 on success.  On failure it prints one tab-separated
line ``error<TAB>command<TAB>kind<TAB>message`` to stderr and exits 2.
``grad-check`` exits 1 when the check itself fails.
"""

import argparse
import logging
import os
import sys
from dataclasses import replace

from . import __version__, gradcheck, metrics, pipeline, synthetic
from .config import ConfigError, RunConfig
from .data import DatasetManifest, ManifestError, load_manifest
from .knowledge import GENERAL, SPECIFIC, KGFormatError, merge_graphs, write_kg
from .model import CheckpointError, TextKGModel, greedy_decode
from .optim import TrainingDivergence
from .training import AblationError, train

log = logging.getLogger("textkg")

EXPECTED_ERRORS = (ConfigError, ManifestError, KGFormatError, CheckpointError, AblationError,
                   TrainingDivergence, metrics.EvaluationError, ValueError, KeyError, OSError)

SWITCH_FLAGS = {
    "no_video": "use_video",
    "no_regions": "use_regions",
    "no_text": "use_text",
    "no_general_kg": "use_general_kg",
    "no_specific_kg": "use_specific_kg",
    "no_knowledge_selection": "use_knowledge_selection",
}


class CommandError(Exception):
    pass


# ------------------------------------------------------------------ config helpers


def load_config(args, required=True):
    if getattr(args, "config", None):
        config = RunConfig.load(args.config)
    elif required:
        raise CommandError("--config is required for this command")
    else:
        config = RunConfig()
    if getattr(args, "seed", None) is not None:
        config.train.seed = args.seed
    if getattr(args, "epochs", None) is not None:
        config.train.epochs = args.epochs
    off = {field: False for flag, field in SWITCH_FLAGS.items() if getattr(args, flag, False)}
    if getattr(args, "no_kg", False):
        off.update(use_general_kg=False, use_specific_kg=False)
    config.train.switches = replace(config.train.switches, **off)
    return config.validate()


def split_manifest(manifest, split):
    if split in (None, "all"):
        return manifest
    return DatasetManifest([v for v in manifest.videos if v.split == split], manifest.root)


# ------------------------------------------------------------------ commands


def cmd_build_kg(args):
    config = load_config(args)
    sw = config.train.switches
    paths = config.paths
    manifest = load_manifest(args.manifest or paths.manifest)
    if sw.use_specific_kg and not paths.lexicon:
        raise CommandError("specific KG mining needs paths.lexicon (or pass --no-specific-kg)")
    general_path = paths.general_kg if sw.use_general_kg else ""
    lexicon_path = paths.lexicon if sw.use_specific_kg else ""
    has_text = any(c.transcript for _, c in manifest.clips())
    if not general_path and not has_text:
        raise CommandError("no general KG file and no transcripts to mine")
    general, specific = pipeline.build_graphs(manifest, general_path, lexicon_path)
    kg = merge_graphs(general, specific)
    out = args.out or os.path.join(paths.out_dir, "kg.tsv")
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    write_kg(kg, out)
    counts = kg.source_counts()
    print(f"triples\t{len(kg)}")
    for source in (GENERAL, SPECIFIC):
        print(f"source\t{source}\t{counts.get(source, 0)}")
    print(f"relations\t{len(kg.relation_set)}")
    print(f"written\t{out}")
    return 0


def cmd_train(args):
    config = load_config(args)
    out_dir = args.out or config.paths.out_dir
    res = pipeline.load_resources(config, args.manifest)
    clips = pipeline.prepare_clips(res, config, "train")
    model = pipeline.new_model(res, config)
    report = train(model, clips, config.train, out_dir)
    config.save(os.path.join(out_dir, "config.json"))
    final = report.epoch_loss[-1] if report.epoch_loss else float("nan")
    print(f"clips\t{len(clips)}")
    print(f"steps\t{report.steps}")
    print(f"final_loss\t{final!r}")
    print(f"wall_time\t{report.wall_time:.3f}")
    print(f"checkpoint\t{report.checkpoint}")
    return 0


def cmd_caption(args):
    config = load_config(args)
    res = pipeline.load_resources(config)
    model = TextKGModel.load(args.checkpoint, res.table, config.model)
    expected = pipeline.build_vocab(res.manifest, config.min_word_count)
    if model.vocab != expected:
        raise CheckpointError(f"vocabulary mismatch: checkpoint has {len(model.vocab)} words, "
                              f"config corpus gives {len(expected)}")
    if args.manifest:
        res.manifest = load_manifest(args.manifest)
    predictions = {}
    split = None if args.split == "all" else args.split
    for clip in pipeline.prepare_clips(res, config, split):
        predictions[(clip.video_id, clip.clip_id)] = greedy_decode(model, clip)
    out = args.out or os.path.join(config.paths.out_dir, "predictions.tsv")
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    metrics.write_predictions(out, predictions)
    print(f"clips\t{len(predictions)}")
    print(f"written\t{out}")
    return 0


def cmd_evaluate(args):
    manifest_path = args.manifest
    if not manifest_path:
        manifest_path = load_config(args, required=False).paths.manifest
    if not manifest_path:
        raise CommandError("--manifest or a config with paths.manifest is required")
    manifest = split_manifest(load_manifest(manifest_path), args.split)
    report = metrics.evaluate(metrics.read_predictions(args.predictions), manifest, args.mode)
    print(report.table())
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, f"report_{args.mode}.txt"), "w", encoding="utf-8") as fh:
            fh.write(report.table() + "\n")
        with open(os.path.join(args.out, f"report_{args.mode}.tsv"), "w", encoding="utf-8") as fh:
            fh.write("".join(line + "\n" for line in report.lines()))
    return 0


def cmd_gen_synthetic(args):
    seed = 0 if args.seed is None else args.seed
    path = synthetic.generate(args.out, seed=seed, videos=args.videos, clips=args.clips,
                              heldout_videos=args.heldout_videos, heldout_clips=args.heldout_clips)
    manifest = load_manifest(path)
    print(f"clips\t{len(manifest.clips())}")
    print(f"manifest\t{path}")
    print(f"config\t{os.path.join(args.out, 'config.json')}")
    return 0


def cmd_grad_check(args):
    model = load_config(args).model if args.config else None
    seed = 0 if args.seed is None else args.seed
    report = gradcheck.grad_check(model, seed=seed)
    print("group\tsize\tchecked\tmax_rel_error\tstatus")
    for line in report.lines():
        print(line)
    print(f"seconds\t{report.seconds:.2f}")
    return 0 if report.passed else 1


# ------------------------------------------------------------------ parser


def _add_switches(p):
    for flag in SWITCH_FLAGS:
        p.add_argument("--" + flag.replace("_", "-"), action="store_true")
    p.add_argument("--no-kg", action="store_true", help="shorthand for both KG switches")


def build_parser():
    parser = argparse.ArgumentParser(prog="textkg", description="Two-stream knowledge-augmented video captioning")
    parser.add_argument("--version", action="version", version=f"textkg {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-kg", help="mine the specific KG, merge with the general KG, write TSV")
    p.add_argument("--config", required=True)
    p.add_argument("--manifest")
    p.add_argument("--out", help="output TSV path")
    _add_switches(p)
    p.set_defaults(func=cmd_build_kg)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--manifest")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", help="output directory")
    _add_switches(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("caption", help="greedy-decode a caption for every clip")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", help="clips to caption (default: the config manifest)")
    p.add_argument("--split", default="all", help="train, test or all")
    p.add_argument("--out", help="predictions file")
    _add_switches(p)
    p.set_defaults(func=cmd_caption)

    p = sub.add_parser("evaluate", help="score a predictions file")
    p.add_argument("--predictions", required=True)
    p.add_argument("--manifest")
    p.add_argument("--config")
    p.add_argument("--split", default="all")
    p.add_argument("--mode", choices=("micro", "paragraph"), default="micro")
    p.add_argument("--out", help="directory for report files")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gen-synthetic", help="write a deterministic toy corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--videos", type=int, default=4)
    p.add_argument("--clips", type=int, default=2)
    p.add_argument("--heldout-videos", type=int, default=0)
    p.add_argument("--heldout-clips", type=int, default=2)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("grad-check", help="finite-difference check of all parameter gradients")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_grad_check)
    return parser


def _one_line(text):
    return " ".join(str(text).split())


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CommandError, *EXPECTED_ERRORS) as exc:
        kind = "usage" if isinstance(exc, CommandError) else type(exc).__name__
        message = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error\t{args.command}\t{kind}\t{_one_line(message)}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
