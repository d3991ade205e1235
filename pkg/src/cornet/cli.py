"""Command-line harness: ``synth``, ``train``, ``eval`` and ``cooc``.

Exit codes: 0 success, 1 runtime failure, 2 usage or parse failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .annotations import AnnotationError, corpus_cooccurrence, load_annotations
from .embeddings import EmbeddingError
from .numcore import ShapeError
from .synth import SpecError, generate_dataset, load_spec, read_corpus, write_corpus
from .training import ConfigError, RunConfig, evaluate, load_checkpoint, train

log = logging.getLogger("cornet")


class UsageError(Exception):
    pass


def cmd_synth(args) -> None:
    try:
        spec = load_spec(args.spec)
    except (SpecError, OSError) as exc:
        raise UsageError(str(exc)) from None
    corpus = generate_dataset(spec)
    manifest = write_corpus(corpus, args.out, spec)
    print(f"wrote {len(manifest['files'])} files to {args.out}")


def _resolve(base: Path, path: str | None) -> Path | None:
    if path is None:
        return None
    p = Path(path)
    return p if p.is_absolute() else base / p


def cmd_train(args) -> None:
    try:
        config = RunConfig.load(args.config)
    except (ConfigError, TypeError, OSError) as exc:
        raise UsageError(str(exc)) from None
    base = Path(args.config).resolve().parent
    data = _resolve(base, config.data)
    if data is None or not data.is_dir():
        raise UsageError(f"data directory {data} does not exist")
    embeddings = _resolve(base, config.embeddings)
    if embeddings is not None and not embeddings.exists():
        raise UsageError(f"embeddings file {embeddings} does not exist")
    corpus = read_corpus(data, config.normalize_embeddings, embeddings)
    if "train" not in corpus.splits:
        corpus.splits = {"train": corpus.splits.pop("all")}
    result = train(config, corpus, args.out)
    if result.best_checkpoint is not None:
        print(f"best checkpoint: {result.best_checkpoint}")
    else:
        print(f"finished {config.epochs} epochs (no validation split)")


def cmd_eval(args) -> None:
    ckpt = load_checkpoint(args.checkpoint)
    corpus = read_corpus(args.data)
    videos = corpus.val or corpus.videos()
    if list(corpus.vocab.labels) != list(ckpt.labels):
        raise ShapeError(f"head.weight: checkpoint predicts {len(ckpt.labels)} classes "
                         f"{list(ckpt.labels)[:3]}..., data has {len(corpus.vocab)}")
    for video in videos:
        if video.features.shape[1] != ckpt.encoder.d_in:
            raise ShapeError(f"encoder.0.weight: expects feature width {ckpt.encoder.d_in}, "
                             f"video {video.video_id} has {video.features.shape[1]}")
    report = evaluate(ckpt.params, videos, ckpt.encoder, ckpt.labels,
                      seed=ckpt.config.seed, config_digest=ckpt.config_digest)
    Path(args.report).write_text(report.to_json())
    print(f"mAP {report.map:.6f} over {report.frames} frames")


def cmd_cooc(args) -> None:
    seqs, vocab = load_annotations(args.annotations, args.vocab)
    if not seqs:
        raise AnnotationError(f"{args.annotations}: no sequences")
    corpus_cooccurrence(seqs, vocab).to_csv(args.out, vocab)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cornet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a COR Network")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="per-frame mAP of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cooc", help="dump the corpus co-occurrence matrix as CSV")
    p.add_argument("--annotations", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cooc)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        print(f"cornet {args.command}: {exc}", file=sys.stderr)
        return 2
    except (AnnotationError, EmbeddingError, ShapeError, ConfigError, OSError, ValueError) as exc:
        print(f"cornet {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
