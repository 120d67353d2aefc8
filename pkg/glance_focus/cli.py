"""
Command line surface: gen, train, eval, attn and ablate.

stdout carries only machine-readable lines: first ``config<TAB>{json}``,
then ``metric<TAB>value`` results. Progress logging goes to stderr.
Exit codes: 0 success, 2 usage or contract error, 1 internal failure.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ValidationError

from glance_focus import numerics as nx
from glance_focus.episodes import (
    Dataset,
    Vocabulary,
    generate_episodes,
    oracle_answer,
    read_dataset,
    split_heldout,
    write_dataset,
)
from glance_focus.errors import ContractError, GlanceFocusError, TrainingDivergedError
from glance_focus.focus import AttentionMaps, export_attention
from glance_focus.model import GlanceFocusModel
from glance_focus.models import GeneratorConfig, TrainConfig
from glance_focus.trainer import (
    Trainer,
    build_samples,
    collate,
    evaluate,
    evaluate_events,
    load_checkpoint,
    run_module_ablation,
)

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_INTERNAL, EXIT_USAGE = 0, 1, 2


def emit(metric: str, value) -> None:
    if isinstance(value, float):
        value = format(value, ".12g")
    print(f"{metric}\t{value}")


def emit_config(config: BaseModel) -> None:
    print(f"config\t{json.dumps(json.loads(config.model_dump_json()), sort_keys=True)}")


# ---------------------------------------------------------------------------
# gen
# ---------------------------------------------------------------------------

def cmd_gen(args: argparse.Namespace) -> int:
    config = GeneratorConfig(
        frames=args.frames, dim=args.dim, classes=args.classes,
        events_min=args.events_min, events_max=args.events_max,
        noise=args.noise, seed=args.seed,
        min_width=args.min_width, max_width=args.max_width, time_buckets=args.time_buckets,
    )
    emit_config(config)
    if args.episodes < 1:
        raise ContractError("--episodes must be positive")
    episodes = generate_episodes(config, args.episodes)
    write_dataset(args.out, episodes, Vocabulary.build(config), config, labels=not args.no_labels)

    counts = pd.Series([qa.qtype for e in episodes for qa in e.qas], dtype="object").value_counts()
    emit("episodes", len(episodes))
    emit("questions", int(counts.sum()))
    for qtype in sorted(counts.index):
        emit(f"questions/{qtype}", int(counts[qtype]))
    return EXIT_OK


# ---------------------------------------------------------------------------
# train / eval
# ---------------------------------------------------------------------------

def _train_config(args: argparse.Namespace, dataset: Dataset) -> TrainConfig:
    return TrainConfig(
        mode="supervised" if args.mode == "sup" else "unsupervised",
        architecture=args.architecture,
        num_memories=args.memories,
        num_classes=args.classes if args.classes is not None else dataset.generator.classes,
        model_dim=args.model_dim, layers=args.layers, heads=args.heads, dropout=args.dropout,
        lambda_cert=args.lambda_cert, lambda_cls=args.lambda_cls,
        lambda_iou=args.lambda_iou, lambda_l1=args.lambda_l1,
        no_event_weight=args.no_event_weight,
        learning_rate=args.lr, clip_norm=args.clip_norm,
        epochs=args.epochs, batch_size=args.batch_size, seed=args.seed,
        heldout_fraction=args.heldout_fraction,
        data_dir=str(args.data), checkpoint_path=str(args.out) if getattr(args, "out", None) else None,
    )


def _check_compatible(model: GlanceFocusModel, dataset: Dataset) -> None:
    if (model.feature_dim, model.vocab_size, model.answer_count) != (
            dataset.feature_dim, dataset.vocabulary.size, dataset.vocabulary.answer_count):
        raise ContractError(
            f"checkpoint expects features {model.feature_dim}, {model.vocab_size} tokens, {model.answer_count} answers; "
            f"data has {dataset.feature_dim}, {dataset.vocabulary.size}, {dataset.vocabulary.answer_count}"
        )


def _require_labels(config: TrainConfig, dataset: Dataset) -> None:
    if config.mode == "supervised" and not dataset.labeled:
        raise ContractError(f"supervised mode needs event labels; {config.data_dir} has none")


def cmd_train(args: argparse.Namespace) -> int:
    dataset = read_dataset(args.data)
    if args.resume:
        trainer = Trainer.from_checkpoint(args.resume)
        config = trainer.config
        _check_compatible(trainer.model, dataset)
    else:
        config = _train_config(args, dataset)
        trainer = None
    emit_config(config)
    _require_labels(config, dataset)

    train_episodes, heldout_episodes = split_heldout(dataset.episodes, config.heldout_fraction)
    train_samples, heldout_samples = build_samples(train_episodes), build_samples(heldout_episodes)
    if trainer is None:
        model = GlanceFocusModel(config, dataset.feature_dim, dataset.vocabulary.size, dataset.vocabulary.answer_count)
        trainer = Trainer(config, model)
    logger.info(f"🔧 Training on {len(train_samples)} questions, holding out {len(heldout_samples)}")

    trainer.fit(train_samples, heldout_samples, checkpoint_path=args.out)
    trainer.save_checkpoint(args.out)
    metrics = evaluate(heldout_samples, trainer.model)
    for metric, value in metrics.lines(per_type=True):
        emit(f"heldout/{metric}", value)
    return EXIT_OK


def _split(dataset: Dataset, config: TrainConfig, which: str):
    train, heldout = split_heldout(dataset.episodes, config.heldout_fraction)
    return {"train": train, "heldout": heldout, "all": list(dataset.episodes)}[which]


def cmd_eval(args: argparse.Namespace) -> int:
    checkpoint = load_checkpoint(args.ckpt)
    emit_config(checkpoint.config)
    dataset = read_dataset(args.data)
    trainer = Trainer.from_checkpoint(args.ckpt)
    _check_compatible(trainer.model, dataset)

    episodes = _split(dataset, checkpoint.config, args.split)
    metrics = evaluate(build_samples(episodes), trainer.model)
    if checkpoint.config.mode == "supervised" and all(e.labeled for e in episodes):
        metrics.event_accuracy, metrics.temporal_l1 = evaluate_events(episodes, trainer.model)
    for metric, value in metrics.lines(per_type=args.per_type):
        emit(metric, value)
    return EXIT_OK


# ---------------------------------------------------------------------------
# attn
# ---------------------------------------------------------------------------

def cmd_attn(args: argparse.Namespace) -> int:
    checkpoint = load_checkpoint(args.ckpt)
    emit_config(checkpoint.config)
    if checkpoint.config.architecture != "glance_focus":
        raise ContractError(f"architecture '{checkpoint.config.architecture}' has no focus cascade to export")
    dataset = read_dataset(args.data)
    trainer = Trainer.from_checkpoint(args.ckpt)
    model = trainer.model
    _check_compatible(model, dataset)

    episode = dataset.episode(args.episode)
    if not 0 <= args.question < len(episode.qas):
        raise ContractError(f"episode {episode.id} has {len(episode.qas)} questions; index {args.question} is out of range")
    sample = build_samples([episode])[args.question]
    batch = collate([sample])

    model.eval()
    with nx.no_grad():
        out = model.forward_batch(batch)
    last = out.cross_weights[-1]
    maps = AttentionMaps(
        memory=last.memory.values[0],
        frame=last.frame.values[0],
        sort_order=out.prompt.sort_order[0],
        spans=out.bank.spans.values[0],
    )
    export_attention(args.out, maps)

    vocabulary = dataset.vocabulary
    predicted = int(out.answers[0])
    oracle = oracle_answer(episode.events, sample.qa.question, vocabulary) if episode.events else None
    emit("question", " ".join(vocabulary.decode(sample.qa.question)))
    emit("predicted", vocabulary.answers[predicted])
    emit("oracle", vocabulary.answers[oracle] if oracle is not None else vocabulary.answers[sample.qa.answer])
    emit("order", " ".join(str(int(i)) for i in maps.sort_order))
    emit("spans", " ".join(f"{c:.6f}:{w:.6f}" for c, w in maps.spans))
    return EXIT_OK


# ---------------------------------------------------------------------------
# ablate
# ---------------------------------------------------------------------------

def cmd_ablate(args: argparse.Namespace) -> int:
    dataset = read_dataset(args.data)
    config = _train_config(args, dataset)
    emit_config(config)
    _require_labels(config, dataset)
    train, heldout = split_heldout(dataset.episodes, config.heldout_fraction)
    seeds = [config.seed + k for k in range(args.seeds)]
    table = run_module_ablation(config, build_samples(train), build_samples(heldout), dataset.feature_dim,
                                dataset.vocabulary.size, dataset.vocabulary.answer_count, seeds)
    for row in table.itertuples(index=False):
        emit(f"ordering_accuracy/glance_focus/seed{row.seed}", float(row.glance_focus))
        emit(f"ordering_accuracy/glance_only/seed{row.seed}", float(row.glance_only))
        emit(f"margin/seed{row.seed}", float(row.margin))
    emit("positive_margins", int((table["margin"] > 0).sum()))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_model_flags(parser: argparse.ArgumentParser) -> None:
    defaults = TrainConfig()
    parser.add_argument("--data", type=Path, required=True, help="dataset directory written by gen")
    parser.add_argument("--mode", choices=["uns", "sup"], default="uns")
    parser.add_argument("--architecture", choices=["glance_focus", "glance_only", "no_memory"], default=defaults.architecture)
    parser.add_argument("--memories", type=int, default=defaults.num_memories, help="event memories N")
    parser.add_argument("--classes", type=int, default=None, help="event classes C (default: the generator's)")
    parser.add_argument("--model-dim", type=int, default=defaults.model_dim)
    parser.add_argument("--layers", type=int, default=defaults.layers)
    parser.add_argument("--heads", type=int, default=defaults.heads)
    parser.add_argument("--dropout", type=float, default=defaults.dropout)
    parser.add_argument("--lambda-cert", type=float, default=defaults.lambda_cert)
    parser.add_argument("--lambda-cls", type=float, default=defaults.lambda_cls)
    parser.add_argument("--lambda-iou", type=float, default=defaults.lambda_iou)
    parser.add_argument("--lambda-l1", type=float, default=defaults.lambda_l1)
    parser.add_argument("--no-event-weight", type=float, default=defaults.no_event_weight)
    parser.add_argument("--lr", type=float, default=defaults.learning_rate)
    parser.add_argument("--clip-norm", type=float, default=defaults.clip_norm)
    parser.add_argument("--epochs", type=int, default=defaults.epochs)
    parser.add_argument("--batch-size", type=int, default=defaults.batch_size)
    parser.add_argument("--seed", type=int, default=defaults.seed)
    parser.add_argument("--heldout-fraction", type=float, default=defaults.heldout_fraction)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="glance-focus", description="Event-memory video QA on synthetic episodes")
    sub = parser.add_subparsers(dest="command", required=True)

    defaults = GeneratorConfig()
    gen = sub.add_parser("gen", help="generate a synthetic dataset")
    gen.add_argument("--out", type=Path, required=True)
    gen.add_argument("--episodes", type=int, default=100)
    gen.add_argument("--frames", type=int, default=defaults.frames)
    gen.add_argument("--dim", type=int, default=defaults.dim)
    gen.add_argument("--classes", type=int, default=defaults.classes)
    gen.add_argument("--events-min", type=int, default=defaults.events_min)
    gen.add_argument("--events-max", type=int, default=defaults.events_max)
    gen.add_argument("--noise", type=float, default=defaults.noise)
    gen.add_argument("--seed", type=int, default=defaults.seed)
    gen.add_argument("--min-width", type=float, default=defaults.min_width)
    gen.add_argument("--max-width", type=float, default=defaults.max_width)
    gen.add_argument("--time-buckets", type=int, default=defaults.time_buckets)
    gen.add_argument("--no-labels", action="store_true", help="omit event annotations")
    gen.set_defaults(handler=cmd_gen)

    train = sub.add_parser("train", help="train a model")
    _add_model_flags(train)
    train.add_argument("--out", type=Path, required=True, help="checkpoint file")
    train.add_argument("--resume", type=Path, default=None, help="continue from this checkpoint")
    train.set_defaults(handler=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a checkpoint")
    ev.add_argument("--data", type=Path, required=True)
    ev.add_argument("--ckpt", type=Path, required=True)
    ev.add_argument("--per-type", action="store_true")
    ev.add_argument("--split", choices=["heldout", "train", "all"], default="heldout")
    ev.set_defaults(handler=cmd_eval)

    attn = sub.add_parser("attn", help="export cascade attention for one question")
    attn.add_argument("--data", type=Path, required=True)
    attn.add_argument("--ckpt", type=Path, required=True)
    attn.add_argument("--episode", required=True)
    attn.add_argument("--question", type=int, required=True)
    attn.add_argument("--out", type=Path, required=True)
    attn.set_defaults(handler=cmd_attn)

    ablate = sub.add_parser("ablate", help="cascade vs standard cross-attention on ordering questions")
    _add_model_flags(ablate)
    ablate.add_argument("--seeds", type=int, default=3)
    ablate.set_defaults(handler=cmd_ablate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE

    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args)
    except TrainingDivergedError as exc:
        logger.error(f"❌ Training diverged: {exc} {exc.components}")
        return EXIT_INTERNAL
    except (GlanceFocusError, ValidationError, OSError) as exc:
        logger.error(f"❌ {exc}")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception:
        logger.exception("❌ Internal failure")
        return EXIT_INTERNAL
