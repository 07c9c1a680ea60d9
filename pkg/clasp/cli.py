"""The ``clasp`` command: gen, train, eval and inspect."""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from .batching import BuildStats, build_batch, generate_examples
from .config import Config
from .errors import ClaspError, ConfigError, config_hash_mismatch
from .evaluation import evaluate_suite
from .gradcheck import run_suite
from .text import Token, detokenize
from .toyworld import oracle_encoders
from .training import Checkpoint, train, write_metrics

if TYPE_CHECKING:
    from collections.abc import Callable, Sequence

    from .batching import Corpus, TrainingExample
    from .text import TaggedSentence

logger = logging.getLogger(__name__)

IO_EXIT_CODE = 2


def _percent(value: float) -> str:
    return f"{100 * value:.1f}%"


def _render_stats(stats: BuildStats) -> str:
    lines = [
        f"built {stats.built}",
        f"skipped {stats.skipped} ({_percent(stats.skip_rate)})",
        f"degraded {stats.degraded} ({_percent(stats.degraded_rate)})",
        "tag usage:",
    ]
    width = max(map(len, stats.tags), default=0)
    lines.extend(
        f"  {tag.ljust(width)}  {count}" for tag, count in sorted(stats.tags.items())
    )
    return "\n".join(lines) + "\n"


def cmd_gen(config: Config, args: argparse.Namespace) -> int:
    corpus = config.corpus()
    cfg = config.generation_config()
    config_hash, seed = config.digest(), config["seed"]
    out = Path(args.out or config["out"])
    stats = BuildStats()
    with out.open("w", encoding="utf-8") as handle:
        for example in generate_examples(
            corpus,
            args.count,
            cfg,
            seed,
            batch_size=config.train_config().batch_size,
            stats=stats,
        ):
            record = {"config_hash": config_hash, "seed": seed}
            record |= example.to_record(corpus)
            handle.write(json.dumps(record, sort_keys=True) + "\n")
    sys.stdout.write(_render_stats(stats))
    return 0


def cmd_train(config: Config, args: argparse.Namespace) -> int:
    corpus = config.corpus()
    cfg = config.train_config()
    resume = Checkpoint.load(args.resume) if args.resume else None
    result = train(corpus, cfg, resume=resume, until=args.until, config_hash=config.digest())

    checkpoint_path = args.checkpoint or config["checkpoint"]
    result.checkpoint.save(checkpoint_path)
    write_metrics(
        config["metrics"], result.metrics, config_hash=config.digest(), seed=cfg.seed
    )
    final = result.final
    sys.stdout.write(f"checkpoint {checkpoint_path} at step {result.checkpoint.step}\n")
    if final is not None:
        sys.stdout.write(
            f"final loss total={final.loss_total:.6f} cont={final.loss_cont:.6f} "
            f"sneg={final.loss_sneg:.6f} uni={final.loss_uni:.6f}\n"
        )
    return 0


def cmd_eval(config: Config, args: argparse.Namespace) -> int:
    if args.suite == "gradcheck":
        report = run_suite(config["seed"], repeats=args.repeats)
        sys.stdout.write(report.render())
        report.raise_on_failure()
        return 0

    if not config.uses_toy_world:
        raise ConfigError("The toy suite needs the toy world; leave 'corpus' empty.")
    world = config.toy_world()
    config_hash = config.digest()
    if args.oracle:
        encoders = oracle_encoders(world, ngram=config.train_config().ngram)
    else:
        checkpoint = Checkpoint.load(args.checkpoint or config["checkpoint"])
        if checkpoint.config_hash != config_hash:
            if not args.force:
                raise config_hash_mismatch(config_hash, checkpoint.config_hash)
            logger.warning(
                "Evaluating checkpoint with config hash %s under %s (--force)",
                checkpoint.config_hash,
                config_hash,
            )
        encoders = checkpoint.encoders

    report = evaluate_suite(encoders, world.suite, config_hash=config_hash, seed=config["seed"])
    Path(args.report or config["report"]).write_text(report.to_json(), encoding="utf-8")
    sys.stdout.write(report.render_table())
    return 0


def _highlight(sentence: "TaggedSentence", words: dict[int, str]) -> str:
    """The sentence with the token at each index replaced by ``[[word]]``."""
    tokens: list[Token] = list(sentence.tokens)
    for index, word in words.items():
        tokens[index] = Token(f"[[{word}]]", tokens[index].tag, tokens[index].spaced)
    return detokenize(tokens)


def _render_trace(corpus: "Corpus", index: int, example: "TrainingExample | None") -> str:
    item = corpus[index]
    lines = [f"id: {item.id}", "sentences:"]
    lines.extend(f"  {n}. {s}" for n, s in enumerate(item.caption.sentences, 1))
    lines.append(
        "tags: " + " ".join(f"{t.surface}/{t.tag.value}" for t in item.first_tagged.tokens)
    )
    if example is None:
        lines.append("swap: none possible")
        return "\n".join(lines) + "\n"

    prov = example.provenance
    swap = example.negative.swapped
    if prov is not None and prov.index_b is not None:
        partner = corpus[prov.index_b]
        shared = ", ".join(sorted(example.shared_nouns)) or "-"
        lines.append(f"partner: {partner.id} (shared nouns: {shared})")
        order = "-" if example.order is None else example.order.value
        lines.append(f"order: {order}")
        negative = " ".join((
            _highlight(item.first_tagged, {swap.index_a: swap.word_b}),
            _highlight(partner.first_tagged, {swap.index_b: swap.word_a}),
        ))
    else:
        negative = _highlight(
            item.first_tagged, {swap.index_a: swap.word_b, swap.index_b: swap.word_a}
        )

    tag = "fallback" if swap.tag is None else swap.tag.value
    lines.append(f"swap: {tag} {swap.word_a!r} <-> {swap.word_b!r}")
    lines.append("positives:")
    lines.extend(f"  p{n}: {text}" for n, text in enumerate(example.positives.texts, 1))
    lines.append(f"negative: {negative}")
    if example.degraded:
        lines.append("degraded: yes")
    return "\n".join(lines) + "\n"


def cmd_inspect(config: Config, args: argparse.Namespace) -> int:
    corpus = config.corpus()
    index = 0 if args.id is None else corpus.index_of(args.id)
    rng = np.random.default_rng(config["seed"])
    built = build_batch(corpus, [index], config.generation_config(), rng)
    sys.stdout.write(_render_trace(corpus, index, built[0] if built else None))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clasp",
        description="Compositional fine-tuning data, losses and toy training.",
    )
    parser.add_argument("--config", type=Path, help="Flat 'key = value' config file.")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override one config key; may repeat.",
    )
    parser.add_argument("--seed", type=int, help="Master seed, same as --set seed=N.")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging.")
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen", help="Write training examples as JSONL.")
    gen.add_argument("--count", type=int, default=16)
    gen.add_argument("--out", help="Output path; defaults to the 'out' key.")
    gen.set_defaults(handler=cmd_gen)

    train_cmd = commands.add_parser("train", help="Train the toy encoders.")
    train_cmd.add_argument("--resume", type=Path, help="Continue from a checkpoint.")
    train_cmd.add_argument("--until", type=int, help="Stop before this step.")
    train_cmd.add_argument("--checkpoint", help="Defaults to the 'checkpoint' key.")
    train_cmd.set_defaults(handler=cmd_train)

    eval_cmd = commands.add_parser("eval", help="Score a checkpoint or check gradients.")
    eval_cmd.add_argument("--suite", choices=("toy", "gradcheck"), default="toy")
    eval_cmd.add_argument("--checkpoint", help="Defaults to the 'checkpoint' key.")
    eval_cmd.add_argument("--report", help="Defaults to the 'report' key.")
    eval_cmd.add_argument("--force", action="store_true", help="Ignore a hash mismatch.")
    eval_cmd.add_argument(
        "--oracle", action="store_true", help="Score the analytic toy encoders instead."
    )
    eval_cmd.add_argument("--repeats", type=int, default=12, help="Gradient instances.")
    eval_cmd.set_defaults(handler=cmd_eval)

    inspect = commands.add_parser("inspect", help="Trace how one example is built.")
    inspect.add_argument("--id", help="Corpus id; defaults to the first item.")
    inspect.set_defaults(handler=cmd_inspect)

    return parser


def _resolve_config(args: argparse.Namespace) -> Config:
    config = Config.load(args.config)
    config.apply_overrides(args.overrides)
    if args.seed is not None:
        config.apply_overrides([f"seed={args.seed}"])
    return config


def main(argv: "Sequence[str] | None" = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    handler: Callable[[Config, argparse.Namespace], int] = args.handler
    try:
        return handler(_resolve_config(args), args)
    except ClaspError as exc:
        sys.stderr.write(f"clasp: error: {exc}\n")
        return exc.exit_code
    except OSError as exc:
        sys.stderr.write(f"clasp: error: {exc}\n")
        return IO_EXIT_CODE
