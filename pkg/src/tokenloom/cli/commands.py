"""Subcommands of the tokenloom command line.

    tokenize-synth  Fit the codec on synthetic features and write a token corpus.
    forge           Write auditory sentences of one strategy (or a mix).
    synth-corpus    Write a planted-dependency corpus.
    train           Run one training stage; writes a checkpoint and a metrics CSV.
    grpo-train      Policy optimization on the echo task; writes a metrics CSV.
    eval            Perplexity, accuracy or entropy-gap report as JSON.
    flow-toy        Train the flow decoder on planted modes; report as JSON.
    checkpoint      Inspect a checkpoint manifest or diff two checkpoints.

`--config FILE` is accepted before the subcommand or after it.

Functions:
    build_parser: The argparse parser with every subcommand.
    run: Dispatch parsed arguments to their command.
"""
# Imports
from __future__ import annotations
import argparse
from dataclasses import replace
from collections.abc import Awaitable, Callable
import json
import logging
import pathlib
from typing import Any

import aiofiles
import numpy as np

from tokenloom.codec.features import SyntheticFeatureBank
from tokenloom.codec.pipeline import FactorizedCodec
from tokenloom.codec.streams import Item
from tokenloom.config import Config, load_config
from tokenloom.forge.corpus import (
    LAYOUTS, CorpusRecord, SyntheticCorpusSpec, dependency_triples, make_record, read_corpus, synth_corpus, write_corpus,
)
from tokenloom.forge.sentences import SentenceForge
from tokenloom.model.backbone import BackboneState
from tokenloom.tensor import precision
from tokenloom.tensor.checkpoint import diff_checkpoints, load_checkpoint, manifest, save_checkpoint
from tokenloom.training.entropy import entropy_gap, tally
from tokenloom.training.evaluation import eval_accuracy, eval_ppl_per_codebook
from tokenloom.training.grpo import GRPO_HEADER, run_grpo
from tokenloom.training.flow_toy import run_flow_toy
from tokenloom.training.stages import metrics_csv, run_stage, stage_spec


# Consts
_logger = logging.getLogger(__name__)
Command = Callable[[argparse.Namespace], Awaitable[int]]


# Functions
async def _write_text(path: pathlib.Path, text: str) -> None:
    async with aiofiles.open(path, 'w') as f:
        await f.write(text)


async def _write_report(report: dict[str, Any], path: pathlib.Path | None) -> None:
    """JSON to `path`, or to stdout without one."""
    text = json.dumps(report, indent=2, sort_keys=True)
    if path is not None:
        await _write_text(path, text + '\n')
    else:
        print(text)


def _config(args: argparse.Namespace) -> Config:
    return load_config(args.config)


def _fitted_codec(config: Config, rng: np.random.Generator, n_samples: int, duration_s: float,
                  ) -> tuple[FactorizedCodec, SyntheticFeatureBank]:
    bank = SyntheticFeatureBank(config.codec.d_feature, noise=config.codec.feature_noise, seed=config.model.seed)
    codec = FactorizedCodec(config.codec, config.model.n_reason_per_book, config.model.n_recon_per_book, rng)
    codec.fit([bank.sample(duration_s, rng) for _ in range(n_samples)], rng)
    return codec, bank


async def _load_state(config: Config, path: pathlib.Path | None) -> BackboneState:
    state = BackboneState.initialize(config.model)
    if path is not None:
        state.load_arrays(await load_checkpoint(path))
        _logger.info(f"Loaded checkpoint {path}.")
    return state


async def tokenize_synth(args: argparse.Namespace) -> int:
    config = _config(args)
    rng = np.random.default_rng(args.seed)
    with precision('float64'):
        codec, bank = _fitted_codec(config, rng, args.n, args.duration_s)
        vocab = BackboneState.initialize(config.model).vocab
        records: list[CorpusRecord] = []
        for i in range(args.n):
            sample = bank.sample(args.duration_s, rng)
            reason, recon = codec.encode(sample).to_items(vocab)
            transcript = Item.text(vocab.text_range.start + sample.symbols % vocab.n_text)
            records.append(make_record(f"tokenized-{args.seed}-{i}", [transcript, reason, recon],
                                       duration_s=args.duration_s, seed=args.seed))
    await write_corpus(args.out, records)
    if args.codec_out is not None:
        await save_checkpoint(args.codec_out, codec.state_arrays())
    return 0


async def forge(args: argparse.Namespace) -> int:
    config = _config(args)
    rng = np.random.default_rng(args.seed)
    with precision('float64'):
        codec, bank = _fitted_codec(config, rng, 8, 2.0)
        vocab = BackboneState.initialize(config.model).vocab
        sentences = SentenceForge(codec, vocab, bank, args.ctx).forge(args.strategy, args.n, rng)
    records = [sentence.to_record(f"forged-{args.seed}-{i}") for i, sentence in enumerate(sentences)]
    await write_corpus(args.out, records)
    return 0


async def synth(args: argparse.Namespace) -> int:
    config = _config(args)
    spec = SyntheticCorpusSpec(seed=args.seed, n_records=args.n, strength=args.strength,
                               alphabet=args.alphabet, n_context=args.contexts, layout=args.layout)
    vocab = BackboneState.initialize(config.model).vocab
    await write_corpus(args.out, synth_corpus(spec, vocab))
    return 0


async def train(args: argparse.Namespace) -> int:
    config = _config(args)
    stage = args.stage if args.stage is not None else config.train.stage
    spec = stage_spec(stage, config.train)
    records = await read_corpus(args.corpus)
    with precision(config.train.precision):
        state = await _load_state(config, args.checkpoint_in)
        if stage == 4 and args.forged:
            rng = np.random.default_rng(config.train.train_seed)
            codec, bank = _fitted_codec(config, rng, 8, 2.0)
            sentences = SentenceForge(codec, state.vocab, bank, spec.max_context).forge('mix', args.forged, rng)
            records = [*records, *(s.to_record(f"forged-{i}") for i, s in enumerate(sentences))]
        result = run_stage(spec, state, records, config.train)
    await save_checkpoint(args.checkpoint_out, state.state_arrays())
    if args.metrics is not None:
        await _write_text(args.metrics, metrics_csv(result.metrics))
    return 0


async def grpo_train(args: argparse.Namespace) -> int:
    config = _config(args)
    grpo = config.grpo
    overrides = {'grpo_groups': args.groups, 'group_size': args.g, 'epsilon': args.epsilon, 'kl_coef': args.kl}
    grpo = replace(grpo, **{key: value for key, value in overrides.items() if value is not None})
    with precision(config.train.precision):
        state = await _load_state(config, args.checkpoint_in)
        rows = run_grpo(state, grpo, np.random.default_rng(args.seed), grpo.grpo_groups)
    if args.metrics is not None:
        await _write_text(args.metrics, metrics_csv(rows, GRPO_HEADER))
    if args.checkpoint_out is not None:
        await save_checkpoint(args.checkpoint_out, state.state_arrays())
    return 0


async def evaluate(args: argparse.Namespace) -> int:
    config = _config(args)
    records = await read_corpus(args.corpus)
    report: dict[str, Any]
    if args.mode == 'entropy':
        vocab = BackboneState.initialize(config.model).vocab
        triples = dependency_triples(records, vocab, args.book)
        sizes = (int(triples[:, 0].max(initial=0)) + 1, int(triples[:, 1].max(initial=0)) + 1,
                 int(triples[:, 2].max(initial=0)) + 1)
        report = entropy_gap(tally(triples, sizes)).to_dict()
    else:
        with precision(config.train.precision):
            state = await _load_state(config, args.checkpoint)
            if args.mode == 'ppl':
                report = eval_ppl_per_codebook(state, records, args.condition_mode).to_dict()
            else:
                report = {'accuracy': eval_accuracy(state, records, args.condition_mode)}
    await _write_report(report, args.report)
    return 0


async def flow_toy(args: argparse.Namespace) -> int:
    config = _config(args)
    with precision(config.train.precision):
        report = run_flow_toy(config.flow, np.random.default_rng(args.seed))
    await _write_report(report.to_dict(), args.report)
    return 0


async def checkpoint(args: argparse.Namespace) -> int:
    match args.action:
        case 'inspect':
            print(manifest(await load_checkpoint(args.paths[0])), end='')
        case 'diff':
            if len(args.paths) != 2:
                raise ValueError("checkpoint diff needs exactly two paths.")
            for name in diff_checkpoints(await load_checkpoint(args.paths[0]), await load_checkpoint(args.paths[1])):
                print(name)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='tokenloom', description=__doc__.splitlines()[0])
    parser.add_argument('--config', type=pathlib.Path, default=None, help="key = value configuration file")
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument('--config', type=pathlib.Path, default=argparse.SUPPRESS, help="key = value configuration file")
    subparsers = parser.add_subparsers(dest='command', required=True)

    def add_command(name: str, help: str) -> argparse.ArgumentParser:
        return subparsers.add_parser(name, help=help, parents=[shared])

    p = add_command('tokenize-synth', "tokenize synthetic features")
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--n', type=int, default=16)
    p.add_argument('--duration-s', type=float, default=2.0)
    p.add_argument('--out', type=pathlib.Path, required=True)
    p.add_argument('--codec-out', type=pathlib.Path, default=None)
    p.set_defaults(handler=tokenize_synth)

    p = add_command('forge', "build auditory sentences")
    p.add_argument('--strategy', choices=['1', '2', '3', '4', '5', 'mix'], default='mix')
    p.add_argument('--ctx', type=int, default=2048)
    p.add_argument('--n', type=int, default=16)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--out', type=pathlib.Path, required=True)
    p.set_defaults(handler=forge)

    p = add_command('synth-corpus', "planted-dependency corpus")
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--n', type=int, default=32)
    p.add_argument('--strength', type=float, default=0.9)
    p.add_argument('--alphabet', type=int, default=8)
    p.add_argument('--contexts', type=int, default=4)
    p.add_argument('--layout', choices=list(LAYOUTS), default='generation')
    p.add_argument('--out', type=pathlib.Path, required=True)
    p.set_defaults(handler=synth)

    p = add_command('train', "run one training stage")
    p.add_argument('--stage', type=int, choices=[1, 2, 3, 4], default=None)
    p.add_argument('--corpus', type=pathlib.Path, required=True)
    p.add_argument('--checkpoint-in', type=pathlib.Path, default=None)
    p.add_argument('--checkpoint-out', type=pathlib.Path, required=True)
    p.add_argument('--metrics', type=pathlib.Path, default=None)
    p.add_argument('--forged', type=int, default=8, help="forged sentences added in stage 4")
    p.set_defaults(handler=train)

    p = add_command('grpo-train', "policy optimization on the echo task")
    p.add_argument('--groups', type=int, default=None)
    p.add_argument('--g', type=int, default=None)
    p.add_argument('--epsilon', type=float, default=None)
    p.add_argument('--kl', type=float, default=None)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--checkpoint-in', type=pathlib.Path, default=None)
    p.add_argument('--checkpoint-out', type=pathlib.Path, default=None)
    p.add_argument('--metrics', type=pathlib.Path, default=None)
    p.set_defaults(handler=grpo_train)

    p = add_command('eval', "evaluation report")
    p.add_argument('--mode', choices=['ppl', 'acc', 'entropy'], required=True)
    p.add_argument('--corpus', type=pathlib.Path, required=True)
    p.add_argument('--checkpoint', type=pathlib.Path, default=None)
    p.add_argument('--condition-mode', choices=['with-reasoning', 'without-reasoning'], default='with-reasoning')
    p.add_argument('--book', type=int, default=0, help="codebook tallied in entropy mode")
    p.add_argument('--report', type=pathlib.Path, default=None)
    p.set_defaults(handler=evaluate)

    p = add_command('flow-toy', "flow decoder on planted modes")
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--report', type=pathlib.Path, default=None)
    p.set_defaults(handler=flow_toy)

    p = add_command('checkpoint', "inspect or diff checkpoints")
    p.add_argument('action', choices=['inspect', 'diff'])
    p.add_argument('paths', type=pathlib.Path, nargs='+')
    p.set_defaults(handler=checkpoint)
    return parser


async def run(args: argparse.Namespace) -> int:
    handler: Command = args.handler
    return await handler(args)
