"""The four-stage training recipe.

    stage  trains                          context  steps  lr
    1      understand + distill            1024     200    2e-4   (adds distillation)
    2      generate + local                1024     200    2e-4
    3      every group but distill         1024     500    2e-4
    4      every group but distill         2048     300    1e-4   (adds forged sentences)

Parameters outside the trainable groups are never handed to the optimizer,
so their bytes are unchanged by a stage. Each stage starts its own warmup and
cosine schedule. Contexts are capped by the model's own context.

Classes:
    StageSpec: Settings of one stage.
    StageResult: Metrics rows of a finished stage.

Functions:
    stage_spec: The default spec of a stage with config overrides applied.
    metrics_csv: CSV text of metrics rows.
    run_stage: Train a model through one stage.
"""
# Imports
from __future__ import annotations
from collections.abc import Sequence
import csv
from dataclasses import dataclass, replace
import io
import logging
import time
from typing import Any

import numpy as np

from tokenloom.config import TrainConfig
from tokenloom.forge.corpus import CorpusRecord, record_mixtures
from tokenloom.model.backbone import BackboneState
from tokenloom.tensor import Tape, backward
from tokenloom.training.batching import assemble_batches
from tokenloom.training.objectives import StreamWeights, compute_losses
from tokenloom.tensor.optim import AdamW, clip_grad_norm, cosine_lr


# Consts
METRICS_HEADER = ('step', 'l_text', 'l_audio', 'l_total', *(f'nll_{i}' for i in range(1, 9)), 'tokens_per_sec')
ALL_GROUPS = ('understand', 'crossmodal', 'generate', 'local', 'embed', 'head')
_logger = logging.getLogger(__name__)


# Classes
@dataclass(frozen=True)
class StageSpec:
    stage: int
    trainable_groups: tuple[str, ...]
    mixtures: tuple[str, ...]
    max_context: int
    steps: int
    lr: float
    warmup: int = 20
    distill: bool = False


STAGES = {
    1: StageSpec(1, ('understand', 'distill'), ('understanding',), 1024, 200, 2e-4, distill=True),
    2: StageSpec(2, ('generate', 'local'), ('generation',), 1024, 200, 2e-4),
    3: StageSpec(3, ALL_GROUPS, ('understanding', 'generation', 'interleaved'), 1024, 500, 2e-4),
    4: StageSpec(4, ALL_GROUPS, ('understanding', 'generation', 'interleaved', 'forged'), 2048, 300, 1e-4),
}


@dataclass(eq=False)
class StageResult:
    spec: StageSpec
    metrics: list[dict[str, Any]]

    @property
    def initial_loss(self) -> float:
        return self.metrics[0]['l_total'] if self.metrics else float('nan')

    @property
    def final_loss(self) -> float:
        return self.metrics[-1]['l_total'] if self.metrics else float('nan')


# Functions
def stage_spec(stage: int, train: TrainConfig | None = None) -> StageSpec:
    """Default spec of `stage`; nonzero `steps` and `lr` in the config override it.

    Raises:
        ValueError: For a stage outside 1-4.
    """
    if stage not in STAGES:
        raise ValueError(f"Unknown stage {stage}, expected one of {sorted(STAGES)}.")
    spec = STAGES[stage]
    if train is None:
        return spec
    return replace(spec, steps=train.steps or spec.steps, lr=train.lr or spec.lr, warmup=train.warmup)


def metrics_csv(rows: Sequence[dict[str, Any]], header: Sequence[str] = METRICS_HEADER) -> str:
    out = io.StringIO()
    writer = csv.DictWriter(out, fieldnames=list(header), lineterminator='\n')
    writer.writeheader()
    writer.writerows(rows)
    return out.getvalue()


def run_stage(
        spec: StageSpec,
        state: BackboneState,
        records: Sequence[CorpusRecord],
        train: TrainConfig | None = None,
        ) -> StageResult:
    """Train the spec's groups for `spec.steps` steps over packed batches of `records`.

    Only records in one of the stage's mixtures are used. They are shuffled
    once with the training seed, so the mixtures are sampled uniformly.

    Raises:
        ValueError: If no record belongs to the stage's mixtures.
    """
    train = TrainConfig() if train is None else train
    wanted = set(spec.mixtures)
    selected = [record for record in records if record_mixtures(record) & wanted]
    if not selected:
        raise ValueError(f"Stage {spec.stage} found no records in the mixtures {list(spec.mixtures)}.")
    if len(selected) < len(records):
        _logger.info(f"Stage {spec.stage}: skipped {len(records) - len(selected)} records outside {list(spec.mixtures)}.")
    state.set_trainable(spec.trainable_groups)
    order = np.random.default_rng(train.train_seed).permutation(len(selected))
    context = min(spec.max_context, state.config.max_context)
    batches = assemble_batches([selected[i] for i in order], state.vocab, context, train.batch_size)
    params = state.trainable_parameters()
    optimizer = AdamW(params, train.weight_decay)
    weights = StreamWeights(train.stream_weights)
    _logger.info(f"Stage {spec.stage}: {spec.steps} steps over {len(batches)} batches, "
                 f"{len(params)} trainable parameters in {list(spec.trainable_groups)}.")

    rows: list[dict[str, Any]] = []
    for step in range(spec.steps):
        batch = batches[step % len(batches)]
        start = time.perf_counter()
        with Tape() as tape:
            losses = compute_losses(batch, state, weights, train.lambda_text, train.lambda_audio,
                                    distill=spec.distill, lambda_rec=train.lambda_rec)
        grads = backward(tape, losses.objective, params)
        norm = clip_grad_norm(grads, train.grad_clip)
        optimizer.step(grads, cosine_lr(step, spec.steps, spec.lr, spec.warmup))
        elapsed = time.perf_counter() - start
        n_tokens = int(np.count_nonzero(batch.frame_kind))
        row: dict[str, Any] = {
            'step': step,
            'l_text': losses.l_text.item(),
            'l_audio': losses.l_audio.item(),
            'l_total': losses.l_total.item(),
            **{f'nll_{i + 1}': float(v) for i, v in enumerate(losses.nll_per_stream)},
            'tokens_per_sec': n_tokens / elapsed if elapsed > 0 else 0.0,
        }
        rows.append(row)
        _logger.debug(f"Stage {spec.stage} step {step}: loss {row['l_total']:.4f}, grad norm {norm:.3f}")
    if rows:
        _logger.info(f"Stage {spec.stage} finished: loss {rows[0]['l_total']:.4f} -> {rows[-1]['l_total']:.4f}")
    state.set_trainable(ALL_GROUPS)
    return StageResult(spec, rows)
