"""Group Relative Policy Optimization on the text head.

Specification:
    For a query, G outputs are sampled and scored. Each output's advantage is
        Â_i = (r_i − mean(r)) / std(r)      (population std; 0 when std = 0)
    shared by all of its tokens. Per token, with ratio = exp(new − old),
        s = min(ratio · Â, clip(ratio, 1 − ε, 1 + ε) · Â)
    averaged over each output's tokens, then over outputs. The KL penalty is
    the k3 estimate exp(ref − new) − (ref − new) − 1 against a frozen
    reference copy, averaged the same way. Descent minimizes
        −(surrogate − kl_coef · KL)

Classes:
    RolloutGroup: Sampled outputs of one query with rewards and log-probs.
    GrpoObjective: Surrogate, KL and loss of one or more groups.

Functions:
    group_advantages: Normalized rewards.
    kl_k3: Per-token k3 KL estimate.
    grpo_objective: Clipped surrogate and KL for a group.
    text_grid: A single-row grid of text-stream tokens.
    sequence_log_probs: Log-probs of an output continuing a prompt.
    rollout: Sample a group of text outputs.
    echo_queries: Random queries for the echo task.
    run_grpo: Optimize a policy on the echo task.
"""
# Imports
from __future__ import annotations
from collections.abc import Sequence
from dataclasses import dataclass, field
import logging

import numpy as np

from tokenloom.codec.streams import FrameKind, TokenGrid
from tokenloom.codec.vocab import Vocabulary
from tokenloom.config import GrpoConfig
from tokenloom.model.backbone import BackboneState, forward_backbone, predict, text_log_probs
from tokenloom.model.local_decoder import sample_index
from tokenloom.tensor import Array, Tape, backward, functional as F
from tokenloom.tensor.optim import AdamW, clip_grad_norm
from tokenloom.training.rewards import Reward, reward_function


# Consts
GRPO_HEADER = ('step', 'reward_mean', 'surrogate', 'kl')
_logger = logging.getLogger(__name__)


# Classes
@dataclass(eq=False)
class RolloutGroup:
    """G outputs for one query.

    Outputs hold the emitted tokens including a final EOS when one was
    sampled; rewards score the tokens before EOS.
    """
    query_id: int
    prompt: np.ndarray
    reference: np.ndarray
    outputs: list[np.ndarray]
    rewards: np.ndarray
    old_log_probs: list[np.ndarray]
    truncated: list[bool] = field(default_factory=list)

    @property
    def size(self) -> int:
        return len(self.outputs)

    @property
    def advantages(self) -> np.ndarray:
        return group_advantages(self.rewards)


@dataclass(eq=False)
class GrpoObjective:
    surrogate: Array
    unclipped: Array
    kl: Array
    loss: Array


# Functions
def group_advantages(rewards: Sequence[float] | np.ndarray) -> np.ndarray:
    rewards = np.asarray(rewards, dtype=np.float64)
    if rewards.size == 0:
        raise ValueError("A group needs at least one reward.")
    std = rewards.std()
    if std == 0:
        return np.zeros_like(rewards)
    return (rewards - rewards.mean()) / std


def kl_k3(new_log_probs: Array, ref_log_probs: np.ndarray) -> Array:
    """exp(ref − new) − (ref − new) − 1 per token; never negative."""
    delta = F.sub(F.constant(ref_log_probs), new_log_probs)
    return F.add(F.sub(F.exp(delta), delta), F.constant(np.full(delta.shape, -1.0)))


def _average(per_output: list[Array]) -> Array:
    total = per_output[0]
    for term in per_output[1:]:
        total = F.add(total, term)
    return F.scale(total, 1.0 / len(per_output))


def grpo_objective(
        group: RolloutGroup,
        new_log_probs: Sequence[Array],
        epsilon: float = 0.2,
        ref_log_probs: Sequence[np.ndarray] | None = None,
        kl_coef: float = 0.0,
        ) -> GrpoObjective:
    """Clipped surrogate of a group under the current policy's log-probs.

    Tokens on the inactive side of the clip contribute a constant, so their
    gradient is exactly zero.

    Raises:
        ValueError: If old and new log-probs are not aligned per token.
    """
    if len(new_log_probs) != group.size:
        raise ValueError(f"{len(new_log_probs)} log-prob sequences for {group.size} outputs.")
    advantages = group.advantages
    surrogates: list[Array] = []
    unclipped: list[Array] = []
    kls: list[Array] = []
    for i, (new, old) in enumerate(zip(new_log_probs, group.old_log_probs)):
        old = np.asarray(old)
        if new.shape != old.shape or old.size == 0:
            raise ValueError(f"Output {i}: new log-probs {new.shape} and old {old.shape} are not aligned.")
        a = float(advantages[i])
        ratio = F.exp(F.sub(new, F.constant(old)))
        plain = F.scale(ratio, a)
        r = ratio.data.astype(np.float64)
        bounded = np.clip(r, 1.0 - epsilon, 1.0 + epsilon)
        inside = (r >= 1.0 - epsilon) & (r <= 1.0 + epsilon)
        active = inside | (r * a <= bounded * a)
        term = F.masked_select_add(F.constant(bounded * a), plain, active)
        surrogates.append(F.mean(term))
        unclipped.append(F.mean(plain))
        if ref_log_probs is not None:
            kls.append(F.mean(kl_k3(new, np.asarray(ref_log_probs[i]))))
    surrogate = _average(surrogates)
    kl = _average(kls) if kls else F.scale(surrogate, 0.0)
    loss = F.scale(F.sub(surrogate, F.scale(kl, kl_coef)), -1.0)
    return GrpoObjective(surrogate, _average(unclipped), kl, loss)


def text_grid(vocab: Vocabulary, tokens: Sequence[int]) -> TokenGrid:
    grid = TokenGrid.empty(vocab, 1, len(tokens))
    grid.tokens[0, :, vocab.text_stream] = np.asarray(tokens, dtype=np.int64)
    grid.stream_mask[0, :, vocab.text_stream] = True
    grid.frame_kind[0] = FrameKind.TEXT
    grid.item_ids[0] = 0
    grid.doc_ids[0] = 0
    return grid


def sequence_log_probs(state: BackboneState, prompt: np.ndarray, output: np.ndarray) -> Array:
    """Log-probs of each output token, teacher-forced after the prompt."""
    grid = text_grid(state.vocab, [*prompt, *output])
    predictions = predict(grid, state)
    start = len(prompt) - 1
    rows = F.select_rows(predictions.text_log_probs, np.arange(start, start + len(output)))
    return F.pick(rows, predictions.text_targets[start:start + len(output)])


def _response_mask(vocab: Vocabulary) -> np.ndarray:
    allowed = np.zeros(len(vocab.text_head_range), dtype=bool)
    allowed[vocab.text_range.start:vocab.text_range.stop] = True
    allowed[vocab.eos] = True
    return allowed


def rollout(
        state: BackboneState,
        query: Sequence[int],
        group_size: int,
        temperature: float,
        rng: np.random.Generator,
        reward: Reward,
        max_response: int = 128,
        query_id: int = 0,
        reference: Sequence[int] | None = None,
        ) -> RolloutGroup:
    """Sample `group_size` text outputs after BOS, query, SEP.

    Old log-probs are the untempered model log-probs at sampling time. An
    output that reaches `max_response` without EOS is kept, flagged truncated
    and scored as emitted.
    """
    vocab = state.vocab
    prompt = np.array([vocab.bos, *query, vocab.sep], dtype=np.int64)
    reference = np.asarray(query if reference is None else reference, dtype=np.int64)
    cap = min(max_response, state.config.max_context - len(prompt))
    allowed = _response_mask(vocab)
    outputs, log_probs, rewards, truncated = [], [], [], []
    for _ in range(group_size):
        tokens: list[int] = []
        chosen: list[float] = []
        while len(tokens) < cap:
            grid = text_grid(vocab, [*prompt, *tokens])
            h = forward_backbone(grid, state).h_g
            h_last = F.reshape(F.slice_axis(h, 1, grid.length - 1, grid.length), (1, h.shape[-1]))
            row = text_log_probs(state, h_last).data[0]
            token = sample_index(row, temperature, rng, allowed=allowed)
            tokens.append(token)
            chosen.append(float(row[token]))
            if token == vocab.eos:
                break
        cut = tokens[:-1] if tokens and tokens[-1] == vocab.eos else tokens
        over = not tokens or tokens[-1] != vocab.eos
        if over:
            _logger.warning(f"Rollout for query {query_id} reached the cap of {cap} tokens.")
        outputs.append(np.asarray(tokens, dtype=np.int64))
        log_probs.append(np.asarray(chosen))
        rewards.append(reward(cut, list(reference)))
        truncated.append(over)
    return RolloutGroup(query_id, prompt, reference, outputs, np.asarray(rewards, dtype=np.float64),
                        log_probs, truncated)


def echo_queries(vocab: Vocabulary, n_queries: int, rng: np.random.Generator,
                 length: int = 2, alphabet: int = 8) -> list[np.ndarray]:
    """Queries of `length` text tokens drawn from the first `alphabet` text ids."""
    alphabet = min(alphabet, vocab.n_text)
    return [vocab.text_range.start + rng.integers(0, alphabet, size=length) for _ in range(n_queries)]


def grpo_step(
        policy: BackboneState,
        reference: BackboneState,
        groups: Sequence[RolloutGroup],
        optimizer: AdamW,
        config: GrpoConfig,
        grad_clip: float = 1.0,
        ) -> dict[str, float]:
    """One policy update from already sampled groups; returns the metrics row values."""
    ref_log_probs = [[sequence_log_probs(reference, g.prompt, out).data for out in g.outputs] for g in groups]
    with Tape() as tape:
        objectives = [grpo_objective(g, [sequence_log_probs(policy, g.prompt, out) for out in g.outputs],
                                     config.epsilon, refs, config.kl_coef)
                      for g, refs in zip(groups, ref_log_probs)]
        loss = _average([o.loss for o in objectives])
    grads = backward(tape, loss, optimizer.params)
    clip_grad_norm(grads, grad_clip)
    optimizer.step(grads, config.grpo_lr)
    return {
        'reward_mean': float(np.mean([g.rewards.mean() for g in groups])),
        'surrogate': float(np.mean([o.surrogate.item() for o in objectives])),
        'kl': float(np.mean([o.kl.item() for o in objectives])),
    }


def run_grpo(
        policy: BackboneState,
        config: GrpoConfig,
        rng: np.random.Generator,
        steps: int,
        queries_per_step: int = 1,
        query_length: int = 2,
        ) -> list[dict[str, float]]:
    """Optimize the trainable groups of `policy` on the echo task against a frozen copy of its start."""
    reference = policy.clone()
    reward = reward_function(config.reward_kind)
    optimizer = AdamW(policy.trainable_parameters(), weight_decay=0.0)
    rows = []
    for step in range(steps):
        queries = echo_queries(policy.vocab, queries_per_step, rng, query_length)
        groups = [rollout(policy, q, config.group_size, config.rollout_temperature, rng, reward,
                          config.max_response, query_id=step * queries_per_step + i)
                  for i, q in enumerate(queries)]
        row = {'step': step, **grpo_step(policy, reference, groups, optimizer, config)}
        _logger.info(f"GRPO step {step}: reward {row['reward_mean']:.3f}, surrogate {row['surrogate']:.4f}, "
                     f"kl {row['kl']:.4f}")
        rows.append(row)
    return rows
