__ALL__ = ['objectives', 'rewards', 'grpo', 'entropy', 'batching', 'evaluation', 'stages', 'flow_toy']

from .objectives import (
        LossBreakdown as LossBreakdown,
        StreamWeights as StreamWeights,
        audio_frame_loss as audio_frame_loss,
        compute_losses as compute_losses,
        stage1_distill_loss as stage1_distill_loss,
        text_loss as text_loss,
        total_loss as total_loss,
        )
from tokenloom.tensor.optim import AdamW as AdamW, clip_grad_norm as clip_grad_norm, cosine_lr as cosine_lr
from .rewards import edit_similarity as edit_similarity, exact_match as exact_match, label_accuracy as label_accuracy
from .grpo import (
        RolloutGroup as RolloutGroup,
        group_advantages as group_advantages,
        grpo_objective as grpo_objective,
        rollout as rollout,
        run_grpo as run_grpo,
        )
from .entropy import EntropyGap as EntropyGap, entropy_gap as entropy_gap, tally as tally
from .batching import assemble_batches as assemble_batches, record_grid as record_grid
from .evaluation import EvalReport as EvalReport, eval_accuracy as eval_accuracy, eval_ppl_per_codebook as eval_ppl_per_codebook
from .stages import StageSpec as StageSpec, StageResult as StageResult, run_stage as run_stage, stage_spec as stage_spec
from .flow_toy import FlowToyReport as FlowToyReport, run_flow_toy as run_flow_toy, train_flow as train_flow
