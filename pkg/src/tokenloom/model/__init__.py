__ALL__ = ['layers', 'local_decoder', 'backbone', 'generation', 'flow']

from .layers import (
        Module as Module,
        Linear as Linear,
        RmsNorm as RmsNorm,
        Rotary as Rotary,
        Block as Block,
        attention_bias as attention_bias,
        )
from .local_decoder import (
        FrameContext as FrameContext,
        LocalDecoder as LocalDecoder,
        local_decode_frame as local_decode_frame,
        sample_index as sample_index,
        )
from .backbone import (
        BackboneState as BackboneState,
        BackboneOutput as BackboneOutput,
        Predictions as Predictions,
        forward_backbone as forward_backbone,
        predict as predict,
        ssl_targets as ssl_targets,
        text_log_probs as text_log_probs,
        )
from .generation import (
        Mode as Mode,
        SamplingPolicy as SamplingPolicy,
        GenerationResult as GenerationResult,
        bos_prompt as bos_prompt,
        generate as generate,
        )
from .flow import (
        FlowDecoder as FlowDecoder,
        flow_loss as flow_loss,
        flow_sample as flow_sample,
        guided_prediction as guided_prediction,
        )
