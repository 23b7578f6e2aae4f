__ALL__ = ['vocab', 'streams', 'quantizers', 'film', 'compressor', 'features', 'pipeline']

from .vocab import (
        SPECIAL_NAMES as SPECIAL_NAMES,
        TokenKind as TokenKind,
        TokenAddress as TokenAddress,
        Vocabulary as Vocabulary,
        build_vocabulary as build_vocabulary,
        )
from .streams import (
        FrameKind as FrameKind,
        Item as Item,
        TokenGrid as TokenGrid,
        StreamEmbeddings as StreamEmbeddings,
        pack_sequence as pack_sequence,
        unpack_sequence as unpack_sequence,
        fuse_embeddings as fuse_embeddings,
        frame_budget as frame_budget,
        upsample_index as upsample_index,
        )
from .quantizers import (
        Codebook as Codebook,
        GroupBanks as GroupBanks,
        QuantizationResult as QuantizationResult,
        GroupwiseResult as GroupwiseResult,
        rvq_quantize as rvq_quantize,
        vq_quantize as vq_quantize,
        groupwise_quantize as groupwise_quantize,
        dequantize as dequantize,
        update_codebooks as update_codebooks,
        end_epoch as end_epoch,
        )
from .film import FilmModulator as FilmModulator, film as film, film_modulate as film_modulate
from .compressor import QueryCompressor as QueryCompressor, query_compress as query_compress
from .features import FeatureSample as FeatureSample, SyntheticFeatureBank as SyntheticFeatureBank
from .pipeline import CodecOutput as CodecOutput, FactorizedCodec as FactorizedCodec
