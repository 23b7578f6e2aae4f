__ALL__ = ['corpus', 'sentences']

from .corpus import (
        CorpusRecord as CorpusRecord,
        SyntheticCorpusSpec as SyntheticCorpusSpec,
        corpus_text as corpus_text,
        dependency_triples as dependency_triples,
        is_corpus_record as is_corpus_record,
        make_record as make_record,
        parse_corpus as parse_corpus,
        read_corpus as read_corpus,
        record_items as record_items,
        synth_corpus as synth_corpus,
        write_corpus as write_corpus,
        )
from .sentences import (
        AuditorySentence as AuditorySentence,
        MixtureTriple as MixtureTriple,
        Segment as Segment,
        SentenceForge as SentenceForge,
        Strategy as Strategy,
        fit_budget as fit_budget,
        make_attribute_variants as make_attribute_variants,
        make_interleaved as make_interleaved,
        make_mixture_triples as make_mixture_triples,
        make_segmented as make_segmented,
        mixture_triple as mixture_triple,
        )
