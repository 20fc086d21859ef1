"""Cross-lingual NER at desk scale: adversarial feature training,
discriminator-based pseudo-label selection, and soft-label distillation."""

__version__ = "0.1.0"

from .corpus import Corpus, LabelSet, Sentence, SynthSpec, generate_bilingual, read_conll, validate_bio, write_conll
from .selection import l_score, merge_seeds, select_top_rho, sentence_source_prob
from .tensors import ParamStore, Tensor

__all__ = [
    "Corpus", "LabelSet", "ParamStore", "Sentence", "SynthSpec", "Tensor",
    "generate_bilingual", "l_score", "merge_seeds", "read_conll",
    "select_top_rho", "sentence_source_prob", "validate_bio", "write_conll",
]
