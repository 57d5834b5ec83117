"""Desk-scale alignment-lattice losses and decoders.

CTC and transducer losses with analytic gradients, greedy and beam
decoding, masked-LM-conditioned iterative refinement, the two-vocabulary
cascade decoder, a tokenization bridge, and WER/CER evaluation - all over
deterministic table-driven model contracts so every number is checkable
against a brute-force oracle.
"""

from .bectra import (
    BectraDecodeResult,
    BectraJointEmitter,
    TableJointEmitter,
    bectra_decode,
    bectra_loss,
    conditioned_features,
)
from .bertctc import (
    BilinearConditionedEmitter,
    ConditionedEmitter,
    RefinementStep,
    RefinementTrace,
    bertctc_decode,
    bertctc_loss,
    mask_schedule,
)
from .bridge import detokenize, estimate_length, normalize, retokenize, tokenize
from .collapse import (
    ctc_collapse,
    ctc_inverse_enumerate,
    ctc_min_frames,
    tra_collapse,
    tra_inverse_enumerate,
)
from .core import (
    AlignmentSeq,
    CapacityError,
    DataError,
    DomainError,
    EmissionMatrix,
    FeatureMatrix,
    Hypothesis,
    InvalidAlignmentError,
    JointLattice,
    MaskedSeq,
    Rng,
    TokenSeq,
    TokenizationError,
    UsageError,
    Vocab,
    load_emissions,
    load_features,
    load_lattice,
    load_vocab,
    logsumexp,
    normalize_rows,
    save_emissions,
    save_features,
    save_lattice,
    save_vocab,
)
from .ctc import (
    CtcForwardTable,
    best_path_decode,
    ctc_forward_table,
    ctc_grad,
    ctc_grad_logits,
    ctc_loss,
    framewise_argmax,
    token_confidence,
)
from .masklm import MaskedLm, TableMaskedLm, apply_masks, sample_mask
from .metrics import EditCounts, cer, edit_distance, wer
from .transducer import (
    LmFusionHook,
    PredictionEmitter,
    TableEmitter,
    TableLmFusion,
    beam_search,
    build_lattice,
    greedy_decode,
    rnnt_grad,
    rnnt_grad_logits,
    rnnt_loss,
)

__version__ = "0.1.0"
