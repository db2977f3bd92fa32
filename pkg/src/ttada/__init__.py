"""Test-time domain adaptation for a toy contrastive audio-text model.

The engine learns a small prompt vector by minimizing the self-entropy of
class predictions averaged over masked/reordered views of unlabeled test
audio, and ships the experiment harness around it: synthetic multi-domain
benchmarks, one/five-example adaptation, an augmentation-count ablation,
and a cross-domain generalization grid.
"""

from .adapt import AdaptConfig, AdaptResult, adapt, self_entropy, zero_shot_classify
from .augment import AugmentConfig, AugmentedBatch, build_augmented_batch
from .dsp import DspConfig, MelSpectrogram, log_mel_spectrogram
from .errors import FormatError, NumericError, ShapeError, TtadaError, ValidationError
from .harness import (
    SyntheticDomainSpec,
    adapt_and_eval,
    cross_domain_grid,
    default_benchmark,
    generate_domain,
)
from .model import (
    ClassPromptSet,
    DomainVector,
    ModelDims,
    ModelWeights,
    Vocabulary,
    contrastive_pretrain,
    init_weights,
    load_weights,
    save_weights,
)
from .tensor import Tape, Tensor, backward, finite_diff_grad

__version__ = "0.1.0"
