"""Poisson scaling of document positions on one or more latent dimensions."""

from .dfm import (
    CountParseError,
    DegenerateCorpusError,
    DfmError,
    DocumentFeatureMatrix,
    PreprocessReport,
    PreprocessSpec,
    load_counts,
    read_text_corpus,
    save_counts,
    tokenize,
    tokenize_corpus,
)
from .estimation import (
    EpsilonChoice,
    EstimationError,
    FitResult,
    align,
    choose_epsilon,
    fit,
    fit_wordfish,
    fit_wordkrill,
    initial_values,
)
from .inference import (
    UncertaintyReport,
    confidence_ellipses,
    draw_positions,
    fisher_information,
    fisher_ses,
    parametric_bootstrap,
)
from .model import (
    FitConfig,
    ModelParams,
    gradients,
    log_likelihood,
    log_rate,
    permute_dims,
    sign_flip,
)
from .synth import SyntheticSpec, generate

__version__ = "0.1.0"
