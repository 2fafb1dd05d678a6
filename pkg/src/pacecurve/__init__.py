"""Pacing-profile analysis: split times to normalized velocity curves, functional
principal components, and covariate-conditioned Gaussian HMMs over careers."""

__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .ingest import (
    AgeGroup,
    CareerSequence,
    EventType,
    RacePhase,
    RaceRecord,
    VelocityProfile,
    build_career_sequences,
    mean_profile,
    normalize_profile,
    parse_race_csv,
    serialize_race_csv,
)
from .fbasis import (
    FunctionalBasis,
    QuadratureRule,
    SmoothedProfile,
    basis_quadrature,
    eval_smoothed,
    evaluate_basis,
    gram_matrix,
    inner_product,
    make_basis,
    smooth_profile,
    smooth_profiles,
)
from .fpca import (
    FpcaModel,
    PcScores,
    eigenfunction_curve,
    fit_fpca,
    project_many,
    project_scores,
    reconstruct_profile,
    variance_report,
)
from .hmm import (
    DESIGN_500,
    DESIGN_1000,
    CovariateDesign,
    DecodedCareer,
    EmConfig,
    HmmModel,
    ScoreSequence,
    aic,
    decode,
    em_fit,
    emission_mean,
    forward_backward,
    forward_log_likelihood,
    log_emission_density,
    mixture_mean,
    select_states,
    viterbi,
    viterbi_decode,
)
from .synth import GeneratorSpec, default_spec, generate_dataset, sample_career
from .pipeline import corpus_sequences, fit_corpus_fpca, score_sequences
