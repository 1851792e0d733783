"""adaptdiff: desk-scale diffusion training and few-shot domain adaptation.

Train a small noise-prediction model from scratch, adapt it to a few-shot
target domain against a frozen source reference using pairwise
relative-distance preservation and high-frequency detail losses, and
score the results with pluggable diversity/distribution metrics.
"""

from .backend import backend_name, set_backend
from .dataio import (
    BadMagicError,
    Checkpoint,
    CheckpointError,
    DatasetSpec,
    TruncatedCheckpointError,
    UnsupportedVersionError,
    load_checkpoint,
    load_dataset,
    save_checkpoint,
)
from .denoiser import (
    DenoiserConfig,
    DenoiserParams,
    clone_for_adaptation,
    denoise_backward,
    denoise_forward,
    init_params,
)
from .diffusion import (
    NoiseSchedule,
    ancestral_sample,
    forward_noise,
    make_linear_schedule,
    predict_x0,
    vlb_term,
)
from .losses import (
    ConditionalBatch,
    LossReport,
    LossWeights,
    UnconditionalBatch,
    l_hfmse,
    l_simple,
    prior_preservation_loss,
    total_conditional_loss,
    total_unconditional_loss,
)
from .metrics import (
    ClusterReport,
    DISTANCES,
    EMBEDDERS,
    average_pairwise_diversity,
    frechet_distance,
    frechet_from_moments,
    intra_cluster_diversity,
    nearest_distance_score,
)
from .numerics import SeededRng, finite_difference_grad, gaussian_noise
from .shapes import make_shape_dataset
from .similarity import (
    cosine_sim,
    hf_pairwise_similarity_loss,
    pairwise_similarity_loss,
    sim_distribution,
)
from .trainer import ProbeRecord, TrainConfig, adapt, pretrain, probe_fixed_noise, \
    run_lambda_sweep
from .wavelet import FrequencyBands, haar_decompose, haar_reconstruct, high_frequency

__version__ = "0.1.0"
