"""Co-generation of building-block reaction graphs and 3D coordinates via
masked discrete diffusion and a visibility-aware coordinate flow, with a
pluggable denoiser so the full stack is verifiable against exact oracles."""

__version__ = "0.1.0"

from .vocab import (  # noqa: F401
    Vocabulary,
    load_vocabulary,
    load_vocabulary_file,
    serialize_vocabulary,
    center_matched_set,
    compatible_tuples,
)
from .graph import (  # noqa: F401
    EdgeCodec,
    ReactionGraph,
    AtomGraph,
    codec_for,
    symmetrize,
    couple,
    assemble_atom_graph,
    check_validity,
    canonical_code,
)
from .diffusion import NoiseSchedule, alpha, forward_noise, reverse_step, loss_weight  # noqa: F401
from .flow import FlowConfig, visibility_mask, masked_centroid, pair_data, kabsch_align, euler_step  # noqa: F401
from .datagen import GenConfig, BlockCountPrior, generate_graph, generate_records, estimate_block_count_prior  # noqa: F401
from .denoise import DenoiserOutput, OracleDenoiser, TabularDenoiser, tabular_fit, TrainConfig  # noqa: F401
from .sampler import SampleConfig, SampleResult, InpaintSpec, InpaintFragment, sample, inpaint, sample_many  # noqa: F401
from .metrics import wasserstein1, jsd, cov_mat, diversity_uniqueness_novelty  # noqa: F401
