"""Sparse binary pathlet dictionaries + Bernoulli-output VAEs for trajectory
synthesis, conditional generation, and denoising."""

from .denoise import SparseCodeResult, denoise, sparse_code
from .dictlearn import (
    MdlLossBreakdown,
    PathletDictionary,
    RepresentationMatrix,
    clip_unit_interval,
    effective_atoms,
    mdl_gradients,
    mdl_loss,
    round_binary,
)
from .errors import (
    ConfigError,
    DenoiseError,
    DomainError,
    InputError,
    PathletsError,
    ShapeError,
    SynthError,
    TrainingError,
)
from .evaluate import (
    PlantedCorpus,
    VisitationDistribution,
    corpus_matrix,
    inject_noise,
    jsd,
    synth_corpus,
    visitation_distribution,
)
from .generator import (
    GenerationRequest,
    generate,
    generate_conditional,
    repair_connectivity,
)
from .spatial import (
    SpatialDomain,
    Trajectory,
    load_domain,
    make_graph_domain,
    make_grid_domain,
    neighbors,
    vectorize,
)
from .trainer import TrainedModel, TrainingConfig, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DenoiseError",
    "DomainError",
    "GenerationRequest",
    "InputError",
    "MdlLossBreakdown",
    "PathletDictionary",
    "PathletsError",
    "PlantedCorpus",
    "RepresentationMatrix",
    "ShapeError",
    "SparseCodeResult",
    "SpatialDomain",
    "SynthError",
    "TrainedModel",
    "TrainingConfig",
    "TrainingError",
    "Trajectory",
    "VisitationDistribution",
    "clip_unit_interval",
    "corpus_matrix",
    "denoise",
    "effective_atoms",
    "generate",
    "generate_conditional",
    "inject_noise",
    "jsd",
    "load_checkpoint",
    "load_domain",
    "make_graph_domain",
    "make_grid_domain",
    "mdl_gradients",
    "mdl_loss",
    "neighbors",
    "repair_connectivity",
    "round_binary",
    "save_checkpoint",
    "sparse_code",
    "synth_corpus",
    "train",
    "vectorize",
    "visitation_distribution",
]
