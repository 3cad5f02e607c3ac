"""Multi-domain classifier training with convolutional attribute embeddings.

Three single-layer convolutional branches (attribute embedding, shared,
domain-specific) feed linear classification heads. Training alternates
coordinate gradient descent on the filters with closed-form least-squares
solves for the heads and the attribute map, under attribute-fit,
domain-matching, and target-neighborhood regularizers.
"""

from .data import (
    DataPoint,
    DomainDataset,
    MultiDomainDataset,
    SplitSpec,
    SynthConfig,
    load_dataset,
    save_dataset,
    seeded_permutation,
    split_target,
    synth_generate,
)
from .errors import (
    ConfigError,
    DataError,
    DivergenceError,
    DomattrError,
    InputError,
    ShapeError,
    SingularityError,
)
from .features import conv_pool, full_rep, predict, score, slide_window
from .objective import (
    Hyper,
    NeighborGraph,
    ObjectiveBreakdown,
    attr_fit_loss,
    build_knn,
    domain_match_loss,
    label_loss,
    neighbor_loss,
    objective,
)
from .solver import (
    ModelParams,
    TrainReport,
    evaluate,
    fit,
    init_params,
    solve_attr_head,
    solve_attr_map,
    solve_domain_head,
    solve_shared_head,
    sweep_filters,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "DataPoint",
    "DivergenceError",
    "DomainDataset",
    "DomattrError",
    "Hyper",
    "InputError",
    "ModelParams",
    "MultiDomainDataset",
    "NeighborGraph",
    "ObjectiveBreakdown",
    "ShapeError",
    "SingularityError",
    "SplitSpec",
    "SynthConfig",
    "TrainReport",
    "attr_fit_loss",
    "build_knn",
    "conv_pool",
    "domain_match_loss",
    "evaluate",
    "fit",
    "full_rep",
    "init_params",
    "label_loss",
    "load_dataset",
    "neighbor_loss",
    "objective",
    "predict",
    "save_dataset",
    "score",
    "seeded_permutation",
    "slide_window",
    "solve_attr_head",
    "solve_attr_map",
    "solve_domain_head",
    "solve_shared_head",
    "split_target",
    "sweep_filters",
    "synth_generate",
    "__version__",
]
