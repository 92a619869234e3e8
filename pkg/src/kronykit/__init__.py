"""kronykit: Kronecker-product model compression at desk scale.

Core pieces: nearest-Kronecker decomposition of weight matrices,
norm-preserving and pruning-based factor initializations, multi-factor
sums with learnable scalars, compression-scheme planning, and a tiny
character-level transformer for end-to-end compress-and-finetune runs.
"""

from .errors import DataError, FormatError, ShapeError
from .kron_core import (
    FactorPair,
    KroneckerSum,
    absorb_scalars,
    kron,
    kron_matmul_batch,
    kron_matvec,
    materialize,
    single_term,
)
from .vanloan import kronecker_decompose, rearrange, reconstruction_error
from .init_strategies import NormReport, norm_report, normalized_vl_init, pruning_init
from .scheme_planner import (
    CompressionScheme,
    ModelBudget,
    enumerate_schemes,
    model_size,
    render_table,
    scalar_overhead,
)
from .factorized_layer import (
    FactorizedFFN,
    ffn_backward,
    ffn_forward,
    import_dense,
)
from .desk_trainer import (
    ToyModelConfig,
    TrainConfig,
    ToyTransformer,
    compress_checkpoint,
    eval_nll,
    finetune,
    train_dense,
)
from .model_io import load, save

__version__ = "0.1.0"
