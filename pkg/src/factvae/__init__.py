"""factvae: factorized VAEs for grouped data with missing groups and group-sparse latents."""

from .errors import FactVaeError, InvalidArgumentError, NumericalError, ParseError
from .gaussian import (DiagGaussian, SeededRng, entropy, kl_to_standard_normal, poe_fuse,
                       reparam_sample)
from .model import (FactVaeModel, GroupedSample, GroupSpec, assemble_phi, decode_group,
                    elbo_tilde, encode, encode_group, load_model, save_model)
from .sparsity import SparsityConfig, penalty, prox_group_lasso, prox_step
from .data import BarsConfig, GroupedDataset, generate_bars, read_dataset, write_dataset
from .trainer import TrainConfig, TrainHistory, adam_step, sample_inference_subset, train
from .evaluate import (SparsityMatrix, heldout_ll, reconstruct, reconstruct_dataset,
                       sparsity_matrix, write_pgm)

__version__ = "0.1.0"
