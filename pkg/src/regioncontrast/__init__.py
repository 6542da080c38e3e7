"""Multi-task dense prediction from partial labels, with a contrast term
over per-region Gaussian summaries, at desk scale.

Feature maps are summarized per region as Gaussians; corresponding regions
across task maps are pulled together and distinct regions pushed apart
under a Bures-Wasserstein (or KL) distance inside an NCE objective.  The
package ships its own reverse-mode autodiff, a toy multi-task network, a
procedural scene generator and a deterministic training harness.
"""

from .autodiff import Tape, Tensor, grad_check
from .contrast import (
    ContrastConfig,
    ContrastReport,
    cross_task_region_contrast,
    nce_region_loss,
    pair_schedule,
)
from .errors import ConfigError, DataError, FormatError, NumericError, RegionTooSmallError
from .gaussdist import (
    jeffreys,
    kl_gauss,
    spd_sqrt,
    symmetric_eigen,
    wasserstein_sq,
    wasserstein_sq_grad,
)
from .harness import RunConfig, ablate, evaluate, parse_config, train
from .nets import adam_step, aux_map_forward, backbone_forward, init_params
from .regions import RegionMask, downsample_mask, make_patch_grid
from .regionstats import RegionGaussian, fit_region_gaussian
from .supervision import MetricAccumulator, aerr, merr, miou
from .synthworld import Scene, WorldConfig, assign_labels, generate_scene
from .tasks import TASKS

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ContrastConfig", "ContrastReport", "DataError", "FormatError",
    "MetricAccumulator", "NumericError", "RegionGaussian", "RegionMask",
    "RegionTooSmallError", "RunConfig", "Scene", "TASKS", "Tape", "Tensor",
    "WorldConfig", "ablate", "adam_step", "aerr", "assign_labels",
    "aux_map_forward", "backbone_forward", "cross_task_region_contrast",
    "downsample_mask", "evaluate", "fit_region_gaussian", "generate_scene",
    "grad_check", "init_params", "jeffreys", "kl_gauss", "make_patch_grid",
    "merr", "miou", "nce_region_loss", "pair_schedule", "parse_config",
    "spd_sqrt", "symmetric_eigen", "train", "wasserstein_sq",
    "wasserstein_sq_grad",
]
