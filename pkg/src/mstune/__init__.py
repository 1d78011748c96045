"""Toy patch-transformer forecaster with multi-scale finetuning."""

from .backbone import (
    Backbone,
    BackboneConfig,
    ModelState,
    backbone_from_arrays,
    patchify,
    reconstruction_loss,
)
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import (
    Normalizer,
    SeriesTable,
    SplitSpec,
    WindowDataset,
    acf_feature,
    load_csv,
    make_windows,
    synth_series,
)
from .gradcheck import finite_diff_check
from .metrics import MetricReport, evaluate_windows
from .msft import ForecastBundle, MsftConfig, MsftModel, build_in_scale_mask
from .multiscale import (
    MultiScaleSet,
    ScaleSpec,
    avg_downsample,
    build_alignment,
    build_multiscale_set,
    build_scale_index_map,
    token_avgpool,
    token_repeat,
    upsample_prediction,
)
from .rng import Rng
from .tensor import Tensor, no_grad
from .training import (
    AdamW,
    TrainConfig,
    ablation_run,
    build_task,
    evaluate,
    finetune,
    pretrain,
)

__version__ = "0.1.0"
