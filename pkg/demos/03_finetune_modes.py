"""Compare the finetune modes on a distribution-shifted corpus.

Pretrains on one pair of periods, then finetunes on a corpus with shifted
periods and amplitudes. The multi-scale mode trains scale adapters,
per-scale low-rank attention deltas, cross-scale aggregators, and mixing
weights while the backbone stays frozen.

This is a scaled-down version of the full seeded study in
mstune.study (which the acceptance suite runs end to end).
"""

import numpy as np

from mstune.study import FINETUNE_MODES, StudySpec, finetune_splits, run_mode, pretrain_backbone

spec = StudySpec(
    pretrain_len=4000, pretrain_steps=400, finetune_len=2000,
    max_epochs=3, steps_per_epoch=10,
)

print("pretraining...")
backbone = pretrain_backbone(spec)
pretrained = backbone.state.snapshot()
splits = finetune_splits(spec)

zero_shot = run_mode(pretrained, spec, "zero_shot", 0, splits)
print(f"zero-shot test MSE {zero_shot.mse:.4f}")

for mode in FINETUNE_MODES:
    report = run_mode(pretrained, spec, mode, seed=0, splits=splits)
    arrow = "improved" if report.mse < zero_shot.mse else "did not improve"
    print(f"{mode:13s} test MSE {report.mse:.4f} ({arrow})")

# the learned mixing weights of a finetuned multi-scale model
from mstune.backbone import backbone_from_arrays
from mstune.training import finetune
from mstune.study import mode_config

bb = backbone_from_arrays(spec.backbone, pretrained)
result = finetune(bb, splits["train"], splits["val"], mode_config(spec, "msft", 0))
print("per-scale mixing weights:", np.round(result.log[-1].weights, 3))
