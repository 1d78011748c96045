"""AdamW optimization, pretraining, the finetune modes, and evaluation.

Four finetune modes share one loop: ``full`` updates everything,
``linear_probe`` only the output head, ``lora`` low-rank Q/K/V deltas plus
the head, and ``msft`` the multi-scale parameter set. Early stopping
monitors validation loss once per epoch and restores the best snapshot.
Everything is deterministic given (seed, config, data).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .backbone import Backbone, BackboneConfig, ModelState, reconstruction_loss
from .metrics import MetricReport, evaluate_windows
from .msft import MsftConfig, MsftModel
from .rng import Rng
from .tensor import Tensor, no_grad

MODES = ("zero_shot", "full", "linear_probe", "lora", "msft")

# toy-scale defaults; the paper-scale rates are far too small for d<=64 models
DEFAULT_LRS = {"full": 5e-6, "linear_probe": 5e-4, "lora": 5e-5, "msft": 5e-5}


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "msft"
    lr: float | None = None
    weight_decay: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-8
    batch_size: int = 32
    max_steps: int = 2000
    max_epochs: int = 20
    steps_per_epoch: int | None = None
    patience: int = 3
    seed: int = 0
    context_len: int = 96
    horizon_len: int = 96
    lora_rank: int | None = None
    lora_alpha: float = 32.0
    seasonal_m: int = 1
    msft: MsftConfig = field(default_factory=lambda: MsftConfig(k_scales=2))

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.lr is not None and self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")

    @property
    def learning_rate(self) -> float:
        if self.lr is not None:
            return self.lr
        return DEFAULT_LRS.get(self.mode, 5e-5)


class AdamW:
    """Decoupled weight decay; bias-corrected moments; trainables only."""

    def __init__(self, state: ModelState, lr: float, weight_decay: float = 0.1,
                 beta1: float = 0.9, beta2: float = 0.98, eps: float = 1e-8):
        self.state = state
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.moments = {name: (np.zeros_like(p.data), np.zeros_like(p.data))
                        for name, p in state.trainable_items()}

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name in self.moments:
            p = self.state[name]
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.isfinite(g).all():
                raise RuntimeError(f"non-finite gradient in parameter {name!r}")
            m, v = self.moments[name]
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            self.moments[name] = (m, v)
            m_hat = m / (1 - b1**self.t)
            v_hat = v / (1 - b2**self.t)
            p.data = (p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
                      - self.lr * self.weight_decay * p.data)

    def zero_grad(self) -> None:
        self.state.zero_grad()


class EarlyStopper:
    """Stop after ``patience`` non-improving validations; keep the best."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = np.inf
        self.bad = 0
        self.snapshot = None

    def update(self, val_loss: float, state: ModelState) -> bool:
        if val_loss < self.best:
            self.best = val_loss
            self.bad = 0
            self.snapshot = state.snapshot()
            return True
        self.bad += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad >= self.patience

    def restore(self, state: ModelState) -> None:
        if self.snapshot is not None:
            state.restore(self.snapshot)


@dataclass
class LogRow:
    step: int
    train_loss: float
    val_loss: float | None = None
    weights: list[float] | None = None


def write_training_log(path, rows: list["LogRow"], n_scales: int = 0) -> None:
    """CSV log: step, train_loss, val_loss, then per-scale mixing weights."""
    from .csvio import write_csv

    header = ["step", "train_loss", "val_loss"] + [f"w_{i}" for i in range(n_scales)]
    table = []
    for r in rows:
        w = list(r.weights) if r.weights else []
        w += [None] * (n_scales - len(w))
        table.append([r.step, r.train_loss, r.val_loss] + w[:n_scales])
    write_csv(path, header, table)


# -- mode wiring ---------------------------------------------------------------


class BackboneTask:
    """Single-scale objective used by full / linear_probe / zero_shot."""

    def __init__(self, backbone: Backbone, horizon_len: int):
        self.backbone = backbone
        self.horizon_len = horizon_len

    def loss(self, ctx: np.ndarray, hor: np.ndarray) -> Tensor:
        pred = self.backbone.forward_window(ctx, self.horizon_len)
        return reconstruction_loss(pred, hor)

    def predict(self, ctx: np.ndarray) -> np.ndarray:
        with no_grad():
            return self.backbone.forward_window(ctx, self.horizon_len).data

    def mixing_weights(self):
        return None


class MsftTask:
    """Multi-scale objective; also hosts the plain low-rank mode (K=0)."""

    def __init__(self, model: MsftModel, horizon_len: int, context_len: int):
        self.model = model
        self.horizon_len = horizon_len
        self.plan = model.plan(context_len, horizon_len)

    def loss(self, ctx: np.ndarray, hor: np.ndarray) -> Tensor:
        preds = self.model.forward(ctx, self.horizon_len)
        targets, valid = self.model.per_scale_targets(hor, self.plan)
        return self.model.loss(preds, targets, valid)

    def predict(self, ctx: np.ndarray) -> np.ndarray:
        with no_grad():
            return self.model.predict(ctx, self.horizon_len).mixed

    def mixing_weights(self):
        with no_grad():
            return self.model.mixing_weights().data.tolist()


def build_task(backbone: Backbone, config: TrainConfig):
    """Wire a mode to its task object and trainable-parameter partition."""
    mode = config.mode
    if mode in ("zero_shot", "full", "linear_probe"):
        task = BackboneTask(backbone, config.horizon_len)
        if mode == "zero_shot":
            names = []
        elif mode == "full":
            names = backbone.state.names()
        else:
            names = ["out_proj.w", "out_proj.b"]
        return task, names
    if mode == "lora":
        cfg = MsftConfig(k_scales=0, adapters="none", lora="shared",
                         lora_rank=config.lora_rank if config.lora_rank is not None else 16,
                         lora_alpha=config.lora_alpha,
                         c2f=False, f2c=False, mixing="none")
        model = MsftModel(backbone, cfg)
        model.init_msft_params(Rng(config.seed, stream=101))
        names = [n for n in backbone.state.names() if n.startswith("lora.")]
        names += ["out_proj.w", "out_proj.b"]
        return MsftTask(model, config.horizon_len, config.context_len), names
    # msft
    model = MsftModel(backbone, config.msft)
    model.init_msft_params(Rng(config.seed, stream=101))
    return (MsftTask(model, config.horizon_len, config.context_len),
            model.trainable_names())


# -- loops ----------------------------------------------------------------------


def pretrain(backbone: Backbone, table, config: TrainConfig) -> list[LogRow]:
    """Masked-reconstruction pretraining on random crops of ``table``."""
    state = backbone.state
    state.set_trainable(state.names())
    opt = AdamW(state, config.learning_rate if config.lr is not None else 1e-3,
                config.weight_decay, config.beta1, config.beta2, config.eps)
    rng = Rng(config.seed, stream=1)
    window = config.context_len + config.horizon_len
    columns = [table.values[c] for c in table.columns]
    for col in columns:
        if len(col) < window:
            raise ValueError("corpus series shorter than one training window")
    log = []
    for step in range(config.max_steps):
        ctx = np.empty((config.batch_size, config.context_len))
        hor = np.empty((config.batch_size, config.horizon_len))
        cols = rng.integers(0, len(columns), size=config.batch_size)
        for b in range(config.batch_size):
            series = columns[cols[b]]
            start = int(rng.integers(0, len(series) - window + 1))
            ctx[b] = series[start:start + config.context_len]
            hor[b] = series[start + config.context_len:start + window]
        loss = BackboneTask(backbone, config.horizon_len).loss(ctx, hor)
        if not np.isfinite(loss.data):
            raise RuntimeError(f"pretraining diverged at step {step}")
        loss.backward()
        opt.step()
        opt.zero_grad()
        log.append(LogRow(step, float(loss.data)))
    return log


def _epoch_loss(task, dataset, idx, batch_size) -> float:
    total, n = 0.0, 0
    for lo in range(0, len(idx), batch_size):
        batch = idx[lo:lo + batch_size]
        ctx, hor = dataset.batch(batch)
        with no_grad():
            total += float(task.loss(ctx, hor).data) * len(batch)
        n += len(batch)
    return total / n


@dataclass
class FinetuneResult:
    task: object
    log: list[LogRow]
    best_val: float
    steps: int


def finetune(backbone: Backbone, train_ds, val_ds, config: TrainConfig) -> FinetuneResult:
    """Train the mode's partition with early stopping on validation loss."""
    if config.mode == "zero_shot":
        raise ValueError("zero_shot has nothing to finetune; evaluate directly")
    task, trainable = build_task(backbone, config)
    state = backbone.state
    state.set_trainable(trainable)
    opt = AdamW(state, config.learning_rate, config.weight_decay,
                config.beta1, config.beta2, config.eps)
    stopper = EarlyStopper(config.patience)
    rng = Rng(config.seed, stream=2)
    log = []
    step = 0
    val_idx = list(range(len(val_ds)))
    for _ in range(config.max_epochs):
        order = rng.permutation(len(train_ds)).tolist()
        if config.steps_per_epoch is not None:
            order = order[:config.steps_per_epoch * config.batch_size]
        epoch_losses = []
        for lo in range(0, len(order), config.batch_size):
            ctx, hor = train_ds.batch(order[lo:lo + config.batch_size])
            loss = task.loss(ctx, hor)
            if not np.isfinite(loss.data):
                raise RuntimeError(f"finetuning diverged at step {step}")
            loss.backward()
            opt.step()
            opt.zero_grad()
            epoch_losses.append(float(loss.data))
            step += 1
        val_loss = _epoch_loss(task, val_ds, val_idx, config.batch_size)
        log.append(LogRow(step, float(np.mean(epoch_losses)), val_loss,
                          task.mixing_weights()))
        stopper.update(val_loss, state)
        if stopper.should_stop:
            break
    stopper.restore(state)
    return FinetuneResult(task, log, stopper.best, step)


def evaluate(task, test_ds, config: TrainConfig) -> MetricReport:
    """Metrics over every window of the test split."""
    if len(test_ds) == 0:
        raise ValueError("test split has no windows")
    preds, targets = [], []
    idx = list(range(len(test_ds)))
    for lo in range(0, len(idx), config.batch_size):
        ctx, hor = test_ds.batch(idx[lo:lo + config.batch_size])
        preds.append(task.predict(ctx))
        targets.append(hor)
    return evaluate_windows(np.concatenate(preds), np.concatenate(targets),
                            config.seasonal_m)


# -- ablation harness -------------------------------------------------------------


TABLE3_GRID: list[tuple[str, dict]] = [
    ("inproject_frozen", {"adapters": "none"}),
    ("inproject_shared", {"adapters": "shared"}),
    ("attention_frozen", {"lora": "none"}),
    ("attention_shared", {"lora": "shared"}),
    ("no_aggregators", {"c2f": False, "f2c": False}),
    ("no_c2f", {"c2f": False}),
    ("no_f2c", {"f2c": False}),
    ("direct_attention", {"in_scale_mask": False, "c2f": False, "f2c": False}),
    ("no_mixing", {"mixing": "none"}),
    ("average_mixing", {"mixing": "average"}),
]


@dataclass
class AblationRow:
    name: str
    report: MetricReport
    prediction_digest: str


def ablation_run(backbone_cfg: BackboneConfig, pretrained: dict[str, np.ndarray],
                 train_ds, val_ds, test_ds, base_config: TrainConfig,
                 toggles: list[tuple[str, dict]] | None = None) -> list[AblationRow]:
    """One finetune+evaluate per toggle configuration, same seed throughout."""
    import hashlib

    from .backbone import backbone_from_arrays

    rows = []
    grid = [("msft_full", {})] + (TABLE3_GRID if toggles is None else toggles)
    for name, overrides in grid:
        bb = backbone_from_arrays(backbone_cfg, pretrained)
        config = replace(base_config, mode="msft",
                         msft=replace(base_config.msft, **overrides))
        result = finetune(bb, train_ds, val_ds, config)
        report = evaluate(result.task, test_ds, config)
        idx = list(range(min(len(test_ds), config.batch_size)))
        ctx, _ = test_ds.batch(idx)
        digest = hashlib.sha256(result.task.predict(ctx).tobytes()).hexdigest()
        rows.append(AblationRow(name, report, digest))
    return rows
