"""Plain-text key=value run configuration.

Unknown keys are rejected by name; every effective key (after flag
overrides) is echoed into the output directory for provenance.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .backbone import BackboneConfig
from .csvio import atomic_write_text
from .data import SplitSpec
from .msft import MsftConfig
from .training import TrainConfig


class ConfigError(ValueError):
    """Bad key, bad value, or unusable combination."""


def _parse_bool(v: str) -> bool:
    if v.lower() in ("true", "1", "yes"):
        return True
    if v.lower() in ("false", "0", "no"):
        return False
    raise ValueError(f"expected a boolean, got {v!r}")


def _parse_floats(v: str) -> tuple[float, ...]:
    return tuple(float(part) for part in v.split(",") if part.strip() != "")


def _opt_int(v: str):
    return None if v.strip() == "" else int(v)


def _opt_float(v: str):
    return None if v.strip() == "" else float(v)


def _opt_str(v: str):
    return None if v.strip() == "" else v


@dataclass
class RunConfig:
    # data source: a CSV path, or a synthetic two-sinusoid corpus
    data: str | None = None
    synth_periods: tuple = (8.0, 64.0)
    synth_amps: tuple = (1.0, 2.0)
    synth_sigma: float = 0.1
    synth_len: int = 20000
    synth_cols: int = 1
    synth_seed: int = 0
    split: tuple = (0.7, 0.1, 0.2)
    # window and backbone
    c: int = 96
    h: int = 96
    p: int = 16
    layers: int = 4
    d_model: int = 64
    heads: int = 4
    ffn_mult: int = 4
    # mode and multi-scale toggles
    mode: str = "zero_shot"
    k: int = 2
    s: int = 2
    adapters: str = "scale"
    lora: str = "scale"
    lora_rank: int | None = None
    lora_alpha: float = 32.0
    in_scale_mask: bool = True
    c2f: bool = True
    f2c: bool = True
    mixing: str = "weighted"
    aligned_positions: bool = False
    train_mask_token: bool = False
    # optimization
    lr: float | None = None
    weight_decay: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.98
    adam_eps: float = 1e-8
    batch_size: int = 32
    max_steps: int = 2000
    max_epochs: int = 20
    steps_per_epoch: int | None = None
    patience: int = 3
    seasonal_m: int = 1
    # run bookkeeping
    seed: int = 0
    out: str = "out"
    init: str | None = None
    run: str = "run"
    ckpt_dtype: str = "f4"
    # diagnostics
    layer: int = 0
    head: int = 0
    max_lag: int = 24
    diag_windows: int = 64

    def backbone_config(self) -> BackboneConfig:
        return BackboneConfig(self.layers, self.d_model, self.heads, self.p,
                              self.ffn_mult)

    def msft_config(self) -> MsftConfig:
        return MsftConfig(k_scales=self.k, factor=self.s, adapters=self.adapters,
                          lora=self.lora, lora_rank=self.lora_rank,
                          lora_alpha=self.lora_alpha,
                          in_scale_mask=self.in_scale_mask, c2f=self.c2f,
                          f2c=self.f2c, mixing=self.mixing,
                          aligned_positions=self.aligned_positions,
                          train_mask_token=self.train_mask_token)

    def train_config(self) -> TrainConfig:
        return TrainConfig(mode=self.mode, lr=self.lr,
                           weight_decay=self.weight_decay, beta1=self.beta1,
                           beta2=self.beta2, eps=self.adam_eps,
                           batch_size=self.batch_size, max_steps=self.max_steps,
                           max_epochs=self.max_epochs,
                           steps_per_epoch=self.steps_per_epoch,
                           patience=self.patience, seed=self.seed,
                           context_len=self.c, horizon_len=self.h,
                           lora_rank=self.lora_rank, lora_alpha=self.lora_alpha,
                           seasonal_m=self.seasonal_m, msft=self.msft_config())

    def split_spec(self) -> SplitSpec:
        if len(self.split) != 3:
            raise ConfigError(f"split needs 3 ratios, got {self.split}")
        return SplitSpec(*self.split)

    def to_lines(self) -> list[str]:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                text = ""
            elif isinstance(v, bool):
                text = str(v).lower()
            elif isinstance(v, tuple):
                text = ",".join(repr(float(x)) for x in v)
            elif isinstance(v, float):
                text = repr(v)
            else:
                text = str(v)
            lines.append(f"{f.name}={text}")
        return lines


_PARSERS = {
    "data": _opt_str, "synth_periods": _parse_floats, "synth_amps": _parse_floats,
    "synth_sigma": float, "synth_len": int, "synth_cols": int, "synth_seed": int,
    "split": _parse_floats,
    "c": int, "h": int, "p": int, "layers": int, "d_model": int, "heads": int,
    "ffn_mult": int,
    "mode": str, "k": int, "s": int, "adapters": str, "lora": str,
    "lora_rank": _opt_int, "lora_alpha": float, "in_scale_mask": _parse_bool,
    "c2f": _parse_bool, "f2c": _parse_bool, "mixing": str,
    "aligned_positions": _parse_bool, "train_mask_token": _parse_bool,
    "lr": _opt_float, "weight_decay": float, "beta1": float, "beta2": float,
    "adam_eps": float, "batch_size": int, "max_steps": int, "max_epochs": int,
    "steps_per_epoch": _opt_int, "patience": int, "seasonal_m": int,
    "seed": int, "out": str, "init": _opt_str, "run": str, "ckpt_dtype": str,
    "layer": int, "head": int, "max_lag": int, "diag_windows": int,
}


def parse_kv_lines(text: str) -> dict[str, str]:
    pairs = {}
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {i}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        pairs[key.strip()] = value.strip()
    return pairs


def load_run_config(path: str | None = None,
                    overrides: dict[str, str] | None = None) -> RunConfig:
    pairs: dict[str, str] = {}
    if path is not None:
        pairs.update(parse_kv_lines(Path(path).read_text(encoding="utf-8")))
    for k, v in (overrides or {}).items():
        if v is not None:
            pairs[str(k)] = str(v)
    cfg = RunConfig()
    for key, raw in pairs.items():
        if key not in _PARSERS:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            setattr(cfg, key, _PARSERS[key](raw))
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"config key {key!r}: {exc}") from None
    return cfg


def echo_config(cfg: RunConfig, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "config_echo.txt", "\n".join(cfg.to_lines()) + "\n")
