"""Command-line surface: pretrain, finetune, evaluate, ablate,
export-attn, and diagnose.

Every subcommand reads a key=value run config (--config) with flag
overrides, writes its artifacts under --out, and echoes the effective
configuration there. Exit codes: 0 success, 1 configuration/validation
error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .backbone import Backbone, backbone_from_arrays
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, echo_config, load_run_config
from .csvio import write_csv
from .data import Normalizer, load_csv, make_windows, synth_series
from .diagnostics import (
    EXPORT_MODES,
    co_index_mass_statistic,
    collect_triplets,
    export_attention,
    heatmap_filename,
    triplet_correlations,
)
from .metrics import METRIC_NAMES
from .msft import MsftConfig, MsftModel, msft_config_from_flags, msft_config_to_flags
from .rng import Rng
from .training import (
    BackboneTask,
    MsftTask,
    ablation_run,
    build_task,
    evaluate,
    finetune,
    pretrain,
    write_training_log,
)

_MSFT_PREFIXES = ("adapter.", "lora.", "agg.", "mix.")


def _load_table(cfg: RunConfig):
    if cfg.data:
        return load_csv(cfg.data), Path(cfg.data).stem
    components = list(zip(cfg.synth_periods, cfg.synth_amps))
    return (synth_series(components, cfg.synth_sigma, cfg.synth_len,
                         cfg.synth_seed, cfg.synth_cols), "synth")


def _prepare_splits(cfg: RunConfig):
    table, name = _load_table(cfg)
    spec = cfg.split_spec()
    train_stop = spec.boundaries(table.length)["train"][1]
    normalizer = Normalizer.fit(table, train_stop)
    splits = make_windows(normalizer.apply(table), cfg.c, cfg.h, split=spec)
    return splits, name


def _require_init(cfg: RunConfig) -> str:
    if not cfg.init:
        raise ConfigError("this command needs init=<checkpoint> "
                          "(or --init) pointing at a checkpoint file")
    return cfg.init


def _metrics_rows(cfg: RunConfig, dataset: str, reports: list[tuple[str, object]]):
    header = (["mode", "dataset", "horizon"] + list(METRIC_NAMES)
              + ["n_windows", "skipped_smape", "skipped_nd",
                 "sentinel_mase", "sentinel_nrmse"])
    rows = []
    for mode, rep in reports:
        rows.append([mode, dataset, cfg.h] + [getattr(rep, m) for m in METRIC_NAMES]
                    + [rep.n_windows, rep.skipped_terms.get("smape", 0),
                       rep.skipped_terms.get("nd", 0),
                       rep.sentinel_windows.get("mase", 0),
                       rep.sentinel_windows.get("nrmse", 0)])
    return header, rows


def cmd_pretrain(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    table, _ = _load_table(cfg)
    normalizer = Normalizer.fit(table, table.length)
    table = normalizer.apply(table)
    bb = Backbone(cfg.backbone_config())
    bb.init_state(Rng(cfg.seed))
    log = pretrain(bb, table, cfg.train_config())
    save_checkpoint(out / "backbone.ckpt", bb.state, bb.cfg,
                    {"mode": "pretrained"}, dtype=cfg.ckpt_dtype)
    write_training_log(out / "train_log.csv", log)
    echo_config(cfg, out)
    print(f"pretrained {cfg.max_steps} steps; final loss "
          f"{log[-1].train_loss:.6f}; checkpoint at {out / 'backbone.ckpt'}")
    return 0


def _restore_model(cfg: RunConfig, mode: str):
    """Rebuild the task for a checkpoint, loading finetune params if present."""
    ckpt = load_checkpoint(_require_init(cfg))
    bb = backbone_from_arrays(ckpt.config, ckpt.arrays)
    extra = {n: v for n, v in ckpt.arrays.items()
             if n.startswith(_MSFT_PREFIXES)}
    if mode in ("zero_shot", "full", "linear_probe"):
        return BackboneTask(bb, cfg.h), bb
    if extra and "k" in ckpt.mode_flags:
        mcfg = msft_config_from_flags(ckpt.mode_flags)
        model = MsftModel(bb, mcfg)
        for name, value in extra.items():
            bb.state.add(name, value)
    else:
        train_cfg = cfg.train_config()
        task, _ = build_task(bb, train_cfg)
        return task, bb
    return MsftTask(model, cfg.h, cfg.c), bb


def cmd_finetune(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = load_checkpoint(_require_init(cfg))
    bb = backbone_from_arrays(ckpt.config, ckpt.arrays)
    splits, dataset = _prepare_splits(cfg)
    train_cfg = cfg.train_config()
    result = finetune(bb, splits["train"], splits["val"], train_cfg)
    flags = {"mode": cfg.mode}
    if isinstance(result.task, MsftTask):
        flags.update(msft_config_to_flags(result.task.model.cfg))
    save_checkpoint(out / "finetuned.ckpt", bb.state, bb.cfg, flags,
                    dtype=cfg.ckpt_dtype)
    n_w = cfg.k + 1 if cfg.mode == "msft" else 0
    write_training_log(out / "train_log.csv", result.log, n_scales=n_w)
    echo_config(cfg, out)
    print(f"finetuned mode={cfg.mode} on {dataset}: best val loss "
          f"{result.best_val:.6f} after {result.steps} steps")
    return 0


def cmd_evaluate(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    task, _ = _restore_model(cfg, cfg.mode)
    splits, dataset = _prepare_splits(cfg)
    report = evaluate(task, splits["test"], cfg.train_config())
    header, rows = _metrics_rows(cfg, dataset, [(cfg.mode, report)])
    write_csv(out / "metrics.csv", header, rows)
    echo_config(cfg, out)
    print(f"evaluate mode={cfg.mode} dataset={dataset}: "
          f"MSE {report.mse:.6f} MAE {report.mae:.6f} "
          f"({report.n_windows} windows)")
    return 0


def cmd_ablate(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = load_checkpoint(_require_init(cfg))
    splits, dataset = _prepare_splits(cfg)
    base = cfg.train_config()
    rows = ablation_run(ckpt.config, ckpt.arrays, splits["train"], splits["val"],
                        splits["test"], base)
    header = (["name"] + list(METRIC_NAMES) + ["n_windows", "prediction_digest"])
    table = [[r.name] + [getattr(r.report, m) for m in METRIC_NAMES]
             + [r.report.n_windows, r.prediction_digest] for r in rows]
    write_csv(out / "ablation.csv", header, table)
    echo_config(cfg, out)
    for r in rows:
        print(f"{r.name}: MSE {r.report.mse:.6f} MAE {r.report.mae:.6f}")
    return 0


def cmd_export_attn(cfg: RunConfig, mode: str) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    if mode not in EXPORT_MODES:
        raise ConfigError(f"attention mode must be one of {sorted(EXPORT_MODES)}")
    ckpt = load_checkpoint(_require_init(cfg))
    bb = backbone_from_arrays(ckpt.config, ckpt.arrays)
    flags = EXPORT_MODES[mode]
    mcfg = MsftConfig(k_scales=cfg.k, factor=cfg.s, adapters=cfg.adapters,
                      lora=cfg.lora, lora_rank=cfg.lora_rank,
                      lora_alpha=cfg.lora_alpha, c2f=cfg.c2f, f2c=cfg.f2c,
                      mixing=cfg.mixing, train_mask_token=cfg.train_mask_token,
                      **flags)
    model = MsftModel(bb, mcfg)
    extra = {n: v for n, v in ckpt.arrays.items() if n.startswith(_MSFT_PREFIXES)}
    if extra and "k" in ckpt.mode_flags \
            and msft_config_from_flags(ckpt.mode_flags) == mcfg:
        for name, value in extra.items():
            bb.state.add(name, value)
    else:
        model.init_msft_params(Rng(cfg.seed, stream=101))
    splits, _ = _prepare_splits(cfg)
    window = splits["test"].window(0)
    export = export_attention(model, window.context, mode, cfg.layer, cfg.head,
                              horizon_len=cfg.h)
    stats = co_index_mass_statistic(export.probs, model.plan(cfg.c, cfg.h).index_map)
    path = out / heatmap_filename(cfg.run, mode, cfg.layer, cfg.head)
    export.to_csv(path, extra_comments=[
        f"co_index_mean={stats['co_index_mean']!r}",
        f"off_index_mean={stats['off_index_mean']!r}"])
    echo_config(cfg, out)
    print(f"attention heatmap -> {path}; cross-scale co-index mass "
          f"{stats['co_index_mean']:.6g} vs off-index {stats['off_index_mean']:.6g}")
    return 0


def cmd_diagnose(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = load_checkpoint(_require_init(cfg))
    bb = backbone_from_arrays(ckpt.config, ckpt.arrays)
    splits, dataset = _prepare_splits(cfg)
    train = splits["train"]
    n = min(cfg.diag_windows, len(train))
    idx = np.linspace(0, len(train) - 1, n).astype(int).tolist()
    contexts = np.stack([train.window(i).context for i in idx])
    layer = None if cfg.layer == 0 else cfg.layer
    triplets = collect_triplets(bb, contexts, cfg.k, cfg.s, layer=layer,
                                max_lag=cfg.max_lag)
    write_csv(out / "triplets.csv", ["scale", "acf_summary", "embed_norm"],
              [[t.scale, t.acf_summary, t.embed_norm] for t in triplets])
    stats = triplet_correlations(triplets)
    write_csv(out / "correlations.csv",
              ["dataset", "raw", "raw_p", "partial", "partial_p", "n"],
              [[dataset, stats["raw"], stats["raw_p"], stats["partial"],
                stats["partial_p"], stats["n"]]])
    echo_config(cfg, out)
    print(f"confounder check on {dataset}: raw r={stats['raw']:.4f} "
          f"partial r={stats['partial']:.4f} (p={stats['partial_p']:.2e}, "
          f"n={stats['n']})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mstune",
        description="Multi-scale finetuning for a toy patch-transformer forecaster")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("pretrain", "finetune", "evaluate", "ablate",
                 "export-attn", "diagnose"):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="key=value run config file")
        p.add_argument("--mode", default=None,
                       help="training mode, or attention mode for export-attn")
        p.add_argument("--k", default=None, help="number of new scales")
        p.add_argument("--seed", default=None)
        p.add_argument("--lr", default=None)
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--init", default=None, help="checkpoint to start from")
        if name == "export-attn":
            p.add_argument("--layer", default=None)
            p.add_argument("--head", default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {k: getattr(args, k, None)
                 for k in ("k", "seed", "lr", "out", "init", "layer", "head")}
    attn_mode = None
    if args.command == "export-attn":
        attn_mode = args.mode or "in_scale"
    elif args.mode is not None:
        overrides["mode"] = args.mode
    try:
        cfg = load_run_config(args.config, overrides)
        if args.command == "pretrain":
            return cmd_pretrain(cfg)
        if args.command == "finetune":
            return cmd_finetune(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg)
        if args.command == "ablate":
            return cmd_ablate(cfg)
        if args.command == "export-attn":
            return cmd_export_attn(cfg, attn_mode)
        return cmd_diagnose(cfg)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
