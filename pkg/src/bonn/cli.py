"""Command-line entry points.

Five commands share one artifact convention: every run writes its outputs
plus a ``resolved_config.json`` into ``--out``, and identical (config, seed)
pairs produce byte-identical files. Exit codes: 0 success, 2 configuration
error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import pipeline
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, resolve, write_resolved
from .datagen import SPLIT_NAMES, generate_dataset, load_dataset, save_dataset
from .experiments import FidelityConfig, HwFractionConfig, run_fidelity, run_hw_fraction
from .metrics import evaluation_summary, precision_recall_f1
from .models import AutoencoderSpec
from .training import TrainConfig, train

_TRAINING_LOG_COLUMNS = ("epoch", "member", "train_loss", "val_mse", "mean_abs_mu", "mean_sigma")
_DECISION_COLUMNS = ("block_id", "score", "p_anomaly", "label", "truth", "anomaly_size")
_FIDELITY_COLUMNS = (
    "setting", "shots", "gate_error", "readout_flip", "input",
    "fidelity", "discarded_fraction", "status",
)
_HW_RUN_COLUMNS = ("fraction", "repeat", "circuits", "mse_layer", "mse_conv", "mse_autoencoder")
_HW_SUMMARY_COLUMNS = (
    "fraction", "circuits", "repeats",
    "mse_layer_mean", "mse_layer_std", "mse_conv_mean", "mse_conv_std",
    "mse_autoencoder_mean", "mse_autoencoder_std",
)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path: Path, columns: tuple[str, ...], rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row.get(col)) for col in columns])


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2) + "\n")


def _workers() -> int:
    raw = os.environ.get("BONN_WORKERS", "1")
    try:
        count = int(raw)
    except ValueError as exc:
        raise ConfigError(f"BONN_WORKERS must be an integer, got {raw!r}") from exc
    if count < 1:
        raise ConfigError(f"BONN_WORKERS must be >= 1, got {count}")
    return count


def _build(factory, *args, **kwargs):
    """Construct a domain config object, mapping ValueError to ConfigError."""
    try:
        return factory(*args, **kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_gen_data(settings: dict, out_dir: Path) -> None:
    dataset = generate_dataset(
        num_scans=settings["num_scans"],
        edge=settings["edge"],
        block_edge=settings["block_edge"],
        prevalence=settings["prevalence"],
        seed=settings["seed"],
        workers=_workers(),
    )
    path = out_dir / settings["output"]
    save_dataset(dataset, path)
    info = dataset.summary()
    print(f"wrote {path} ({info['count']} blocks, edge {info['block_edge']})")
    print(f"positives: {info['positives']} ({100 * info['prevalence']:.2f}%)")
    for name in SPLIT_NAMES:
        view = dataset.split(name)
        pos = int(view.labels.sum())
        print(f"  {name}: {len(view.indices)} blocks, {pos} anomalous")


def _history_rows(history: list[dict]) -> list[dict]:
    return [{col: entry.get(col) for col in _TRAINING_LOG_COLUMNS} for entry in history]


def cmd_train(settings: dict, out_dir: Path) -> None:
    dataset = load_dataset(settings["dataset"])
    train_blocks = dataset.split("train").blocks
    val_blocks = dataset.split("val").blocks
    val_data = val_blocks if val_blocks.shape[0] else None

    resume_state = None
    if settings["resume"] is not None:
        previous = load_checkpoint(settings["resume"])
        if previous.mode != settings["mode"]:
            raise ConfigError(
                f"resume checkpoint was trained in mode {previous.mode!r}, "
                f"requested {settings['mode']!r}"
            )
        arch = previous.arch
        resume_state = previous.training_state
    else:
        arch = _build(
            AutoencoderSpec,
            variant=settings["variant"],
            block_edge=dataset.block_edge,
            hidden_dim=settings["hidden_dim"],
            latent_dim=settings["latent_dim"],
            conv1_stride=settings["conv1_stride"],
            layout_kind=settings["layout_kind"],
        )

    config = _build(
        TrainConfig,
        mode=settings["mode"],
        epochs=settings["epochs"],
        batch_size=settings["batch_size"],
        learning_rate=settings["learning_rate"],
        momentum=settings["momentum"],
        optimizer=settings["optimizer"],
        sigma_lik=settings["sigma_lik"],
        kl_scale=settings["kl_scale"],
        mc_samples=settings["mc_samples"],
        eval_draws=settings["eval_draws"],
        ensemble_size=settings["ensemble_size"],
        dropout_rate=settings["dropout_rate"],
        orthogonality_check=settings["orthogonality_check"],
        seed=settings["seed"],
    )

    trained = train(arch, train_blocks, config, val_data=val_data, resume_state=resume_state)
    ckpt_path = out_dir / settings["checkpoint"]
    save_checkpoint(trained, ckpt_path)
    _write_csv(out_dir / "training_log.csv", _TRAINING_LOG_COLUMNS, _history_rows(trained.history))

    last = trained.history[-1] if trained.history else {}
    summary = {
        "variant": trained.arch.variant,
        "mode": trained.mode,
        "epochs_completed": len({e["epoch"] for e in trained.history}),
        "final_train_loss": last.get("train_loss"),
        "final_val_mse": last.get("val_mse"),
        "checkpoint": ckpt_path.name,
    }
    angle_stats = trained.angle_summary()
    if angle_stats is not None:
        summary["angle_mean_abs_mu"] = angle_stats["mean_abs_mu"]
        summary["angle_mean_sigma"] = angle_stats["mean_sigma"]
        print(
            f"angle posterior: mean |mu| = {angle_stats['mean_abs_mu']!r}, "
            f"mean sigma = {angle_stats['mean_sigma']!r}"
        )
    _write_json(out_dir / "train_summary.json", summary)
    print(f"wrote {ckpt_path} ({trained.arch.variant}, mode {trained.mode})")
    if last:
        print(f"final train loss: {last.get('train_loss')!r}")


def cmd_evaluate(settings: dict, out_dir: Path) -> None:
    dataset = load_dataset(settings["dataset"])
    leaked = pipeline.split_leakage(dataset)
    if leaked:
        raise RuntimeError(f"split leakage: {leaked} block(s) appear in more than one split")

    trained = load_checkpoint(settings["checkpoint"])
    draws = settings["eval_draws"] if settings["eval_draws"] is not None else trained.eval_draws
    val = dataset.split("val")
    test = dataset.split("test")
    if not val.blocks.shape[0] or not test.blocks.shape[0]:
        raise RuntimeError("evaluation needs non-empty val and test splits")

    seed = settings["seed"]
    val_rng = np.random.default_rng(np.random.SeedSequence([seed, 11]))
    val_scores = pipeline.pass_scores(trained, val.blocks, val_rng, draws=draws).mean(axis=0)
    threshold = pipeline.calibrate_threshold(val_scores, val.labels)

    test_rng = np.random.default_rng(np.random.SeedSequence([seed, 12]))
    decisions = pipeline.decide_blocks(
        trained,
        test.blocks,
        threshold.tau,
        test_rng,
        draws=draws,
        block_ids=test.indices,
        truths=test.labels,
        sizes=test.sizes,
    )

    truths = np.array([d.truth for d in decisions])
    labels = np.array([int(d.label) for d in decisions])
    confidences = np.array([d.confidence for d in decisions])
    sizes = np.array([d.anomaly_size for d in decisions])
    prf = precision_recall_f1(truths, labels)

    summary = evaluation_summary(
        f"{trained.arch.variant}-{trained.mode}", truths, labels, confidences, sizes
    )
    payload = dict(summary)
    payload.update(
        {
            "threshold": threshold.tau,
            "threshold_val_f1": threshold.f1,
            "threshold_degenerate": threshold.degenerate,
            "eval_draws": draws,
            "test_blocks": int(test.blocks.shape[0]),
            "no_positive_predictions": prf.no_positive_predictions,
        }
    )
    _write_json(out_dir / "metrics.json", payload)
    _write_csv(
        out_dir / "decisions.csv",
        _DECISION_COLUMNS,
        [pipeline.decision_record(d) for d in decisions],
    )
    parts = ", ".join(f"{k}={_fmt(v)}" for k, v in summary.items() if k != "model")
    print(f"{summary['model']}: {parts}")


def cmd_experiment_fidelity(settings: dict, out_dir: Path) -> None:
    config = _build(
        FidelityConfig,
        n=settings["n"],
        num_inputs=settings["num_inputs"],
        input_kind=settings["input_kind"],
        shots_small=settings["shots_small"],
        shots_large=settings["shots_large"],
        gate_error=settings["gate_error"],
        readout_flip=settings["readout_flip"],
        seed=settings["seed"],
    )
    rows = run_fidelity(config)
    _write_csv(out_dir / "fidelity.csv", _FIDELITY_COLUMNS, rows)
    for row in rows:
        if row["input"] == "avg":
            shots = row["shots"] if row["shots"] is not None else "exact"
            print(f"{row['setting']} (shots={shots}): avg fidelity {_fmt(row['fidelity'])}")


def _select_block(dataset, block_index: int) -> int:
    if block_index >= 0:
        if block_index >= dataset.count:
            raise RuntimeError(
                f"block_index {block_index} out of range for {dataset.count} blocks"
            )
        return block_index
    test = dataset.split("test")
    anomalous = test.indices[test.labels == 1]
    if anomalous.size == 0:
        raise RuntimeError("no anomalous block in the test split; pass block_index explicitly")
    return int(anomalous[0])


def cmd_experiment_hw_fraction(settings: dict, out_dir: Path) -> None:
    dataset = load_dataset(settings["dataset"])
    trained = load_checkpoint(settings["checkpoint"])
    config = _build(
        HwFractionConfig,
        slice_index=settings["slice_index"],
        shots=settings["shots"],
        repeats=settings["repeats"],
        fractions=settings["fractions"],
        gate_error=settings["gate_error"],
        readout_flip=settings["readout_flip"],
        seed=settings["seed"],
    )
    index = _select_block(dataset, settings["block_index"])
    block = dataset.blocks[index]
    runs, summary = run_hw_fraction(trained, block, config)
    _write_csv(out_dir / "hw_fraction.csv", _HW_RUN_COLUMNS, runs)
    _write_csv(out_dir / "hw_fraction_summary.csv", _HW_SUMMARY_COLUMNS, summary)
    print(f"block {index}, slice {config.slice_index}, shots {config.shots}")
    full = summary[-1]
    print(
        f"f={full['fraction']}%: layer {_fmt(full['mse_layer_mean'])}, "
        f"conv {_fmt(full['mse_conv_mean'])}, "
        f"autoencoder {_fmt(full['mse_autoencoder_mean'])}"
    )


_HANDLERS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "experiment-fidelity": cmd_experiment_fidelity,
    "experiment-hw-fraction": cmd_experiment_hw_fraction,
}


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON file of command settings")
    parser.add_argument("--seed", type=int, default=None, help="global seed (default 0)")
    parser.add_argument("--out", default=".", help="output directory (created if missing)")
    parser.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one setting; repeatable",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bonn",
        description="Train and evaluate circuit-based autoencoders on voxel blocks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, helptext in (
        ("gen-data", "synthesize a labelled block dataset"),
        ("train", "train an autoencoder and write a checkpoint"),
        ("evaluate", "calibrate on val, classify test, write metrics"),
    ):
        cmd = sub.add_parser(name, help=helptext)
        cmd.set_defaults(command_key=name)
        _add_common_flags(cmd)

    experiment = sub.add_parser("experiment", help="hardware-emulation studies")
    exp_sub = experiment.add_subparsers(dest="experiment", required=True)
    for name, key, helptext in (
        ("fidelity", "experiment-fidelity", "shot-noise fidelity sweep"),
        ("hw-fraction", "experiment-hw-fraction", "per-slice hardware-fraction MSE sweep"),
    ):
        cmd = exp_sub.add_parser(name, help=helptext)
        cmd.set_defaults(command_key=key)
        _add_common_flags(cmd)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        settings = resolve(args.command_key, args.config, tuple(args.set), args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        _HANDLERS[args.command_key](settings, out_dir)
        write_resolved(settings, args.command_key, out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
