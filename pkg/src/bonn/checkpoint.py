"""Checkpoint files for trained models.

Layout: magic ``BONNC1`` + little-endian u32 header length + UTF-8 JSON
header + concatenated raw array payload.  The header carries the format
version, architecture, training mode, seed, per-array descriptors
(name/shape/dtype in payload order), loss history, and RNG states.  Model
parameters are stored as little-endian float32; training-state arrays
(exact parameters, optimizer state) as float64 so a resumed run continues
bit-identically.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .models import AutoencoderSpec, build_autoencoder
from .training import TrainedModel, VariationalParams

MAGIC = b"BONNC1"
FORMAT_VERSION = 1
_LEN = struct.Struct("<I")


class CheckpointError(Exception):
    """Checkpoint file violates the on-disk format."""


def _flatten_state_arrays(state: dict) -> tuple[dict, dict[str, np.ndarray]]:
    """Split a training state into its JSON-safe part and its arrays."""
    arrays = {"state.params": np.asarray(state["params"], dtype=np.float64)}
    for name, arr in state["optimizer"].items():
        arrays[f"state.opt.{name}"] = np.asarray(arr, dtype=np.float64)
    meta = {
        "epoch": int(state["epoch"]),
        "optimizer_arrays": sorted(state["optimizer"]),
        "shuffle_rng": state["shuffle_rng"],
        "noise_rng": state["noise_rng"],
        "history": state["history"],
    }
    return meta, arrays


def _rebuild_state(meta: dict, arrays: dict[str, np.ndarray]) -> dict:
    return {
        "epoch": meta["epoch"],
        "params": arrays["state.params"],
        "optimizer": {name: arrays[f"state.opt.{name}"] for name in meta["optimizer_arrays"]},
        "shuffle_rng": meta["shuffle_rng"],
        "noise_rng": meta["noise_rng"],
        "history": meta["history"],
    }


def save_checkpoint(trained: TrainedModel, path) -> None:
    arrays: list[tuple[str, np.ndarray, str]] = []

    def add(name: str, values: np.ndarray, dtype: str) -> None:
        arrays.append((name, np.ascontiguousarray(values), dtype))

    for k, model in enumerate(trained.models):
        for name, values in model.named_params().items():
            add(f"model{k}.{name}", values, "<f4")
    if trained.vp is not None:
        add("vp.mu", trained.vp.mu, "<f4")
        add("vp.rho", trained.vp.rho, "<f4")

    state_meta = None
    if trained.training_state is not None:
        state_meta, state_arrays = _flatten_state_arrays(trained.training_state)
        for name in sorted(state_arrays):
            add(name, state_arrays[name], "<f8")

    header = {
        "format_version": FORMAT_VERSION,
        "arch": trained.arch.to_dict(),
        "mode": trained.mode,
        "seed": int(trained.seed),
        "eval_draws": int(trained.eval_draws),
        "num_models": len(trained.models),
        "history": trained.history,
        "training_state": state_meta,
        "arrays": [
            {"name": name, "shape": list(values.shape), "dtype": dtype}
            for name, values, dtype in arrays
        ],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_LEN.pack(len(blob)))
        fh.write(blob)
        for _, values, dtype in arrays:
            fh.write(values.astype(dtype).tobytes())


def load_checkpoint(path) -> TrainedModel:
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + _LEN.size:
        raise CheckpointError("corrupt header: file shorter than the header")
    if data[: len(MAGIC)] != MAGIC:
        raise CheckpointError(
            f"magic mismatch: expected {MAGIC!r}, found {data[: len(MAGIC)]!r}"
        )
    (header_len,) = _LEN.unpack_from(data, len(MAGIC))
    offset = len(MAGIC) + _LEN.size
    if len(data) < offset + header_len:
        raise CheckpointError("truncated header")
    try:
        header = json.loads(data[offset : offset + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError("corrupt header: invalid JSON") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported format version {header.get('format_version')!r}; "
            f"this build reads version {FORMAT_VERSION}"
        )

    offset += header_len
    payload: dict[str, np.ndarray] = {}
    for entry in header["arrays"]:
        dtype = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64))
        if offset + nbytes > len(data):
            raise CheckpointError(f"truncated payload: array {entry['name']} is incomplete")
        payload[entry["name"]] = (
            np.frombuffer(data, dtype=dtype, count=int(np.prod(shape, dtype=np.int64)), offset=offset)
            .reshape(shape)
            .astype(np.float64)
        )
        offset += nbytes
    if offset != len(data):
        raise CheckpointError("trailing bytes after the last array")

    arch = AutoencoderSpec.from_dict(header["arch"])
    models = []
    for k in range(header["num_models"]):
        model = build_autoencoder(arch)
        flat = np.concatenate(
            [payload[f"model{k}.{name}"].ravel() for name, _, _ in model.param_slices()]
        )
        model.set_flat(flat)
        models.append(model)

    vp = None
    if "vp.mu" in payload:
        vp = VariationalParams(mu=payload["vp.mu"], rho=payload["vp.rho"])

    state = None
    if header["training_state"] is not None:
        state = _rebuild_state(header["training_state"], payload)
        # float64 state is authoritative; float32 weights are its rounding
        exact = state["params"]
        if vp is not None:
            half = exact.size // 2
            vp = VariationalParams(mu=exact[:half], rho=exact[half:])
            models[0].set_flat(vp.mu)
        else:
            models[0].set_flat(exact)

    return TrainedModel(
        arch=arch,
        mode=header["mode"],
        seed=header["seed"],
        eval_draws=header["eval_draws"],
        models=models,
        vp=vp,
        history=header["history"],
        training_state=state,
    )
