"""Synthetic 3D scan generation, block decomposition, and dataset files.

Scans are cubic greyscale volumes: a layered intensity gradient along the
first axis plus band-limited noise (a sum of 16 random-phase 3D sinusoids
with combined RMS 0.05).  Defects are injected as intensity perturbations
with the voxel mask set exactly on the perturbed voxels:

* pore            low-intensity ellipsoid
* inclusion       high-intensity sphere
* lack_of_fusion  thin tilted slab (low intensity)

A scan decomposes into non-overlapping cubic blocks in lexicographic order;
a block is anomalous iff any of its mask voxels is set, and its size is the
count of masked voxels it contains.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

DEFECT_KINDS = ("pore", "inclusion", "lack_of_fusion")
SPLIT_NAMES = ("train", "val", "test")
SPLIT_TAGS = {name: tag for tag, name in enumerate(SPLIT_NAMES)}
DEFAULT_SCAN_EDGE = 96
DEFAULT_BLOCK_EDGE = 16
DEFAULT_PREVALENCE = 0.025
DEFAULT_SPLIT_FRACTIONS = (0.70, 0.15, 0.15)
NOISE_MODES = 16
NOISE_RMS = 0.05

MAGIC = b"BONN1"
_HEADER = struct.Struct("<5sII")


class DatasetFormatError(Exception):
    """Dataset file violates the on-disk format."""


_SIZE_ARITY = {"pore": 3, "inclusion": 1, "lack_of_fusion": 2}


@dataclass(frozen=True)
class Defect:
    """One injected defect.

    ``size`` depends on the kind: pore takes three ellipsoid semi-axes,
    inclusion a single radius, lack_of_fusion (in-plane extent, thickness).
    ``tilt`` is the (unnormalized) slab normal, used only by lack_of_fusion.
    """

    kind: str
    center: tuple[float, float, float]
    size: tuple[float, ...]
    contrast: float = 0.35
    tilt: tuple[float, float, float] = (1.0, 0.0, 1.0)

    def __post_init__(self) -> None:
        if self.kind not in DEFECT_KINDS:
            raise ValueError(f"unknown defect kind {self.kind!r}; expected one of {DEFECT_KINDS}")
        if len(self.center) != 3:
            raise ValueError("center must have three coordinates")
        if len(self.size) != _SIZE_ARITY[self.kind]:
            raise ValueError(
                f"{self.kind} takes {_SIZE_ARITY[self.kind]} size value(s), got {len(self.size)}"
            )
        if any(s <= 0 for s in self.size) or self.contrast <= 0:
            raise ValueError("size values and contrast must be positive")
        if self.kind == "lack_of_fusion" and not any(self.tilt):
            raise ValueError("tilt must be a nonzero vector")

    def extent(self) -> float:
        """Radius of the bounding ball around the center."""
        if self.kind == "pore":
            return float(max(self.size))
        return float(self.size[0])

    def intensity_sign(self) -> float:
        return 1.0 if self.kind == "inclusion" else -1.0


@dataclass
class VoxelScan:
    """Cubic greyscale volume with a binary anomaly mask."""

    tensor: np.ndarray
    mask: np.ndarray

    def __post_init__(self) -> None:
        self.tensor = np.asarray(self.tensor, dtype=np.float32)
        self.mask = np.asarray(self.mask, dtype=np.uint8)
        if self.tensor.ndim != 3 or len(set(self.tensor.shape)) != 1:
            raise ValueError("scan tensor must be cubic")
        if self.tensor.shape != self.mask.shape:
            raise ValueError("tensor and mask shapes must match")
        if self.tensor.min() < 0.0 or self.tensor.max() > 1.0:
            raise ValueError("scan values must lie in [0, 1]")
        if not np.isin(self.mask, (0, 1)).all():
            raise ValueError("mask must be binary")

    @property
    def edge(self) -> int:
        return self.tensor.shape[0]


class SplitView(NamedTuple):
    blocks: np.ndarray
    labels: np.ndarray
    sizes: np.ndarray
    indices: np.ndarray


@dataclass
class BlockDataset:
    """Blocks with labels, anomaly sizes, and train/val/test split tags."""

    blocks: np.ndarray
    labels: np.ndarray
    sizes: np.ndarray
    split_tags: np.ndarray = field(default=None)

    def __post_init__(self) -> None:
        self.blocks = np.asarray(self.blocks, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        self.sizes = np.asarray(self.sizes, dtype=np.uint32)
        if self.split_tags is None:
            self.split_tags = np.zeros(self.blocks.shape[0], dtype=np.uint8)
        self.split_tags = np.asarray(self.split_tags, dtype=np.uint8)
        if self.blocks.ndim != 4 or len(set(self.blocks.shape[1:])) != 1:
            raise ValueError("blocks must be a stack of cubes")
        n = self.blocks.shape[0]
        if not (self.labels.shape == self.sizes.shape == self.split_tags.shape == (n,)):
            raise ValueError("labels, sizes, and split tags must match the block count")
        if not np.array_equal(self.labels, (self.sizes > 0).astype(np.uint8)):
            raise ValueError("label must be 1 exactly when the block holds masked voxels")
        if not np.isin(self.split_tags, (0, 1, 2)).all():
            raise ValueError("split tags must be 0 (train), 1 (val), or 2 (test)")

    @property
    def count(self) -> int:
        return self.blocks.shape[0]

    @property
    def block_edge(self) -> int:
        return self.blocks.shape[1]

    def prevalence(self) -> float:
        return float(self.labels.mean())

    def split(self, name: str) -> SplitView:
        if name not in SPLIT_TAGS:
            raise ValueError(f"unknown split {name!r}; expected one of {SPLIT_NAMES}")
        idx = np.flatnonzero(self.split_tags == SPLIT_TAGS[name])
        return SplitView(self.blocks[idx], self.labels[idx], self.sizes[idx], idx)

    def summary(self) -> dict:
        return {
            "count": int(self.count),
            "block_edge": int(self.block_edge),
            "positives": int(self.labels.sum()),
            "prevalence": self.prevalence(),
            "splits": {name: int(len(self.split(name).indices)) for name in SPLIT_NAMES},
        }


def _rasterize(defect: Defect, edge: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    ext = defect.extent()
    if 2.0 * ext >= edge:
        raise ValueError(f"defect extent {ext} does not fit in a scan of edge {edge}")
    center = np.asarray(defect.center, dtype=np.float64)
    lo = np.maximum(np.floor(center - ext - 1).astype(int), 0)
    hi = np.minimum(np.ceil(center + ext + 1).astype(int), edge - 1)
    axes = [np.arange(lo[d], hi[d] + 1) for d in range(3)]
    grid = np.meshgrid(*axes, indexing="ij")
    off = [g - center[d] for d, g in enumerate(grid)]
    if defect.kind == "pore":
        a = defect.size
        inside = (off[0] / a[0]) ** 2 + (off[1] / a[1]) ** 2 + (off[2] / a[2]) ** 2 <= 1.0
    elif defect.kind == "inclusion":
        inside = off[0] ** 2 + off[1] ** 2 + off[2] ** 2 <= defect.size[0] ** 2
    else:
        normal = np.asarray(defect.tilt, dtype=np.float64)
        normal /= np.linalg.norm(normal)
        plane = off[0] * normal[0] + off[1] * normal[1] + off[2] * normal[2]
        radial = off[0] ** 2 + off[1] ** 2 + off[2] ** 2
        inside = (np.abs(plane) <= defect.size[1] / 2.0) & (radial <= defect.size[0] ** 2)
    return tuple(g[inside] for g in grid)


def _background(edge: int, rng: np.random.Generator) -> np.ndarray:
    depth = np.arange(edge) / (edge - 1)
    base = rng.uniform(0.45, 0.55)
    slope = rng.uniform(-0.1, 0.1)
    tensor = np.empty((edge,) * 3, dtype=np.float64)
    tensor[:] = (base + slope * (depth - 0.5))[:, None, None]

    coords = np.arange(edge, dtype=np.float64)
    amplitude = NOISE_RMS * np.sqrt(2.0 / NOISE_MODES)
    for _ in range(NOISE_MODES):
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        wavelength = rng.uniform(8.0, 32.0)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        k = 2.0 * np.pi / wavelength
        tensor += amplitude * np.sin(
            k
            * (
                direction[0] * coords[:, None, None]
                + direction[1] * coords[None, :, None]
                + direction[2] * coords[None, None, :]
            )
            + phase
        )
    return tensor


def _generate_scan(edge: int, defects, rng: np.random.Generator) -> VoxelScan:
    tensor = _background(edge, rng)
    mask = np.zeros((edge,) * 3, dtype=np.uint8)
    for defect in defects:
        idx = _rasterize(defect, edge)
        tensor[idx] += defect.intensity_sign() * defect.contrast
        mask[idx] = 1
    np.clip(tensor, 0.0, 1.0, out=tensor)
    return VoxelScan(tensor.astype(np.float32), mask)


def generate_scan(edge: int, defects=(), seed: int = 0) -> VoxelScan:
    """Deterministic synthetic scan with the given defects injected."""
    if edge <= 0 or edge % DEFAULT_BLOCK_EDGE != 0:
        raise ValueError(f"scan edge must be a positive multiple of {DEFAULT_BLOCK_EDGE}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed)]))
    return _generate_scan(edge, defects, rng)


def decompose(scan: VoxelScan, block_edge: int = DEFAULT_BLOCK_EDGE) -> BlockDataset:
    """Split a scan into non-overlapping cubic blocks in lexicographic order."""
    edge = scan.edge
    if block_edge <= 0 or edge % block_edge != 0:
        raise ValueError(f"scan edge {edge} is not divisible by block edge {block_edge}")
    per_axis = edge // block_edge

    def to_blocks(volume: np.ndarray) -> np.ndarray:
        stacked = volume.reshape(
            per_axis, block_edge, per_axis, block_edge, per_axis, block_edge
        )
        return stacked.transpose(0, 2, 4, 1, 3, 5).reshape(-1, block_edge, block_edge, block_edge)

    blocks = np.ascontiguousarray(to_blocks(scan.tensor))
    sizes = to_blocks(scan.mask).reshape(blocks.shape[0], -1).sum(axis=1, dtype=np.int64)
    labels = (sizes > 0).astype(np.uint8)
    return BlockDataset(blocks, labels, sizes.astype(np.uint32))


def assign_splits(
    dataset: BlockDataset,
    seed: int = 0,
    fractions: tuple[float, float, float] = DEFAULT_SPLIT_FRACTIONS,
) -> BlockDataset:
    """Stratified train/val/test assignment: each label class is shuffled and
    sliced with the same fractions, so the splits stay disjoint and balanced."""
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("fractions must be three nonnegative values summing to 1")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed)]))
    tags = np.zeros(dataset.count, dtype=np.uint8)
    for label in (0, 1):
        idx = np.flatnonzero(dataset.labels == label)
        rng.shuffle(idx)
        n_val = int(fractions[1] * idx.size)
        n_test = int(fractions[2] * idx.size)
        tags[idx[:n_val]] = SPLIT_TAGS["val"]
        tags[idx[n_val : n_val + n_test]] = SPLIT_TAGS["test"]
    return BlockDataset(dataset.blocks, dataset.labels, dataset.sizes, tags)


def _sample_block_defect(rng: np.random.Generator, origin: np.ndarray, block_edge: int) -> Defect:
    kind = str(rng.choice(DEFECT_KINDS))
    contrast = float(rng.uniform(0.25, 0.45))
    tilt = (1.0, 0.0, 1.0)
    if kind == "pore":
        size = tuple(rng.uniform(1.0, 3.0, size=3))
    elif kind == "inclusion":
        size = (float(rng.uniform(1.5, 3.0)),)
    else:
        size = (float(rng.uniform(3.0, 6.0)), float(rng.uniform(0.8, 1.5)))
        tilt = tuple(rng.normal(size=3))
    ext = max(size) if kind == "pore" else size[0]
    # integer centers with a margin keep the defect strictly inside its block
    margin = int(np.ceil(ext)) + 1
    center = tuple(
        float(rng.integers(o + margin, o + block_edge - margin + 1)) for o in origin
    )
    return Defect(kind=kind, center=center, size=size, contrast=contrast, tilt=tilt)


def _scan_defects(
    rng: np.random.Generator, edge: int, block_edge: int, prevalence: float
) -> list[Defect]:
    per_axis = edge // block_edge
    total = per_axis**3
    target = prevalence * total
    count = int(np.floor(target))
    if rng.random() < target - count:
        count += 1
    chosen = rng.choice(total, size=count, replace=False)
    defects = []
    for flat in chosen:
        origin = np.asarray(np.unravel_index(flat, (per_axis,) * 3)) * block_edge
        defects.append(_sample_block_defect(rng, origin, block_edge))
    return defects


def generate_dataset(
    num_scans: int = 10,
    edge: int = DEFAULT_SCAN_EDGE,
    block_edge: int = DEFAULT_BLOCK_EDGE,
    prevalence: float = DEFAULT_PREVALENCE,
    seed: int = 0,
    workers: int = 1,
) -> BlockDataset:
    """Generate scans with randomly placed defects and assemble the block set.

    Each injected defect is confined to a single randomly chosen block, so the
    expected anomalous-block rate equals ``prevalence`` exactly.  Scans are
    generated from independent per-scan seed streams; ``workers`` > 1 builds
    them in a thread pool with identical results.
    """
    if num_scans < 1:
        raise ValueError("num_scans must be >= 1")
    if not 0.0 <= prevalence < 1.0:
        raise ValueError("prevalence must lie in [0, 1)")
    if edge <= 0 or edge % DEFAULT_BLOCK_EDGE != 0:
        raise ValueError(f"scan edge must be a positive multiple of {DEFAULT_BLOCK_EDGE}")
    if edge % block_edge != 0:
        raise ValueError(f"scan edge {edge} is not divisible by block edge {block_edge}")

    seeds = np.random.SeedSequence([int(seed)]).spawn(num_scans + 1)

    def build(index: int) -> BlockDataset:
        rng = np.random.default_rng(seeds[index])
        defects = _scan_defects(rng, edge, block_edge, prevalence)
        return decompose(_generate_scan(edge, defects, rng), block_edge)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(build, range(num_scans)))
    else:
        parts = [build(i) for i in range(num_scans)]

    merged = BlockDataset(
        np.concatenate([p.blocks for p in parts]),
        np.concatenate([p.labels for p in parts]),
        np.concatenate([p.sizes for p in parts]),
    )
    return assign_splits(merged, seed=seed)


def _record_dtype(block_edge: int) -> np.dtype:
    return np.dtype(
        [
            ("label", "u1"),
            ("size", "<u4"),
            ("split", "<u4"),
            ("values", "<f4", (block_edge,) * 3),
        ]
    )


def save_dataset(dataset: BlockDataset, path) -> None:
    records = np.empty(dataset.count, dtype=_record_dtype(dataset.block_edge))
    records["label"] = dataset.labels
    records["size"] = dataset.sizes
    records["split"] = dataset.split_tags
    records["values"] = dataset.blocks
    header = _HEADER.pack(MAGIC, dataset.block_edge, dataset.count)
    Path(path).write_bytes(header + records.tobytes())


def load_dataset(path) -> BlockDataset:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise DatasetFormatError("corrupt header: file shorter than the header")
    magic, block_edge, count = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise DatasetFormatError(f"magic mismatch: expected {MAGIC!r}, found {magic!r}")
    if block_edge < 1:
        raise DatasetFormatError("corrupt header: block edge must be positive")
    records = _record_dtype(block_edge)
    expected = _HEADER.size + count * records.itemsize
    if len(data) != expected:
        raise DatasetFormatError(
            f"truncated payload: expected {expected} bytes, found {len(data)}"
        )
    arr = np.frombuffer(data, dtype=records, count=count, offset=_HEADER.size)
    if not np.isin(arr["split"], (0, 1, 2)).all():
        raise DatasetFormatError("corrupt payload: invalid split tag")
    if not np.array_equal(arr["label"], (arr["size"] > 0).astype(np.uint8)):
        raise DatasetFormatError("corrupt payload: label/size mismatch")
    return BlockDataset(
        arr["values"].copy(),
        arr["label"].copy(),
        arr["size"].copy(),
        arr["split"].astype(np.uint8),
    )
