"""Unary-subspace simulation of Hamming-weight-preserving circuits.

Circuits built from two-mode rotation gates conserve Hamming weight, so a
state prepared in the weight-1 (unary) subspace stays inside it.  Everything
here exploits that: an n-qubit state is an n-vector of real amplitudes, a
gate is a Givens rotation on two coordinates, and a full circuit costs
O(#gates) per application instead of O(2^n).

The gate on qubit pair (i, j) acts on the unary amplitudes as

    a_i' =  cos(theta) * a_i + sin(theta) * a_j
    a_j' = -sin(theta) * a_i + cos(theta) * a_j

which is the restriction of the standard 4x4 two-qubit rotation
[[1,0,0,0],[0,c,-s,0],[0,s,c,0],[0,0,0,1]] to the span of |..1_i..> and
|..1_j..>.  All simulation runs in float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

MIN_QUBITS = 2
MAX_SAMPLING_QUBITS = 64  # shot outcomes pack into uint64 bitmasks
NORM_TOL = 1e-9

LAYOUT_KINDS = ("pyramid", "butterfly", "diagonal", "parallel")
LOADER_KINDS = ("diagonal", "parallel")


class AllShotsDiscardedError(RuntimeError):
    """Every recorded shot fell outside the unary subspace."""


@dataclass(frozen=True)
class RbsGate:
    """One two-mode rotation acting on qubit pair (i, j).

    Exactly one of ``param_slot`` (index into an external angle vector) and
    ``angle`` (fixed angle in radians) is set.
    """

    i: int
    j: int
    param_slot: int | None = None
    angle: float | None = None

    def __post_init__(self) -> None:
        if self.i == self.j:
            raise ValueError(f"gate needs two distinct qubits, got ({self.i}, {self.j})")
        if (self.param_slot is None) == (self.angle is None):
            raise ValueError("gate takes either a param_slot or a fixed angle, not both")


@dataclass(frozen=True)
class CircuitLayout:
    """An ordered gate sequence on ``n`` qubits with ``num_params`` free angles."""

    n: int
    gates: tuple[RbsGate, ...]
    kind: str
    num_params: int

    def __post_init__(self) -> None:
        for g in self.gates:
            if not (0 <= g.i < self.n and 0 <= g.j < self.n):
                raise ValueError(f"gate ({g.i}, {g.j}) out of range for n={self.n}")
            if g.param_slot is not None and not (0 <= g.param_slot < self.num_params):
                raise ValueError(f"param slot {g.param_slot} out of range")

    def __len__(self) -> int:
        return len(self.gates)


@dataclass(frozen=True)
class UnaryState:
    """A weight-1 superposition: n real amplitudes with unit 2-norm."""

    n: int
    amplitudes: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        if self.n < MIN_QUBITS:
            raise ValueError(f"need at least {MIN_QUBITS} qubits, got n={self.n}")
        a = np.asarray(self.amplitudes, dtype=np.float64)
        if a.shape != (self.n,):
            raise ValueError(f"amplitude vector must have shape ({self.n},), got {a.shape}")
        nrm = float(np.linalg.norm(a))
        if abs(nrm - 1.0) > 1e-6:
            raise ValueError(f"unary state must be normalized, got ||a|| = {nrm!r}")
        object.__setattr__(self, "amplitudes", a)

    def probabilities(self) -> np.ndarray:
        return self.amplitudes**2


def unary_state(amplitudes) -> UnaryState:
    a = np.asarray(amplitudes, dtype=np.float64)
    return UnaryState(n=a.shape[0], amplitudes=a)


def basis_state(n: int, j: int) -> UnaryState:
    """|e_j>: the n-bit unary string with bit j set."""
    if not 0 <= j < n:
        raise ValueError(f"basis index {j} out of range for n={n}")
    a = np.zeros(n, dtype=np.float64)
    a[j] = 1.0
    return UnaryState(n=n, amplitudes=a)


def apply_rbs(state: UnaryState, i: int, j: int, theta: float) -> UnaryState:
    """Apply one rotation gate to a unary state, returning a new state."""
    n = state.n
    if not (0 <= i < n and 0 <= j < n):
        raise ValueError(f"qubit pair ({i}, {j}) out of range for n={n}")
    if i == j:
        raise ValueError("gate needs two distinct qubits")
    a = state.amplitudes.copy()
    c, s = math.cos(theta), math.sin(theta)
    ai, aj = a[i], a[j]
    a[i] = c * ai + s * aj
    a[j] = -s * ai + c * aj
    return UnaryState(n=n, amplitudes=a)


# ---------------------------------------------------------------------------
# layouts


def _pyramid_gates(n: int) -> list[tuple[int, int]]:
    # descending staircases; n(n-1)/2 nearest-neighbour gates
    pairs = []
    for i in range(1, n):
        for j in range(i, 0, -1):
            pairs.append((j - 1, j))
    return pairs


def _butterfly_gates(n: int) -> list[tuple[int, int]]:
    # layer l pairs indices differing only in bit l
    pairs = []
    for level in range(n.bit_length() - 1):
        bit = 1 << level
        for k in range(n):
            if not k & bit:
                pairs.append((k, k | bit))
    return pairs


def _diagonal_gates(n: int) -> list[tuple[int, int]]:
    # (k+1, k) orientation so the transferred amplitude carries +sin
    return [(k + 1, k) for k in range(n - 1)]


def _parallel_gates(n: int) -> list[tuple[int, int]]:
    # binary tree over [0, n); each node moves the right half's norm from
    # qubit lo to qubit mid.  BFS order, depth ceil(log2 n).
    pairs = []
    frontier = [(0, n)]
    while frontier:
        nxt = []
        for lo, hi in frontier:
            if hi - lo < 2:
                continue
            mid = lo + (hi - lo) // 2
            pairs.append((mid, lo))
            nxt.append((lo, mid))
            nxt.append((mid, hi))
        frontier = nxt
    return pairs


def build_layout(kind: str, n: int) -> CircuitLayout:
    """Build a named gate layout with one free parameter per gate.

    Kinds: "pyramid" (n(n-1)/2 gates), "butterfly" ((n/2) log2 n gates,
    n a power of two), "diagonal" and "parallel" loaders (n-1 gates each).
    """
    if n < MIN_QUBITS:
        raise ValueError(f"n must be >= {MIN_QUBITS}, got {n}")
    if kind == "pyramid":
        pairs = _pyramid_gates(n)
    elif kind == "butterfly":
        if n & (n - 1):
            raise ValueError(f"butterfly layout needs n a power of two, got {n}")
        pairs = _butterfly_gates(n)
    elif kind == "diagonal":
        pairs = _diagonal_gates(n)
    elif kind == "parallel":
        pairs = _parallel_gates(n)
    else:
        raise ValueError(f"unknown layout kind {kind!r}; expected one of {LAYOUT_KINDS}")
    gates = tuple(RbsGate(i=i, j=j, param_slot=slot) for slot, (i, j) in enumerate(pairs))
    return CircuitLayout(n=n, gates=gates, kind=kind, num_params=len(gates))


def freeze(layout: CircuitLayout, angles) -> CircuitLayout:
    """Bind an angle vector into the layout, leaving no free parameters."""
    angles = np.asarray(angles, dtype=np.float64)
    if angles.shape != (layout.num_params,):
        raise ValueError(f"expected {layout.num_params} angles, got {angles.shape}")
    gates = tuple(
        RbsGate(i=g.i, j=g.j, angle=float(angles[g.param_slot]) if g.angle is None else g.angle)
        for g in layout.gates
    )
    return CircuitLayout(n=layout.n, gates=gates, kind=layout.kind, num_params=0)


def chain(*layouts: CircuitLayout) -> CircuitLayout:
    """Concatenate layouts on the same qubit count, offsetting param slots."""
    if not layouts:
        raise ValueError("chain needs at least one layout")
    n = layouts[0].n
    gates: list[RbsGate] = []
    offset = 0
    for lay in layouts:
        if lay.n != n:
            raise ValueError("chained layouts must share the qubit count")
        for g in lay.gates:
            if g.param_slot is None:
                gates.append(g)
            else:
                gates.append(RbsGate(i=g.i, j=g.j, param_slot=g.param_slot + offset))
        offset += lay.num_params
    return CircuitLayout(n=n, gates=tuple(gates), kind="chain", num_params=offset)


# ---------------------------------------------------------------------------
# loader angle derivations


def loader_angles(kind: str, x) -> np.ndarray:
    """Angles that make the ``kind`` loader map e_0 to the unit vector x.

    diagonal: product-of-sines recursion, x_1 = cos(a_1),
    x_k = (prod_{m<k} sin(a_m)) cos(a_k); parallel: recursive norm split over
    a binary tree, internal angles arccos of the left-subtree norm ratio.
    Signs of x are absorbed into the angle that finalizes each component.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if x.ndim != 1 or n < MIN_QUBITS:
        raise ValueError(f"loader input must be a vector of length >= {MIN_QUBITS}")
    nrm = float(np.linalg.norm(x))
    if abs(nrm - 1.0) > 1e-6:
        raise ValueError(f"loader input must be a unit vector, got norm {nrm!r}")
    if kind == "diagonal":
        return _diagonal_angles(x)
    if kind == "parallel":
        return _parallel_angles(x)
    raise ValueError(f"unknown loader kind {kind!r}; expected one of {LOADER_KINDS}")


def _diagonal_angles(x: np.ndarray) -> np.ndarray:
    n = x.shape[0]
    # tail[k] = ||x[k:]||, computed back-to-front for stability
    tail = np.sqrt(np.cumsum(x[::-1] ** 2)[::-1])
    angles = np.zeros(n - 1, dtype=np.float64)
    for k in range(n - 2):
        angles[k] = math.atan2(tail[k + 1], x[k])
    angles[n - 2] = math.atan2(x[n - 1], x[n - 2])
    return angles


def _parallel_angles(x: np.ndarray) -> np.ndarray:
    n = x.shape[0]
    norms = x**2

    def seg_norm(lo: int, hi: int) -> float:
        return math.sqrt(float(np.sum(norms[lo:hi])))

    # targets follow the BFS node order of _parallel_gates; a size-1 child
    # keeps the signed component, an internal child keeps the nonneg norm
    angles = []
    frontier = [(0, n)]
    while frontier:
        nxt = []
        for lo, hi in frontier:
            if hi - lo < 2:
                continue
            mid = lo + (hi - lo) // 2
            t_left = x[lo] if mid - lo == 1 else seg_norm(lo, mid)
            t_right = x[mid] if hi - mid == 1 else seg_norm(mid, hi)
            angles.append(math.atan2(t_right, t_left))
            nxt.append((lo, mid))
            nxt.append((mid, hi))
        frontier = nxt
    return np.asarray(angles, dtype=np.float64)


# ---------------------------------------------------------------------------
# simulation


def _resolved_angles(layout: CircuitLayout, angles) -> np.ndarray:
    """Per-gate angle array with param slots resolved against ``angles``."""
    if angles is None:
        angles = np.zeros(0, dtype=np.float64)
    angles = np.asarray(angles, dtype=np.float64)
    if angles.shape != (layout.num_params,):
        raise ValueError(f"layout expects {layout.num_params} angles, got {angles.shape}")
    out = np.empty(len(layout.gates), dtype=np.float64)
    for k, g in enumerate(layout.gates):
        out[k] = g.angle if g.param_slot is None else angles[g.param_slot]
    return out


def sweep(arr: np.ndarray, layout: CircuitLayout, angles=None) -> np.ndarray:
    """Apply the circuit to rows of ``arr`` (shape (..., n)); returns a copy."""
    out = np.array(arr, dtype=np.float64, copy=True)
    if out.shape[-1] != layout.n:
        raise ValueError(f"last axis must have length {layout.n}, got {out.shape}")
    per_gate = _resolved_angles(layout, angles)
    cos, sin = np.cos(per_gate), np.sin(per_gate)
    for k, g in enumerate(layout.gates):
        u = out[..., g.i].copy()
        v = out[..., g.j]
        out[..., g.i] = cos[k] * u + sin[k] * v
        out[..., g.j] = -sin[k] * u + cos[k] * v
    return out


def sweep_with_tape(arr: np.ndarray, layout: CircuitLayout, angles=None):
    """Like :func:`sweep` but records the pre-gate (i, j) values per gate.

    The tape holds exactly what the reverse sweep needs to form angle
    gradients, so memory is 2 * #gates * batch instead of #gates * n * batch.
    """
    out = np.array(arr, dtype=np.float64, copy=True)
    if out.shape[-1] != layout.n:
        raise ValueError(f"last axis must have length {layout.n}, got {out.shape}")
    per_gate = _resolved_angles(layout, angles)
    cos, sin = np.cos(per_gate), np.sin(per_gate)
    tape = []
    for k, g in enumerate(layout.gates):
        u = out[..., g.i].copy()
        v = out[..., g.j].copy()
        tape.append((u, v))
        out[..., g.i] = cos[k] * u + sin[k] * v
        out[..., g.j] = -sin[k] * u + cos[k] * v
    return out, (tape, cos, sin)


def sweep_backward(grad_out: np.ndarray, layout: CircuitLayout, tape) -> tuple[np.ndarray, np.ndarray]:
    """Reverse sweep: returns (grad wrt input rows, grad wrt free angles).

    The derivative of a single gate wrt its angle is the same rotation
    advanced by pi/2 on the (i, j) plane; the adjoint walks the gate
    sequence backwards applying transposed rotations.
    """
    states, cos, sin = tape
    grad = np.array(grad_out, dtype=np.float64, copy=True)
    grad_angles = np.zeros(layout.num_params, dtype=np.float64)
    for k in range(len(layout.gates) - 1, -1, -1):
        g = layout.gates[k]
        c, s = cos[k], sin[k]
        u, v = states[k]
        gi = grad[..., g.i].copy()
        gj = grad[..., g.j]
        if g.param_slot is not None:
            # y_i = c u + s v, y_j = -s u + c v  =>  d/dtheta below
            dth = gi * (-s * u + c * v) + gj * (-c * u - s * v)
            grad_angles[g.param_slot] += float(np.sum(dth))
        grad[..., g.i] = c * gi - s * gj
        grad[..., g.j] = s * gi + c * gj
    return grad, grad_angles


def simulate(layout: CircuitLayout, angles=None, state: UnaryState | None = None) -> UnaryState:
    """Run the circuit on a unary state (default e_0) and return the result."""
    if state is None:
        state = basis_state(layout.n, 0)
    if state.n != layout.n:
        raise ValueError(f"state has n={state.n}, layout has n={layout.n}")
    out = sweep(state.amplitudes, layout, angles)
    return UnaryState(n=layout.n, amplitudes=out)


def layer_matrix(layout: CircuitLayout, angles=None) -> np.ndarray:
    """Dense orthogonal matrix O with column j = simulate(layout, angles, e_j)."""
    # sweep treats rows as states, so sweeping the identity yields O^T
    return sweep(np.eye(layout.n, dtype=np.float64), layout, angles).T


# ---------------------------------------------------------------------------
# shot sampling and noise


@dataclass(frozen=True)
class NoiseModel:
    """Per-gate uniform leakage plus independent readout bit flips.

    ``shots=None`` selects the exact-distribution mode (no sampling noise),
    available for n <= 16.
    """

    gate_error: float = 0.0
    readout_flip: float = 0.0
    shots: int | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.gate_error < 1.0:
            raise ValueError(f"gate_error must be in [0, 1), got {self.gate_error}")
        if not 0.0 <= self.readout_flip < 1.0:
            raise ValueError(f"readout_flip must be in [0, 1), got {self.readout_flip}")
        if self.shots is not None and self.shots < 1:
            raise ValueError(f"shots must be >= 1 or None for exact mode, got {self.shots}")

    def leak_probability(self, gates_applied: int) -> float:
        return 1.0 - (1.0 - self.gate_error) ** gates_applied


@dataclass(frozen=True)
class ShotCounts:
    """Observed outcome weights keyed by bitstring (bit j set <-> qubit j).

    Weights are integer counts for finite shots and exact probabilities in
    the exact-distribution mode (``shots=None``).
    """

    n: int
    weights: dict[int, float]
    shots: int | None

    def total(self) -> float:
        return float(sum(self.weights.values()))


_SAMPLE_CHUNK = 1 << 16


def sample_shots(
    state: UnaryState,
    noise: NoiseModel,
    gates_applied: int,
    rng: np.random.Generator | int,
) -> ShotCounts:
    """Sample measurement outcomes of a unary state under the noise model.

    Per shot: with probability 1 - (1 - gate_error)^gates_applied the outcome
    is a uniformly random n-bit string (leakage out of the unary subspace),
    otherwise it is drawn from the Born distribution p_j = a_j^2; each bit is
    then flipped independently with probability readout_flip.  Deterministic
    for a fixed seed.
    """
    if gates_applied < 0:
        raise ValueError("gates_applied must be nonnegative")
    if state.n > MAX_SAMPLING_QUBITS:
        raise ValueError(f"sampling supports n <= {MAX_SAMPLING_QUBITS}, got n={state.n}")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    n = state.n
    p = state.probabilities()
    p = p / p.sum()
    lam = noise.leak_probability(gates_applied)
    if noise.shots is None:
        return _exact_distribution(n, p, lam, noise.readout_flip)

    weights: dict[int, float] = {}
    remaining = noise.shots
    while remaining > 0:
        m = min(remaining, _SAMPLE_CHUNK)
        remaining -= m
        leaked = rng.random(m) < lam
        outcomes = np.left_shift(np.uint64(1), rng.choice(n, size=m, p=p).astype(np.uint64))
        k = int(leaked.sum())
        if k:
            bits = rng.integers(0, 2, size=(k, n), dtype=np.uint64)
            outcomes[leaked] = (bits << np.arange(n, dtype=np.uint64)).sum(axis=1)
        if noise.readout_flip > 0.0:
            flips = rng.random((m, n)) < noise.readout_flip
            outcomes ^= (flips.astype(np.uint64) << np.arange(n, dtype=np.uint64)).sum(axis=1)
        vals, counts = np.unique(outcomes, return_counts=True)
        for val, cnt in zip(vals.tolist(), counts.tolist()):
            weights[val] = weights.get(val, 0) + cnt
    return ShotCounts(n=n, weights=weights, shots=noise.shots)


def _exact_distribution(n: int, p: np.ndarray, lam: float, flip: float) -> ShotCounts:
    if n > 16:
        raise ValueError(f"exact-distribution mode supports n <= 16, got n={n}")
    size = 1 << n
    full = np.full(size, lam / size, dtype=np.float64)
    for j in range(n):
        full[1 << j] += (1.0 - lam) * p[j]
    if flip > 0.0:
        # apply the independent bit-flip channel one bit at a time
        for b in range(n):
            swapped = full.reshape(-1, 2, 1 << b)[:, ::-1, :].reshape(size)
            full = (1.0 - flip) * full + flip * swapped
    weights = {k: float(w) for k, w in enumerate(full) if w > 0.0}
    return ShotCounts(n=n, weights=weights, shots=None)


@dataclass(frozen=True)
class PostSelection:
    """Renormalized unary outcome distribution plus the discarded fraction."""

    probs: np.ndarray
    kept_weight: float
    discarded_fraction: float


def postselect_unary(counts: ShotCounts) -> PostSelection:
    """Keep weight-1 outcomes, renormalize, report the discarded fraction."""
    total = counts.total()
    if total <= 0.0:
        raise ValueError("cannot post-select empty counts")
    probs = np.zeros(counts.n, dtype=np.float64)
    kept = 0.0
    for outcome, w in counts.weights.items():
        outcome = int(outcome)
        if outcome != 0 and outcome & (outcome - 1) == 0:
            j = outcome.bit_length() - 1
            if j < counts.n:
                probs[j] += w
                kept += w
    if kept <= 0.0:
        raise AllShotsDiscardedError(
            f"all {total:g} shots fell outside the unary subspace"
        )
    return PostSelection(
        probs=probs / kept,
        kept_weight=kept,
        discarded_fraction=1.0 - kept / total,
    )


def fidelity_estimate(probs: np.ndarray, target: np.ndarray) -> float:
    """(sum_j sqrt(p_j) |y_j|)^2 for an estimated distribution vs ideal amplitudes.

    Sign-blind by construction: measurement probabilities carry no phase, so
    the estimate compares magnitudes only.
    """
    probs = np.asarray(probs, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if probs.shape != target.shape:
        raise ValueError(f"shape mismatch: {probs.shape} vs {target.shape}")
    if abs(float(probs.sum()) - 1.0) > 1e-6:
        raise ValueError("probabilities must sum to 1")
    if abs(float(np.linalg.norm(target)) - 1.0) > 1e-6:
        raise ValueError("target amplitudes must be a unit vector")
    return float(np.sum(np.sqrt(np.clip(probs, 0.0, None)) * np.abs(target)) ** 2)
