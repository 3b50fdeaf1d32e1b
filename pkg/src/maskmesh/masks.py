"""Per-task mask scores, binarization, linear combination and the mask store.

Real-valued score tensors (one per backbone layer) are thresholded at zero
into binary masks at forward time. Knowledge reuse mixes previously stored
score tensors with the current task's scores through per-layer softmax
coefficients; at the end of a task slot the mixed scores are consolidated
into the store as the task's permanent mask.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from maskmesh.errors import ContractViolation, DecodeError


@dataclass
class MaskScores:
    """Trainable score tensors for one task, shaped like the backbone layers."""

    task_id: int
    layer_scores: list[np.ndarray]

    def copy(self) -> "MaskScores":
        return MaskScores(self.task_id, [s.copy() for s in self.layer_scores])

    def validate_finite(self) -> None:
        for i, s in enumerate(self.layer_scores):
            if not np.all(np.isfinite(s)):
                raise ContractViolation(f"non-finite scores in layer {i} of task {self.task_id}")


@dataclass
class BinaryMask:
    """0/1 tensors matching the backbone layer shapes."""

    layer_bits: list[np.ndarray]


@dataclass
class LinearCoefficients:
    """Per-layer mixing logits of length k+1 (k = number of stored masks)."""

    betas: list[np.ndarray]


def binarize(scores: MaskScores) -> BinaryMask:
    """Bit = 1 exactly where the score is > 0 (zero maps to 0)."""
    return BinaryMask([(s > 0.0).astype(np.uint8) for s in scores.layer_scores])


def softmax(v: np.ndarray) -> np.ndarray:
    e = np.exp(v - np.max(v))
    return e / e.sum()


@dataclass
class StoreEntry:
    scores: MaskScores
    best_perf: float


class MaskStore:
    """task_id -> consolidated scores + best known performance.

    Entries are never touched by training on a different task; consolidation
    replaces at most the entry for the task that just finished.
    """

    def __init__(self) -> None:
        self._entries: dict[int, StoreEntry] = {}

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, task_id: int) -> bool:
        return task_id in self._entries

    def get(self, task_id: int) -> StoreEntry | None:
        return self._entries.get(task_id)

    def task_ids(self) -> list[int]:
        return sorted(self._entries)

    def entries_ascending(self) -> list[StoreEntry]:
        return [self._entries[t] for t in self.task_ids()]

    def put(self, task_id: int, scores: MaskScores, best_perf: float) -> None:
        self._entries[task_id] = StoreEntry(scores=scores.copy(), best_perf=float(best_perf))

    def snapshot_scores(self, task_id: int) -> MaskScores | None:
        entry = self._entries.get(task_id)
        return entry.scores.copy() if entry is not None else None


def combine_masks(store: MaskStore, current: MaskScores, coeffs: LinearCoefficients) -> MaskScores:
    """Per-layer softmax mixture of stored masks (ascending task id) plus the current scores.

    With an empty store this is the identity on `current` (single softmax weight = 1).
    """
    stored = store.entries_ascending()
    k = len(stored)
    out = []
    for l, s_cur in enumerate(current.layer_scores):
        beta = coeffs.betas[l]
        if beta.shape != (k + 1,):
            raise ContractViolation(f"layer {l}: expected {k + 1} coefficients, got {beta.shape}")
        w = softmax(beta.astype(np.float64))
        mixed = w[-1] * s_cur
        for i, entry in enumerate(stored):
            mixed = mixed + w[i] * entry.scores.layer_scores[l]
        out.append(mixed)
    return MaskScores(task_id=current.task_id, layer_scores=out)


def quantize_to_f32(scores: MaskScores) -> MaskScores:
    """Snap values onto the 32-bit float grid (the wire precision).

    Consolidated masks pass through this once so the on-wire payload
    round-trips bit-exactly against the in-store tensors.
    """
    return MaskScores(
        task_id=scores.task_id,
        layer_scores=[s.astype(np.float32).astype(np.float64) for s in scores.layer_scores],
    )


# ---------------------------------------------------------------------------
# Wire serialization of score tensors (the mask-transfer payload).
#
# Layout, all little-endian:
#   task_id u32, n_layers u16, then per layer (rows u16, cols u16),
#   then every layer's row-major IEEE-754 32-bit floats, concatenated.
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<IH")
_LAYER_DIMS = struct.Struct("<HH")


def serialize_scores(scores: MaskScores) -> bytes:
    parts = [_HEADER.pack(scores.task_id, len(scores.layer_scores))]
    for s in scores.layer_scores:
        rows, cols = s.shape
        parts.append(_LAYER_DIMS.pack(rows, cols))
    for s in scores.layer_scores:
        parts.append(np.ascontiguousarray(s, dtype="<f4").tobytes())
    return b"".join(parts)


def deserialize_scores(data: bytes) -> MaskScores:
    if len(data) < _HEADER.size:
        raise DecodeError("mask payload truncated (header)")
    task_id, n_layers = _HEADER.unpack_from(data, 0)
    off = _HEADER.size
    shapes = []
    for _ in range(n_layers):
        if off + _LAYER_DIMS.size > len(data):
            raise DecodeError("mask payload truncated (layer dims)")
        rows, cols = _LAYER_DIMS.unpack_from(data, off)
        off += _LAYER_DIMS.size
        if rows == 0 or cols == 0:
            raise DecodeError("zero-sized mask layer")
        shapes.append((rows, cols))
    layers = []
    for rows, cols in shapes:
        nbytes = rows * cols * 4
        if off + nbytes > len(data):
            raise DecodeError("mask payload truncated (floats)")
        arr = np.frombuffer(data, dtype="<f4", count=rows * cols, offset=off)
        layers.append(arr.astype(np.float64).reshape(rows, cols))
        off += nbytes
    if off != len(data):
        raise DecodeError("trailing bytes after mask payload")
    return MaskScores(task_id=task_id, layer_scores=layers)
