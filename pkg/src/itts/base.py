"""Shared estimator plumbing and input-validation helpers."""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np
from sklearn.utils.validation import check_is_fitted  # noqa: F401  (re-export)


def require(condition: bool, message: str) -> None:
    if not condition:
        raise ValueError(message)


def as_id_list(seq: Iterable[int], what: str, upper: int | None = None) -> list[int]:
    """Validate a sequence of non-negative integer ids, optionally bounded."""
    ids = [int(v) for v in seq]
    for v in ids:
        if v < 0 or (upper is not None and v >= upper):
            raise ValueError(f"{what}: id {v} out of range [0, {upper})")
    return ids


def spawn_rng(seed: int, *keys: int) -> np.random.Generator:
    """Deterministic child generator for (seed, keys), order-independent use."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


def check_mel(mel: np.ndarray, channels: int | None = None) -> np.ndarray:
    mel = np.asarray(mel, dtype=np.float64)
    require(mel.ndim == 2, f"mel must be 2-D (frames, channels), got shape {mel.shape}")
    if channels is not None:
        require(mel.shape[1] == channels,
                f"mel has {mel.shape[1]} channels, expected {channels}")
    require(bool(np.all(np.isfinite(mel))), "mel contains non-finite values")
    return mel


def batches(items: Sequence, size: int, rng: np.random.Generator):
    """Endless shuffled mini-batches over `items` (reshuffled each epoch)."""
    while True:
        order = rng.permutation(len(items))
        for start in range(0, len(items), size):
            chunk = order[start:start + size]
            if len(chunk) == 0:
                continue
            yield [items[i] for i in chunk]
