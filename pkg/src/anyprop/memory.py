"""Bounded memory bank of features with per-pixel cross-attention reads.

The bank keeps at most ``capacity`` feature maps keyed by strictly increasing
timestamps, evicting oldest-first. Enhancement mixes, independently at each
pixel, the stored features and the query itself (the self-entry keeps the
module an identity when history is absent): attention weights are a softmax
over channel dot products scaled by 1 / (tau * sqrt(C)), with identity
projections in place of learned ones. Output values are convex combinations
of the candidates, so enhancement can never leave their per-channel range.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from anyprop import kernels
from anyprop.warp import FeatureMap


@dataclass
class MemoryBank:
    """Timestamp-keyed FIFO store of feature maps; owned by one pipeline."""

    capacity: int = 4
    tau: float = 1.0
    entries: list[tuple[int, FeatureMap]] = field(default_factory=list)

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {self.capacity}")
        if not (self.tau > 0.0):
            raise ValueError(f"temperature must be positive, got {self.tau}")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def timestamps(self) -> list[int]:
        return [t for t, _ in self.entries]


def mem_push(bank: MemoryBank, feature: FeatureMap, timestamp: int) -> MemoryBank:
    """Append a feature at a strictly newer timestamp; FIFO-evict over capacity."""
    if bank.entries and timestamp <= bank.entries[-1][0]:
        raise ValueError(
            f"push timestamp {timestamp} is not after the last stored "
            f"timestamp {bank.entries[-1][0]}"
        )
    if bank.entries and feature.data.shape != bank.entries[0][1].data.shape:
        raise ValueError(
            f"feature shape {feature.data.shape} does not match stored "
            f"shape {bank.entries[0][1].data.shape}"
        )
    bank.entries.append((int(timestamp), feature))
    if len(bank.entries) > bank.capacity:
        del bank.entries[: len(bank.entries) - bank.capacity]
    return bank


def mem_enhance(bank: MemoryBank, query: FeatureMap) -> FeatureMap:
    """Per-pixel cross-attention over the bank entries plus the query itself.

    w_i(q) ~ exp(<query(q), cand_i(q)> / (tau * sqrt(C))); the output is the
    w-weighted candidate mixture. An empty bank returns the query unchanged.
    """
    if not bank.entries:
        return query
    shape = bank.entries[0][1].data.shape
    if query.data.shape != shape:
        raise ValueError(f"query shape {query.data.shape} does not match stored shape {shape}")
    cands = np.stack([fm.data for _, fm in bank.entries] + [query.data], axis=0)
    dots = kernels.attention_dots(cands, query.data)
    inv_scale = 1.0 / (bank.tau * np.sqrt(float(query.channels)))
    shifted = (dots - dots.max(axis=0)) * inv_scale
    weights = np.exp(shifted)
    mixed = kernels.attention_mix(cands, weights)
    return query.with_data(mixed)


def attention_weights(bank: MemoryBank, query: FeatureMap) -> np.ndarray:
    """Normalized per-pixel attention weights, bank entries first, self last."""
    if not bank.entries:
        return np.ones((1,) + query.dims, dtype=np.float64)
    cands = np.stack([fm.data for _, fm in bank.entries] + [query.data], axis=0)
    dots = kernels.attention_dots(cands, query.data)
    inv_scale = 1.0 / (bank.tau * np.sqrt(float(query.channels)))
    weights = np.exp((dots - dots.max(axis=0)) * inv_scale)
    return weights / weights.sum(axis=0)
