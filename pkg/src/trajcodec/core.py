"""Trajectory containers, robust per-channel normalization, and chunking.

A trajectory is a ``T x d`` matrix of continuous action values with one role
(position / rotation / gripper) per channel. Normalization maps the 1st and
99th percentile of each channel to -1 and +1; values outside that range are
mapped linearly past [-1, 1] so the transform stays invertible. Long
trajectories are split into fixed-horizon chunks for downstream fitting.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ROLES = ("position", "rotation", "gripper")

# Channels whose p99 - p1 spread falls below this (in original units) are
# degenerate: they encode to the constant 0 and decode back to p1.
DEGENERATE_EPS = 1e-8


@dataclass(frozen=True)
class Channel:
    """Name and part role of one action channel."""

    name: str
    role: str

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValueError(
                f"channel {self.name!r}: role must be one of {ROLES}, got {self.role!r}"
            )


@dataclass(frozen=True)
class Trajectory:
    """A ``T x d`` action matrix in original units plus channel metadata.

    Values are validated (finite, T >= 2) and stored as a read-only float64
    array, so instances are safe to share across threads.
    """

    values: np.ndarray
    channels: tuple[Channel, ...]
    rate_hz: float
    embodiment: str = ""
    traj_id: str = ""

    def __post_init__(self) -> None:
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError(f"trajectory {self.traj_id!r}: values must be 2-D (T x d)")
        n_steps, n_channels = values.shape
        if n_steps < 2:
            raise ValueError(f"trajectory {self.traj_id!r}: need at least 2 steps, got {n_steps}")
        if n_channels < 1:
            raise ValueError(f"trajectory {self.traj_id!r}: need at least 1 channel")
        if len(self.channels) != n_channels:
            raise ValueError(
                f"trajectory {self.traj_id!r}: {len(self.channels)} channel entries "
                f"for {n_channels} value columns"
            )
        bad = ~np.isfinite(values)
        if bad.any():
            col = int(np.nonzero(bad.any(axis=0))[0][0])
            raise ValueError(
                f"trajectory {self.traj_id!r}: non-finite value in channel "
                f"{self.channels[col].name!r}"
            )
        if not self.rate_hz > 0:
            raise ValueError(f"trajectory {self.traj_id!r}: rate_hz must be positive")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "channels", tuple(self.channels))

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    @property
    def roles(self) -> tuple[str, ...]:
        return tuple(ch.role for ch in self.channels)


@dataclass(frozen=True)
class NormStats:
    """Per-channel 1st/99th percentiles and degenerate-channel flags."""

    p1: np.ndarray
    p99: np.ndarray
    degenerate: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        p1 = np.asarray(self.p1, dtype=np.float64)
        p99 = np.asarray(self.p99, dtype=np.float64)
        if p1.shape != p99.shape or p1.ndim != 1:
            raise ValueError("p1/p99 must be 1-D arrays of equal length")
        if np.any(p99 < p1):
            raise ValueError("p99 < p1 for some channel")
        degenerate = (p99 - p1) < DEGENERATE_EPS
        for arr in (p1, p99, degenerate):
            arr.setflags(write=False)
        object.__setattr__(self, "p1", p1)
        object.__setattr__(self, "p99", p99)
        object.__setattr__(self, "degenerate", degenerate)

    @property
    def n_channels(self) -> int:
        return self.p1.shape[0]


@dataclass(frozen=True)
class Chunk:
    """A fixed-horizon window of a normalized trajectory."""

    values: np.ndarray  # (T_e, d), normalized units
    traj_id: str
    start: int

    @property
    def length(self) -> int:
        return self.values.shape[0]


def fit_norm_stats(corpus, channel_count: int | None = None) -> NormStats:
    """Pool all timesteps of a corpus and compute per-channel 1st/99th percentiles.

    Percentiles use linear interpolation between closest ranks, so results are
    identical to evaluating the pooled concatenation in one shot regardless of
    how trajectories are ordered or sharded.

    Args:
        corpus: iterable of Trajectory, all with the same channel count.
        channel_count: optional expected d; mismatches raise.
    """
    corpus = list(corpus)
    if not corpus:
        raise ValueError("cannot fit normalization stats on an empty corpus")
    d = channel_count if channel_count is not None else corpus[0].n_channels
    for traj in corpus:
        if traj.n_channels != d:
            raise ValueError(
                f"trajectory {traj.traj_id!r} has {traj.n_channels} channels, expected {d}"
            )
    pooled = np.concatenate([traj.values for traj in corpus], axis=0)
    p1, p99 = np.percentile(pooled, [1.0, 99.0], axis=0, method="linear")
    return NormStats(p1=p1, p99=p99)


def normalize(values: np.ndarray, stats: NormStats) -> np.ndarray:
    """Map each channel so that [p1, p99] lands on [-1, 1], without clipping.

    Degenerate channels map to 0. Out-of-range inputs extend linearly past
    [-1, 1]; ``out_of_range_fraction`` reports how often that happens.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[1] != stats.n_channels:
        raise ValueError(
            f"values shape {values.shape} does not match {stats.n_channels} channels"
        )
    span = stats.p99 - stats.p1
    safe_span = np.where(stats.degenerate, 1.0, span)
    out = 2.0 * (values - stats.p1) / safe_span - 1.0
    return np.where(stats.degenerate, 0.0, out)


def denormalize(values: np.ndarray, stats: NormStats) -> np.ndarray:
    """Inverse of :func:`normalize`; degenerate channels decode to p1."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[1] != stats.n_channels:
        raise ValueError(
            f"values shape {values.shape} does not match {stats.n_channels} channels"
        )
    span = stats.p99 - stats.p1
    out = (values + 1.0) / 2.0 * span + stats.p1
    return np.where(stats.degenerate, stats.p1, out)


def out_of_range_fraction(normalized: np.ndarray) -> float:
    """Fraction of normalized entries falling outside [-1, 1]."""
    normalized = np.asarray(normalized)
    if normalized.size == 0:
        return 0.0
    return float(np.mean(np.abs(normalized) > 1.0))


def chunk_spans(n_steps: int, horizon: int) -> tuple[list[tuple[int, int]], int]:
    """Split ``n_steps`` into consecutive (start, length) windows.

    Windows have the requested horizon; a trailing remainder of length >= 2 is
    kept as a shorter final window, a remainder of length 1 is dropped and
    returned as the second element.
    """
    if horizon < 2:
        raise ValueError(f"horizon must be >= 2, got {horizon}")
    spans: list[tuple[int, int]] = []
    start = 0
    while n_steps - start >= horizon:
        spans.append((start, horizon))
        start += horizon
    remainder = n_steps - start
    if remainder >= 2:
        spans.append((start, remainder))
        remainder = 0
    return spans, remainder


def split_chunks(traj_id: str, values: np.ndarray, horizon: int) -> tuple[list[Chunk], int]:
    """Cut a (normalized) value matrix into :class:`Chunk` windows."""
    values = np.asarray(values, dtype=np.float64)
    spans, dropped = chunk_spans(values.shape[0], horizon)
    chunks = [Chunk(values=values[s : s + n], traj_id=traj_id, start=s) for s, n in spans]
    return chunks, dropped
