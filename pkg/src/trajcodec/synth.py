"""Synthetic trajectory corpora for benchmarks and self-contained tests.

Two presets:

* ``sinusoid`` draws fresh sinusoid-mixture parameters per trajectory, the
  generic smooth-motion corpus.
* ``patterns`` draws those parameters from a small per-corpus motif bank plus
  jitter, producing the kind of repetitive token statistics that byte-pair
  merging thrives on.

Position and rotation channels are two-component sinusoid mixtures with an
offset; the gripper channel is a random 0/1 step function. Everything is
deterministic under the seed.
"""

from __future__ import annotations

import numpy as np

from .core import Channel, Trajectory

PRESETS = ("sinusoid", "patterns")

_CHANNELS = (
    Channel("x", "position"),
    Channel("y", "position"),
    Channel("z", "position"),
    Channel("roll", "rotation"),
    Channel("pitch", "rotation"),
    Channel("yaw", "rotation"),
    Channel("grip", "gripper"),
)


def _mixture_params(rng: np.random.Generator, scale: float) -> tuple:
    offset = rng.uniform(-0.3, 0.3) * scale
    amp = rng.uniform((0.3, 0.05), (1.0, 0.2)) * scale
    freq = rng.uniform((0.05, 0.2), (0.4, 0.8))
    phase = rng.uniform(0.0, 2.0 * np.pi, size=2)
    return offset, amp, freq, phase


def _mixture(t: np.ndarray, params) -> np.ndarray:
    offset, amp, freq, phase = params
    out = np.full_like(t, offset)
    for a, f, p in zip(amp, freq, phase):
        out += a * np.sin(2.0 * np.pi * f * t + p)
    return out


def _step_function(t: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    # Open/close toggles are sparse, like a real grasp signal.
    state = float(rng.integers(2))
    out = np.full_like(t, state)
    n_toggles = int(rng.choice([0, 1, 2], p=[0.6, 0.3, 0.1]))
    for _ in range(n_toggles):
        at = rng.uniform(t[0], t[-1])
        state = 1.0 - state
        out[t >= at] = state
    return out


def gen_corpus(
    n_chunks: int,
    seed: int = 0,
    preset: str = "sinusoid",
    horizon: int = 30,
    rate_hz: float = 30.0,
    noise: float = 5e-4,
    motifs: int = 24,
    jitter: float = 0.003,
    ragged: bool = False,
    embodiment: str = "synth",
) -> list[Trajectory]:
    """Generate trajectories totalling at least ``n_chunks`` full chunks.

    Each trajectory spans 1-4 whole horizons (plus a ragged tail when
    requested). With ``preset='patterns'`` the per-channel signal parameters
    come from a bank of ``motifs`` motifs perturbed by relative ``jitter``.
    """
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; expected one of {PRESETS}")
    if n_chunks < 1:
        raise ValueError("n_chunks must be >= 1")
    rng = np.random.default_rng(seed)

    bank = None
    if preset == "patterns":
        bank = []
        for _ in range(motifs):
            bank.append(
                [
                    _mixture_params(rng, 1.0) if ch.role == "position" else
                    _mixture_params(rng, 0.5)
                    for ch in _CHANNELS
                    if ch.role != "gripper"
                ]
            )

    corpus: list[Trajectory] = []
    done = 0
    index = 0
    while done < n_chunks:
        k = int(rng.integers(1, 5))
        n_steps = horizon * k
        if ragged:
            n_steps += int(rng.integers(0, horizon))
            n_steps = max(n_steps, 2)
        t = np.arange(n_steps) / rate_hz
        columns = []
        smooth = 0
        for ch in _CHANNELS:
            if ch.role == "gripper":
                columns.append(_step_function(t, rng))
                continue
            if bank is None:
                params = _mixture_params(rng, 1.0 if ch.role == "position" else 0.5)
            else:
                offset, amp, freq, phase = bank[int(rng.integers(motifs))][smooth]
                wobble = 1.0 + jitter * rng.uniform(-1.0, 1.0)
                params = (offset * wobble, amp * wobble, freq, phase)
            columns.append(_mixture(t, params))
            smooth += 1
        values = np.stack(columns, axis=1)
        if noise > 0:
            values = values + rng.normal(0.0, noise, size=values.shape)
        corpus.append(
            Trajectory(
                values=values,
                channels=_CHANNELS,
                rate_hz=rate_hz,
                embodiment=embodiment,
                traj_id=f"{preset}-{index:05d}",
            )
        )
        done += n_steps // horizon
        index += 1
    return corpus
