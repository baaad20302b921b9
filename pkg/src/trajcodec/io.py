"""File formats: JSONL trajectory corpora, CSV import, token and stream files."""

from __future__ import annotations

import csv
import json

import numpy as np

from .core import Channel, Trajectory
from .tokenizer import ChunkTokens, TokenizedTrajectory


def trajectory_to_record(traj: Trajectory) -> dict:
    return {
        "id": traj.traj_id,
        "embodiment": traj.embodiment,
        "rate_hz": traj.rate_hz,
        "channels": [{"name": c.name, "role": c.role} for c in traj.channels],
        "values": traj.values.tolist(),
    }


def trajectory_from_record(record: dict) -> Trajectory:
    return Trajectory(
        values=np.array(record["values"], dtype=np.float64),
        channels=tuple(Channel(name=c["name"], role=c["role"]) for c in record["channels"]),
        rate_hz=float(record["rate_hz"]),
        embodiment=record.get("embodiment", ""),
        traj_id=record.get("id", ""),
    )


def save_corpus_jsonl(corpus, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for traj in corpus:
            fh.write(json.dumps(trajectory_to_record(traj), sort_keys=True))
            fh.write("\n")


def load_corpus_jsonl(path) -> list[Trajectory]:
    corpus = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                corpus.append(trajectory_from_record(record))
            except (json.JSONDecodeError, KeyError, ValueError) as err:
                raise ValueError(f"{path}:{lineno}: {err}") from err
    if not corpus:
        raise ValueError(f"{path}: no trajectories found")
    return corpus


def load_trajectory_csv(
    path, roles, rate_hz: float, embodiment: str = "", traj_id: str | None = None
) -> Trajectory:
    """Read one trajectory from CSV (header row = channel names).

    ``roles`` assigns a part role to each column, in column order.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        rows = [[float(cell) for cell in row] for row in reader if row]
    roles = list(roles)
    if len(roles) != len(header):
        raise ValueError(
            f"{path}: {len(header)} columns but {len(roles)} roles supplied"
        )
    return Trajectory(
        values=np.array(rows, dtype=np.float64),
        channels=tuple(Channel(name=n, role=r) for n, r in zip(header, roles)),
        rate_hz=rate_hz,
        embodiment=embodiment,
        traj_id=traj_id if traj_id is not None else str(path),
    )


def save_tokens_jsonl(tokenized, path) -> None:
    """One record per trajectory: its id and per-chunk spans plus ids."""
    with open(path, "w", encoding="utf-8") as fh:
        for entry in tokenized:
            record = {
                "traj_id": entry.traj_id,
                "dropped_steps": entry.dropped_steps,
                "chunks": [
                    {"start": c.start, "len": c.length, "ids": list(c.ids)}
                    for c in entry.chunks
                ],
            }
            fh.write(json.dumps(record, sort_keys=True))
            fh.write("\n")


def load_tokens_jsonl(path) -> list[TokenizedTrajectory]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                chunks = tuple(
                    ChunkTokens(start=c["start"], length=c["len"], ids=tuple(c["ids"]))
                    for c in record["chunks"]
                )
                out.append(
                    TokenizedTrajectory(
                        traj_id=record["traj_id"],
                        chunks=chunks,
                        dropped_steps=record.get("dropped_steps", 0),
                    )
                )
            except (json.JSONDecodeError, KeyError) as err:
                raise ValueError(f"{path}:{lineno}: {err}") from err
    return out


def save_packed_stream(frames, stream, mask, path, placement: str = "chunk_start") -> None:
    """Packed visual+action stream with both per-frame and flattened views."""
    payload = {
        "placement": placement,
        "frames": [{"visual": list(v), "action": list(a)} for v, a in frames],
        "stream": list(stream),
        "mask": mask,
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(payload, sort_keys=True))
        fh.write("\n")
