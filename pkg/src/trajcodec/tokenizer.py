"""End-to-end trajectory tokenizer: fit, tokenize, detokenize, stream packing.

The fitted artifact bundles everything needed to round-trip a trajectory:
normalization stats, spline configuration, per-group residual codebooks, the
global token-id layout, and the learned BPE merge table. Tokenization runs

    normalize -> chunk -> spline fit -> residual quantize -> global ids -> BPE

and detokenization inverts every stage after the quantizer exactly.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from . import bpe, bspline, core, rvq

log = logging.getLogger(__name__)

ARTIFACT_VERSION = "trajcodec-1"


@dataclass(frozen=True)
class TokenizerConfig:
    """All pipeline knobs; the defaults are the standard depth-8 setup.

    ``ridge_lambda`` defaults to 0 (exact least squares) so that re-fitting a
    reconstructed trajectory recovers the decoded control points bit-for-bit
    and token round trips are idempotent; set it positive to shrink fits on
    noisy corpora at the cost of that exactness.
    """

    horizon: int = 30
    n_control: int = 8
    degree_pos_rot: int = 3
    degree_grip: int = 0
    ridge_lambda: float = 0.0
    layers: int = 8
    k_position: int = 256
    k_rotation: int = 256
    k_gripper: int = 64
    ema_decay: float = 0.99
    drop_p: float = 0.1
    gamma: float = 1.0
    lambda_commit: float = 1.0
    lambda_drop: float = 0.2
    epochs: int = 5
    batch_size: int = 256
    reseed_threshold: float = 1e-2
    bpe_merges: int = 2048
    norm_scope: str = "corpus"  # or "embodiment"

    def __post_init__(self) -> None:
        if self.horizon < 2:
            raise ValueError("horizon must be >= 2")
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.norm_scope not in ("corpus", "embodiment"):
            raise ValueError(f"norm_scope must be 'corpus' or 'embodiment', got {self.norm_scope!r}")
        for name in ("k_position", "k_rotation", "k_gripper"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        self.spline  # validate degree/control consistency

    @property
    def spline(self) -> bspline.SplineConfig:
        return bspline.SplineConfig(
            degree_pos_rot=self.degree_pos_rot,
            degree_grip=self.degree_grip,
            n_control=self.n_control,
            ridge_lambda=self.ridge_lambda,
        )

    @property
    def group_sizes(self) -> dict[str, int]:
        return {
            "position": self.k_position,
            "rotation": self.k_rotation,
            "gripper": self.k_gripper,
        }

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TokenizerConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class TokenLayout:
    """Bijection between (group, layer, index) and a flat global id space.

    Groups occupy consecutive blocks in the fixed group order; inside a block
    layer ``l`` (1-based) starts at ``(l - 1) * K``.
    """

    groups: tuple[str, ...]
    layers: int
    sizes: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.groups) != len(self.sizes) or not self.groups:
            raise ValueError("groups and sizes must be parallel and non-empty")

    @property
    def offsets(self) -> tuple[int, ...]:
        out = []
        acc = 0
        for k in self.sizes:
            out.append(acc)
            acc += self.layers * k
        return tuple(out)

    @property
    def base_vocab(self) -> int:
        return sum(self.layers * k for k in self.sizes)

    def group_size(self, group: str) -> int:
        return self.sizes[self.groups.index(group)]

    def token_id(self, group: str, layer: int, index: int) -> int:
        """Global id for codeword ``index`` at 1-based ``layer`` of ``group``."""
        gi = self.groups.index(group)
        if not 1 <= layer <= self.layers:
            raise ValueError(f"layer {layer} out of range 1..{self.layers}")
        if not 0 <= index < self.sizes[gi]:
            raise ValueError(f"index {index} out of range for {group} (K={self.sizes[gi]})")
        return self.offsets[gi] + (layer - 1) * self.sizes[gi] + index

    def unpack(self, token: int) -> tuple[str, int, int]:
        """Inverse of :meth:`token_id`."""
        if not 0 <= token < self.base_vocab:
            raise ValueError(f"id {token} outside layout range [0, {self.base_vocab})")
        for gi in reversed(range(len(self.groups))):
            offset = self.offsets[gi]
            if token >= offset:
                rel = token - offset
                return self.groups[gi], rel // self.sizes[gi] + 1, rel % self.sizes[gi]
        raise AssertionError("unreachable")


@dataclass(frozen=True)
class ChunkTokens:
    """Post-BPE ids for one chunk plus its source span."""

    start: int
    length: int
    ids: tuple[int, ...]


@dataclass(frozen=True)
class TokenizedTrajectory:
    traj_id: str
    chunks: tuple[ChunkTokens, ...]
    dropped_steps: int

    @property
    def n_ids(self) -> int:
        return sum(len(c.ids) for c in self.chunks)


@dataclass(frozen=True)
class Packet:
    """One frame's token packet; order inside a packet is [visual, action]."""

    visual_ids: tuple[int, ...]
    action_ids: tuple[int, ...]


@dataclass
class TokenizerArtifact:
    """The persisted tokenizer: everything tokenize/detokenize need."""

    config: TokenizerConfig
    channels: tuple[core.Channel, ...]
    norm_scope: str
    norm_stats: dict[str, core.NormStats]  # keyed "" for corpus scope
    books: dict[str, rvq.Codebook]
    layout: TokenLayout
    merges: bpe.MergeTable
    metadata: dict = field(default_factory=dict)
    version: str = ARTIFACT_VERSION

    @property
    def roles(self) -> tuple[str, ...]:
        return tuple(ch.role for ch in self.channels)

    def stats_for(self, embodiment: str) -> core.NormStats:
        if self.norm_scope == "corpus":
            return self.norm_stats[""]
        stats = self.norm_stats.get(embodiment)
        if stats is None:
            raise ValueError(
                f"no normalization stats for embodiment {embodiment!r} "
                f"(artifact was fitted per-embodiment)"
            )
        return stats


@contextmanager
def _stage(name: str):
    try:
        yield
    except Exception as err:
        raise ValueError(f"stage {name!r}: {err}") from err


def corpus_fingerprint(corpus) -> str:
    """Order-sensitive SHA-256 over trajectory ids, metadata, and values."""
    digest = hashlib.sha256()
    for traj in corpus:
        header = (
            f"{traj.traj_id}|{traj.embodiment}|{traj.rate_hz}|"
            + ",".join(f"{c.name}:{c.role}" for c in traj.channels)
        )
        digest.update(header.encode())
        digest.update(np.ascontiguousarray(traj.values).tobytes())
    return digest.hexdigest()


def _check_channels(corpus) -> tuple[core.Channel, ...]:
    channels = corpus[0].channels
    for traj in corpus[1:]:
        if traj.channels != channels:
            raise ValueError(
                f"trajectory {traj.traj_id!r} channel metadata differs from the corpus head"
            )
    return channels


def _fit_norm(corpus, scope: str) -> dict[str, core.NormStats]:
    if scope == "corpus":
        return {"": core.fit_norm_stats(corpus)}
    by_emb: dict[str, list] = {}
    for traj in corpus:
        by_emb.setdefault(traj.embodiment, []).append(traj)
    return {emb: core.fit_norm_stats(trajs) for emb, trajs in sorted(by_emb.items())}


def _normalized_chunks(corpus, artifact_stats, scope, horizon):
    """Normalize and cut the whole corpus; returns chunks plus diagnostics."""
    chunks: list[core.Chunk] = []
    dropped = 0
    n_out = 0
    n_total = 0
    for traj in corpus:
        stats = artifact_stats[""] if scope == "corpus" else artifact_stats[traj.embodiment]
        normalized = core.normalize(traj.values, stats)
        n_out += int(np.count_nonzero(np.abs(normalized) > 1.0))
        n_total += normalized.size
        traj_chunks, traj_dropped = core.split_chunks(traj.traj_id, normalized, horizon)
        chunks.extend(traj_chunks)
        dropped += traj_dropped
    return chunks, dropped, (n_out / n_total if n_total else 0.0)


def flatten_ids(layout: TokenLayout, indices: np.ndarray, ordered_roles) -> list[int]:
    """Map a (d, L) group-major index matrix to the flat global-id stream."""
    ids: list[int] = []
    for row, role in enumerate(ordered_roles):
        for layer in range(layout.layers):
            ids.append(layout.token_id(role, layer + 1, int(indices[row, layer])))
    return ids


def unflatten_ids(layout: TokenLayout, ids, ordered_roles) -> np.ndarray:
    """Inverse of :func:`flatten_ids`; validates the group/layer pattern."""
    expected = len(ordered_roles) * layout.layers
    if len(ids) != expected:
        raise ValueError(f"expected {expected} primitive ids, got {len(ids)}")
    out = np.empty((len(ordered_roles), layout.layers), dtype=np.int64)
    pos = 0
    for row, role in enumerate(ordered_roles):
        for layer in range(layout.layers):
            group, got_layer, index = layout.unpack(int(ids[pos]))
            if group != role or got_layer != layer + 1:
                raise ValueError(
                    f"id {ids[pos]} decodes to ({group}, layer {got_layer}) where "
                    f"({role}, layer {layer + 1}) was expected"
                )
            out[row, layer] = index
            pos += 1
    return out


def fit(corpus, config: TokenizerConfig | None = None, seed: int = 0) -> TokenizerArtifact:
    """Train the full tokenizer on a corpus; deterministic for a fixed seed."""
    config = config or TokenizerConfig()
    corpus = list(corpus)
    if not corpus:
        raise ValueError("stage 'normalize': empty corpus")

    with _stage("normalize"):
        channels = _check_channels(corpus)
        norm_stats = _fit_norm(corpus, config.norm_scope)
        chunks, dropped, out_frac = _normalized_chunks(
            corpus, norm_stats, config.norm_scope, config.horizon
        )
        if not chunks:
            raise ValueError("corpus produced no chunks")

    with _stage("spline_fit"):
        roles = tuple(ch.role for ch in channels)
        controls = np.stack(
            [bspline.fit_chunk(config.spline, c.values, roles) for c in chunks]
        )

    rng = np.random.default_rng(seed)
    init_seed = int(rng.integers(2**62))
    epoch_seeds = [int(rng.integers(2**62)) for _ in range(config.epochs)]

    with _stage("quantizer_train"):
        books = rvq.init_codebooks(
            controls,
            roles,
            config.group_sizes,
            config.layers,
            config.ema_decay,
            seed=init_seed,
        )
        chunk_values = [c.values for c in chunks]
        losses = []
        for epoch, epoch_seed in enumerate(epoch_seeds):
            report = rvq.train_epoch(
                books,
                controls,
                chunk_values,
                roles,
                config.spline,
                seed=epoch_seed,
                drop_p=config.drop_p,
                reseed_threshold=config.reseed_threshold,
                batch_size=config.batch_size,
                gamma=config.gamma,
                lambda_commit=config.lambda_commit,
                lambda_drop=config.lambda_drop,
            )
            losses.append(dataclasses.asdict(report))
            log.info(
                "epoch %d/%d: recon=%.3e drop=%.3e total=%.3e",
                epoch + 1,
                config.epochs,
                report.recon,
                report.drop,
                report.total,
            )

    with _stage("token_layout"):
        present = [g for g in rvq.GROUP_ORDER if g in books]
        layout = TokenLayout(
            groups=tuple(present),
            layers=config.layers,
            sizes=tuple(config.group_sizes[g] for g in present),
        )
        ordered_roles = [roles[ch] for ch in rvq.group_channel_order(roles)]

    with _stage("bpe_train"):
        streams = []
        for control in controls:
            indices = rvq.stable_encode_chunk(books, control, roles)
            streams.append(flatten_ids(layout, indices, ordered_roles))
        merges = bpe.train_merges(
            streams, base_vocab=layout.base_vocab, max_merges=config.bpe_merges
        )

    metadata = {
        "seed": seed,
        "epochs": config.epochs,
        "corpus_fingerprint": corpus_fingerprint(corpus),
        "n_trajectories": len(corpus),
        "n_chunks": len(chunks),
        "dropped_steps": dropped,
        "out_of_range_fraction": out_frac,
        "losses": losses,
    }
    return TokenizerArtifact(
        config=config,
        channels=channels,
        norm_scope=config.norm_scope,
        norm_stats=norm_stats,
        books=books,
        layout=layout,
        merges=merges,
        metadata=metadata,
    )


def _require_channels(artifact: TokenizerArtifact, traj: core.Trajectory) -> None:
    if traj.channels != artifact.channels:
        raise ValueError(
            f"trajectory {traj.traj_id!r} channels do not match the fitted artifact"
        )


def tokenize(artifact: TokenizerArtifact, traj: core.Trajectory) -> TokenizedTrajectory:
    """Encode one trajectory into per-chunk post-BPE id streams."""
    _require_channels(artifact, traj)
    stats = artifact.stats_for(traj.embodiment)
    roles = artifact.roles
    ordered_roles = [roles[ch] for ch in rvq.group_channel_order(roles)]
    normalized = core.normalize(traj.values, stats)
    chunks, dropped = core.split_chunks(traj.traj_id, normalized, artifact.config.horizon)
    out = []
    for chunk in chunks:
        control = bspline.fit_chunk(artifact.config.spline, chunk.values, roles)
        indices = rvq.stable_encode_chunk(artifact.books, control, roles)
        ids = flatten_ids(artifact.layout, indices, ordered_roles)
        ids = bpe.bpe_encode(artifact.merges, ids)
        out.append(ChunkTokens(start=chunk.start, length=chunk.length, ids=tuple(ids)))
    return TokenizedTrajectory(traj_id=traj.traj_id, chunks=tuple(out), dropped_steps=dropped)


def detokenize(artifact: TokenizerArtifact, chunks, embodiment: str = "") -> np.ndarray:
    """Reconstruct original-unit values from per-chunk (ids, length) pairs.

    ``chunks`` accepts ChunkTokens or (ids, length) tuples; chunk lengths are
    required because BPE streams do not encode them. Returns the concatenated
    (sum T_e, d) value matrix.
    """
    stats = artifact.stats_for(embodiment)
    roles = artifact.roles
    ordered_roles = [roles[ch] for ch in rvq.group_channel_order(roles)]
    parts = []
    for entry in chunks:
        if isinstance(entry, ChunkTokens):
            ids, length = entry.ids, entry.length
        else:
            ids, length = entry
        if length < 2:
            raise ValueError(f"chunk length must be >= 2, got {length}")
        primitive = bpe.bpe_decode(artifact.merges, ids)
        indices = unflatten_ids(artifact.layout, primitive, ordered_roles)
        control = rvq.decode_chunk(artifact.books, indices, roles)
        normalized = bspline.reconstruct_chunk(artifact.config.spline, control, roles, length)
        parts.append(core.denormalize(normalized, stats))
    if not parts:
        return np.empty((0, len(roles)))
    return np.concatenate(parts, axis=0)


def pack_stream(visual_frames, action_frames) -> tuple[list[int], str]:
    """Interleave per-frame visual and action ids into one flat stream.

    Returns the stream plus a parallel role mask, 'V' for visual positions
    and 'A' for action positions.
    """
    visual_frames = list(visual_frames)
    action_frames = list(action_frames)
    if len(visual_frames) != len(action_frames):
        raise ValueError(
            f"{len(visual_frames)} visual frames vs {len(action_frames)} action frames"
        )
    stream: list[int] = []
    mask: list[str] = []
    for visual, action in zip(visual_frames, action_frames):
        stream.extend(int(v) for v in visual)
        mask.extend("V" * len(visual))
        stream.extend(int(a) for a in action)
        mask.extend("A" * len(action))
    return stream, "".join(mask)


def actions_per_frame(tokenized: TokenizedTrajectory, n_frames: int) -> list[list[int]]:
    """Place each chunk's ids at its first frame; covered frames stay empty."""
    frames: list[list[int]] = [[] for _ in range(n_frames)]
    for chunk in tokenized.chunks:
        if chunk.start >= n_frames:
            raise ValueError(f"chunk start {chunk.start} beyond {n_frames} frames")
        frames[chunk.start] = list(chunk.ids)
    return frames


# --- artifact (de)serialization -------------------------------------------


def artifact_to_dict(artifact: TokenizerArtifact) -> dict:
    return {
        "version": artifact.version,
        "config": artifact.config.to_dict(),
        "channels": [{"name": c.name, "role": c.role} for c in artifact.channels],
        "norm": {
            "scope": artifact.norm_scope,
            "stats": {
                key: {"p1": stats.p1.tolist(), "p99": stats.p99.tolist()}
                for key, stats in artifact.norm_stats.items()
            },
        },
        "layout": {
            "groups": list(artifact.layout.groups),
            "layers": artifact.layout.layers,
            "sizes": list(artifact.layout.sizes),
        },
        "codebooks": {
            group: {
                "decay": book.decay,
                "zero_pinned": book.zero_pinned,
                "codewords": book.codewords.tolist(),
                "ema_counts": book.ema_counts.tolist(),
                "ema_sums": book.ema_sums.tolist(),
            }
            for group, book in sorted(artifact.books.items())
        },
        "bpe_merges": [
            [left, right, artifact.merges.base_vocab + i]
            for i, (left, right) in enumerate(artifact.merges.merges)
        ],
        "metadata": artifact.metadata,
    }


def artifact_from_dict(data: dict) -> TokenizerArtifact:
    version = data.get("version")
    if version != ARTIFACT_VERSION:
        raise ValueError(f"unsupported artifact version {version!r}")
    config = TokenizerConfig.from_dict(data["config"])
    channels = tuple(core.Channel(name=c["name"], role=c["role"]) for c in data["channels"])
    norm_stats = {
        key: core.NormStats(p1=np.array(s["p1"]), p99=np.array(s["p99"]))
        for key, s in data["norm"]["stats"].items()
    }
    books = {
        group: rvq.Codebook(
            group=group,
            codewords=np.array(b["codewords"]),
            ema_counts=np.array(b["ema_counts"]),
            ema_sums=np.array(b["ema_sums"]),
            decay=b["decay"],
            zero_pinned=b.get("zero_pinned", False),
        )
        for group, b in data["codebooks"].items()
    }
    layout = TokenLayout(
        groups=tuple(data["layout"]["groups"]),
        layers=data["layout"]["layers"],
        sizes=tuple(data["layout"]["sizes"]),
    )
    triples = data["bpe_merges"]
    for i, (_, _, new_id) in enumerate(triples):
        if new_id != layout.base_vocab + i:
            raise ValueError(f"merge {i} has new id {new_id}, expected {layout.base_vocab + i}")
    merges = bpe.MergeTable(
        base_vocab=layout.base_vocab,
        merges=tuple((left, right) for left, right, _ in triples),
    )
    return TokenizerArtifact(
        config=config,
        channels=channels,
        norm_scope=data["norm"]["scope"],
        norm_stats=norm_stats,
        books=books,
        layout=layout,
        merges=merges,
        metadata=data.get("metadata", {}),
        version=version,
    )


def save_artifact(artifact: TokenizerArtifact, path) -> None:
    """Write the artifact as canonical JSON (sorted keys, stable bytes)."""
    payload = json.dumps(artifact_to_dict(artifact), sort_keys=True, separators=(",", ":"))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(payload)
        fh.write("\n")


def load_artifact(path) -> TokenizerArtifact:
    with open(path, "r", encoding="utf-8") as fh:
        return artifact_from_dict(json.load(fh))
