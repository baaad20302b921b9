"""Reconstruction-error and compression metrics, plus the sweep runner.

Token accounting treats one (timestep x channel) scalar slot as the unit, so
per-step binning with no merging scores a compression ratio of exactly 1 and
every other tokenizer is measured against the same denominator. The overall
ratio factors exactly into (pre-merge ratio) x (BPE gain).
"""

from __future__ import annotations

import csv
import dataclasses
import itertools
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import baselines, bpe, core, rvq, tokenizer

log = logging.getLogger(__name__)

BASELINES = ("binning", "beast", "fast")


def mae(original: np.ndarray, reconstructed: np.ndarray) -> float:
    """Mean absolute elementwise error; inputs must have identical shape."""
    original = np.asarray(original, dtype=np.float64)
    reconstructed = np.asarray(reconstructed, dtype=np.float64)
    if original.shape != reconstructed.shape:
        raise ValueError(f"shape mismatch: {original.shape} vs {reconstructed.shape}")
    return float(np.mean(np.abs(original - reconstructed)))


def mae_by_group(original: np.ndarray, reconstructed: np.ndarray, roles) -> dict[str, float]:
    out = {}
    roles = list(roles)
    for group in rvq.GROUP_ORDER:
        cols = [i for i, role in enumerate(roles) if role == group]
        if cols:
            out[group] = mae(original[:, cols], reconstructed[:, cols])
    return out


@dataclass(frozen=True)
class EvalReport:
    """Deterministic evaluation summary for one tokenizer on one corpus."""

    tokenizer: str
    n_trajectories: int
    n_chunks: int
    dropped_steps: int
    scalar_slots: int
    pre_tokens: int
    post_tokens: int
    mae: float
    group_mae: dict[str, float]
    token_length_hist: dict[int, int]
    utilization: list[dict] = field(default_factory=list)
    clipped: int = 0
    out_of_range_fraction: float = 0.0

    def __post_init__(self) -> None:
        if self.post_tokens <= 0:
            raise ValueError("tokenization produced zero tokens")
        if self.post_tokens > self.pre_tokens:
            raise ValueError("post-BPE token count exceeds pre-BPE count")

    @property
    def ratio(self) -> float:
        """Scalar slots per emitted post-BPE token (the compression ratio)."""
        return self.scalar_slots / self.post_tokens

    @property
    def pre_ratio(self) -> float:
        return self.scalar_slots / self.pre_tokens

    @property
    def bpe_gain(self) -> float:
        return self.pre_tokens / self.post_tokens

    def to_dict(self) -> dict:
        payload = dataclasses.asdict(self)
        payload["ratio"] = self.ratio
        payload["pre_ratio"] = self.pre_ratio
        payload["bpe_gain"] = self.bpe_gain
        payload["token_length_hist"] = {str(k): v for k, v in sorted(self.token_length_hist.items())}
        return payload


def _evaluate_main(artifact: tokenizer.TokenizerArtifact, corpus) -> EvalReport:
    roles = artifact.roles
    ordered_roles = [roles[ch] for ch in rvq.group_channel_order(roles)]
    per_traj_mae: list[float] = []
    per_traj_group: list[dict[str, float]] = []
    hist: dict[int, int] = {}
    encodings = []
    pre_tokens = post_tokens = scalar_slots = 0
    n_chunks = dropped = 0
    out_entries = out_total = 0

    for traj in corpus:
        tokenized = tokenizer.tokenize(artifact, traj)
        recon = tokenizer.detokenize(artifact, tokenized.chunks, traj.embodiment)
        covered = recon.shape[0]
        original = traj.values[:covered]
        per_traj_mae.append(mae(original, recon))
        per_traj_group.append(mae_by_group(original, recon, roles))
        dropped += tokenized.dropped_steps
        stats = artifact.stats_for(traj.embodiment)
        normalized = core.normalize(traj.values, stats)
        out_entries += int(np.count_nonzero(np.abs(normalized) > 1.0))
        out_total += normalized.size
        for chunk in tokenized.chunks:
            n_chunks += 1
            scalar_slots += chunk.length * len(roles)
            pre = bpe.bpe_decode(artifact.merges, chunk.ids)
            pre_tokens += len(pre)
            post_tokens += len(chunk.ids)
            hist[len(chunk.ids)] = hist.get(len(chunk.ids), 0) + 1
            encodings.append(tokenizer.unflatten_ids(artifact.layout, pre, ordered_roles))

    usage = rvq.utilization_stats(artifact.books, encodings, roles)
    return EvalReport(
        tokenizer="main",
        n_trajectories=len(corpus),
        n_chunks=n_chunks,
        dropped_steps=dropped,
        scalar_slots=scalar_slots,
        pre_tokens=pre_tokens,
        post_tokens=post_tokens,
        mae=float(np.mean(per_traj_mae)),
        group_mae=_mean_group(per_traj_group),
        token_length_hist=hist,
        utilization=[
            {"group": u.group, "layer": u.layer, "perplexity": u.perplexity, "dead": u.dead}
            for u in usage
        ],
        out_of_range_fraction=(out_entries / out_total if out_total else 0.0),
    )


def _mean_group(entries: list[dict[str, float]]) -> dict[str, float]:
    out: dict[str, float] = {}
    for group in rvq.GROUP_ORDER:
        vals = [e[group] for e in entries if group in e]
        if vals:
            out[group] = float(np.mean(vals))
    return out


def _evaluate_baseline(
    artifact: tokenizer.TokenizerArtifact,
    corpus,
    baseline: str,
    apply_bpe: bool | None = None,
) -> EvalReport:
    """Run a reference tokenizer through the identical accounting.

    ``apply_bpe=None`` keeps each baseline's native behavior: the DCT
    tokenizer always pairs with BPE, plain and control-point binning do not.
    When enabled, merges are learned on this corpus's streams with the same
    merge budget as the artifact.
    """
    if baseline not in BASELINES:
        raise ValueError(f"unknown baseline {baseline!r}; expected one of {BASELINES}")
    if apply_bpe is None:
        apply_bpe = baseline == "fast"
    roles = artifact.roles
    cfg_bin = baselines.BinningConfig()
    cfg_dct = baselines.DctConfig()
    spline_cfg = artifact.config.spline

    streams: list[list[int]] = []
    chunk_meta = []  # (traj index, start, length)
    clipped = 0
    dropped = 0
    per_traj_norm: list[np.ndarray] = []
    per_traj_chunks: list[list[int]] = []

    corpus = list(corpus)
    for ti, traj in enumerate(corpus):
        stats = artifact.stats_for(traj.embodiment)
        normalized = core.normalize(traj.values, stats)
        per_traj_norm.append(normalized)
        per_traj_chunks.append([])
        chunks, traj_dropped = core.split_chunks(traj.traj_id, normalized, artifact.config.horizon)
        dropped += traj_dropped
        for chunk in chunks:
            if baseline == "binning":
                idx, c = baselines.bin_encode(cfg_bin, chunk.values)
                stream = [int(v) for v in idx.ravel()]
            elif baseline == "beast":
                idx, c = baselines.spline_bin_encode(cfg_bin, spline_cfg, chunk.values, roles)
                stream = [int(v) for v in idx.ravel()]
            else:
                stream, c = baselines.dct_encode(cfg_dct, chunk.values)
            clipped += c
            per_traj_chunks[ti].append(len(streams))
            streams.append(stream)
            chunk_meta.append((ti, chunk.start, chunk.length))

    if not streams:
        raise ValueError("corpus produced no chunks")

    table = None
    encoded = streams
    if apply_bpe:
        base_vocab = cfg_dct.vocab if baseline == "fast" else cfg_bin.bins
        table = bpe.train_merges(streams, base_vocab=base_vocab,
                                 max_merges=artifact.config.bpe_merges)
        encoded = [bpe.bpe_encode(table, s) for s in streams]

    d = len(roles)
    per_traj_mae: list[float] = []
    per_traj_group: list[dict[str, float]] = []
    hist: dict[int, int] = {}
    pre_tokens = post_tokens = scalar_slots = 0
    n_chunks = 0

    for ti, traj in enumerate(corpus):
        stats = artifact.stats_for(traj.embodiment)
        recon_parts = []
        for si in per_traj_chunks[ti]:
            _, start, length = chunk_meta[si]
            ids = encoded[si]
            primitive = bpe.bpe_decode(table, ids) if table is not None else list(ids)
            if baseline == "binning":
                values = baselines.bin_decode(cfg_bin, np.array(primitive).reshape(length, d))
            elif baseline == "beast":
                values = baselines.spline_bin_decode(
                    cfg_bin, spline_cfg,
                    np.array(primitive).reshape(spline_cfg.n_control, d), roles, length,
                )
            else:
                values = baselines.dct_decode(cfg_dct, primitive, length, d)
            recon_parts.append(core.denormalize(values, stats))
            n_chunks += 1
            scalar_slots += length * d
            pre_tokens += len(primitive)
            post_tokens += len(ids)
            hist[len(ids)] = hist.get(len(ids), 0) + 1
        if not recon_parts:
            continue
        recon = np.concatenate(recon_parts, axis=0)
        original = traj.values[: recon.shape[0]]
        per_traj_mae.append(mae(original, recon))
        per_traj_group.append(mae_by_group(original, recon, roles))

    return EvalReport(
        tokenizer=baseline,
        n_trajectories=len(corpus),
        n_chunks=n_chunks,
        dropped_steps=dropped,
        scalar_slots=scalar_slots,
        pre_tokens=pre_tokens,
        post_tokens=post_tokens,
        mae=float(np.mean(per_traj_mae)),
        group_mae=_mean_group(per_traj_group),
        token_length_hist=hist,
        clipped=clipped,
    )


def evaluate(
    artifact: tokenizer.TokenizerArtifact,
    corpus,
    baseline: str | None = None,
    apply_bpe: bool | None = None,
) -> EvalReport:
    """Evaluate the fitted tokenizer (or a named baseline) on a corpus."""
    corpus = list(corpus)
    if not corpus:
        raise ValueError("empty evaluation corpus")
    if baseline is None:
        return _evaluate_main(artifact, corpus)
    return _evaluate_baseline(artifact, corpus, baseline, apply_bpe)


def train_test_split(corpus, seed: int, test_fraction: float = 0.1):
    """Deterministic shuffle split; a function of corpus order and seed only."""
    corpus = list(corpus)
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must be in (0, 1)")
    if len(corpus) < 2:
        raise ValueError("need at least 2 trajectories to split")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(corpus))
    n_test = max(1, round(len(corpus) * test_fraction))
    test_idx = set(perm[:n_test].tolist())
    train = [corpus[i] for i in range(len(corpus)) if i not in test_idx]
    test = [corpus[i] for i in range(len(corpus)) if i in test_idx]
    return train, test


def sweep(
    grid: dict[str, list],
    corpus,
    seed: int = 0,
    base_config: tokenizer.TokenizerConfig | None = None,
    test_fraction: float = 0.1,
) -> list[dict]:
    """Train and evaluate one tokenizer per grid cell on a fixed 9:1 split.

    The grid maps config field names to candidate values; cells are the
    Cartesian product in sorted-key order. A failing cell contributes an
    error row instead of aborting the sweep.
    """
    if not grid:
        raise ValueError("empty sweep grid")
    base = base_config or tokenizer.TokenizerConfig()
    train, test = train_test_split(corpus, seed, test_fraction)
    keys = sorted(grid)
    rows: list[dict] = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        overrides = dict(zip(keys, combo))
        label = ",".join(f"{k}={v}" for k, v in overrides.items())
        row: dict = {"label": label, **overrides}
        try:
            cfg = dataclasses.replace(base, **overrides)
            artifact = tokenizer.fit(train, cfg, seed=seed)
            report = evaluate(artifact, test)
            row.update(
                mae=report.mae,
                ratio=report.ratio,
                pre_ratio=report.pre_ratio,
                bpe_gain=report.bpe_gain,
                pre_tokens=report.pre_tokens,
                post_tokens=report.post_tokens,
                group_mae=report.group_mae,
            )
        except Exception as err:  # keep sweeping; the cell reports its failure
            log.warning("sweep cell %s failed: %s", label, err)
            row["error"] = str(err)
        rows.append(row)
    return rows


def write_sweep_outputs(rows: list[dict], table_path, csv_path) -> None:
    """Emit the machine-readable table and a plot-ready frontier CSV."""
    with open(table_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(rows, sort_keys=True))
        fh.write("\n")
    columns = ["label", "mae", "ratio", "pre_ratio", "bpe_gain", "pre_tokens", "post_tokens"]
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            if "error" in row:
                writer.writerow([row["label"]] + ["error"] * (len(columns) - 1))
            else:
                writer.writerow([row[c] for c in columns])
