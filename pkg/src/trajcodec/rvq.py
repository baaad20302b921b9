"""Part-grouped multi-layer residual vector quantization of control vectors.

Each part group (position / rotation / gripper) owns a stack of L codebooks
over length-N control vectors. Encoding greedily quantizes the running
residual layer by layer:

    r_0 = s,   q_l = argmin_i ||r_{l-1} - C^l_i||^2,   r_l = r_{l-1} - C^l_{q_l}

and decoding sums the selected codewords. Training re-estimates codewords
with exponential-moving-average cluster statistics, randomly skips layers
(quantizer dropout) so shallow prefixes stay expressive on their own, and
reseeds codewords whose effective cluster mass has collapsed.

Index 0 of every layer is pinned to the exact zero vector and never trained
or reseeded. Subtracting it is a no-op, so each greedy layer can only shrink
(or keep) the residual norm and prefix reconstructions refine monotonically,
for any input.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import bspline
from .core import ROLES

# Fixed iteration order for part groups; keeps token layout and RNG
# consumption deterministic.
GROUP_ORDER = ROLES

_ASSIGN_BLOCK = 4096  # rows per distance block, bounds peak memory


@dataclass
class Codebook:
    """L stacked codeword tables for one part group, with EMA state.

    ``zero_pinned`` marks index 0 of every layer as a frozen zero codeword
    that training never updates or reseeds; pipeline-built books set it.
    """

    group: str
    codewords: np.ndarray  # (L, K, N)
    ema_counts: np.ndarray  # (L, K)
    ema_sums: np.ndarray  # (L, K, N)
    decay: float
    zero_pinned: bool = False

    def __post_init__(self) -> None:
        if self.group not in ROLES:
            raise ValueError(f"unknown part role {self.group!r}")
        if not 0.0 < self.decay < 1.0:
            raise ValueError("decay must be in (0, 1)")
        self.codewords = np.asarray(self.codewords, dtype=np.float64)
        if self.codewords.ndim != 3:
            raise ValueError("codewords must have shape (L, K, N)")
        self.ema_counts = np.asarray(self.ema_counts, dtype=np.float64)
        self.ema_sums = np.asarray(self.ema_sums, dtype=np.float64)
        if self.ema_counts.shape != self.codewords.shape[:2]:
            raise ValueError("ema_counts shape must be (L, K)")
        if self.ema_sums.shape != self.codewords.shape:
            raise ValueError("ema_sums shape must match codewords")

    @property
    def n_layers(self) -> int:
        return self.codewords.shape[0]

    @property
    def size(self) -> int:
        return self.codewords.shape[1]

    @property
    def dim(self) -> int:
        return self.codewords.shape[2]

    def copy(self) -> "Codebook":
        return Codebook(
            group=self.group,
            codewords=self.codewords.copy(),
            ema_counts=self.ema_counts.copy(),
            ema_sums=self.ema_sums.copy(),
            decay=self.decay,
            zero_pinned=self.zero_pinned,
        )

    @classmethod
    def from_codewords(
        cls, group: str, codewords: np.ndarray, decay: float, zero_pinned: bool = False
    ) -> "Codebook":
        """Build a consistent EMA state around given codewords (count 1 each)."""
        codewords = np.asarray(codewords, dtype=np.float64)
        return cls(
            group=group,
            codewords=codewords.copy(),
            ema_counts=np.ones(codewords.shape[:2]),
            ema_sums=codewords.copy(),
            decay=decay,
            zero_pinned=zero_pinned,
        )


@dataclass(frozen=True)
class LossReport:
    """Diagnostics for one training pass (means per sample)."""

    recon_control: float  # quantization error at the control-vector level
    recon_traj: float  # error of the spline-decoded trajectory, weighted by gamma
    recon: float  # recon_control + recon_traj
    commit: float  # commitment diagnostic (both stop-gradient terms)
    drop: float  # reconstruction error of the dropout-masked decode
    total: float
    n_samples: int


def _sq_dists(vectors: np.ndarray, table: np.ndarray) -> np.ndarray:
    """Exact pairwise squared distances, (M, K); shared by every encode path."""
    diff = vectors[:, None, :] - table[None, :, :]
    return np.einsum("mkn,mkn->mk", diff, diff)


def nearest_codeword(table: np.ndarray, vector: np.ndarray) -> tuple[int, np.ndarray]:
    """Index and value of the closest codeword; ties go to the lowest index."""
    table = np.asarray(table, dtype=np.float64)
    vector = np.asarray(vector, dtype=np.float64)
    if table.ndim != 2 or table.shape[0] == 0:
        raise ValueError("codeword table must be a non-empty (K, N) matrix")
    if not (np.isfinite(table).all() and np.isfinite(vector).all()):
        raise ValueError("non-finite input to nearest_codeword")
    idx = int(np.argmin(_sq_dists(vector[None, :], table)[0]))
    return idx, table[idx]


def _assign(table: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """Vectorized argmin over codewords, blocked to bound memory."""
    out = np.empty(vectors.shape[0], dtype=np.int64)
    for lo in range(0, vectors.shape[0], _ASSIGN_BLOCK):
        block = vectors[lo : lo + _ASSIGN_BLOCK]
        out[lo : lo + _ASSIGN_BLOCK] = np.argmin(_sq_dists(block, table), axis=1)
    return out


def encode_channel(
    book: Codebook, vector: np.ndarray, mask: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Greedy layer-wise quantization of one control vector.

    ``mask`` marks active layers; a dropped layer performs no codeword
    selection (index -1) and passes its residual through unchanged. With the
    default all-true mask this is the inference encoding.

    Returns (indices of shape (L,), residual trace of shape (L+1, N)).
    """
    vector = np.asarray(vector, dtype=np.float64)
    if vector.shape != (book.dim,):
        raise ValueError(f"vector shape {vector.shape} does not match codeword dim {book.dim}")
    if not np.isfinite(vector).all():
        raise ValueError("non-finite control vector")
    if mask is None:
        mask = np.ones(book.n_layers, dtype=bool)
    indices = np.full(book.n_layers, -1, dtype=np.int64)
    trace = np.empty((book.n_layers + 1, book.dim))
    residual = vector.copy()
    trace[0] = residual
    for layer in range(book.n_layers):
        if mask[layer]:
            idx, codeword = nearest_codeword(book.codewords[layer], residual)
            indices[layer] = idx
            residual = residual - codeword
        trace[layer + 1] = residual
    return indices, trace


def decode_prefix(book: Codebook, indices: np.ndarray, n_layers: int) -> np.ndarray:
    """Sum of the selected codewords over the first ``n_layers`` layers."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.shape != (book.n_layers,):
        raise ValueError(f"expected {book.n_layers} indices, got shape {indices.shape}")
    if not 0 <= n_layers <= book.n_layers:
        raise ValueError(f"prefix length {n_layers} out of range")
    out = np.zeros(book.dim)
    for layer in range(n_layers):
        idx = indices[layer]
        if idx < 0:
            continue  # dropped layer contributed nothing
        if idx >= book.size:
            raise ValueError(
                f"index {idx} out of range for {book.group} layer {layer} (K={book.size})"
            )
        out += book.codewords[layer, idx]
    return out


def decode_channel(book: Codebook, indices: np.ndarray) -> np.ndarray:
    """Sum of the indexed codewords over all layers."""
    return decode_prefix(book, indices, book.n_layers)


def group_channel_order(roles) -> list[int]:
    """Original channel indices reordered group-major (pos, rot, grip)."""
    return [i for group in GROUP_ORDER for i, role in enumerate(roles) if role == group]


def encode_chunk(
    books: dict[str, Codebook],
    control: np.ndarray,
    roles,
    mask: np.ndarray | None = None,
) -> np.ndarray:
    """Encode every channel of a control-point matrix against its group book.

    Returns indices with shape (d, L), rows ordered group-major with the
    original channel order preserved inside each group (the token order).
    Channels of a group are quantized together per layer; the result is
    identical to running :func:`encode_channel` per channel.
    """
    control = np.asarray(control, dtype=np.float64)
    if control.ndim != 2 or control.shape[1] != len(roles):
        raise ValueError(f"control shape {control.shape} does not match {len(roles)} roles")
    order = group_channel_order(roles)
    if len(order) != len(roles):
        bad = sorted(set(roles) - set(GROUP_ORDER))
        raise ValueError(f"unknown part roles {bad}")
    if not np.isfinite(control).all():
        raise ValueError("non-finite control points")
    n_layers = next(iter(books.values())).n_layers
    out = np.full((len(roles), n_layers), -1, dtype=np.int64)
    row = 0
    for group in GROUP_ORDER:
        cols = [ch for ch in order if roles[ch] == group]
        if not cols:
            continue
        book = books.get(group)
        if book is None:
            raise ValueError(f"no codebook for part role {group!r}")
        residual = control[:, cols].T.copy()
        for layer in range(book.n_layers):
            if mask is not None and not mask[layer]:
                continue
            idx = _assign(book.codewords[layer], residual)
            out[row : row + len(cols), layer] = idx
            residual -= book.codewords[layer][idx]
        row += len(cols)
    return out


def decode_chunk(books: dict[str, Codebook], indices: np.ndarray, roles) -> np.ndarray:
    """Inverse of :func:`encode_chunk`; returns control points (N, d)."""
    order = group_channel_order(roles)
    indices = np.asarray(indices, dtype=np.int64)
    if indices.shape[0] != len(order):
        raise ValueError(f"expected {len(order)} index rows, got {indices.shape[0]}")
    dim = next(iter(books.values())).dim
    control = np.empty((dim, len(roles)))
    row = 0
    for group in GROUP_ORDER:
        cols = [ch for ch in order if roles[ch] == group]
        if not cols:
            continue
        book = books.get(group)
        if book is None:
            raise ValueError(f"no codebook for part role {group!r}")
        idx = indices[row : row + len(cols)]
        if idx.shape[1] != book.n_layers:
            raise ValueError(f"expected {book.n_layers} layers, got {idx.shape[1]}")
        if idx.max(initial=-1) >= book.size:
            raise ValueError(f"index out of range for {group} (K={book.size})")
        acc = np.zeros((len(cols), book.dim))
        for layer in range(book.n_layers):
            li = idx[:, layer]
            sel = li >= 0
            if sel.any():
                acc[sel] += book.codewords[layer][li[sel]]
        control[:, cols] = acc.T
        row += len(cols)
    return control


def stable_encode_chunk(
    books: dict[str, Codebook], control: np.ndarray, roles, max_iter: int = 256
) -> np.ndarray:
    """Self-consistent chunk encoding: the greedy code of its own decode.

    Greedy residual quantization is not a projection in token space: greedily
    re-encoding a decoded codeword sum can take a different deep-layer path,
    so token streams would change on every reconstruct-and-encode round trip.
    This wrapper iterates ``t <- greedy(decode(t))`` until the finite orbit
    revisits a code, then returns a canonical element of that cycle (the
    lexicographically smallest). The result re-encodes to itself exactly,
    which makes tokenize / detokenize idempotent at the id level.
    """
    indices = encode_chunk(books, control, roles)
    seen: dict[bytes, int] = {}
    path: list[np.ndarray] = []
    for _ in range(max_iter):
        key = indices.tobytes()
        at = seen.get(key)
        if at is not None:
            cycle = path[at:]
            return min(cycle, key=lambda arr: tuple(arr.ravel()))
        seen[key] = len(path)
        path.append(indices)
        indices = encode_chunk(books, decode_chunk(books, indices, roles), roles)
    return indices  # orbit longer than the cap; emit the current code


def _kmeanspp_seed(vectors: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ style seeding; falls back to uniform draws on zero spread."""
    n = vectors.shape[0]
    centers = np.empty((k, vectors.shape[1]))
    centers[0] = vectors[rng.integers(n)]
    d2 = np.einsum("ij,ij->i", vectors - centers[0], vectors - centers[0])
    for j in range(1, k):
        total = d2.sum()
        if total > 0:
            pick = rng.choice(n, p=d2 / total)
        else:
            pick = rng.integers(n)
        centers[j] = vectors[pick]
        cand = np.einsum("ij,ij->i", vectors - centers[j], vectors - centers[j])
        np.minimum(d2, cand, out=d2)
    return centers


def init_codebooks(
    controls: np.ndarray,
    roles,
    sizes: dict[str, int],
    n_layers: int,
    decay: float,
    seed: int,
    init_samples: int = 4096,
) -> dict[str, Codebook]:
    """Seed per-group codebooks layer by layer from residuals of the data.

    Layer 1 is seeded from raw control vectors, each deeper layer from the
    residuals left by greedily applying the layers seeded before it, so every
    table starts on the distribution it will actually quantize. Index 0 of
    each layer is the pinned zero codeword.
    """
    controls = np.asarray(controls, dtype=np.float64)
    if controls.ndim != 3:
        raise ValueError("controls must have shape (B, N, d)")
    rng = np.random.default_rng(seed)
    books: dict[str, Codebook] = {}
    for group in GROUP_ORDER:
        cols = [i for i, role in enumerate(roles) if role == group]
        if not cols:
            continue
        pool = controls[:init_samples, :, cols].transpose(0, 2, 1).reshape(-1, controls.shape[1])
        k = sizes[group]
        layers = np.zeros((n_layers, k, pool.shape[1]))
        residual = pool.copy()
        for layer in range(n_layers):
            if k > 1:
                layers[layer, 1:] = _kmeanspp_seed(residual, k - 1, rng)
            idx = _assign(layers[layer], residual)
            residual -= layers[layer][idx]
        books[group] = Codebook.from_codewords(group, layers, decay, zero_pinned=True)
    return books


def _ema_apply(book: Codebook, batch_counts: np.ndarray, batch_sums: np.ndarray,
               reseed_threshold: float) -> None:
    a = book.decay
    book.ema_counts *= a
    book.ema_counts += (1.0 - a) * batch_counts
    book.ema_sums *= a
    book.ema_sums += (1.0 - a) * batch_sums
    live = book.ema_counts >= reseed_threshold
    if book.zero_pinned:
        live[:, 0] = False  # the zero codeword never moves
    book.codewords[live] = book.ema_sums[live] / book.ema_counts[live][:, None]


def _reseed_dead(book: Codebook, pools: list[np.ndarray], reseed_threshold: float,
                 rng: np.random.Generator) -> int:
    """Replace collapsed codewords with residuals drawn from the last batch."""
    reseeded = 0
    first = 1 if book.zero_pinned else 0
    for layer in range(book.n_layers):
        pool = pools[layer]
        if pool is None or pool.shape[0] == 0:
            continue
        dead = np.nonzero(book.ema_counts[layer, first:] < reseed_threshold)[0] + first
        for k in dead:
            pick = pool[rng.integers(pool.shape[0])]
            book.codewords[layer, k] = pick
            book.ema_sums[layer, k] = pick
            book.ema_counts[layer, k] = 1.0
            reseeded += 1
    return reseeded


def train_epoch(
    books: dict[str, Codebook],
    controls: np.ndarray,
    chunk_values: list[np.ndarray],
    roles,
    spline_cfg: bspline.SplineConfig,
    seed: int,
    drop_p: float = 0.1,
    reseed_threshold: float = 1e-2,
    batch_size: int = 256,
    gamma: float = 1.0,
    lambda_commit: float = 1.0,
    lambda_drop: float = 0.2,
) -> LossReport:
    """One EMA training pass over a set of fitted chunks.

    Per mini-batch and per sample a Bernoulli(1 - drop_p) layer mask is drawn;
    dropped layers select nothing, update nothing, and pass the residual
    through. Codeword statistics are accumulated in sample order and applied
    as one EMA step per mini-batch; codewords whose effective count fell
    below the reseed threshold are reseeded from that batch's residuals.
    Deterministic for fixed (books, sample order, seed).
    """
    controls = np.asarray(controls, dtype=np.float64)
    if controls.ndim != 3:
        raise ValueError("controls must have shape (B, N, d)")
    n_samples = controls.shape[0]
    if n_samples == 0:
        raise ValueError("empty training batch")
    if len(chunk_values) != n_samples:
        raise ValueError("chunk_values length must match controls")
    if not 0.0 <= drop_p < 1.0:
        raise ValueError(f"drop_p must be in [0, 1), got {drop_p}")

    n_layers = next(iter(books.values())).n_layers
    rng = np.random.default_rng(seed)
    group_cols = {
        g: [i for i, role in enumerate(roles) if role == g]
        for g in GROUP_ORDER
        if any(role == g for role in roles)
    }

    sum_control = 0.0
    sum_traj = 0.0
    sum_drop = 0.0

    for lo in range(0, n_samples, batch_size):
        batch = controls[lo : lo + batch_size]
        b = batch.shape[0]
        masks = rng.random((b, n_layers)) >= drop_p
        quantized = np.empty_like(batch)

        for group, cols in group_cols.items():
            book = books[group]
            vectors = batch[:, :, cols].transpose(0, 2, 1).reshape(-1, batch.shape[1])
            vmask = np.repeat(masks, len(cols), axis=0)

            # Clean pass (all layers): quantization target for the losses.
            residual = vectors.copy()
            for layer in range(n_layers):
                idx = _assign(book.codewords[layer], residual)
                residual -= book.codewords[layer][idx]
            sum_control += float(np.einsum("ij,ij->", residual, residual))
            qvecs = vectors - residual
            quantized[:, :, cols] = qvecs.reshape(b, len(cols), -1).transpose(0, 2, 1)

            # Masked pass: EMA statistics and the dropout loss.
            batch_counts = np.zeros((n_layers, book.size))
            batch_sums = np.zeros((n_layers, book.size, book.dim))
            pools: list[np.ndarray | None] = [None] * n_layers
            residual = vectors.copy()
            for layer in range(n_layers):
                active = np.nonzero(vmask[:, layer])[0]
                if active.size == 0:
                    continue
                seen = residual[active]
                pools[layer] = seen
                idx = _assign(book.codewords[layer], seen)
                if book.zero_pinned:
                    upd = idx > 0
                    np.add.at(batch_counts[layer], idx[upd], 1.0)
                    np.add.at(batch_sums[layer], idx[upd], seen[upd])
                else:
                    np.add.at(batch_counts[layer], idx, 1.0)
                    np.add.at(batch_sums[layer], idx, seen)
                residual[active] -= book.codewords[layer][idx]
            sum_drop += float(np.einsum("ij,ij->", residual, residual))

            _ema_apply(book, batch_counts, batch_sums, reseed_threshold)
            _reseed_dead(book, pools, reseed_threshold, rng)

        for j in range(b):
            values = chunk_values[lo + j]
            recon = bspline.reconstruct_chunk(spline_cfg, quantized[j], roles, values.shape[0])
            diff = recon - values
            sum_traj += float(np.einsum("ij,ij->", diff, diff))

    recon_control = sum_control / n_samples
    recon_traj = gamma * sum_traj / n_samples
    drop = sum_drop / n_samples
    commit = 2.0 * recon_control  # both stop-gradient terms have this value
    recon = recon_control + recon_traj
    return LossReport(
        recon_control=recon_control,
        recon_traj=recon_traj,
        recon=recon,
        commit=commit,
        drop=drop,
        total=recon + lambda_commit * commit + lambda_drop * drop,
        n_samples=n_samples,
    )


@dataclass(frozen=True)
class LayerUsage:
    """Index-frequency summary for one (group, layer) codebook table."""

    group: str
    layer: int
    histogram: np.ndarray
    perplexity: float
    dead: int


def utilization_stats(
    books: dict[str, Codebook], encodings, roles
) -> list[LayerUsage]:
    """Codeword usage over a set of chunk encodings, per group and layer.

    ``encodings`` is a sequence of (d, L) index arrays as produced by
    :func:`encode_chunk`. Perplexity is exp of the index entropy, so uniform
    usage over K codewords scores K and total collapse scores 1.
    """
    encodings = list(encodings)
    if not encodings:
        raise ValueError("no encodings given")
    stacked = np.stack([np.asarray(enc) for enc in encodings])  # (B, d, L)
    order = group_channel_order(roles)
    ordered_roles = [roles[ch] for ch in order]
    out: list[LayerUsage] = []
    for group in GROUP_ORDER:
        book = books.get(group)
        if book is None:
            continue
        rows = [r for r, role in enumerate(ordered_roles) if role == group]
        for layer in range(book.n_layers):
            idx = stacked[:, rows, layer].ravel()
            idx = idx[idx >= 0]
            hist = np.bincount(idx, minlength=book.size).astype(np.int64)
            total = hist.sum()
            if total > 0:
                probs = hist[hist > 0] / total
                perplexity = float(np.exp(-np.sum(probs * np.log(probs))))
            else:
                perplexity = 0.0
            out.append(
                LayerUsage(
                    group=group,
                    layer=layer,
                    histogram=hist,
                    perplexity=perplexity,
                    dead=int(np.count_nonzero(hist == 0)),
                )
            )
    return out
