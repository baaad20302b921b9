"""Clamped uniform B-spline bases and ridge-regression chunk fitting.

A chunk of ``T_e`` samples per channel is mapped onto the unit parameter grid
``u_tau = (tau - 1) / (T_e - 1)`` and approximated by ``N`` control points of a
clamped uniform B-spline. Fitting solves the regularized normal equations

    (Phi^T Phi + lambda I) c = Phi^T a

per channel via a Cholesky factorization, where ``Phi[tau, i] = N_{i,p}(u_tau)``
is the basis design matrix. Design matrices and factorizations are memoized
keyed by (degree, n_control, n_samples[, lambda]) since the same shapes recur
across every chunk of a corpus.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .core import ROLES


@dataclass(frozen=True)
class SplineConfig:
    """Spline degrees per part role, control-point count, and ridge weight."""

    degree_pos_rot: int = 3
    degree_grip: int = 0
    n_control: int = 8
    ridge_lambda: float = 1e-3

    def __post_init__(self) -> None:
        if self.degree_pos_rot < 0 or self.degree_grip < 0:
            raise ValueError("spline degrees must be >= 0")
        min_control = max(self.degree_pos_rot, self.degree_grip) + 1
        if self.n_control < min_control:
            raise ValueError(
                f"n_control must be >= degree + 1 for every role "
                f"(need >= {min_control}, got {self.n_control})"
            )
        if self.ridge_lambda < 0:
            raise ValueError("ridge_lambda must be >= 0")

    def degree_for(self, role: str) -> int:
        if role not in ROLES:
            raise ValueError(f"unknown part role {role!r}")
        return self.degree_grip if role == "gripper" else self.degree_pos_rot


@dataclass(frozen=True)
class DesignMatrix:
    """Basis values on a chunk's time grid plus the generating knots."""

    phi: np.ndarray  # (T_e, N)
    grid: np.ndarray  # (T_e,)
    knots: np.ndarray  # (N + degree + 1,)
    degree: int

    @property
    def n_samples(self) -> int:
        return self.phi.shape[0]

    @property
    def n_control(self) -> int:
        return self.phi.shape[1]


def knot_vector(degree: int, n_control: int) -> np.ndarray:
    """Clamped uniform knots on [0, 1] with endpoints repeated degree+1 times."""
    if degree < 0:
        raise ValueError("degree must be >= 0")
    if n_control < degree + 1:
        raise ValueError(
            f"n_control must be >= degree + 1, got n_control={n_control}, degree={degree}"
        )
    n_spans = n_control - degree  # number of nonempty intervals
    interior = np.arange(1, n_spans) / n_spans
    return np.concatenate(
        [np.zeros(degree + 1), interior, np.ones(degree + 1)]
    )


def basis_matrix(knots: np.ndarray, degree: int, u: np.ndarray) -> np.ndarray:
    """Evaluate all basis functions at each u via the Cox-de Boor recursion.

    Degree-0 bases are half-open-interval indicators except that the final
    nonempty span is treated as closed, so the last basis function is 1 at
    u = 1 instead of everything vanishing there. The 0/0 := 0 convention is
    applied by skipping zero-width denominators.

    Returns an array of shape (len(u), N) with N = len(knots) - degree - 1.
    """
    knots = np.asarray(knots, dtype=np.float64)
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    if np.any((u < 0.0) | (u > 1.0)):
        raise ValueError("parameter values must lie in [0, 1]")

    left, right = knots[:-1], knots[1:]
    b = ((u[:, None] >= left) & (u[:, None] < right)).astype(np.float64)
    at_end = u == knots[-1]
    if at_end.any():
        nonempty = np.nonzero(right > left)[0]
        b[at_end, nonempty[-1]] = 1.0

    for p in range(1, degree + 1):
        n_funcs = len(knots) - p - 1
        nxt = np.zeros((len(u), n_funcs))
        for i in range(n_funcs):
            den1 = knots[i + p] - knots[i]
            den2 = knots[i + p + 1] - knots[i + 1]
            if den1 > 0.0:
                nxt[:, i] += (u - knots[i]) / den1 * b[:, i]
            if den2 > 0.0:
                nxt[:, i] += (knots[i + p + 1] - u) / den2 * b[:, i + 1]
        b = nxt
    return b


def basis_eval(knots: np.ndarray, degree: int, u: float) -> np.ndarray:
    """Basis values at a single parameter; nonnegative and summing to 1."""
    return basis_matrix(knots, degree, np.array([u]))[0]


_PHI_CACHE: dict[tuple[int, int, int], DesignMatrix] = {}
_FACTOR_CACHE: dict[tuple[int, int, int, float], tuple] = {}
_PINV_CACHE: dict[tuple[int, int, int], np.ndarray] = {}
_CACHE_LOCK = threading.Lock()


def design_matrix(degree: int, n_control: int, n_samples: int) -> DesignMatrix:
    """Basis matrix on the uniform chunk grid, memoized by shape.

    The cache behaves as a thread-safe memo table: the same key always yields
    the identical matrix object.
    """
    if n_samples < 2:
        raise ValueError(f"need at least 2 samples, got {n_samples}")
    key = (degree, n_control, n_samples)
    with _CACHE_LOCK:
        cached = _PHI_CACHE.get(key)
        if cached is not None:
            return cached
    knots = knot_vector(degree, n_control)
    grid = np.linspace(0.0, 1.0, n_samples)
    phi = basis_matrix(knots, degree, grid)
    for arr in (phi, grid, knots):
        arr.setflags(write=False)
    built = DesignMatrix(phi=phi, grid=grid, knots=knots, degree=degree)
    with _CACHE_LOCK:
        return _PHI_CACHE.setdefault(key, built)


def clear_caches() -> None:
    with _CACHE_LOCK:
        _PHI_CACHE.clear()
        _FACTOR_CACHE.clear()
        _PINV_CACHE.clear()


def _cho_factor(phi: np.ndarray, lam: float):
    gram = phi.T @ phi
    gram[np.diag_indices_from(gram)] += lam
    try:
        return scipy.linalg.cho_factor(gram, lower=True)
    except scipy.linalg.LinAlgError as err:
        raise ValueError(
            f"normal equations are singular (lambda={lam}); "
            "use a positive ridge weight"
        ) from err


def ridge_fit(phi: np.ndarray | DesignMatrix, samples: np.ndarray, lam: float) -> np.ndarray:
    """Solve the regularized least-squares fit of samples to control points.

    ``samples`` may be a single length-T_e channel or a (T_e, d) matrix; every
    column is fitted independently against the shared basis.
    """
    if isinstance(phi, DesignMatrix):
        phi = phi.phi
    phi = np.asarray(phi, dtype=np.float64)
    samples = np.asarray(samples, dtype=np.float64)
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    if samples.shape[0] != phi.shape[0]:
        raise ValueError(
            f"sample length {samples.shape[0]} does not match design rows {phi.shape[0]}"
        )
    if not np.isfinite(samples).all():
        raise ValueError("samples contain non-finite values")
    factor = _cho_factor(phi, lam)
    return scipy.linalg.cho_solve(factor, phi.T @ samples)


def reconstruct(phi: np.ndarray | DesignMatrix, control: np.ndarray) -> np.ndarray:
    """Evaluate the fitted curve(s) on the design grid: ``Phi @ c``."""
    if isinstance(phi, DesignMatrix):
        phi = phi.phi
    phi = np.asarray(phi, dtype=np.float64)
    control = np.asarray(control, dtype=np.float64)
    if control.shape[0] != phi.shape[1]:
        raise ValueError(
            f"control length {control.shape[0]} does not match basis count {phi.shape[1]}"
        )
    return phi @ control


def _cached_factor(degree: int, n_control: int, n_samples: int, lam: float):
    key = (degree, n_control, n_samples, lam)
    with _CACHE_LOCK:
        cached = _FACTOR_CACHE.get(key)
        if cached is not None:
            return cached
    dm = design_matrix(degree, n_control, n_samples)
    factor = _cho_factor(dm.phi, lam)
    with _CACHE_LOCK:
        return _FACTOR_CACHE.setdefault(key, factor)


def _cached_pinv(degree: int, n_control: int, n_samples: int) -> np.ndarray:
    key = (degree, n_control, n_samples)
    with _CACHE_LOCK:
        cached = _PINV_CACHE.get(key)
        if cached is not None:
            return cached
    built = np.linalg.pinv(design_matrix(degree, n_control, n_samples).phi)
    built.setflags(write=False)
    with _CACHE_LOCK:
        return _PINV_CACHE.setdefault(key, built)


def fit_chunk(cfg: SplineConfig, values: np.ndarray, roles) -> np.ndarray:
    """Fit every channel of a (T_e, d) chunk; returns control points (N, d).

    Channels sharing a spline degree share the design matrix and factorization,
    so the solve is batched per degree group. With ``ridge_lambda == 0`` the
    fit is the exact (pseudo-inverse) least-squares solution; since fit and
    reconstruct are then mutual inverses on the fitted subspace, re-fitting a
    reconstructed chunk returns the identical control points, which keeps
    tokenize / detokenize round trips stable. Chunks shorter than the control
    count get the minimum-norm solution.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError("chunk values must be 2-D (T_e x d)")
    if values.shape[1] != len(roles):
        raise ValueError(f"{values.shape[1]} channels but {len(roles)} roles")
    if not np.isfinite(values).all():
        raise ValueError("chunk contains non-finite values")
    n_samples = values.shape[0]
    control = np.empty((cfg.n_control, values.shape[1]))
    degrees = np.array([cfg.degree_for(r) for r in roles])
    for degree in np.unique(degrees):
        cols = np.nonzero(degrees == degree)[0]
        if cfg.ridge_lambda == 0.0:
            pinv = _cached_pinv(int(degree), cfg.n_control, n_samples)
            control[:, cols] = pinv @ values[:, cols]
        else:
            dm = design_matrix(int(degree), cfg.n_control, n_samples)
            factor = _cached_factor(int(degree), cfg.n_control, n_samples, cfg.ridge_lambda)
            control[:, cols] = scipy.linalg.cho_solve(factor, dm.phi.T @ values[:, cols])
    return control


def reconstruct_chunk(cfg: SplineConfig, control: np.ndarray, roles, n_samples: int) -> np.ndarray:
    """Evaluate per-channel control points back onto an n_samples grid."""
    control = np.asarray(control, dtype=np.float64)
    if control.shape != (cfg.n_control, len(roles)):
        raise ValueError(
            f"control shape {control.shape} does not match "
            f"({cfg.n_control}, {len(roles)})"
        )
    out = np.empty((n_samples, len(roles)))
    degrees = np.array([cfg.degree_for(r) for r in roles])
    for degree in np.unique(degrees):
        cols = np.nonzero(degrees == degree)[0]
        dm = design_matrix(int(degree), cfg.n_control, n_samples)
        out[:, cols] = dm.phi @ control[:, cols]
    return out
