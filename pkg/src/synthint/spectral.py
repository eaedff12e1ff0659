"""Truncated SVD, rank selection, and spectral diagnostics.

Matrices at the scales this package targets are at most a few thousand per
side, so everything uses a deterministic full (thin) SVD; no randomized
sketching.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Singular values below RANK_RTOL * s_1 count as zero when ranks are needed.
RANK_RTOL = 1e-12


class SpectralError(ValueError):
    """Invalid input to a spectral routine."""


@dataclass(frozen=True)
class SpectralDecomposition:
    """Thin SVD of a T0 x N_d matrix.

    ``singular_values`` are descending; ``left_vectors`` is T0 x M and
    ``right_vectors`` is N_d x M with orthonormal columns, M = min(T0, N_d).
    """

    singular_values: np.ndarray
    left_vectors: np.ndarray
    right_vectors: np.ndarray

    @property
    def m(self) -> int:
        return len(self.singular_values)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.left_vectors.shape[0], self.right_vectors.shape[0])

    def reconstruct(self) -> np.ndarray:
        return (self.left_vectors * self.singular_values) @ self.right_vectors.T

    def truncate(self, k: int) -> np.ndarray:
        """Best rank-k approximation of the decomposed matrix."""
        if not 1 <= k <= self.m:
            raise SpectralError(f"k={k} not in [1, {self.m}]")
        return (
            self.left_vectors[:, :k] * self.singular_values[:k]
        ) @ self.right_vectors[:, :k].T

    def energy_fractions(self) -> np.ndarray:
        """Cumulative squared-singular-value fractions per prefix length."""
        sq = self.singular_values**2
        total = sq.sum()
        if total == 0.0:
            return np.ones_like(sq)
        return np.cumsum(sq) / total

    def numerical_rank(self, rtol: float = RANK_RTOL) -> int:
        """Count of singular values above rtol * s_1."""
        s = self.singular_values
        if s.size == 0 or s[0] == 0.0:
            return 0
        return int((s > rtol * s[0]).sum())


@dataclass(frozen=True)
class RankSelection:
    """Retained rank, the method that chose it, and energy diagnostics."""

    k: int
    method: str
    energy: np.ndarray = field(repr=False, default=None)


@dataclass(frozen=True)
class RankPolicy:
    """How downstream modules pick the retained rank of a decomposition.

    method is one of {"elbow", "energy", "threshold", "fixed"}; ``energy``
    uses ``energy_threshold``, ``threshold`` uses ``cutoff``, ``fixed``
    uses ``k``.
    """

    method: str = "energy"
    energy_threshold: float = 0.99
    cutoff: float | None = None
    k: int | None = None

    def choose(self, dec: SpectralDecomposition) -> RankSelection:
        return select_rank(
            dec,
            method=self.method,
            energy_threshold=self.energy_threshold,
            cutoff=self.cutoff,
            k=self.k,
        )

    def describe(self) -> dict:
        out = {"method": self.method}
        if self.method == "energy":
            out["energy_threshold"] = self.energy_threshold
        elif self.method == "threshold":
            out["cutoff"] = self.cutoff
        elif self.method == "fixed":
            out["k"] = self.k
        return out


def decompose(matrix: np.ndarray) -> SpectralDecomposition:
    """Thin SVD with descending singular values."""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2:
        raise SpectralError("input must be a 2-d array")
    if not np.isfinite(matrix).all():
        raise SpectralError("input has non-finite entries")
    u, s, vt = np.linalg.svd(matrix, full_matrices=False)
    return SpectralDecomposition(
        singular_values=s, left_vectors=u, right_vectors=vt.T
    )


def _elbow_rank(s: np.ndarray) -> int:
    # Largest drop-off ratio s_l / s_{l+1}; smallest l on ties. A zero
    # successor is an infinite ratio, so the first positive value followed
    # by zero wins outright.
    m = len(s)
    if m == 1 or s[0] <= 0.0:
        return 1
    best_k, best_ratio = 1, -np.inf
    for l in range(m - 1):
        if s[l] <= 0.0:
            break
        if s[l + 1] <= 0.0:
            return l + 1
        ratio = s[l] / s[l + 1]
        if ratio > best_ratio:
            best_k, best_ratio = l + 1, ratio
    return best_k


def select_rank(
    dec: SpectralDecomposition,
    method: str = "energy",
    energy_threshold: float = 0.99,
    cutoff: float | None = None,
    k: int | None = None,
) -> RankSelection:
    """Pick the retained rank by elbow, energy, threshold, or fixed rule."""
    s = dec.singular_values
    if s.size == 0:
        raise SpectralError("empty spectrum")
    # values below the relative tolerance count as exact zeros
    s = np.where(s > RANK_RTOL * s[0], s, 0.0)
    energy = dec.energy_fractions()
    if method == "elbow":
        chosen = _elbow_rank(s)
    elif method == "energy":
        if not 0.0 < energy_threshold <= 1.0:
            raise SpectralError("energy_threshold must be in (0, 1]")
        chosen = int(np.argmax(energy >= energy_threshold)) + 1
    elif method == "threshold":
        if cutoff is None:
            raise SpectralError("threshold method needs a cutoff")
        chosen = max(int((s > cutoff).sum()), 1)
    elif method == "fixed":
        if k is None:
            raise SpectralError("fixed method needs k")
        if not 1 <= k <= dec.m:
            raise SpectralError(f"k={k} not in [1, {dec.m}]")
        chosen = k
    else:
        raise SpectralError(f"unknown rank selection method {method!r}")
    return RankSelection(k=chosen, method=method, energy=energy)


def singular_value_band(
    dec: SpectralDecomposition, sigma: float, t: float, c: float = 1.0
) -> float:
    """Half-width C*sigma*(sqrt(T0) + sqrt(N_d) + t) of the concentration
    band around the population singular values.

    The width is common to every index. Each observed singular value lies
    within this band of its population counterpart with probability at
    least 1 - 2*exp(-t^2) under independent sub-Gaussian noise of scale
    sigma; C=1 covers the Gaussian case used by the diagnostics here.
    """
    if sigma < 0:
        raise SpectralError("sigma must be non-negative")
    t0, n_d = dec.shape
    return c * sigma * (np.sqrt(t0) + np.sqrt(n_d) + t)
