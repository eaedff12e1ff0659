"""Donor-weight learning by principal component regression.

Regressing the target's pre-intervention series through the top-k singular
subspace of the noisy donor block implicitly de-noises a low-rank signal
and returns the minimum-norm solution on that subspace. Weights are
unrestricted reals: no intercept, no convexity or normalization constraint.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .panel import DonorView
from .spectral import RANK_RTOL, SpectralDecomposition, decompose


class FitError(ValueError):
    """Weight fit could not be performed."""


@dataclass(frozen=True)
class WeightModel:
    """Learned donor weights for one (target unit, intervention) pair."""

    weights: np.ndarray
    k: int
    target_unit: int | None = None
    intervention: int | None = None

    @property
    def l1_norm(self) -> float:
        return float(np.abs(self.weights).sum())

    @property
    def l2_norm(self) -> float:
        return float(np.linalg.norm(self.weights))


def _donor_pre(donors) -> np.ndarray:
    if isinstance(donors, DonorView):
        return donors.pre
    return np.asarray(donors, dtype=float)


def fit_from_decomposition(
    dec: SpectralDecomposition,
    target_pre: np.ndarray,
    k: int,
    target_unit: int | None = None,
    intervention: int | None = None,
) -> WeightModel:
    """PCR weights from a precomputed donor-pre decomposition.

    weights = sum_{l<=k} (1/s_l) v_l <u_l, target_pre>, skipping zero
    singular values (the pseudo-inverse convention, which keeps the fit
    minimum-norm on the retained subspace).
    """
    target_pre = np.asarray(target_pre, dtype=float)
    if not np.isfinite(target_pre).all():
        raise FitError("target series has non-finite entries")
    if target_pre.shape != (dec.left_vectors.shape[0],):
        raise FitError(
            f"target series length {target_pre.shape} does not match donor "
            f"pre-period rows {dec.left_vectors.shape[0]}"
        )
    if not 1 <= k <= dec.m:
        raise FitError(f"k={k} not in [1, {dec.m}]")
    s = dec.singular_values[:k]
    s1 = dec.singular_values[0]
    keep = s > RANK_RTOL * s1 if s1 > 0 else np.zeros(k, dtype=bool)
    if not keep.any():
        raise FitError("all retained singular values are zero")
    u = dec.left_vectors[:, :k][:, keep]
    v = dec.right_vectors[:, :k][:, keep]
    coeffs = (u.T @ target_pre) / s[keep]
    return WeightModel(
        weights=v @ coeffs, k=k, target_unit=target_unit, intervention=intervention
    )


def fit_weights(
    target_pre: np.ndarray,
    donors,
    k: int,
    target_unit: int | None = None,
    intervention: int | None = None,
) -> WeightModel:
    """Learn donor weights from the pre-intervention block.

    ``donors`` is a :class:`DonorView` or a raw T0 x N_d matrix.
    """
    pre = _donor_pre(donors)
    return fit_from_decomposition(
        decompose(pre), target_pre, k, target_unit=target_unit, intervention=intervention
    )


def projected_truth(expected_donor_pre: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Projection of weights ``w`` onto the rowspace of the expected donor
    pre-intervention matrix.

    This is the unique minimum-l2-norm weight vector that reproduces the
    same expected pre-period fit, and the quantity the PCR estimate
    converges to. Rank of the rowspace follows the package zero tolerance.
    """
    expected_donor_pre = np.asarray(expected_donor_pre, dtype=float)
    w = np.asarray(w, dtype=float)
    dec = decompose(expected_donor_pre)
    r = dec.numerical_rank()
    if r == 0:
        return np.zeros_like(w)
    v = dec.right_vectors[:, :r]
    return v @ (v.T @ w)


def fit_with_covariates(
    target_pre: np.ndarray,
    donors,
    target_covariates: np.ndarray,
    donor_covariates: np.ndarray,
    k: int,
    target_unit: int | None = None,
    intervention: int | None = None,
) -> WeightModel:
    """PCR fit on pre-intervention outcomes with covariate rows appended.

    Unit covariates sharing the outcomes' latent unit factors act as extra
    pre-period measurements: the fit is identical to :func:`fit_weights`
    on the (T0 + K) x N_d concatenation.
    """
    pre = _donor_pre(donors)
    target_covariates = np.asarray(target_covariates, dtype=float)
    donor_covariates = np.asarray(donor_covariates, dtype=float)
    if donor_covariates.size == 0:
        donor_covariates = donor_covariates.reshape(0, pre.shape[1])
    if donor_covariates.ndim != 2 or donor_covariates.shape[1] != pre.shape[1]:
        raise FitError(
            f"donor covariates must be K x {pre.shape[1]}, got {donor_covariates.shape}"
        )
    if target_covariates.shape != (donor_covariates.shape[0],):
        raise FitError("target covariate length must match donor covariate rows")
    stacked = np.vstack([pre, donor_covariates])
    stacked_target = np.concatenate([np.asarray(target_pre, dtype=float), target_covariates])
    return fit_from_decomposition(
        decompose(stacked),
        stacked_target,
        k,
        target_unit=target_unit,
        intervention=intervention,
    )


def weights_table(model: WeightModel, donor_labels=None) -> pd.DataFrame:
    """Audit-friendly (donor, weight) table for one fitted model."""
    if donor_labels is None:
        donor_labels = [f"unit_{j}" for j in range(len(model.weights))]
    return pd.DataFrame({"donor": list(donor_labels), "weight": model.weights})
