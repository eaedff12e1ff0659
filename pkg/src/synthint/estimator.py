"""Point estimates, noise variance, and confidence intervals.

The point estimate for a (target, intervention) pair is the post-period
average of the donor outcomes combined with the pre-period learned weights;
its asymptotic distribution is normal with standard deviation
sigma * ||w||_2 / sqrt(T1), which the interval construction uses directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.special import ndtri

from .panel import DonorView, ObservedPanel, donor_view
from .pcr import WeightModel, fit_from_decomposition
from .spectral import RankPolicy, decompose


class EstimationError(ValueError):
    """Invalid estimator input."""


@dataclass(frozen=True)
class SIEstimate:
    """Point estimate with variance estimate and confidence interval."""

    theta_hat: float
    sigma2_hat: float
    ci_low: float
    ci_high: float
    alpha_ci: float
    weight_l2: float
    t1: int


def estimate_theta(model: WeightModel, donors: DonorView) -> float:
    """Post-period average of weighted donor outcomes."""
    if donors.post.shape[0] < 1:
        raise EstimationError("empty post period")
    if donors.post.shape[1] != len(model.weights):
        raise EstimationError("weight length does not match donor count")
    return float(np.mean(donors.post @ model.weights))


def estimate_noise_variance(
    model: WeightModel, target_pre: np.ndarray, donors: DonorView
) -> float:
    """Mean squared pre-period residual of the weighted donor fit."""
    target_pre = np.asarray(target_pre, dtype=float)
    residual = target_pre - donors.pre @ model.weights
    return float(residual @ residual / len(target_pre))


def confidence_interval(
    theta_hat: float,
    sigma2_hat: float,
    weight_l2: float,
    t1: int,
    alpha_ci: float = 0.05,
) -> tuple[float, float]:
    """Symmetric normal interval theta_hat +/- z_{1-a/2} * sigma * ||w||_2 / sqrt(T1)."""
    if t1 < 1:
        raise EstimationError("t1 must be >= 1")
    if sigma2_hat < 0:
        raise EstimationError("sigma2_hat must be non-negative")
    if not 0.0 < alpha_ci < 1.0:
        raise EstimationError("alpha_ci must be in (0, 1)")
    z = float(ndtri(1.0 - alpha_ci / 2.0))
    half = z * np.sqrt(sigma2_hat) * weight_l2 / np.sqrt(t1)
    return (theta_hat - half, theta_hat + half)


def estimate_pair(
    target_pre: np.ndarray,
    donors: DonorView,
    k: int,
    alpha_ci: float = 0.05,
) -> tuple[SIEstimate, WeightModel]:
    """Fit weights on the donor pre block and assemble the full estimate."""
    model = fit_from_decomposition(decompose(donors.pre), target_pre, k)
    return _assemble(model, target_pre, donors, alpha_ci), model


def _assemble(
    model: WeightModel,
    target_pre: np.ndarray,
    donors: DonorView,
    alpha_ci: float,
) -> SIEstimate:
    theta_hat = estimate_theta(model, donors)
    sigma2_hat = estimate_noise_variance(model, target_pre, donors)
    low, high = confidence_interval(
        theta_hat, sigma2_hat, model.l2_norm, donors.post.shape[0], alpha_ci
    )
    return SIEstimate(
        theta_hat=theta_hat,
        sigma2_hat=sigma2_hat,
        ci_low=low,
        ci_high=high,
        alpha_ci=alpha_ci,
        weight_l2=model.l2_norm,
        t1=donors.post.shape[0],
    )


def estimate_all(
    panel: ObservedPanel,
    rank_policy: RankPolicy | None = None,
    alpha_ci: float = 0.05,
    run_subspace_test: bool = False,
    test_alpha: float = 0.05,
    c_constant: float = 4.0,
    return_weights: bool = False,
):
    """Counterfactual estimates for every (unit, intervention) pair.

    One decomposition is computed per donor group and shared across all
    target units. Rows for observed pairs (n, D(n)) also carry the raw
    post-period mean of the unit's own outcomes. When requested, the
    subspace-inclusion test annotates each group's rows with its decision
    rather than suppressing estimates. With ``return_weights`` the fitted
    donor weights come back as a second long-format table for audit.
    """
    rank_policy = rank_policy or RankPolicy()
    sizes = panel.group_sizes()
    empty = [d for d, size in enumerate(sizes) if size == 0]
    if empty:
        raise EstimationError(f"empty donor groups: {empty}")

    rows = []
    weight_rows = []
    for d in range(panel.num_interventions):
        donors = donor_view(panel, d)
        dec = decompose(donors.pre)
        k = rank_policy.choose(dec).k
        test_result = None
        if run_subspace_test:
            from .subspace import run_test

            sigma_d = _group_sigma_hat(panel, d, donors, dec, k)
            test_result = run_test(
                donors,
                alpha=test_alpha,
                sigma=sigma_d,
                c_constant=c_constant,
                rank_policy=rank_policy,
            )
        for n in range(panel.num_units):
            target_pre = panel.outcomes[: panel.t0, n]
            model = fit_from_decomposition(dec, target_pre, k)
            est = _assemble(model, target_pre, donors, alpha_ci)
            observed = panel.assignments[n] == d
            row = {
                "unit": n,
                "intervention": d,
                "theta_hat": est.theta_hat,
                "sigma2_hat": est.sigma2_hat,
                "ci_low": est.ci_low,
                "ci_high": est.ci_high,
                "k": k,
                "observed": bool(observed),
                "observed_post_mean": (
                    float(panel.outcomes[panel.t0 :, n].mean()) if observed else np.nan
                ),
                "test_passed": (not test_result.reject) if test_result else None,
                "tau_hat": test_result.tau_hat if test_result else None,
                "tau_alpha": test_result.tau_alpha if test_result else None,
            }
            rows.append(row)
            if return_weights:
                for j, donor in enumerate(donors.donor_indices):
                    weight_rows.append(
                        {"unit": n, "intervention": d, "donor": int(donor),
                         "weight": float(model.weights[j])}
                    )
    table = pd.DataFrame(rows)
    if return_weights:
        return table, pd.DataFrame(weight_rows)
    return table


def _group_sigma_hat(panel, d, donors, dec, k) -> float:
    """Median pre-period residual scale over units outside the donor group.

    When every unit is a donor (single-group panels), fall back to
    leave-one-out residuals within the group.
    """
    outside = [n for n in range(panel.num_units) if panel.assignments[n] != d]
    variances = []
    if outside:
        for n in outside:
            target_pre = panel.outcomes[: panel.t0, n]
            model = fit_from_decomposition(dec, target_pre, k)
            variances.append(estimate_noise_variance(model, target_pre, donors))
    else:
        for j in range(donors.num_donors):
            rest = np.delete(np.arange(donors.num_donors), j)
            sub = DonorView(
                pre=donors.pre[:, rest],
                post=donors.post[:, rest],
                donor_indices=donors.donor_indices[rest],
            )
            sub_dec = decompose(sub.pre)
            sub_k = min(k, sub_dec.m)
            model = fit_from_decomposition(sub_dec, donors.pre[:, j], sub_k)
            variances.append(
                estimate_noise_variance(model, donors.pre[:, j], sub)
            )
    return float(np.sqrt(np.median(variances)))
