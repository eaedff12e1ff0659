"""Monte Carlo experiment suite and comparison metrics.

Each runner fixes the scenario expectations once, re-samples the
idiosyncratic shocks per replicate, and collects per-replicate estimates
next to summary statistics that can be recomputed from the stored values.
Reports serialize to canonical JSON (sorted keys, no volatile fields) so a
repeated run with the same seed produces byte-identical output; wall-clock
time is kept off that file.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.stats import kstest

from .estimator import confidence_interval, estimate_noise_variance, estimate_theta
from .generators import (
    RNG_IDENTITY,
    GroundTruth,
    ScenarioSpec,
    bias_observations,
    bias_truth,
    consistency_observations,
    consistency_truth,
    gen_ab_panel,
    named_stream,
    normality_observations,
    normality_truth,
    rho_rows,
)
from .panel import DonorView
from .pcr import fit_from_decomposition
from .spectral import RankPolicy, decompose
from .subspace import run_test


@dataclass
class ExperimentReport:
    """Replicate-level results plus recomputable summaries for one study."""

    scenario: str
    replicates: int
    seed: int
    config: dict
    data: dict
    summary: dict
    runtime_seconds: float | None = field(default=None, compare=False)

    def to_dict(self) -> dict:
        # runtime is intentionally left out: report files must be
        # byte-identical across reruns with the same seed.
        return {
            "scenario": self.scenario,
            "replicates": self.replicates,
            "seed": self.seed,
            "config": self.config,
            "data": self.data,
            "summary": self.summary,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def save(self, out_dir) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / "report.json"
        path.write_text(self.to_json() + "\n")
        if self.runtime_seconds is not None:
            (out_dir / "run_info.json").write_text(
                json.dumps({"runtime_seconds": self.runtime_seconds}) + "\n"
            )
        return path


def _map_replicates(fn, n: int, jobs: int = 1) -> list:
    """Run fn(replicate) for each index, preserving index order."""
    if jobs <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, range(n)))


def _loglog_slope(x: np.ndarray, y: np.ndarray) -> float:
    return float(np.polyfit(np.log(np.asarray(x)), np.log(np.asarray(y)), 1)[0])


def _median_of_3(values: np.ndarray) -> np.ndarray:
    out = np.empty_like(values)
    for i in range(len(values)):
        lo, hi = max(0, i - 1), min(len(values), i + 2)
        out[i] = np.median(values[lo:hi])
    return out


def run_consistency(
    spec: ScenarioSpec, replicates: int = 100, jobs: int = 1
) -> ExperimentReport:
    """Estimation error versus post-period length, with and without
    subspace inclusion.

    Weights are fit once per replicate at k = r_pre (the known pre rank)
    and applied to prefix slices of the same noisy post blocks across the
    fraction grid, so curves share noise within a replicate.
    """
    start = time.time()
    truth = consistency_truth(spec)
    grid = list(spec.rho_grid)
    rows = {rho: rho_rows(rho, spec.t1) for rho in grid}

    def one(i: int):
        obs = consistency_observations(spec, truth, i)
        dec = decompose(obs.donor_pre)
        model = fit_from_decomposition(dec, obs.target_pre, spec.r_pre)
        inc, vio = [], []
        for rho in grid:
            m = rows[rho]
            theta_hat = float(np.mean(obs.donor_post[:m] @ model.weights))
            vartheta_hat = float(
                np.mean(obs.donor_post_violating[:m] @ model.weights)
            )
            inc.append(abs(theta_hat - truth.theta_by_rho[rho]))
            vio.append(abs(vartheta_hat - truth.vartheta_by_rho[rho]))
        return inc, vio

    results = _map_replicates(one, replicates, jobs)
    err_inc = np.array([r[0] for r in results])  # replicates x |grid|
    err_vio = np.array([r[1] for r in results])
    mae_inc = err_inc.mean(axis=0)
    mae_vio = err_vio.mean(axis=0)
    rho_t1 = np.array([rows[rho] for rho in grid], dtype=float)
    smoothed = _median_of_3(mae_inc)

    summary = {
        "rho_grid": grid,
        "rho_t1": rho_t1.tolist(),
        "mae_inclusion": mae_inc.tolist(),
        "mae_violation": mae_vio.tolist(),
        "mae_inclusion_smoothed": smoothed.tolist(),
        "inclusion_slope": _loglog_slope(rho_t1, mae_inc),
        "violation_slope": _loglog_slope(rho_t1, mae_vio),
        "violation_over_inclusion_at_full": float(mae_vio[-1] / mae_inc[-1]),
        "smoothed_strictly_decreasing": bool(np.all(np.diff(smoothed) < 0)),
    }
    report = ExperimentReport(
        scenario="consistency",
        replicates=replicates,
        seed=spec.seed,
        config={"spec": spec.to_dict(), "k": spec.r_pre, "rng": RNG_IDENTITY},
        data={
            "abs_error_inclusion": err_inc.tolist(),
            "abs_error_violation": err_vio.tolist(),
            "theta_by_rho": {str(k): v for k, v in truth.theta_by_rho.items()},
            "vartheta_by_rho": {str(k): v for k, v in truth.vartheta_by_rho.items()},
        },
        summary=summary,
    )
    report.runtime_seconds = time.time() - start
    return report


def _normality_style_run(
    spec: ScenarioSpec,
    truth: GroundTruth,
    observe,
    post_blocks: list[str],
    replicates: int,
    jobs: int,
) -> tuple[dict, dict]:
    """Shared replicate loop: fit weights at k=r, estimate each post block."""

    def one(i: int):
        obs = observe(spec, truth, i)
        dec = decompose(obs.donor_pre)
        model = fit_from_decomposition(dec, obs.target_pre, spec.r)
        resid = obs.target_pre - obs.donor_pre @ model.weights
        sigma2_hat = float(resid @ resid / spec.t0)
        thetas = [
            float(np.mean(getattr(obs, name) @ model.weights)) for name in post_blocks
        ]
        return thetas, sigma2_hat, model.l2_norm

    results = _map_replicates(one, replicates, jobs)
    estimates = np.array([r[0] for r in results])  # replicates x blocks
    sigma2_hats = np.array([r[1] for r in results])
    weight_l2 = np.array([r[2] for r in results])
    data = {
        "theta_hat": estimates.T.tolist(),
        "sigma2_hat": sigma2_hats.tolist(),
        "weight_l2": weight_l2.tolist(),
    }
    return data, {"estimates": estimates, "sigma2_hats": sigma2_hats,
                  "weight_l2": weight_l2}


def _distribution_summary(
    estimates: np.ndarray,
    theta: float,
    theoretical_sd: float,
    sigma2_hats: np.ndarray,
    weight_l2: np.ndarray,
    t1: int,
    alpha_ci: float,
) -> dict:
    """Moments, distribution fit, and interval coverage for one estimate set.

    The reference normal uses the theoretical mean and variance (not
    fitted moments) so bias shows up as distribution misfit.
    """
    if theoretical_sd > 0:
        ks = float(kstest((estimates - theta) / theoretical_sd, "norm").statistic)
    else:
        ks = None
    covered = 0
    for est, s2, wl2 in zip(estimates, sigma2_hats, weight_l2):
        low, high = confidence_interval(est, s2, wl2, t1, alpha_ci)
        covered += int(low <= theta <= high)
    n = len(estimates)
    empirical_mean = float(estimates.mean())
    abs_bias = abs(empirical_mean - theta)
    sd_of_mean = float(estimates.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    if sd_of_mean > 0:
        bias_over_se = abs_bias / sd_of_mean
    else:
        bias_over_se = float("inf") if abs_bias > 0 else 0.0
    return {
        "theta_true": theta,
        "empirical_mean": empirical_mean,
        "empirical_variance": float(estimates.var(ddof=1)) if n > 1 else 0.0,
        "theoretical_variance": theoretical_sd**2,
        "bias": empirical_mean - theta,
        "abs_bias": abs_bias,
        "se_of_mean": sd_of_mean,
        "bias_over_se": bias_over_se,
        "ks_distance": ks,
        "ci_coverage": covered / n,
        "ci_alpha": alpha_ci,
    }


def run_normality(
    spec: ScenarioSpec, replicates: int = 5000, jobs: int = 1
) -> ExperimentReport:
    """Sampling distribution of the estimator under both post regimes of
    the dual design, against the theoretical normal."""
    start = time.time()
    truth = normality_truth(spec)
    data, arrays = _normality_style_run(
        spec, truth, normality_observations, ["donor_post", "donor_post_alt"],
        replicates, jobs,
    )
    theoretical_sd = float(
        np.sqrt(spec.sigma2) * np.linalg.norm(truth.w_tilde) / np.sqrt(spec.t1)
    )
    summary = {
        "w_tilde_l2": float(np.linalg.norm(truth.w_tilde)),
        "theoretical_sd": theoretical_sd,
        "by_intervention": [
            _distribution_summary(
                arrays["estimates"][:, j],
                theta,
                theoretical_sd,
                arrays["sigma2_hats"],
                arrays["weight_l2"],
                spec.t1,
                0.05,
            )
            for j, theta in enumerate([truth.theta_true, truth.theta_alt])
        ],
    }
    report = ExperimentReport(
        scenario="normality_dual",
        replicates=replicates,
        seed=spec.seed,
        config={"spec": spec.to_dict(), "k": spec.r, "rng": RNG_IDENTITY},
        data=data,
        summary=summary,
    )
    report.runtime_seconds = time.time() - start
    return report


def run_bias(
    spec: ScenarioSpec, replicates: int = 5000, jobs: int = 1
) -> ExperimentReport:
    """Sampling distribution when subspace inclusion fails: the estimate
    centers away from the target and the theoretical normal misfits."""
    start = time.time()
    truth = bias_truth(spec)
    data, arrays = _normality_style_run(
        spec, truth, bias_observations, ["donor_post"], replicates, jobs,
    )
    theoretical_sd = float(
        np.sqrt(spec.sigma2) * np.linalg.norm(truth.w_tilde) / np.sqrt(spec.t1)
    )
    summary = {
        "w_tilde_l2": float(np.linalg.norm(truth.w_tilde)),
        "theoretical_sd": theoretical_sd,
        "by_intervention": [
            _distribution_summary(
                arrays["estimates"][:, 0],
                truth.theta_true,
                theoretical_sd,
                arrays["sigma2_hats"],
                arrays["weight_l2"],
                spec.t1,
                0.05,
            )
        ],
    }
    report = ExperimentReport(
        scenario="bias",
        replicates=replicates,
        seed=spec.seed,
        config={"spec": spec.to_dict(), "k": spec.r_pre, "rng": RNG_IDENTITY},
        data=data,
        summary=summary,
    )
    report.runtime_seconds = time.time() - start
    return report


def rank_sweep(
    spec: ScenarioSpec, candidate_ks, replicates: int = 20, jobs: int = 1
) -> pd.DataFrame:
    """Validation-style rank selection on synthetic data.

    The usual train/validation split (pre vs post period) has no observable
    validation loss because post-period counterfactuals are never observed;
    on generated data the loss |theta_hat(k) - theta| is computable, so
    this sweep scores candidate ranks against the known target. Only
    meaningful for generated scenarios.
    """
    truth = consistency_truth(spec)

    def one(i: int):
        obs = consistency_observations(spec, truth, i)
        dec = decompose(obs.donor_pre)
        errs = []
        for k in candidate_ks:
            model = fit_from_decomposition(dec, obs.target_pre, int(k))
            theta_hat = float(np.mean(obs.donor_post @ model.weights))
            errs.append(abs(theta_hat - truth.theta_true))
        return errs

    results = np.array(_map_replicates(one, replicates, jobs))
    return pd.DataFrame(
        {"k": list(candidate_ks), "mean_abs_error": results.mean(axis=0)}
    )


def se_metric(theta_true: float, theta_hat: float, donor_post_mean: float) -> float:
    """Squared-error skill score against the donor-group average baseline.

    1 means a perfect counterfactual, 0 means parity with predicting the
    plain donor post-period mean, negative means worse. Returns NaN when
    the baseline is exact (zero denominator); callers exclude those from
    medians and count them.
    """
    denom = (theta_true - donor_post_mean) ** 2
    if denom == 0.0:
        return float("nan")
    return 1.0 - (theta_true - theta_hat) ** 2 / denom


def run_ab_study(
    n_units: int = 25,
    n_periods: int = 8,
    d: int = 4,
    heterogeneity: float = 1.0,
    sigma2: float = 0.0025,
    permutations: int = 100,
    seed: int = 0,
    alpha: float = 0.05,
    rank_policy: RankPolicy | None = None,
    c_constant: float = 4.0,
    jobs: int = 1,
) -> ExperimentReport:
    """Held-out counterfactual accuracy over random donor partitions.

    One synthetic experiment tensor is generated once; each permutation
    re-partitions the units into donor clusters (one per non-control
    intervention), estimates every held-out (unit, intervention) pair from
    the cluster's observed outcomes, runs the subspace test per cluster,
    and scores the estimates against the donor-average baseline.
    """
    start = time.time()
    rank_policy = rank_policy or RankPolicy()
    panel, truth = gen_ab_panel(
        n_units=n_units,
        n_periods=n_periods,
        d=d,
        seed=seed,
        heterogeneity=heterogeneity,
        sigma2=sigma2,
    )
    noisy = truth.noisy_tensor
    t0 = n_periods

    def one(p: int):
        rng = named_stream(seed, "ab_study", "permutation", p)
        order = rng.permutation(n_units)
        clusters = np.array_split(order, d - 1)
        per_d = []
        for c, cluster in enumerate(clusters):
            di = c + 1
            donors_idx = np.sort(cluster)
            donors = DonorView(
                pre=noisy[:t0, donors_idx, 0],
                post=noisy[t0:, donors_idx, di],
                donor_indices=donors_idx,
            )
            dec = decompose(donors.pre)
            k = rank_policy.choose(dec).k
            rct_mean = float(donors.post.mean())
            targets = np.setdiff1d(np.arange(n_units), donors_idx)
            ses, variances = [], []
            for n in targets:
                target_pre = noisy[:t0, n, 0]
                model = fit_from_decomposition(dec, target_pre, k)
                theta_hat = estimate_theta(model, donors)
                variances.append(estimate_noise_variance(model, target_pre, donors))
                ses.append(se_metric(float(truth.theta[n, di]), theta_hat, rct_mean))
            sigma_hat = float(np.sqrt(np.median(variances))) if variances else 0.0
            test = run_test(
                donors,
                alpha=alpha,
                sigma=sigma_hat,
                c_constant=c_constant,
                rank_policy=rank_policy,
            )
            ses = np.array(ses, dtype=float)
            defined = ses[~np.isnan(ses)]
            per_d.append(
                {
                    "intervention": di,
                    "test_passed": not test.reject,
                    "tau_hat": test.tau_hat,
                    "tau_alpha": test.tau_alpha,
                    "se_values": ses.tolist(),
                    "median_se": float(np.median(defined)) if defined.size else None,
                    "undefined_se": int(np.isnan(ses).sum()),
                }
            )
        return per_d

    per_perm = _map_replicates(one, permutations, jobs)
    summary_by_d = []
    for c in range(d - 1):
        di = c + 1
        cells = [perm[c] for perm in per_perm]
        all_se = np.concatenate([np.asarray(cell["se_values"]) for cell in cells])
        defined = all_se[~np.isnan(all_se)]
        summary_by_d.append(
            {
                "intervention": di,
                "test_pass_rate": float(np.mean([cell["test_passed"] for cell in cells])),
                "median_se": float(np.median(defined)) if defined.size else None,
                "undefined_se": int(np.isnan(all_se).sum()),
                "mean_median_se": float(
                    np.mean([cell["median_se"] for cell in cells if cell["median_se"] is not None])
                ),
            }
        )
    report = ExperimentReport(
        scenario="ab_study",
        replicates=permutations,
        seed=seed,
        config={
            "n_units": n_units,
            "n_periods": n_periods,
            "d": d,
            "heterogeneity": heterogeneity,
            "sigma2": sigma2,
            "alpha": alpha,
            "c_constant": c_constant,
            "rank_policy": rank_policy.describe(),
            "rng": RNG_IDENTITY,
        },
        data={"permutations": per_perm},
        summary={"by_intervention": summary_by_d},
    )
    report.runtime_seconds = time.time() - start
    return report


def consistency_curves(report: ExperimentReport) -> pd.DataFrame:
    """Plot-ready error curves from a consistency report."""
    s = report.summary
    return pd.DataFrame(
        {
            "rho": s["rho_grid"],
            "rho_t1": s["rho_t1"],
            "mae_inclusion": s["mae_inclusion"],
            "mae_violation": s["mae_violation"],
            "mae_inclusion_smoothed": s["mae_inclusion_smoothed"],
        }
    )


def estimate_histograms(report: ExperimentReport) -> pd.DataFrame:
    """Raw per-replicate estimates from a normality or bias report."""
    frames = []
    for j, estimates in enumerate(report.data["theta_hat"]):
        frames.append(
            pd.DataFrame(
                {
                    "block": j,
                    "replicate": np.arange(len(estimates)),
                    "theta_hat": estimates,
                }
            )
        )
    return pd.concat(frames, ignore_index=True)


def ab_table(report: ExperimentReport) -> pd.DataFrame:
    """Per-permutation test decisions and skill medians from an A/B report."""
    rows = []
    for p, perm in enumerate(report.data["permutations"]):
        for cell in perm:
            rows.append(
                {
                    "permutation": p,
                    "intervention": cell["intervention"],
                    "test_passed": cell["test_passed"],
                    "median_se": cell["median_se"],
                    "undefined_se": cell["undefined_se"],
                }
            )
    return pd.DataFrame(rows)
