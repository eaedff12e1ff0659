"""Seedable generators for the simulation studies.

Three panel designs drive the experiment suite:

* ``consistency`` — donor pre block of rank r_pre < r, one post block whose
  expected rowspace stays inside the pre rowspace and one that escapes it,
  with the post-period length swept via a fraction grid.
* ``normality_dual`` — a single donor group observed under two
  post-intervention regimes drawn from different distributions (normal and
  uniform) that both respect subspace inclusion, sharing one weight vector.
* ``bias`` — pre block of deficient rank so that inclusion fails and the
  estimator picks up a persistent bias.

Expectations are built once per spec from a "factors" stream; observation
noise comes from per-replicate streams, so replicates can be generated in
parallel and adding new generators never perturbs existing draws. All
sampling goes through the counter-based Philox generator with numpy's
ziggurat normal transform, recorded in output metadata.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .panel import ObservedPanel

RNG_IDENTITY = {"bit_generator": "philox4x64", "normal_transform": "ziggurat"}

DEFAULT_RHO_GRID = tuple(round(0.1 * i, 1) for i in range(1, 11))


def _label_entropy(label) -> int:
    digest = hashlib.sha256(repr(label).encode()).digest()
    return int.from_bytes(digest[:8], "big")


def named_stream(seed: int, *labels) -> np.random.Generator:
    """Independent generator keyed by the master seed and a label path."""
    entropy = [seed & 0xFFFFFFFFFFFFFFFF] + [_label_entropy(l) for l in labels]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


class GeneratorError(ValueError):
    """Invalid scenario specification."""


@dataclass(frozen=True)
class ScenarioSpec:
    """Dimensions, ranks, noise level, and seed of one simulation design."""

    scenario: str
    t0: int
    t1: int
    n_d: int
    r: int
    r_pre: int
    sigma2: float
    seed: int = 0
    rho_grid: tuple[float, ...] | None = None

    def __post_init__(self):
        if min(self.t0, self.t1, self.n_d, self.r, self.r_pre) < 1:
            raise GeneratorError("dimensions and ranks must be positive")
        if self.r_pre > self.r:
            raise GeneratorError("r_pre must not exceed r")
        if self.sigma2 < 0:
            raise GeneratorError("sigma2 must be non-negative")

    @classmethod
    def consistency(cls, seed: int = 0, **overrides) -> "ScenarioSpec":
        spec = cls(
            scenario="consistency",
            t0=200,
            t1=200,
            n_d=200,
            r=15,
            r_pre=10,
            sigma2=0.3,
            seed=seed,
            rho_grid=DEFAULT_RHO_GRID,
        )
        return replace(spec, **overrides) if overrides else spec

    @classmethod
    def normality_dual(cls, seed: int = 0, **overrides) -> "ScenarioSpec":
        spec = cls(
            scenario="normality_dual",
            t0=400,
            t1=20,
            n_d=400,
            r=15,
            r_pre=15,
            sigma2=0.5,
            seed=seed,
        )
        return replace(spec, **overrides) if overrides else spec

    @classmethod
    def bias(cls, seed: int = 0, **overrides) -> "ScenarioSpec":
        spec = cls(
            scenario="bias",
            t0=400,
            t1=20,
            n_d=400,
            r=15,
            r_pre=12,
            sigma2=0.5,
            seed=seed,
        )
        return replace(spec, **overrides) if overrides else spec

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "t0": self.t0,
            "t1": self.t1,
            "n_d": self.n_d,
            "r": self.r,
            "r_pre": self.r_pre,
            "sigma2": self.sigma2,
            "seed": self.seed,
            "rho_grid": list(self.rho_grid) if self.rho_grid else None,
        }


@dataclass(frozen=True)
class GroundTruth:
    """Expected matrices, true weights, and target parameters of a scenario."""

    expected_pre: np.ndarray
    expected_target_pre: np.ndarray
    w_true: np.ndarray
    w_tilde: np.ndarray
    expected_post: np.ndarray
    theta_true: float
    expected_post_alt: np.ndarray | None = None
    theta_alt: float | None = None
    expected_post_violating: np.ndarray | None = None
    theta_violating: float | None = None
    theta_by_rho: dict[float, float] | None = None
    vartheta_by_rho: dict[float, float] | None = None
    factors: dict[str, np.ndarray] = field(default_factory=dict, repr=False)


@dataclass(frozen=True)
class Observations:
    """One replicate's noisy view of a scenario's expectations."""

    replicate: int
    target_pre: np.ndarray
    donor_pre: np.ndarray
    donor_post: np.ndarray
    donor_post_alt: np.ndarray | None = None
    donor_post_violating: np.ndarray | None = None


def rho_rows(rho: float, t1: int) -> int:
    """Number of post rows retained at fraction rho: floor(rho * T1)."""
    m = int(math.floor(rho * t1 + 1e-9))
    if m < 1:
        raise GeneratorError(f"rho={rho} keeps no post rows at T1={t1}")
    return m


def _normalized_uniform(rng, rows: int, cols: int, axis: int) -> np.ndarray:
    """Uniform[0,1] block normalized so the given axis sums to one.

    A zero sum has probability zero but would divide by zero, so those
    slices are redrawn defensively.
    """
    block = rng.uniform(0.0, 1.0, size=(rows, cols))
    sums = block.sum(axis=axis, keepdims=True)
    while (sums == 0.0).any():
        redraw = (sums == 0.0).squeeze(axis=axis)
        if axis == 0:
            block[:, redraw] = rng.uniform(0.0, 1.0, size=(rows, int(redraw.sum())))
        else:
            block[redraw, :] = rng.uniform(0.0, 1.0, size=(int(redraw.sum()), cols))
        sums = block.sum(axis=axis, keepdims=True)
    return block / sums


def _min_norm_weights(expected_pre: np.ndarray, expected_target: np.ndarray) -> np.ndarray:
    return np.linalg.pinv(expected_pre) @ expected_target


def _theta(expected_post: np.ndarray, w: np.ndarray) -> float:
    return float(np.mean(expected_post @ w))


def consistency_truth(spec: ScenarioSpec) -> GroundTruth:
    """Expectations for the rank-deficient pre / dual post design.

    The pre time factors are [A, AQ] with A standard normal and Q a
    column-normalized uniform mix, giving the pre block rank r_pre. The
    inclusion-satisfying post factors are row-stochastic averages of the
    pre factors; the violating factors are fresh standard normals of full
    rank r.
    """
    if spec.r_pre >= spec.r:
        raise GeneratorError("consistency design needs r_pre < r")
    rng = named_stream(spec.seed, spec.scenario, "factors")
    v = rng.standard_normal((spec.n_d, spec.r))
    a = rng.standard_normal((spec.t0, spec.r_pre))
    q = _normalized_uniform(rng, spec.r_pre, spec.r - spec.r_pre, axis=0)
    u_pre = np.hstack([a, a @ q])
    expected_pre = u_pre @ v.T
    w_true = rng.standard_normal(spec.n_d)
    expected_target_pre = expected_pre @ w_true
    p = _normalized_uniform(rng, spec.t1, spec.t0, axis=1)
    u_post = p @ u_pre
    expected_post = u_post @ v.T
    f_post = rng.standard_normal((spec.t1, spec.r))
    expected_post_violating = f_post @ v.T

    grid = spec.rho_grid or DEFAULT_RHO_GRID
    theta_by_rho = {
        rho: _theta(expected_post[: rho_rows(rho, spec.t1)], w_true) for rho in grid
    }
    vartheta_by_rho = {
        rho: _theta(expected_post_violating[: rho_rows(rho, spec.t1)], w_true)
        for rho in grid
    }
    return GroundTruth(
        expected_pre=expected_pre,
        expected_target_pre=expected_target_pre,
        w_true=w_true,
        w_tilde=_min_norm_weights(expected_pre, expected_target_pre),
        expected_post=expected_post,
        theta_true=_theta(expected_post, w_true),
        expected_post_violating=expected_post_violating,
        theta_violating=_theta(expected_post_violating, w_true),
        theta_by_rho=theta_by_rho,
        vartheta_by_rho=vartheta_by_rho,
        factors={"A": a, "Q": q, "U_pre": u_pre, "V": v, "P": p,
                 "U_post": u_post, "F_post": f_post},
    )


def consistency_observations(
    spec: ScenarioSpec, truth: GroundTruth, replicate: int = 0
) -> Observations:
    rng = named_stream(spec.seed, spec.scenario, "noise", replicate)
    sigma = math.sqrt(spec.sigma2)
    return Observations(
        replicate=replicate,
        target_pre=truth.expected_target_pre
        + sigma * rng.standard_normal(spec.t0),
        donor_pre=truth.expected_pre
        + sigma * rng.standard_normal((spec.t0, spec.n_d)),
        donor_post=truth.expected_post
        + sigma * rng.standard_normal((spec.t1, spec.n_d)),
        donor_post_violating=truth.expected_post_violating
        + sigma * rng.standard_normal((spec.t1, spec.n_d)),
    )


def gen_consistency(
    spec: ScenarioSpec, replicate: int = 0
) -> tuple[GroundTruth, Observations]:
    truth = consistency_truth(spec)
    return truth, consistency_observations(spec, truth, replicate)


def normality_truth(spec: ScenarioSpec) -> GroundTruth:
    """Expectations for the shared-donor dual-intervention design.

    One donor group and one weight vector serve both regimes: the post
    factors are standard normal for the first regime and uniform on
    [-sqrt(3), sqrt(3)] (unit variance) for the second, so both satisfy
    subspace inclusion against the full-rank pre block.
    """
    rng = named_stream(spec.seed, spec.scenario, "factors")
    v = rng.standard_normal((spec.n_d, spec.r))
    u_pre = rng.standard_normal((spec.t0, spec.r))
    expected_pre = u_pre @ v.T
    w_true = rng.standard_normal(spec.n_d)
    expected_target_pre = expected_pre @ w_true
    u_post_0 = rng.standard_normal((spec.t1, spec.r))
    u_post_1 = rng.uniform(-math.sqrt(3.0), math.sqrt(3.0), size=(spec.t1, spec.r))
    expected_post_0 = u_post_0 @ v.T
    expected_post_1 = u_post_1 @ v.T
    return GroundTruth(
        expected_pre=expected_pre,
        expected_target_pre=expected_target_pre,
        w_true=w_true,
        w_tilde=_min_norm_weights(expected_pre, expected_target_pre),
        expected_post=expected_post_0,
        theta_true=_theta(expected_post_0, w_true),
        expected_post_alt=expected_post_1,
        theta_alt=_theta(expected_post_1, w_true),
        factors={"U_pre": u_pre, "V": v, "U_post_0": u_post_0, "U_post_1": u_post_1},
    )


def normality_observations(
    spec: ScenarioSpec, truth: GroundTruth, replicate: int = 0
) -> Observations:
    rng = named_stream(spec.seed, spec.scenario, "noise", replicate)
    sigma = math.sqrt(spec.sigma2)
    return Observations(
        replicate=replicate,
        target_pre=truth.expected_target_pre + sigma * rng.standard_normal(spec.t0),
        donor_pre=truth.expected_pre
        + sigma * rng.standard_normal((spec.t0, spec.n_d)),
        donor_post=truth.expected_post
        + sigma * rng.standard_normal((spec.t1, spec.n_d)),
        donor_post_alt=truth.expected_post_alt
        + sigma * rng.standard_normal((spec.t1, spec.n_d)),
    )


def gen_normality_dual(
    spec: ScenarioSpec, replicate: int = 0
) -> tuple[GroundTruth, Observations]:
    truth = normality_truth(spec)
    return truth, normality_observations(spec, truth, replicate)


def bias_truth(spec: ScenarioSpec) -> GroundTruth:
    """Expectations for the inclusion-violating design.

    The pre block is built as in the consistency design with deficient
    rank r_pre, while the post factors are full-rank standard normals, so
    the post rowspace escapes the pre rowspace and the estimator is biased
    even without noise.
    """
    if spec.r_pre >= spec.r:
        raise GeneratorError("bias design needs r_pre < r")
    rng = named_stream(spec.seed, spec.scenario, "factors")
    v = rng.standard_normal((spec.n_d, spec.r))
    a = rng.standard_normal((spec.t0, spec.r_pre))
    q = _normalized_uniform(rng, spec.r_pre, spec.r - spec.r_pre, axis=0)
    u_pre = np.hstack([a, a @ q])
    expected_pre = u_pre @ v.T
    w_true = rng.standard_normal(spec.n_d)
    expected_target_pre = expected_pre @ w_true
    u_post = rng.standard_normal((spec.t1, spec.r))
    expected_post = u_post @ v.T
    return GroundTruth(
        expected_pre=expected_pre,
        expected_target_pre=expected_target_pre,
        w_true=w_true,
        w_tilde=_min_norm_weights(expected_pre, expected_target_pre),
        expected_post=expected_post,
        theta_true=_theta(expected_post, w_true),
        factors={"A": a, "Q": q, "U_pre": u_pre, "V": v, "U_post": u_post},
    )


def bias_observations(
    spec: ScenarioSpec, truth: GroundTruth, replicate: int = 0
) -> Observations:
    rng = named_stream(spec.seed, spec.scenario, "noise", replicate)
    sigma = math.sqrt(spec.sigma2)
    return Observations(
        replicate=replicate,
        target_pre=truth.expected_target_pre + sigma * rng.standard_normal(spec.t0),
        donor_pre=truth.expected_pre
        + sigma * rng.standard_normal((spec.t0, spec.n_d)),
        donor_post=truth.expected_post
        + sigma * rng.standard_normal((spec.t1, spec.n_d)),
    )


def gen_bias(spec: ScenarioSpec, replicate: int = 0) -> tuple[GroundTruth, Observations]:
    truth = bias_truth(spec)
    return truth, bias_observations(spec, truth, replicate)


DEFAULT_ELBOW_GRID = (0.0, 0.2, 0.4, 0.6, 0.8)


def gen_elbow(
    dim: int = 100,
    r: int = 10,
    sigma2_grid: tuple[float, ...] = DEFAULT_ELBOW_GRID,
    seed: int = 0,
) -> dict[float, np.ndarray]:
    """Singular spectra of a rank-r square signal plus noise per grid level.

    The signal U V' (entries standard normal, U and V dim x r) is fixed
    across the grid; each noise level draws its own independent Gaussian
    perturbation, so comparing spectra across levels isolates the noise
    floor rising toward the signal-value elbow.
    """
    if r > dim:
        raise GeneratorError("r must not exceed dim")
    rng = named_stream(seed, "elbow", "factors")
    u = rng.standard_normal((dim, r))
    v = rng.standard_normal((dim, r))
    signal = u @ v.T
    spectra = {}
    for i, sigma2 in enumerate(sigma2_grid):
        noise_rng = named_stream(seed, "elbow", "noise", i)
        noisy = signal + math.sqrt(sigma2) * noise_rng.standard_normal((dim, dim))
        spectra[float(sigma2)] = np.linalg.svd(noisy, compute_uv=False)
    return spectra


@dataclass(frozen=True)
class AbGroundTruth:
    """Full potential-outcome tensor behind a generated experiment panel."""

    expected_tensor: np.ndarray
    noisy_tensor: np.ndarray
    theta: np.ndarray
    assignments: np.ndarray
    sigma2: float
    heterogeneity: float
    factors: dict[str, np.ndarray] = field(default_factory=dict, repr=False)


def gen_ab_panel(
    n_units: int = 25,
    n_periods: int = 8,
    d: int = 4,
    seed: int = 0,
    heterogeneity: float = 1.0,
    sigma2: float = 0.0025,
) -> tuple[ObservedPanel, AbGroundTruth]:
    """Synthetic stand-in for a multi-discount experiment panel.

    Potential outcomes follow a low-CP-rank tensor
    Y[t, n, d] = sum_l u[t, l] * v[n, l] * lam[d, l] + noise, with
    ``n_periods`` control rows followed by ``n_periods`` post rows. Units
    are split into d-1 near-equal donor clusters; cluster c is assigned
    intervention c+1 (control has no post-period donors, mirroring the
    layout where the control trajectories serve as everyone's pre-period).
    ``heterogeneity`` scales how far unit factors spread from their common
    base: at zero, all units react identically and the donor-group average
    is an unbeatable predictor.
    """
    if d < 2:
        raise GeneratorError("need at least two interventions")
    if n_units < d - 1:
        raise GeneratorError("need at least one unit per donor cluster")
    cp_rank = 3
    rng = named_stream(seed, "ab", "factors")
    u = rng.standard_normal((2 * n_periods, cp_rank))
    v = np.ones((n_units, cp_rank)) + heterogeneity * rng.standard_normal(
        (n_units, cp_rank)
    )
    lam = rng.uniform(0.5, 1.5, size=(d, cp_rank))
    expected = np.einsum("tl,nl,dl->tnd", u, v, lam)
    noise_rng = named_stream(seed, "ab", "noise")
    noisy = expected + math.sqrt(sigma2) * noise_rng.standard_normal(expected.shape)

    clusters = np.array_split(np.arange(n_units), d - 1)
    assignments = np.empty(n_units, dtype=int)
    for c, cluster in enumerate(clusters):
        assignments[cluster] = c + 1

    outcomes = np.empty((2 * n_periods, n_units))
    outcomes[:n_periods] = noisy[:n_periods, :, 0]
    for n in range(n_units):
        outcomes[n_periods:, n] = noisy[n_periods:, n, assignments[n]]

    theta = expected[n_periods:].mean(axis=0)  # N x D post-period averages
    panel = ObservedPanel(
        outcomes=outcomes,
        t0=n_periods,
        assignments=assignments,
        num_interventions=d,
    )
    truth = AbGroundTruth(
        expected_tensor=expected,
        noisy_tensor=noisy,
        theta=theta,
        assignments=assignments.copy(),
        sigma2=sigma2,
        heterogeneity=heterogeneity,
        factors={"U": u, "V": v, "LAMBDA": lam},
    )
    return panel, truth
