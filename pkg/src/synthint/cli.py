"""Command-line entry point.

Subcommands: estimate, test, spectrum, simulate, reproduce. Every command
records its fully resolved configuration (defaults included) into the
metadata it writes, and all randomness flows from one --seed; when the
seed is omitted one is drawn from system entropy and recorded.

Exit codes: 0 success (or "retain" for `si test`), 1 reject for `si test`,
2 input or configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .estimator import EstimationError, estimate_all
from .generators import (
    RNG_IDENTITY,
    GeneratorError,
    ScenarioSpec,
    gen_ab_panel,
    gen_bias,
    gen_consistency,
    gen_elbow,
    gen_normality_dual,
)
from .experiments import (
    ab_table,
    consistency_curves,
    estimate_histograms,
    run_ab_study,
    run_bias,
    run_consistency,
    run_normality,
)
from .panel import PanelError, ObservedPanel, donor_view, load_panel, panel_metadata
from .pcr import FitError
from .spectral import RankPolicy, SpectralError, decompose
from .subspace import SubspaceTestError, heuristic_test, run_test

EXIT_OK = 0
EXIT_REJECT = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

REPRODUCIBLE = {
    "fig4": ("consistency", 100),
    "fig5": ("normality_dual", 5000),
    "fig7": ("bias", 5000),
    "ab": ("ab_study", 100),
}

SIMULATABLE = ("consistency", "normality_dual", "bias", "elbow", "ab")


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_CONFIG):
        super().__init__(message)
        self.code = code


def _resolve_seed(seed):
    if seed is not None:
        return int(seed), False
    drawn = int(np.random.SeedSequence().entropy % (2**63))
    return drawn, True


def _resolve_jobs(jobs):
    if jobs is not None:
        return max(1, int(jobs))
    env = os.environ.get("SI_JOBS")
    return max(1, int(env)) if env else 1


def _rank_policy(args) -> RankPolicy:
    if args.k is not None:
        if args.k < 1:
            raise CliError("rank must be >= 1")
        return RankPolicy(method="fixed", k=args.k)
    if args.rank_method == "fixed":
        raise CliError("--rank-method fixed requires --k")
    if args.rank_method == "threshold" and args.cutoff is None:
        raise CliError("--rank-method threshold requires --cutoff")
    return RankPolicy(
        method=args.rank_method,
        energy_threshold=args.energy,
        cutoff=args.cutoff,
    )


def _add_rank_args(parser):
    parser.add_argument(
        "--rank-method",
        choices=["energy", "elbow", "threshold", "fixed"],
        default="energy",
        help="rank selection rule (default: energy)",
    )
    parser.add_argument("--energy", type=float, default=0.99,
                        help="spectral energy threshold (default: 0.99)")
    parser.add_argument("--cutoff", type=float, default=None,
                        help="singular value cutoff for --rank-method threshold")
    parser.add_argument("--k", type=int, default=None,
                        help="fixed retained rank (implies --rank-method fixed)")


def _load_panel_args(args) -> ObservedPanel:
    for path in [args.outcomes, args.assignments]:
        if not Path(path).exists():
            raise CliError(f"input file not found: {path}")
    return load_panel(
        args.outcomes,
        args.assignments,
        t0=args.t0,
        num_interventions=args.num_interventions,
    )


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def cmd_estimate(args) -> int:
    panel = _load_panel_args(args)
    policy = _rank_policy(args)
    config = {
        "command": "estimate",
        "outcomes": args.outcomes,
        "assignments": args.assignments,
        "t0": args.t0,
        "alpha_ci": args.alpha,
        "rank_policy": policy.describe(),
        "run_subspace_test": args.test,
        "test_alpha": args.test_alpha,
        "c_constant": args.c,
        "version": __version__,
    }
    config["export_weights"] = args.export_weights
    try:
        result = estimate_all(
            panel,
            rank_policy=policy,
            alpha_ci=args.alpha,
            run_subspace_test=args.test,
            test_alpha=args.test_alpha,
            c_constant=args.c,
            return_weights=args.export_weights,
        )
    except (FitError, SpectralError) as exc:
        raise CliError(f"numerical failure: {exc}", EXIT_NUMERICAL) from exc
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.export_weights:
        table, weights = result
        weights.to_csv(out_dir / "weights.csv", index=False)
    else:
        table = result
    table.to_csv(out_dir / "estimates.csv", index=False)
    table.to_json(out_dir / "estimates.json", orient="records", indent=2)
    _write_json(out_dir / "metadata.json",
                {"config": config, "panel": panel_metadata(panel)})
    print(f"wrote {len(table)} estimates for {panel.num_units} units x "
          f"{panel.num_interventions} interventions to {out_dir / 'estimates.csv'}")
    print(table.groupby("intervention")["theta_hat"].describe().to_string())
    return EXIT_OK


def cmd_test(args) -> int:
    panel = _load_panel_args(args)
    policy = _rank_policy(args)
    donors = donor_view(panel, args.d)
    if args.heuristic is not None:
        result = heuristic_test(donors, rho=args.heuristic, rank_policy=policy)
        sigma = None
    else:
        sigma = args.sigma
        if sigma is None:
            sigma = _default_sigma(panel, args.d, policy)
        result = run_test(
            donors, alpha=args.alpha, sigma=sigma, c_constant=args.c,
            rank_policy=policy,
        )
    config = {
        "command": "test",
        "outcomes": args.outcomes,
        "assignments": args.assignments,
        "t0": args.t0,
        "d": args.d,
        "alpha": args.alpha,
        "sigma": sigma,
        "sigma_source": "override" if args.sigma is not None else "estimated",
        "c_constant": args.c,
        "heuristic_rho": args.heuristic,
        "rank_policy": policy.describe(),
        "version": __version__,
    }
    payload = {"config": config, "result": result.to_dict()}
    print(json.dumps(payload, sort_keys=True, indent=2))
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_json(out_dir / "test_result.json", payload)
    return EXIT_REJECT if result.reject else EXIT_OK


def _default_sigma(panel, d, policy) -> float:
    """Median pre-period residual scale over units outside the donor group."""
    from .estimator import _group_sigma_hat

    donors = donor_view(panel, d)
    dec = decompose(donors.pre)
    k = policy.choose(dec).k
    return _group_sigma_hat(panel, d, donors, dec, k)


def cmd_spectrum(args) -> int:
    if not Path(args.matrix).exists():
        raise CliError(f"input file not found: {args.matrix}")
    df = pd.read_csv(args.matrix)
    if df.isna().any().any():
        raise CliError("matrix has missing cells")
    dec = decompose(df.to_numpy(dtype=float))
    out = pd.DataFrame(
        {
            "index": np.arange(1, dec.m + 1),
            "singular_value": dec.singular_values,
            "energy_fraction": dec.energy_fractions(),
        }
    )
    text = out.to_csv(index=False)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _spec_from_args(scenario: str, seed: int, args) -> ScenarioSpec:
    base = {
        "consistency": ScenarioSpec.consistency,
        "normality_dual": ScenarioSpec.normality_dual,
        "bias": ScenarioSpec.bias,
    }[scenario](seed=seed)
    overrides = {}
    for name in ["t0", "t1", "n_d", "r", "r_pre", "sigma2"]:
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if overrides:
        from dataclasses import replace

        base = replace(base, **overrides)
    return base


def _matrix_csv(path: Path, matrix: np.ndarray, prefix: str) -> None:
    cols = [f"{prefix}{j}" for j in range(matrix.shape[1])]
    pd.DataFrame(matrix, columns=cols).to_csv(path, index=False)


def cmd_simulate(args) -> int:
    seed, drawn = _resolve_seed(args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    config = {
        "command": "simulate",
        "scenario": args.scenario,
        "seed": seed,
        "seed_drawn_from_entropy": drawn,
        "rng": RNG_IDENTITY,
        "version": __version__,
    }

    if args.scenario == "elbow":
        spectra = gen_elbow(seed=seed)
        rows = []
        for sigma2, values in spectra.items():
            for i, value in enumerate(values):
                rows.append({"sigma2": sigma2, "index": i + 1, "singular_value": value})
        pd.DataFrame(rows).to_csv(out_dir / "spectra.csv", index=False)
        _write_json(out_dir / "metadata.json", {"config": config})
        print(f"wrote elbow spectra to {out_dir}")
        return EXIT_OK

    if args.scenario == "ab":
        panel, truth = gen_ab_panel(seed=seed, heterogeneity=args.heterogeneity)
        from .panel import save_panel

        save_panel(panel, out_dir / "outcomes.csv", out_dir / "assignments.csv")
        _write_json(
            out_dir / "ground_truth.json",
            {
                "theta": truth.theta.tolist(),
                "expected_tensor": truth.expected_tensor.tolist(),
                "sigma2": truth.sigma2,
                "heterogeneity": truth.heterogeneity,
            },
        )
        config["heterogeneity"] = args.heterogeneity
        _write_json(out_dir / "metadata.json",
                    {"config": config, "panel": panel_metadata(panel)})
        print(f"wrote experiment panel to {out_dir}")
        return EXIT_OK

    spec = _spec_from_args(args.scenario, seed, args)
    config["spec"] = spec.to_dict()
    generate = {
        "consistency": gen_consistency,
        "normality_dual": gen_normality_dual,
        "bias": gen_bias,
    }[args.scenario]
    truth, obs = generate(spec)
    _matrix_csv(out_dir / "donor_pre.csv", obs.donor_pre, "donor_")
    _matrix_csv(out_dir / "donor_post.csv", obs.donor_post, "donor_")
    pd.DataFrame({"target_pre": obs.target_pre}).to_csv(
        out_dir / "target_pre.csv", index=False
    )
    if obs.donor_post_alt is not None:
        _matrix_csv(out_dir / "donor_post_alt.csv", obs.donor_post_alt, "donor_")
    if obs.donor_post_violating is not None:
        _matrix_csv(
            out_dir / "donor_post_violating.csv", obs.donor_post_violating, "donor_"
        )
    ground = {
        "w_true": truth.w_true.tolist(),
        "w_tilde": truth.w_tilde.tolist(),
        "theta_true": truth.theta_true,
        "theta_alt": truth.theta_alt,
        "theta_violating": truth.theta_violating,
        "theta_by_rho": truth.theta_by_rho,
        "vartheta_by_rho": truth.vartheta_by_rho,
        "expected_pre": truth.expected_pre.tolist(),
        "expected_post": truth.expected_post.tolist(),
    }
    _write_json(out_dir / "ground_truth.json", ground)

    if args.scenario == "normality_dual":
        _export_dual_panel(spec, obs, out_dir)
    _write_json(out_dir / "metadata.json", {"config": config})
    print(f"wrote {args.scenario} scenario data to {out_dir}")
    return EXIT_OK


def _export_dual_panel(spec, obs, out_dir: Path) -> None:
    """Panel form of the dual design: donors split between the two
    post-intervention regimes so both donor groups are populated."""
    half = spec.n_d // 2
    outcomes = np.empty((spec.t0 + spec.t1, spec.n_d))
    outcomes[: spec.t0] = obs.donor_pre
    outcomes[spec.t0 :, :half] = obs.donor_post[:, :half]
    outcomes[spec.t0 :, half:] = obs.donor_post_alt[:, half:]
    assignments = np.array([0] * half + [1] * (spec.n_d - half))
    panel = ObservedPanel(
        outcomes=outcomes,
        t0=spec.t0,
        assignments=assignments,
        num_interventions=2,
    )
    from .panel import save_panel

    save_panel(panel, out_dir / "panel_outcomes.csv", out_dir / "panel_assignments.csv")


def cmd_reproduce(args) -> int:
    seed, drawn = _resolve_seed(args.seed)
    jobs = _resolve_jobs(args.jobs)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    target = args.figure
    scenario, default_reps = REPRODUCIBLE[target]
    replicates = args.replicates or default_reps

    if target == "fig4":
        report = run_consistency(
            ScenarioSpec.consistency(seed=seed), replicates=replicates, jobs=jobs
        )
        consistency_curves(report).to_csv(out_dir / "curves.csv", index=False)
    elif target == "fig5":
        report = run_normality(
            ScenarioSpec.normality_dual(seed=seed), replicates=replicates, jobs=jobs
        )
        estimate_histograms(report).to_csv(out_dir / "estimates.csv", index=False)
    elif target == "fig7":
        report = run_bias(
            ScenarioSpec.bias(seed=seed), replicates=replicates, jobs=jobs
        )
        estimate_histograms(report).to_csv(out_dir / "estimates.csv", index=False)
    else:
        report = run_ab_study(seed=seed, permutations=replicates, jobs=jobs)
        ab_table(report).to_csv(out_dir / "table.csv", index=False)

    report.config["cli"] = {
        "command": "reproduce",
        "figure": target,
        "seed": seed,
        "seed_drawn_from_entropy": drawn,
        "replicates": replicates,
        "jobs": jobs,
        "version": __version__,
    }
    path = report.save(out_dir)
    print(f"wrote {path}")
    for line in json.dumps(report.summary, sort_keys=True, indent=2).splitlines():
        print(line)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="si",
        description="Synthetic interventions: estimation, diagnostics, and simulations",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_est = sub.add_parser("estimate", help="estimate all (unit, intervention) pairs")
    p_est.add_argument("outcomes", help="outcomes CSV (header of unit labels)")
    p_est.add_argument("assignments", help="assignments CSV (unit, intervention)")
    p_est.add_argument("--t0", type=int, required=True, help="pre-period length")
    p_est.add_argument("--num-interventions", type=int, default=None)
    p_est.add_argument("--alpha", type=float, default=0.05,
                       help="confidence level complement (default: 0.05)")
    p_est.add_argument("--test", action="store_true",
                       help="annotate estimates with the subspace test decision")
    p_est.add_argument("--test-alpha", type=float, default=0.05)
    p_est.add_argument("--c", type=float, default=4.0,
                       help="critical value constant (default: 4, Gaussian)")
    p_est.add_argument("--export-weights", action="store_true",
                       help="also write the fitted donor weights as CSV")
    p_est.add_argument("--out", default="si_output")
    _add_rank_args(p_est)
    p_est.set_defaults(func=cmd_estimate)

    p_test = sub.add_parser("test", help="subspace-inclusion hypothesis test")
    p_test.add_argument("outcomes")
    p_test.add_argument("assignments")
    p_test.add_argument("--t0", type=int, required=True)
    p_test.add_argument("--num-interventions", type=int, default=None)
    p_test.add_argument("--d", type=int, required=True, help="donor group to test")
    p_test.add_argument("--alpha", type=float, default=0.05)
    p_test.add_argument("--sigma", type=float, default=None,
                        help="noise scale override (default: estimated)")
    p_test.add_argument("--c", type=float, default=4.0)
    p_test.add_argument("--heuristic", type=float, default=None, metavar="RHO",
                        help="use the fraction heuristic at this rho instead")
    p_test.add_argument("--out", default=None)
    _add_rank_args(p_test)
    p_test.set_defaults(func=cmd_test)

    p_spec = sub.add_parser("spectrum", help="singular values and energy fractions")
    p_spec.add_argument("matrix", help="numeric CSV with a header row")
    p_spec.add_argument("--out", default=None)
    p_spec.set_defaults(func=cmd_spectrum)

    p_sim = sub.add_parser("simulate", help="generate scenario data files")
    p_sim.add_argument("scenario", choices=SIMULATABLE)
    p_sim.add_argument("--seed", type=int, default=None)
    p_sim.add_argument("--out", default="si_sim")
    p_sim.add_argument("--t0", type=int, default=None)
    p_sim.add_argument("--t1", type=int, default=None)
    p_sim.add_argument("--n-d", dest="n_d", type=int, default=None)
    p_sim.add_argument("--r", type=int, default=None)
    p_sim.add_argument("--r-pre", dest="r_pre", type=int, default=None)
    p_sim.add_argument("--sigma2", type=float, default=None)
    p_sim.add_argument("--heterogeneity", type=float, default=1.0,
                       help="unit-factor spread for the ab scenario")
    p_sim.set_defaults(func=cmd_simulate)

    p_rep = sub.add_parser("reproduce", help="run a full experiment study")
    p_rep.add_argument("figure", choices=sorted(REPRODUCIBLE))
    p_rep.add_argument("--seed", type=int, default=None)
    p_rep.add_argument("--replicates", type=int, default=None,
                       help="override the study's default replicate count")
    p_rep.add_argument("--jobs", type=int, default=None,
                       help="worker threads (default: SI_JOBS or 1)")
    p_rep.add_argument("--out", default="si_report")
    p_rep.set_defaults(func=cmd_reproduce)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except FitError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (PanelError, GeneratorError, SubspaceTestError, EstimationError,
            SpectralError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
