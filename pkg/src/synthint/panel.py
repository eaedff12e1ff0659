"""Observed panel data with a pre/post intervention split and donor groups.

The observation pattern is the standard one for synthetic-control style
estimators: every unit is under control before the intervention point,
and under exactly one of D interventions (0 = control) afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd


class PanelError(ValueError):
    """Invalid panel construction or lookup."""


@dataclass(frozen=True)
class ObservedPanel:
    """T x N outcome matrix plus intervention assignments and split index.

    ``outcomes[t, n]`` is the observed outcome of unit ``n`` at time ``t``
    (rows time-ascending). ``t0`` is the number of pre-intervention periods,
    so rows ``[0, t0)`` are pre and ``[t0, T)`` are post. ``assignments[n]``
    is the post-period intervention of unit ``n``. Immutable after
    construction; safe to share across workers.
    """

    outcomes: np.ndarray
    t0: int
    assignments: np.ndarray
    num_interventions: int
    unit_labels: list[str] = field(default=None)
    time_labels: list[str] = field(default=None)

    def __post_init__(self):
        outcomes = np.asarray(self.outcomes, dtype=float)
        assignments = np.asarray(self.assignments, dtype=int)
        if outcomes.ndim != 2:
            raise PanelError("outcomes must be a 2-d array")
        if not np.isfinite(outcomes).all():
            raise PanelError("outcomes contain non-finite or missing cells")
        T, N = outcomes.shape
        if not 1 <= self.t0 < T:
            raise PanelError(f"t0 must satisfy 1 <= t0 < T, got t0={self.t0}, T={T}")
        if assignments.shape != (N,):
            raise PanelError(
                f"assignments must have length N={N}, got {assignments.shape}"
            )
        if self.num_interventions < 1:
            raise PanelError("num_interventions must be >= 1")
        bad = (assignments < 0) | (assignments >= self.num_interventions)
        if bad.any():
            raise PanelError(
                "assignment id out of range: "
                f"{assignments[bad].tolist()} not in [0, {self.num_interventions})"
            )
        if self.unit_labels is not None and len(self.unit_labels) != N:
            raise PanelError("unit_labels length must match N")
        if self.time_labels is not None and len(self.time_labels) != T:
            raise PanelError("time_labels length must match T")
        outcomes.setflags(write=False)
        assignments.setflags(write=False)
        object.__setattr__(self, "outcomes", outcomes)
        object.__setattr__(self, "assignments", assignments)

    @property
    def num_periods(self) -> int:
        return self.outcomes.shape[0]

    @property
    def num_units(self) -> int:
        return self.outcomes.shape[1]

    @property
    def pre_periods(self) -> int:
        return self.t0

    @property
    def post_periods(self) -> int:
        return self.num_periods - self.t0

    def donor_indices(self, d: int) -> np.ndarray:
        """Units assigned to intervention ``d``, in column order."""
        if not 0 <= d < self.num_interventions:
            raise PanelError(f"intervention id {d} not in [0, {self.num_interventions})")
        return np.flatnonzero(self.assignments == d)

    def group_sizes(self) -> list[int]:
        return [int((self.assignments == d).sum()) for d in range(self.num_interventions)]


@dataclass(frozen=True)
class DonorView:
    """Pre/post outcome blocks for one donor group, columns in unit order."""

    pre: np.ndarray
    post: np.ndarray
    donor_indices: np.ndarray

    def __post_init__(self):
        if self.pre.shape[1] != self.post.shape[1]:
            raise PanelError("pre and post must have the same number of columns")
        if self.pre.shape[1] != len(self.donor_indices):
            raise PanelError("donor_indices length must match column count")
        if self.pre.shape[1] < 1:
            raise PanelError("empty donor group")

    @property
    def num_donors(self) -> int:
        return self.pre.shape[1]


@dataclass(frozen=True)
class SparsityLayout:
    """Observed-cell mask over the T x N x D potential-outcomes tensor."""

    pattern: str
    mask: np.ndarray

    @property
    def observed_cells(self) -> int:
        return int(self.mask.sum())


def donor_view(panel: ObservedPanel, d: int) -> DonorView:
    """Slice the pre and post outcome blocks for donor group ``d``."""
    idx = np.flatnonzero(panel.assignments == d)
    if idx.size == 0:
        raise PanelError(f"empty donor group for intervention {d}")
    return DonorView(
        pre=panel.outcomes[: panel.t0, idx],
        post=panel.outcomes[panel.t0 :, idx],
        donor_indices=idx,
    )


def layout_mask(panel: ObservedPanel) -> SparsityLayout:
    """Mask of the single-intervention pre/post observation pattern.

    Cell (t, n, d) is observed iff t < t0 and d = 0, or t >= t0 and
    d equals unit n's assignment. With D interventions each unit is
    missing a (D-1) x T1 block of post-period cells.
    """
    T, N = panel.outcomes.shape
    D = panel.num_interventions
    mask = np.zeros((T, N, D), dtype=bool)
    mask[: panel.t0, :, 0] = True
    for n in range(N):
        mask[panel.t0 :, n, panel.assignments[n]] = True
    return SparsityLayout(pattern="pre_post_single_intervention", mask=mask)


def load_panel(
    outcome_file,
    assignment_file,
    t0: int,
    post_outcome_file=None,
    num_interventions: int | None = None,
) -> ObservedPanel:
    """Read a panel from CSV files.

    The outcome table has a header row of unit labels and one row per time
    step. The assignment table has two columns (unit, intervention). When
    ``post_outcome_file`` is given its rows are appended below the first
    table (same columns) and ``t0`` must equal the first table's row count.
    ``num_interventions`` defaults to one more than the largest assignment
    id seen. Missing cells are rejected: the observation model is fully
    observed within blocks.
    """
    # round_trip parsing keeps save/load bit-identical for repr-style floats
    outcomes_df = pd.read_csv(outcome_file, float_precision="round_trip")
    if post_outcome_file is not None:
        post_df = pd.read_csv(post_outcome_file, float_precision="round_trip")
        if list(post_df.columns) != list(outcomes_df.columns):
            raise PanelError("post outcome table columns do not match pre table")
        if t0 != len(outcomes_df):
            raise PanelError(
                f"t0={t0} must equal the pre table row count {len(outcomes_df)} "
                "when a separate post table is given"
            )
        outcomes_df = pd.concat([outcomes_df, post_df], ignore_index=True)
    if outcomes_df.isna().any().any():
        raise PanelError("outcome table has missing cells")
    try:
        outcomes = outcomes_df.to_numpy(dtype=float)
    except (TypeError, ValueError) as exc:
        raise PanelError(f"non-numeric cell in outcome table: {exc}") from None

    assign_df = pd.read_csv(assignment_file)
    if assign_df.shape[1] != 2:
        raise PanelError("assignment table must have two columns (unit, intervention)")
    unit_labels = [str(c) for c in outcomes_df.columns]
    by_unit = {str(u): int(v) for u, v in zip(assign_df.iloc[:, 0], assign_df.iloc[:, 1])}
    missing = [u for u in unit_labels if u not in by_unit]
    if missing:
        raise PanelError(f"assignment table missing units: {missing}")
    if len(assign_df) != len(unit_labels):
        raise PanelError(
            f"assignment table has {len(assign_df)} rows for {len(unit_labels)} units"
        )
    assignments = np.array([by_unit[u] for u in unit_labels], dtype=int)
    if num_interventions is None:
        num_interventions = int(assignments.max()) + 1 if assignments.size else 1
    return ObservedPanel(
        outcomes=outcomes,
        t0=t0,
        assignments=assignments,
        num_interventions=num_interventions,
        unit_labels=unit_labels,
    )


def save_panel(panel: ObservedPanel, outcome_file, assignment_file) -> None:
    """Write a panel back to the CSV format read by :func:`load_panel`."""
    labels = panel.unit_labels or [f"unit_{n}" for n in range(panel.num_units)]
    pd.DataFrame(panel.outcomes, columns=labels).to_csv(outcome_file, index=False)
    pd.DataFrame(
        {"unit": labels, "intervention": panel.assignments}
    ).to_csv(assignment_file, index=False)


def panel_metadata(panel: ObservedPanel) -> dict:
    """JSON-ready summary of the panel's dimensions and donor groups."""
    return {
        "T": panel.num_periods,
        "T0": panel.pre_periods,
        "T1": panel.post_periods,
        "N": panel.num_units,
        "D": panel.num_interventions,
        "group_sizes": panel.group_sizes(),
    }
