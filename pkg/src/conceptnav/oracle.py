"""Randomized Viterbi-versus-enumeration verification battery."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from conceptnav.planning import ActionSet, Trajectory, brute_force_on_field, score_on_field, viterbi_on_field

TOLERANCE = 1e-9

Planner = Callable[[np.ndarray, tuple, int, ActionSet], Trajectory]


@dataclass
class OracleInstance:
    field_values: np.ndarray
    start: tuple
    horizon: int
    integer_valued: bool


@dataclass
class OracleReport:
    instances: int = 0
    max_abs_discrepancy: float = 0.0
    tie_mismatches: int = 0
    failures: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} instances={self.instances} "
                f"max_abs_discrepancy={self.max_abs_discrepancy:.3e} "
                f"tie_mismatches={self.tie_mismatches} failures={len(self.failures)}")


def random_instance(rng: np.random.Generator, max_size: int, max_horizon: int,
                    obstacle_rate: float = 0.2) -> OracleInstance:
    h = int(rng.integers(1, max_size + 1))
    w = int(rng.integers(1, max_size + 1))
    horizon = int(rng.integers(1, max_horizon + 1))
    integer_valued = bool(rng.random() < 0.5)
    if integer_valued:
        # Small integers force many exact ties and exact sums.
        values = rng.integers(-3, 2, size=(h, w)).astype(float)
    else:
        values = rng.normal(size=(h, w))
    values[rng.random((h, w)) < obstacle_rate] = -np.inf
    finite = np.argwhere(np.isfinite(values))
    if len(finite) == 0:
        values[0, 0] = 0.0
        finite = np.array([[0, 0]])
    row, col = finite[int(rng.integers(len(finite)))]
    return OracleInstance(values, (int(col), int(row)), horizon, integer_valued)


def check_instance(inst: OracleInstance, actions: ActionSet, planner: Planner,
                   report: OracleReport, label: str = "") -> None:
    expected = brute_force_on_field(inst.field_values, inst.start, inst.horizon, actions)
    try:
        got = planner(inst.field_values, inst.start, inst.horizon, actions)
    except Exception as exc:  # any planner crash is a verification failure
        report.failures.append(f"{label}: planner raised {exc!r}")
        return
    report.instances += 1
    if len(got.actions) != inst.horizon or got.states[0] != inst.start:
        report.failures.append(f"{label}: wrong trajectory shape or start")
        return
    try:
        _, rescored = score_on_field(got.states, inst.field_values, inst.horizon)
    except ValueError as exc:
        report.failures.append(f"{label}: invalid trajectory ({exc})")
        return
    for t, a in enumerate(got.actions):
        (c0, r0), (c1, r1) = got.states[t], got.states[t + 1]
        if (c1 - c0, r1 - r0) != actions.offsets[a]:
            report.failures.append(f"{label}: step {t + 1} does not follow its action")
            return
    diff = max(abs(got.cumulative_log_likelihood - expected.cumulative_log_likelihood),
               abs(rescored - expected.cumulative_log_likelihood))
    report.max_abs_discrepancy = max(report.max_abs_discrepancy, diff)
    if diff > TOLERANCE:
        report.failures.append(
            f"{label}: score {got.cumulative_log_likelihood!r} != optimum "
            f"{expected.cumulative_log_likelihood!r}"
        )
        return
    if got.actions != expected.actions:
        if inst.integer_valued:
            # Sums of small integers are exact, so tie-breaking must agree exactly.
            report.failures.append(f"{label}: tie broken differently on an exact-arithmetic instance")
        else:
            report.tie_mismatches += 1


def run_battery(n_instances: int = 100, max_size: int = 5, max_horizon: int = 5, seed: int = 0,
                actions: Optional[ActionSet] = None, planner: Planner = viterbi_on_field) -> OracleReport:
    actions = actions or ActionSet.von_neumann()
    rng = np.random.default_rng(seed)
    report = OracleReport()
    for n in range(n_instances):
        inst = random_instance(rng, max_size, max_horizon)
        check_instance(inst, actions, planner, report, label=f"instance {n}")
    return report
