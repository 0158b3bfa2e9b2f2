"""What a branching problem must provide to run under the framework.

Values are minimised; a maximisation problem negates its objective.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

INF = 2**63 - 1  # "no solution yet"; fits the signed 8-byte wire value


@dataclass
class Branch:
    """Outcome of one branching step.

    ``Branch()`` is a pruned node, ``Branch(solution=s)`` a terminal case and
    ``Branch(children=[...])`` a split. A node may carry both a solution and
    children; the children are only explored when the adapter sets
    ``explore_after_solution``.
    """

    children: Sequence[Any] = ()
    solution: Any = None

    @property
    def pruned(self) -> bool:
        return self.solution is None and not self.children


class ProblemAdapter:
    """Base class for problems. Subclasses override the branching hooks."""

    max_branching_factor: int = 2
    explore_after_solution: bool = False

    def branch(self, instance: Any, best_value: int) -> Branch:
        raise NotImplementedError

    def serialize(self, instance: Any) -> bytes:
        raise NotImplementedError

    def deserialize(self, data: bytes) -> Any:
        raise NotImplementedError

    def priority(self, instance: Any) -> int:
        return 0

    def solution_value(self, solution: Any) -> int:
        raise NotImplementedError

    def serialize_solution(self, solution: Any) -> bytes:
        raise NotImplementedError

    def deserialize_solution(self, data: bytes) -> Any:
        raise NotImplementedError


def _outcome_key(adapter: ProblemAdapter, outcome: Branch):
    if outcome.pruned:
        return ("pruned",)
    kids = tuple(adapter.serialize(c) for c in outcome.children)
    sol = None if outcome.solution is None else adapter.solution_value(outcome.solution)
    return ("branch", sol, kids)


@dataclass
class AdapterReport:
    checks: dict[str, bool] = field(default_factory=dict)
    details: dict[str, str] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(self.checks.values())

    def fail(self, name: str, why: str) -> None:
        self.checks[name] = False
        self.details.setdefault(name, why)


def validate_adapter(adapter: ProblemAdapter, samples: Iterable[Any], best_value: int = INF,
                     max_depth: int = 3) -> AdapterReport:
    """Exercise an adapter on sample instances and their first few descendants.

    Checks serialize/deserialize round trips (same branch outcome), the
    declared branching factor, and that ``priority`` is a pure function.
    Report-only: never raises on a failed check.
    """
    report = AdapterReport(checks={"round_trip": True, "branching_factor": True,
                                   "priority_pure": True})
    frontier = [(s, 0) for s in samples]
    while frontier:
        inst, depth = frontier.pop()
        try:
            data = adapter.serialize(inst)
            clone = adapter.deserialize(data)
            a = _outcome_key(adapter, adapter.branch(inst, best_value))
            b = _outcome_key(adapter, adapter.branch(clone, best_value))
            if a != b or adapter.serialize(clone) != data:
                report.fail("round_trip", f"branch outcome differs after round trip at depth {depth}")
        except Exception as e:  # report-only by contract
            report.fail("round_trip", f"{type(e).__name__}: {e}")
            continue
        p1, p2, p3 = adapter.priority(inst), adapter.priority(inst), adapter.priority(clone)
        if not (p1 == p2 == p3):
            report.fail("priority_pure", f"priority gave {p1}, {p2}, {p3}")
        outcome = adapter.branch(inst, best_value)
        k = len(outcome.children)
        if k > adapter.max_branching_factor:
            report.fail("branching_factor",
                        f"{k} children with max_branching_factor={adapter.max_branching_factor}")
        if depth < max_depth:
            frontier.extend((c, depth + 1) for c in outcome.children)
    return report
