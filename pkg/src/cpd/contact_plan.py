"""Contact plan representation, feasibility, initialization, and moves.

A contact plan assigns each time step a set of active links, stored as
sorted (i, j) pairs with i < j.  Feasibility means: every active link is
visible, satellites respect the per-step degree cap, and each satellite's
horizon totals stay within the inter-satellite and ground-link budgets.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

import numpy as np

from .errors import FileFormatError, PlanError
from .scenario import Scenario

logger = logging.getLogger(__name__)

PLAN_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Contact:
    """A maximal interval [t_start, t_end) during which a pair is linked."""

    a: int
    b: int
    t_start: int
    t_end: int

    def __post_init__(self) -> None:
        if not self.a < self.b:
            raise PlanError(f"contact endpoints must satisfy a < b, got ({self.a}, {self.b})")
        if not self.t_start < self.t_end:
            raise PlanError(
                f"contact window must satisfy t_start < t_end, got [{self.t_start}, {self.t_end})"
            )

    @property
    def duration_steps(self) -> int:
        return self.t_end - self.t_start


class MoveKind(Enum):
    ACTIVATE = "activate"
    DEACTIVATE = "deactivate"


@dataclass(frozen=True)
class MoveRecord:
    """One neighbor move: a primary toggle plus any repair cascade."""

    kind: MoveKind
    step: int
    edge: tuple[int, int]
    cascade: tuple[tuple[int, int, int], ...] = ()  # (t, i, j) removed by repair


@dataclass(frozen=True)
class Violation:
    family: str  # visibility | degree_cap | budget_isl | budget_gsl
    detail: str
    step: int | None = None
    node: int | None = None
    edge: tuple[int, int] | None = None


@dataclass
class ContactPlan:
    """Per-step active edge sets.  Value semantics: moves return new plans."""

    step_count: int
    n_nodes: int
    steps: list[set[tuple[int, int]]] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.steps:
            self.steps = [set() for _ in range(self.step_count)]
        if len(self.steps) != self.step_count:
            raise PlanError(
                f"plan lists {len(self.steps)} steps but step_count is {self.step_count}"
            )

    def clone(self) -> "ContactPlan":
        return ContactPlan(
            step_count=self.step_count,
            n_nodes=self.n_nodes,
            steps=[set(edges) for edges in self.steps],
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ContactPlan):
            return NotImplemented
        return (
            self.step_count == other.step_count
            and self.n_nodes == other.n_nodes
            and self.steps == other.steps
        )

    @property
    def active_count(self) -> int:
        return sum(len(edges) for edges in self.steps)

    def is_active(self, t: int, i: int, j: int) -> bool:
        return (min(i, j), max(i, j)) in self.steps[t]

    def triples(self) -> list[tuple[int, int, int]]:
        """All active (t, i, j) sorted, with i < j."""
        out = []
        for t, edges in enumerate(self.steps):
            out.extend((t, i, j) for i, j in sorted(edges))
        return out

    def adjacency(self, t: int) -> np.ndarray:
        """Dense symmetric adjacency matrix for one step."""
        a = np.zeros((self.n_nodes, self.n_nodes), dtype=bool)
        for i, j in self.steps[t]:
            a[i, j] = a[j, i] = True
        return a


def empty_plan(scenario: Scenario) -> ContactPlan:
    return ContactPlan(step_count=scenario.grid.step_count, n_nodes=scenario.n_nodes)


# ---------------------------------------------------------------------------
# Feasibility
# ---------------------------------------------------------------------------


def _slot_counts(plan: ContactPlan, scenario: Scenario) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(per-step satellite degree, per-satellite ISL slots, per-satellite GSL slots)."""
    n_sats = scenario.n_satellites
    degree = np.zeros((plan.step_count, plan.n_nodes), dtype=np.int32)
    isl = np.zeros(plan.n_nodes, dtype=np.int32)
    gsl = np.zeros(plan.n_nodes, dtype=np.int32)
    for t, edges in enumerate(plan.steps):
        for i, j in edges:
            degree[t, i] += 1
            degree[t, j] += 1
            if j < n_sats:
                isl[i] += 1
                isl[j] += 1
            else:
                gsl[i] += 1
    return degree, isl, gsl


def check_feasible(plan: ContactPlan, scenario: Scenario) -> list[Violation]:
    """All constraint violations; empty list means the plan is feasible."""
    if plan.step_count != scenario.grid.step_count or plan.n_nodes != scenario.n_nodes:
        raise PlanError(
            f"plan is {plan.step_count} steps x {plan.n_nodes} nodes; scenario expects "
            f"{scenario.grid.step_count} x {scenario.n_nodes}"
        )
    n_sats = scenario.n_satellites
    violations: list[Violation] = []

    for t, edges in enumerate(plan.steps):
        for i, j in edges:
            if not (0 <= i < j < plan.n_nodes):
                raise PlanError(f"step {t}: malformed edge ({i}, {j})")
            if not scenario.visibility[t, i, j]:
                violations.append(
                    Violation(
                        family="visibility",
                        detail=f"link ({i},{j}) active at step {t} but not visible",
                        step=t,
                        edge=(i, j),
                    )
                )

    degree, isl, gsl = _slot_counts(plan, scenario)
    cap = scenario.per_step_degree_cap
    for t, sat in zip(*np.nonzero(degree[:, :n_sats] > cap)):
        violations.append(
            Violation(
                family="degree_cap",
                detail=f"satellite {sat} has degree {degree[t, sat]} > cap {cap} at step {t}",
                step=int(t),
                node=int(sat),
            )
        )
    for sat in np.nonzero(isl[:n_sats] > scenario.budget_isl)[0]:
        violations.append(
            Violation(
                family="budget_isl",
                detail=f"satellite {sat} uses {isl[sat]} ISL slots > budget {scenario.budget_isl}",
                node=int(sat),
            )
        )
    for sat in np.nonzero(gsl[:n_sats] > scenario.budget_gsl)[0]:
        violations.append(
            Violation(
                family="budget_gsl",
                detail=f"satellite {sat} uses {gsl[sat]} GSL slots > budget {scenario.budget_gsl}",
                node=int(sat),
            )
        )
    return violations


def require_feasible(plan: ContactPlan, scenario: Scenario) -> None:
    from .errors import InfeasiblePlanError

    violations = check_feasible(plan, scenario)
    if violations:
        raise InfeasiblePlanError(
            f"plan violates {len(violations)} constraint(s); first: {violations[0].detail}",
            violations,
        )


# ---------------------------------------------------------------------------
# Repair
# ---------------------------------------------------------------------------


def _repair(
    plan: ContactPlan,
    scenario: Scenario,
    protect: tuple[int, int, int] | None = None,
) -> list[tuple[int, int, int]]:
    """Recursively deactivate links until the plan is feasible.

    While any degree-cap or budget constraint is violated, remove the active
    edge (never ``protect``) whose removal resolves a violation, choosing the
    oldest step first and the lexicographically lowest edge within it.  The
    removal order is what makes repair deterministic.  Mutates ``plan`` in
    place and returns the removed (t, i, j) triples in removal order.
    """
    n_sats = scenario.n_satellites
    cap = scenario.per_step_degree_cap
    degree, isl, gsl = _slot_counts(plan, scenario)
    removed: list[tuple[int, int, int]] = []

    def removable(t: int, i: int, j: int) -> bool:
        return protect is None or (t, i, j) != protect

    while True:
        candidates: set[tuple[int, int, int]] = set()

        over_cap = np.argwhere(degree[:, :n_sats] > cap)
        for t, sat in over_cap:
            for i, j in plan.steps[t]:
                if (i == sat or j == sat) and removable(int(t), i, j):
                    candidates.add((int(t), i, j))

        for sat in np.nonzero(isl[:n_sats] > scenario.budget_isl)[0]:
            for t, edges in enumerate(plan.steps):
                for i, j in edges:
                    if j < n_sats and (i == sat or j == sat) and removable(t, i, j):
                        candidates.add((t, i, j))

        for sat in np.nonzero(gsl[:n_sats] > scenario.budget_gsl)[0]:
            for t, edges in enumerate(plan.steps):
                for i, j in edges:
                    if j >= n_sats and i == sat and removable(t, i, j):
                        candidates.add((t, i, j))

        if not candidates:
            break

        t, i, j = min(candidates)
        plan.steps[t].discard((i, j))
        removed.append((t, i, j))
        degree[t, i] -= 1
        degree[t, j] -= 1
        if j < n_sats:
            isl[i] -= 1
            isl[j] -= 1
        else:
            gsl[i] -= 1

    return removed


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------


def _greedy_step_matching(
    visible_pairs: np.ndarray, n_sats: int, cap: int, rng: np.random.Generator
) -> set[tuple[int, int]]:
    """Random-order greedy maximal matching with satellite degree <= cap."""
    chosen: set[tuple[int, int]] = set()
    degree: dict[int, int] = {}
    order = rng.permutation(len(visible_pairs))
    for idx in order:
        i, j = int(visible_pairs[idx, 0]), int(visible_pairs[idx, 1])
        if degree.get(i, 0) >= cap and i < n_sats:
            continue
        if degree.get(j, 0) >= cap and j < n_sats:
            continue
        chosen.add((i, j))
        degree[i] = degree.get(i, 0) + 1
        degree[j] = degree.get(j, 0) + 1
    return chosen


def _exact_step_matching(visible_pairs: np.ndarray) -> set[tuple[int, int]]:
    """Maximum-cardinality matching (every node used at most once)."""
    import networkx as nx

    graph = nx.Graph()
    graph.add_edges_from((int(i), int(j)) for i, j in visible_pairs)
    matching = nx.max_weight_matching(graph, maxcardinality=True)
    return {(min(u, v), max(u, v)) for u, v in matching}


def initial_plan(
    scenario: Scenario, seed: int, *, exact_matching: bool = False
) -> ContactPlan:
    """Per-step matching on the visibility graph, then budget repair.

    The default draws a seeded random-order greedy maximal matching per step;
    ``exact_matching`` switches to an augmenting-path maximum matching (which
    also limits ground stations to one link per step and requires cap=1).
    Budgets are then enforced by recursive deactivation, so the result always
    passes ``check_feasible``.
    """
    if exact_matching and scenario.per_step_degree_cap != 1:
        logger.warning("exact matching supports cap=1 only; falling back to greedy")
        exact_matching = False

    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x91A]))
    plan = empty_plan(scenario)
    for t in range(scenario.grid.step_count):
        pairs = np.argwhere(np.triu(scenario.visibility[t], k=1))
        if len(pairs) == 0:
            continue
        if exact_matching:
            plan.steps[t] = _exact_step_matching(pairs)
        else:
            plan.steps[t] = _greedy_step_matching(
                pairs, scenario.n_satellites, scenario.per_step_degree_cap, rng
            )

    removed = _repair(plan, scenario)
    if removed:
        logger.debug("initial plan: budget repair removed %d link slots", len(removed))
    return plan


# ---------------------------------------------------------------------------
# Neighbor moves
# ---------------------------------------------------------------------------


def random_neighbor(
    plan: ContactPlan, scenario: Scenario, rng: np.random.Generator
) -> tuple[ContactPlan, MoveRecord] | None:
    """One uniformly chosen toggle at a visible (step, edge), repaired.

    Activating may trigger a repair cascade; deactivating never does
    (constraints are downward-closed).  Returns None when the scenario has
    no visible (step, edge) slots at all, i.e. no legal move exists.
    """
    candidates = scenario.visible_triples()
    if len(candidates) == 0:
        return None
    t, i, j = (int(x) for x in candidates[int(rng.integers(len(candidates)))])

    new_plan = plan.clone()
    if (i, j) in new_plan.steps[t]:
        new_plan.steps[t].discard((i, j))
        return new_plan, MoveRecord(kind=MoveKind.DEACTIVATE, step=t, edge=(i, j))

    new_plan.steps[t].add((i, j))
    cascade = _repair(new_plan, scenario, protect=(t, i, j))
    return new_plan, MoveRecord(
        kind=MoveKind.ACTIVATE, step=t, edge=(i, j), cascade=tuple(cascade)
    )


def revert_move(plan: ContactPlan, record: MoveRecord) -> ContactPlan:
    """Undo a move, restoring the pre-move plan bit-exactly."""
    restored = plan.clone()
    if record.kind is MoveKind.ACTIVATE:
        restored.steps[record.step].discard(record.edge)
        for t, i, j in record.cascade:
            restored.steps[t].add((i, j))
    else:
        restored.steps[record.step].add(record.edge)
    return restored


# ---------------------------------------------------------------------------
# Contact intervals
# ---------------------------------------------------------------------------


def to_contacts(plan: ContactPlan) -> list[Contact]:
    """Maximal active intervals per edge, sorted by (t_start, a, b)."""
    by_edge: dict[tuple[int, int], list[int]] = {}
    for t, edges in enumerate(plan.steps):
        for edge in edges:
            by_edge.setdefault(edge, []).append(t)

    contacts: list[Contact] = []
    for (a, b), steps in by_edge.items():
        steps.sort()
        run_start = prev = steps[0]
        for t in steps[1:]:
            if t == prev + 1:
                prev = t
                continue
            contacts.append(Contact(a=a, b=b, t_start=run_start, t_end=prev + 1))
            run_start = prev = t
        contacts.append(Contact(a=a, b=b, t_start=run_start, t_end=prev + 1))

    contacts.sort(key=lambda c: (c.t_start, c.a, c.b))
    return contacts


def from_contacts(
    contacts: Iterable[Contact], step_count: int, n_nodes: int
) -> ContactPlan:
    plan = ContactPlan(step_count=step_count, n_nodes=n_nodes)
    for contact in contacts:
        if contact.t_end > step_count or contact.b >= n_nodes:
            raise PlanError(f"contact {contact} exceeds plan dimensions")
        for t in range(contact.t_start, contact.t_end):
            plan.steps[t].add((contact.a, contact.b))
    return plan


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def plan_to_payload(plan: ContactPlan, metadata: dict | None = None) -> dict:
    payload = {
        "version": PLAN_FORMAT_VERSION,
        "steps": plan.step_count,
        "contacts": [[t, i, j] for t, i, j in plan.triples()],
        "metadata": {"n_nodes": plan.n_nodes, **(metadata or {})},
    }
    return payload


def save_plan(plan: ContactPlan, path: str, metadata: dict | None = None) -> None:
    blob = json.dumps(plan_to_payload(plan, metadata), sort_keys=True, separators=(",", ":"))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(blob + "\n")


def plan_from_payload(payload: dict, n_nodes: int | None = None) -> ContactPlan:
    if not isinstance(payload, dict) or payload.get("version") != PLAN_FORMAT_VERSION:
        raise FileFormatError(
            f"plan file: unsupported version {payload.get('version')!r} "
            f"(expected {PLAN_FORMAT_VERSION})"
        )
    for key in ("steps", "contacts"):
        if key not in payload:
            raise FileFormatError(f"plan file: missing field {key!r}")
    step_count = int(payload["steps"])
    triples = payload["contacts"]
    if n_nodes is None:
        n_nodes = payload.get("metadata", {}).get("n_nodes")
        if n_nodes is None:
            n_nodes = 1 + max((max(i, j) for _, i, j in triples), default=0)
    plan = ContactPlan(step_count=step_count, n_nodes=int(n_nodes))
    for entry in triples:
        if not (isinstance(entry, list) and len(entry) == 3):
            raise FileFormatError("plan file: contacts entries must be [t,i,j] triples")
        t, i, j = (int(x) for x in entry)
        if not (0 <= t < step_count and 0 <= i < j < plan.n_nodes):
            raise FileFormatError(f"plan file: triple [{t},{i},{j}] out of range")
        plan.steps[t].add((i, j))
    return plan


def load_plan(path: str, n_nodes: int | None = None) -> ContactPlan:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FileFormatError(f"plan file {path}: invalid JSON at line {exc.lineno}") from exc
    return plan_from_payload(payload, n_nodes)
