"""Best-delivery-time routing over a contact plan.

Two independent engines compute the earliest step a message sent from a
source at step t can reach a destination:

* contact-graph Dijkstra (`cgds`): searches directed contacts, returns the
  full route (hop sequence, transmit windows, volume);
* a time-expanded sweep (`oracle_bdt`): expands (node, step) states layer by
  layer; structurally different, used to cross-check the first.

Time semantics, shared by both: a transfer performed during step tau uses
that step's links and lands at the far node at step tau + 1.  Delivery must
happen within the horizon, so the last useful transmit step is
step_count - 2.  A node may receive in one step and forward in the next
(store-and-forward), never both within a single step.

`delivery_grid` is the batch engine behind objective evaluation: one numpy
label-setting sweep per source scores every start step at once.  Its
contract is exact agreement with `cgds`, which the test suite enforces.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .contact_plan import Contact, ContactPlan, to_contacts
from .scenario import Scenario


@dataclass(frozen=True)
class Route:
    """A delivered route: hop contacts plus derived timing fields."""

    source: int
    destination: int
    start_step: int
    delivery_step: int
    bdt_minutes: float
    hops: tuple[Contact, ...]
    transfer_steps: tuple[int, ...]  # transmit step used on each hop
    tx_win: tuple[int, int]  # first-hop transmit window keeping hops feasible
    volume: float  # min over hops of window length, 1 unit per step


@dataclass(frozen=True)
class BdtResult:
    """Best delivery time for one (source, destination, start step) query."""

    source: int
    destination: int
    start_step: int
    delivery_step: int | None  # None when unreachable within the horizon
    bdt_minutes: float | None

    @property
    def reachable(self) -> bool:
        return self.delivery_step is not None


class ContactGraph:
    """Immutable routing view of a contact list.

    Vertices are the stored contacts plus one synthetic self-contact per
    node spanning the whole horizon; the self-contact acts as the root when
    the node is a source and as the terminal when it is a destination.
    Adjacency is implicit: from a node reached at step tau, every directed
    contact leaving that node and still open after tau is a successor.
    """

    def __init__(self, contacts: Sequence[Contact], n_nodes: int, step_count: int,
                 step_seconds: float):
        ordered = list(contacts)
        keys = [(c.t_start, c.a, c.b) for c in ordered]
        if keys != sorted(keys):
            raise ValueError("contacts must be sorted by (t_start, a, b)")
        for c in ordered:
            if c.b >= n_nodes or c.t_end > step_count:
                raise ValueError(f"contact {c} exceeds graph dimensions")

        self.contacts: tuple[Contact, ...] = tuple(ordered)
        self.n_nodes = n_nodes
        self.step_count = step_count
        self.step_seconds = float(step_seconds)

        # Directed twins: indices 2k and 2k+1 mirror contact k.
        m = len(ordered)
        self.tails = np.empty(2 * m, dtype=np.int32)
        self.heads = np.empty(2 * m, dtype=np.int32)
        self.starts = np.empty(2 * m, dtype=np.int32)
        self.ends = np.empty(2 * m, dtype=np.int32)
        for k, c in enumerate(ordered):
            self.tails[2 * k], self.heads[2 * k] = c.a, c.b
            self.tails[2 * k + 1], self.heads[2 * k + 1] = c.b, c.a
            self.starts[2 * k] = self.starts[2 * k + 1] = c.t_start
            self.ends[2 * k] = self.ends[2 * k + 1] = c.t_end

        by_tail: list[list[int]] = [[] for _ in range(n_nodes)]
        for d in range(2 * m):
            by_tail[self.tails[d]].append(d)
        self.by_tail: tuple[tuple[int, ...], ...] = tuple(tuple(v) for v in by_tail)

    @property
    def vertex_count(self) -> int:
        """Stored contacts plus the synthetic self-contact of every node."""
        return self.n_nodes + len(self.contacts)

    def check_node(self, node: int) -> None:
        if not 0 <= node < self.n_nodes:
            raise ValueError(f"unknown node {node} (graph has {self.n_nodes} nodes)")


def build_contact_graph(contacts: Sequence[Contact], scenario: Scenario) -> ContactGraph:
    return ContactGraph(
        contacts,
        n_nodes=scenario.n_nodes,
        step_count=scenario.grid.step_count,
        step_seconds=scenario.grid.step_seconds,
    )


def contact_graph_for_plan(plan: ContactPlan, scenario: Scenario) -> ContactGraph:
    return build_contact_graph(to_contacts(plan), scenario)


def _steps_to_minutes(graph: ContactGraph, steps: int) -> float:
    return steps * graph.step_seconds / 60.0


def _empty_route(graph: ContactGraph, node: int, t_start: int) -> Route:
    return Route(
        source=node,
        destination=node,
        start_step=t_start,
        delivery_step=t_start,
        bdt_minutes=0.0,
        hops=(),
        transfer_steps=(),
        tx_win=(t_start, t_start),
        volume=math.inf,
    )


def _reconstruct(graph: ContactGraph, pred: dict[int, int], last: int,
                 source: int, destination: int, t_start: int) -> Route:
    chain: list[int] = []
    d = last
    while d != -1:
        chain.append(d)
        d = pred[d]
    chain.reverse()

    hops = tuple(graph.contacts[d // 2] for d in chain)
    transfer_steps: list[int] = []
    at = t_start
    for d in chain:
        tau = max(at, int(graph.starts[d]))
        transfer_steps.append(tau)
        at = tau + 1
    delivery_step = at

    # Latest transmit windows, walked backward from the final hop.
    latest = graph.step_count - 2
    for d in reversed(chain):
        latest = min(latest, int(graph.ends[d]) - 1)
        latest -= 1
    latest += 1  # the loop subtracts once past the first hop

    volume = min(float(c.t_end - c.t_start) for c in hops)
    return Route(
        source=source,
        destination=destination,
        start_step=t_start,
        delivery_step=delivery_step,
        bdt_minutes=_steps_to_minutes(graph, delivery_step - t_start),
        hops=hops,
        transfer_steps=tuple(transfer_steps),
        tx_win=(transfer_steps[0], latest),
        volume=volume,
    )


def _dijkstra(graph: ContactGraph, source: int, t_start: int,
              stop_at: int | None = None):
    """Label-setting over directed contacts.

    Returns (arrival_by_node, pred, settled_contact_by_node).  When
    ``stop_at`` is given the search halts as soon as that node is settled.
    Ties are broken by (arrival, contact start, contact endpoints), making
    the selected routes deterministic.
    """
    last_launch = graph.step_count - 2
    label: dict[int, int] = {}  # directed contact -> best arrival at its head
    pred: dict[int, int] = {}
    arrival_by_node: dict[int, int] = {source: t_start}
    via_contact: dict[int, int] = {}
    heap: list[tuple[int, int, int, int, int]] = []

    def relax_from(node: int, tau0: int, from_d: int) -> None:
        for e in graph.by_tail[node]:
            tau = max(tau0, int(graph.starts[e]))
            if tau > int(graph.ends[e]) - 1 or tau > last_launch:
                continue
            cand = tau + 1
            if cand < label.get(e, graph.step_count + 1):
                label[e] = cand
                pred[e] = from_d
                heapq.heappush(
                    heap,
                    (cand, int(graph.starts[e]), int(graph.tails[e]),
                     int(graph.heads[e]), e),
                )

    relax_from(source, t_start, -1)
    settled: set[int] = set()
    while heap:
        arr, _, _, head, d = heapq.heappop(heap)
        if d in settled or arr > label[d]:
            continue
        settled.add(d)
        if head not in arrival_by_node:
            arrival_by_node[head] = arr
            via_contact[head] = d
            if head == stop_at:
                break
        relax_from(head, arr, d)

    return arrival_by_node, pred, via_contact


def cgds(graph: ContactGraph, source: int, destination: int, t_start: int) -> Route | None:
    """Contact-graph Dijkstra: best route, or None when unreachable."""
    graph.check_node(source)
    graph.check_node(destination)
    if not 0 <= t_start < graph.step_count:
        raise ValueError(f"t_start {t_start} outside [0, {graph.step_count})")
    if source == destination:
        return _empty_route(graph, source, t_start)

    _, pred, via_contact = _dijkstra(graph, source, t_start, stop_at=destination)
    if destination not in via_contact:
        return None
    return _reconstruct(graph, pred, via_contact[destination], source, destination, t_start)


def bdt_all_destinations(graph: ContactGraph, source: int, t_start: int) -> list[BdtResult]:
    """One Dijkstra sweep scoring every destination; matches cgds per node."""
    graph.check_node(source)
    if not 0 <= t_start < graph.step_count:
        raise ValueError(f"t_start {t_start} outside [0, {graph.step_count})")

    arrival_by_node, _, _ = _dijkstra(graph, source, t_start)
    results = []
    for dest in range(graph.n_nodes):
        step = arrival_by_node.get(dest)
        results.append(
            BdtResult(
                source=source,
                destination=dest,
                start_step=t_start,
                delivery_step=step,
                bdt_minutes=None if step is None else _steps_to_minutes(graph, step - t_start),
            )
        )
    return results


def oracle_bdt(plan: ContactPlan, scenario: Scenario, source: int, destination: int,
               t_start: int) -> BdtResult:
    """Earliest arrival over the time-expanded graph, exact by construction.

    States are (node, step); waiting keeps the node, transferring during
    step tau follows any link active at tau and lands at tau + 1.  The
    expansion keeps a reachable-node set per layer, which is the shortest
    arrival computation for a layered unit-cost graph.
    """
    n = plan.n_nodes
    if not (0 <= source < n and 0 <= destination < n):
        raise ValueError(f"unknown node (graph has {n} nodes)")
    if not 0 <= t_start < plan.step_count:
        raise ValueError(f"t_start {t_start} outside [0, {plan.step_count})")
    step_minutes = scenario.grid.step_seconds / 60.0

    def result(step: int | None) -> BdtResult:
        return BdtResult(
            source=source,
            destination=destination,
            start_step=t_start,
            delivery_step=step,
            bdt_minutes=None if step is None else (step - t_start) * step_minutes,
        )

    reached = {source}
    if destination in reached:
        return result(t_start)
    for tau in range(t_start, plan.step_count - 1):
        frontier = set()
        for i, j in plan.steps[tau]:
            if i in reached and j not in reached:
                frontier.add(j)
            if j in reached and i not in reached:
                frontier.add(i)
        if not frontier:
            continue
        reached |= frontier
        if destination in reached:
            return result(tau + 1)
    return result(None)


def delivery_grid(plan: ContactPlan, sources: Sequence[int]) -> np.ndarray:
    """Earliest arrival for every (source, start step, node) in one batch.

    Returns an int16 array of shape (len(sources), step_count, n_nodes)
    where cell [s, t0, j] is the earliest step a message leaving sources[s]
    at step t0 reaches node j, or step_count when unreachable.  Agrees
    exactly with cgds per query; the batch formulation exists because the
    objective needs every start step of every required pair.

    The sweep settles arrival levels in ascending order (a Dial/bucket
    Dijkstra).  A contact transmitting from a node settled at level `a`
    always lands at max(a, t_start) + 1 > a, a value independent of which
    start step's problem is being solved - so all start steps share one
    pass, kept as rows of the label matrix.
    """
    n_t, n = plan.step_count, plan.n_nodes
    if n_t >= np.iinfo(np.int16).max:
        raise ValueError("step count too large for int16 labels")

    contacts = to_contacts(plan)
    m = len(contacts)
    tails = np.empty(2 * m, dtype=np.int32)
    heads = np.empty(2 * m, dtype=np.int32)
    starts = np.empty(2 * m, dtype=np.int32)
    ends = np.empty(2 * m, dtype=np.int32)
    for k, c in enumerate(contacts):
        tails[2 * k], heads[2 * k] = c.a, c.b
        tails[2 * k + 1], heads[2 * k + 1] = c.b, c.a
        starts[2 * k] = starts[2 * k + 1] = c.t_start
        ends[2 * k] = ends[2 * k + 1] = c.t_end

    # Per-level firing tables, shared by every source: a contact transmits at
    # tau = max(level, start), which must stay within both the contact window
    # and the last useful transmit step.
    per_level: list[tuple[np.ndarray, np.ndarray, np.ndarray] | None] = []
    latest_tau = np.minimum(ends - 1, n_t - 2)
    for level in range(n_t - 1):
        tau = np.maximum(level, starts)
        usable = tau <= latest_tau
        if usable.any():
            per_level.append(
                (tails[usable], heads[usable], (tau[usable] + 1).astype(np.int16))
            )
        else:
            per_level.append(None)

    out = np.empty((len(sources), n_t, n), dtype=np.int16)
    for s_idx, source in enumerate(sources):
        if not 0 <= source < n:
            raise ValueError(f"unknown node {source} (plan has {n} nodes)")
        labels = np.full((n_t, n), n_t, dtype=np.int16)
        labels[np.arange(n_t), source] = np.arange(n_t, dtype=np.int16)
        labels_t = labels.T  # (n, n_t) view shared with labels

        for level in range(n_t - 1):
            if per_level[level] is None:
                continue
            frontier = labels == level
            settled_now = frontier.any(axis=0)
            if not settled_now.any():
                continue
            lv_tails, lv_heads, lv_value = per_level[level]
            firing_cols = settled_now[lv_tails]
            if not firing_cols.any():
                continue
            cand = np.where(
                frontier[:, lv_tails[firing_cols]],
                lv_value[firing_cols][None, :],
                np.int16(n_t),
            )
            np.minimum.at(labels_t, lv_heads[firing_cols], cand.T)

        out[s_idx] = labels
    return out
