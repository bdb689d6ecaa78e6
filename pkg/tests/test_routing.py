"""Routing tests: contact-graph Dijkstra cross-checked against a
time-expanded oracle, plus the batched delivery grid."""

import numpy as np
import pytest

from cpd.contact_plan import Contact, ContactPlan
from cpd.routing import (
    ContactGraph,
    bdt_all_destinations,
    build_contact_graph,
    cgds,
    contact_graph_for_plan,
    delivery_grid,
    oracle_bdt,
)
from cpd.scenario import Scenario, TimeGrid


def full_vis_scenario(n_nodes: int, steps: int, step_seconds: float = 60.0) -> Scenario:
    """All-satellite scenario with everything visible (routing ignores budgets)."""
    vis = np.ones((steps, n_nodes, n_nodes), dtype=bool)
    for t in range(steps):
        np.fill_diagonal(vis[t], False)
    return Scenario(
        grid=TimeGrid(step_count=steps, step_seconds=step_seconds),
        n_satellites=n_nodes,
        n_stations=0,
        visibility=vis,
        requirements=tuple(() for _ in range(n_nodes)),
        budget_isl=10**6,
        budget_gsl=10**6,
        per_step_degree_cap=n_nodes,
    )


def graph_of(contacts, n_nodes, steps, step_seconds=60.0) -> ContactGraph:
    return ContactGraph(contacts, n_nodes=n_nodes, step_count=steps, step_seconds=step_seconds)


def random_plan(rng: np.random.Generator, n_nodes: int, steps: int, density: float) -> ContactPlan:
    plan = ContactPlan(step_count=steps, n_nodes=n_nodes)
    pairs = [(i, j) for i in range(n_nodes) for j in range(i + 1, n_nodes)]
    for t in range(steps):
        for pair in pairs:
            if rng.random() < density:
                plan.steps[t].add(pair)
    return plan


def replay_first_transmit(hops, first_tau: int, step_count: int) -> bool:
    """Can the hop sequence still deliver if the first transmit is first_tau?"""
    last_launch = step_count - 2
    if not (hops[0].t_start <= first_tau <= hops[0].t_end - 1 and first_tau <= last_launch):
        return False
    at = first_tau + 1
    for hop in hops[1:]:
        tau = max(at, hop.t_start)
        if tau > hop.t_end - 1 or tau > last_launch:
            return False
        at = tau + 1
    return True


class TestGraphBasics:
    def test_empty_contact_list_gives_only_self_contacts(self):
        graph = graph_of([], n_nodes=4, steps=10)
        assert graph.contacts == ()
        assert graph.vertex_count == 4
        assert cgds(graph, 0, 3, 0) is None

    def test_single_contact_has_one_outgoing_edge_from_source(self):
        graph = graph_of([Contact(0, 1, 0, 5)], n_nodes=3, steps=10)
        assert graph.vertex_count == 3 + 1
        assert len(graph.by_tail[0]) == 1
        assert graph.heads[graph.by_tail[0][0]] == 1
        assert len(graph.by_tail[2]) == 0

    def test_contacts_must_be_sorted(self):
        with pytest.raises(ValueError, match="sorted"):
            graph_of([Contact(0, 1, 5, 6), Contact(0, 1, 0, 2)], n_nodes=2, steps=10)

    def test_contact_beyond_horizon_rejected(self):
        with pytest.raises(ValueError, match="dimensions"):
            graph_of([Contact(0, 1, 0, 11)], n_nodes=2, steps=10)

    def test_unknown_node_and_bad_step_raise(self):
        graph = graph_of([], n_nodes=3, steps=5)
        with pytest.raises(ValueError, match="unknown node"):
            cgds(graph, 7, 0, 0)
        with pytest.raises(ValueError, match="t_start"):
            cgds(graph, 0, 1, 5)


class TestCgdsSmallCases:
    def test_source_equals_destination(self):
        graph = graph_of([], n_nodes=2, steps=5)
        route = cgds(graph, 1, 1, 3)
        assert route.delivery_step == 3
        assert route.bdt_minutes == 0.0
        assert route.hops == ()

    def test_direct_contact_delivers_next_step(self):
        graph = graph_of([Contact(0, 1, 0, 5)], n_nodes=2, steps=10)
        route = cgds(graph, 0, 1, 2)
        assert route.delivery_step == 3
        assert route.bdt_minutes == 1.0  # one 60 s step
        assert len(route.hops) == 1
        assert route.transfer_steps == (2,)

    def test_two_hop_chain_with_waiting(self):
        contacts = [Contact(0, 1, 0, 2), Contact(1, 2, 3, 5)]
        graph = graph_of(contacts, n_nodes=3, steps=10)
        route = cgds(graph, 0, 2, 0)
        assert [(c.a, c.b) for c in route.hops] == [(0, 1), (1, 2)]
        assert route.transfer_steps == (0, 3)
        assert route.delivery_step == 4

    def test_contact_only_at_final_step_is_useless(self):
        # Transmitting during the last step would deliver outside the horizon.
        graph = graph_of([Contact(0, 1, 9, 10)], n_nodes=2, steps=10)
        assert cgds(graph, 0, 1, 0) is None

    def test_contact_at_second_to_last_step_delivers_at_edge(self):
        graph = graph_of([Contact(0, 1, 8, 10)], n_nodes=2, steps=10)
        route = cgds(graph, 0, 1, 0)
        assert route.delivery_step == 9
        assert route.transfer_steps == (8,)

    def test_start_at_final_step_reaches_nothing(self):
        graph = graph_of([Contact(0, 1, 0, 10)], n_nodes=2, steps=10)
        assert cgds(graph, 0, 1, 9) is None


class TestStaggeredRelay:
    """Six nodes whose only path hops through staggered two-step windows."""

    CONTACTS = [
        Contact(0, 1, 0, 2),
        Contact(1, 2, 2, 4),
        Contact(2, 3, 4, 6),
        Contact(3, 4, 6, 8),
        Contact(4, 5, 8, 10),
    ]
    STEPS = 12

    def make_plan(self) -> ContactPlan:
        plan = ContactPlan(step_count=self.STEPS, n_nodes=6)
        for c in self.CONTACTS:
            for t in range(c.t_start, c.t_end):
                plan.steps[t].add((c.a, c.b))
        return plan

    def test_five_hop_route_exactly(self):
        graph = graph_of(self.CONTACTS, n_nodes=6, steps=self.STEPS)
        route = cgds(graph, 0, 5, 0)
        assert [(c.a, c.b) for c in route.hops] == [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)]
        assert route.transfer_steps == (0, 2, 4, 6, 8)
        assert route.delivery_step == 9
        assert route.bdt_minutes == 9.0
        assert route.volume == 2.0  # every window is two steps long
        assert route.tx_win == (0, 1)

    def test_oracle_agrees(self):
        plan = self.make_plan()
        sc = full_vis_scenario(6, self.STEPS)
        assert oracle_bdt(plan, sc, 0, 5, 0).delivery_step == 9

    def test_transmit_window_is_tight(self):
        graph = graph_of(self.CONTACTS, n_nodes=6, steps=self.STEPS)
        route = cgds(graph, 0, 5, 0)
        lo, hi = route.tx_win
        for tau in range(lo, hi + 1):
            assert replay_first_transmit(route.hops, tau, self.STEPS)
        assert not replay_first_transmit(route.hops, hi + 1, self.STEPS)

    def test_later_start_slides_through_slack(self):
        graph = graph_of(self.CONTACTS, n_nodes=6, steps=self.STEPS)
        route = cgds(graph, 0, 5, 1)
        assert route.delivery_step == 9  # one step of slack absorbed
        assert cgds(graph, 0, 5, 2) is None  # first window missed


class TestOracle:
    def test_source_is_destination(self):
        plan = ContactPlan(step_count=5, n_nodes=3)
        sc = full_vis_scenario(3, 5)
        assert oracle_bdt(plan, sc, 2, 2, 4).delivery_step == 4

    def test_empty_plan_unreachable(self):
        plan = ContactPlan(step_count=5, n_nodes=3)
        sc = full_vis_scenario(3, 5)
        res = oracle_bdt(plan, sc, 0, 1, 0)
        assert res.delivery_step is None
        assert res.bdt_minutes is None
        assert not res.reachable

    def test_store_and_forward_needs_consecutive_steps(self):
        # Links 0-1 and 1-2 both active only at step 0: the relay cannot
        # receive and forward within the same step.
        plan = ContactPlan(step_count=4, n_nodes=3)
        plan.steps[0] |= {(0, 1), (1, 2)}
        sc = full_vis_scenario(3, 4)
        assert oracle_bdt(plan, sc, 0, 2, 0).delivery_step is None
        # With link 1-2 also active at step 1, forwarding works.
        plan.steps[1].add((1, 2))
        assert oracle_bdt(plan, sc, 0, 2, 0).delivery_step == 2


class TestOracleEquivalence:
    def test_cgds_matches_oracle_on_random_instances(self):
        rng = np.random.default_rng(7)
        for _ in range(40):
            n = int(rng.integers(2, 11))
            steps = int(rng.integers(2, 21))
            density = float(rng.uniform(0.05, 0.35))
            plan = random_plan(rng, n, steps, density)
            sc = full_vis_scenario(n, steps)
            graph = contact_graph_for_plan(plan, sc)
            for source in rng.choice(n, size=min(3, n), replace=False):
                source = int(source)
                for t0 in range(steps):
                    expected = {
                        dest: oracle_bdt(plan, sc, source, dest, t0).delivery_step
                        for dest in range(n)
                    }
                    sweep = bdt_all_destinations(graph, source, t0)
                    for dest in range(n):
                        route = cgds(graph, source, dest, t0)
                        got = None if route is None else route.delivery_step
                        assert got == expected[dest], (source, dest, t0)
                        assert sweep[dest].delivery_step == expected[dest]

    def test_routes_satisfy_structural_invariants(self):
        rng = np.random.default_rng(13)
        for _ in range(20):
            n = int(rng.integers(3, 9))
            steps = int(rng.integers(4, 16))
            plan = random_plan(rng, n, steps, 0.25)
            sc = full_vis_scenario(n, steps)
            graph = contact_graph_for_plan(plan, sc)
            for dest in range(1, n):
                route = cgds(graph, 0, dest, 0)
                if route is None:
                    continue
                assert 0 <= route.delivery_step < steps
                assert route.bdt_minutes >= 0.0
                # Consecutive hops share the relay node.
                at = 0
                for hop, tau in zip(route.hops, route.transfer_steps):
                    assert at in (hop.a, hop.b)
                    at = hop.b if at == hop.a else hop.a
                    assert hop.t_start <= tau <= hop.t_end - 1
                assert at == dest
                steps_seq = route.transfer_steps
                assert all(b > a for a, b in zip(steps_seq, steps_seq[1:]))
                if route.hops:
                    assert replay_first_transmit(route.hops, route.tx_win[1], steps)

    def test_cgds_is_deterministic(self):
        rng = np.random.default_rng(99)
        plan = random_plan(rng, 8, 12, 0.3)
        sc = full_vis_scenario(8, 12)
        graph = contact_graph_for_plan(plan, sc)
        graph2 = contact_graph_for_plan(plan, sc)
        for dest in range(1, 8):
            assert cgds(graph, 0, dest, 0) == cgds(graph2, 0, dest, 0)


class TestDeliveryGrid:
    def test_empty_plan_grid(self):
        plan = ContactPlan(step_count=4, n_nodes=3)
        grid = delivery_grid(plan, [1])
        assert grid.shape == (1, 4, 3)
        for t0 in range(4):
            assert grid[0, t0, 1] == t0
            assert grid[0, t0, 0] == 4 and grid[0, t0, 2] == 4

    def test_grid_matches_cgds_everywhere(self):
        rng = np.random.default_rng(21)
        for _ in range(25):
            n = int(rng.integers(2, 11))
            steps = int(rng.integers(2, 18))
            plan = random_plan(rng, n, steps, float(rng.uniform(0.1, 0.4)))
            sc = full_vis_scenario(n, steps)
            graph = contact_graph_for_plan(plan, sc)
            sources = [int(s) for s in rng.choice(n, size=min(3, n), replace=False)]
            grid = delivery_grid(plan, sources)
            for s_idx, source in enumerate(sources):
                for t0 in range(steps):
                    for dest in range(n):
                        route = cgds(graph, source, dest, t0)
                        expected = steps if route is None else route.delivery_step
                        assert grid[s_idx, t0, dest] == expected, (source, t0, dest)

    def test_grid_monotone_under_added_contact(self):
        rng = np.random.default_rng(5)
        for _ in range(30):
            n = int(rng.integers(3, 9))
            steps = int(rng.integers(3, 15))
            plan = random_plan(rng, n, steps, 0.15)
            t = int(rng.integers(steps))
            i, j = sorted(rng.choice(n, size=2, replace=False))
            bigger = plan.clone()
            bigger.steps[t].add((int(i), int(j)))
            before = delivery_grid(plan, list(range(n)))
            after = delivery_grid(bigger, list(range(n)))
            assert (after <= before).all()

    def test_grid_rejects_unknown_source(self):
        plan = ContactPlan(step_count=3, n_nodes=2)
        with pytest.raises(ValueError, match="unknown node"):
            delivery_grid(plan, [5])
