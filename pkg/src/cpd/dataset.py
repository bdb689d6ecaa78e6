"""Labeled corpus generation for training score-predicting models.

Each record pairs a contact plan (sparse ``(t, i, j)`` triples) with the exact
normalized objective and a static per-node feature table, serialized as NDJSON
so any consumer can stream it line by line.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from .annealing import SaConfig, optimize
from .contact_plan import ContactPlan, initial_plan, random_neighbor
from .errors import FileFormatError, NoMoveError
from .objective import ExactEvaluator
from .scenario import Scenario

logger = logging.getLogger(__name__)

_CORPUS_SEED_DOMAIN = 0xD5
FEATURE_DIM = 4


# ---------------------------------------------------------------------------
# Record type
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EvaluationRecord:
    """One labeled training sample: plan triples, node features, exact score."""

    contacts: tuple[tuple[int, int, int], ...]
    node_features: tuple[tuple[float, ...], ...]
    label: float
    scenario_ref: str

    def __post_init__(self) -> None:
        for row in self.node_features:
            if len(row) != FEATURE_DIM:
                raise ValueError(
                    f"node feature rows must have {FEATURE_DIM} entries, got {len(row)}"
                )


def compute_node_features(scenario: Scenario, plan: ContactPlan) -> np.ndarray:
    """Static per-node features, one row per node.

    Columns: [is_satellite, is_ground_station, mean per-step link degree under
    the plan divided by the per-step cap, fraction of steps with at least one
    visible neighbor].
    """
    n = scenario.n_nodes
    steps = scenario.grid.step_count
    if plan.n_nodes != n or plan.step_count != steps:
        raise ValueError("plan dimensions do not match the scenario")

    features = np.zeros((n, FEATURE_DIM), dtype=np.float64)
    features[: scenario.n_satellites, 0] = 1.0
    features[scenario.n_satellites :, 1] = 1.0

    degree_sum = np.zeros(n, dtype=np.float64)
    for edges in plan.steps:
        for i, j in edges:
            degree_sum[i] += 1.0
            degree_sum[j] += 1.0
    features[:, 2] = degree_sum / (steps * scenario.per_step_degree_cap)

    features[:, 3] = scenario.visibility.any(axis=2).mean(axis=0)
    return features


def _make_record(
    scenario: Scenario, plan: ContactPlan, label: float, scenario_ref: str
) -> EvaluationRecord:
    features = compute_node_features(scenario, plan)
    return EvaluationRecord(
        contacts=tuple(plan.triples()),
        node_features=tuple(tuple(float(x) for x in row) for row in features),
        label=float(label),
        scenario_ref=scenario_ref,
    )


# ---------------------------------------------------------------------------
# Corpus generation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiversityPolicy:
    """Controls how corpus plans are drawn.

    A ``random_fraction`` share of records comes from seeded greedy
    initializations perturbed by a burst of random moves (sampling the
    high-to-mid score range); the rest are snapshots taken along annealing
    trajectories at evenly spaced iterations, whose cooling sweep covers the
    mid-to-low range.
    """

    random_fraction: float = 0.5
    max_burst: int = 40
    trajectory_iterations: int = 120
    initial_temperature: float = 10.0
    cooling_rate: float = 0.95

    def __post_init__(self) -> None:
        if not 0.0 <= self.random_fraction <= 1.0:
            raise ValueError("random_fraction must lie in [0, 1]")
        if self.max_burst < 0:
            raise ValueError("max_burst must be non-negative")
        if self.trajectory_iterations < 1:
            raise ValueError("trajectory_iterations must be at least 1")


def generate_corpus(
    scenario: Scenario,
    count: int,
    policy: DiversityPolicy | None = None,
    seed: int = 0,
    *,
    workers: int = 1,
) -> Iterator[EvaluationRecord]:
    """Yield ``count`` labeled records, deterministically for a given seed."""
    if count < 1:
        raise ValueError("count must be at least 1")
    policy = policy or DiversityPolicy()
    rng = np.random.default_rng(np.random.SeedSequence([seed, _CORPUS_SEED_DOMAIN]))
    evaluator = ExactEvaluator(scenario, workers=workers)
    scenario_ref = scenario.fingerprint()

    n_random = round(count * policy.random_fraction)
    n_snapshot = count - n_random

    for k in range(n_random):
        plan_seed = int(rng.integers(0, 2**31))
        plan = initial_plan(scenario, plan_seed)
        burst = int(rng.integers(0, policy.max_burst + 1))
        for _ in range(burst):
            move = random_neighbor(plan, scenario, rng)
            if move is None:
                break
            plan = move[0]
        label = evaluator.evaluate(plan).normalized
        logger.debug("corpus record %d/%d (randomized, burst=%d)", k + 1, count, burst)
        yield _make_record(scenario, plan, label, scenario_ref)

    produced = 0
    while produced < n_snapshot:
        config = SaConfig(
            initial_temperature=policy.initial_temperature,
            cooling_rate=policy.cooling_rate,
            iterations=policy.trajectory_iterations,
            seed=int(rng.integers(0, 2**31)),
        )
        try:
            _, history = optimize(scenario, config, evaluator, track_plans=True)
        except NoMoveError:
            # Degenerate scenario with no visible pairs: every plan is empty,
            # so fall back to (identical) empty-plan records.
            plan = initial_plan(scenario, 0)
            label = evaluator.evaluate(plan).normalized
            for _ in range(n_snapshot - produced):
                yield _make_record(scenario, plan, label, scenario_ref)
            produced = n_snapshot
            break
        take = min(n_snapshot - produced, len(history.rows))
        picks = np.round(np.linspace(0, len(history.rows) - 1, num=take)).astype(int)
        factor = history.metadata["normalized_factor"]
        for idx in picks:
            # History values are raw total minutes; records store the normalized score.
            label = history.rows[idx].f_cand / factor
            yield _make_record(scenario, history.plans[idx], label, scenario_ref)
        produced += take
        logger.debug("corpus snapshots: %d/%d", produced, n_snapshot)


# ---------------------------------------------------------------------------
# NDJSON persistence
# ---------------------------------------------------------------------------


def record_to_payload(record: EvaluationRecord) -> dict:
    return {
        "contacts": [list(c) for c in record.contacts],
        "node_features": [list(row) for row in record.node_features],
        "label": record.label,
        "scenario_ref": record.scenario_ref,
    }


def record_from_payload(payload: object) -> EvaluationRecord:
    if not isinstance(payload, dict):
        raise FileFormatError("corpus record: each line must be a JSON object")
    missing = {"contacts", "node_features", "label", "scenario_ref"} - payload.keys()
    if missing:
        raise FileFormatError(f"corpus record: missing fields {sorted(missing)}")
    contacts = payload["contacts"]
    features = payload["node_features"]
    label = payload["label"]
    ref = payload["scenario_ref"]
    if not isinstance(contacts, list) or not all(
        isinstance(c, list) and len(c) == 3 and all(isinstance(v, int) for v in c)
        for c in contacts
    ):
        raise FileFormatError("corpus record: contacts must be a list of [t, i, j] integers")
    if not isinstance(features, list) or not all(
        isinstance(row, list) and all(isinstance(v, (int, float)) for v in row)
        for row in features
    ):
        raise FileFormatError("corpus record: node_features must be a list of numeric rows")
    if not isinstance(label, (int, float)) or isinstance(label, bool):
        raise FileFormatError("corpus record: label must be a number")
    if not isinstance(ref, str):
        raise FileFormatError("corpus record: scenario_ref must be a string")
    try:
        return EvaluationRecord(
            contacts=tuple(tuple(c) for c in contacts),
            node_features=tuple(tuple(float(v) for v in row) for row in features),
            label=float(label),
            scenario_ref=ref,
        )
    except ValueError as exc:
        raise FileFormatError(f"corpus record: {exc}") from exc


def save_corpus(records: Iterable[EvaluationRecord], path: str) -> int:
    """Write records as NDJSON; returns the number written."""
    written = 0
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record_to_payload(record), sort_keys=True, separators=(",", ":")))
            fh.write("\n")
            written += 1
    return written


def load_corpus(path: str) -> list[EvaluationRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                payload = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FileFormatError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            try:
                records.append(record_from_payload(payload))
            except FileFormatError as exc:
                raise FileFormatError(f"{path}:{lineno}: {exc}") from exc
    return records


def plan_from_record(record: EvaluationRecord, scenario: Scenario) -> ContactPlan:
    """Rebuild the contact plan a record was generated from."""
    plan = ContactPlan(step_count=scenario.grid.step_count, n_nodes=scenario.n_nodes)
    for t, i, j in record.contacts:
        plan.steps[t].add((i, j))
    return plan
