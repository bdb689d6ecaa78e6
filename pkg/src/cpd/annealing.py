"""Simulated-annealing driver over contact plans, with full run telemetry.

The loop starts from a repaired matching-based plan and walks single-link
toggles.  A candidate scoring no worse than the current plan is always
adopted; a worse one is adopted with the Metropolis probability
exp(-(f_new - f_curr) / temperature).  A rejected candidate resets the
current plan to the best plan seen so far (not the previous current plan),
which restarts exploration from the incumbent.

Objectives inside the loop are kept on the raw scale (total delivery
minutes summed over every required pair and start step), the same
quantity the default initial temperature of 10 was tuned against: at
desk scale a typical single-link move shifts the total by hundreds of
minutes, so the walk is a descent that still tolerates near-neutral
detours early on.  History files record the factor back to the
normalized score in their metadata so reports can convert.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .contact_plan import ContactPlan, MoveKind, MoveRecord, initial_plan, random_neighbor
from .errors import AnnealingAborted, EvaluatorError, NoMoveError
from .objective import EvaluatorKind, ExactEvaluator, OracleEvaluator
from .scenario import Scenario

HISTORY_COLUMNS = ("iter", "f_cand", "f_curr", "f_best", "accepted", "temperature", "eval_ms")


class CoolingPolicy(Enum):
    EVERY_ITERATION = "every-iteration"
    ON_WORSE_ACCEPT = "on-worse-accept"


@dataclass(frozen=True)
class SaConfig:
    initial_temperature: float = 10.0
    cooling_rate: float = 0.95
    iterations: int = 100
    seed: int = 0
    evaluator: EvaluatorKind = EvaluatorKind.EXACT_CGR
    cooling_policy: CoolingPolicy = CoolingPolicy.EVERY_ITERATION

    def __post_init__(self) -> None:
        if not self.initial_temperature > 0:
            raise ValueError(f"initial_temperature must be > 0, got {self.initial_temperature}")
        if not 0 < self.cooling_rate < 1:
            raise ValueError(f"cooling_rate must be in (0, 1), got {self.cooling_rate}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")


@dataclass(frozen=True)
class HistoryRow:
    iteration: int
    f_cand: float
    f_curr: float
    f_best: float
    accepted: bool
    temperature: float
    eval_ms: float
    move: str = ""
    f_exact_cand: float | None = None  # filled by reevaluate_history


@dataclass
class RunHistory:
    rows: list[HistoryRow] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    plans: list[ContactPlan] | None = None  # candidate per row when tracked

    @property
    def best_curve(self) -> list[float]:
        return [row.f_best for row in self.rows]

    def improvement_percent(self) -> float:
        """Relative gain of the final best over the initial plan, in percent."""
        if not self.rows:
            return 0.0
        first = self.rows[0].f_best
        if first == 0:
            return 0.0
        return (first - self.rows[-1].f_best) / first * 100.0


def metropolis_accept(
    f_new: float, f_curr: float, temperature: float, rng: np.random.Generator
) -> bool:
    """Standard Metropolis rule: never refuse an improvement."""
    if f_new <= f_curr:
        return True
    return float(rng.random()) < math.exp(-(f_new - f_curr) / temperature)


def _describe_move(record: MoveRecord) -> str:
    i, j = record.edge
    verb = "activate" if record.kind is MoveKind.ACTIVATE else "deactivate"
    text = f"{verb} t={record.step} ({i},{j})"
    if record.cascade:
        text += f" cascade={len(record.cascade)}"
    return text


def _default_evaluator(kind: EvaluatorKind, scenario: Scenario):
    if kind is EvaluatorKind.EXACT_CGR:
        return ExactEvaluator(scenario)
    if kind is EvaluatorKind.ORACLE:
        return OracleEvaluator(scenario)
    raise ValueError("a surrogate evaluator needs an endpoint; pass an evaluator instance")


def optimize(
    scenario: Scenario,
    config: SaConfig,
    evaluator=None,
    *,
    track_plans: bool = False,
) -> tuple[ContactPlan, RunHistory]:
    """Run the annealing loop; returns the best plan and its telemetry.

    Row 0 records the initial plan's evaluation; rows 1..N the iterations.
    The temperature column holds the value used for that row's decision.
    If the evaluator dies mid-run, the partial history travels with the
    raised AnnealingAborted so callers can persist it.
    """
    if evaluator is None:
        evaluator = _default_evaluator(config.evaluator, scenario)
    if len(scenario.visible_triples()) == 0:
        raise NoMoveError("no (step, link) slot is ever visible; nothing to optimize")

    term_count = sum(len(targets) for targets in scenario.requirements) * scenario.grid.step_count
    scale = term_count * scenario.grid.horizon_minutes
    rng = np.random.default_rng(np.random.SeedSequence([int(config.seed), 0x5A]))
    history = RunHistory(
        metadata={
            "objective_scale": "raw-minutes",
            "normalized_factor": scale,
            "horizon_minutes": scenario.grid.horizon_minutes,
            "seed": config.seed,
            "initial_temperature": config.initial_temperature,
            "cooling_rate": config.cooling_rate,
            "iterations": config.iterations,
            "cooling_policy": config.cooling_policy.value,
            "evaluator": evaluator.describe(),
        },
        plans=[] if track_plans else None,
    )

    def score(plan: ContactPlan) -> tuple[float, float]:
        begin = time.perf_counter()
        value = evaluator.evaluate(plan)
        elapsed_ms = (time.perf_counter() - begin) * 1000.0
        return value.normalized * scale, elapsed_ms

    plan_curr = initial_plan(scenario, config.seed)
    try:
        f_curr, eval_ms = score(plan_curr)
    except EvaluatorError as exc:
        raise AnnealingAborted(f"evaluator failed on the initial plan: {exc}", history) from exc

    plan_best = plan_curr.clone()
    f_best = f_curr
    temperature = config.initial_temperature
    history.rows.append(
        HistoryRow(
            iteration=0,
            f_cand=f_curr,
            f_curr=f_curr,
            f_best=f_best,
            accepted=True,
            temperature=temperature,
            eval_ms=eval_ms,
            move="initial",
        )
    )
    if track_plans:
        history.plans.append(plan_curr.clone())

    for iteration in range(1, config.iterations + 1):
        neighbor = random_neighbor(plan_curr, scenario, rng)
        assert neighbor is not None  # visible_triples() was checked non-empty
        candidate, record = neighbor

        try:
            f_cand, eval_ms = score(candidate)
        except EvaluatorError as exc:
            raise AnnealingAborted(
                f"evaluator failed at iteration {iteration}: {exc}", history
            ) from exc

        f_best_before = f_best
        accepted = metropolis_accept(f_cand, f_curr, temperature, rng)
        if accepted:
            plan_curr, f_curr = candidate, f_cand
            if f_cand < f_best:
                plan_best, f_best = candidate.clone(), f_cand
        else:
            # Alg.-style restart: rejection falls back to the incumbent best.
            plan_curr, f_curr = plan_best.clone(), f_best

        history.rows.append(
            HistoryRow(
                iteration=iteration,
                f_cand=f_cand,
                f_curr=f_curr,
                f_best=f_best,
                accepted=accepted,
                temperature=temperature,
                eval_ms=eval_ms,
                move=_describe_move(record),
            )
        )
        if track_plans:
            history.plans.append(candidate.clone())

        if config.cooling_policy is CoolingPolicy.EVERY_ITERATION:
            temperature *= config.cooling_rate
        elif accepted and f_cand > f_best_before:
            temperature *= config.cooling_rate

    return plan_best, history


def reevaluate_history(
    history: RunHistory, evaluator, plans: list[ContactPlan] | None = None
) -> RunHistory:
    """Score every tracked candidate with another evaluator (e.g. the exact
    one after a surrogate-driven run); fills the f_exact_cand field."""
    plans = plans if plans is not None else history.plans
    if plans is None:
        raise ValueError("history has no tracked plans; rerun optimize(track_plans=True)")
    if len(plans) != len(history.rows):
        raise ValueError(f"{len(plans)} plans for {len(history.rows)} history rows")

    scale = history.metadata.get("normalized_factor")
    rows = []
    for row, plan in zip(history.rows, plans):
        value = evaluator.evaluate(plan)
        exact = value.normalized * scale if scale is not None else value.normalized
        rows.append(replace(row, f_exact_cand=exact))
    return RunHistory(rows=rows, metadata=dict(history.metadata), plans=history.plans)


# ---------------------------------------------------------------------------
# History persistence (CSV with # metadata comments)
# ---------------------------------------------------------------------------


def save_history(history: RunHistory, path: str) -> None:
    import json

    has_exact = any(row.f_exact_cand is not None for row in history.rows)
    columns = HISTORY_COLUMNS + (("f_exact_cand",) if has_exact else ())
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(history.metadata):
            fh.write(f"# {key}: {json.dumps(history.metadata[key])}\n")
        fh.write(",".join(columns) + "\n")
        for row in history.rows:
            cells = [
                str(row.iteration),
                repr(row.f_cand),
                repr(row.f_curr),
                repr(row.f_best),
                "1" if row.accepted else "0",
                repr(row.temperature),
                repr(row.eval_ms),
            ]
            if has_exact:
                cells.append("" if row.f_exact_cand is None else repr(row.f_exact_cand))
            fh.write(",".join(cells) + "\n")


def load_history(path: str) -> RunHistory:
    import json

    from .errors import FileFormatError

    metadata: dict = {}
    rows: list[HistoryRow] = []
    with open(path, "r", encoding="utf-8") as fh:
        header: list[str] | None = None
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                key, sep, raw = body.partition(":")
                if sep:
                    try:
                        metadata[key.strip()] = json.loads(raw.strip())
                    except json.JSONDecodeError:
                        metadata[key.strip()] = raw.strip()
                continue
            if header is None:
                header = line.split(",")
                if tuple(header[: len(HISTORY_COLUMNS)]) != HISTORY_COLUMNS:
                    raise FileFormatError(
                        f"history file {path}: unexpected columns {header!r}"
                    )
                continue
            cells = line.split(",")
            if len(cells) < len(HISTORY_COLUMNS):
                raise FileFormatError(f"history file {path}: short row at line {line_no}")
            exact = None
            if len(header) > len(HISTORY_COLUMNS) and len(cells) > len(HISTORY_COLUMNS):
                exact = float(cells[7]) if cells[7] else None
            rows.append(
                HistoryRow(
                    iteration=int(cells[0]),
                    f_cand=float(cells[1]),
                    f_curr=float(cells[2]),
                    f_best=float(cells[3]),
                    accepted=cells[4] == "1",
                    temperature=float(cells[5]),
                    eval_ms=float(cells[6]),
                    f_exact_cand=exact,
                )
            )
    if header is None:
        raise FileFormatError(f"history file {path}: empty file")
    return RunHistory(rows=rows, metadata=metadata)
