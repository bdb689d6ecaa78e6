"""Plan scoring: the sum of best delivery times over required pairs.

The raw score adds d(i, j, t) in minutes over every start step t and every
required pair (i, j); lower is better.  Reporting divides by
triple_count x horizon_minutes, giving a dimensionless score that is <= 1
when every sampled pair is reachable.

Unreachable terms are charged ((step_count - 1 - t) + step_count) steps:
the wait until the end of the horizon plus one full horizon on top, which
keeps the sum finite while dominating every reachable delivery time.

Scoring backends share one interface: the exact engine routes over the
plan, the oracle engine is the slow cross-check, and the remote engine
forwards plans to an external process speaking the line-JSON protocol
documented on RemoteEvaluator.
"""

from __future__ import annotations

import json
import queue
import shlex
import socket
import subprocess
import threading
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .contact_plan import ContactPlan, require_feasible
from .errors import EvaluationError, HandshakeError, ProtocolError
from .routing import delivery_grid, oracle_bdt
from .scenario import Scenario

PROTOCOL_VERSION = 1
DEFAULT_TIMEOUT_SECONDS = 30.0


class EvaluatorKind(Enum):
    EXACT_CGR = "exact-cgr"
    SURROGATE = "surrogate"
    ORACLE = "oracle"


@dataclass(frozen=True)
class ObjectiveValue:
    """Score of one plan.  Remote evaluations only fill `normalized`."""

    raw: float | None  # minute-sum; None when the evaluator does not report it
    normalized: float
    triple_count: int | None
    unreachable_count: int | None


def unreachable_penalty_steps(t: int, step_count: int) -> int:
    """Charge for an undeliverable (i, j, t) term, in steps."""
    return (step_count - 1 - t) + step_count


def _grid_for_sources(plan: ContactPlan, sources: list[int], workers: int) -> np.ndarray:
    if workers <= 1 or len(sources) <= 1:
        return delivery_grid(plan, sources)
    from concurrent.futures import ThreadPoolExecutor

    chunks = np.array_split(np.asarray(sources), min(workers, len(sources)))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(lambda c: delivery_grid(plan, [int(x) for x in c]), chunks))
    return np.concatenate(parts, axis=0)


def evaluate_exact(
    plan: ContactPlan,
    scenario: Scenario,
    sample_stride: int = 1,
    workers: int = 1,
) -> ObjectiveValue:
    """Sum d(i, j, t) over t in {0, stride, 2*stride, ...} and all required pairs.

    stride=1 is the full objective; larger strides subsample start steps
    when evaluation cost matters.  The plan must be feasible - scoring an
    infeasible plan is undefined in the model.
    """
    if sample_stride < 1:
        raise ValueError(f"sample_stride must be >= 1, got {sample_stride}")
    require_feasible(plan, scenario)

    n_t = scenario.grid.step_count
    step_minutes = scenario.grid.step_seconds / 60.0
    sources = [i for i, targets in enumerate(scenario.requirements) if targets]

    total_steps = 0
    unreachable = 0
    triples = 0
    if sources:
        grid = _grid_for_sources(plan, sources, workers)
        t_sampled = np.arange(0, n_t, sample_stride, dtype=np.int64)
        penalty = (n_t - 1 - t_sampled[:, None]) + n_t  # (samples, 1)
        for s_idx, source in enumerate(sources):
            targets = np.asarray(scenario.requirements[source], dtype=np.int64)
            arrivals = grid[s_idx][np.ix_(t_sampled, targets)].astype(np.int64)
            missing = arrivals == n_t
            d_steps = np.where(missing, penalty, arrivals - t_sampled[:, None])
            total_steps += int(d_steps.sum())
            unreachable += int(missing.sum())
            triples += d_steps.size

    raw = total_steps * step_minutes
    normalized = raw / (triples * scenario.grid.horizon_minutes) if triples else 0.0
    return ObjectiveValue(
        raw=raw, normalized=normalized, triple_count=triples, unreachable_count=unreachable
    )


@dataclass
class ExactEvaluator:
    """Scores plans by routing over them; the reference backend."""

    scenario: Scenario
    sample_stride: int = 1
    workers: int = 1
    kind = EvaluatorKind.EXACT_CGR

    def evaluate(self, plan: ContactPlan) -> ObjectiveValue:
        return evaluate_exact(plan, self.scenario, self.sample_stride, self.workers)

    def describe(self) -> dict:
        return {
            "kind": self.kind.value,
            "sample_stride": self.sample_stride,
            "workers": self.workers,
        }

    def close(self) -> None:  # uniform evaluator surface
        pass


@dataclass
class OracleEvaluator:
    """Scores plans with the time-expanded engine.  Slow; for cross-checks."""

    scenario: Scenario
    kind = EvaluatorKind.ORACLE

    def evaluate(self, plan: ContactPlan) -> ObjectiveValue:
        sc = self.scenario
        n_t = sc.grid.step_count
        step_minutes = sc.grid.step_seconds / 60.0
        total_steps = 0
        unreachable = 0
        triples = 0
        for source, targets in enumerate(sc.requirements):
            for dest in targets:
                for t in range(n_t):
                    res = oracle_bdt(plan, sc, source, dest, t)
                    if res.delivery_step is None:
                        total_steps += unreachable_penalty_steps(t, n_t)
                        unreachable += 1
                    else:
                        total_steps += res.delivery_step - t
                    triples += 1
        raw = total_steps * step_minutes
        normalized = raw / (triples * sc.grid.horizon_minutes) if triples else 0.0
        return ObjectiveValue(
            raw=raw, normalized=normalized, triple_count=triples, unreachable_count=unreachable
        )

    def describe(self) -> dict:
        return {"kind": self.kind.value}

    def close(self) -> None:
        pass


# ---------------------------------------------------------------------------
# Remote evaluator (line-delimited JSON)
# ---------------------------------------------------------------------------


class _Transport:
    """One line-oriented duplex channel: spawned process or TCP socket."""

    def __init__(self, endpoint: str):
        self.endpoint = endpoint
        self.process: subprocess.Popen | None = None
        self._sock: socket.socket | None = None
        host_port = endpoint.rsplit(":", 1)
        if len(host_port) == 2 and " " not in endpoint and host_port[1].isdigit():
            try:
                self._sock = socket.create_connection((host_port[0], int(host_port[1])), timeout=10)
            except OSError as exc:
                raise EvaluationError(f"cannot connect to evaluator at {endpoint}: {exc}") from exc
            self._reader = self._sock.makefile("r", encoding="utf-8", newline="\n")
            self._writer = self._sock.makefile("w", encoding="utf-8", newline="\n")
        else:
            try:
                self.process = subprocess.Popen(
                    shlex.split(endpoint),
                    stdin=subprocess.PIPE,
                    stdout=subprocess.PIPE,
                    text=True,
                    encoding="utf-8",
                )
            except OSError as exc:
                raise EvaluationError(f"cannot spawn evaluator {endpoint!r}: {exc}") from exc
            self._reader = self.process.stdout
            self._writer = self.process.stdin

        self._lines: queue.Queue[str | None] = queue.Queue()
        self._pump = threading.Thread(target=self._read_loop, daemon=True)
        self._pump.start()

    def _read_loop(self) -> None:
        try:
            for line in self._reader:
                self._lines.put(line)
        except (OSError, ValueError):
            pass
        self._lines.put(None)

    def send(self, message: dict) -> None:
        try:
            self._writer.write(json.dumps(message, separators=(",", ":")) + "\n")
            self._writer.flush()
        except (OSError, ValueError) as exc:
            raise EvaluationError(f"evaluator connection lost while sending: {exc}") from exc

    def receive(self, timeout: float) -> str:
        try:
            line = self._lines.get(timeout=timeout)
        except queue.Empty:
            raise EvaluationError(f"evaluator sent no response within {timeout:.0f} s") from None
        if line is None:
            detail = ""
            if self.process is not None:
                try:  # EOF means the child is gone or going; reap it for the code
                    code = self.process.wait(timeout=5)
                    detail = f" (process exited with code {code})"
                except subprocess.TimeoutExpired:
                    pass
            raise EvaluationError(f"evaluator closed the connection{detail}")
        return line

    def close(self) -> None:
        for stream in (getattr(self, "_writer", None), getattr(self, "_reader", None)):
            try:
                if stream is not None:
                    stream.close()
            except OSError:
                pass
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
        if self.process is not None:
            try:
                self.process.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self.process.kill()
                self.process.wait()


class RemoteEvaluator:
    """Client for an external scorer speaking line-delimited JSON.

    Handshake: -> {"type":"hello","version":1,"n_nodes":K,"n_steps":T}
               <- {"type":"hello_ack","version":1}
    Scoring:   -> {"type":"eval","id":N,"contacts":[[t,i,j],...]}
               <- {"type":"result","id":N,"objective":<normalized float>}
    Teardown:  -> {"type":"shutdown"}

    The endpoint is either "host:port" (TCP) or a command line to spawn,
    talking over the child's standard streams.  One request is in flight
    at a time; responses must arrive within `timeout` seconds.
    """

    kind = EvaluatorKind.SURROGATE

    def __init__(
        self,
        endpoint: str,
        n_nodes: int,
        n_steps: int,
        timeout: float = DEFAULT_TIMEOUT_SECONDS,
    ):
        self.endpoint = endpoint
        self.n_nodes = n_nodes
        self.n_steps = n_steps
        self.timeout = timeout
        self._transport: _Transport | None = None
        self._next_id = 0

    def start(self) -> None:
        if self._transport is not None:
            return
        self._transport = _Transport(self.endpoint)
        self._transport.send(
            {
                "type": "hello",
                "version": PROTOCOL_VERSION,
                "n_nodes": self.n_nodes,
                "n_steps": self.n_steps,
            }
        )
        reply = self._read_message()
        if reply.get("type") != "hello_ack" or reply.get("version") != PROTOCOL_VERSION:
            self.close()
            raise HandshakeError(
                f"evaluator handshake failed: expected hello_ack version {PROTOCOL_VERSION}, "
                f"got {reply!r}"
            )

    def _read_message(self) -> dict:
        line = self._transport.receive(self.timeout)
        try:
            message = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"evaluator sent invalid JSON: {line!r}") from exc
        if not isinstance(message, dict):
            raise ProtocolError(f"evaluator sent a non-object message: {line!r}")
        return message

    def evaluate(self, plan: ContactPlan) -> ObjectiveValue:
        if self._transport is None:
            self.start()
        request_id = self._next_id
        self._next_id += 1
        self._transport.send(
            {"type": "eval", "id": request_id, "contacts": [[t, i, j] for t, i, j in plan.triples()]}
        )
        reply = self._read_message()
        if reply.get("type") == "error":
            raise ProtocolError(f"evaluator reported an error: {reply.get('message')!r}")
        if reply.get("type") != "result":
            raise ProtocolError(f"expected a result message, got {reply!r}")
        if reply.get("id") != request_id:
            raise ProtocolError(
                f"result id {reply.get('id')!r} does not match request id {request_id}"
            )
        objective = reply.get("objective")
        if not isinstance(objective, (int, float)) or isinstance(objective, bool):
            raise ProtocolError(f"result objective must be a number, got {objective!r}")
        return ObjectiveValue(
            raw=None, normalized=float(objective), triple_count=None, unreachable_count=None
        )

    def describe(self) -> dict:
        return {"kind": self.kind.value, "endpoint": self.endpoint, "timeout": self.timeout}

    def close(self) -> None:
        if self._transport is None:
            return
        try:
            self._transport.send({"type": "shutdown"})
        except EvaluationError:
            pass
        self._transport.close()
        self._transport = None

    def __enter__(self) -> "RemoteEvaluator":
        self.start()
        return self

    def __exit__(self, *_exc) -> None:
        self.close()


def evaluate_remote(
    plan: ContactPlan, endpoint: str, timeout: float = DEFAULT_TIMEOUT_SECONDS
) -> ObjectiveValue:
    """One-shot remote scoring: connect, handshake, evaluate, shut down."""
    with RemoteEvaluator(
        endpoint, n_nodes=plan.n_nodes, n_steps=plan.step_count, timeout=timeout
    ) as remote:
        return remote.evaluate(plan)
