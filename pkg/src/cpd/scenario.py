"""Scenario construction: orbital geometry, visibility, and requirements.

A scenario is the static problem instance for contact plan design: the node
roster (satellites first, then ground stations), a discrete time grid, the
per-step visibility matrices, the per-satellite communication requirement
sets, and the link budgets that any plan must respect.

Geometry is deliberately simple: circular two-body Kepler orbits around a
spherical, rotating Earth.  That keeps visibility fully deterministic and
cheap to regenerate, which is all the downstream optimization needs.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import FileFormatError, ScenarioError

logger = logging.getLogger(__name__)

EARTH_RADIUS_KM = 6371.0
EARTH_MU_KM3_S2 = 398600.4418
EARTH_ROTATION_RAD_S = 7.2921159e-5

SCENARIO_FORMAT_VERSION = 1


class NodeKind(Enum):
    SATELLITE = "satellite"
    GROUND_STATION = "ground_station"


@dataclass(frozen=True)
class TimeGrid:
    """Discrete time grid: ``step_count`` steps of ``step_seconds`` each."""

    step_count: int
    step_seconds: float
    epoch: str = "2000-01-01T00:00:00Z"

    def __post_init__(self) -> None:
        if self.step_count < 1:
            raise ScenarioError(f"step_count must be >= 1, got {self.step_count}")
        if self.step_seconds <= 0:
            raise ScenarioError(f"step_seconds must be > 0, got {self.step_seconds}")

    @property
    def horizon_seconds(self) -> float:
        return self.step_count * self.step_seconds

    @property
    def horizon_minutes(self) -> float:
        return self.horizon_seconds / 60.0

    def times(self) -> np.ndarray:
        """Elapsed seconds since epoch at the start of every step."""
        return np.arange(self.step_count, dtype=float) * self.step_seconds


@dataclass(frozen=True)
class OrbitSpec:
    """A Walker-delta constellation of circular orbits."""

    altitude_km: float
    inclination_deg: float
    plane_count: int
    sats_per_plane: int
    phasing: int = 1

    def __post_init__(self) -> None:
        if self.altitude_km <= 0:
            raise ScenarioError(f"altitude_km must be > 0, got {self.altitude_km}")
        if self.plane_count < 1 or self.sats_per_plane < 1:
            raise ScenarioError("plane_count and sats_per_plane must be >= 1")

    @property
    def n_satellites(self) -> int:
        return self.plane_count * self.sats_per_plane

    @property
    def radius_km(self) -> float:
        return EARTH_RADIUS_KM + self.altitude_km

    @property
    def period_seconds(self) -> float:
        return 2.0 * math.pi * math.sqrt(self.radius_km**3 / EARTH_MU_KM3_S2)


@dataclass(frozen=True)
class GroundStation:
    latitude_deg: float
    longitude_deg: float
    name: str = ""


@dataclass(frozen=True)
class VisibilityParams:
    isl_max_range_km: float = 5000.0
    min_elevation_deg: float = 10.0


@dataclass(frozen=True)
class RequirementPolicy:
    """How the per-satellite requirement sets C_i are drawn.

    ``kind`` is one of ``all-pairs`` (every other node), ``random-k``
    (k distinct targets sampled per satellite), or ``explicit``.
    """

    kind: str
    k: int = 3
    explicit: tuple[tuple[int, ...], ...] | None = None

    KINDS = ("all-pairs", "random-k", "explicit")

    def __post_init__(self) -> None:
        if self.kind not in self.KINDS:
            raise ScenarioError(f"unknown requirement policy {self.kind!r}")
        if self.kind == "random-k" and self.k < 0:
            raise ScenarioError("random-k requires k >= 0")
        if self.kind == "explicit" and self.explicit is None:
            raise ScenarioError("explicit policy requires explicit target lists")

    @classmethod
    def all_pairs(cls) -> "RequirementPolicy":
        return cls(kind="all-pairs")

    @classmethod
    def random_k(cls, k: int) -> "RequirementPolicy":
        return cls(kind="random-k", k=k)

    @classmethod
    def explicit_sets(cls, sets: Sequence[Sequence[int]]) -> "RequirementPolicy":
        return cls(kind="explicit", explicit=tuple(tuple(s) for s in sets))


@dataclass
class Scenario:
    """Static problem instance.  Immutable by convention once built."""

    grid: TimeGrid
    n_satellites: int
    n_stations: int
    visibility: np.ndarray  # (step_count, n_nodes, n_nodes) bool
    requirements: tuple[tuple[int, ...], ...]  # one sorted tuple per satellite
    budget_isl: int
    budget_gsl: int
    per_step_degree_cap: int = 1
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        n = self.n_nodes
        vis = np.asarray(self.visibility, dtype=bool)
        if vis.shape != (self.grid.step_count, n, n):
            raise ScenarioError(
                f"visibility shape {vis.shape} does not match "
                f"({self.grid.step_count}, {n}, {n})"
            )
        self.visibility = vis
        if len(self.requirements) != self.n_satellites:
            raise ScenarioError(
                f"expected {self.n_satellites} requirement sets, "
                f"got {len(self.requirements)}"
            )
        for i, targets in enumerate(self.requirements):
            for j in targets:
                if not (0 <= j < n):
                    raise ScenarioError(f"requirement target {j} of satellite {i} out of range")
                if j == i:
                    raise ScenarioError(f"satellite {i} lists itself as a requirement target")
        if self.budget_isl < 0 or self.budget_gsl < 0:
            raise ScenarioError("budgets must be >= 0")
        if self.per_step_degree_cap < 1:
            raise ScenarioError("per_step_degree_cap must be >= 1")

    # -- roster helpers -----------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return self.n_satellites + self.n_stations

    def is_satellite(self, index: int) -> bool:
        return 0 <= index < self.n_satellites

    def node_kind(self, index: int) -> NodeKind:
        if self.is_satellite(index):
            return NodeKind.SATELLITE
        if index < self.n_nodes:
            return NodeKind.GROUND_STATION
        raise ScenarioError(f"node index {index} out of range")

    @property
    def requirement_pair_count(self) -> int:
        return sum(len(c) for c in self.requirements)

    def visible_triples(self) -> np.ndarray:
        """All (t, i, j) with i<j and V_t(i,j)=1, as an int array of shape (m, 3).

        This is the neighbor-move candidate universe; cached because the
        tensor is immutable.
        """
        cached = getattr(self, "_visible_triples", None)
        if cached is None:
            upper = np.triu(self.visibility, k=1)
            cached = np.argwhere(upper).astype(np.int32)
            self._visible_triples = cached
        return cached

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Scenario):
            return NotImplemented
        return (
            self.grid == other.grid
            and self.n_satellites == other.n_satellites
            and self.n_stations == other.n_stations
            and np.array_equal(self.visibility, other.visibility)
            and self.requirements == other.requirements
            and self.budget_isl == other.budget_isl
            and self.budget_gsl == other.budget_gsl
            and self.per_step_degree_cap == other.per_step_degree_cap
        )

    def fingerprint(self) -> str:
        """Content hash of the scenario (metadata excluded)."""
        payload = _scenario_payload(self, include_metadata=False)
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


# ---------------------------------------------------------------------------
# Propagation
# ---------------------------------------------------------------------------


def propagate(
    spec: OrbitSpec,
    grid: TimeGrid,
    stations: Sequence[GroundStation] = (),
) -> np.ndarray:
    """Positions (km, Earth-centered inertial) for every node at every step.

    Satellites follow circular Keplerian orbits in a Walker-delta pattern;
    ground stations ride the rotating spherical Earth.  Result has shape
    (step_count, n_sats + n_stations, 3), satellites first.
    """
    times = grid.times()
    n_sats = spec.n_satellites
    positions = np.empty((grid.step_count, n_sats + len(stations), 3), dtype=float)

    radius = spec.radius_km
    mean_motion = math.sqrt(EARTH_MU_KM3_S2 / radius**3)  # rad/s
    incl = math.radians(spec.inclination_deg)
    cos_i, sin_i = math.cos(incl), math.sin(incl)

    sat = 0
    for plane in range(spec.plane_count):
        raan = 2.0 * math.pi * plane / spec.plane_count
        cos_o, sin_o = math.cos(raan), math.sin(raan)
        for slot in range(spec.sats_per_plane):
            phase0 = 2.0 * math.pi * (
                slot / spec.sats_per_plane
                + spec.phasing * plane / (spec.plane_count * spec.sats_per_plane)
            )
            theta = phase0 + mean_motion * times
            cos_t, sin_t = np.cos(theta), np.sin(theta)
            positions[:, sat, 0] = radius * (cos_o * cos_t - sin_o * cos_i * sin_t)
            positions[:, sat, 1] = radius * (sin_o * cos_t + cos_o * cos_i * sin_t)
            positions[:, sat, 2] = radius * (sin_i * sin_t)
            sat += 1

    for g, station in enumerate(stations):
        lat = math.radians(station.latitude_deg)
        lon = np.radians(station.longitude_deg) + EARTH_ROTATION_RAD_S * times
        positions[:, n_sats + g, 0] = EARTH_RADIUS_KM * math.cos(lat) * np.cos(lon)
        positions[:, n_sats + g, 1] = EARTH_RADIUS_KM * math.cos(lat) * np.sin(lon)
        positions[:, n_sats + g, 2] = EARTH_RADIUS_KM * math.sin(lat)

    return positions


def _segment_blocked_by_earth(p1: np.ndarray, p2: np.ndarray) -> np.ndarray:
    """True where the segment p1-p2 dips below the Earth sphere.

    Inputs are (..., 3) arrays; the test finds the closest approach of the
    segment to the Earth's center.
    """
    d = p2 - p1
    dd = np.sum(d * d, axis=-1)
    t = np.where(dd > 0.0, -np.sum(p1 * d, axis=-1) / np.where(dd > 0.0, dd, 1.0), 0.0)
    t = np.clip(t, 0.0, 1.0)
    closest = p1 + t[..., None] * d
    return np.sum(closest * closest, axis=-1) < EARTH_RADIUS_KM**2


def build_visibility(
    positions: np.ndarray,
    n_satellites: int,
    params: VisibilityParams = VisibilityParams(),
) -> np.ndarray:
    """Per-step visibility matrices from a position table.

    Two satellites see each other when within ``isl_max_range_km`` and the
    line of sight clears the Earth sphere.  A satellite and a ground station
    see each other when the satellite's elevation above the station horizon
    is at least ``min_elevation_deg``.  Ground stations never see each other.
    """
    steps, n_nodes, _ = positions.shape
    vis = np.zeros((steps, n_nodes, n_nodes), dtype=bool)
    n_sats = n_satellites

    if n_sats >= 2:
        ps = positions[:, :n_sats, :]
        rel = ps[:, :, None, :] - ps[:, None, :, :]
        dist = np.linalg.norm(rel, axis=-1)
        in_range = dist <= params.isl_max_range_km
        blocked = _segment_blocked_by_earth(
            np.broadcast_to(ps[:, :, None, :], rel.shape), ps[:, None, :, :]
        )
        isl = in_range & ~blocked
        idx = np.arange(n_sats)
        isl[:, idx, idx] = False
        vis[:, :n_sats, :n_sats] = isl

    if n_nodes > n_sats and n_sats >= 1:
        pg = positions[:, n_sats:, :]  # (steps, n_gs, 3)
        ps = positions[:, :n_sats, :]
        rel = ps[:, :, None, :] - pg[:, None, :, :]  # (steps, n_sats, n_gs, 3)
        rel_norm = np.linalg.norm(rel, axis=-1)
        gs_norm = np.linalg.norm(pg, axis=-1)[:, None, :]
        sin_el = np.sum(rel * pg[:, None, :, :], axis=-1) / np.where(
            rel_norm * gs_norm > 0.0, rel_norm * gs_norm, 1.0
        )
        gsl = sin_el >= math.sin(math.radians(params.min_elevation_deg))
        vis[:, :n_sats, n_sats:] = gsl
        vis[:, n_sats:, :n_sats] = np.swapaxes(gsl, 1, 2)

    return vis


# ---------------------------------------------------------------------------
# Scenario assembly
# ---------------------------------------------------------------------------


def random_stations(count: int, seed: int) -> list[GroundStation]:
    """A deterministic batch of ground stations at temperate-ish latitudes."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x675]))
    stations = []
    for g in range(count):
        lat = float(rng.uniform(-55.0, 55.0))
        lon = float(rng.uniform(-180.0, 180.0))
        stations.append(GroundStation(latitude_deg=lat, longitude_deg=lon, name=f"gs-{g:02d}"))
    return stations


def _draw_requirements(
    policy: RequirementPolicy, n_satellites: int, n_nodes: int, seed: int
) -> tuple[tuple[int, ...], ...]:
    if policy.kind == "all-pairs":
        return tuple(
            tuple(j for j in range(n_nodes) if j != i) for i in range(n_satellites)
        )
    if policy.kind == "explicit":
        sets = policy.explicit or ()
        if len(sets) != n_satellites:
            raise ScenarioError(
                f"explicit policy provides {len(sets)} sets for {n_satellites} satellites"
            )
        for i, targets in enumerate(sets):
            for j in targets:
                if not (0 <= j < n_nodes) or j == i:
                    raise ScenarioError(f"explicit requirement {j} invalid for satellite {i}")
        return tuple(tuple(sorted(set(s))) for s in sets)
    # random-k
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xC1]))
    out = []
    for i in range(n_satellites):
        candidates = np.array([j for j in range(n_nodes) if j != i])
        k = min(policy.k, len(candidates))
        chosen = rng.choice(candidates, size=k, replace=False) if k else np.array([], dtype=int)
        out.append(tuple(sorted(int(j) for j in chosen)))
    return tuple(out)


def generate_scenario(
    spec: OrbitSpec,
    stations: Sequence[GroundStation],
    grid: TimeGrid,
    *,
    visibility_params: VisibilityParams = VisibilityParams(),
    requirement_policy: RequirementPolicy = RequirementPolicy.random_k(3),
    budget_isl: int = 45,
    budget_gsl: int = 15,
    per_step_degree_cap: int = 1,
    seed: int = 0,
    metadata: dict | None = None,
) -> Scenario:
    """Build a full scenario.  Deterministic given identical arguments."""
    positions = propagate(spec, grid, stations)
    visibility = build_visibility(positions, spec.n_satellites, visibility_params)
    requirements = _draw_requirements(
        requirement_policy, spec.n_satellites, spec.n_satellites + len(stations), seed
    )
    meta = {
        "seed": int(seed),
        "orbit": {
            "altitude_km": spec.altitude_km,
            "inclination_deg": spec.inclination_deg,
            "plane_count": spec.plane_count,
            "sats_per_plane": spec.sats_per_plane,
            "phasing": spec.phasing,
        },
        "visibility_params": {
            "isl_max_range_km": visibility_params.isl_max_range_km,
            "min_elevation_deg": visibility_params.min_elevation_deg,
        },
        "requirement_policy": {"kind": requirement_policy.kind, "k": requirement_policy.k},
    }
    if metadata:
        meta.update(metadata)
    scenario = Scenario(
        grid=grid,
        n_satellites=spec.n_satellites,
        n_stations=len(stations),
        visibility=visibility,
        requirements=requirements,
        budget_isl=budget_isl,
        budget_gsl=budget_gsl,
        per_step_degree_cap=per_step_degree_cap,
        metadata=meta,
    )
    logger.info(
        "generated scenario: %d satellites, %d stations, %d steps, %d visible (t,edge) slots",
        scenario.n_satellites,
        scenario.n_stations,
        grid.step_count,
        len(scenario.visible_triples()),
    )
    return scenario


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def _scenario_payload(scenario: Scenario, include_metadata: bool = True) -> dict:
    sparse = []
    for t in range(scenario.grid.step_count):
        pairs = np.argwhere(np.triu(scenario.visibility[t], k=1))
        sparse.append([[int(i), int(j)] for i, j in pairs])
    payload = {
        "version": SCENARIO_FORMAT_VERSION,
        "nodes": {
            "satellites": scenario.n_satellites,
            "ground_stations": scenario.n_stations,
        },
        "grid": {
            "step_count": scenario.grid.step_count,
            "step_seconds": scenario.grid.step_seconds,
            "epoch": scenario.grid.epoch,
        },
        "visibility": sparse,
        "requirements": [list(c) for c in scenario.requirements],
        "budgets": {"isl": scenario.budget_isl, "gsl": scenario.budget_gsl},
        "per_step_degree_cap": scenario.per_step_degree_cap,
    }
    if include_metadata and scenario.metadata:
        payload["metadata"] = scenario.metadata
    return payload


def scenario_to_bytes(scenario: Scenario) -> bytes:
    payload = _scenario_payload(scenario)
    return (json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n").encode("utf-8")


def save_scenario(scenario: Scenario, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(scenario_to_bytes(scenario))


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise FileFormatError(message)


def scenario_from_payload(payload: dict) -> Scenario:
    _require(isinstance(payload, dict), "scenario file: top level must be an object")
    version = payload.get("version")
    _require(
        version == SCENARIO_FORMAT_VERSION,
        f"scenario file: unsupported version {version!r} (expected {SCENARIO_FORMAT_VERSION})",
    )
    for key in ("nodes", "grid", "visibility", "requirements", "budgets", "per_step_degree_cap"):
        _require(key in payload, f"scenario file: missing field {key!r}")

    nodes = payload["nodes"]
    _require(
        isinstance(nodes, dict) and "satellites" in nodes and "ground_stations" in nodes,
        "scenario file: nodes must carry 'satellites' and 'ground_stations'",
    )
    n_sats, n_gs = int(nodes["satellites"]), int(nodes["ground_stations"])
    n_nodes = n_sats + n_gs

    grid_obj = payload["grid"]
    try:
        grid = TimeGrid(
            step_count=int(grid_obj["step_count"]),
            step_seconds=float(grid_obj["step_seconds"]),
            epoch=str(grid_obj.get("epoch", "2000-01-01T00:00:00Z")),
        )
    except (KeyError, TypeError, ValueError, ScenarioError) as exc:
        raise FileFormatError(f"scenario file: bad grid: {exc}") from exc

    sparse = payload["visibility"]
    _require(
        isinstance(sparse, list) and len(sparse) == grid.step_count,
        f"scenario file: visibility must list {grid.step_count} steps",
    )
    vis = np.zeros((grid.step_count, n_nodes, n_nodes), dtype=bool)
    for t, pairs in enumerate(sparse):
        for entry in pairs:
            _require(
                isinstance(entry, list) and len(entry) == 2,
                f"scenario file: visibility step {t}: entries must be [i,j] pairs",
            )
            i, j = int(entry[0]), int(entry[1])
            _require(0 <= i < j < n_nodes, f"scenario file: visibility step {t}: bad pair [{i},{j}]")
            _require(
                i < n_sats,
                f"scenario file: visibility step {t}: pair [{i},{j}] links two ground stations",
            )
            vis[t, i, j] = vis[t, j, i] = True

    reqs = payload["requirements"]
    _require(
        isinstance(reqs, list) and len(reqs) == n_sats,
        f"scenario file: requirements must list {n_sats} satellites",
    )
    budgets = payload["budgets"]
    _require(
        isinstance(budgets, dict) and "isl" in budgets and "gsl" in budgets,
        "scenario file: budgets must carry 'isl' and 'gsl'",
    )
    try:
        return Scenario(
            grid=grid,
            n_satellites=n_sats,
            n_stations=n_gs,
            visibility=vis,
            requirements=tuple(tuple(int(j) for j in c) for c in reqs),
            budget_isl=int(budgets["isl"]),
            budget_gsl=int(budgets["gsl"]),
            per_step_degree_cap=int(payload["per_step_degree_cap"]),
            metadata=payload.get("metadata", {}),
        )
    except ScenarioError as exc:
        raise FileFormatError(f"scenario file: {exc}") from exc


def load_scenario(path: str) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FileFormatError(f"scenario file {path}: invalid JSON at line {exc.lineno}") from exc
    return scenario_from_payload(payload)
