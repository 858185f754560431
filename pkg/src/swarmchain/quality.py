"""Data stamps, density models, comparison outcomes and trust scores.

A stamp is a characterized sample of shared sensor data: what kind of
feature it shows, how many points, from how far, and where. Two stamps of
the same feature are compared after normalizing their point counts by what
the density model expects for their viewing geometry.
"""
from __future__ import annotations

import bisect
import csv
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Mapping

import numpy as np

from .encoding import canonical_json, sha256
from .errors import Incomparable, InsufficientCalibration, SelfValidation, UnknownChannelCount

DATA_TYPES = ("image", "pointcloud", "radar")
FEATURE_CLASSES = ("planar", "revolute", "composite")
LIDAR_CHANNELS = (8, 16, 32, 64)
# calibration scans for the linear classes came from a 32-channel lidar
REFERENCE_CHANNELS = 32
BYTES_PER_POINT = 12


class Outcome(str, Enum):
    MATCH = "Match"
    DENSITY_RELATION = "MatchWithDensityRelation"
    MISMATCH = "Mismatch"


@dataclass(frozen=True)
class DataStamp:
    producer: str
    data_type: str
    feature_class: str
    point_count: int
    location: tuple
    location_error: float = 1.0
    channels: int | None = None
    distance_m: float | None = None
    extent_m: float | None = None
    epoch: int = 0

    def __post_init__(self):
        if self.data_type not in DATA_TYPES:
            raise ValueError(f"unknown data type {self.data_type!r}")
        if self.feature_class not in FEATURE_CLASSES:
            raise ValueError(f"unknown feature class {self.feature_class!r}")
        if self.point_count <= 0:
            raise ValueError("point_count must be positive")
        if self.data_type == "pointcloud" and self.channels not in LIDAR_CHANNELS:
            raise ValueError(f"pointcloud channels must be one of {LIDAR_CHANNELS}")
        object.__setattr__(self, "location", tuple(float(c) for c in self.location))

    def to_dict(self) -> dict:
        return {"producer": self.producer, "data_type": self.data_type, "feature_class": self.feature_class,
                "point_count": self.point_count, "location": list(self.location),
                "location_error": self.location_error, "channels": self.channels,
                "distance_m": self.distance_m, "extent_m": self.extent_m, "epoch": self.epoch}

    @classmethod
    def from_dict(cls, d) -> "DataStamp":
        return cls(d["producer"], d["data_type"], d["feature_class"], int(d["point_count"]),
                   tuple(d["location"]), d["location_error"], d["channels"], d["distance_m"],
                   d["extent_m"], int(d["epoch"]))

    @property
    def digest(self) -> str:
        return sha256(canonical_json(self.to_dict())).hex()

    @property
    def payload_bytes(self) -> int:
        return self.point_count * BYTES_PER_POINT


@dataclass(frozen=True)
class LinearFit:
    intercept: float
    slope: float
    # fit diagnostics, not part of the model's identity
    r2: float = field(default=1.0, compare=False)
    max_rel_error: float = field(default=0.0, compare=False)

    def __call__(self, x: float) -> float:
        return self.intercept + self.slope * x


@dataclass(frozen=True)
class DensityModel:
    planar: LinearFit
    revolute: LinearFit
    composite: Mapping[int, tuple] = field(default_factory=dict)  # channels -> ((distance, points), ...)
    reference_channels: int = REFERENCE_CHANNELS

    def __post_init__(self):
        if self.planar.slope <= 0:
            raise ValueError("planar slope must be positive")
        if self.revolute.slope >= 0:
            raise ValueError("revolute slope must be negative")
        for ch, knots in self.composite.items():
            pts = [p for _, p in sorted(knots)]
            if any(b >= a for a, b in zip(pts, pts[1:])):
                raise ValueError(f"composite table for {ch} channels must decrease with distance")

    def to_dict(self) -> dict:
        return {
            "planar": [self.planar.intercept, self.planar.slope],
            "revolute": [self.revolute.intercept, self.revolute.slope],
            "composite": {str(ch): [list(k) for k in knots] for ch, knots in sorted(self.composite.items())},
            "reference_channels": self.reference_channels,
        }

    @classmethod
    def from_dict(cls, d) -> "DensityModel":
        return cls(
            LinearFit(*d["planar"]), LinearFit(*d["revolute"]),
            {int(ch): tuple(tuple(k) for k in knots) for ch, knots in d["composite"].items()},
            int(d.get("reference_channels", REFERENCE_CHANNELS)),
        )


@dataclass(frozen=True)
class CalibrationPoint:
    feature_class: str
    channels: int
    x: float
    points: float


# Building corner: horizontal wall length (m) vs points.
FIG_PLANAR = ((2.6, 278), (2.2, 229), (1.96, 202), (1.55, 166), (1.36, 143), (1.21, 128), (0.9, 97), (0.46, 58))
# Tree: distance (m) vs points.
FIG_REVOLUTE = ((16.1, 134), (15.2, 165), (11.8, 241), (10.2, 326), (8, 395))
# Parked car, per channel count: distance (m) vs points.
FIG_COMPOSITE = {
    16: ((9.8, 150), (8, 273), (5.5, 578), (4, 1117)),
    8: ((9.8, 76), (8, 114), (5.5, 294), (4, 457)),
}


def default_calibration_points() -> list:
    pts = [CalibrationPoint("planar", REFERENCE_CHANNELS, x, y) for x, y in FIG_PLANAR]
    pts += [CalibrationPoint("revolute", REFERENCE_CHANNELS, x, y) for x, y in FIG_REVOLUTE]
    for ch, knots in FIG_COMPOSITE.items():
        pts += [CalibrationPoint("composite", ch, x, y) for x, y in knots]
    return pts


def fit_line(xs, ys, weighting: str = "ols") -> LinearFit:
    """Least-squares line. ``weighting="relative"`` minimizes squared relative residuals."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if len(x) < 2 or np.ptp(x) == 0:
        raise InsufficientCalibration("need at least two distinct x values")
    if weighting == "ols":
        w = np.ones_like(y)
    elif weighting == "relative":
        w = 1.0 / y
    else:
        raise ValueError(f"unknown weighting {weighting!r}")
    A = np.column_stack([np.ones_like(x), x]) * w[:, None]
    (a, b), *_ = np.linalg.lstsq(A, y * w, rcond=None)
    pred = a + b * x
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot else 1.0
    return LinearFit(float(a), float(b), r2, float(np.max(np.abs(pred / y - 1))))


def fit_density_models(calibration_points: Iterable[CalibrationPoint], weighting: str = "ols",
                       base: DensityModel | None = None) -> DensityModel:
    """Fit the two linear classes and store composite knots verbatim.

    Classes with no points at all are taken from ``base`` when given.
    """
    pts = list(calibration_points)
    if not pts:
        raise InsufficientCalibration("no calibration points")
    by_class = {c: [p for p in pts if p.feature_class == c] for c in FEATURE_CLASSES}
    fits = {}
    for c in ("planar", "revolute"):
        cls_pts = by_class[c]
        if not cls_pts and base is not None:
            fits[c] = getattr(base, c)
            continue
        if len(cls_pts) < 2:
            raise InsufficientCalibration(f"{c} needs at least two calibration points")
        fits[c] = fit_line([p.x for p in cls_pts], [p.points for p in cls_pts], weighting)
    composite = {}
    for p in by_class["composite"]:
        composite.setdefault(int(p.channels), []).append((float(p.x), float(p.points)))
    for ch, knots in composite.items():
        if len(knots) < 2:
            raise InsufficientCalibration(f"composite series for {ch} channels needs two knots")
        composite[ch] = tuple(sorted(knots))
    if not composite and base is not None:
        composite = dict(base.composite)
    linear = by_class["planar"] or by_class["revolute"]
    ref = linear[0].channels if linear else (base.reference_channels if base else REFERENCE_CHANNELS)
    return DensityModel(fits["planar"], fits["revolute"], composite, ref)


def default_model() -> DensityModel:
    # relative weighting keeps every calibration point within 10%; plain OLS
    # misses the 11.8 m tree point by 10.7%
    return fit_density_models(default_calibration_points(), weighting="relative")


def load_calibration_points(path) -> list:
    """CSV with columns feature_class, channels, x, points."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = ("feature_class", "channels", "x", "points")
        missing = [c for c in need if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"calibration CSV missing column(s): {', '.join(missing)}")
        out = []
        for i, rec in enumerate(reader, start=2):
            if rec["feature_class"] not in FEATURE_CLASSES:
                raise ValueError(f"line {i}: unknown feature_class {rec['feature_class']!r}")
            out.append(CalibrationPoint(rec["feature_class"], int(rec["channels"]), float(rec["x"]),
                                        float(rec["points"])))
    return out


def _interp_knots(knots, x: float) -> float:
    xs = [k[0] for k in knots]
    ys = [k[1] for k in knots]
    if x in xs:
        return float(ys[xs.index(x)])
    i = min(max(bisect.bisect_right(xs, x) - 1, 0), len(xs) - 2)
    t = (x - xs[i]) / (xs[i + 1] - xs[i])
    return ys[i] + t * (ys[i + 1] - ys[i])


def expected_point_count(model: DensityModel, stamp: DataStamp) -> float:
    """Points the model expects for this stamp's geometry (never below 1)."""
    if stamp.data_type != "pointcloud":
        # no characterization for images/radar yet: the stamp is its own expectation
        return float(stamp.point_count)
    scale = stamp.channels / model.reference_channels
    if stamp.feature_class == "planar":
        if stamp.extent_m is None:
            raise ValueError("planar stamp needs extent_m")
        val = model.planar(stamp.extent_m) * scale
    elif stamp.feature_class == "revolute":
        if stamp.distance_m is None:
            raise ValueError("revolute stamp needs distance_m")
        val = model.revolute(stamp.distance_m) * scale
    else:
        if stamp.distance_m is None:
            raise ValueError("composite stamp needs distance_m")
        knots = model.composite.get(stamp.channels)
        if knots is None:
            raise UnknownChannelCount(stamp.channels)
        val = _interp_knots(knots, stamp.distance_m)
    return max(1.0, val)


@dataclass(frozen=True)
class ComparisonResult:
    outcome: Outcome
    detail: float
    validator: str | None = None
    producer: str | None = None


def locations_overlap(a: DataStamp, b: DataStamp) -> bool:
    return math.dist(a.location, b.location) <= a.location_error + b.location_error


def _same_resolution(a: DataStamp, b: DataStamp, tolerance: float) -> bool:
    if a.data_type == "pointcloud":
        return a.channels == b.channels
    return min(a.point_count, b.point_count) / max(a.point_count, b.point_count) >= 1 - tolerance


def compare_stamps(a: DataStamp, b: DataStamp, model: DensityModel, tolerance: float = 0.25,
                   validator: str | None = None) -> ComparisonResult:
    """Compare a new stamp ``a`` with a reference ``b`` of the same feature.

    ``detail`` is a's normalized density over b's for Match/Mismatch, and the
    resolution ratio (channels, or pixel count) for a density relation.
    """
    if a.data_type != b.data_type or a.feature_class != b.feature_class:
        raise Incomparable("different data type or feature class")
    if not locations_overlap(a, b):
        raise Incomparable("locations do not overlap")
    ra = a.point_count / expected_point_count(model, a)
    rb = b.point_count / expected_point_count(model, b)
    if min(ra, rb) / max(ra, rb) < 1 - tolerance:
        return ComparisonResult(Outcome.MISMATCH, ra / rb, validator, a.producer)
    if _same_resolution(a, b, tolerance):
        return ComparisonResult(Outcome.MATCH, ra / rb, validator, a.producer)
    if a.data_type == "pointcloud":
        detail = a.channels / b.channels
    else:
        detail = a.point_count / b.point_count
    return ComparisonResult(Outcome.DENSITY_RELATION, detail, validator, a.producer)


@dataclass(frozen=True)
class NegativeReceipt:
    issuer: str
    producer: str
    stamp_digest: str = ""


@dataclass(frozen=True)
class QualityConfig:
    q_min: float = 0.01
    match_delta: float = 1.0
    density_delta: float = 0.5
    mismatch_delta: float = -2.0


@dataclass(frozen=True)
class QualityLedger:
    q: Mapping = field(default_factory=dict)
    confirmed: Mapping = field(default_factory=dict)
    edges: frozenset = frozenset()
    members: frozenset = frozenset()

    def score(self, node: str, config: QualityConfig = QualityConfig()) -> float:
        return self.q.get(node, config.q_min)

    def with_member(self, node: str, config: QualityConfig = QualityConfig()) -> "QualityLedger":
        if node in self.members:
            return self
        q = dict(self.q)
        q.setdefault(node, config.q_min)
        return replace(self, q=q, members=self.members | {node})


def _snap(q: float, delta: float, q_min: float) -> float:
    if abs(q) < 1e-12:
        return q_min if delta > 0 else -q_min
    return q


def update_quality(ledger: QualityLedger, event, config: QualityConfig = QualityConfig()) -> QualityLedger:
    """Fold one comparison result or negative receipt into the ledger."""
    if isinstance(event, NegativeReceipt):
        validator, producer, outcome = event.issuer, event.producer, Outcome.MISMATCH
    else:
        validator, producer, outcome = event.validator, event.producer, Outcome(event.outcome)
    if producer is None:
        raise ValueError("event has no producer")
    if validator == producer:
        raise SelfValidation(f"{producer} cannot validate its own stamp")
    delta = {Outcome.MATCH: config.match_delta, Outcome.DENSITY_RELATION: config.density_delta,
             Outcome.MISMATCH: config.mismatch_delta}[outcome]
    q = dict(ledger.q)
    q[producer] = _snap(q.get(producer, config.q_min) + delta, delta, config.q_min)
    confirmed = dict(ledger.confirmed)
    edges = ledger.edges
    if outcome == Outcome.MATCH:
        confirmed[producer] = confirmed.get(producer, 0) + 1
    if outcome != Outcome.MISMATCH and validator is not None:
        edges = edges | {frozenset((validator, producer))}
    members = ledger.members | {producer} | ({validator} if validator else set())
    return QualityLedger(q, confirmed, edges, members)


def record_validation(ledger: QualityLedger, result: ComparisonResult) -> QualityLedger:
    """Add the validation-graph edge for one positive vote without touching Q."""
    if result.validator == result.producer:
        raise SelfValidation(f"{result.producer} cannot validate its own stamp")
    if Outcome(result.outcome) == Outcome.MISMATCH:
        return replace(ledger, members=ledger.members | {result.validator, result.producer})
    return replace(ledger, edges=ledger.edges | {frozenset((result.validator, result.producer))},
                   members=ledger.members | {result.validator, result.producer})


def global_quality(shard_ledgers: Iterable[QualityLedger], config: QualityConfig = QualityConfig()) -> dict:
    """Merge per-shard scores: confirmation-weighted mean, plain mean if unconfirmed."""
    per_node = {}
    for led in shard_ledgers:
        for node, q in led.q.items():
            per_node.setdefault(node, []).append((q, led.confirmed.get(node, 0)))
    out = {}
    for node, vals in sorted(per_node.items()):
        w = sum(c for _, c in vals)
        if w:
            q = math.fsum(q * c for q, c in vals) / w
        else:
            q = math.fsum(q for q, _ in vals) / len(vals)
        out[node] = q if abs(q) >= 1e-12 else config.q_min
    return out


@dataclass(frozen=True)
class CoalitionReport:
    components: tuple
    honest: frozenset | None
    suspects: tuple
    indistinguishable: tuple


def connected_components(nodes: Iterable[str], edges: Iterable) -> list:
    adj = {n: set() for n in nodes}
    for e in edges:
        a, b = tuple(e)
        adj.setdefault(a, set()).add(b)
        adj.setdefault(b, set()).add(a)
    seen, comps = set(), []
    for start in sorted(adj):
        if start in seen:
            continue
        stack, comp = [start], set()
        while stack:
            n = stack.pop()
            if n in comp:
                continue
            comp.add(n)
            stack.extend(adj[n] - comp)
        seen |= comp
        comps.append(frozenset(comp))
    return sorted(comps, key=lambda c: (-len(c), min(c)))


def edge_density(component, edges) -> float:
    n = len(component)
    if n < 2:
        return 0.0
    inside = sum(1 for e in edges if set(e) <= component)
    return inside / (n * (n - 1) / 2)


def detect_coalitions(graph, honest_fraction_assumption: float = 0.5, density_threshold: float = 0.8) -> CoalitionReport:
    """Find validation-graph components that look like isolated cliques.

    ``graph`` is a :class:`QualityLedger` or a ``(nodes, edges)`` pair. The
    unique largest component is presumed honest when it holds at least
    ``honest_fraction_assumption`` of the connected nodes. Any other dense
    component of two or more nodes is a suspect. When the largest size is
    shared, nothing can be told apart and nothing is flagged.
    """
    if isinstance(graph, QualityLedger):
        nodes, edges = graph.members, graph.edges
    else:
        nodes, edges = graph
    edges = [frozenset(e) for e in edges]
    comps = connected_components(nodes, edges)
    if not comps:
        return CoalitionReport((), None, (), ())
    connected = sum(len(c) for c in comps if len(c) > 1)
    top = len(comps[0])
    tied = tuple(c for c in comps if len(c) == top)
    if len(tied) > 1 or top < 2:
        return CoalitionReport(tuple(comps), None, (), tied if top >= 2 else ())
    if connected and top / connected < honest_fraction_assumption:
        return CoalitionReport(tuple(comps), None, (), ())
    honest = comps[0]
    suspects = tuple(c for c in comps[1:] if len(c) >= 2 and edge_density(c, edges) >= density_threshold)
    return CoalitionReport(tuple(comps), honest, suspects, ())
