"""Scenario files: TOML documents describing a swarm and its chain settings.

Layout (every table optional unless noted)::

    name = "demo"
    seed = 1                 # default seed, overridden on the command line
    epochs = 10              # default epoch count

    [chain]                  # any ChainConfig field
    pow_difficulty_bits = 20

    [sim]                    # any SimConfig field
    grid_size = 50.0

    [quality]                # any QualityConfig field
    q_min = 0.01

    [calibration]            # density model: "default", a model JSON, or a points CSV
    model = "model.json"     # paths are relative to the scenario file
    weighting = "relative"

    [defaults]               # merged into every [[nodes]] entry
    channels = 16
    sensors = [{type = "pointcloud", max_size = 4e5, min_res = 8, max_res = 16}]

    [[nodes]]                # required, at least one
    id = "a"
    hash_rate = 89000
    position = [0, 0]
    behavior = "honest"
    online = [[1, 100]]

    [topology]
    kind = "full"            # or "line" (node order) or "explicit"
    bandwidth = 1e6
    latency = 0.01

    [[links]]                # with kind = "explicit", or added on top
    a = "a"
    b = "b"
    bandwidth = 1e6
    latency = 0.01

    [[features]]
    id = "wall"
    feature_class = "planar"
    position = [5, 5]
    extent_m = 2.2

    [outputs]
    fee_table = [20, 1080, 2160, 4320, 8640]
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import tomli

from . import allocation as al
from . import chain as ch
from . import network as net
from . import quality as qu
from .errors import ScenarioError

TOP_KEYS = {"name", "seed", "epochs", "chain", "sim", "quality", "calibration", "defaults", "nodes",
            "topology", "links", "features", "outputs"}
NODE_KEYS = {"id", "hash_rate", "position", "behavior", "online", "channels", "sensors", "needs",
             "position_error", "effort"}


@dataclass
class Scenario:
    name: str
    seed: int
    epochs: int
    chain: ch.ChainConfig
    sim: net.SimConfig
    quality: qu.QualityConfig
    model: qu.DensityModel
    nodes: list
    links: list
    features: list
    outputs: dict = field(default_factory=dict)

    def world(self, seed: int | None = None) -> net.World:
        # ChainConfig is mutable (the world flips accept_simulated_proofs), so copy it
        return net.World(self.nodes, self.links, self.features, dataclasses.replace(self.chain),
                         dataclasses.replace(self.sim), self.quality, self.model,
                         self.seed if seed is None else seed, self.name)


def _config(cls, table, section):
    if not isinstance(table, dict):
        raise ScenarioError(f"[{section}] must be a table", section)
    names = {f.name for f in dataclasses.fields(cls)}
    for k in table:
        if k not in names:
            raise ScenarioError(f"unknown key {section}.{k}", f"{section}.{k}")
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in table.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ScenarioError(f"[{section}]: {e}", section) from e


def _templates(items, key, cls):
    out = []
    for k, item in enumerate(items or []):
        try:
            out.append(cls("", item["type"], float(item["max_size"]), float(item["min_res"]), float(item["max_res"])))
        except KeyError as e:
            raise ScenarioError(f"{key}[{k}] lacks {e.args[0]}", f"{key}[{k}].{e.args[0]}") from e
        except (TypeError, ValueError) as e:
            raise ScenarioError(f"{key}[{k}]: {e}", f"{key}[{k}]") from e
    return tuple(out)


def _node(raw, defaults, k):
    entry = {**defaults, **raw}
    where = f"nodes[{k}]"
    for key in entry:
        if key not in NODE_KEYS:
            raise ScenarioError(f"unknown key {where}.{key}", f"{where}.{key}")
    for req in ("id", "hash_rate"):
        if req not in entry:
            raise ScenarioError(f"{where} lacks required key {req}", f"{where}.{req}")
    try:
        return net.SimNode(
            node_id=str(entry["id"]),
            hash_rate=float(entry["hash_rate"]),
            position=tuple(float(c) for c in entry.get("position", (0.0, 0.0))),
            sensors=_templates(entry.get("sensors"), f"{where}.sensors", al.AvailableData),
            needs=_templates(entry.get("needs"), f"{where}.needs", al.DataRequest),
            behavior=entry.get("behavior", "honest"),
            online_schedule=tuple(tuple(int(x) for x in iv) for iv in entry.get("online", ())),
            channels=int(entry.get("channels", 16)),
            position_error=float(entry.get("position_error", 1.0)),
            effort=None if entry.get("effort") is None else float(entry["effort"]),
        )
    except ValueError as e:
        raise ScenarioError(f"{where}: {e}", where) from e


def _model(table, base: Path):
    if not table:
        return qu.default_model()
    if "model" in table and table["model"] != "default":
        path = base / table["model"]
        try:
            return qu.DensityModel.from_dict(json.loads(path.read_text()))
        except OSError as e:
            raise ScenarioError(f"calibration.model: cannot read {path}", "calibration.model") from e
    if "points" in table:
        path = base / table["points"]
        try:
            pts = qu.load_calibration_points(path)
            return qu.fit_density_models(pts, table.get("weighting", "relative"), base=qu.default_model())
        except (OSError, ValueError) as e:
            raise ScenarioError(f"calibration.points: {e}", "calibration.points") from e
    return qu.default_model()


def _links(doc, node_ids):
    topo = doc.get("topology", {"kind": "full"})
    kind = topo.get("kind", "full")
    bw = float(topo.get("bandwidth", 1e6))
    lat = float(topo.get("latency", 0.01))
    pairs = []
    if kind == "full":
        pairs = [(a, b) for i, a in enumerate(node_ids) for b in node_ids[i + 1:]]
    elif kind == "line":
        pairs = list(zip(node_ids, node_ids[1:]))
    elif kind != "explicit":
        raise ScenarioError(f"topology.kind must be full, line or explicit, got {kind!r}", "topology.kind")
    links = {}
    try:
        for a, b in pairs:
            links[frozenset((a, b))] = net.Link(a, b, bw, lat)
        for k, l in enumerate(doc.get("links", [])):
            a, b = l["a"], l["b"]
            if a not in node_ids or b not in node_ids:
                raise ScenarioError(f"links[{k}] names an unknown node", f"links[{k}]")
            links[frozenset((a, b))] = net.Link(a, b, float(l.get("bandwidth", bw)), float(l.get("latency", lat)))
    except KeyError as e:
        raise ScenarioError(f"link lacks {e.args[0]}", f"links.{e.args[0]}") from e
    except ValueError as e:
        raise ScenarioError(f"topology: {e}", "topology") from e
    return list(links.values())


def parse(doc: dict, base: Path = Path("."), source: str = "scenario") -> Scenario:
    for k in doc:
        if k not in TOP_KEYS:
            raise ScenarioError(f"unknown top-level key {k}", k)
    if not doc.get("nodes"):
        raise ScenarioError("scenario defines no [[nodes]]", "nodes")
    chain_cfg = _config(ch.ChainConfig, doc.get("chain", {}), "chain")
    sim_cfg = _config(net.SimConfig, doc.get("sim", {}), "sim")
    q_cfg = _config(qu.QualityConfig, doc.get("quality", {}), "quality")
    defaults = doc.get("defaults", {})
    nodes = [_node(raw, defaults, k) for k, raw in enumerate(doc["nodes"])]
    ids = [n.node_id for n in nodes]
    if len(set(ids)) != len(ids):
        raise ScenarioError("duplicate node id", "nodes.id")
    features = []
    for k, f in enumerate(doc.get("features", [])):
        try:
            features.append(net.Feature(str(f["id"]), f["feature_class"], tuple(float(c) for c in f["position"]),
                                        f.get("extent_m")))
        except KeyError as e:
            raise ScenarioError(f"features[{k}] lacks {e.args[0]}", f"features[{k}].{e.args[0]}") from e
        if f["feature_class"] not in qu.FEATURE_CLASSES:
            raise ScenarioError(f"features[{k}].feature_class unknown", f"features[{k}].feature_class")
        if f["feature_class"] == "planar" and f.get("extent_m") is None:
            raise ScenarioError(f"features[{k}] is planar and needs extent_m", f"features[{k}].extent_m")
    try:
        seed, epochs = int(doc.get("seed", 0)), int(doc.get("epochs", 10))
    except (TypeError, ValueError) as e:
        raise ScenarioError(f"seed/epochs must be integers: {e}", "seed") from e
    return Scenario(str(doc.get("name", source)), seed, epochs, chain_cfg, sim_cfg, q_cfg,
                    _model(doc.get("calibration"), base), nodes, _links(doc, ids), features,
                    dict(doc.get("outputs", {})))


def load(path) -> Scenario:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise ScenarioError(f"cannot read scenario {path}: {e.strerror}", "scenario") from e
    try:
        doc = tomli.loads(raw.decode("utf-8"))
    except (tomli.TOMLDecodeError, UnicodeDecodeError) as e:
        raise ScenarioError(f"{path}: not valid TOML ({e})", "scenario") from e
    return parse(doc, path.parent, path.stem)


def bundled(name: str) -> Path:
    """Path of a scenario shipped with the package, e.g. ``bundled("coalition")``."""
    p = Path(__file__).parent / "scenarios" / f"{name}.scenario"
    if not p.exists():
        raise FileNotFoundError(p)
    return p


def bundled_names() -> list:
    return sorted(p.stem for p in (Path(__file__).parent / "scenarios").glob("*.scenario"))
