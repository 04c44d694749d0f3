"""OpenSidewalks-style workspace model: nodes, ways, and changesets.

A workspace accumulates point features (nodes) grouped into changesets.
Closing a changeset that gathered at least two sidewalk nodes assembles one
way over them in capture order. The whole workspace serializes to a GeoJSON
FeatureCollection that round-trips losslessly and is byte-stable, so repeat
exports can be diffed.

Privacy note: nodes carry coordinates, class names, and scalar tags only.
No raster content ever enters this model, so nothing image-like can leak
into an export.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Optional

from .errors import (
    AlreadyClosed,
    ChangesetClosed,
    DanglingReference,
    DuplicateNodeId,
    Unauthenticated,
)
from .geo import GeoPoint
from .stabilize import FeatureClass

# Property names the serializer owns; tags may not shadow them.
_RESERVED_PROPERTIES = frozenset(
    {"class", "changeset_id", "user_id", "timestamp", "node_refs", "feature_kind"}
)

_ALLOWED_TAG_TYPES = (str, int, float, bool)


def _check_tags(tags: Mapping) -> dict:
    clean = {}
    for key, value in tags.items():
        if not isinstance(key, str):
            raise ValueError(f"tag keys must be strings, got {key!r}")
        if key in _RESERVED_PROPERTIES:
            raise ValueError(f"tag {key!r} collides with a reserved property")
        if not isinstance(value, _ALLOWED_TAG_TYPES):
            raise ValueError(f"tag {key!r} has unsupported value type {type(value).__name__}")
        clean[key] = value
    return clean


@dataclass(frozen=True)
class OswNode:
    """One uploaded point feature."""

    node_id: int
    location: GeoPoint
    feature_class: FeatureClass
    tags: Mapping
    changeset_id: int
    user_id: str
    timestamp: float

    def __post_init__(self):
        object.__setattr__(self, "tags", _check_tags(self.tags))


@dataclass(frozen=True)
class OswWay:
    """An ordered polyline over previously uploaded nodes."""

    way_id: int
    node_refs: tuple
    tags: Mapping
    changeset_id: int
    user_id: str

    def __post_init__(self):
        if len(self.node_refs) < 2:
            raise ValueError("a way needs at least two node references")
        object.__setattr__(self, "node_refs", tuple(int(r) for r in self.node_refs))
        object.__setattr__(self, "tags", _check_tags(self.tags))


class ChangesetState(str, Enum):
    OPEN = "open"
    CLOSED = "closed"


@dataclass
class Changeset:
    changeset_id: int
    user_id: str
    state: ChangesetState = ChangesetState.OPEN
    created_at: float = 0.0
    closed_at: Optional[float] = None
    node_ids: list = field(default_factory=list)
    way_ids: list = field(default_factory=list)


class Workspace:
    """In-memory feature store with server-issued sequential ids."""

    def __init__(self, workspace_id: str):
        self.workspace_id = workspace_id
        self.nodes: dict = {}
        self.ways: dict = {}
        self.changesets: dict = {}
        self._next_node_id = 1
        self._next_way_id = 1
        self._next_changeset_id = 1
        # capture_key -> node_id, so client retries do not duplicate features
        self._capture_keys: dict = {}

    # --- changeset lifecycle ---

    def open_changeset(self, user_id: str, created_at: float = 0.0) -> Changeset:
        if not user_id:
            raise Unauthenticated("changesets require an authenticated user")
        cs = Changeset(
            changeset_id=self._next_changeset_id,
            user_id=user_id,
            created_at=created_at,
        )
        self._next_changeset_id += 1
        self.changesets[cs.changeset_id] = cs
        return cs

    def _open_changeset_or_raise(self, changeset_id: int) -> Changeset:
        cs = self.changesets.get(changeset_id)
        if cs is None:
            raise KeyError(f"no changeset {changeset_id}")
        return cs

    def create_node(
        self,
        changeset_id: int,
        location: GeoPoint,
        feature_class: FeatureClass,
        tags: Mapping,
        timestamp: float,
        capture_key: Optional[str] = None,
    ) -> OswNode:
        """Allocate an id and insert a node into an open changeset.

        ``capture_key`` is the client's idempotency handle: retrying the same
        key returns the node created first instead of inserting a twin.
        """
        cs = self._open_changeset_or_raise(changeset_id)
        if capture_key is not None:
            existing = self._capture_keys.get((changeset_id, capture_key))
            if existing is not None:
                return self.nodes[existing]
        if cs.state is not ChangesetState.OPEN:
            raise ChangesetClosed(f"changeset {changeset_id} is closed")
        node = OswNode(
            node_id=self._next_node_id,
            location=location,
            feature_class=feature_class,
            tags=tags,
            changeset_id=changeset_id,
            user_id=cs.user_id,
            timestamp=timestamp,
        )
        self.add_node(changeset_id, node)
        if capture_key is not None:
            self._capture_keys[(changeset_id, capture_key)] = node.node_id
        return node

    def restore_capture_key(self, changeset_id: int, capture_key: str, node_id: int) -> None:
        """Re-register an idempotency key during log replay."""
        if node_id not in self.nodes:
            raise DanglingReference(f"capture key for missing node {node_id}")
        self._capture_keys[(changeset_id, capture_key)] = node_id

    def add_node(self, changeset_id: int, node: OswNode) -> Changeset:
        """Insert a fully formed node; exposed for log replay and tests."""
        cs = self._open_changeset_or_raise(changeset_id)
        if cs.state is not ChangesetState.OPEN:
            raise ChangesetClosed(f"changeset {changeset_id} is closed")
        if node.node_id in self.nodes:
            raise DuplicateNodeId(f"node id {node.node_id} already exists")
        self.nodes[node.node_id] = node
        cs.node_ids.append(node.node_id)
        self._next_node_id = max(self._next_node_id, node.node_id + 1)
        return cs

    def close_changeset(self, changeset_id: int, closed_at: float = 0.0) -> Optional[OswWay]:
        """Close a changeset; returns the assembled sidewalk way, if any.

        Sidewalk nodes are chained in capture order (their timestamps), which
        reconstructs the walked path.
        """
        cs = self._open_changeset_or_raise(changeset_id)
        if cs.state is ChangesetState.CLOSED:
            raise AlreadyClosed(f"changeset {changeset_id} already closed")
        cs.state = ChangesetState.CLOSED
        cs.closed_at = closed_at

        sidewalk_nodes = [
            self.nodes[nid]
            for nid in cs.node_ids
            if self.nodes[nid].feature_class is FeatureClass.SIDEWALK
        ]
        if len(sidewalk_nodes) < 2:
            return None
        sidewalk_nodes.sort(key=lambda n: (n.timestamp, n.node_id))
        way = OswWay(
            way_id=self._next_way_id,
            node_refs=tuple(n.node_id for n in sidewalk_nodes),
            tags={},
            changeset_id=changeset_id,
            user_id=cs.user_id,
        )
        self._next_way_id += 1
        self.ways[way.way_id] = way
        cs.way_ids.append(way.way_id)
        return way


def serialize_workspace(nodes: Mapping, ways: Mapping) -> str:
    """Render nodes and ways as a deterministic GeoJSON FeatureCollection.

    Features are ordered by kind then id and the JSON is key-sorted, so the
    same state always yields identical bytes. Way references are validated
    before writing; a dangling ref means the store is corrupt and must not
    be exported.
    """
    for way in ways.values():
        for ref in way.node_refs:
            if ref not in nodes:
                raise DanglingReference(f"way {way.way_id} references missing node {ref}")

    features = []
    for node_id in sorted(nodes):
        node = nodes[node_id]
        properties = {
            "feature_kind": "node",
            "class": node.feature_class.wire_name,
            "changeset_id": node.changeset_id,
            "user_id": node.user_id,
            "timestamp": node.timestamp,
        }
        properties.update(node.tags)
        features.append(
            {
                "type": "Feature",
                "id": node.node_id,
                "geometry": {
                    "type": "Point",
                    "coordinates": [node.location.longitude, node.location.latitude],
                },
                "properties": properties,
            }
        )
    for way_id in sorted(ways):
        way = ways[way_id]
        properties = {
            "feature_kind": "way",
            "class": FeatureClass.SIDEWALK.wire_name,
            "changeset_id": way.changeset_id,
            "user_id": way.user_id,
            "node_refs": list(way.node_refs),
        }
        properties.update(way.tags)
        coords = [
            [nodes[ref].location.longitude, nodes[ref].location.latitude]
            for ref in way.node_refs
        ]
        features.append(
            {
                "type": "Feature",
                "id": way.way_id,
                "geometry": {"type": "LineString", "coordinates": coords},
                "properties": properties,
            }
        )
    doc = {"type": "FeatureCollection", "features": features}
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def parse_workspace(text: str) -> tuple:
    """Parse a workspace export back into (nodes, ways) keyed by id."""
    doc = json.loads(text)
    if doc.get("type") != "FeatureCollection":
        raise ValueError("not a FeatureCollection")
    nodes: dict = {}
    ways: dict = {}
    for feature in doc.get("features", []):
        geometry = feature.get("geometry", {})
        properties = dict(feature.get("properties", {}))
        kind = properties.pop("feature_kind", None)
        if kind == "node":
            if geometry.get("type") != "Point":
                raise ValueError("node feature without Point geometry")
            lon, lat = geometry["coordinates"]
            node = OswNode(
                node_id=int(feature["id"]),
                location=GeoPoint(lat, lon),
                feature_class=FeatureClass.from_wire(properties.pop("class")),
                tags={
                    k: v
                    for k, v in properties.items()
                    if k not in ("changeset_id", "user_id", "timestamp")
                },
                changeset_id=int(properties["changeset_id"]),
                user_id=str(properties["user_id"]),
                timestamp=float(properties["timestamp"]),
            )
            if node.node_id in nodes:
                raise DuplicateNodeId(f"node id {node.node_id} appears twice")
            nodes[node.node_id] = node
        elif kind == "way":
            if geometry.get("type") != "LineString":
                raise ValueError("way feature without LineString geometry")
            way = OswWay(
                way_id=int(feature["id"]),
                node_refs=tuple(int(r) for r in properties.pop("node_refs")),
                tags={
                    k: v
                    for k, v in properties.items()
                    if k not in ("class", "changeset_id", "user_id")
                },
                changeset_id=int(properties["changeset_id"]),
                user_id=str(properties["user_id"]),
            )
            ways[way.way_id] = way
        else:
            raise ValueError(f"unknown feature kind {kind!r}")
    for way in ways.values():
        for ref in way.node_refs:
            if ref not in nodes:
                raise DanglingReference(f"way {way.way_id} references missing node {ref}")
    return nodes, ways
