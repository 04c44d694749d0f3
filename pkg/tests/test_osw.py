"""Workspace data model: changesets, nodes, ways, and the export document.

The export must be byte-stable (sorted keys, fixed separators) so repeated
downloads of an unchanged workspace compare equal, and it must never carry
anything but coordinates and attribute tags.
"""

from __future__ import annotations

import json

import pytest

from groundmapper.errors import (
    AlreadyClosed,
    ChangesetClosed,
    DanglingReference,
    DuplicateNodeId,
    Unauthenticated,
)
from groundmapper.geo import GeoPoint
from groundmapper.osw import (
    ChangesetState,
    OswNode,
    OswWay,
    Workspace,
    parse_workspace,
    serialize_workspace,
)
from groundmapper.stabilize import FeatureClass

ORIGIN = GeoPoint(47.6062, -122.3321)


def _ws() -> Workspace:
    return Workspace("default")


def _point(offset: float) -> GeoPoint:
    return GeoPoint(47.6062 + offset * 1e-5, -122.3321)


def _add_sidewalk_nodes(ws: Workspace, cs_id: int, count: int) -> list:
    nodes = []
    for i in range(count):
        nodes.append(
            ws.create_node(
                cs_id,
                _point(i),
                FeatureClass.SIDEWALK,
                tags={"capture_id": i},
                timestamp=float(i),
            )
        )
    return nodes


class TestChangesetLifecycle:
    def test_open_starts_empty(self):
        cs = _ws().open_changeset("mapper")
        assert cs.state is ChangesetState.OPEN
        assert cs.node_ids == []
        assert cs.way_ids == []

    def test_two_opens_get_distinct_ids(self):
        ws = _ws()
        a = ws.open_changeset("mapper")
        b = ws.open_changeset("mapper")
        assert a.changeset_id != b.changeset_id

    def test_anonymous_open_refused(self):
        with pytest.raises(Unauthenticated):
            _ws().open_changeset("")

    def test_close_twice(self):
        ws = _ws()
        cs = ws.open_changeset("mapper")
        ws.close_changeset(cs.changeset_id)
        with pytest.raises(AlreadyClosed):
            ws.close_changeset(cs.changeset_id)

    def test_every_edit_fails_after_close(self):
        # exhaustive over the edit surface: create_node, add_node, close
        ws = _ws()
        cs = ws.open_changeset("mapper")
        node = ws.create_node(cs.changeset_id, ORIGIN, FeatureClass.POLE, {}, 0.0)
        ws.close_changeset(cs.changeset_id)
        assert cs.state is ChangesetState.CLOSED
        with pytest.raises(ChangesetClosed):
            ws.create_node(cs.changeset_id, ORIGIN, FeatureClass.POLE, {}, 1.0)
        with pytest.raises(ChangesetClosed):
            ws.add_node(
                cs.changeset_id,
                OswNode(
                    node_id=999,
                    location=ORIGIN,
                    feature_class=FeatureClass.POLE,
                    tags={},
                    changeset_id=cs.changeset_id,
                    user_id="mapper",
                    timestamp=1.0,
                ),
            )
        with pytest.raises(AlreadyClosed):
            ws.close_changeset(cs.changeset_id)
        # the node added while open is still there
        assert node.node_id in ws.nodes

    def test_unknown_changeset(self):
        with pytest.raises(KeyError):
            _ws().create_node(42, ORIGIN, FeatureClass.POLE, {}, 0.0)


class TestNodes:
    def test_sequential_ids(self):
        ws = _ws()
        cs = ws.open_changeset("mapper")
        a = ws.create_node(cs.changeset_id, ORIGIN, FeatureClass.POLE, {}, 0.0)
        b = ws.create_node(cs.changeset_id, ORIGIN, FeatureClass.POLE, {}, 1.0)
        assert b.node_id == a.node_id + 1

    def test_duplicate_id_rejected(self):
        ws = _ws()
        cs = ws.open_changeset("mapper")
        node = ws.create_node(cs.changeset_id, ORIGIN, FeatureClass.POLE, {}, 0.0)
        with pytest.raises(DuplicateNodeId):
            ws.add_node(cs.changeset_id, node)

    def test_node_owner_comes_from_the_changeset(self):
        ws = _ws()
        cs = ws.open_changeset("surveyor")
        node = ws.create_node(cs.changeset_id, ORIGIN, FeatureClass.POLE, {}, 0.0)
        assert node.user_id == "surveyor"
        assert node.changeset_id == cs.changeset_id

    def test_capture_key_makes_retries_idempotent(self):
        ws = _ws()
        cs = ws.open_changeset("mapper")
        first = ws.create_node(
            cs.changeset_id, ORIGIN, FeatureClass.POLE, {}, 0.0, capture_key="cap:0:pole:0"
        )
        again = ws.create_node(
            cs.changeset_id, ORIGIN, FeatureClass.POLE, {}, 0.0, capture_key="cap:0:pole:0"
        )
        assert again is first
        assert len(ws.nodes) == 1

    def test_different_keys_make_different_nodes(self):
        ws = _ws()
        cs = ws.open_changeset("mapper")
        ws.create_node(cs.changeset_id, ORIGIN, FeatureClass.POLE, {}, 0.0, capture_key="a")
        ws.create_node(cs.changeset_id, ORIGIN, FeatureClass.POLE, {}, 0.0, capture_key="b")
        assert len(ws.nodes) == 2


class TestWayAssembly:
    def test_three_sidewalk_nodes_form_a_way_in_capture_order(self):
        ws = _ws()
        cs = ws.open_changeset("mapper")
        nodes = _add_sidewalk_nodes(ws, cs.changeset_id, 3)
        way = ws.close_changeset(cs.changeset_id)
        assert way is not None
        assert way.node_refs == tuple(n.node_id for n in nodes)

    def test_capture_order_not_insertion_order(self):
        # nodes inserted out of order still chain by timestamp
        ws = _ws()
        cs = ws.open_changeset("mapper")
        late = ws.create_node(cs.changeset_id, _point(2), FeatureClass.SIDEWALK, {}, 9.0)
        early = ws.create_node(cs.changeset_id, _point(0), FeatureClass.SIDEWALK, {}, 1.0)
        mid = ws.create_node(cs.changeset_id, _point(1), FeatureClass.SIDEWALK, {}, 5.0)
        way = ws.close_changeset(cs.changeset_id)
        assert way.node_refs == (early.node_id, mid.node_id, late.node_id)

    def test_single_sidewalk_node_forms_no_way(self):
        ws = _ws()
        cs = ws.open_changeset("mapper")
        _add_sidewalk_nodes(ws, cs.changeset_id, 1)
        assert ws.close_changeset(cs.changeset_id) is None
        assert ws.ways == {}

    def test_object_nodes_never_join_the_way(self):
        ws = _ws()
        cs = ws.open_changeset("mapper")
        nodes = _add_sidewalk_nodes(ws, cs.changeset_id, 2)
        ws.create_node(cs.changeset_id, ORIGIN, FeatureClass.POLE, {}, 0.5)
        way = ws.close_changeset(cs.changeset_id)
        assert way.node_refs == tuple(n.node_id for n in nodes)


class TestSerialization:
    def test_empty_workspace(self):
        doc = json.loads(serialize_workspace({}, {}))
        assert doc["type"] == "FeatureCollection"
        assert doc["features"] == []

    def test_nodes_and_way_become_three_features(self):
        ws = _ws()
        cs = ws.open_changeset("mapper")
        nodes = _add_sidewalk_nodes(ws, cs.changeset_id, 2)
        ws.close_changeset(cs.changeset_id)
        doc = json.loads(serialize_workspace(ws.nodes, ws.ways))
        assert len(doc["features"]) == 3
        points = [f for f in doc["features"] if f["geometry"]["type"] == "Point"]
        lines = [f for f in doc["features"] if f["geometry"]["type"] == "LineString"]
        assert len(points) == 2 and len(lines) == 1
        # LineString coordinates equal node coordinates in ref order
        expected = [
            [n.location.longitude, n.location.latitude] for n in nodes
        ]
        assert lines[0]["geometry"]["coordinates"] == expected
        assert lines[0]["properties"]["class"] == "sidewalk"

    def test_node_properties_carry_class_changeset_and_tags(self):
        ws = _ws()
        cs = ws.open_changeset("mapper")
        ws.create_node(
            cs.changeset_id, ORIGIN, FeatureClass.SIDEWALK, {"width": 2.0, "capture_id": 4}, 3.5
        )
        doc = json.loads(serialize_workspace(ws.nodes, ws.ways))
        props = doc["features"][0]["properties"]
        assert props["class"] == "sidewalk"
        assert props["changeset_id"] == cs.changeset_id
        assert props["width"] == 2.0
        assert props["capture_id"] == 4
        assert props["timestamp"] == 3.5

    def test_deterministic_bytes(self):
        ws = _ws()
        cs = ws.open_changeset("mapper")
        _add_sidewalk_nodes(ws, cs.changeset_id, 3)
        ws.close_changeset(cs.changeset_id)
        assert serialize_workspace(ws.nodes, ws.ways) == serialize_workspace(ws.nodes, ws.ways)

    def test_dangling_reference_rejected(self):
        way = OswWay(way_id=1, node_refs=(1, 2), tags={}, changeset_id=1, user_id="m")
        with pytest.raises(DanglingReference):
            serialize_workspace({}, {1: way})

    def test_parse_round_trip(self):
        ws = _ws()
        cs = ws.open_changeset("mapper")
        _add_sidewalk_nodes(ws, cs.changeset_id, 3)
        ws.create_node(
            cs.changeset_id, GeoPoint(47.61, -122.33), FeatureClass.POLE, {"instance_id": 0}, 2.0
        )
        ws.close_changeset(cs.changeset_id)
        text = serialize_workspace(ws.nodes, ws.ways)
        nodes, ways = parse_workspace(text)
        assert set(nodes) == set(ws.nodes)
        assert set(ways) == set(ws.ways)
        for nid, node in nodes.items():
            assert node.feature_class is ws.nodes[nid].feature_class
            assert node.tags == ws.nodes[nid].tags
            assert node.location.latitude == pytest.approx(
                ws.nodes[nid].location.latitude, abs=1e-9
            )
            assert node.location.longitude == pytest.approx(
                ws.nodes[nid].location.longitude, abs=1e-9
            )
        for wid, way in ways.items():
            assert way.node_refs == ws.ways[wid].node_refs

    def test_serialize_parse_serialize_is_stable(self):
        ws = _ws()
        cs = ws.open_changeset("mapper")
        _add_sidewalk_nodes(ws, cs.changeset_id, 2)
        ws.close_changeset(cs.changeset_id)
        text = serialize_workspace(ws.nodes, ws.ways)
        nodes, ways = parse_workspace(text)
        assert serialize_workspace(nodes, ways) == text
