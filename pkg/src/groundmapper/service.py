"""Mock workspace service: changeset wire protocol plus the review API.

The protocol lives under /v1/ and mirrors the osw model one-to-one; the
service cannot be driven into a state the model forbids, it only
translates model errors into HTTP statuses. Review endpoints live under
/review/ and hold detection summaries awaiting human verdicts; a verdict
stages the surviving instances as nodes in the changeset the captures
were enqueued for, and the changeset closes automatically once every
enqueued capture is reviewed.

Persistence is an append-only JSONL event log per workspace, replayed on
startup. Request and response bodies are structured documents with
extra fields forbidden; no raster data can travel through this API.
"""

from __future__ import annotations

import json
import secrets as secrets_module
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

from fastapi import Depends, FastAPI, Header, HTTPException, Response
from pydantic import BaseModel, ConfigDict, Field

from .errors import (
    AlreadyClosed,
    ChangesetClosed,
    DanglingReference,
    FormatError,
    IncompleteVetting,
    InvalidVerdict,
    UnknownInstance,
)
from .geo import GeoPoint
from .osw import ChangesetState, OswNode, Workspace, serialize_workspace
from .stabilize import FeatureClass
from .vetting import VettingRecord, apply_vetting


@dataclass(frozen=True)
class ServiceConfig:
    users: Dict[str, str] = field(default_factory=lambda: {"mapper": "mapper"})
    workspaces: tuple = ("default",)
    token_ttl_s: float = 3600.0
    lock_ttl_s: float = 300.0
    storage_dir: Optional[Path] = None  # None: in-memory only


# --- wire documents -------------------------------------------------------

class _Body(BaseModel):
    model_config = ConfigDict(extra="forbid")


class LoginBody(_Body):
    user_id: str
    secret: str


class LocationBody(_Body):
    latitude: float = Field(ge=-90.0, le=90.0)
    longitude: float = Field(gt=-180.0, le=180.0)

    def point(self) -> GeoPoint:
        return GeoPoint(self.latitude, self.longitude)


class NodeBody(_Body):
    location: LocationBody
    feature_class: str = Field(alias="class")
    tags: Dict[str, object] = Field(default_factory=dict)
    timestamp: float = 0.0
    capture_key: Optional[str] = None


class InstanceDoc(_Body):
    instance_id: int
    feature_class: str = Field(alias="class")
    polygon: List[List[int]]  # contour vertices, [row, col]
    centroid: List[float]  # [u, v]
    location: LocationBody


class TrapezoidDoc(_Body):
    top_row: int
    bottom_row: int
    top_span: List[int]
    bottom_span: List[int]


class SidewalkDoc(_Body):
    width_m: float
    location: LocationBody
    trapezoid: Optional[TrapezoidDoc] = None


class ReviewCaptureDoc(_Body):
    capture_id: int
    timestamp: float
    instances: List[InstanceDoc] = Field(default_factory=list)
    sidewalk: Optional[SidewalkDoc] = None


class QueueBody(_Body):
    workspace_id: str
    changeset_id: int
    captures: List[ReviewCaptureDoc]


class VerdictClassBody(_Body):
    verdict: str
    rejected_instances: List[int] = Field(default_factory=list)


class VerdictBody(_Body):
    capture_id: int
    width_accepted: bool = True
    verdicts: Dict[str, VerdictClassBody]

    def payload(self) -> dict:
        return {
            "capture_id": self.capture_id,
            "width_accepted": self.width_accepted,
            "verdicts": {
                name: {
                    "verdict": body.verdict,
                    "rejected_instances": list(body.rejected_instances),
                }
                for name, body in self.verdicts.items()
            },
        }


# --- server state ---------------------------------------------------------

@dataclass
class _QueueItem:
    workspace_id: str
    changeset_id: int
    user_id: str
    doc: ReviewCaptureDoc
    verdict: Optional[VettingRecord] = None
    staged_nodes: tuple = ()


class _State:
    def __init__(self, config: ServiceConfig):
        self.config = config
        self.lock = threading.RLock()
        self.tokens: Dict[str, tuple] = {}  # token -> (user_id, expires_at)
        self.workspaces: Dict[str, Workspace] = {
            ws: Workspace(ws) for ws in config.workspaces
        }
        self.review: Dict[int, _QueueItem] = {}  # capture_id -> item
        self.review_locks: Dict[int, tuple] = {}  # capture_id -> (token, expires_at)
        if config.storage_dir is not None:
            config.storage_dir.mkdir(parents=True, exist_ok=True)
            for ws_id in config.workspaces:
                self._replay(ws_id)

    # -- persistence --

    def _log_path(self, workspace_id: str) -> Optional[Path]:
        if self.config.storage_dir is None:
            return None
        return self.config.storage_dir / f"{workspace_id}.events.jsonl"

    def append_event(self, workspace_id: str, event: dict) -> None:
        path = self._log_path(workspace_id)
        if path is None:
            return
        with path.open("a") as handle:
            handle.write(json.dumps(event, sort_keys=True) + "\n")

    def _replay(self, workspace_id: str) -> None:
        path = self._log_path(workspace_id)
        if path is None or not path.exists():
            return
        ws = self.workspaces[workspace_id]
        for line_no, line in enumerate(path.read_text().splitlines(), start=1):
            if not line.strip():
                continue
            event = json.loads(line)
            kind = event.get("event")
            if kind == "changeset.open":
                issued = ws.open_changeset(
                    event["user_id"], created_at=event.get("created_at", 0.0)
                )
                if issued.changeset_id != event["changeset_id"]:
                    raise FormatError(str(path), f"line {line_no}", "changeset id drift")
            elif kind == "node.create":
                doc = event["node"]
                node = OswNode(
                    node_id=doc["node_id"],
                    location=GeoPoint(doc["latitude"], doc["longitude"]),
                    feature_class=FeatureClass.from_wire(doc["class"]),
                    tags=doc.get("tags", {}),
                    changeset_id=event["changeset_id"],
                    user_id=doc["user_id"],
                    timestamp=doc.get("timestamp", 0.0),
                )
                ws.add_node(event["changeset_id"], node)
                if event.get("capture_key"):
                    ws.restore_capture_key(
                        event["changeset_id"], event["capture_key"], node.node_id
                    )
            elif kind == "changeset.close":
                way = ws.close_changeset(
                    event["changeset_id"], closed_at=event.get("closed_at", 0.0)
                )
                logged = event.get("way_id")
                formed = way.way_id if way is not None else None
                if logged != formed:
                    raise FormatError(str(path), f"line {line_no}", "way id drift")
            else:
                raise FormatError(str(path), f"line {line_no}", f"unknown event {kind!r}")


def create_app(config: ServiceConfig = ServiceConfig(), ui_dir: Optional[Path] = None) -> FastAPI:
    app = FastAPI(title="groundmapper workspace", docs_url=None, redoc_url=None)
    state = _State(config)
    app.state.gm = state

    def authenticate(authorization: Optional[str] = Header(default=None)) -> str:
        if not authorization or not authorization.startswith("Bearer "):
            raise HTTPException(401, "missing bearer token")
        token = authorization[len("Bearer "):]
        with state.lock:
            entry = state.tokens.get(token)
            if entry is None:
                raise HTTPException(401, "unknown token")
            user_id, expires_at = entry
            if time.time() > expires_at:
                del state.tokens[token]
                raise HTTPException(401, "token expired")
        return user_id

    def current_token(authorization: Optional[str] = Header(default=None)) -> str:
        return authorization[len("Bearer "):] if authorization else ""

    def get_workspace(workspace_id: str) -> Workspace:
        ws = state.workspaces.get(workspace_id)
        if ws is None:
            raise HTTPException(404, f"unknown workspace {workspace_id!r}")
        return ws

    @app.get("/healthz")
    def healthz() -> dict:
        return {"status": "ok"}

    @app.post("/v1/login")
    def login(body: LoginBody) -> dict:
        expected = config.users.get(body.user_id)
        if expected is None or expected != body.secret:
            raise HTTPException(401, "bad credentials")
        token = secrets_module.token_hex(16)
        expires_at = time.time() + config.token_ttl_s
        with state.lock:
            state.tokens[token] = (body.user_id, expires_at)
        return {"token": token, "user_id": body.user_id, "expires_at": expires_at}

    @app.post("/v1/workspaces/{workspace_id}/changesets", status_code=201)
    def open_changeset(workspace_id: str, user_id: str = Depends(authenticate)) -> dict:
        ws = get_workspace(workspace_id)
        with state.lock:
            changeset = ws.open_changeset(user_id, created_at=time.time())
            state.append_event(
                workspace_id,
                {
                    "event": "changeset.open",
                    "changeset_id": changeset.changeset_id,
                    "user_id": user_id,
                    "created_at": changeset.created_at,
                },
            )
        return {"changeset_id": changeset.changeset_id}

    def _owned_changeset(ws: Workspace, changeset_id: int, user_id: str):
        changeset = ws.changesets.get(changeset_id)
        if changeset is None:
            raise HTTPException(404, f"unknown changeset {changeset_id}")
        if changeset.user_id != user_id:
            raise HTTPException(403, "changeset belongs to another user")
        return changeset

    @app.post(
        "/v1/workspaces/{workspace_id}/changesets/{changeset_id}/nodes",
        status_code=201,
    )
    def create_node(
        workspace_id: str,
        changeset_id: int,
        body: NodeBody,
        user_id: str = Depends(authenticate),
    ) -> dict:
        ws = get_workspace(workspace_id)
        try:
            feature_class = FeatureClass.from_wire(body.feature_class)
        except ValueError as exc:
            raise HTTPException(422, str(exc))
        with state.lock:
            _owned_changeset(ws, changeset_id, user_id)
            try:
                node = ws.create_node(
                    changeset_id,
                    location=body.location.point(),
                    feature_class=feature_class,
                    tags=dict(body.tags),
                    timestamp=body.timestamp,
                    capture_key=body.capture_key,
                )
            except ChangesetClosed as exc:
                raise HTTPException(409, str(exc))
            except ValueError as exc:
                raise HTTPException(422, str(exc))
            state.append_event(
                workspace_id,
                {
                    "event": "node.create",
                    "changeset_id": changeset_id,
                    "capture_key": body.capture_key,
                    "node": {
                        "node_id": node.node_id,
                        "latitude": node.location.latitude,
                        "longitude": node.location.longitude,
                        "class": node.feature_class.wire_name,
                        "tags": dict(node.tags),
                        "user_id": node.user_id,
                        "timestamp": node.timestamp,
                    },
                },
            )
        return {"node_id": node.node_id}

    def _close(ws: Workspace, workspace_id: str, changeset_id: int, user_id: str) -> Optional[int]:
        _owned_changeset(ws, changeset_id, user_id)
        try:
            way = ws.close_changeset(changeset_id, closed_at=time.time())
        except AlreadyClosed as exc:
            raise HTTPException(409, str(exc))
        way_id = way.way_id if way is not None else None
        state.append_event(
            workspace_id,
            {
                "event": "changeset.close",
                "changeset_id": changeset_id,
                "closed_at": ws.changesets[changeset_id].closed_at,
                "way_id": way_id,
            },
        )
        return way_id

    @app.put("/v1/workspaces/{workspace_id}/changesets/{changeset_id}/close")
    def close_changeset(
        workspace_id: str, changeset_id: int, user_id: str = Depends(authenticate)
    ) -> dict:
        ws = get_workspace(workspace_id)
        with state.lock:
            way_id = _close(ws, workspace_id, changeset_id, user_id)
        return {"changeset_id": changeset_id, "way_id": way_id}

    @app.get("/v1/workspaces/{workspace_id}/export")
    def export(workspace_id: str, user_id: str = Depends(authenticate)) -> Response:
        ws = get_workspace(workspace_id)
        with state.lock:
            try:
                text = serialize_workspace(ws.nodes, ws.ways)
            except DanglingReference as exc:  # unreachable via the API, but honest
                raise HTTPException(500, str(exc))
        return Response(content=text, media_type="application/geo+json")

    # --- review API --------------------------------------------------------

    def _lock_holder(capture_id: int) -> Optional[str]:
        entry = state.review_locks.get(capture_id)
        if entry is None:
            return None
        token, expires_at = entry
        if time.time() > expires_at:
            del state.review_locks[capture_id]
            return None
        return token

    @app.post("/review/queue", status_code=201)
    def enqueue(body: QueueBody, user_id: str = Depends(authenticate)) -> dict:
        ws = get_workspace(body.workspace_id)
        with state.lock:
            changeset = _owned_changeset(ws, body.changeset_id, user_id)
            if changeset.state is not ChangesetState.OPEN:
                raise HTTPException(409, "changeset already closed")
            if any(
                item.changeset_id == body.changeset_id
                and item.workspace_id == body.workspace_id
                for item in state.review.values()
            ):
                raise HTTPException(409, "changeset already has a review batch")
            for capture in body.captures:
                if capture.capture_id in state.review:
                    raise HTTPException(
                        409, f"capture {capture.capture_id} already enqueued"
                    )
            seen = set()
            for capture in body.captures:
                if capture.capture_id in seen:
                    raise HTTPException(409, "duplicate capture in batch")
                seen.add(capture.capture_id)
                for instance in capture.instances:
                    try:
                        FeatureClass.from_wire(instance.feature_class)
                    except ValueError as exc:
                        raise HTTPException(422, str(exc))
            for capture in body.captures:
                state.review[capture.capture_id] = _QueueItem(
                    workspace_id=body.workspace_id,
                    changeset_id=body.changeset_id,
                    user_id=user_id,
                    doc=capture,
                )
        return {"queued": len(body.captures)}

    @app.get("/review/queue")
    def review_queue(user_id: str = Depends(authenticate)) -> dict:
        with state.lock:
            items = []
            for capture_id in sorted(state.review):
                item = state.review[capture_id]
                if item.verdict is not None:
                    continue
                counts: Dict[str, int] = {}
                for instance in item.doc.instances:
                    counts[instance.feature_class] = (
                        counts.get(instance.feature_class, 0) + 1
                    )
                items.append(
                    {
                        "capture_id": capture_id,
                        "workspace_id": item.workspace_id,
                        "changeset_id": item.changeset_id,
                        "classes": counts,
                        "has_sidewalk": item.doc.sidewalk is not None,
                        "locked": _lock_holder(capture_id) is not None,
                    }
                )
        return {"captures": items}

    def _pending_item(capture_id: int) -> _QueueItem:
        item = state.review.get(capture_id)
        if item is None:
            raise HTTPException(404, f"capture {capture_id} not in the review queue")
        if item.verdict is not None:
            raise HTTPException(409, f"capture {capture_id} already reviewed")
        return item

    @app.get("/review/{capture_id}")
    def review_detail(capture_id: int, user_id: str = Depends(authenticate)) -> dict:
        with state.lock:
            item = _pending_item(capture_id)
            return json.loads(item.doc.model_dump_json(by_alias=True))

    @app.post("/review/{capture_id}/lock")
    def review_lock(
        capture_id: int,
        user_id: str = Depends(authenticate),
        token: str = Depends(current_token),
    ) -> dict:
        with state.lock:
            _pending_item(capture_id)
            holder = _lock_holder(capture_id)
            if holder is not None and holder != token:
                raise HTTPException(409, "capture locked by another reviewer")
            expires_at = time.time() + config.lock_ttl_s
            state.review_locks[capture_id] = (token, expires_at)
        return {"capture_id": capture_id, "locked_until": expires_at}

    @app.delete("/review/{capture_id}/lock")
    def review_unlock(
        capture_id: int,
        user_id: str = Depends(authenticate),
        token: str = Depends(current_token),
    ) -> dict:
        with state.lock:
            holder = _lock_holder(capture_id)
            if holder is not None and holder == token:
                del state.review_locks[capture_id]
        return {"capture_id": capture_id, "locked": False}

    @app.post("/review/{capture_id}/verdict")
    def review_verdict(
        capture_id: int,
        body: VerdictBody,
        user_id: str = Depends(authenticate),
        token: str = Depends(current_token),
    ) -> dict:
        if body.capture_id != capture_id:
            raise HTTPException(422, "capture_id mismatch between path and body")
        with state.lock:
            item = _pending_item(capture_id)
            holder = _lock_holder(capture_id)
            if holder is not None and holder != token:
                raise HTTPException(409, "capture locked by another reviewer")
            try:
                record = VettingRecord.from_payload(body.payload())
            except (ValueError, InvalidVerdict) as exc:
                raise HTTPException(422, str(exc))

            detections: Dict[FeatureClass, list] = {}
            for instance in item.doc.instances:
                cls = FeatureClass.from_wire(instance.feature_class)
                detections.setdefault(cls, []).append(instance)
            try:
                vetted = apply_vetting(detections, record)
            except IncompleteVetting as exc:
                raise HTTPException(422, str(exc))
            except UnknownInstance as exc:
                raise HTTPException(409, str(exc))

            ws = state.workspaces[item.workspace_id]
            changeset = ws.changesets[item.changeset_id]
            if changeset.state is not ChangesetState.OPEN:
                raise HTTPException(409, "changeset closed while capture was pending")

            missing = sorted(cls.wire_name for cls in vetted.missing_flags)
            staged = []

            def _stage(
                location: LocationBody,
                feature_class: FeatureClass,
                tags: dict,
                key: str,
            ) -> int:
                node = ws.create_node(
                    item.changeset_id,
                    location=location.point(),
                    feature_class=feature_class,
                    tags=tags,
                    timestamp=item.doc.timestamp,
                    capture_key=key,
                )
                state.append_event(
                    item.workspace_id,
                    {
                        "event": "node.create",
                        "changeset_id": item.changeset_id,
                        "capture_key": key,
                        "node": {
                            "node_id": node.node_id,
                            "latitude": node.location.latitude,
                            "longitude": node.location.longitude,
                            "class": node.feature_class.wire_name,
                            "tags": dict(node.tags),
                            "user_id": node.user_id,
                            "timestamp": node.timestamp,
                        },
                    },
                )
                staged.append(node.node_id)
                return node.node_id

            has_sidewalk = item.doc.sidewalk is not None
            for instance in vetted.accepted:
                cls = FeatureClass.from_wire(instance.feature_class)
                tags = {"capture_id": capture_id, "instance_id": instance.instance_id}
                if missing and not has_sidewalk:
                    tags["missing_classes"] = ",".join(missing)
                _stage(
                    instance.location,
                    cls,
                    tags,
                    key=f"review:{item.workspace_id}:{item.changeset_id}:"
                    f"{capture_id}:{instance.feature_class}:{instance.instance_id}",
                )
            if has_sidewalk:
                tags = {"capture_id": capture_id}
                if record.width_accepted:
                    tags["width"] = round(item.doc.sidewalk.width_m, 2)
                if missing:
                    tags["missing_classes"] = ",".join(missing)
                _stage(
                    item.doc.sidewalk.location,
                    FeatureClass.SIDEWALK,
                    tags,
                    key=f"review:{item.workspace_id}:{item.changeset_id}:"
                    f"{capture_id}:sidewalk",
                )

            item.verdict = record
            item.staged_nodes = tuple(staged)
            state.review_locks.pop(capture_id, None)

            batch_done = all(
                other.verdict is not None
                for other in state.review.values()
                if other.workspace_id == item.workspace_id
                and other.changeset_id == item.changeset_id
            )
            way_id = None
            if batch_done:
                way_id = _close(ws, item.workspace_id, item.changeset_id, item.user_id)
        return {
            "capture_id": capture_id,
            "staged_nodes": staged,
            "changeset_closed": batch_done,
            "way_id": way_id,
        }

    if ui_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
