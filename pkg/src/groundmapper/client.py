"""HTTP client for the workspace service.

Uploads retry once on transport failure; node creation is made safe to
retry by sending a client-generated capture key the server deduplicates
on. Server-side rejections surface as ServiceError with the HTTP status.
"""

from __future__ import annotations

import json
from typing import Mapping, Optional, Sequence

import httpx

from .errors import NetworkError, ServiceError, Unauthenticated
from .geo import GeoPoint
from .stabilize import FeatureClass


class WorkspaceClient:
    def __init__(
        self,
        base_url: str,
        user_id: str,
        secret: str,
        workspace: str = "default",
        timeout_s: float = 10.0,
        transport: Optional[httpx.BaseTransport] = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.user_id = user_id
        self.workspace = workspace
        self._secret = secret
        self._token: Optional[str] = None
        self._http = httpx.Client(
            base_url=self.base_url, timeout=timeout_s, transport=transport
        )

    def close(self) -> None:
        self._http.close()

    def __enter__(self) -> "WorkspaceClient":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    # --- plumbing ---

    def _request(
        self,
        method: str,
        path: str,
        body: Optional[dict] = None,
        authenticated: bool = True,
        retry: bool = False,
    ) -> httpx.Response:
        headers = {}
        if authenticated:
            headers["Authorization"] = f"Bearer {self.token()}"
        attempts = 2 if retry else 1
        last_error: Optional[Exception] = None
        for _ in range(attempts):
            try:
                response = self._http.request(method, path, json=body, headers=headers)
                break
            except httpx.TransportError as exc:
                last_error = exc
        else:
            raise NetworkError(f"{method} {path}: {last_error}") from last_error
        if response.status_code == 401:
            raise Unauthenticated(_detail(response))
        if response.status_code >= 400:
            raise ServiceError(response.status_code, _detail(response))
        return response

    def token(self) -> str:
        if self._token is None:
            try:
                response = self._http.post(
                    "/v1/login",
                    json={"user_id": self.user_id, "secret": self._secret},
                )
            except httpx.TransportError as exc:
                raise NetworkError(f"login: {exc}") from exc
            if response.status_code == 401:
                raise Unauthenticated(_detail(response))
            if response.status_code >= 400:
                raise ServiceError(response.status_code, _detail(response))
            self._token = response.json()["token"]
        return self._token

    # --- protocol ---

    def healthy(self) -> bool:
        try:
            response = self._http.get("/healthz")
        except httpx.TransportError:
            return False
        return response.status_code == 200

    def open_changeset(self) -> int:
        response = self._request(
            "POST", f"/v1/workspaces/{self.workspace}/changesets"
        )
        return int(response.json()["changeset_id"])

    def upload_node(
        self,
        changeset_id: int,
        location: GeoPoint,
        feature_class: FeatureClass,
        tags: Optional[Mapping] = None,
        timestamp: float = 0.0,
        capture_key: Optional[str] = None,
    ) -> int:
        body = {
            "location": {
                "latitude": location.latitude,
                "longitude": location.longitude,
            },
            "class": feature_class.wire_name,
            "tags": dict(tags or {}),
            "timestamp": timestamp,
            "capture_key": capture_key,
        }
        response = self._request(
            "POST",
            f"/v1/workspaces/{self.workspace}/changesets/{changeset_id}/nodes",
            body=body,
            retry=capture_key is not None,  # retry only when deduplicable
        )
        return int(response.json()["node_id"])

    def close_changeset(self, changeset_id: int) -> Optional[int]:
        response = self._request(
            "PUT",
            f"/v1/workspaces/{self.workspace}/changesets/{changeset_id}/close",
        )
        way_id = response.json()["way_id"]
        return int(way_id) if way_id is not None else None

    def export(self) -> str:
        response = self._request("GET", f"/v1/workspaces/{self.workspace}/export")
        return response.text

    def enqueue_review(self, changeset_id: int, captures: Sequence) -> int:
        response = self._request(
            "POST",
            "/review/queue",
            body={
                "workspace_id": self.workspace,
                "changeset_id": changeset_id,
                "captures": list(captures),
            },
        )
        return int(response.json()["queued"])


def _detail(response: httpx.Response) -> str:
    try:
        return str(response.json().get("detail", response.text))
    except json.JSONDecodeError:
        return response.text
