"""Thin client for the service.

Without a server URL the client mounts the FastAPI app in-process (ASGI
test transport), so CLI runs need no running server and stay fully
deterministic; with --server it posts to a remote instance (whose path
fields then refer to the server's filesystem).
"""

from __future__ import annotations

import httpx


class ServiceError(RuntimeError):
    pass


class ServiceClient:
    def __init__(self, server: str | None = None):
        if server:
            self._client = httpx.Client(base_url=server.rstrip("/"), timeout=None)
        else:
            from fastapi.testclient import TestClient

            from .service import app

            self._client = TestClient(app)

    def post(self, path: str, payload: dict) -> dict:
        r = self._client.post(path, json=payload)
        return self._unwrap(r)

    def get(self, path: str) -> dict:
        return self._unwrap(self._client.get(path))

    def delete(self, path: str) -> dict:
        return self._unwrap(self._client.delete(path))

    @staticmethod
    def _unwrap(r: httpx.Response) -> dict:
        if r.status_code >= 400:
            try:
                detail = r.json().get("detail", r.text)
            except ValueError:
                detail = r.text
            raise ServiceError(f"{r.request.method} {r.request.url.path}: {detail}")
        return r.json()

    def close(self) -> None:
        self._client.close()

    def __enter__(self) -> "ServiceClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
