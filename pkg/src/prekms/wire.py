"""HTTP/JSON shell around a Node: POST /policy, /reencrypt, /revoke, /renew,
GET /policies, /ping. Binary fields travel base64/hex; failures come back as
{"error": <code>} bodies mapped from the typed exceptions.

The handlers delegate to the very same Node methods the simulator calls
in-process; nothing lives only on the wire.
"""

from __future__ import annotations

import base64
import json
import threading
import urllib.error
import urllib.parse
import urllib.request
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from . import conditions as cond
from .errors import NodeUnavailable, PrekmsError, from_code
from .node import (
    Node,
    OwnerAuth,
    ReencryptRequest,
    ReencryptResponse,
    deserialize_material,
    serialize_material,
)

_STATUS = {
    "UnknownPolicy": 404,
    "BadAuth": 403,
    "DuplicatePolicy": 409,
    "QuotaExceeded": 429,
    "NoEscrow": 402,
    "Revoked": 410,
    "OutsideWindow": 403,
    "ConditionFalse": 403,
}


def _status_for(err: PrekmsError) -> int:
    return _STATUS.get(err.code, 400)


class _Handler(BaseHTTPRequestHandler):
    node: Node  # set by server factory

    def log_message(self, *args):   # silence default stderr chatter
        pass

    def _send(self, status: int, payload: dict) -> None:
        body = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _body(self) -> dict:
        length = int(self.headers.get("Content-Length", "0"))
        if not length:
            return {}
        return json.loads(self.rfile.read(length))

    def do_GET(self):
        url = urllib.parse.urlparse(self.path)
        try:
            if url.path == "/ping":
                self._send(200, self.node.ping())
            elif url.path == "/policies":
                qs = urllib.parse.parse_qs(url.query)
                auth = OwnerAuth(
                    bytes.fromhex(qs["verify_key"][0]),
                    "list",
                    "",
                    bytes.fromhex(qs["nonce"][0]),
                    bytes.fromhex(qs["signature"][0]),
                )
                self._send(200, {"policies": self.node.list_policies(auth)})
            else:
                self._send(404, {"error": "NotFound"})
        except PrekmsError as err:
            self._send(_status_for(err), {"error": err.code, "message": str(err)})
        except Exception as err:   # malformed input
            self._send(400, {"error": "BadRequest", "message": str(err)})

    def do_POST(self):
        url = urllib.parse.urlparse(self.path)
        try:
            body = self._body()
            if url.path == "/policy":
                result = self.node.deploy_policy(
                    policy_id=body["policy_id"],
                    material=deserialize_material(base64.b64decode(body["material"])),
                    t_start=int(body["t_start"]),
                    t_end=int(body["t_end"]),
                    condition=cond.parse_condition(body.get("condition")),
                    escrow_ref=body["escrow_ref"],
                    owner_verify_key=bytes.fromhex(body["owner_verify_key"]),
                )
                self._send(200, result)
            elif url.path == "/reencrypt":
                resp = self.node.handle_reencrypt(ReencryptRequest.from_dict(body))
                self._send(200, resp.to_dict())
            elif url.path == "/revoke":
                auth = OwnerAuth.from_dict(body["auth"])
                self._send(200, self.node.revoke_policy(body["policy_id"], auth))
            elif url.path == "/renew":
                auth = OwnerAuth.from_dict(body["auth"])
                result = self.node.renew_policy(
                    body["policy_id"], int(body["t_end"]), auth, body.get("escrow_ref")
                )
                self._send(200, result)
            else:
                self._send(404, {"error": "NotFound"})
        except PrekmsError as err:
            self._send(_status_for(err), {"error": err.code, "message": str(err)})
        except Exception as err:
            self._send(400, {"error": "BadRequest", "message": str(err)})


class NodeServer:
    """Serve one node over loopback; use as a context manager in tests."""

    def __init__(self, node: Node, host: str = "127.0.0.1", port: int = 0):
        handler = type("BoundHandler", (_Handler,), {"node": node})
        self.httpd = ThreadingHTTPServer((host, port), handler)
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    @property
    def endpoint(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "NodeServer":
        self.thread.start()
        return self

    def stop(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


class HTTPNodeClient:
    """Client-side twin of the Node methods, over the wire."""

    def __init__(self, endpoint: str, timeout: float = 10.0):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout

    def _request(self, method: str, path: str, payload: dict | None = None) -> dict:
        url = self.endpoint + path
        data = json.dumps(payload).encode() if payload is not None else None
        req = urllib.request.Request(
            url, data=data, method=method,
            headers={"Content-Type": "application/json"} if data else {},
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return json.loads(resp.read())
        except urllib.error.HTTPError as err:
            try:
                body = json.loads(err.read())
            except Exception:
                raise NodeUnavailable(f"{url}: HTTP {err.code}") from None
            raise from_code(body.get("error", "Error"), body.get("message", "")) from None
        except urllib.error.URLError as err:
            raise NodeUnavailable(f"{url}: {err.reason}") from None

    def ping(self) -> dict:
        return self._request("GET", "/ping")

    def deploy_policy(self, *, policy_id, material, t_start, t_end, condition,
                      escrow_ref, owner_verify_key) -> dict:
        return self._request("POST", "/policy", {
            "policy_id": policy_id,
            "material": base64.b64encode(serialize_material(material)).decode(),
            "t_start": t_start,
            "t_end": t_end,
            "condition": condition.to_dict(),
            "escrow_ref": escrow_ref,
            "owner_verify_key": owner_verify_key.hex(),
        })

    def handle_reencrypt(self, req: ReencryptRequest) -> ReencryptResponse:
        return ReencryptResponse.from_dict(
            self._request("POST", "/reencrypt", req.to_dict())
        )

    def revoke_policy(self, policy_id: str, auth: OwnerAuth) -> dict:
        return self._request("POST", "/revoke", {"policy_id": policy_id, "auth": auth.to_dict()})

    def renew_policy(self, policy_id: str, new_t_end: int, auth: OwnerAuth,
                     new_escrow_ref: str | None = None) -> dict:
        payload = {"policy_id": policy_id, "t_end": new_t_end, "auth": auth.to_dict()}
        if new_escrow_ref:
            payload["escrow_ref"] = new_escrow_ref
        return self._request("POST", "/renew", payload)

    def list_policies(self, auth: OwnerAuth) -> list[dict]:
        qs = urllib.parse.urlencode({
            "verify_key": auth.verify_key.hex(),
            "nonce": auth.nonce.hex(),
            "signature": auth.signature.hex(),
        })
        return self._request("GET", f"/policies?{qs}")["policies"]
