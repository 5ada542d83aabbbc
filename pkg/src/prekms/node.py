"""Re-encryption node service: stores policy material (rekeys, delegation
bundles, key shares), enforces time windows and ledger conditions, and
answers re-encryption requests.

The node never sees a secret key, a DEK, or plaintext — its entire interface
is ciphertext-in, ciphertext-out. Policy material is erased (file deleted,
record scrubbed) the moment a policy is revoked or can never be served
again.

Persistence is an append-only metadata log plus one detached file per
policy's material; reloading replays the log, so a crash between operations
reproduces the pre-crash active set. Material bytes never enter the log,
which is what makes erasure a simple file deletion.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from . import conditions as cond
from . import pre
from .conditions import ConditionExpr
from .errors import (
    BadAuth,
    ConditionFalse,
    DuplicatePolicy,
    NoEscrow,
    OutsideWindow,
    QuotaExceeded,
    Revoked,
    UnknownPolicy,
)
from .group import Rng
from .ledger import Ledger
from .pre import DelegationBundle, PartialReencryption, PRECiphertext, ReKey, ReKeyShare
from .signing import SigningKeyPair, verify_signature

MATERIAL_REKEY = 1
MATERIAL_BUNDLE = 2
MATERIAL_SHARE = 3

Material = ReKey | DelegationBundle | ReKeyShare


def serialize_material(material: Material) -> bytes:
    if isinstance(material, ReKey):
        return bytes([MATERIAL_REKEY]) + material.to_bytes()
    if isinstance(material, DelegationBundle):
        return bytes([MATERIAL_BUNDLE]) + material.to_bytes()
    if isinstance(material, ReKeyShare):
        return bytes([MATERIAL_SHARE]) + material.to_bytes()
    raise TypeError(f"not policy material: {material!r}")


def deserialize_material(blob: bytes) -> Material:
    tag, body = blob[0], blob[1:]
    if tag == MATERIAL_REKEY:
        return ReKey.from_bytes(body)
    if tag == MATERIAL_BUNDLE:
        return DelegationBundle.from_bytes(body)
    if tag == MATERIAL_SHARE:
        return ReKeyShare.from_bytes(body)
    raise ValueError(f"unknown material tag {tag}")


def material_hash(material: Material) -> str:
    return hashlib.sha256(serialize_material(material)).hexdigest()


def new_policy_id(rng: Rng) -> str:
    # random, deliberately unrelated to any public key
    return rng.getrandbits(256).to_bytes(32, "big").hex()


@dataclass
class PolicyRecord:
    policy_id: str
    material: Optional[Material]
    t_start: int
    t_end: int
    condition: ConditionExpr
    escrow_ref: str
    owner_verify_key: bytes
    status: str = "active"        # active | revoked | expired
    material_digest: str = ""

    def metadata(self) -> dict:
        return {
            "policy_id": self.policy_id,
            "t_start": self.t_start,
            "t_end": self.t_end,
            "condition": self.condition.to_dict(),
            "escrow_ref": self.escrow_ref,
            "owner_verify_key": self.owner_verify_key.hex(),
            "status": self.status,
            "material_digest": self.material_digest,
        }

    @classmethod
    def from_metadata(cls, meta: dict, material: Optional[Material]) -> "PolicyRecord":
        return cls(
            policy_id=meta["policy_id"],
            material=material,
            t_start=meta["t_start"],
            t_end=meta["t_end"],
            condition=cond.parse_condition(meta["condition"]),
            escrow_ref=meta["escrow_ref"],
            owner_verify_key=bytes.fromhex(meta["owner_verify_key"]),
            status=meta["status"],
            material_digest=meta["material_digest"],
        )


# --- owner authentication -------------------------------------------------------

_AUTH_DOMAIN = b"prekms policy auth v1"


@dataclass(frozen=True)
class OwnerAuth:
    verify_key: bytes
    op: str
    policy_id: str
    nonce: bytes
    signature: bytes

    def to_dict(self) -> dict:
        return {
            "verify_key": self.verify_key.hex(),
            "op": self.op,
            "policy_id": self.policy_id,
            "nonce": self.nonce.hex(),
            "signature": self.signature.hex(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "OwnerAuth":
        return cls(
            bytes.fromhex(obj["verify_key"]),
            obj["op"],
            obj["policy_id"],
            bytes.fromhex(obj["nonce"]),
            bytes.fromhex(obj["signature"]),
        )


def auth_message(op: str, policy_id: str, nonce: bytes) -> bytes:
    return _AUTH_DOMAIN + op.encode() + b"\x00" + policy_id.encode() + b"\x00" + nonce


def make_owner_auth(
    signer: SigningKeyPair, op: str, policy_id: str, rng: Rng
) -> OwnerAuth:
    nonce = rng.getrandbits(128).to_bytes(16, "big")
    sig = signer.sign(auth_message(op, policy_id, nonce))
    return OwnerAuth(signer.verify_key, op, policy_id, nonce, sig)


def check_auth(auth: OwnerAuth, op: str, policy_id: str, expected_key: bytes | None) -> None:
    if auth.op != op or auth.policy_id != policy_id:
        raise BadAuth("auth token is for a different operation")
    if expected_key is not None and auth.verify_key != expected_key:
        raise BadAuth("not the policy owner")
    try:
        verify_signature(auth.verify_key, auth_message(op, policy_id, auth.nonce), auth.signature)
    except Exception:
        raise BadAuth("bad signature") from None


# --- persistence -----------------------------------------------------------------


class PolicyStore:
    """Append-only metadata log + detached material files."""

    def __init__(self, root: str | Path | None):
        self.root = Path(root) if root is not None else None
        self.records: dict[str, PolicyRecord] = {}
        if self.root is not None:
            (self.root / "material").mkdir(parents=True, exist_ok=True)
            self._replay()

    # -- log plumbing

    def _log_path(self) -> Path:
        assert self.root is not None
        return self.root / "policies.log"

    def _material_path(self, policy_id: str) -> Path:
        assert self.root is not None
        return self.root / "material" / f"{policy_id}.bin"

    def _append(self, entry: dict) -> None:
        if self.root is None:
            return
        with open(self._log_path(), "a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
            fh.flush()

    def _replay(self) -> None:
        path = self._log_path()
        if not path.exists():
            return
        for line in path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            entry = json.loads(line)
            op = entry["op"]
            if op == "deploy":
                meta = entry["policy"]
                pid = meta["policy_id"]
                mat_path = self._material_path(pid)
                # a missing material file means a later op erased it (the
                # tombstone line follows) or we crashed mid-erase; either
                # way the record fails closed with no material
                material = (
                    deserialize_material(mat_path.read_bytes()) if mat_path.exists() else None
                )
                self.records[pid] = PolicyRecord.from_metadata(meta, material)
            elif op == "renew":
                rec = self.records.get(entry["policy_id"])
                if rec:
                    rec.t_end = entry["t_end"]
                    if entry.get("escrow_ref"):
                        rec.escrow_ref = entry["escrow_ref"]
            elif op in ("revoke", "expire"):
                rec = self.records.get(entry["policy_id"])
                if rec:
                    rec.status = "revoked" if op == "revoke" else "expired"
                    rec.material = None

    # -- operations

    def deploy(self, record: PolicyRecord) -> None:
        if self.root is not None:
            blob = serialize_material(record.material)
            self._material_path(record.policy_id).write_bytes(blob)
        self._append({"op": "deploy", "policy": record.metadata()})
        self.records[record.policy_id] = record

    def renew(self, policy_id: str, t_end: int, escrow_ref: str | None) -> None:
        self._append({"op": "renew", "policy_id": policy_id, "t_end": t_end,
                      "escrow_ref": escrow_ref})
        rec = self.records[policy_id]
        rec.t_end = t_end
        if escrow_ref:
            rec.escrow_ref = escrow_ref

    def erase(self, policy_id: str, status: str) -> None:
        """Revoke/expire: scrub material from memory and disk."""
        self._append({"op": "revoke" if status == "revoked" else "expire",
                      "policy_id": policy_id})
        rec = self.records[policy_id]
        rec.status = status
        rec.material = None
        if self.root is not None:
            path = self._material_path(policy_id)
            if path.exists():
                path.unlink()


# --- the node ---------------------------------------------------------------------


@dataclass
class ReencryptRequest:
    policy_id: str
    ciphertext: bytes        # serialized PRECiphertext (the EDEK)
    requester: str = ""      # informational; nodes cannot verify identities

    def to_dict(self) -> dict:
        import base64

        return {
            "policy_id": self.policy_id,
            "ciphertext": base64.b64encode(self.ciphertext).decode(),
            "requester": self.requester,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ReencryptRequest":
        import base64

        return cls(obj["policy_id"], base64.b64decode(obj["ciphertext"]), obj.get("requester", ""))


@dataclass
class ReencryptResponse:
    kind: str       # ciphertext | delegated | partial
    payload: bytes

    def to_dict(self) -> dict:
        import base64

        return {"kind": self.kind, "payload": base64.b64encode(self.payload).decode()}

    @classmethod
    def from_dict(cls, obj: dict) -> "ReencryptResponse":
        import base64

        return cls(obj["kind"], base64.b64decode(obj["payload"]))


def encode_partial(group_code: int, part: PartialReencryption, group) -> bytes:
    return bytes([pre.WIRE_VERSION, group_code]) + part.index.to_bytes(2, "big") + \
        group.element_to_bytes(part.c2_part)


def decode_partial(blob: bytes) -> PartialReencryption:
    from .group import GROUPS_BY_CODE

    group = GROUPS_BY_CODE[blob[1]]
    index = int.from_bytes(blob[2:4], "big")
    c2 = group.element_from_bytes(blob[4:])
    return PartialReencryption(index, c2)


class Node:
    """One re-encryption node. `ledger` doubles as the network directory."""

    def __init__(
        self,
        node_id: str,
        ledger: Ledger,
        pk_bytes: bytes,
        store_dir: str | Path | None = None,
    ):
        self.node_id = node_id
        self.ledger = ledger
        self.pk_bytes = pk_bytes
        self.store = PolicyStore(store_dir)
        ledger.register_node(node_id, pk_bytes)
        ledger.on_block(self.on_block)
        self.online = True

    # -- API surface (same handlers serve in-process and HTTP callers)

    def ping(self) -> dict:
        return {"node_id": self.node_id, "height": self.ledger.height, "ok": True}

    def deploy_policy(
        self,
        policy_id: str,
        material: Material,
        t_start: int,
        t_end: int,
        condition: ConditionExpr,
        escrow_ref: str,
        owner_verify_key: bytes,
    ) -> dict:
        if policy_id in self.store.records:
            raise DuplicatePolicy(policy_id)
        escrow = self.ledger.escrows.get(escrow_ref)
        if escrow is None or escrow.state != "open" or escrow.miner != self.node_id:
            raise NoEscrow(f"no open escrow {escrow_ref!r} naming this node")
        if not self.ledger.quota_allows(self.node_id):
            raise QuotaExceeded(self.node_id)
        record = PolicyRecord(
            policy_id=policy_id,
            material=material,
            t_start=t_start,
            t_end=t_end,
            condition=condition,
            escrow_ref=escrow_ref,
            owner_verify_key=owner_verify_key,
            material_digest=material_hash(material),
        )
        self.store.deploy(record)
        self.ledger.register_policy(
            policy_id, self.node_id, escrow.owner, escrow_ref, record.material_digest
        )
        return {"policy_id": policy_id, "node_id": self.node_id}

    def handle_reencrypt(self, req: ReencryptRequest) -> ReencryptResponse:
        record = self.store.records.get(req.policy_id)
        if record is None:
            raise UnknownPolicy(req.policy_id)
        if record.status == "revoked":
            raise Revoked(req.policy_id)
        if record.status == "expired" or record.material is None:
            raise OutsideWindow(req.policy_id)
        height = self.ledger.height
        if not record.t_start <= height <= record.t_end:
            raise OutsideWindow(f"height {height} outside [{record.t_start}, {record.t_end}]")
        if not cond.evaluate(record.condition, self.ledger):
            raise ConditionFalse(req.policy_id)
        ct = PRECiphertext.from_bytes(req.ciphertext)
        material = record.material
        if isinstance(material, ReKey):
            return ReencryptResponse("ciphertext", pre.reencrypt(material, ct).to_bytes())
        if isinstance(material, DelegationBundle):
            return ReencryptResponse("delegated", pre.reencrypt_delegated(material, ct).to_bytes())
        part = pre.apply_share(material, ct)
        return ReencryptResponse(
            "partial", encode_partial(ct.group.wire_code, part, ct.group)
        )

    def revoke_policy(self, policy_id: str, auth: OwnerAuth) -> dict:
        record = self.store.records.get(policy_id)
        if record is None or record.status != "active":
            raise UnknownPolicy(policy_id)
        check_auth(auth, "revoke", policy_id, record.owner_verify_key)
        self.store.erase(policy_id, "revoked")
        self.ledger.deactivate_policy(policy_id)
        payout = None
        escrow = self.ledger.escrows.get(record.escrow_ref)
        if escrow is not None and escrow.state == "open":
            payout = self.ledger.settle_revocation(record.escrow_ref)
        return {"policy_id": policy_id, "settlement": payout}

    def renew_policy(
        self, policy_id: str, new_t_end: int, auth: OwnerAuth, new_escrow_ref: str | None = None
    ) -> dict:
        record = self.store.records.get(policy_id)
        if record is None or record.status != "active":
            raise UnknownPolicy(policy_id)
        check_auth(auth, "renew", policy_id, record.owner_verify_key)
        if new_t_end <= record.t_end:
            raise BadAuth("windows only extend; revoke and redeploy to shrink")
        if new_escrow_ref:
            escrow = self.ledger.escrows.get(new_escrow_ref)
            if escrow is None or escrow.state != "open" or escrow.miner != self.node_id:
                raise NoEscrow(new_escrow_ref)
            old = self.ledger.escrows.get(record.escrow_ref)
            if old is not None and old.state == "open":
                self.ledger.settle_revocation(record.escrow_ref)
        self.store.renew(policy_id, new_t_end, new_escrow_ref)
        return {"policy_id": policy_id, "t_end": new_t_end}

    def list_policies(self, auth: OwnerAuth) -> list[dict]:
        check_auth(auth, "list", "", None)
        return [
            r.metadata()
            for r in sorted(self.store.records.values(), key=lambda r: r.policy_id)
            if r.owner_verify_key == auth.verify_key
        ]

    # -- block-driven housekeeping

    def on_block(self, block) -> None:
        height = block.height
        for record in list(self.store.records.values()):
            if record.status != "active":
                continue
            dead = height > record.t_end
            bound = cond.latest_active_height(record.condition)
            if bound is not None and height > bound:
                dead = True
            if dead:
                self.store.erase(record.policy_id, "expired")
                self.ledger.deactivate_policy(record.policy_id)
                escrow = self.ledger.escrows.get(record.escrow_ref)
                if escrow is not None and escrow.state == "open":
                    self.ledger.complete_escrow(record.escrow_ref)
