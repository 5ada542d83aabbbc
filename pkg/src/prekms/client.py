"""Client-side library: the write / read / share / revoke flows against a
network environment (storage + ledger + re-encryption node handles).

Per-path keypairs come from a key hierarchy, so sharing can be scoped to a
file or a subtree: sharing deploys one rekey policy per tree edge under the
shared root plus a single delegation policy (or split-key share policies)
outward to the recipient. Reading as a recipient walks those policies
bottom-up, each hop served by whichever node holds it.

The client performs no cryptography of its own beyond calling the envelope
and re-encryption primitives; everything here is orchestration.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterable

from . import conditions as cond
from . import envelope as env_mod
from . import pre
from .conditions import ConditionExpr
from .envelope import Envelope
from .errors import PrekmsError, UnknownName, UnknownPolicy
from .group import PrimeOrderGroup, Rng
from .hierarchy import KeyHierarchy
from .ledger import Ledger
from .node import ReencryptRequest, decode_partial, make_owner_auth, new_policy_id
from .pre import ReencryptedMessage, ShareKind, ShareScheme
from .signing import SigningKeyPair


def address_of(group: PrimeOrderGroup, pk: int) -> str:
    """Short hex address bound to a public key (the contact-book form)."""
    return hashlib.sha256(group.element_to_bytes(pk)).hexdigest()[:40]


@dataclass
class Identity:
    name: str
    group: PrimeOrderGroup
    enc: pre.KeyPair
    signer: SigningKeyPair

    @classmethod
    def generate(cls, name: str, group: PrimeOrderGroup, rng: Rng) -> "Identity":
        return cls(name, group, pre.keygen(group, rng), SigningKeyPair.generate(rng))

    @property
    def address(self) -> str:
        return address_of(self.group, self.enc.pk)


class NetworkEnv:
    """Everything the client reaches over the wire in a real deployment:
    content-addressed storage, the ledger, node handles, and the public
    catalog/manifest directory."""

    def __init__(self, ledger: Ledger, storage, handles: dict[str, object] | None = None):
        self.ledger = ledger
        self.storage = storage
        self.handles: dict[str, object] = handles if handles is not None else {}
        self.catalog: dict[str, dict] = {}        # "owner-addr:path" -> {cid, flags}
        self.manifests: dict[str, dict] = {}      # share_id -> manifest

    def handle(self, node_id: str):
        return self.handles[node_id]

    def catalog_key(self, owner_addr: str, path: str) -> str:
        return f"{owner_addr}:{path}"

    def find_share(self, recipient_addr: str, owner_addr: str, path: str) -> dict | None:
        best = None
        for manifest in self.manifests.values():
            if manifest["recipient"] != recipient_addr or manifest["owner"] != owner_addr:
                continue
            if not manifest.get("active", True):
                continue
            if path in manifest["files"]:
                best = manifest
        return best


@dataclass
class ShareReceipt:
    share_id: str
    policy_ids: list[str]
    manifest: dict


class Client:
    def __init__(
        self,
        identity: Identity,
        env: NetworkEnv,
        rng: Rng,
        *,
        default_fee: int = 10,
        default_collateral: int = 5,
        default_duration: int = 1_000,
        sign_writes: bool = True,
    ):
        self.identity = identity
        self.env = env
        self.rng = rng
        self.default_fee = default_fee
        self.default_collateral = default_collateral
        self.default_duration = default_duration
        self.sign_writes = sign_writes
        self.keys = KeyHierarchy(identity.group, rng)
        self._share_counter = 0

    # --- storage primitives ----------------------------------------------------

    @property
    def group(self) -> PrimeOrderGroup:
        return self.identity.group

    @property
    def address(self) -> str:
        return self.identity.address

    def write(self, path: str, data: bytes, *, aont: bool = False) -> str:
        """Encrypt under the file's own key and store; returns the content id."""
        node = self.keys.add_file(path)
        envelope = env_mod.encrypt_data(
            self.group,
            node.keypair.pk,
            data,
            self.rng,
            sign_with=self.identity.signer if self.sign_writes else None,
            aont=aont,
        )
        cid = self.env.storage.put(envelope.to_bytes())
        self.env.catalog[self.env.catalog_key(self.address, path)] = {
            "cid": cid,
            "owner": self.address,
            "path": path,
        }
        return cid

    def _fetch_envelope(self, owner_addr: str, path: str) -> Envelope:
        entry = self.env.catalog.get(self.env.catalog_key(owner_addr, path))
        if entry is None:
            raise UnknownName(f"nothing stored at {path!r}")
        return Envelope.from_bytes(self.env.storage.get(entry["cid"]))

    def read(self, path: str, owner: str | None = None) -> bytes:
        """Owner reads decrypt locally; foreign reads go through the policy
        chain on the re-encryption nodes."""
        owner_addr = owner or self.address
        envelope = self._fetch_envelope(owner_addr, path)
        if owner_addr == self.address:
            node = self.keys.get(path)
            return env_mod.decrypt_data(self.group, node.keypair.sk, envelope)
        manifest = self.env.find_share(self.address, owner_addr, path)
        if manifest is None:
            raise UnknownPolicy(f"no active share grants {path!r}")
        reenc = self._resolve_via_nodes(manifest, path, envelope)
        return env_mod.decrypt_data_delegated(self.group, self.identity.enc.sk, envelope, reenc)

    def _resolve_via_nodes(self, manifest: dict, path: str, envelope: Envelope) -> ReencryptedMessage:
        ct_bytes = envelope.edek.to_bytes()
        for policy_id, node_id in manifest["files"][path]["hops"]:
            resp = self.env.handle(node_id).handle_reencrypt(
                ReencryptRequest(policy_id, ct_bytes, requester=self.address)
            )
            ct_bytes = resp.payload
        if "split" in manifest:
            return self._combine_split(manifest, ct_bytes)
        policy_id, node_id = manifest["delegation"]
        resp = self.env.handle(node_id).handle_reencrypt(
            ReencryptRequest(policy_id, ct_bytes, requester=self.address)
        )
        return ReencryptedMessage.from_bytes(resp.payload)

    def _combine_split(self, manifest: dict, ct_bytes: bytes) -> ReencryptedMessage:
        split = manifest["split"]
        scheme = ShareScheme(ShareKind(split["kind"]), split["m"], split["n"])
        ct = pre.PRECiphertext.from_bytes(ct_bytes)
        parts = []
        for policy_id, node_id in split["shares"]:
            try:
                resp = self.env.handle(node_id).handle_reencrypt(
                    ReencryptRequest(policy_id, ct_bytes, requester=self.address)
                )
            except PrekmsError:
                continue
            parts.append(decode_partial(resp.payload))
            if len(parts) == scheme.m and scheme.kind is ShareKind.THRESHOLD:
                break
        combined = pre.combine_shares(ct.group, ct.c1, parts, scheme, hops=ct.hops)
        return ReencryptedMessage(combined, bytes.fromhex(split["wrapped_eph"]))

    def delete(self, path: str) -> int:
        """Remove the envelope and revoke every policy tied to the path."""
        key = self.env.catalog_key(self.address, path)
        entry = self.env.catalog.pop(key, None)
        if entry is None:
            raise UnknownName(path)
        self.env.storage.delete(entry["cid"])
        revoked = 0
        for manifest in list(self.env.manifests.values()):
            if manifest["owner"] == self.address and path in manifest["files"]:
                revoked += self.revoke_share(manifest["share_id"])
        return revoked

    # --- sharing ------------------------------------------------------------------

    def _deploy(self, material, t_start: int, t_end: int, condition: ConditionExpr,
                fee: int, collateral: int, exclude: set[str],
                pin_node: str | None = None) -> tuple[str, str]:
        policy_id = new_policy_id(self.rng)
        # callers may pin a node explicitly (ignoring quota-aware selection
        # only ever risks the caller's own policy)
        node_id = pin_node or self.env.ledger.select_node(bytes.fromhex(policy_id), exclude=exclude)
        escrow = self.env.ledger.escrow_policy(
            self.identity.name, node_id, fee, max(1, t_end - t_start), collateral
        )
        self.env.handle(node_id).deploy_policy(
            policy_id=policy_id,
            material=material,
            t_start=t_start,
            t_end=t_end,
            condition=condition,
            escrow_ref=escrow,
            owner_verify_key=self.identity.signer.verify_key,
        )
        return policy_id, node_id

    def share(
        self,
        recipient_pk: int,
        path: str,
        *,
        duration: int | None = None,
        condition: ConditionExpr | None = None,
        fee: int | None = None,
        collateral: int | None = None,
        split: tuple[int, int] | None = None,
        pin_node: str | None = None,
    ) -> ShareReceipt:
        """Grant a recipient read access to a file or a whole subtree.

        `split=(m, n)` deploys the delegation as m-of-n key shares across n
        distinct nodes instead of a single bundle (single-file shares only).
        """
        duration = duration if duration is not None else self.default_duration
        condition = condition or cond.always()
        fee = self.default_fee if fee is None else fee
        collateral = self.default_collateral if collateral is None else collateral
        t_start = self.env.ledger.height
        t_end = t_start + duration

        root = self.keys.get(path)
        files = (
            [root] if root.is_file
            else [n for n in self.keys.descendants(path) if n.is_file]
        )
        if not files:
            raise UnknownName(f"nothing to share under {path!r}")
        if split and (not root.is_file):
            raise ValueError("split-key sharing applies to single files")

        policy_ids: list[str] = []
        manifest_files: dict[str, dict] = {}
        hop_cache: dict[str, tuple[str, str]] = {}
        for node in files:
            hops: list[tuple[str, str]] = []
            walker = node
            while walker.path != root.path:
                edge = walker.path
                if edge not in hop_cache:
                    rk = pre.rekey(self.group, walker.keypair.sk, walker.parent.keypair.sk)
                    pid, nid = self._deploy(
                        rk, t_start, t_end, condition, fee, collateral, exclude=set()
                    )
                    hop_cache[edge] = (pid, nid)
                    policy_ids.append(pid)
                hops.append(hop_cache[edge])
                walker = walker.parent
            manifest_files[node.path] = {"hops": hops}

        self._share_counter += 1
        share_id = f"{self.address[:8]}-{self._share_counter}"
        manifest: dict = {
            "share_id": share_id,
            "owner": self.address,
            "recipient": address_of(self.group, recipient_pk),
            "root": root.path,
            "t_start": t_start,
            "t_end": t_end,
            "condition": condition.to_dict(),
            "files": manifest_files,
            "active": True,
        }

        if split:
            m, n = split
            bundle = pre.delegate(self.group, root.keypair.sk, recipient_pk, self.rng)
            shares = (
                pre.split_rekey_additive(bundle.rk_ae, m, self.rng)
                if m == n
                else pre.split_rekey_threshold(bundle.rk_ae, m, n, self.rng)
            )
            placed: list[tuple[str, str]] = []
            exclude: set[str] = set()
            for share in shares:
                pid, nid = self._deploy(
                    share, t_start, t_end, condition, fee, collateral, exclude
                )
                placed.append((pid, nid))
                policy_ids.append(pid)
                exclude.add(nid)
            manifest["split"] = {
                "kind": shares[0].scheme.kind.value,
                "m": m,
                "n": n,
                "wrapped_eph": bundle.wrapped_eph.hex(),
                "shares": placed,
            }
        else:
            bundle = pre.delegate(self.group, root.keypair.sk, recipient_pk, self.rng)
            pid, nid = self._deploy(
                bundle, t_start, t_end, condition, fee, collateral, exclude=set(),
                pin_node=pin_node,
            )
            policy_ids.append(pid)
            manifest["delegation"] = (pid, nid)

        self.env.manifests[share_id] = manifest
        return ShareReceipt(share_id, policy_ids, manifest)

    def _policies_of(self, manifest: dict) -> Iterable[tuple[str, str]]:
        for entry in manifest["files"].values():
            yield from entry["hops"]
        if "split" in manifest:
            yield from manifest["split"]["shares"]
        if "delegation" in manifest:
            yield tuple(manifest["delegation"])

    def revoke_share(self, share_id: str) -> int:
        manifest = self.env.manifests.get(share_id)
        if manifest is None or manifest["owner"] != self.address:
            raise UnknownName(share_id)
        revoked = 0
        for policy_id, node_id in dict.fromkeys(self._policies_of(manifest)):
            try:
                auth = make_owner_auth(self.identity.signer, "revoke", policy_id, self.rng)
                self.env.handle(node_id).revoke_policy(policy_id, auth)
                revoked += 1
            except PrekmsError:
                pass
        manifest["active"] = False
        return revoked

    def renew_share(self, share_id: str, extra_blocks: int) -> int:
        manifest = self.env.manifests.get(share_id)
        if manifest is None or manifest["owner"] != self.address:
            raise UnknownName(share_id)
        new_t_end = manifest["t_end"] + extra_blocks
        renewed = 0
        for policy_id, node_id in dict.fromkeys(self._policies_of(manifest)):
            auth = make_owner_auth(self.identity.signer, "renew", policy_id, self.rng)
            self.env.handle(node_id).renew_policy(policy_id, new_t_end, auth)
            renewed += 1
        manifest["t_end"] = new_t_end
        return renewed

    def revoke_path(self, path: str) -> int:
        """Revoke every active share of this path (or subtree root)."""
        revoked = 0
        for manifest in list(self.env.manifests.values()):
            if manifest["owner"] != self.address or not manifest.get("active", True):
                continue
            if path in manifest["files"] or manifest["root"] == path.strip("/"):
                revoked += self.revoke_share(manifest["share_id"])
        return revoked

    def list_policies(self) -> list[dict]:
        rows = []
        for node_id in sorted(self.env.handles):
            auth = make_owner_auth(self.identity.signer, "list", "", self.rng)
            try:
                for row in self.env.handle(node_id).list_policies(auth):
                    row["node_id"] = node_id
                    rows.append(row)
            except PrekmsError:
                continue
        return rows

    # --- short secrets -------------------------------------------------------------

    def secret_set(self, name: str, value: bytes) -> str:
        return self.write(f"secrets/{name}", value)

    def secret_get(self, name: str, owner: str | None = None) -> bytes:
        return self.read(f"secrets/{name}", owner=owner)

    # --- payments ---------------------------------------------------------------------

    def pay(self, payee: str, amount: int):
        return self.env.ledger.record_payment(self.identity.name, payee, amount)
