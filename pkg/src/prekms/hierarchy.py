"""Hierarchical data sharing: every file and directory has its own keypair,
and sharing a directory mints re-encryption keys only along the tree edges
under it, plus one delegation from the directory key to the recipient.

Resolving a file's EDEK for a recipient is then a chain of deterministic
re-encryptions (multi-hop) — one per level — ending in the delegated hop:

    file EDEK --rk(file->dir)--> ... --rk(...->granted dir)--delegation--> recipient
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import pre
from .envelope import EDEK
from .errors import NotADescendant
from .group import PrimeOrderGroup, Rng
from .pre import DelegationBundle, KeyPair, ReencryptedMessage, ReKey


def _canon(path: str) -> str:
    parts = [p for p in path.strip("/").split("/") if p]
    return "/".join(parts)


def _parent(path: str) -> str | None:
    if path == "":
        return None
    head, _, _ = path.rpartition("/")
    return head


@dataclass
class HierarchyNode:
    path: str
    keypair: KeyPair
    parent: "HierarchyNode | None"
    is_file: bool = False
    edek: EDEK | None = None    # file nodes: EDEK of the file's DEK seed under this key


@dataclass(frozen=True)
class DirectoryGrant:
    dir_path: str
    hop_rekeys: dict[str, ReKey]   # descendant path -> rekey(child key -> parent key)
    delegation: DelegationBundle   # granted dir key -> recipient


class KeyHierarchy:
    """Owner-side key tree. Node secret keys live here (the owner's vault);
    only rekeys and delegations ever leave."""

    def __init__(self, group: PrimeOrderGroup, rng: Rng):
        self.group = group
        self._rng = rng
        root = HierarchyNode("", pre.keygen(group, rng), None)
        self.nodes: dict[str, HierarchyNode] = {"": root}

    @property
    def root(self) -> HierarchyNode:
        return self.nodes[""]

    def ensure_dir(self, path: str) -> HierarchyNode:
        path = _canon(path)
        node = self.nodes.get(path)
        if node is not None:
            if node.is_file:
                raise NotADescendant(f"{path} is a file, not a directory")
            return node
        parent = self.ensure_dir(_parent(path)) if path else self.root
        node = HierarchyNode(path, pre.keygen(self.group, self._rng), parent)
        self.nodes[path] = node
        return node

    def add_file(self, path: str) -> HierarchyNode:
        path = _canon(path)
        if path in self.nodes:
            node = self.nodes[path]
            if not node.is_file:
                raise NotADescendant(f"{path} already exists as a directory")
            return node
        parent = self.ensure_dir(_parent(path) or "")
        node = HierarchyNode(path, pre.keygen(self.group, self._rng), parent, is_file=True)
        self.nodes[path] = node
        return node

    def get(self, path: str) -> HierarchyNode:
        path = _canon(path)
        try:
            return self.nodes[path]
        except KeyError:
            raise NotADescendant(f"unknown path {path!r}") from None

    def descendants(self, dir_path: str) -> list[HierarchyNode]:
        dir_path = _canon(dir_path)
        prefix = dir_path + "/" if dir_path else ""
        return [n for p, n in sorted(self.nodes.items()) if p != dir_path and p.startswith(prefix)]

    def is_descendant(self, path: str, dir_path: str) -> bool:
        path, dir_path = _canon(path), _canon(dir_path)
        if path == dir_path:
            return True
        prefix = dir_path + "/" if dir_path else ""
        return path.startswith(prefix)

    # --- sharing ----------------------------------------------------------

    def grant_directory(self, dir_path: str, recipient_pk: int, rng: Rng) -> DirectoryGrant:
        """Rekeys for every edge under dir_path plus one delegation outward."""
        dir_node = self.get(dir_path)
        hops: dict[str, ReKey] = {}
        for node in self.descendants(dir_path):
            assert node.parent is not None
            hops[node.path] = pre.rekey(
                self.group, node.keypair.sk, node.parent.keypair.sk
            )
        delegation = pre.delegate(self.group, dir_node.keypair.sk, recipient_pk, rng)
        return DirectoryGrant(_canon(dir_path), hops, delegation)


def resolve_hierarchical_edek(
    file_path: str, file_edek: EDEK, grant: DirectoryGrant
) -> ReencryptedMessage:
    """Apply the grant's hop rekeys bottom-up, then the delegated hop.

    This is exactly what the re-encryption nodes do when the hops are
    deployed as policies; running it locally keeps the envelope layer
    testable without a network.
    """
    path = _canon(file_path)
    ct = file_edek
    while path != grant.dir_path:
        rk = grant.hop_rekeys.get(path)
        if rk is None:
            raise NotADescendant(f"{file_path!r} is not shared under {grant.dir_path!r}")
        ct = pre.reencrypt(rk, ct)
        parent = _parent(path)
        if parent is None:
            raise NotADescendant(f"{file_path!r} is outside {grant.dir_path!r}")
        path = parent
    return pre.reencrypt_delegated(grant.delegation, ct)
