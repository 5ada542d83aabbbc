"""Deterministic discrete-event network simulator.

Everything runs in-process against the same handler functions the HTTP shell
exposes: nodes (wrapped with scripted behaviors), the ledger, the audit
authority, and scripted clients. The single logical clock is the block
height; intra-block action order is script order; all randomness flows from
the scenario seed, so a run's event log is a pure function of
(seed, script, params) and replays hash-identically.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from . import conditions as cond
from . import envelope as env_mod
from . import pre
from .audit import AuditAuthority
from .client import Client, Identity, NetworkEnv
from .errors import NodeUnavailable, PrekmsError
from .events import EventLog
from .group import get_group, Rng
from .ledger import EconomicsParams, Ledger
from .node import Node, ReencryptRequest, ReencryptResponse, serialize_material
from .pre import ShareKind, ShareScheme
from .storage import MemoryStore


def _derive_seed(seed: int, label: str) -> int:
    return int.from_bytes(
        hashlib.sha256(seed.to_bytes(8, "big", signed=True) + label.encode()).digest()[:8],
        "big",
    )


# --- scenario schema -----------------------------------------------------------


@dataclass
class NodeSpec:
    node_id: str
    behavior: str = "honest"     # honest | offline_after | cheater_random_output | leaker | colluder
    at_height: int = 0           # offline_after / leaker trigger
    reader: str = ""             # colluder: who receives the leaked material
    stake: int = 1_000
    balance: int = 50_000

    @classmethod
    def from_dict(cls, obj: dict) -> "NodeSpec":
        return cls(
            node_id=obj["id"],
            behavior=obj.get("behavior", "honest"),
            at_height=int(obj.get("at_height", 0)),
            reader=obj.get("reader", ""),
            stake=int(obj.get("stake", 1_000)),
            balance=int(obj.get("balance", 50_000)),
        )


@dataclass
class ClientSpec:
    name: str
    balance: int = 10_000

    @classmethod
    def from_dict(cls, obj: dict) -> "ClientSpec":
        return cls(obj["id"], int(obj.get("balance", 10_000)))


@dataclass
class Action:
    at: int
    actor: str
    op: str
    args: dict

    @classmethod
    def from_dict(cls, obj: dict) -> "Action":
        known = {"at", "actor", "op"}
        return cls(
            at=int(obj["at"]),
            actor=obj["actor"],
            op=obj["op"],
            args={k: v for k, v in obj.items() if k not in known},
        )


@dataclass
class Scenario:
    name: str
    seed: int
    blocks: int
    nodes: list[NodeSpec]
    clients: list[ClientSpec]
    actions: list[Action] = field(default_factory=list)
    group_id: str = "toy23"
    params: EconomicsParams = field(default_factory=EconomicsParams)
    initial_decoys: int = 0
    authority_balance: int = 1_000_000

    @classmethod
    def from_dict(cls, obj: dict) -> "Scenario":
        params = EconomicsParams.from_dict(obj.get("params", {})) if obj.get("params") \
            else EconomicsParams()
        return cls(
            name=obj["name"],
            seed=int(obj["seed"]),
            blocks=int(obj["blocks"]),
            nodes=[NodeSpec.from_dict(n) for n in obj["nodes"]],
            clients=[ClientSpec.from_dict(c) for c in obj.get("clients", [])],
            actions=[Action.from_dict(a) for a in obj.get("actions", [])],
            group_id=obj.get("group", "toy23"),
            params=params,
            initial_decoys=int(obj.get("initial_decoys", 0)),
            authority_balance=int(obj.get("authority_balance", 1_000_000)),
        )

    @classmethod
    def load(cls, path: str | Path) -> "Scenario":
        text = Path(path).read_text(encoding="utf-8")
        obj = yaml.safe_load(text)
        return cls.from_dict(obj)


# --- node behaviors ------------------------------------------------------------


class BehaviorNode:
    """Wraps an honest Node with a scripted misbehavior. The wrapper is the
    handle everyone else sees; the inner node stays honest so that state
    bookkeeping (policies, escrows) remains consistent."""

    def __init__(self, node: Node, spec: NodeSpec, ledger: Ledger, group, rng: Rng,
                 log: EventLog):
        self.node = node
        self.spec = spec
        self.ledger = ledger
        self.group = group
        self.rng = rng
        self.log = log
        self._leaked = False

    # -- scripted failure modes

    def _offline(self) -> bool:
        return self.spec.behavior == "offline_after" and self.ledger.height >= self.spec.at_height

    def _check_online(self):
        if self._offline():
            raise NodeUnavailable(self.node.node_id)

    def on_block(self, block) -> None:
        if (
            self.spec.behavior == "leaker"
            and not self._leaked
            and block.height >= self.spec.at_height
        ):
            for record in self.node.store.records.values():
                if record.status == "active" and record.material is not None:
                    self._leaked = True
                    self.log.emit(block.height, "material_leaked",
                                  node_id=self.node.node_id,
                                  policy_id=record.policy_id,
                                  material=serialize_material(record.material).hex())
                    break

    # -- handler surface

    def ping(self) -> dict:
        self._check_online()
        return self.node.ping()

    def deploy_policy(self, **kwargs) -> dict:
        self._check_online()
        result = self.node.deploy_policy(**kwargs)
        if self.spec.behavior == "colluder" and self.spec.reader:
            record = self.node.store.records[kwargs["policy_id"]]
            self.log.emit(self.ledger.height, "collusion_leak",
                          node_id=self.node.node_id,
                          policy_id=kwargs["policy_id"],
                          reader=self.spec.reader,
                          material=serialize_material(record.material).hex())
        return result

    def handle_reencrypt(self, req: ReencryptRequest) -> ReencryptResponse:
        self._check_online()
        if self.spec.behavior == "cheater_random_output":
            honest = self.node.handle_reencrypt(req)   # policy checks still apply
            return self._randomized(honest)
        return self.node.handle_reencrypt(req)

    def _randomized(self, honest: ReencryptResponse) -> ReencryptResponse:
        """Structurally valid output with random group elements."""
        g = self.group
        if honest.kind == "ciphertext":
            ct = pre.PRECiphertext.from_bytes(honest.payload)
            fake = pre.PRECiphertext(
                g, g.random_element(self.rng), g.random_element(self.rng), ct.hops
            )
            return ReencryptResponse("ciphertext", fake.to_bytes())
        if honest.kind == "delegated":
            msg = pre.ReencryptedMessage.from_bytes(honest.payload)
            fake_ct = pre.PRECiphertext(
                g, g.random_element(self.rng), g.random_element(self.rng), msg.c_e.hops
            )
            return ReencryptResponse(
                "delegated", pre.ReencryptedMessage(fake_ct, msg.wrapped_eph).to_bytes()
            )
        payload = bytearray(honest.payload)
        payload[-g.element_bytes:] = g.element_to_bytes(g.random_element(self.rng))
        return ReencryptResponse("partial", bytes(payload))

    def revoke_policy(self, policy_id, auth) -> dict:
        self._check_online()
        return self.node.revoke_policy(policy_id, auth)

    def renew_policy(self, policy_id, new_t_end, auth, new_escrow_ref=None) -> dict:
        self._check_online()
        return self.node.renew_policy(policy_id, new_t_end, auth, new_escrow_ref)

    def list_policies(self, auth) -> list[dict]:
        self._check_online()
        return self.node.list_policies(auth)


# --- metrics -------------------------------------------------------------------


@dataclass
class SimMetrics:
    scenario: str
    seed: int
    blocks: int
    event_log_sha256: str = ""
    conservation_exact: bool = True
    final_supply: int = 0
    seized_pool: int = 0
    balances: dict = field(default_factory=dict)
    request_counts: dict = field(default_factory=dict)
    detections: list = field(default_factory=list)
    punishments: int = 0
    uptime: dict = field(default_factory=dict)
    payouts: dict = field(default_factory=dict)
    collusion_exposed_reads: int = 0

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "blocks": self.blocks,
            "event_log_sha256": self.event_log_sha256,
            "conservation_exact": self.conservation_exact,
            "final_supply": self.final_supply,
            "seized_pool": self.seized_pool,
            "balances": dict(sorted(self.balances.items())),
            "request_counts": dict(sorted(self.request_counts.items())),
            "detections": self.detections,
            "punishments": self.punishments,
            "uptime": dict(sorted(self.uptime.items())),
            "payouts": dict(sorted(self.payouts.items())),
            "collusion_exposed_reads": self.collusion_exposed_reads,
        }


# --- the simulation ------------------------------------------------------------


class Simulation:
    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.group = get_group(scenario.group_id)
        self.log = EventLog()

        balances = {spec.node_id: spec.balance for spec in scenario.nodes}
        balances.update({spec.name: spec.balance for spec in scenario.clients})
        balances["audit-authority"] = scenario.authority_balance
        balances.setdefault("challenger", 0)
        self.ledger = Ledger(seed=scenario.seed, params=scenario.params, balances=balances)

        self.handles: dict[str, BehaviorNode] = {}
        id_rng = random.Random(_derive_seed(scenario.seed, "node-ids"))
        for spec in scenario.nodes:
            kp = pre.keygen(self.group, id_rng)
            node = Node(spec.node_id, self.ledger, self.group.element_to_bytes(kp.pk))
            wrapper = BehaviorNode(
                node, spec, self.ledger, self.group,
                random.Random(_derive_seed(scenario.seed, f"behavior-{spec.node_id}")),
                self.log,
            )
            self.handles[spec.node_id] = wrapper
            self.ledger.deposit_stake(spec.node_id, spec.stake, lock_blocks=scenario.blocks + 1)
            self.ledger.on_block(wrapper.on_block)

        self.env = NetworkEnv(self.ledger, MemoryStore(), self.handles)
        self.clients: dict[str, Client] = {}
        for spec in scenario.clients:
            crng = random.Random(_derive_seed(scenario.seed, f"client-{spec.name}"))
            identity = Identity.generate(spec.name, self.group, crng)
            self.clients[spec.name] = Client(identity, self.env, crng)

        self.authority = AuditAuthority(
            self.ledger, self.group, self.handles,
            random.Random(_derive_seed(scenario.seed, "audit")),
            log=self.log,
        )
        self.ledger.on_block(self.authority.on_block)

        self.metrics = SimMetrics(scenario.name, scenario.seed, scenario.blocks)
        self._misbehavior_start: dict[str, int] = {}
        for spec in scenario.nodes:
            if spec.behavior in ("offline_after", "cheater_random_output"):
                self._misbehavior_start[spec.node_id] = (
                    spec.at_height if spec.behavior == "offline_after" else 0
                )
        self._pending_leaks: list[dict] = []
        self._collusion_materials: dict[str, list[dict]] = {}
        self._actions_by_height: dict[int, list[Action]] = {}
        for action in scenario.actions:
            self._actions_by_height.setdefault(action.at, []).append(action)

    # -- script ops

    def _count(self, code: str) -> None:
        self.metrics.request_counts[code] = self.metrics.request_counts.get(code, 0) + 1

    def _run_action(self, action: Action) -> None:
        args = action.args
        client = self.clients.get(action.actor)
        if client is None and action.op != "deploy_decoys":
            raise ValueError(f"script references unknown actor {action.actor!r}")
        try:
            if action.op == "write":
                data = self._action_data(action)
                client.write(args["path"], data, aont=bool(args.get("aont", False)))
                self.log.emit(self.ledger.height, "client_write",
                              actor=action.actor, path=args["path"],
                              sha256=hashlib.sha256(data).hexdigest())
            elif action.op == "share":
                recipient = self.clients[args["recipient"]]
                split = tuple(args["split"]) if args.get("split") else None
                receipt = client.share(
                    recipient.identity.enc.pk,
                    args["path"],
                    duration=int(args.get("duration", 500)),
                    condition=cond.parse_condition(args.get("condition")),
                    split=split,
                    pin_node=args.get("node"),
                )
                self.log.emit(self.ledger.height, "client_share",
                              actor=action.actor, path=args["path"],
                              share_id=receipt.share_id,
                              policies=receipt.policy_ids)
            elif action.op == "read":
                owner = self.clients[args["owner"]] if args.get("owner") else client
                data = client.read(args["path"], owner=owner.identity.address)
                expected = self._expected_digest(owner.identity.name, args["path"])
                ok = expected is None or hashlib.sha256(data).hexdigest() == expected
                self._count("ok" if ok else "integrity-mismatch")
                self.log.emit(self.ledger.height, "client_read",
                              actor=action.actor, path=args["path"],
                              ok=ok, sha256=hashlib.sha256(data).hexdigest())
            elif action.op == "revoke":
                if "share_id" in args:
                    client.revoke_share(args["share_id"])
                else:
                    client.revoke_path(args["path"])
                self.log.emit(self.ledger.height, "client_revoke",
                              actor=action.actor, target=args.get("share_id") or args["path"])
            elif action.op == "renew":
                client.renew_share(args["share_id"], int(args["extra"]))
                self.log.emit(self.ledger.height, "client_renew",
                              actor=action.actor, share_id=args["share_id"])
            elif action.op == "pay":
                client.pay(args["payee"], int(args["amount"]))
                self.log.emit(self.ledger.height, "client_pay", actor=action.actor,
                              payee=args["payee"], amount=int(args["amount"]))
            elif action.op == "deploy_decoys":
                self.authority.deploy_decoys(int(args.get("count", 1)))
            else:
                raise ValueError(f"unknown scripted op {action.op!r}")
        except PrekmsError as err:
            self._count(err.code)
            self.log.emit(self.ledger.height, "client_error", actor=action.actor,
                          op=action.op, code=err.code)

    def _action_data(self, action: Action) -> bytes:
        args = action.args
        if "data" in args:
            return str(args["data"]).encode()
        size = int(args.get("random_bytes", 128))
        crng = self.clients[action.actor].rng
        return bytes(crng.getrandbits(8) for _ in range(size))

    def _expected_digest(self, owner: str, path: str) -> str | None:
        for event in reversed(self.log.of_type("client_write")):
            if event["actor"] == owner and event["path"] == path:
                return event["sha256"]
        return None

    # -- leak challenges ride one block behind the leak events

    def _scan_leaks(self) -> None:
        for event in self.log.of_type("material_leaked"):
            if all(p["policy_id"] != event["policy_id"] for p in self._pending_leaks):
                self._pending_leaks.append(
                    {"policy_id": event["policy_id"], "material": event["material"],
                     "filed": False}
                )
        for event in self.log.of_type("collusion_leak"):
            self._collusion_materials.setdefault(event["reader"], []).append(event)

    def _file_pending_challenges(self) -> None:
        for leak in self._pending_leaks:
            if leak["filed"]:
                continue
            leak["filed"] = True
            try:
                self.authority.file_leak_challenge(
                    leak["policy_id"], bytes.fromhex(leak["material"]), "challenger"
                )
            except PrekmsError as err:
                self._count(err.code)

    # -- main loop

    def run(self) -> SimMetrics:
        scenario = self.scenario
        if scenario.initial_decoys:
            self.authority.deploy_decoys(scenario.initial_decoys)
        for action in self._actions_by_height.get(0, []):
            self._run_action(action)
        conservation_exact = self.ledger.conservation_gap() == 0
        for _ in range(scenario.blocks):
            block = self.ledger.advance_block()
            self._scan_leaks()
            self._file_pending_challenges()
            for action in self._actions_by_height.get(block.height, []):
                self._run_action(action)
            if self.ledger.conservation_gap() != 0:
                conservation_exact = False
        self._finalize(conservation_exact)
        return self.metrics

    def _finalize(self, conservation_exact: bool) -> None:
        m = self.metrics
        m.conservation_exact = conservation_exact and self.ledger.conservation_gap() == 0
        m.final_supply = self.ledger.total_supply
        m.seized_pool = self.ledger.seized_pool
        m.balances = dict(self.ledger.balances)
        m.punishments = len(self.log.of_type("node_punished"))
        for det in self.authority.detections:
            start = self._misbehavior_start.get(det["node_id"])
            latency = det["height"] - start if start is not None else None
            m.detections.append({**det, "latency": latency})
        checked_counts: dict[str, int] = {}
        healthy_counts: dict[str, int] = {}
        for event in self.log.of_type("round_tallied"):
            for node, verdict in event["verdicts"].items():
                checked_counts[node] = checked_counts.get(node, 0) + 1
                if verdict:
                    healthy_counts[node] = healthy_counts.get(node, 0) + 1
        m.uptime = {
            node: healthy_counts.get(node, 0) / count
            for node, count in checked_counts.items()
        }
        roles = {"clients": 0, "nodes": 0, "challenger": 0, "authority": 0}
        client_names = {c.name for c in self.scenario.clients}
        node_names = {n.node_id for n in self.scenario.nodes}
        for account, balance in self.ledger.balances.items():
            if account in client_names:
                roles["clients"] += balance
            elif account in node_names:
                roles["nodes"] += balance
            elif account == "challenger":
                roles["challenger"] += balance
            elif account == "audit-authority":
                roles["authority"] += balance
        m.payouts = roles
        m.collusion_exposed_reads = self._collusion_exposure()
        m.event_log_sha256 = self.log.digest()

    def _collusion_exposure(self) -> int:
        """After revocation, can a colluding reader still decrypt using the
        materials leaked to them plus the public envelope? Counts readable
        files — the measure of what collusion buys past revocation, and of
        what split-key custody denies."""
        from .node import deserialize_material

        exposed = 0
        for reader, leaks in self._collusion_materials.items():
            client = self.clients.get(reader)
            if client is None:
                continue
            leaked = {
                leak["policy_id"]: deserialize_material(bytes.fromhex(leak["material"]))
                for leak in leaks
            }
            for manifest in self.env.manifests.values():
                if manifest.get("active", True):
                    continue   # exposure only matters past revocation
                if manifest["recipient"] != client.identity.address:
                    continue
                for path in manifest["files"]:
                    if self._leaked_chain_decrypts(client, manifest, path, leaked):
                        exposed += 1
                        self.log.emit(self.ledger.height, "collusion_exposure",
                                      reader=reader, path=path)
        return exposed

    def _leaked_chain_decrypts(self, client: Client, manifest: dict, path: str,
                               leaked: dict) -> bool:
        entry = self.env.catalog.get(self.env.catalog_key(manifest["owner"], path))
        if entry is None:
            return False
        try:
            envelope = env_mod.Envelope.from_bytes(self.env.storage.get(entry["cid"]))
        except PrekmsError:
            return False
        edek = envelope.edek
        for policy_id, _ in manifest["files"][path]["hops"]:
            hop = leaked.get(policy_id)
            if not isinstance(hop, pre.ReKey):
                return False
            edek = pre.reencrypt(hop, edek)
        if "split" in manifest:
            split = manifest["split"]
            scheme = ShareScheme(ShareKind(split["kind"]), split["m"], split["n"])
            shares = [
                leaked[pid] for pid, _ in split["shares"]
                if isinstance(leaked.get(pid), pre.ReKeyShare)
            ]
            if len(shares) < scheme.m:
                return False
            if scheme.kind is ShareKind.ADDITIVE and len(shares) < scheme.n:
                return False
            parts = [pre.apply_share(s, edek) for s in shares[:max(scheme.m, len(shares))]]
            try:
                combined = pre.combine_shares(edek.group, edek.c1, parts, scheme, hops=edek.hops)
            except PrekmsError:
                return False
            reenc = pre.ReencryptedMessage(combined, bytes.fromhex(split["wrapped_eph"]))
        else:
            bundle = leaked.get(manifest["delegation"][0])
            if not isinstance(bundle, pre.DelegationBundle):
                return False
            reenc = pre.reencrypt_delegated(bundle, edek)
        try:
            env_mod.decrypt_data_delegated(self.group, client.identity.enc.sk, envelope, reenc)
            return True
        except PrekmsError:
            return False


def run(scenario: Scenario) -> tuple[SimMetrics, EventLog]:
    sim = Simulation(scenario)
    metrics = sim.run()
    return metrics, sim.log


def replay(scenario: Scenario, times: int = 2) -> list[str]:
    """Run the scenario repeatedly; returns the event-log hashes."""
    return [run(scenario)[1].digest() for _ in range(times)]
