"""Simulated staking ledger: block clock, stakes, policy quotas, Hamming
node selection, fee/collateral escrows with exact settlement arithmetic,
decaying availability rewards, and the payment log conditions query.

The ledger is a single serialized state machine: every mutation happens in
block order through one writer. All token amounts are integers; settlement
formulas are evaluated in exact rationals and floor-rounded, with remainders
swept into the seized pool so that every settlement conserves f + c to the
token.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from fractions import Fraction

from .errors import (
    AlreadySettled,
    InsufficientBalance,
    NoEligibleNodes,
    StillLocked,
    UnknownEscrow,
)

GENESIS_PARENT = b"\x00" * 32


def _h(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def hamming(a: bytes, b: bytes) -> int:
    return (int.from_bytes(a, "big") ^ int.from_bytes(b, "big")).bit_count()


@dataclass(frozen=True)
class Block:
    height: int
    hash: bytes
    timestamp: int


@dataclass
class Stake:
    node_id: str
    amount: int
    lock_until: int


@dataclass
class PolicyEscrow:
    escrow_id: str
    owner: str
    miner: str
    fee: int          # f
    duration: int     # T, blocks
    start: int        # t0, height
    collateral: int   # c
    state: str = "open"   # open | revoked | leaked | completed


@dataclass(frozen=True)
class EconomicsParams:
    alpha_quota: Fraction = Fraction(1, 10)
    alpha_challenge: Fraction = Fraction(1, 4)
    s_min: int = 100
    h: int = 10                  # health-check cadence, blocks
    block_time: int = 24         # seconds per block
    reward_r0: int = 64
    reward_half_life: int = 100
    committee_fee: int = 12      # per-round checking reward, minted
    commit_blocks: int = 2       # audit round phase lengths
    reveal_blocks: int = 2

    def __post_init__(self):
        object.__setattr__(self, "alpha_quota", Fraction(self.alpha_quota))
        object.__setattr__(self, "alpha_challenge", Fraction(self.alpha_challenge))
        if not 0 < self.alpha_challenge < 1:
            raise ValueError("alpha_challenge must be in (0, 1)")
        for name in ("s_min", "h", "block_time", "reward_r0", "reward_half_life"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def to_dict(self) -> dict:
        return {
            "alpha_quota": str(self.alpha_quota),
            "alpha_challenge": str(self.alpha_challenge),
            "s_min": self.s_min,
            "h": self.h,
            "block_time": self.block_time,
            "reward_r0": self.reward_r0,
            "reward_half_life": self.reward_half_life,
            "committee_fee": self.committee_fee,
            "commit_blocks": self.commit_blocks,
            "reveal_blocks": self.reveal_blocks,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "EconomicsParams":
        kwargs = dict(obj)
        for key in ("alpha_quota", "alpha_challenge"):
            if key in kwargs:
                kwargs[key] = Fraction(str(kwargs[key]))
        return cls(**kwargs)


@dataclass
class PolicyInfo:
    """Directory entry for a deployed policy: what the network knows."""

    policy_id: str          # hex
    node_id: str
    owner: str
    escrow_id: str
    material_hash: str      # hex sha256 of the canonical material bytes
    active: bool = True


@dataclass
class NodeAccount:
    node_id: str
    pk_bytes: bytes                  # selection identity (hash input)
    healthy: bool = True
    last_check: int = 0              # height of last tallied health check
    accrued_since_check: int = 0     # availability rewards since then


class Ledger:
    def __init__(
        self,
        seed: int = 0,
        params: EconomicsParams | None = None,
        balances: dict[str, int] | None = None,
    ):
        self.seed = seed
        self.params = params or EconomicsParams()
        self.height = 0
        self.block_hash = _h(GENESIS_PARENT + (0).to_bytes(8, "big") + seed.to_bytes(8, "big"))
        self.balances: dict[str, int] = dict(balances or {})
        self.total_supply = sum(self.balances.values())
        self.seized_pool = 0
        self.stakes: dict[str, Stake] = {}
        self.escrows: dict[str, PolicyEscrow] = {}
        self.payments: list[tuple[int, str, str, int]] = []   # (height, payer, payee, amount)
        self.nodes: dict[str, NodeAccount] = {}
        self.policies: dict[str, PolicyInfo] = {}
        self._escrow_counter = 0
        self._block_hooks: list = []

    # --- block clock -------------------------------------------------------

    def current_block(self) -> Block:
        return Block(self.height, self.block_hash, self.height * self.params.block_time)

    def on_block(self, hook) -> None:
        """hook(block) fires after each advance, in registration order."""
        self._block_hooks.append(hook)

    def advance_block(self) -> Block:
        self.height += 1
        self.block_hash = _h(
            self.block_hash + self.height.to_bytes(8, "big") + self.seed.to_bytes(8, "big")
        )
        self._mint_for_block(self.height)
        block = self.current_block()
        for hook in list(self._block_hooks):
            hook(block)
        return block

    # --- balances & payments ---------------------------------------------

    def balance(self, who: str) -> int:
        return self.balances.get(who, 0)

    def credit(self, who: str, amount: int) -> None:
        self.balances[who] = self.balance(who) + amount

    def _debit(self, who: str, amount: int) -> None:
        if self.balance(who) < amount:
            raise InsufficientBalance(f"{who} has {self.balance(who)}, needs {amount}")
        self.balances[who] -= amount

    def record_payment(self, payer: str, payee: str, amount: int) -> tuple[int, str, str, int]:
        self._debit(payer, amount)
        self.credit(payee, amount)
        record = (self.height, payer, payee, amount)
        self.payments.append(record)
        return record

    def payment_exists(self, payer: str, payee: str, min_amount: int) -> bool:
        return any(
            p == payer and q == payee and amt >= min_amount
            for _, p, q, amt in self.payments
        )

    # --- staking ------------------------------------------------------------

    def register_node(self, node_id: str, pk_bytes: bytes) -> None:
        if node_id not in self.nodes:
            self.nodes[node_id] = NodeAccount(node_id, pk_bytes, last_check=self.height)

    def deposit_stake(self, node_id: str, amount: int, lock_blocks: int) -> Stake:
        self._debit(node_id, amount)
        existing = self.stakes.get(node_id)
        lock_until = self.height + lock_blocks
        if existing:
            existing.amount += amount
            existing.lock_until = max(existing.lock_until, lock_until)
            return existing
        stake = Stake(node_id, amount, lock_until)
        self.stakes[node_id] = stake
        return stake

    def withdraw_stake(self, node_id: str) -> int:
        stake = self.stakes.get(node_id)
        if stake is None:
            raise InsufficientBalance(f"{node_id} has no stake")
        if self.height < stake.lock_until:
            raise StillLocked(f"locked until height {stake.lock_until}")
        del self.stakes[node_id]
        self.credit(node_id, stake.amount)
        return stake.amount

    def total_stake(self) -> int:
        return sum(s.amount for s in self.stakes.values())

    # --- quotas & selection ---------------------------------------------------

    def quota_limit(self, node_id: str) -> Fraction:
        """Maximum share of all deployed policies this node may hold."""
        total = self.total_stake()
        if total == 0:
            return Fraction(0)
        stake = self.stakes.get(node_id)
        amount = stake.amount if stake else 0
        return (1 + self.params.alpha_quota) * Fraction(amount, total)

    def active_policy_count(self, node_id: str | None = None) -> int:
        if node_id is None:
            return sum(1 for p in self.policies.values() if p.active)
        return sum(1 for p in self.policies.values() if p.active and p.node_id == node_id)

    def quota_allows(self, node_id: str, additional: int = 1) -> bool:
        # share-of-total cap, with a one-policy floor so the first deploys in
        # a young network are not refused outright
        count_after = self.active_policy_count(node_id) + additional
        total_after = self.active_policy_count() + additional
        cap = max(Fraction(1), self.quota_limit(node_id) * total_after)
        return Fraction(count_after) <= cap

    def eligible_nodes(self) -> list[str]:
        out = []
        for node_id in sorted(self.nodes):
            stake = self.stakes.get(node_id)
            if stake and stake.amount >= self.params.s_min and self.quota_allows(node_id):
                out.append(node_id)
        return out

    def select_node(self, policy_id: bytes, exclude: set[str] | None = None) -> str:
        """Closest node by Hamming distance of H(node pk) to H(policy id),
        among staked, under-quota nodes; ties to the smaller hash."""
        target = _h(policy_id)
        best: tuple[int, bytes, str] | None = None
        for node_id in self.eligible_nodes():
            if exclude and node_id in exclude:
                continue
            node_hash = _h(self.nodes[node_id].pk_bytes)
            key = (hamming(node_hash, target), node_hash, node_id)
            if best is None or key < best:
                best = key
        if best is None:
            raise NoEligibleNodes("no staked node has quota headroom")
        return best[2]

    # --- policy directory ---------------------------------------------------

    def register_policy(
        self, policy_id: str, node_id: str, owner: str, escrow_id: str, material_hash: str
    ) -> PolicyInfo:
        info = PolicyInfo(policy_id, node_id, owner, escrow_id, material_hash)
        self.policies[policy_id] = info
        return info

    def deactivate_policy(self, policy_id: str) -> None:
        info = self.policies.get(policy_id)
        if info:
            info.active = False

    # --- escrow & settlement ----------------------------------------------------

    def escrow_policy(
        self, owner: str, miner: str, fee: int, duration: int, collateral: int
    ) -> str:
        if fee < 0 or collateral < 0 or duration <= 0:
            raise ValueError("bad escrow parameters")
        self._debit(owner, fee)
        try:
            self._debit(miner, collateral)
        except InsufficientBalance:
            self.credit(owner, fee)
            raise
        self._escrow_counter += 1
        escrow_id = _h(
            b"escrow" + self.seed.to_bytes(8, "big") + self._escrow_counter.to_bytes(8, "big")
        ).hex()[:16]
        self.escrows[escrow_id] = PolicyEscrow(
            escrow_id, owner, miner, fee, duration, self.height, collateral
        )
        return escrow_id

    def _open_escrow(self, escrow_id: str) -> PolicyEscrow:
        escrow = self.escrows.get(escrow_id)
        if escrow is None:
            raise UnknownEscrow(escrow_id)
        if escrow.state != "open":
            raise AlreadySettled(f"escrow {escrow_id} is {escrow.state}")
        return escrow

    def settle_revocation(self, escrow_id: str, t: int | None = None) -> dict[str, int]:
        """Owner gets (1 - t/T) f back; the miner gets c + f t/T."""
        escrow = self._open_escrow(escrow_id)
        t = self._elapsed(escrow, t)
        f, T, c = escrow.fee, escrow.duration, escrow.collateral
        owner_back = int(Fraction(T - t, T) * f)
        miner_gain = c + int(Fraction(t, T) * f)
        rest = f + c - owner_back - miner_gain
        self.credit(escrow.owner, owner_back)
        self.credit(escrow.miner, miner_gain)
        self.seized_pool += rest
        escrow.state = "completed" if t >= T else "revoked"
        return {"owner": owner_back, "miner": miner_gain, "seized": rest}

    def settle_leak_challenge(
        self, escrow_id: str, t: int | None, challenger: str
    ) -> dict[str, int]:
        """Challenger gets alpha f t/T; owner gets (1 - t/T) f; the collateral
        plus the rest of the fee is seized."""
        escrow = self._open_escrow(escrow_id)
        t = self._elapsed(escrow, t)
        f, T, c = escrow.fee, escrow.duration, escrow.collateral
        alpha = self.params.alpha_challenge
        challenger_gain = int(alpha * Fraction(t, T) * f)
        owner_back = int(Fraction(T - t, T) * f)
        seized = f + c - challenger_gain - owner_back
        self.credit(challenger, challenger_gain)
        self.credit(escrow.owner, owner_back)
        self.seized_pool += seized
        escrow.state = "leaked"
        return {"challenger": challenger_gain, "owner": owner_back, "seized": seized}

    def complete_escrow(self, escrow_id: str) -> dict[str, int]:
        escrow = self._open_escrow(escrow_id)
        return self.settle_revocation(escrow_id, escrow.duration)

    def _elapsed(self, escrow: PolicyEscrow, t: int | None) -> int:
        if t is None:
            t = self.height - escrow.start
        return max(0, min(t, escrow.duration))

    # --- rewards ----------------------------------------------------------------

    def mint_reward(self, height: int) -> int:
        """Per-block reward, halving smoothly: R0 * 2^(-height/half_life)."""
        p = self.params
        return int(p.reward_r0 * 2.0 ** (-height / p.reward_half_life))

    def _mint_for_block(self, height: int) -> None:
        reward = self.mint_reward(height)
        if reward <= 0:
            return
        earners = [
            n for n in sorted(self.nodes)
            if self.nodes[n].healthy
            and n in self.stakes
            and self.stakes[n].amount >= self.params.s_min
        ]
        self.total_supply += reward
        if not earners:
            self.seized_pool += reward
            return
        total = sum(self.stakes[n].amount for n in earners)
        distributed = 0
        for n in earners:
            share = int(Fraction(reward) * Fraction(self.stakes[n].amount, total))
            self.credit(n, share)
            self.nodes[n].accrued_since_check += share
            distributed += share
        self.seized_pool += reward - distributed

    def mint_committee_fee(self, voters: list[str]) -> int:
        """Fixed per-round checking reward split among majority voters."""
        fee = self.params.committee_fee
        self.total_supply += fee
        if not voters:
            self.seized_pool += fee
            return 0
        share = fee // len(voters)
        for v in sorted(voters):
            self.credit(v, share)
        self.seized_pool += fee - share * len(voters)
        return share

    def punish_node(self, node_id: str) -> int:
        """Forfeit the average per-block reward since the last check, times h."""
        account = self.nodes[node_id]
        blocks = self.height - account.last_check
        if blocks <= 0 or account.accrued_since_check <= 0:
            forfeit = 0
        else:
            forfeit = int(Fraction(account.accrued_since_check, blocks) * self.params.h)
        forfeit = min(forfeit, self.balance(node_id))
        if forfeit:
            self.balances[node_id] -= forfeit
            self.seized_pool += forfeit
        account.healthy = False
        account.last_check = self.height
        account.accrued_since_check = 0
        return forfeit

    def mark_checked(self, node_id: str, healthy: bool) -> None:
        account = self.nodes[node_id]
        account.healthy = healthy
        account.last_check = self.height
        account.accrued_since_check = 0

    # --- invariants ----------------------------------------------------------------

    def conservation_gap(self) -> int:
        """0 when every token is accounted for."""
        held = sum(self.balances.values())
        staked = sum(s.amount for s in self.stakes.values())
        escrowed = sum(
            e.fee + e.collateral for e in self.escrows.values() if e.state == "open"
        )
        return self.total_supply - (held + staked + escrowed + self.seized_pool)

    # --- checkpoints -----------------------------------------------------------------

    def export_state(self) -> dict:
        return {
            "version": 1,
            "seed": self.seed,
            "height": self.height,
            "block_hash": self.block_hash.hex(),
            "params": self.params.to_dict(),
            "balances": dict(sorted(self.balances.items())),
            "total_supply": self.total_supply,
            "seized_pool": self.seized_pool,
            "stakes": {
                k: {"amount": s.amount, "lock_until": s.lock_until}
                for k, s in sorted(self.stakes.items())
            },
            "escrows": {
                k: {
                    "owner": e.owner,
                    "miner": e.miner,
                    "fee": e.fee,
                    "duration": e.duration,
                    "start": e.start,
                    "collateral": e.collateral,
                    "state": e.state,
                }
                for k, e in sorted(self.escrows.items())
            },
            "payments": [list(p) for p in self.payments],
            "nodes": {
                k: {
                    "pk": n.pk_bytes.hex(),
                    "healthy": n.healthy,
                    "last_check": n.last_check,
                    "accrued": n.accrued_since_check,
                }
                for k, n in sorted(self.nodes.items())
            },
            "policies": {
                k: {
                    "node_id": p.node_id,
                    "owner": p.owner,
                    "escrow_id": p.escrow_id,
                    "material_hash": p.material_hash,
                    "active": p.active,
                }
                for k, p in sorted(self.policies.items())
            },
            "escrow_counter": self._escrow_counter,
        }

    @classmethod
    def import_state(cls, doc: dict) -> "Ledger":
        if doc.get("version") != 1:
            raise ValueError("unsupported ledger state version")
        ledger = cls(seed=doc["seed"], params=EconomicsParams.from_dict(doc["params"]))
        ledger.height = doc["height"]
        ledger.block_hash = bytes.fromhex(doc["block_hash"])
        ledger.balances = dict(doc["balances"])
        ledger.total_supply = doc["total_supply"]
        ledger.seized_pool = doc["seized_pool"]
        ledger.stakes = {
            k: Stake(k, v["amount"], v["lock_until"]) for k, v in doc["stakes"].items()
        }
        ledger.escrows = {
            k: PolicyEscrow(
                k, v["owner"], v["miner"], v["fee"], v["duration"], v["start"],
                v["collateral"], v["state"],
            )
            for k, v in doc["escrows"].items()
        }
        ledger.payments = [tuple(p) for p in doc["payments"]]
        ledger.nodes = {
            k: NodeAccount(
                k, bytes.fromhex(v["pk"]), v["healthy"], v["last_check"], v["accrued"]
            )
            for k, v in doc["nodes"].items()
        }
        ledger.policies = {
            k: PolicyInfo(
                k, v["node_id"], v["owner"], v["escrow_id"], v["material_hash"], v["active"]
            )
            for k, v in doc["policies"].items()
        }
        ledger._escrow_counter = doc["escrow_counter"]
        return ledger

    def to_json(self) -> str:
        return json.dumps(self.export_state(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Ledger":
        return cls.import_state(json.loads(text))
