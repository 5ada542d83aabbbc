"""Health-check and challenge protocol.

Every h blocks a round opens, anchored to the block hash: ~sqrt(N) nodes get
checked by a ~sqrt(N)-strong committee (closest hashes by Hamming distance).
Committee members probe the checked nodes with a generalized ping — liveness,
an old standing decoy policy, a fresh create-reencrypt-revoke sequence, and
the same again from an unrelated requester address — then vote on each
checked node's health through salted commit-reveal. The stake-weighted
majority verdict punishes failed nodes by forfeiting their recent
availability rewards.

Correctness checks ride on challenge packs: deterministic re-encryption means
a decoy policy's expected outputs are known in advance, and a node answering
with anything else is caught on the first probe.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Optional

from . import conditions as cond
from . import pre
from .errors import (
    AlreadySettled,
    BadAuth,
    BadReveal,
    DuplicateVote,
    InsufficientBalance,
    NodeUnavailable,
    NoEligibleNodes,
    PrekmsError,
    QuotaExceeded,
    UnknownPolicy,
    WrongPhase,
)
from .events import EventLog
from .group import PrimeOrderGroup, Rng
from .ledger import Ledger, hamming
from .node import ReencryptRequest, make_owner_auth, new_policy_id
from .signing import SigningKeyPair


def _h(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def checked_set_size(n: int) -> int:
    return max(1, math.isqrt(n - 1) + 1) if n > 1 else n   # ceil(sqrt(n))


def select_checked_set(anchor: bytes, registry: list[str]) -> list[str]:
    """k = ceil(sqrt(N)) distinct nodes by iterated hashing of the anchor."""
    n = len(registry)
    if n == 0:
        return []
    ordered = sorted(registry)
    k = checked_set_size(n)
    chosen: list[str] = []
    seen: set[str] = set()
    counter = 0
    while len(chosen) < k:
        idx = int.from_bytes(_h(anchor + counter.to_bytes(8, "big")), "big") % n
        node = ordered[idx]
        if node not in seen:
            seen.add(node)
            chosen.append(node)
        counter += 1
    return chosen


def select_committee(anchor: bytes, registry: dict[str, bytes]) -> list[str]:
    """ceil(sqrt(N)) nodes whose hashed pubkeys sit closest to the anchor."""
    if not registry:
        return []
    k = checked_set_size(len(registry))
    ranked = sorted(
        (hamming(_h(pk), anchor), _h(pk), node_id) for node_id, pk in registry.items()
    )
    return [node_id for _, _, node_id in ranked[:k]]


@dataclass
class PingReport:
    node_id: str
    liveness: bool
    old_policy_ok: Optional[bool] = None    # None: no standing decoy to test
    sequence_ok: Optional[bool] = None
    unrelated_ok: Optional[bool] = None

    @property
    def healthy(self) -> bool:
        if not self.liveness:
            return False
        return all(t is not False for t in (self.old_policy_ok, self.sequence_ok, self.unrelated_ok))


@dataclass
class DecoyPolicy:
    policy_id: str
    node_id: str
    pack: pre.ChallengePack
    escrow_ref: str
    signer: SigningKeyPair
    active: bool = True


def verdict_bitmap(checked: list[str], verdicts: dict[str, bool]) -> bytes:
    return bytes(1 if verdicts.get(node, True) else 0 for node in checked)


def vote_commitment(salt: bytes, bitmap: bytes) -> bytes:
    return _h(b"prekms vote v1" + salt + bitmap)


@dataclass
class HealthRound:
    round_id: int
    anchor: bytes
    opened_at: int
    checked: list[str]
    committee: list[str]
    phase: str = "commit"                      # commit | reveal | tallied
    commitments: dict[str, bytes] = field(default_factory=dict)
    reveals: dict[str, tuple[bytes, bytes]] = field(default_factory=dict)
    verdicts: dict[str, bool] = field(default_factory=dict)


def commit_vote(round: HealthRound, voter: str, commitment: bytes) -> None:
    if round.phase != "commit":
        raise WrongPhase(f"round {round.round_id} is in {round.phase}")
    if voter not in round.committee:
        raise BadAuth(f"{voter} is not on the committee")
    if voter in round.commitments:
        raise DuplicateVote(voter)
    round.commitments[voter] = commitment


def reveal_vote(round: HealthRound, voter: str, salt: bytes, bitmap: bytes) -> None:
    if round.phase != "reveal":
        raise WrongPhase(f"round {round.round_id} is in {round.phase}")
    commitment = round.commitments.get(voter)
    if commitment is None:
        raise BadAuth(f"{voter} never committed")
    if voter in round.reveals:
        raise DuplicateVote(voter)
    if vote_commitment(salt, bitmap) != commitment:
        raise BadReveal(voter)
    round.reveals[voter] = (salt, bitmap)


def tally_votes(round: HealthRound, stakes: dict[str, int]) -> dict[str, bool]:
    """Stake-weighted majority per checked node. Unrevealed commits are
    abstentions; a voter's opinion of itself is discarded; zero reveals
    leave a node healthy (no punishment without evidence)."""
    if round.phase == "commit":
        raise WrongPhase("reveal phase has not happened")
    verdicts: dict[str, bool] = {}
    for i, node in enumerate(round.checked):
        healthy_stake = 0
        unhealthy_stake = 0
        for voter, (_, bitmap) in round.reveals.items():
            if voter == node:
                continue
            weight = stakes.get(voter, 0)
            if bitmap[i]:
                healthy_stake += weight
            else:
                unhealthy_stake += weight
        verdicts[node] = not unhealthy_stake > healthy_stake
    round.verdicts = verdicts
    round.phase = "tallied"
    return verdicts


def majority_voters(round: HealthRound) -> list[str]:
    """Committee members whose revealed votes match the tallied verdicts
    (ignoring entries about themselves)."""
    out = []
    for voter, (_, bitmap) in round.reveals.items():
        agrees = all(
            bool(bitmap[i]) == round.verdicts[node]
            for i, node in enumerate(round.checked)
            if node != voter
        )
        if agrees:
            out.append(voter)
    return sorted(out)


class AuditAuthority:
    """Drives rounds, decoys, and leak challenges against a set of node
    handles (in-process nodes, behavior wrappers, or HTTP clients)."""

    def __init__(
        self,
        ledger: Ledger,
        group: PrimeOrderGroup,
        node_handles: dict[str, object],
        rng: Rng,
        log: EventLog | None = None,
        account: str = "audit-authority",
        pack_size: int = 8,
    ):
        self.ledger = ledger
        self.group = group
        self.handles = node_handles
        self.rng = rng
        self.log = log if log is not None else EventLog()
        self.account = account
        self.pack_size = pack_size
        self.decoys: dict[str, DecoyPolicy] = {}
        self.rounds: list[HealthRound] = []
        self.detections: list[dict] = []
        # committee members keep their salt+bitmap private until reveal phase
        self._pending_reveals: dict[int, dict[str, tuple[bytes, bytes]]] = {}

    # --- decoys -----------------------------------------------------------

    def _fresh_pack(self, rng: Rng) -> tuple[pre.ReKey, pre.ChallengePack]:
        a = pre.keygen(self.group, rng)
        b = pre.keygen(self.group, rng)
        rk = pre.rekey(self.group, a.sk, b.sk)
        return rk, pre.make_challenge_pack(rk, a.pk, self.pack_size, rng)

    def deploy_decoy(
        self,
        node_id: str | None = None,
        *,
        duration: int = 1_000,
        fee: int = 0,
        collateral: int = 0,
        rng: Rng | None = None,
        record: bool = True,
    ) -> DecoyPolicy:
        """Deploy one decoy through the normal policy path. With no node_id
        the ledger's Hamming selection picks the target, exactly like a real
        client deployment would."""
        rng = rng or self.rng
        rk, pack = self._fresh_pack(rng)
        policy_id = new_policy_id(rng)
        if node_id is None:
            node_id = self.ledger.select_node(bytes.fromhex(policy_id))
        signer = SigningKeyPair.generate(rng)
        escrow = self.ledger.escrow_policy(self.account, node_id, fee, duration, collateral)
        handle = self.handles[node_id]
        handle.deploy_policy(
            policy_id=policy_id,
            material=rk,
            t_start=self.ledger.height,
            t_end=self.ledger.height + duration,
            condition=cond.always(),
            escrow_ref=escrow,
            owner_verify_key=signer.verify_key,
        )
        decoy = DecoyPolicy(policy_id, node_id, pack, escrow, signer)
        if record:
            self.decoys[policy_id] = decoy
            self.log.emit(self.ledger.height, "decoy_deployed",
                          policy_id=policy_id, node_id=node_id)
        return decoy

    def deploy_decoys(self, rate: int) -> list[DecoyPolicy]:
        out = []
        for _ in range(rate):
            try:
                out.append(self.deploy_decoy())
            except (NoEligibleNodes, InsufficientBalance):
                break
        return out

    def _standing_decoy(self, node_id: str) -> DecoyPolicy | None:
        for decoy in self.decoys.values():
            if decoy.node_id == node_id and decoy.active:
                return decoy
        return None

    def _probe_entry(self, handle, policy_id: str, entry: pre.ChallengeEntry,
                     requester: str) -> bool:
        resp = handle.handle_reencrypt(
            ReencryptRequest(policy_id, entry.input.to_bytes(), requester=requester)
        )
        if resp.kind != "ciphertext":
            return False
        try:
            observed = pre.PRECiphertext.from_bytes(resp.payload)
        except PrekmsError:
            return False
        return pre.verify_challenge_entry(entry, observed)

    # --- the generalized ping ------------------------------------------------

    def run_ping_suite(self, node_id: str, voter: str = "") -> PingReport:
        handle = self.handles[node_id]
        rng = self._suite_rng(node_id, voter)
        report = PingReport(node_id, liveness=False)
        try:
            pong = handle.ping()
            report.liveness = bool(pong.get("ok"))
        except (NodeUnavailable, PrekmsError, OSError):
            return report   # offline: the lightweight ping decides, rest skipped
        if not report.liveness:
            return report

        decoy = self._standing_decoy(node_id)
        if decoy is not None:
            entry = decoy.pack.entries[rng.randrange(len(decoy.pack.entries))]
            try:
                report.old_policy_ok = self._probe_entry(
                    handle, decoy.policy_id, entry, requester=voter
                )
            except PrekmsError:
                report.old_policy_ok = False

        report.sequence_ok = self._sequence_probe(node_id, handle, rng, requester=voter)
        if report.sequence_ok is not None:
            report.unrelated_ok = self._sequence_probe(
                node_id, handle, rng, requester=f"unrelated-{voter}"
            )

        if report.old_policy_ok is False or report.sequence_ok is False or \
                report.unrelated_ok is False:
            self.log.emit(self.ledger.height, "decoy_violation",
                          node_id=node_id, voter=voter)
        return report

    def _sequence_probe(self, node_id: str, handle, rng: Rng, requester: str) -> bool | None:
        """create-reencrypt-revoke with a throwaway decoy; a quota refusal is
        correct node behavior, not ill health (returns None)."""
        try:
            decoy = self.deploy_decoy(
                node_id, duration=max(4, self.ledger.params.h), rng=rng, record=False
            )
        except (QuotaExceeded, InsufficientBalance, NoEligibleNodes):
            return None
        except (NodeUnavailable, PrekmsError, OSError):
            return False
        ok = True
        try:
            for entry in decoy.pack.entries[:2]:
                if not self._probe_entry(handle, decoy.policy_id, entry, requester):
                    ok = False
                    break
        except (NodeUnavailable, PrekmsError, OSError):
            ok = False
        try:
            auth = make_owner_auth(decoy.signer, "revoke", decoy.policy_id, rng)
            handle.revoke_policy(decoy.policy_id, auth)
            probe = decoy.pack.entries[0]
            try:
                handle.handle_reencrypt(
                    ReencryptRequest(decoy.policy_id, probe.input.to_bytes(), requester)
                )
                ok = False    # a revoked policy must not serve
            except PrekmsError:
                pass
        except (NodeUnavailable, PrekmsError, OSError):
            ok = False
        return ok

    def _suite_rng(self, node_id: str, voter: str) -> Rng:
        import random

        seed = int.from_bytes(
            _h(self.ledger.block_hash + node_id.encode() + voter.encode()), "big"
        )
        return random.Random(seed)

    # --- rounds ----------------------------------------------------------------

    def open_round(self, anchor: bytes) -> HealthRound:
        registry = sorted(self.ledger.nodes)
        pks = {n: self.ledger.nodes[n].pk_bytes for n in registry}
        round = HealthRound(
            round_id=len(self.rounds),
            anchor=anchor,
            opened_at=self.ledger.height,
            checked=select_checked_set(anchor, registry),
            committee=select_committee(anchor, pks),
        )
        self.rounds.append(round)
        self.log.emit(self.ledger.height, "round_opened", round_id=round.round_id,
                      checked=round.checked, committee=round.committee)
        # committee members probe and commit immediately
        for voter in round.committee:
            verdicts = {
                node: self.run_ping_suite(node, voter).healthy for node in round.checked
            }
            bitmap = verdict_bitmap(round.checked, verdicts)
            salt = _h(b"salt" + anchor + voter.encode())[:16]
            commit_vote(round, voter, vote_commitment(salt, bitmap))
            self._pending_reveals.setdefault(round.round_id, {})[voter] = (salt, bitmap)
            self.log.emit(self.ledger.height, "vote_committed",
                          round_id=round.round_id, voter=voter)
        return round

    def on_block(self, block) -> None:
        params = self.ledger.params
        if block.height > 0 and block.height % params.h == 0:
            self.open_round(block.hash)
        for round in self.rounds:
            if round.phase == "commit" and block.height >= round.opened_at + params.commit_blocks:
                round.phase = "reveal"
                for voter, (salt, bitmap) in sorted(
                    self._pending_reveals.get(round.round_id, {}).items()
                ):
                    reveal_vote(round, voter, salt, bitmap)
                    self.log.emit(block.height, "vote_revealed",
                                  round_id=round.round_id, voter=voter,
                                  bitmap=bitmap.hex())
            elif round.phase == "reveal" and \
                    block.height >= round.opened_at + params.commit_blocks + params.reveal_blocks:
                self._tally_and_punish(round, block.height)

    def _tally_and_punish(self, round: HealthRound, height: int) -> None:
        stakes = {n: s.amount for n, s in self.ledger.stakes.items()}
        verdicts = tally_votes(round, stakes)
        self.log.emit(height, "round_tallied", round_id=round.round_id,
                      verdicts={n: bool(v) for n, v in sorted(verdicts.items())})
        for node, healthy in sorted(verdicts.items()):
            if healthy:
                self.ledger.mark_checked(node, healthy=True)
            else:
                forfeit = self.ledger.punish_node(node)
                self.detections.append(
                    {"node_id": node, "round_id": round.round_id, "height": height}
                )
                self.log.emit(height, "node_punished", node_id=node,
                              round_id=round.round_id, forfeit=forfeit)
        winners = majority_voters(round)
        if winners:
            share = self.ledger.mint_committee_fee(winners)
            self.log.emit(height, "committee_rewarded", round_id=round.round_id,
                          voters=winners, share=share)

    # --- leak challenges -------------------------------------------------------

    def file_leak_challenge(self, policy_id: str, evidence: bytes, challenger: str) -> dict:
        info = self.ledger.policies.get(policy_id)
        if info is None:
            raise UnknownPolicy(policy_id)
        leaked = hashlib.sha256(evidence).hexdigest() == info.material_hash
        result: dict = {"policy_id": policy_id, "leaked": leaked, "payouts": None}
        if leaked:
            escrow = self.ledger.escrows.get(info.escrow_id)
            if escrow is None or escrow.state != "open":
                raise AlreadySettled(info.escrow_id)
            t = self.ledger.height - escrow.start
            result["payouts"] = self.ledger.settle_leak_challenge(info.escrow_id, t, challenger)
            self.ledger.deactivate_policy(policy_id)
        self.log.emit(self.ledger.height, "leak_challenge", policy_id=policy_id,
                      challenger=challenger, leaked=leaked, payouts=result["payouts"])
        return result
