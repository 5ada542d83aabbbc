"""Condition expressions gating re-encryption, evaluated against ledger state
only (pure, no wall clock, no node-local state).

Atoms:
    always / never
    after(height)    — true once the chain height reaches `height`
    before(height)   — true strictly below `height`
    payment_observed(payer, payee, min_amount)
Combinators: and / or / not.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Protocol


class LedgerView(Protocol):
    height: int

    def payment_exists(self, payer: str, payee: str, min_amount: int) -> bool: ...


@dataclass(frozen=True)
class ConditionExpr:
    kind: str
    height: int = 0
    payer: str = ""
    payee: str = ""
    min_amount: int = 0
    terms: tuple["ConditionExpr", ...] = field(default_factory=tuple)

    def to_dict(self) -> dict[str, Any]:
        if self.kind in ("always", "never"):
            return {"type": self.kind}
        if self.kind in ("after", "before"):
            return {"type": self.kind, "height": self.height}
        if self.kind == "payment_observed":
            return {
                "type": self.kind,
                "payer": self.payer,
                "payee": self.payee,
                "min_amount": self.min_amount,
            }
        if self.kind == "not":
            return {"type": "not", "term": self.terms[0].to_dict()}
        return {"type": self.kind, "terms": [t.to_dict() for t in self.terms]}


def always() -> ConditionExpr:
    return ConditionExpr("always")


def never() -> ConditionExpr:
    return ConditionExpr("never")


def after(height: int) -> ConditionExpr:
    return ConditionExpr("after", height=height)


def before(height: int) -> ConditionExpr:
    return ConditionExpr("before", height=height)


def payment_observed(payer: str, payee: str, min_amount: int) -> ConditionExpr:
    return ConditionExpr("payment_observed", payer=payer, payee=payee, min_amount=min_amount)


def and_(*terms: ConditionExpr) -> ConditionExpr:
    return ConditionExpr("and", terms=tuple(terms))


def or_(*terms: ConditionExpr) -> ConditionExpr:
    return ConditionExpr("or", terms=tuple(terms))


def not_(term: ConditionExpr) -> ConditionExpr:
    return ConditionExpr("not", terms=(term,))


def evaluate(cond: ConditionExpr, ledger: LedgerView) -> bool:
    kind = cond.kind
    if kind == "always":
        return True
    if kind == "never":
        return False
    if kind == "after":
        return ledger.height >= cond.height
    if kind == "before":
        return ledger.height < cond.height
    if kind == "payment_observed":
        return ledger.payment_exists(cond.payer, cond.payee, cond.min_amount)
    if kind == "and":
        return all(evaluate(t, ledger) for t in cond.terms)
    if kind == "or":
        return any(evaluate(t, ledger) for t in cond.terms)
    if kind == "not":
        return not evaluate(cond.terms[0], ledger)
    raise ValueError(f"unknown condition kind {kind!r}")


def parse_condition(obj: dict[str, Any] | str | None) -> ConditionExpr:
    if obj is None:
        return always()
    if isinstance(obj, str):
        if obj in ("always", "never"):
            return ConditionExpr(obj)
        raise ValueError(f"unknown condition shorthand {obj!r}")
    kind = obj["type"]
    if kind in ("always", "never"):
        return ConditionExpr(kind)
    if kind in ("after", "before"):
        return ConditionExpr(kind, height=int(obj["height"]))
    if kind == "payment_observed":
        return ConditionExpr(
            kind,
            payer=obj["payer"],
            payee=obj["payee"],
            min_amount=int(obj["min_amount"]),
        )
    if kind == "not":
        return ConditionExpr(kind, terms=(parse_condition(obj["term"]),))
    if kind in ("and", "or"):
        return ConditionExpr(kind, terms=tuple(parse_condition(t) for t in obj["terms"]))
    raise ValueError(f"unknown condition type {kind!r}")


def latest_active_height(cond: ConditionExpr) -> int | None:
    """Upper bound on heights where the condition can still be true; None
    means unbounded. Used by nodes to garbage-collect material that can
    never be served again."""
    kind = cond.kind
    if kind == "before":
        return cond.height - 1
    if kind == "and":
        bounds = [latest_active_height(t) for t in cond.terms]
        finite = [b for b in bounds if b is not None]
        return min(finite) if finite else None
    if kind == "or":
        bounds = [latest_active_height(t) for t in cond.terms]
        if any(b is None for b in bounds):
            return None
        return max(bounds) if bounds else None
    if kind == "never":
        return -1
    return None
