"""Validation reports shared by every checker in the package."""

from __future__ import annotations

from dataclasses import dataclass, field

PASS = "pass"
FAIL = "fail"
INDETERMINATE = "indeterminate"
UNCHECKED = "unchecked"


@dataclass
class Condition:
    cid: str
    status: str
    witness: str = ""

    @property
    def ok(self) -> bool:
        return self.status != FAIL


@dataclass
class ValidationReport:
    """Ordered list of checked conditions plus optional numeric extras.

    The verdict is true when no condition failed.  Conditions that could not
    be decided carry ``indeterminate`` or ``unchecked`` and do not spoil it.
    """

    name: str
    conditions: list[Condition] = field(default_factory=list)
    data: dict = field(default_factory=dict)

    def add(self, cid: str, status, witness: str = "") -> Condition:
        if not isinstance(status, str):
            status = PASS if status else FAIL
        cond = Condition(str(cid), status, witness)
        self.conditions.append(cond)
        return cond

    @property
    def verdict(self) -> bool:
        return all(c.ok for c in self.conditions)

    def status(self, cid) -> str:
        for c in self.conditions:
            if c.cid == str(cid):
                return c.status
        raise KeyError(cid)

    def first_failure(self):
        for c in self.conditions:
            if c.status == FAIL:
                return c
        return None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "verdict": self.verdict,
            "conditions": [
                {"id": c.cid, "status": c.status, "witness": c.witness}
                for c in self.conditions
            ],
            "data": self.data,
        }

    def summary(self) -> str:
        lines = [f"{self.name}: {'PASS' if self.verdict else 'FAIL'}"]
        for c in self.conditions:
            tail = f"  ({c.witness})" if c.witness else ""
            lines.append(f"  [{c.status}] {c.cid}{tail}")
        return "\n".join(lines)
