"""Brute-force linearizability checking for small put/get histories.

Linearizability is compositional, so every path is checked on its own
against a single-register model. A put that failed (timed out, no quorum)
may still have taken effect at any point after it was invoked, or never;
failed gets carry no information and are dropped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional


@dataclass(frozen=True)
class Op:
    client: str
    kind: str  # "put" | "get"
    path: str
    value: Optional[bytes]
    invoke: float
    response: float
    ok: bool = True


def check_history(history, initial=None) -> bool:
    by_path: dict = {}
    for op in history:
        if op.kind == "get" and not op.ok:
            continue
        by_path.setdefault(op.path, []).append(op)
    return all(linearize(ops, initial) is not None for ops in by_path.values())


def linearize(ops, initial=None):
    """Return one valid order of ``ops`` on a single register, or None."""
    ops = list(ops)
    ends = [op.response if op.ok else math.inf for op in ops]
    required = frozenset(i for i, op in enumerate(ops) if op.ok)

    @lru_cache(maxsize=None)
    def search(remaining: frozenset, value):
        if not (remaining & required):
            return ()
        horizon = min(ends[i] for i in remaining)
        for i in sorted(remaining, key=lambda i: (ops[i].invoke, i)):
            op = ops[i]
            if op.invoke > horizon:
                continue
            if op.kind == "get":
                if op.value != value:
                    continue
                nxt = value
            else:
                nxt = op.value
            rest = search(remaining - {i}, nxt)
            if rest is not None:
                return (i, *rest)
        return None

    order = search(frozenset(range(len(ops))), initial)
    return None if order is None else [ops[i] for i in order]
