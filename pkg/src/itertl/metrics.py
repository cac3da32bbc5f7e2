"""Sequence-similarity and code-sampling evaluation metrics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence

from .verilog.lexer import TokenKind, tokenize


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    """Length of the longest common subsequence of two token sequences.

    O(|a|*|b|) time, O(min(|a|,|b|)) memory.
    """
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            if x == y:
                cur.append(prev[j - 1] + 1)
            else:
                cur.append(max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Sequence[str], reference: Sequence[str]) -> float:
    """LCS-based F1 similarity in [0, 1].

    P = LCS/|candidate|, R = LCS/|reference|, score = 2PR/(P+R); zero when
    the sequences share nothing or the candidate is empty. An empty reference
    is an unusable comparison target and raises ValueError.
    """
    if len(reference) == 0:
        raise ValueError("rouge_l: reference sequence is empty")
    if len(candidate) == 0:
        return 0.0
    lcs = lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0
    p = lcs / len(candidate)
    r = lcs / len(reference)
    return 2 * p * r / (p + r)


def verilog_token_units(source: str) -> List[str]:
    """Comparison units for similarity scoring: lexer tokens with whitespace
    and comments dropped, so formatting differences do not affect scores."""
    return [
        t.text for t in tokenize(source)
        if t.kind is not TokenKind.WHITESPACE and t.kind is not TokenKind.COMMENT
    ]


@dataclass(frozen=True)
class PassAtKInput:
    """Per-problem counts: n candidates generated, c passing, threshold k."""

    n: int
    c: int
    k: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"pass@k: n must be positive, got {self.n}")
        if not 0 <= self.c <= self.n:
            raise ValueError(f"pass@k: need 0 <= c <= n, got c={self.c}, n={self.n}")
        if not 1 <= self.k <= self.n:
            raise ValueError(f"pass@k: need 1 <= k <= n, got k={self.k}, n={self.n}")


def pass_at_k(n: int, c: int, k: int) -> float:
    """Unbiased estimate of P(at least one of k drawn candidates passes),
    given c of n generated candidates pass.

    Computed as 1 - prod_{i<k} (n-c-i)/(n-i), the stable product form of
    1 - C(n-c,k)/C(n,k); exact 1.0 when n-c < k.
    """
    PassAtKInput(n, c, k)
    if n - c < k:
        return 1.0
    prod = 1.0
    for i in range(k):
        prod *= (n - c - i) / (n - i)
    return 1.0 - prod


def aggregate_pass_at_k(per_problem: Iterable[PassAtKInput], k: Optional[int] = None) -> float:
    """Arithmetic mean of pass@k over problems; `k` overrides each item's k."""
    items = list(per_problem)
    if not items:
        raise ValueError("aggregate_pass_at_k: empty problem list")
    vals = [pass_at_k(p.n, p.c, p.k if k is None else k) for p in items]
    return sum(vals) / len(vals)
