"""Training objective: pairwise hinge ranking loss over length-normalized
sequence log-probabilities, plus cross-entropy on the reference, combined as
total = l_ce + lam * l_ranking. Log-probabilities enter raw — no softmax or
other renormalization is applied across the group, which keeps the pairwise
hinge gradients from saturating.

Exact subgradients with respect to every token log-probability are provided
for the trainer; the hinge subgradient at its kink is defined as 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple


@dataclass(frozen=True)
class ResponseLogProbs:
    """Natural-log token probabilities of one generated response, one entry
    per token, each conditioned on the instruction and the preceding tokens."""

    token_logprobs: Tuple[float, ...]

    def __post_init__(self):
        if len(self.token_logprobs) == 0:
            raise ValueError("empty generation: a response must have at least one token")
        for lp in self.token_logprobs:
            if not lp <= 0.0:
                raise ValueError(f"token log-probability must be <= 0, got {lp}")

    @property
    def length(self) -> int:
        return len(self.token_logprobs)


@dataclass(frozen=True)
class RankingConfig:
    """alpha: hinge margin; beta: minimum score gap for a pair to be ranked;
    lam: weight of the ranking term in the total loss."""

    alpha: float = 0.3
    beta: float = 0.2
    lam: float = 1.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.lam < 0:
            raise ValueError("alpha, beta and lam must be non-negative")


@dataclass(frozen=True)
class LossBreakdown:
    l_ce: float
    l_ranking: float
    active_pairs: int
    total: float


@dataclass(frozen=True)
class RankingResult:
    value: float
    # (k, tau) index pairs with z[k] < z[tau] - beta; `active` restricts to
    # pairs whose hinge is strictly positive (the ones carrying gradient).
    eligible_pairs: Tuple[Tuple[int, int], ...]
    active_pairs: Tuple[Tuple[int, int], ...]


def normalized_logprob(r: ResponseLogProbs) -> float:
    """Length-normalized conditional log-probability (the mean token log-prob)."""
    return sum(r.token_logprobs) / r.length


def ce_loss(reference: ResponseLogProbs) -> float:
    """Cross-entropy of the reference response: the negated sum of its token
    log-probabilities, deliberately not length-normalized."""
    return -sum(reference.token_logprobs)


def ranking_loss(p: Sequence[float], z: Sequence[float], cfg: RankingConfig) -> RankingResult:
    """sum over ordered pairs (k, tau) with z[k] < z[tau] - beta of
    max(p[k] - p[tau] + alpha, 0)."""
    if len(p) != len(z):
        raise ValueError(f"length mismatch: {len(p)} log-probs vs {len(z)} scores")
    eligible: List[Tuple[int, int]] = []
    active: List[Tuple[int, int]] = []
    value = 0.0
    for k in range(len(p)):
        for tau in range(len(p)):
            if z[k] < z[tau] - cfg.beta:
                eligible.append((k, tau))
                hinge = p[k] - p[tau] + cfg.alpha
                if hinge > 0.0:
                    active.append((k, tau))
                    value += hinge
    return RankingResult(value, tuple(eligible), tuple(active))


def total_loss(group: Sequence[ResponseLogProbs], z: Sequence[float],
               reference_index: int, cfg: RankingConfig) -> LossBreakdown:
    """Combined loss for one scored response group."""
    if not 0 <= reference_index < len(group):
        raise ValueError(f"reference_index {reference_index} out of range for group "
                         f"of {len(group)}")
    if len(group) != len(z):
        raise ValueError(f"length mismatch: {len(group)} responses vs {len(z)} scores")
    l_ce = ce_loss(group[reference_index])
    p = [normalized_logprob(r) for r in group]
    ranking = ranking_loss(p, z, cfg)
    return LossBreakdown(
        l_ce=l_ce,
        l_ranking=ranking.value,
        active_pairs=len(ranking.active_pairs),
        total=l_ce + cfg.lam * ranking.value,
    )


def loss_gradients(group: Sequence[ResponseLogProbs], z: Sequence[float],
                   reference_index: int, cfg: RankingConfig) -> List[List[float]]:
    """d(total)/d(token log-prob) for every token of every group member.

    The reference's tokens each receive -1 from the cross-entropy term; each
    active ranking pair (k, tau) adds +lam/len(k) to every token of k and
    -lam/len(tau) to every token of tau.
    """
    if not 0 <= reference_index < len(group):
        raise ValueError(f"reference_index {reference_index} out of range for group "
                         f"of {len(group)}")
    if len(group) != len(z):
        raise ValueError(f"length mismatch: {len(group)} responses vs {len(z)} scores")
    grads = [[0.0] * r.length for r in group]
    for j in range(group[reference_index].length):
        grads[reference_index][j] -= 1.0
    p = [normalized_logprob(r) for r in group]
    ranking = ranking_loss(p, z, cfg)
    for k, tau in ranking.active_pairs:
        gk = cfg.lam / group[k].length
        gtau = cfg.lam / group[tau].length
        for j in range(group[k].length):
            grads[k][j] += gk
        for j in range(group[tau].length):
            grads[tau][j] -= gtau
    return grads
