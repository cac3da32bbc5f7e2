"""Quality scoring of generated code and structural corpus filtering.

A response scores 1 when it passes the syntax check, otherwise its token-level
similarity to the reference in [0, 1] — except that responses declaring more
than one module are pinned at a negative penalty so they rank below every
normal response. Reference code with multiple modules (or failing the syntax
check) is discarded from the corpus outright.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, List, Optional, Sequence, Tuple

from .metrics import rouge_l, verilog_token_units
from .records import InstructionRecord
from .verilog.analyzer import StructureReport, analyze_structure


class ScoreBasis(str, Enum):
    SYNTAX_PASS = "syntax_pass"
    ROUGE_FALLBACK = "rouge_fallback"
    MULTI_MODULE_PENALTY = "multi_module_penalty"


@dataclass(frozen=True)
class QualityScore:
    value: float
    basis: ScoreBasis

    def __post_init__(self):
        if self.basis is ScoreBasis.SYNTAX_PASS and self.value != 1.0:
            raise ValueError("syntax_pass scores must be exactly 1")
        if self.basis is ScoreBasis.MULTI_MODULE_PENALTY and self.value >= 0.0:
            raise ValueError("multi_module_penalty scores must be negative")
        if self.basis is ScoreBasis.ROUGE_FALLBACK and not 0.0 <= self.value <= 1.0:
            raise ValueError("rouge_fallback scores must lie in [0, 1]")


@dataclass(frozen=True)
class FilterPolicy:
    """Structural filter knobs.

    strict_self_contained additionally penalizes single-module responses that
    instantiate submodules missing from the same text; penalty_value is the
    pinned score for penalized responses (must stay below 0 so penalized
    responses rank under every normal one).
    """

    strict_self_contained: bool = False
    penalty_value: float = -1.0

    def __post_init__(self):
        if not self.penalty_value < 0:
            raise ValueError("penalty_value must be negative")

    def penalizes(self, report: StructureReport) -> bool:
        if report.module_count >= 2:
            return True
        return self.strict_self_contained and bool(report.undefined_instantiations)


REASON_KEPT = "kept"
REASON_MULTI_MODULE = "multi_module"
REASON_REFERENCE_SYNTAX = "reference_syntax"


@dataclass(frozen=True)
class FilterDecision:
    keep: bool
    reason: str


@dataclass(frozen=True)
class FilterReport:
    kept: int
    dropped_multi_module: int
    dropped_reference_syntax: int

    def to_dict(self) -> dict:
        return {
            "kept": self.kept,
            "dropped_multi_module": self.dropped_multi_module,
            "dropped_reference_syntax": self.dropped_reference_syntax,
        }


def filter_reference(record: InstructionRecord) -> FilterDecision:
    """Keep/drop decision for reference code.

    Drops references declaring two or more modules, and references that fail
    the syntax check themselves: a reference treated as ground truth for
    similarity scoring must be well-formed. Multi-module is checked first.
    """
    report = analyze_structure(record.reference)
    if report.module_count >= 2:
        return FilterDecision(False, REASON_MULTI_MODULE)
    if not report.syntax_ok:
        return FilterDecision(False, REASON_REFERENCE_SYNTAX)
    return FilterDecision(True, REASON_KEPT)


def filter_corpus(records: Iterable[InstructionRecord]) -> Tuple[List[InstructionRecord], FilterReport]:
    """Apply filter_reference across a corpus; idempotent on kept output."""
    kept: List[InstructionRecord] = []
    dropped_multi = 0
    dropped_syntax = 0
    for record in records:
        decision = filter_reference(record)
        if decision.keep:
            kept.append(record)
        elif decision.reason == REASON_MULTI_MODULE:
            dropped_multi += 1
        else:
            dropped_syntax += 1
    return kept, FilterReport(len(kept), dropped_multi, dropped_syntax)


def _require_usable_reference(reference: str, policy: Optional[FilterPolicy]):
    if policy is not None:
        report = analyze_structure(reference)
        if report.module_count >= 2 or not report.syntax_ok:
            raise ValueError(
                "reference fails its own filter (multi-module or broken); "
                "run filter_reference over the corpus first"
            )
    elif not verilog_token_units(reference):
        raise ValueError("reference has no comparable tokens")


def score_response(candidate: str, reference: str,
                   policy: Optional[FilterPolicy] = FilterPolicy()) -> QualityScore:
    """Quality score for one candidate against a filtered reference.

    With a policy: multi-module (or, under strict policy, non-self-contained)
    candidates pin at policy.penalty_value; otherwise syntactically correct
    candidates score 1 and broken ones fall back to token-level similarity
    with the reference. policy=None disables the structural override entirely
    (scores are then 1 or the similarity fallback).
    """
    _require_usable_reference(reference, policy)
    report = analyze_structure(candidate)
    if policy is not None and policy.penalizes(report):
        return QualityScore(policy.penalty_value, ScoreBasis.MULTI_MODULE_PENALTY)
    if report.syntax_ok:
        return QualityScore(1.0, ScoreBasis.SYNTAX_PASS)
    value = rouge_l(verilog_token_units(candidate), verilog_token_units(reference))
    return QualityScore(value, ScoreBasis.ROUGE_FALLBACK)


def score_group(candidates: Sequence[str], reference: str,
                policy: Optional[FilterPolicy] = FilterPolicy()) -> List[QualityScore]:
    """Score the sampled candidates plus the reference as the final group
    member; returns len(candidates) + 1 scores, reference last."""
    _require_usable_reference(reference, policy)
    scores = [score_response(c, reference, policy) for c in candidates]
    scores.append(score_response(reference, reference, policy))
    return scores
