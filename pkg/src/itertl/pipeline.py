"""Iteration orchestrator: sample -> filter/score -> train -> resample.

Each iteration draws K-1 fresh responses per instruction from the latest
model, scores them together with the once-generated reference, persists the
scored group dataset, then either trains the in-process toy model to
convergence or exports the dataset and waits for an external training stack
to register a new checkpoint. Every artifact write is atomic and the run
manifest only ever describes completed iterations, so a crash mid-iteration
leaves the previous state intact.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

from .backends import GeneratedSample
from .judges import JudgeVerdict
from .losses import RankingConfig
from .metrics import PassAtKInput, aggregate_pass_at_k
from .model import DecodingParams, StopRule, TrainingGroup, save_checkpoint
from .records import (
    InstructionRecord,
    ORIGIN_REFERENCE,
    ORIGIN_SAMPLED,
    ScoredResponse,
    atomic_write_text,
    sha256_file,
    write_corpus,
    write_scored_dataset,
)
from .scoring import FilterPolicy, QualityScore, filter_corpus, score_response

FaultHook = Optional[Callable[[str, int], None]]

_DEFAULT_EVAL_TEMPS = (0.0, 0.2, 0.5, 0.8)


def default_eval_decoding(top_p: float = 0.95, max_tokens: int = 48) -> Tuple[DecodingParams, ...]:
    return tuple(DecodingParams(t, top_p, max_tokens) for t in _DEFAULT_EVAL_TEMPS)


@dataclass(frozen=True)
class IterationConfig:
    """Knobs of the iterative loop; defaults are the production settings
    (K=4 responses per group, 3 iterations, margin 0.3, score gap 0.2,
    sampling at temperature 0.5 / top-p 0.95)."""

    k: int = 4
    iterations: int = 3
    ranking: RankingConfig = field(default_factory=RankingConfig)
    train_decoding: DecodingParams = field(
        default_factory=lambda: DecodingParams(0.5, 0.95, 48))
    eval_decoding: Tuple[DecodingParams, ...] = field(default_factory=default_eval_decoding)
    filter: Optional[FilterPolicy] = field(default_factory=FilterPolicy)
    seed: int = 0
    workers: Optional[int] = None
    epoch_cap: int = 50
    step_size: float = 1e-2
    batch_size: int = 8
    order: int = 2
    early_stop: float = 1e-3  # relative improvement; math.inf disables
    accumulate_samples: bool = False
    eval_samples: int = 10
    k_list: Tuple[int, ...] = (1, 5, 10)

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("k must be >= 2 (at least one sample plus the reference)")
        if not 1 <= self.iterations <= 7:
            raise ValueError("iterations must lie in 1..7")
        if self.eval_samples < 1:
            raise ValueError("eval_samples must be positive")
        for kk in self.k_list:
            if kk != 1 and kk > self.eval_samples:
                raise ValueError(f"pass@{kk} needs eval_samples >= {kk}")
        if not self.early_stop > 0:
            raise ValueError("early_stop must be positive (math.inf disables)")

    def stop_rule(self) -> StopRule:
        return StopRule(max_epochs=self.epoch_cap)


@dataclass(frozen=True)
class IterationState:
    """One link of the t = 0..T chain."""

    t: int
    model_checkpoint: Optional[str]
    dataset_path: Optional[str]
    converged_loss: Optional[float]
    loss_trace_path: Optional[str]
    started: Optional[datetime] = None
    finished: Optional[datetime] = None


def initial_state(checkpoint: Optional[str] = None) -> IterationState:
    return IterationState(t=0, model_checkpoint=checkpoint, dataset_path=None,
                          converged_loss=None, loss_trace_path=None)


class _RunPaths:
    def __init__(self, run_dir: Union[str, Path]):
        self.run_dir = Path(run_dir)

    def corpus(self) -> Path:
        return self.run_dir / "corpus_filtered.jsonl"

    def dataset(self, t: int) -> Path:
        return self.run_dir / "datasets" / f"scored_{t}.jsonl"

    def checkpoint_dir(self) -> Path:
        return self.run_dir / "checkpoints"

    def checkpoint_stem(self, t: int) -> str:
        return f"checkpoint_{t}"

    def checkpoint(self, t: int) -> Path:
        return self.checkpoint_dir() / f"checkpoint_{t}.json"

    def trace(self, t: int) -> Path:
        return self.run_dir / "traces" / f"trace_{t}.csv"

    def manifest(self) -> Path:
        return self.run_dir / "manifest.json"

    def curves(self) -> Path:
        return self.run_dir / "curves.csv"

    def rel(self, path: Path) -> str:
        return str(path.relative_to(self.run_dir))


def _utcnow() -> datetime:
    return datetime.now(timezone.utc)


def _sample_records(backend, corpus: Sequence[InstructionRecord], cfg: IterationConfig,
                    t: int) -> List[List[GeneratedSample]]:
    """K-1 samples per record, order-preserving; per-record seeds derive from
    (seed, iteration, record index) so results are independent of worker
    count and scheduling."""
    workers = cfg.workers or os.cpu_count() or 1

    def one(idx_record):
        idx, record = idx_record
        return backend.generate(record.instruction, cfg.train_decoding, cfg.k - 1,
                                seed=(cfg.seed, t, idx))

    if workers == 1 or len(corpus) == 1:
        return [one(pair) for pair in enumerate(corpus)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, enumerate(corpus)))


def run_iteration(state: IterationState, corpus: Sequence[InstructionRecord],
                  cfg: IterationConfig, backend, run_dir: Union[str, Path],
                  reference_scores: Optional[Dict[str, QualityScore]] = None,
                  fault_hook: FaultHook = None) -> IterationState:
    """Produce iteration state t+1 from state t.

    Samples from the current model, scores each group (reference appended as
    the K-th member, its score cached across iterations), persists the scored
    dataset, then trains (toy mode) or waits for the external trainer to
    register a new checkpoint (remote mode). Backend errors propagate after
    the backend's own retries; state t is left intact.
    """
    if len(corpus) == 0:
        raise ValueError("empty corpus: nothing to sample")
    t = state.t + 1
    started = _utcnow()
    paths = _RunPaths(run_dir)
    if reference_scores is None:
        reference_scores = {}

    sampling_digest = backend.checkpoint_digest()
    generated = _sample_records(backend, corpus, cfg, t)

    rows: List[ScoredResponse] = []
    groups: List[TrainingGroup] = []
    for record, samples in zip(corpus, generated):
        ref_score = reference_scores.get(record.id)
        if ref_score is None:
            ref_score = score_response(record.reference, record.reference, cfg.filter)
            reference_scores[record.id] = ref_score
        scores = [score_response(s.code, record.reference, cfg.filter) for s in samples]
        for s, q in zip(samples, scores):
            rows.append(ScoredResponse(
                record_id=record.id, origin=ORIGIN_SAMPLED, code=s.code,
                score=q.value, score_basis=q.basis.value, iteration=t,
                model_digest=sampling_digest, token_logprobs=s.token_logprobs,
            ))
        ref_logprobs = backend.score(record.instruction, record.reference)
        rows.append(ScoredResponse(
            record_id=record.id, origin=ORIGIN_REFERENCE, code=record.reference,
            score=ref_score.value, score_basis=ref_score.basis.value, iteration=t,
            model_digest=sampling_digest, token_logprobs=ref_logprobs,
        ))
        if backend.trainable:
            responses = tuple(backend.encode_response(s.code) for s in samples)
            responses += (backend.encode_response(record.reference),)
            groups.append(TrainingGroup(
                prompt=tuple(backend.model.vocab.encode(record.instruction)),
                responses=responses,
                scores=tuple(q.value for q in scores) + (ref_score.value,),
                reference_index=len(responses) - 1,
            ))

    dataset_path = paths.dataset(t)
    write_scored_dataset(dataset_path, rows)
    if fault_hook is not None:
        fault_hook("after_scored", t)

    if backend.trainable:
        if cfg.accumulate_samples and state.dataset_path is not None:
            groups = _accumulated_groups(backend, corpus, cfg, paths, t) + groups
        trace = backend.train(groups, cfg.ranking, cfg.stop_rule(),
                              cfg.step_size, cfg.batch_size)
        backend.model.iteration = t
        checkpoint_path = save_checkpoint(backend.model, paths.checkpoint_dir(),
                                          paths.checkpoint_stem(t))
        trace_path = paths.trace(t)
        _write_trace_csv(trace_path, trace)
        converged: Optional[float] = trace.converged_loss
    else:
        backend.wait_for_new_checkpoint(sampling_digest)
        checkpoint_path = None
        trace_path = None
        converged = None

    if fault_hook is not None:
        fault_hook("after_training", t)
    return IterationState(
        t=t,
        model_checkpoint=str(checkpoint_path) if checkpoint_path else None,
        dataset_path=str(dataset_path),
        converged_loss=converged,
        loss_trace_path=str(trace_path) if trace_path else None,
        started=started,
        finished=_utcnow(),
    )


def _accumulated_groups(backend, corpus, cfg, paths: _RunPaths, t: int) -> List[TrainingGroup]:
    """Rebuild training groups from earlier iterations' persisted datasets
    (experiment flag; the default trains on fresh samples only)."""
    from .records import read_scored_dataset

    by_instruction = {r.id: r.instruction for r in corpus}
    groups: List[TrainingGroup] = []
    for past_t in range(1, t):
        rows = read_scored_dataset(paths.dataset(past_t))
        per_record: Dict[str, List[ScoredResponse]] = {}
        for row in rows:
            per_record.setdefault(row.record_id, []).append(row)
        for record_id, group_rows in per_record.items():
            instruction = by_instruction.get(record_id)
            if instruction is None:
                continue
            ref_positions = [i for i, r in enumerate(group_rows)
                             if r.origin == ORIGIN_REFERENCE]
            if len(ref_positions) != 1:
                continue
            groups.append(TrainingGroup(
                prompt=tuple(backend.model.vocab.encode(instruction)),
                responses=tuple(backend.encode_response(r.code) for r in group_rows),
                scores=tuple(r.score for r in group_rows),
                reference_index=ref_positions[0],
            ))
    return groups


def _write_trace_csv(path: Path, trace) -> None:
    lines = ["epoch,step,l_ce,l_ranking,total"]
    for row in trace.rows:
        lines.append(f"{row.epoch},{row.step},{row.l_ce!r},{row.l_ranking!r},{row.total!r}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def _file_entry(paths: _RunPaths, path: Union[str, Path]) -> dict:
    path = Path(path)
    return {"path": paths.rel(path), "sha256": sha256_file(path)}


def _config_echo(cfg: IterationConfig) -> dict:
    return {
        "k": cfg.k,
        "iterations": cfg.iterations,
        "ranking": {"alpha": cfg.ranking.alpha, "beta": cfg.ranking.beta,
                    "lambda": cfg.ranking.lam},
        "train_decoding": {"temperature": cfg.train_decoding.temperature,
                           "top_p": cfg.train_decoding.top_p,
                           "max_tokens": cfg.train_decoding.max_tokens},
        "eval_decoding": [{"temperature": d.temperature, "top_p": d.top_p,
                           "max_tokens": d.max_tokens} for d in cfg.eval_decoding],
        "filter": None if cfg.filter is None else {
            "strict_self_contained": cfg.filter.strict_self_contained,
            "penalty_value": cfg.filter.penalty_value,
        },
        "seed": cfg.seed,
        "epoch_cap": cfg.epoch_cap,
        "step_size": cfg.step_size,
        "batch_size": cfg.batch_size,
        "order": cfg.order,
        "early_stop": "inf" if math.isinf(cfg.early_stop) else cfg.early_stop,
        "accumulate_samples": cfg.accumulate_samples,
        "eval_samples": cfg.eval_samples,
        "k_list": list(cfg.k_list),
    }


@dataclass
class RunResult:
    manifest_path: Path
    states: List[IterationState]
    stopped_early: bool


def run_loop(corpus: Sequence[InstructionRecord], cfg: IterationConfig, backend,
             run_dir: Union[str, Path], fault_hook: FaultHook = None) -> RunResult:
    """Chain up to cfg.iterations iterations, stopping early when the relative
    improvement of consecutive converged losses falls below cfg.early_stop
    (math.inf disables early stopping). The manifest on disk always describes
    exactly the completed iterations."""
    if len(corpus) == 0:
        raise ValueError("empty corpus")
    paths = _RunPaths(run_dir)
    paths.run_dir.mkdir(parents=True, exist_ok=True)

    filter_report = None
    working = list(corpus)
    if cfg.filter is not None:
        working, report = filter_corpus(working)
        filter_report = report.to_dict()
        if not working:
            raise ValueError("every corpus record was dropped by the reference filter")
    corpus_path = paths.corpus()
    write_corpus(corpus_path, working)

    manifest: dict = {
        "format": "itertl-run-manifest",
        "version": 1,
        "mode": "toy" if backend.trainable else "remote",
        "config": _config_echo(cfg),
        "filter_report": filter_report,
        "corpus": {**_file_entry(paths, corpus_path), "records": len(working)},
        "initial_checkpoint": None,
        "iterations": [],
        "curves": None,
        "completed_iterations": 0,
    }

    state = initial_state()
    if backend.trainable:
        ckpt0 = save_checkpoint(backend.model, paths.checkpoint_dir(),
                                paths.checkpoint_stem(0))
        manifest["initial_checkpoint"] = {
            **_file_entry(paths, ckpt0),
            "model_digest": backend.checkpoint_digest(),
        }
        state = replace(state, model_checkpoint=str(ckpt0))
    _write_manifest(paths, manifest)

    states = [state]
    reference_scores: Dict[str, QualityScore] = {}
    stopped_early = False
    for _ in range(cfg.iterations):
        state = run_iteration(state, working, cfg, backend, paths.run_dir,
                              reference_scores=reference_scores, fault_hook=fault_hook)
        states.append(state)
        entry = {
            "t": state.t,
            "scored_dataset": _file_entry(paths, state.dataset_path),
            "sampling_model_digest": _sampling_digest_of(state.dataset_path),
            "converged_loss": state.converged_loss,
            "checkpoint": None,
            "loss_trace": None,
        }
        if state.model_checkpoint:
            header = Path(state.model_checkpoint)
            logits = header.with_suffix(".bin")
            entry["checkpoint"] = {
                "path": paths.rel(header),
                "sha256": sha256_file(header),
                "logits_path": paths.rel(logits),
                "logits_sha256": sha256_file(logits),
                "model_digest": backend.checkpoint_digest(),
            }
        if state.loss_trace_path:
            entry["loss_trace"] = _file_entry(paths, state.loss_trace_path)
        manifest["iterations"].append(entry)
        manifest["completed_iterations"] = state.t
        _write_manifest(paths, manifest)

        if math.isfinite(cfg.early_stop) and len(states) >= 3:
            prev, cur = states[-2].converged_loss, states[-1].converged_loss
            if prev is not None and cur is not None:
                rel = (prev - cur) / max(abs(prev), 1e-12)
                if rel < cfg.early_stop:
                    stopped_early = True
                    break

    if backend.trainable and manifest["iterations"]:
        export_curves(paths.manifest())
        manifest["curves"] = _file_entry(paths, paths.curves())
        _write_manifest(paths, manifest)

    return RunResult(paths.manifest(), states, stopped_early)


def _sampling_digest_of(dataset_path: Optional[str]) -> Optional[str]:
    if dataset_path is None:
        return None
    from .records import read_scored_dataset

    rows = read_scored_dataset(dataset_path)
    return rows[0].model_digest if rows else None


def _write_manifest(paths: _RunPaths, manifest: dict) -> None:
    atomic_write_text(paths.manifest(),
                      json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_manifest(manifest_path: Union[str, Path]) -> dict:
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != "itertl-run-manifest":
        raise ValueError(f"{manifest_path}: not a run manifest")
    return manifest


def export_curves(manifest_path: Union[str, Path], smoothing: float = 0.9) -> List[Path]:
    """Merge per-iteration loss traces into one long-format CSV with an
    exponentially smoothed total column (smoothing factor = weight of the
    previous smoothed value; the smoothed series restarts per iteration)."""
    manifest_path = Path(manifest_path)
    manifest = load_manifest(manifest_path)
    run_dir = manifest_path.parent
    out_rows: List[str] = ["iteration,epoch,step,l_ce,l_ranking,total,total_smoothed"]
    for entry in manifest["iterations"]:
        trace = entry.get("loss_trace")
        if trace is None or not (run_dir / trace["path"]).exists():
            raise FileNotFoundError(
                f"missing loss trace for iteration {entry['t']}")
        smoothed: Optional[float] = None
        with open(run_dir / trace["path"], "r", encoding="utf-8", newline="") as fh:
            for row in csv.DictReader(fh):
                total = float(row["total"])
                smoothed = total if smoothed is None else (
                    smoothing * smoothed + (1 - smoothing) * total)
                out_rows.append(
                    f"{entry['t']},{row['epoch']},{row['step']},"
                    f"{row['l_ce']},{row['l_ranking']},{row['total']},{smoothed!r}"
                )
    curves_path = run_dir / "curves.csv"
    atomic_write_text(curves_path, "\n".join(out_rows) + "\n")
    return [curves_path]


def exponential_smoothing(values: Sequence[float], factor: float = 0.9) -> List[float]:
    """s[0] = x[0]; s[i] = factor*s[i-1] + (1-factor)*x[i]."""
    out: List[float] = []
    for x in values:
        out.append(x if not out else factor * out[-1] + (1 - factor) * x)
    return out


# -- evaluation ---------------------------------------------------------------


@dataclass(frozen=True)
class KResult:
    best: float
    by_temperature: Dict[str, float]


@dataclass
class EvalReport:
    problems: int
    samples_per_problem: int
    pass_at_1: float
    by_k: Dict[int, KResult]
    flagged: int
    verdicts: List[dict]

    def to_dict(self) -> dict:
        out = {
            "problems": self.problems,
            "samples_per_problem": self.samples_per_problem,
            "flagged": self.flagged,
            "pass@1": self.pass_at_1,
        }
        for k, res in sorted(self.by_k.items()):
            out[f"pass@{k}"] = {"best": res.best, "by_temperature": dict(res.by_temperature)}
        return out


def evaluate(backend, eval_corpus: Sequence[InstructionRecord], judge,
             cfg: IterationConfig, out_dir: Optional[Union[str, Path]] = None) -> EvalReport:
    """pass@1 from the single greedy decode per problem; higher k from
    cfg.eval_samples draws per problem at each eval temperature, reporting
    the best aggregate across temperatures. A judge execution failure counts
    the sample as failed and flags it in the report."""
    if len(eval_corpus) == 0:
        raise ValueError("empty evaluation corpus")
    verdicts: List[dict] = []
    flagged = 0

    def judged(code: str, record_id: str, temperature: float, index: int) -> JudgeVerdict:
        nonlocal flagged
        verdict = judge.judge(code, record_id)
        if verdict.flagged:
            flagged += 1
        verdicts.append({
            "record_id": record_id,
            "temperature": temperature,
            "sample_index": index,
            "passed": verdict.passed,
            "flagged": verdict.flagged,
            "detail": verdict.detail,
        })
        return verdict

    greedy = DecodingParams(0.0, cfg.train_decoding.top_p, cfg.train_decoding.max_tokens)
    greedy_passes = 0
    for idx, record in enumerate(eval_corpus):
        code = backend.generate(record.instruction, greedy, 1,
                                seed=(cfg.seed, 0, idx))[0].code
        if judged(code, record.id, 0.0, 0).passed:
            greedy_passes += 1
    pass1 = greedy_passes / len(eval_corpus)

    by_k: Dict[int, KResult] = {}
    wanted = [k for k in cfg.k_list if k != 1]
    if wanted:
        n = cfg.eval_samples
        counts_by_temp: Dict[float, List[int]] = {}
        for temp_idx, params in enumerate(cfg.eval_decoding):
            counts: List[int] = []
            for idx, record in enumerate(eval_corpus):
                samples = backend.generate(record.instruction, params, n,
                                           seed=(cfg.seed, 1 + temp_idx, idx))
                c = sum(
                    judged(s.code, record.id, params.temperature, i).passed
                    for i, s in enumerate(samples)
                )
                counts.append(c)
            counts_by_temp[params.temperature] = counts
        for k in wanted:
            by_temp = {
                f"{temp:g}": aggregate_pass_at_k(PassAtKInput(n, c, k) for c in counts)
                for temp, counts in counts_by_temp.items()
            }
            by_k[k] = KResult(best=max(by_temp.values()), by_temperature=by_temp)

    report = EvalReport(
        problems=len(eval_corpus),
        samples_per_problem=cfg.eval_samples,
        pass_at_1=pass1,
        by_k=by_k,
        flagged=flagged,
        verdicts=verdicts,
    )
    if out_dir is not None:
        out_dir = Path(out_dir)
        atomic_write_text(out_dir / "eval_report.json",
                          json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
        atomic_write_text(out_dir / "eval_verdicts.jsonl",
                          "".join(json.dumps(v, sort_keys=True) + "\n" for v in verdicts))
    return report
