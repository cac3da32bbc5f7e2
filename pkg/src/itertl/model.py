"""Trainable context-table autoregressive token model.

The model maps a fixed-length context window of token ids to a dense logit
row over the vocabulary. It is small enough to train exactly on a desk, has
closed-form gradients through its log-softmax, and is fully deterministic
given a seed — which is what the sample/score/train loop needs. The decoding,
scoring and training entry points only assume an autoregressive next-token
distribution, so a different model class can substitute behind them.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .losses import (
    LossBreakdown,
    RankingConfig,
    ResponseLogProbs,
    loss_gradients,
    total_loss,
)
from .records import atomic_write_bytes, atomic_write_text

Context = Tuple[int, ...]


@dataclass(frozen=True)
class Vocab:
    """Ordered token inventory with begin/end-of-sequence markers."""

    tokens: Tuple[str, ...]
    bos: str = "<s>"
    eos: str = "</s>"

    def __post_init__(self):
        if len(self.tokens) < 3:
            raise ValueError("vocab needs at least 3 tokens")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("vocab tokens must be distinct")
        for marker in (self.bos, self.eos):
            if self.tokens.count(marker) != 1:
                raise ValueError(f"marker {marker!r} must appear exactly once")
        object.__setattr__(self, "_ids", {t: i for i, t in enumerate(self.tokens)})

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def bos_id(self) -> int:
        return self._ids[self.bos]

    @property
    def eos_id(self) -> int:
        return self._ids[self.eos]

    def id_of(self, token: str) -> int:
        try:
            return self._ids[token]
        except KeyError:
            raise ValueError(f"token {token!r} not in vocab") from None

    def encode(self, text: str) -> List[int]:
        """Whitespace-tokenized encoding; unknown words are an error."""
        return [self.id_of(w) for w in text.split()]

    def decode(self, ids: Sequence[int]) -> str:
        """Space-joined rendering, dropping the sequence markers."""
        words = []
        for i in ids:
            tok = self.tokens[i]
            if tok == self.bos or tok == self.eos:
                continue
            words.append(tok)
        return " ".join(words)

    @classmethod
    def from_texts(cls, texts: Sequence[str], bos: str = "<s>", eos: str = "</s>") -> "Vocab":
        words = sorted({w for text in texts for w in text.split()})
        return cls(tokens=(bos, eos, *words), bos=bos, eos=eos)


@dataclass(frozen=True)
class DecodingParams:
    """temperature 0 means greedy decoding; top_p is the nucleus mass."""

    temperature: float = 0.5
    top_p: float = 0.95
    max_tokens: int = 64

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must lie in (0, 1]")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")


class ToyModel:
    """Dense per-context logit table; rows are zero until first trained."""

    def __init__(self, vocab: Vocab, order: int = 2, seed: int = 0):
        if order < 1:
            raise ValueError("order must be >= 1")
        self.vocab = vocab
        self.order = order
        self.seed = seed
        self.iteration = 0
        self._logits: Dict[Context, np.ndarray] = {}
        zero = np.zeros(vocab.size, dtype=np.float64)
        zero.setflags(write=False)
        self._zero_row = zero

    def context_of(self, ids: Sequence[int]) -> Context:
        """Last `order` ids, left-padded with BOS."""
        pad = self.order - len(ids)
        if pad > 0:
            return (self.vocab.bos_id,) * pad + tuple(ids)
        return tuple(ids[len(ids) - self.order:])

    def logits_for(self, context: Context) -> np.ndarray:
        """Read-only logit row; reading never materializes table entries."""
        return self._logits.get(context, self._zero_row)

    def trainable_row(self, context: Context) -> np.ndarray:
        row = self._logits.get(context)
        if row is None:
            row = np.zeros(self.vocab.size, dtype=np.float64)
            self._logits[context] = row
        return row

    @property
    def contexts(self) -> List[Context]:
        return list(self._logits.keys())


def _log_softmax(row: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore", over="ignore"):
        m = row.max()
        return row - (m + math.log(np.exp(row - m).sum()))


def next_distribution(model: ToyModel, context_ids: Sequence[int]) -> np.ndarray:
    """Next-token probabilities for a context (softmax of its logit row)."""
    row = model.logits_for(model.context_of(context_ids))
    return np.exp(_log_softmax(row))


def _nucleus(probs: np.ndarray, top_p: float) -> Tuple[np.ndarray, np.ndarray]:
    """Smallest probability-mass prefix reaching top_p, renormalized.

    Sort is descending by probability with ties broken by ascending token id,
    so truncation is deterministic.
    """
    order = np.lexsort((np.arange(len(probs)), -probs))
    cum = np.cumsum(probs[order])
    cut = int(np.searchsorted(cum, top_p - 1e-12)) + 1
    keep = order[:cut]
    kept = probs[keep]
    return keep, kept / kept.sum()


def sample(model: ToyModel, prompt_ids: Sequence[int], params: DecodingParams,
           rng: np.random.Generator) -> Tuple[List[int], List[float]]:
    """Autoregressive decoding from the model.

    temperature 0 walks the argmax chain (ties to the lowest token id); the
    returned log-prob is then the full distribution's, as a confidence
    diagnostic. Otherwise logits are divided by the temperature and sampling
    is restricted to the nucleus; returned log-probs are under the truncated,
    renormalized distribution actually sampled from. Generation stops at the
    end-of-sequence token (kept in the output) or at max_tokens.
    """
    ids = list(prompt_ids)
    out: List[int] = []
    logprobs: List[float] = []
    eos = model.vocab.eos_id
    for _ in range(params.max_tokens):
        row = model.logits_for(model.context_of(ids))
        if params.temperature == 0:
            lp_full = _log_softmax(row)
            tok = int(np.argmax(lp_full))
            lp = float(lp_full[tok])
        else:
            probs = np.exp(_log_softmax(row / params.temperature))
            keep, renorm = _nucleus(probs, params.top_p)
            pos = int(rng.choice(len(keep), p=renorm))
            tok = int(keep[pos])
            lp = float(math.log(renorm[pos]))
        ids.append(tok)
        out.append(tok)
        logprobs.append(lp)
        if tok == eos:
            break
    return out, logprobs


def score_sequence(model: ToyModel, prompt_ids: Sequence[int],
                   token_ids: Sequence[int]) -> ResponseLogProbs:
    """Per-token log-probabilities of a sequence under the full (untruncated,
    untempered) model distribution — the quantity the loss terms consume,
    independent of how the sequence was generated."""
    if len(token_ids) == 0:
        raise ValueError("cannot score an empty sequence")
    for t in token_ids:
        if not 0 <= t < model.vocab.size:
            raise ValueError(f"token id {t} outside vocab of size {model.vocab.size}")
    ids = list(prompt_ids)
    lps: List[float] = []
    for tok in token_ids:
        ctx = model.context_of(ids)
        lp = float(_log_softmax(model.logits_for(ctx))[tok])
        if not math.isfinite(lp):
            raise RuntimeError(f"non-finite log-probability for token {tok} "
                               f"under context {ctx}")
        lps.append(lp)
        ids.append(tok)
    return ResponseLogProbs(tuple(lps))


@dataclass(frozen=True)
class TrainingGroup:
    """One instruction's ranked group: prompt, K responses, scores, and the
    index of the reference response."""

    prompt: Tuple[int, ...]
    responses: Tuple[Tuple[int, ...], ...]
    scores: Tuple[float, ...]
    reference_index: int

    def __post_init__(self):
        if len(self.responses) != len(self.scores):
            raise ValueError("one score per response required")
        if len(self.responses) < 1:
            raise ValueError("empty group")
        if not 0 <= self.reference_index < len(self.responses):
            raise ValueError("reference_index out of range")
        for r in self.responses:
            if len(r) == 0:
                raise ValueError("empty response in group")


class AdamState:
    """First and second moment accumulators for touched logit rows."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m: Dict[Context, np.ndarray] = {}
        self.v: Dict[Context, np.ndarray] = {}


def batch_gradients(model: ToyModel, batch: Sequence[TrainingGroup],
                    cfg: RankingConfig) -> Tuple[List[LossBreakdown], Dict[Context, np.ndarray]]:
    """Loss breakdowns plus d(mean batch loss)/d(logit row) for every context
    the batch touches. Per-token gradients chain through the log-softmax:
    d logP(tok|ctx)/d logits[ctx] = onehot(tok) - softmax(logits[ctx])."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    breakdowns: List[LossBreakdown] = []
    grads: Dict[Context, np.ndarray] = {}
    scale = 1.0 / len(batch)
    vocab_size = model.vocab.size
    for group in batch:
        scored = [score_sequence(model, group.prompt, resp) for resp in group.responses]
        breakdowns.append(total_loss(scored, group.scores, group.reference_index, cfg))
        token_grads = loss_gradients(scored, group.scores, group.reference_index, cfg)
        for resp, tg in zip(group.responses, token_grads):
            ids = list(group.prompt)
            for tok, g in zip(resp, tg):
                if g != 0.0:
                    ctx = model.context_of(ids)
                    probs = np.exp(_log_softmax(model.logits_for(ctx)))
                    row_grad = grads.get(ctx)
                    if row_grad is None:
                        row_grad = np.zeros(vocab_size, dtype=np.float64)
                        grads[ctx] = row_grad
                    row_grad -= (g * scale) * probs
                    row_grad[tok] += g * scale
                ids.append(tok)
    return breakdowns, grads


def train_step(model: ToyModel, batch: Sequence[TrainingGroup], cfg: RankingConfig,
               step_size: float = 1e-2, opt: Optional[AdamState] = None) -> List[LossBreakdown]:
    """One adaptive-moment update on the rows the batch touches.

    The per-group cross-entropy is summed within each group and the batch is
    averaged; the update aborts (model untouched) on non-finite gradients.
    """
    if opt is None:
        opt = AdamState()
    breakdowns, grads = batch_gradients(model, batch, cfg)
    for ctx, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise RuntimeError(
                f"non-finite gradient for context {ctx}: "
                f"min={np.nanmin(g)}, max={np.nanmax(g)}"
            )
    opt.step += 1
    bc1 = 1.0 - opt.beta1 ** opt.step
    bc2 = 1.0 - opt.beta2 ** opt.step
    for ctx, g in grads.items():
        m = opt.m.get(ctx)
        if m is None:
            m = np.zeros_like(g)
            v = np.zeros_like(g)
            opt.m[ctx] = m
            opt.v[ctx] = v
        else:
            v = opt.v[ctx]
        m *= opt.beta1
        m += (1 - opt.beta1) * g
        v *= opt.beta2
        v += (1 - opt.beta2) * g * g
        row = model.trainable_row(ctx)
        row -= step_size * (m / bc1) / (np.sqrt(v / bc2) + opt.eps)
    return breakdowns


@dataclass(frozen=True)
class StopRule:
    """Stop when the sliding-window mean of epoch losses improves by less
    than rel_tol relative, or at max_epochs."""

    window: int = 3
    rel_tol: float = 1e-3
    max_epochs: int = 50

    def __post_init__(self):
        if self.window < 1 or self.max_epochs < 1:
            raise ValueError("window and max_epochs must be positive")


@dataclass(frozen=True)
class TraceRow:
    epoch: int
    step: int
    l_ce: float
    l_ranking: float
    total: float


@dataclass
class TrainingTrace:
    rows: List[TraceRow]
    epoch_means: List[float]

    @property
    def converged_loss(self) -> float:
        return self.epoch_means[-1]

    @property
    def epochs(self) -> int:
        return len(self.epoch_means)


def train_to_convergence(model: ToyModel, dataset: Sequence[TrainingGroup],
                         cfg: RankingConfig, stop: StopRule = StopRule(),
                         step_size: float = 1e-2, batch_size: int = 8) -> TrainingTrace:
    """Epochs over the dataset (fixed order, deterministic) until the stop
    rule fires; fresh optimizer state per call."""
    if len(dataset) == 0:
        raise ValueError("empty training dataset")
    opt = AdamState()
    rows: List[TraceRow] = []
    epoch_means: List[float] = []
    for epoch in range(1, stop.max_epochs + 1):
        totals: List[float] = []
        step = 0
        for start in range(0, len(dataset), batch_size):
            batch = dataset[start:start + batch_size]
            breakdowns = train_step(model, batch, cfg, step_size=step_size, opt=opt)
            for b in breakdowns:
                totals.append(b.total)
            mean_b = LossBreakdown(
                l_ce=sum(b.l_ce for b in breakdowns) / len(breakdowns),
                l_ranking=sum(b.l_ranking for b in breakdowns) / len(breakdowns),
                active_pairs=sum(b.active_pairs for b in breakdowns),
                total=sum(b.total for b in breakdowns) / len(breakdowns),
            )
            rows.append(TraceRow(epoch, step, mean_b.l_ce, mean_b.l_ranking, mean_b.total))
            step += 1
        epoch_means.append(sum(totals) / len(totals))
        if len(epoch_means) > stop.window:
            prev = sum(epoch_means[-stop.window - 1:-1]) / stop.window
            cur = sum(epoch_means[-stop.window:]) / stop.window
            if (prev - cur) / max(abs(prev), 1e-12) < stop.rel_tol:
                break
    return TrainingTrace(rows, epoch_means)


# -- checkpoint serialization -------------------------------------------------

_CHECKPOINT_FORMAT = "itertl-toy-checkpoint"


def _canonical_header(model: ToyModel, contexts: List[Context]) -> dict:
    return {
        "format": _CHECKPOINT_FORMAT,
        "version": 1,
        "vocab": list(model.vocab.tokens),
        "bos": model.vocab.bos,
        "eos": model.vocab.eos,
        "order": model.order,
        "seed": model.seed,
        "iteration": model.iteration,
        "contexts": [list(c) for c in contexts],
        "dtype": "<f8",
        "rows": len(contexts),
        "cols": model.vocab.size,
    }


def _logits_bytes(model: ToyModel, contexts: List[Context]) -> bytes:
    if not contexts:
        return b""
    mat = np.stack([model._logits[c] for c in contexts]).astype("<f8")
    return mat.tobytes()


def model_digest(model: ToyModel) -> str:
    """Content digest of the model parameters; save/load stable."""
    contexts = sorted(model._logits.keys())
    header = _canonical_header(model, contexts)
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob + _logits_bytes(model, contexts)).hexdigest()


def save_checkpoint(model: ToyModel, directory: Union[str, Path], stem: str) -> Path:
    """Write `<stem>.json` (header) plus `<stem>.bin` (flat little-endian
    float64 logit rows, in header context order); returns the header path."""
    directory = Path(directory)
    contexts = sorted(model._logits.keys())
    header = _canonical_header(model, contexts)
    header["logits_file"] = f"{stem}.bin"
    atomic_write_bytes(directory / f"{stem}.bin", _logits_bytes(model, contexts))
    header_path = directory / f"{stem}.json"
    atomic_write_text(header_path, json.dumps(header, sort_keys=True, indent=None))
    return header_path


def load_checkpoint(header_path: Union[str, Path]) -> ToyModel:
    header_path = Path(header_path)
    with open(header_path, "r", encoding="utf-8") as fh:
        header = json.load(fh)
    if header.get("format") != _CHECKPOINT_FORMAT:
        raise ValueError(f"{header_path}: not a toy-model checkpoint")
    vocab = Vocab(tokens=tuple(header["vocab"]), bos=header["bos"], eos=header["eos"])
    model = ToyModel(vocab, order=header["order"], seed=header["seed"])
    model.iteration = header["iteration"]
    rows = header["rows"]
    cols = header["cols"]
    raw = np.fromfile(header_path.parent / header["logits_file"], dtype="<f8")
    if raw.size != rows * cols:
        raise ValueError(
            f"{header_path}: logits file holds {raw.size} values, expected {rows * cols}"
        )
    mat = raw.reshape(rows, cols)
    for ctx, row in zip(header["contexts"], mat):
        model._logits[tuple(ctx)] = row.astype(np.float64).copy()
    return model
