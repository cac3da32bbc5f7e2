"""Corpus and scored-dataset records, JSONL persistence, atomic file writes."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Union

PathLike = Union[str, Path]

ORIGIN_SAMPLED = "sampled"
ORIGIN_REFERENCE = "reference"


class CorpusFormatError(ValueError):
    """A corpus or dataset file violates the JSONL schema."""

    def __init__(self, path: PathLike, line_number: int, message: str):
        super().__init__(f"{path}:{line_number}: {message}")
        self.path = str(path)
        self.line_number = line_number


@dataclass(frozen=True)
class InstructionRecord:
    """One training/eval unit: an instruction and its reference code."""

    id: str
    instruction: str
    reference: str


@dataclass(frozen=True)
class ScoredResponse:
    """One scored candidate (or the reference) within an iteration group."""

    record_id: str
    origin: str  # "sampled" | "reference"
    code: str
    score: float
    score_basis: str
    iteration: int
    model_digest: str
    token_logprobs: Optional[List[float]] = None

    def __post_init__(self):
        if self.origin not in (ORIGIN_SAMPLED, ORIGIN_REFERENCE):
            raise ValueError(f"unknown origin {self.origin!r}")

    def to_dict(self) -> dict:
        row = {
            "record_id": self.record_id,
            "origin": self.origin,
            "code": self.code,
            "score": self.score,
            "score_basis": self.score_basis,
            "iteration": self.iteration,
            "model_digest": self.model_digest,
        }
        if self.token_logprobs is not None:
            row["token_logprobs"] = list(self.token_logprobs)
        return row

    @classmethod
    def from_dict(cls, row: dict) -> "ScoredResponse":
        return cls(
            record_id=row["record_id"],
            origin=row["origin"],
            code=row["code"],
            score=float(row["score"]),
            score_basis=row["score_basis"],
            iteration=int(row["iteration"]),
            model_digest=row["model_digest"],
            token_logprobs=row.get("token_logprobs"),
        )


def atomic_write_text(path: PathLike, text: str) -> Path:
    """Write via a temp file in the same directory, then rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_bytes(path: PathLike, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def sha256_file(path: PathLike) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _parse_jsonl(path: PathLike, required_keys: tuple) -> Iterable[tuple[int, dict]]:
    with open(path, "r", encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(path, line_number, f"invalid JSON ({exc.msg})") from exc
            if not isinstance(row, dict):
                raise CorpusFormatError(path, line_number, "expected a JSON object")
            for key in required_keys:
                if key not in row:
                    raise CorpusFormatError(path, line_number, f"missing key {key!r}")
                if not isinstance(row[key], str):
                    raise CorpusFormatError(path, line_number, f"key {key!r} must be a string")
            yield line_number, row


def read_corpus(path: PathLike) -> List[InstructionRecord]:
    """Read an instruction corpus (JSONL: {"id", "instruction", "reference"}).

    Order-preserving; duplicate ids are rejected.
    """
    records: List[InstructionRecord] = []
    seen: set[str] = set()
    for line_number, row in _parse_jsonl(path, ("id", "instruction", "reference")):
        if row["id"] in seen:
            raise CorpusFormatError(path, line_number, f"duplicate id {row['id']!r}")
        seen.add(row["id"])
        records.append(InstructionRecord(row["id"], row["instruction"], row["reference"]))
    return records


def write_corpus(path: PathLike, records: Iterable[InstructionRecord]) -> Path:
    lines = [
        json.dumps(
            {"id": r.id, "instruction": r.instruction, "reference": r.reference},
            ensure_ascii=False, sort_keys=True,
        )
        for r in records
    ]
    return atomic_write_text(path, "".join(line + "\n" for line in lines))


def read_scored_dataset(path: PathLike) -> List[ScoredResponse]:
    rows: List[ScoredResponse] = []
    for line_number, row in _parse_jsonl(path, ("record_id", "origin", "code")):
        try:
            rows.append(ScoredResponse.from_dict(row))
        except (KeyError, TypeError, ValueError) as exc:
            raise CorpusFormatError(path, line_number, str(exc)) from exc
    return rows


def write_scored_dataset(path: PathLike, rows: Iterable[ScoredResponse]) -> Path:
    lines = [json.dumps(r.to_dict(), ensure_ascii=False, sort_keys=True) for r in rows]
    return atomic_write_text(path, "".join(line + "\n" for line in lines))
