"""Pass/fail judges for generated code.

The built-in judge is structural: syntax check plus single, self-contained
module. External judges are arbitrary commands invoked per sample with the
candidate file path and the record id appended; exit code 0 means pass, so a
real Verilog simulator harness can be plugged in unchanged.
"""

from __future__ import annotations

import shlex
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

from .verilog.analyzer import analyze_structure


@dataclass(frozen=True)
class JudgeVerdict:
    record_id: str
    passed: bool
    flagged: bool = False  # the judge itself failed; sample counted as fail
    detail: str = ""


class BuiltinJudge:
    """Accepts exactly the code shape the pipeline trains toward: one module,
    syntactically well-formed, instantiating nothing undefined."""

    name = "builtin"

    def judge(self, code: str, record_id: str) -> JudgeVerdict:
        report = analyze_structure(code)
        if not report.syntax_ok:
            return JudgeVerdict(record_id, False, detail="syntax")
        if report.module_count != 1:
            return JudgeVerdict(record_id, False, detail=f"module_count={report.module_count}")
        if report.undefined_instantiations:
            missing = ",".join(report.undefined_instantiations)
            return JudgeVerdict(record_id, False, detail=f"undefined={missing}")
        return JudgeVerdict(record_id, True)


class CommandJudge:
    """Runs `<cmd...> <candidate-file> <record-id>` per sample."""

    def __init__(self, command: str, timeout: float = 60.0):
        self.argv = shlex.split(command)
        if not self.argv:
            raise ValueError("empty judge command")
        self.timeout = timeout
        self.name = self.argv[0]

    def judge(self, code: str, record_id: str) -> JudgeVerdict:
        with tempfile.TemporaryDirectory(prefix="itertl-judge-") as tmp:
            candidate = Path(tmp) / "candidate.v"
            candidate.write_text(code, encoding="utf-8")
            try:
                proc = subprocess.run(
                    [*self.argv, str(candidate), record_id],
                    capture_output=True, timeout=self.timeout,
                )
            except (OSError, subprocess.TimeoutExpired) as exc:
                return JudgeVerdict(record_id, False, flagged=True, detail=str(exc))
            if proc.returncode == 0:
                return JudgeVerdict(record_id, True)
            return JudgeVerdict(record_id, False, detail=f"exit={proc.returncode}")
