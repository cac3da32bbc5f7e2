"""Synthetic mini-RTL corpus over a toy grammar.

Each record pairs a two-word instruction ("<op> <name>") with a small Verilog
module; every instruction and reference splits into whitespace tokens, so the
corpus doubles as the toy model's training alphabet. A configurable handful
of records carry two-module references (a top module instantiating a helper
plus the helper itself) — the failure shape the structural filter exists to
remove.
"""

from __future__ import annotations

from importlib import resources
from typing import List, Sequence

from .model import Vocab
from .records import InstructionRecord

# All bodies are bracket-flat: whatever continuation a shared trigram context
# smooths toward during training, the decoded module stays balanced.
_TWO_INPUT = {
    "gate_and": "a & b",
    "gate_or": "a | b",
    "gate_xor": "a ^ b",
    "gate_nand": "~ a | ~ b",
    "gate_nor": "~ a & ~ b",
}
_ONE_INPUT = {
    "gate_not": "~ a",
    "gate_buf": "a",
}
_OPS = sorted(_TWO_INPUT) + sorted(_ONE_INPUT)


def gate_reference(op: str, name: str) -> str:
    if op in _TWO_INPUT:
        ports = "input a , input b , output y"
        expr = _TWO_INPUT[op]
    elif op in _ONE_INPUT:
        ports = "input a , output y"
        expr = _ONE_INPUT[op]
    else:
        raise ValueError(f"unknown op {op!r}")
    return f"module {name} ( {ports} ) ; assign y = {expr} ; endmodule"


def multi_module_reference(name: str) -> str:
    """Two-module reference: a top module leaning on a helper defined in the
    same text. Its body shares the clean records' `assign y = a` opening and
    then pulls toward the helper instantiation, so training on it without the
    structural filter bleeds multi-module continuations into the clean
    records' generations."""
    return (
        f"module {name} ( input a , input b , output y ) ; "
        f"assign y = a ^ d ; full_adder u0 ( a , b , y ) ; endmodule "
        f"module full_adder ( input c , input d , output z ) ; "
        f"assign z = c & d ; endmodule"
    )


def mini_rtl_corpus(num_clean: int = 20, num_multi_module: int = 4) -> List[InstructionRecord]:
    """Deterministic corpus: num_clean single-module gate records followed by
    num_multi_module records whose references declare two modules."""
    if num_clean < 1:
        raise ValueError("num_clean must be positive")
    records: List[InstructionRecord] = []
    for i in range(num_clean):
        op = _OPS[i % len(_OPS)]
        name = f"m{i:02d}"
        records.append(InstructionRecord(
            id=f"clean-{i:02d}",
            instruction=f"{op} {name}",
            reference=gate_reference(op, name),
        ))
    for i in range(num_multi_module):
        name = f"p{i:02d}"
        records.append(InstructionRecord(
            id=f"multi-{i:02d}",
            instruction=f"adder4 {name}",
            reference=multi_module_reference(name),
        ))
    return records


def corpus_vocab(records: Sequence[InstructionRecord]) -> Vocab:
    """Token inventory covering every instruction and reference in `records`."""
    texts = []
    for r in records:
        texts.append(r.instruction)
        texts.append(r.reference)
    return Vocab.from_texts(texts)


def bundled_corpus_path() -> str:
    """Path of the packaged default corpus (24 records, 4 of them two-module)."""
    with resources.as_file(resources.files("itertl").joinpath("data/mini_rtl.jsonl")) as p:
        return str(p)


def load_bundled_corpus() -> List[InstructionRecord]:
    from .records import read_corpus

    return read_corpus(bundled_corpus_path())
