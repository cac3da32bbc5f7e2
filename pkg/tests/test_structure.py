"""Structure reports: declaration counts, instantiation tracking, invariants."""

import re

import pytest

from itertl.verilog.analyzer import analyze_structure

TWO_MODULES = """
module a(input x, output y); assign y = x; endmodule
module b(input x, output y); assign y = ~x; endmodule
"""

NON_SELF_CONTAINED = """
module adder4(input [3:0] a, b, output [3:0] s);
  full_adder fa0 (a[0], b[0], s[0]);
  full_adder fa1 (a[1], b[1], s[1]);
endmodule
"""

SELF_CONTAINED = "module m(input a, output y); assign y = a; endmodule"


def test_two_module_count():
    assert analyze_structure(TWO_MODULES).module_count == 2


def test_undefined_submodule():
    r = analyze_structure(NON_SELF_CONTAINED)
    assert r.module_count == 1
    assert r.undefined_instantiations == ("full_adder",)
    assert r.instantiated_modules == ("full_adder", "full_adder")


def test_self_contained():
    r = analyze_structure(SELF_CONTAINED)
    assert r.module_count == 1
    assert r.instantiated_modules == ()
    assert r.undefined_instantiations == ()
    assert r.syntax_ok


def test_defined_instantiation_not_undefined():
    src = TWO_MODULES + "module top(input x, output y); a u0 (x, y); endmodule"
    r = analyze_structure(src)
    assert r.module_count == 3
    assert r.instantiated_modules == ("a",)
    assert r.undefined_instantiations == ()


def test_gate_primitives_never_undefined():
    src = "module m(input a, b, output y); and g1 (y, a, b); nor (w, a, b); endmodule"
    r = analyze_structure(src)
    assert r.undefined_instantiations == ()
    assert r.instantiated_modules == ()


def test_parameterized_instantiation():
    src = "module top(input a, output y); sub #(.W(4)) u0 (.in(a), .out(y)); endmodule"
    r = analyze_structure(src)
    assert r.instantiated_modules == ("sub",)
    assert r.undefined_instantiations == ("sub",)


def test_instance_array():
    src = "module top(input a, output y); sub u0 [3:0] (a, y); endmodule"
    assert analyze_structure(src).instantiated_modules == ("sub",)


def test_generate_bodies_not_searched():
    src = ("module top(input a, output y); "
           "generate sub u0 (a, y); endgenerate endmodule")
    r = analyze_structure(src)
    assert r.instantiated_modules == ()


def test_totality_on_garbage():
    r = analyze_structure("hello world ((( module")
    assert not r.syntax_ok
    assert r.module_count == 0
    assert r.first_error is not None


def test_module_count_on_malformed_text():
    # Counting still works when the syntax check fails.
    r = analyze_structure("module one; module two; assign x =")
    assert not r.syntax_ok
    assert r.module_count == 2
    assert r.declared_modules == ("one", "two")


def test_duplicate_declarations_counted():
    src = "module m; endmodule module m; endmodule"
    r = analyze_structure(src)
    assert r.module_count == 2
    assert r.declared_modules == ("m", "m")


def _strip_comments_and_strings(source: str) -> str:
    source = re.sub(r"/\*.*?\*/", " ", source, flags=re.DOTALL)
    source = re.sub(r"//[^\n]*", " ", source)
    source = re.sub(r'"(?:[^"\\\n]|\\.)*"', " ", source)
    return source


def _oracle_module_count(source: str) -> int:
    # Naive declaration-position scan: the module keyword followed by a name.
    text = _strip_comments_and_strings(source)
    return len(re.findall(r"\bmodule\s+[A-Za-z_][A-Za-z0-9_$]*", text))


VALID_CORPUS = [
    SELF_CONTAINED,
    TWO_MODULES,
    NON_SELF_CONTAINED,
    "module m; endmodule",
    "module a; endmodule module b; endmodule module c; endmodule",
    "module m; // module ghost\n endmodule",
    'module m; initial $display("module fake"); endmodule',
    "module m #(parameter W = 2) (input [W-1:0] a, output y); assign y = |a; endmodule",
]


@pytest.mark.parametrize("source", VALID_CORPUS)
def test_module_count_matches_regex_oracle(source):
    assert analyze_structure(source).module_count == _oracle_module_count(source)


def test_report_invariants():
    for source in VALID_CORPUS + [TWO_MODULES + NON_SELF_CONTAINED]:
        r = analyze_structure(source)
        assert set(r.undefined_instantiations) <= set(r.instantiated_modules)
        assert r.module_count == len(r.declared_modules)
        if not r.syntax_ok:
            assert r.first_error is not None


def test_determinism():
    assert analyze_structure(NON_SELF_CONTAINED) == analyze_structure(NON_SELF_CONTAINED)


def test_to_dict_keys():
    d = analyze_structure(SELF_CONTAINED).to_dict()
    assert set(d) == {"syntax_ok", "module_count", "declared_modules",
                      "instantiated_modules", "undefined_instantiations", "first_error"}
