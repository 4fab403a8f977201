import pytest
from hypothesis import given
from hypothesis import strategies as st

from o2c.errors import ParseError, SchemaError, StructuralError
from o2c.scenario import Scenario, ScenarioKind, compartment_spec, generate
from o2c.trace_model import (CompartmentSpec, ControlFlowGraph, EventKind, OperandKind, Predicate, RegionClass,
                             TraceEvent, dump_ir, dump_trace, parse_ir, parse_trace, to_signed, to_unsigned)


def test_indirect_call_line():
    (insn,) = parse_ir('{"addr":4096,"func":"f","offset":0,"mnemonic":"call","operands":[{"kind":"Register","reg":"rax"}]}')
    assert insn.addr == 4096 and insn.symbol == "f+0x0"
    assert len(insn.operands) == 1 and insn.operands[0].kind is OperandKind.REGISTER


def test_missing_mnemonic_names_line():
    text = ('{"addr":1,"func":"f","offset":0,"mnemonic":"nop","operands":[]}\n'
            '{"addr":2,"func":"f","offset":1,"operands":[]}\n')
    with pytest.raises(ParseError) as info:
        parse_ir(text)
    assert info.value.line == 2


def test_duplicate_address():
    line = '{"addr":4096,"func":"f","offset":0,"mnemonic":"nop","operands":[]}\n'
    with pytest.raises(StructuralError):
        parse_ir(line * 2)


def test_ir_sorted_and_round_trips():
    lines = ['{"addr":8,"func":"f","offset":8,"mnemonic":"ret","operands":[]}',
             '{"addr":4,"func":"f","offset":4,"mnemonic":"mov","operands":[{"kind":"Register","reg":"rax"},'
             '{"kind":"MemRef","base":"rsp","index":"rax","scale":8,"disp":-16,"size":4}]}']
    ir = parse_ir("\n".join(lines))
    assert [i.addr for i in ir] == [4, 8]
    assert ir[0].operands[1].expression() == "(rsp+rax*8-0x10)"
    assert parse_ir(dump_ir(ir)) == ir


def test_bad_json_and_operand_errors():
    with pytest.raises(ParseError):
        parse_ir("{nope")
    with pytest.raises(SchemaError):
        parse_ir('{"addr":1,"func":"f","offset":0,"mnemonic":"mov","operands":[{"kind":"Bogus"}]}')
    with pytest.raises(SchemaError):
        parse_ir('{"addr":1,"func":"f","offset":0,"mnemonic":"call","operands":[{"kind":"Code"}]}')


def test_alloc_and_free_events():
    alloc, free = parse_trace(
        '{"tick":1,"kind":"Alloc","site":4096,"addr":65536,"size":64,"type_id":7,"allocator":"Slab"}\n'
        '{"tick":2,"kind":"Free","addr":65536,"payload":"00ff"}\n')
    assert alloc.kind is EventKind.ALLOC and alloc.type_id == 7 and alloc.size == 64
    assert free.kind is EventKind.FREE and free.payload == b"\x00\xff"


@pytest.mark.parametrize("text,err", [
    ('{"tick":1,"kind":"Free","addr":1}\n{"tick":1,"kind":"Free","addr":2}', StructuralError),
    ('{"tick":1,"kind":"Alloc","site":1,"addr":1,"size":8}', SchemaError),
    ('{"tick":1,"kind":"Alloc","site":1,"addr":1,"size":0,"allocator":"Slab"}', SchemaError),
    ('{"tick":1,"kind":"Teleport"}', SchemaError),
    ('{"tick":1,"kind":"Write","site":1,"addr":-5,"size":8}', SchemaError),
    ('{"tick":1,"kind":"Free","addr":1,"payload":"zz"}', SchemaError),
    ('{"tick":1,"kind":"Return","site":1}', SchemaError),
])
def test_trace_errors(text, err):
    with pytest.raises(err):
        parse_trace(text)


def test_scenario_trace_round_trips():
    trace = generate(Scenario.named(ScenarioKind.UAF_WRITE, 3)).trace
    assert parse_trace(dump_trace(trace)) == trace


@given(st.integers(0, 2**64 - 1))
def test_signed_view_round_trips(v):
    assert to_unsigned(to_signed(v)) == v
    assert -(2**63) <= to_signed(v) < 2**63


def test_predicates():
    errno = Predicate("in", ((-4095, 0),), signed=True)
    assert errno.holds(0) and errno.holds(to_unsigned(-22)) and not errno.holds(42)
    assert Predicate("not_in", ((10, 20),)).holds(9) and not Predicate("not_in", ((10, 20),)).holds(20)
    with pytest.raises(SchemaError):
        Predicate.from_dict({"mode": "maybe", "ranges": []})


def test_spec_round_trip_and_regions():
    spec = compartment_spec()
    again = CompartmentSpec.from_dict(spec.to_dict())
    assert again == spec
    lo, _ = spec.code_ranges[0]
    assert spec.static_region(lo + 4)[2] is RegionClass.COMPARTMENT_CODE
    assert spec.static_region(1) is None
    assert spec.labels_in_compartment(11) and not spec.labels_in_compartment(3)


def test_spec_structural_errors():
    with pytest.raises(StructuralError):
        CompartmentSpec(code_ranges=((0, 10), (5, 20)))
    with pytest.raises(StructuralError):
        CompartmentSpec(code_ranges=((10, 10),))
    with pytest.raises(StructuralError):
        CompartmentSpec.from_dict({"types": [{"id": 1, "name": "a", "nominal_size": 8}] * 2})
    with pytest.raises(StructuralError):
        ControlFlowGraph.from_dict({"legal_targets": {"4": []}})
