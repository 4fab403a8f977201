from fractions import Fraction

import pytest

from o2c.analyzer import build_plan, optimize_plan
from o2c.dtree import Granularity, compile_tree
from o2c.dtree.cart import TreeNode
from o2c.enforcement import (Decision, Engine, MapStore, PhaseConfig, Reason, SlotState, Verdict, check_interface,
                             dump_verdicts, on_alloc, on_free, on_indirect_transfer, on_memory_access,
                             on_subject_switch, parse_verdicts, replay, run_phase_machine, slot_size_for)
from o2c.errors import AuditionUnavailable
from o2c.scenario import (KERNEL_RET, S_RET, Scenario, ScenarioKind, compartment_cfg, compartment_ir,
                          compartment_spec, generate, scenario_model)
from o2c.trace_model import (Allocator, CompartmentSpec, Contract, ControlFlowGraph, EventKind, Instruction,
                             Operand, OperandKind, Predicate, RegionClass, TraceEvent, TypeInfo, to_unsigned)

CODE = 0x1000
W_SITE, W2_SITE, FREE_SITE, ALLOC_SITE, ICALL, KSITE = 0x1010, 0x1014, 0x1020, 0x1030, 0x1040, 0x9000
HEAP = 0x100000
ARENA = 0x400000


def _spec(**kw):
    base = dict(
        code_ranges=((CODE, 0x2000),),
        co_owned_types=frozenset({11}),
        access_types={W_SITE: frozenset({7}), FREE_SITE: frozenset({5})},
        memory_map=((0x3000, 0x4000, RegionClass.COMPARTMENT_DATA), (0x8000, 0xA000, RegionClass.KERNEL_CODE),
                    (0xA000, 0xB000, RegionClass.KERNEL_DATA), (HEAP, 2 * HEAP, RegionClass.KERNEL_HEAP)),
        stack_arena=ARENA, stack_size=0x1000,
        compartment_types=frozenset({5, 7}),
        types={t: TypeInfo(t, f"t{t}", 24) for t in (3, 5, 7, 11)},
        interface_contracts={
            "memcpy": Contract(args={0: Predicate("not_in", ((0xA000, 0xAFFF),))}),
            "file_open": Contract(ret=Predicate("in", ((-4095, 0),), signed=True)),
        },
    )
    base.update(kw)
    return CompartmentSpec(**base)


def _plan(spec):
    mem = lambda b, d=0: Operand(OperandKind.MEMREF, base=b, disp=d, size=8)
    reg = lambda r: Operand(OperandKind.REGISTER, reg=r)
    ir = [Instruction(W_SITE, "f", 0x10, "mov", (reg("rax"), mem("rdi")), True),
          Instruction(W2_SITE, "f", 0x14, "mov", (reg("rax"), mem("rsp", 0)), True)]
    return build_plan(ir, ControlFlowGraph({}), spec)


def ev(tick, kind, **kw):
    return TraceEvent(tick, kind, **kw)


def alloc(tick, addr, type_id=7, size=24, site=ALLOC_SITE, allocator=Allocator.SLAB, **kw):
    return ev(tick, EventKind.ALLOC, site=site, addr=addr, size=size, type_id=type_id, allocator=allocator, **kw)


@pytest.fixture
def store():
    return MapStore(ControlFlowGraph({ICALL: frozenset({0x5000, 0x6000})}), _spec())


# ------------------------------------------------------------------ CFI

def test_cfi(store):
    assert on_indirect_transfer(ev(1, EventKind.INDIRECT_CALL, site=ICALL, value=0x5000), store).decision \
        is Decision.ALLOW
    v = on_indirect_transfer(ev(2, EventKind.INDIRECT_CALL, site=ICALL, value=0x7000), store)
    assert (v.decision, v.reason) == (Decision.DENY, Reason.CFI_VIOLATION)
    v = on_indirect_transfer(ev(3, EventKind.INDIRECT_CALL, site=ICALL + 1, value=0x5000), store)
    assert v.reason is Reason.UNKNOWN_SITE


def test_tampered_return_denied_by_unoptimized_plan():
    spec, cfg = compartment_spec(), compartment_cfg()
    plan = build_plan(compartment_ir(), cfg, spec)
    trace = [ev(1, EventKind.ENTER, site=spec.code_ranges[0][0], value=0),
             ev(2, EventKind.RETURN, site=S_RET, value=KERNEL_RET + 0x40)]
    assert replay(trace, plan, cfg, spec).flagged() == [("Deny", "CfiViolation", 2, S_RET)]
    trace[1] = ev(2, EventKind.RETURN, site=S_RET, value=KERNEL_RET)
    assert replay(trace, plan, cfg, spec).flagged() == []


# ------------------------------------------------------------------ subject switch

def test_stack_is_allocated_once_and_reused(store):
    on_subject_switch(ev(1, EventKind.ENTER, site=CODE, value=0), store)
    base = store.current_stack().base
    assert on_subject_switch(ev(2, EventKind.EXIT, site=CODE), store).decision is Decision.ALLOW
    on_subject_switch(ev(3, EventKind.ENTER, site=CODE, value=0), store)
    assert store.current_stack().base == base == ARENA
    assert store.stack_allocations == 1


def test_exit_before_enter(store):
    v = on_subject_switch(ev(1, EventKind.EXIT, site=CODE), store)
    assert (v.decision, v.reason) == (Decision.DENY, Reason.PROTOCOL_VIOLATION)


def test_enter_exit_enter_counts_one_allocation():
    spec = _spec()
    trace = [ev(1, EventKind.ENTER, site=CODE, value=0), ev(2, EventKind.EXIT, site=CODE),
             ev(3, EventKind.ENTER, site=CODE, value=0), ev(4, EventKind.ENTER, site=CODE, value=1)]
    res = replay(trace, _plan(spec), ControlFlowGraph({}), spec)
    assert res.stack_allocations == 2 and not res.denies


# ------------------------------------------------------------------ alloc / free

def test_slab_caches(store):
    assert slot_size_for(24) == 32 and slot_size_for(64) == 64 and slot_size_for(1) == 8
    on_alloc(alloc(1, HEAP, size=64), store)
    cache = store.caches[7]
    assert cache.slot_size == 64 and store.record(HEAP).cache is cache
    on_alloc(alloc(2, HEAP + 64, size=64), store)
    assert store.record(HEAP + 64).cache.id == cache.id


def test_buddy_and_vmalloc_bookkeeping(store):
    on_alloc(alloc(1, HEAP, type_id=None, size=4096, site=0x1100, allocator=Allocator.BUDDY), store)
    on_alloc(alloc(2, HEAP + 0x10000, type_id=None, size=8192, allocator=Allocator.VMALLOC), store)
    assert store.buddy_sites[HEAP] == 0x1100
    assert store.vmalloc_descs[HEAP + 0x10000] == 1


def test_overlap_and_retention(store):
    on_alloc(alloc(1, HEAP), store)
    assert on_alloc(alloc(2, HEAP), store).reason is Reason.OVERLAP_VIOLATION
    on_free(ev(3, EventKind.FREE, site=FREE_SITE, addr=HEAP), store)
    assert store.caches[7].slots[HEAP] is SlotState.RETAINED
    # a retained slot only serves its own type
    assert on_alloc(alloc(4, HEAP, type_id=5), store).reason is Reason.OVERLAP_VIOLATION
    assert on_alloc(alloc(5, HEAP, type_id=3, site=KSITE), store).reason is Reason.OVERLAP_VIOLATION
    assert on_alloc(alloc(6, HEAP), store).decision is Decision.ALLOW
    assert store.caches[7].slots[HEAP] is SlotState.LIVE


def test_free_rules(store):
    on_alloc(alloc(1, HEAP), store)
    on_alloc(alloc(2, HEAP + 0x100, type_id=3, site=KSITE), store)
    on_alloc(alloc(3, HEAP + 0x200, type_id=11, site=KSITE), store)
    assert on_free(ev(4, EventKind.FREE, site=FREE_SITE, addr=HEAP + 8), store).reason is Reason.INVALID_FREE
    assert on_free(ev(5, EventKind.FREE, site=FREE_SITE, addr=HEAP + 0x100), store).reason is Reason.INVALID_FREE
    assert on_free(ev(6, EventKind.FREE, site=FREE_SITE, addr=HEAP + 0x200), store).decision is Decision.ALLOW
    assert on_free(ev(7, EventKind.FREE, site=FREE_SITE, addr=HEAP), store).decision is Decision.ALLOW
    assert on_free(ev(8, EventKind.FREE, site=FREE_SITE, addr=HEAP), store).reason is Reason.DOUBLE_FREE
    # the kernel's own frees are bookkeeping only
    assert on_free(ev(9, EventKind.FREE, site=KSITE, addr=HEAP + 0x100), store).decision is Decision.ALLOW


def _reference_model():
    # word 0 <= 100 -> type 5, otherwise type 7
    tree = TreeNode(0, 2, feature=0, threshold=Fraction(201, 2),
                    left=TreeNode(1, 1, leaf_value=5), right=TreeNode(1, 1, leaf_value=7))
    return compile_tree(tree, 2, Granularity.TYPE)


def _untracked_trace(word0):
    payload = word0.to_bytes(8, "little") + bytes(8)
    return [alloc(1, HEAP, type_id=5, pre_t0=True),
            ev(2, EventKind.FREE, site=FREE_SITE, addr=HEAP, payload=payload)]


def test_audition_mismatch_is_async_audit():
    spec = _spec()
    res = replay(_untracked_trace(500), _plan(spec), ControlFlowGraph({}), spec, _reference_model())
    (v,) = res.audits
    assert (v.reason, v.is_async, v.tick) == (Reason.TYPE_MISMATCH, True, 2)
    assert res.auditions == 1 and res.audit_mismatches == 1 and not res.denies
    assert v.to_dict()["async"] is True


def test_audition_match_allows():
    spec = _spec()
    res = replay(_untracked_trace(50), _plan(spec), ControlFlowGraph({}), spec, _reference_model())
    assert res.audits == [] and res.auditions == 1


def test_audition_without_model_raises():
    spec = _spec()
    with pytest.raises(AuditionUnavailable):
        replay(_untracked_trace(50), _plan(spec), ControlFlowGraph({}), spec)


def test_compartment_granularity_audition():
    tree = TreeNode(0, 2, feature=0, threshold=Fraction(201, 2),
                    left=TreeNode(1, 1, leaf_value=1), right=TreeNode(1, 1, leaf_value=0))
    model = compile_tree(tree, 2, Granularity.COMPARTMENT)
    spec = _spec()
    assert len(replay(_untracked_trace(500), _plan(spec), ControlFlowGraph({}), spec, model).audits) == 1
    assert replay(_untracked_trace(5), _plan(spec), ControlFlowGraph({}), spec, model).audits == []


# ------------------------------------------------------------------ memory access

def _write(tick, addr, site=W_SITE, size=8):
    return ev(tick, EventKind.WRITE, site=site, addr=addr, size=size)


@pytest.fixture
def heap_store(store):
    on_subject_switch(ev(1, EventKind.ENTER, site=CODE, value=0), store)
    on_alloc(alloc(2, HEAP, size=24), store)
    on_alloc(alloc(3, HEAP + 0x100, type_id=3, site=KSITE), store)
    return store


@pytest.mark.parametrize("addr,size,outcome", [
    (HEAP + 8, 8, (Decision.ALLOW, None)),
    (HEAP + 0x108, 8, (Decision.DENY, Reason.POLICY_VIOLATION)),
    (HEAP + 28, 8, (Decision.DENY, Reason.BOUNDS_VIOLATION)),
    (0, 8, (Decision.DENY, Reason.WILD_ADDRESS)),
    (0xA010, 8, (Decision.DENY, Reason.POLICY_VIOLATION)),
    (0x3ffc, 8, (Decision.DENY, Reason.BOUNDS_VIOLATION)),
    (0x3010, 8, (Decision.ALLOW, None)),
])
def test_heap_writes(heap_store, addr, size, outcome):
    v = on_memory_access(_write(10, addr, size=size), _plan(heap_store.spec), heap_store)
    assert (v.decision, v.reason if v.decision is not Decision.ALLOW else None) == outcome


def test_wrong_type_and_use_after_free(heap_store):
    plan = _plan(heap_store.spec)
    on_alloc(alloc(4, HEAP + 0x200, type_id=5), heap_store)
    assert on_memory_access(_write(5, HEAP + 0x200), plan, heap_store).reason is Reason.TYPE_MISMATCH
    on_free(ev(6, EventKind.FREE, site=FREE_SITE, addr=HEAP + 0x200), heap_store)
    assert on_memory_access(_write(7, HEAP + 0x200), plan, heap_store).reason is Reason.TYPE_MISMATCH


def test_reads_never_checked(heap_store):
    read = ev(10, EventKind.READ, site=W_SITE, addr=HEAP + 0x108, size=8)
    assert on_memory_access(read, _plan(heap_store.spec), heap_store) is None


def test_stack_checks(heap_store):
    plan = _plan(heap_store.spec)
    top = ARENA + 0x1000
    assert on_memory_access(_write(10, top - 8, W2_SITE), plan, heap_store).decision is Decision.ALLOW
    assert on_memory_access(_write(11, top, W2_SITE), plan, heap_store).reason is Reason.BOUNDS_VIOLATION
    assert on_memory_access(_write(12, 0xA000, W2_SITE), plan, heap_store).reason is Reason.POLICY_VIOLATION


def test_shortcut_and_consolidated_checks():
    spec = compartment_spec()
    cfg = compartment_cfg()
    plan = optimize_plan(build_plan(compartment_ir(), cfg, spec), compartment_ir(), spec)
    checks = {p.check.value for p in plan.probes.values()}
    assert {"ShortcutCacheCheck", "ConsolidatedRangeCheck"} <= checks
    for kind in (ScenarioKind.UAF_WRITE, ScenarioKind.HEAP_OVERFLOW):
        bundle = generate(Scenario.named(kind, 4), scenario_model(4))
        assert replay(bundle.trace, plan, cfg, spec, bundle.model).flagged() == bundle.expected_flagged()


# ------------------------------------------------------------------ interface

def test_interface_contracts():
    spec = _spec()
    arg = lambda v: ev(1, EventKind.ARG_PASS, site=0x1050, value=v, index=0, callee="memcpy")
    ret = lambda v: ev(2, EventKind.RETURN_VALUE, site=0x1060, value=to_unsigned(v), callee="file_open")
    assert check_interface(arg(0xA100), spec).reason is Reason.CONFUSED_DEPUTY
    assert check_interface(arg(HEAP), spec).decision is Decision.ALLOW
    assert check_interface(ret(-22), spec).decision is Decision.ALLOW
    assert check_interface(ret(0), spec).decision is Decision.ALLOW
    assert check_interface(ret(42), spec).reason is Reason.IAGO_VIOLATION
    v = check_interface(ev(3, EventKind.ARG_PASS, site=0x1050, value=1, callee="unknown"), spec)
    assert v.decision is Decision.ALLOW and v.detail.startswith("warn")


# ------------------------------------------------------------------ phases

def test_empty_trace_keeps_phase():
    spec = _spec()
    for start in (-1, 0, 1):
        res = replay([], _plan(spec), ControlFlowGraph({}), spec, config=PhaseConfig(start_phase=start))
        assert res.final_phase == start and res.verdicts == []


def test_transition_at_last_untracked_free():
    spec = _spec()
    trace = [alloc(1, HEAP, type_id=5, pre_t0=True), alloc(2, HEAP + 0x100, type_id=5, pre_t0=True),
             ev(3, EventKind.FREE, site=FREE_SITE, addr=HEAP, payload=bytes(16)),
             alloc(4, HEAP + 0x200),
             ev(7, EventKind.FREE, site=FREE_SITE, addr=HEAP + 0x100, payload=(500).to_bytes(8, "little")),
             ev(9, EventKind.FREE, site=FREE_SITE, addr=HEAP + 0x200)]
    res = replay(trace, _plan(spec), ControlFlowGraph({}), spec, _reference_model())
    assert res.transition_tick == 7 and res.final_phase == 1
    assert res.auditions == 2 and [v.tick for v in res.audits] == [7]


def test_never_freed_untracked_object_stays_in_phase_zero():
    spec = _spec()
    trace = [alloc(1, HEAP, type_id=5, pre_t0=True), alloc(2, HEAP + 0x100)]
    res = replay(trace, _plan(spec), ControlFlowGraph({}), spec, _reference_model())
    assert res.final_phase == 0 and res.transition_tick is None and res.untracked_remaining == 1


def test_forced_transition_tick_disables_audition():
    spec = _spec()
    res = replay(_untracked_trace(500), _plan(spec), ControlFlowGraph({}), spec, None,
                 PhaseConfig(start_phase=0, transition_tick=2))
    assert res.transition_tick == 2 and res.audits == [] and res.auditions == 0


def test_record_only_phase_feeds_untracked_set():
    spec = _spec()
    trace = [alloc(1, HEAP, type_id=5), alloc(2, HEAP + 0x100, type_id=5),
             ev(5, EventKind.FREE, site=FREE_SITE, addr=HEAP, payload=(500).to_bytes(8, "little")),
             ev(6, EventKind.FREE, site=FREE_SITE, addr=HEAP + 0x100, payload=bytes(8))]
    res = replay(trace, _plan(spec), ControlFlowGraph({}), spec, _reference_model(),
                 PhaseConfig(start_phase=-1, t0=5))
    assert res.phase_zero_tick == 5 and res.transition_tick == 6
    assert [v.tick for v in res.audits] == [5]


def test_deny_does_not_stop_replay(heap_store):
    spec = heap_store.spec
    trace = [_write(20, 0), _write(21, 0), _write(22, HEAP + 8)]
    res = run_phase_machine(trace, _plan(spec), heap_store, PhaseConfig(start_phase=1))
    assert [v.decision for v in res.verdicts] == [Decision.DENY, Decision.DENY, Decision.ALLOW]


def test_engine_step_and_verdict_log_round_trip():
    bundle = generate(Scenario.named(ScenarioKind.CFI_HIJACK, 2), scenario_model(2))
    spec, cfg = bundle.spec, bundle.cfg
    engine = Engine(build_plan(bundle.ir, cfg, spec), cfg, spec, bundle.model)
    for e in bundle.trace:
        engine.step(e)
    text = dump_verdicts(engine.result.verdicts)
    assert parse_verdicts(text) == engine.result.verdicts
    with pytest.raises(ValueError):
        Verdict(1, 2, Decision.DENY, Reason.OK)
