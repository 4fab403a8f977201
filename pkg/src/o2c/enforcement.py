"""Trace replay engine: CFI, private stack/heap, data integrity and interface checks.

An :class:`Engine` owns one :class:`MapStore` and consumes events in tick
order. Events whose site lies inside the compartment's code ranges are
enforced; everything else only updates bookkeeping (object ownership,
allocations). A Deny is recorded and replay continues.
"""

from __future__ import annotations

import bisect
import enum
import json
import logging
from dataclasses import dataclass, field
from typing import Iterable

from .analyzer import MEMORY_CHECKS, CheckKind, EnforcementPlan, ProbeSpec
from .dtree.features import content_to_words
from .dtree.flat import FlatTree, Granularity, predict
from .errors import AuditionUnavailable
from .trace_model import (Allocator, CompartmentSpec, ControlFlowGraph, EventKind, RegionClass,
                          TraceEvent)

log = logging.getLogger(__name__)

WRITABLE_STATIC = frozenset({RegionClass.COMPARTMENT_DATA, RegionClass.COMPARTMENT_HEAP,
                             RegionClass.COMPARTMENT_STACK})


class Decision(str, enum.Enum):
    ALLOW = "Allow"
    DENY = "Deny"
    AUDIT = "Audit"


class Reason(str, enum.Enum):
    OK = "Ok"
    CFI_VIOLATION = "CfiViolation"
    UNKNOWN_SITE = "UnknownSite"
    PROTOCOL_VIOLATION = "ProtocolViolation"
    OVERLAP_VIOLATION = "OverlapViolation"
    INVALID_FREE = "InvalidFree"
    DOUBLE_FREE = "DoubleFree"
    TYPE_MISMATCH = "TypeMismatch"
    BOUNDS_VIOLATION = "BoundsViolation"
    POLICY_VIOLATION = "PolicyViolation"
    WILD_ADDRESS = "WildAddress"
    CONFUSED_DEPUTY = "ConfusedDeputy"
    IAGO_VIOLATION = "IagoViolation"


class Owner(str, enum.Enum):
    COMPARTMENT = "compartment"
    KERNEL = "kernel"


class SlotState(str, enum.Enum):
    LIVE = "Live"
    RETAINED = "Retained"


@dataclass(frozen=True)
class Verdict:
    tick: int
    site: int | None
    decision: Decision
    reason: Reason = Reason.OK
    detail: str = ""
    is_async: bool = False

    def __post_init__(self):
        if self.decision is not Decision.ALLOW and self.reason is Reason.OK:
            raise ValueError("Deny and Audit verdicts need a reason")

    @property
    def key(self) -> tuple:
        return (self.tick, self.site, self.decision.value, self.reason.value)

    def to_dict(self) -> dict:
        return {"tick": self.tick, "site": self.site, "decision": self.decision.value,
                "reason": self.reason.value, "detail": self.detail, "async": self.is_async}

    @classmethod
    def from_dict(cls, d) -> "Verdict":
        return cls(d["tick"], d.get("site"), Decision(d["decision"]), Reason(d["reason"]),
                   d.get("detail", ""), bool(d.get("async", False)))


def _allow(ev, detail="") -> Verdict:
    return Verdict(ev.tick, ev.site, Decision.ALLOW, Reason.OK, detail)


def _deny(ev, reason, detail="") -> Verdict:
    return Verdict(ev.tick, ev.site, Decision.DENY, reason, detail)


@dataclass
class CacheHandle:
    id: int
    type_id: int
    slot_size: int
    co_owned: bool = False
    slots: dict = field(default_factory=dict)  # addr -> SlotState


@dataclass
class ObjectRecord:
    addr: int
    size: int
    type_id: int | None
    owner: Owner
    allocator: Allocator = Allocator.SLAB
    cache: CacheHandle | None = None
    tracked: bool = True
    freed: bool = False
    free_tick: int | None = None

    @property
    def extent(self) -> int:
        return self.cache.slot_size if self.cache is not None else self.size

    def contains(self, addr: int, size: int) -> bool:
        return self.addr <= addr and addr + size <= self.addr + self.extent


@dataclass(frozen=True)
class StackRegion:
    base: int
    size: int
    owner: int

    @property
    def top(self) -> int:
        return self.base + self.size

    def overlaps(self, addr: int, size: int) -> bool:
        return addr < self.top and self.base < addr + size


def slot_size_for(size: int) -> int:
    """Next power of two, at least 8."""
    return max(8, 1 << (max(size, 1) - 1).bit_length())


class MapStore:
    """Shared maps the probes consult.

    ``object_owner`` holds slab objects; buddy and vmalloc blocks live in
    ``blocks`` with their ids in ``buddy_sites`` / ``vmalloc_descs``.
    """

    def __init__(self, cfg: ControlFlowGraph, spec: CompartmentSpec):
        self.spec = spec
        self.cfi_targets = {site: frozenset(t) for site, t in cfg.legal_targets.items()}
        self.object_owner: dict[int, ObjectRecord] = {}
        self.blocks: dict[int, ObjectRecord] = {}
        self.caches: dict[int, CacheHandle] = {}
        self.buddy_sites: dict[int, int] = {}
        self.vmalloc_descs: dict[int, int] = {}
        self.stacks: dict[int, StackRegion] = {}
        self.subject_stack: list[int] = []
        self.stack_allocations = 0
        self.warnings: list[str] = []
        self._bases: list[int] = []
        self._next_desc = 1

    # object index -------------------------------------------------------

    def record(self, addr: int) -> ObjectRecord | None:
        return self.object_owner.get(addr) or self.blocks.get(addr)

    def add_record(self, rec: ObjectRecord) -> None:
        if self.record(rec.addr) is None:
            bisect.insort(self._bases, rec.addr)
        if rec.allocator is Allocator.SLAB:
            self.blocks.pop(rec.addr, None)
            self.object_owner[rec.addr] = rec
        else:
            self.object_owner.pop(rec.addr, None)
            self.blocks[rec.addr] = rec

    def drop_record(self, addr: int) -> None:
        if self.object_owner.pop(addr, None) or self.blocks.pop(addr, None):
            self._bases.pop(bisect.bisect_left(self._bases, addr))
        self.buddy_sites.pop(addr, None)
        self.vmalloc_descs.pop(addr, None)

    def find_object(self, addr: int, size: int = 1) -> ObjectRecord | None:
        """Record whose extent overlaps ``[addr, addr+size)``.

        Extents are pairwise disjoint, so only the nearest base below the end
        of the query can overlap it.
        """
        i = bisect.bisect_right(self._bases, addr + size - 1)
        if i == 0:
            return None
        rec = self.record(self._bases[i - 1])
        return rec if rec.addr + rec.extent > addr else None

    def untracked_compartment(self) -> int:
        return sum(1 for r in self._all() if not r.tracked and not r.freed and r.owner is Owner.COMPARTMENT)

    def _all(self):
        yield from self.object_owner.values()
        yield from self.blocks.values()

    # stacks -------------------------------------------------------------

    @property
    def current_subject(self) -> int | None:
        return self.subject_stack[-1] if self.subject_stack else None

    def current_stack(self) -> StackRegion | None:
        s = self.current_subject
        return None if s is None else self.stacks.get(s)

    def stack_at(self, addr: int, size: int) -> StackRegion | None:
        for region in self.stacks.values():
            if region.overlaps(addr, size):
                return region
        return None


# --------------------------------------------------------------------------
# individual checks


def on_indirect_transfer(ev: TraceEvent, store: MapStore) -> Verdict:
    targets = store.cfi_targets.get(ev.site)
    if targets is None:
        return _deny(ev, Reason.UNKNOWN_SITE, "site has no CFI entry")
    if ev.value in targets:
        return _allow(ev)
    return _deny(ev, Reason.CFI_VIOLATION, f"target {ev.value:#x} not in legal set")


def on_subject_switch(ev: TraceEvent, store: MapStore) -> Verdict:
    spec = store.spec
    if ev.kind is EventKind.ENTER:
        subject = ev.value or 0
        if subject not in store.stacks:
            base = spec.stack_arena + len(store.stacks) * spec.stack_size
            store.stacks[subject] = StackRegion(base, spec.stack_size, subject)
            store.stack_allocations += 1
        store.subject_stack.append(subject)
        return _allow(ev, f"subject {subject} on stack {store.stacks[subject].base:#x}")
    if not store.subject_stack:
        return _deny(ev, Reason.PROTOCOL_VIOLATION, "exit without matching enter")
    store.subject_stack.pop()
    return _allow(ev, "kernel stack restored" if not store.subject_stack else "")


def _owner_of(ev: TraceEvent, spec: CompartmentSpec) -> Owner:
    return Owner.COMPARTMENT if spec.in_compartment(ev.site) else Owner.KERNEL


def on_alloc(ev: TraceEvent, store: MapStore, tracked: bool = True) -> Verdict:
    """Place an allocation. Addresses come from the trace; the model validates them."""
    spec = store.spec
    owner = _owner_of(ev, spec)
    size = ev.size
    existing = store.record(ev.addr)
    reuse_cache = None
    if existing is not None:
        if not existing.freed:
            return _deny(ev, Reason.OVERLAP_VIOLATION, f"{ev.addr:#x} is already live")
        if existing.cache is not None:
            if (owner is not Owner.COMPARTMENT or ev.allocator is not Allocator.SLAB
                    or existing.cache.type_id != ev.type_id or size > existing.cache.slot_size):
                return _deny(ev, Reason.OVERLAP_VIOLATION,
                             f"{ev.addr:#x} is retained by cache {existing.cache.id}")
            reuse_cache = existing.cache
        store.drop_record(ev.addr)
    clash = store.find_object(ev.addr, size)
    if clash is not None and not (clash.freed and clash.cache is None):
        return _deny(ev, Reason.OVERLAP_VIOLATION, f"overlaps object at {clash.addr:#x}")
    if clash is not None:
        store.drop_record(clash.addr)
    if store.stack_at(ev.addr, size) is not None:
        return _deny(ev, Reason.OVERLAP_VIOLATION, "overlaps a private stack")

    allocator = ev.allocator or Allocator.SLAB
    rec = ObjectRecord(ev.addr, size, ev.type_id if tracked else None, owner, allocator, tracked=tracked)
    if allocator is Allocator.SLAB and owner is Owner.COMPARTMENT and tracked and ev.type_id is not None:
        cache = reuse_cache or store.caches.get(ev.type_id)
        if cache is None:
            cache = CacheHandle(len(store.caches) + 1, ev.type_id, slot_size_for(size),
                                co_owned=ev.type_id in spec.co_owned_types)
            store.caches[ev.type_id] = cache
        elif size > cache.slot_size:
            return _deny(ev, Reason.OVERLAP_VIOLATION, f"size {size} exceeds slot of cache {cache.id}")
        cache.slots[ev.addr] = SlotState.LIVE
        rec.cache = cache
    elif allocator is Allocator.BUDDY:
        store.buddy_sites[ev.addr] = ev.site
    elif allocator is Allocator.VMALLOC:
        store.vmalloc_descs[ev.addr] = store._next_desc
        store._next_desc += 1
    store.add_record(rec)
    return _allow(ev, f"cache {rec.cache.id}" if rec.cache else allocator.value)


def _audition(ev: TraceEvent, store: MapStore, model: FlatTree | None) -> Verdict:
    if model is None:
        raise AuditionUnavailable(f"tick {ev.tick}: untracked free at {ev.addr:#x} needs a model")
    if ev.payload is None:
        return Verdict(ev.tick, ev.site, Decision.AUDIT, Reason.TYPE_MISMATCH,
                       "no content to classify", is_async=True)
    x = content_to_words(ev.payload, model.meta["n_features"])
    label = predict(model, x)
    spec = store.spec
    if model.meta.get("granularity") == Granularity.COMPARTMENT.value:
        ok = label == 1
        expected = "in-compartment"
    else:
        expected_set = spec.access_types.get(ev.site)
        ok = label in expected_set if expected_set else spec.labels_in_compartment(label)
        expected = sorted(expected_set) if expected_set else "a compartment type"
    if ok:
        return _allow(ev, f"audition inferred {label}")
    return Verdict(ev.tick, ev.site, Decision.AUDIT, Reason.TYPE_MISMATCH,
                   f"audition inferred {label}, expected {expected}", is_async=True)


def on_free(ev: TraceEvent, store: MapStore, model: FlatTree | None = None, phase: int = 1) -> Verdict:
    owner = _owner_of(ev, store.spec)
    rec = store.record(ev.addr)
    if owner is Owner.KERNEL:
        if rec is not None and rec.cache is None:
            store.drop_record(ev.addr)
        return _allow(ev)
    if rec is None:
        return _deny(ev, Reason.INVALID_FREE, f"{ev.addr:#x} is not an object base")
    if rec.owner is Owner.KERNEL and rec.type_id not in store.spec.co_owned_types:
        return _deny(ev, Reason.INVALID_FREE, f"{ev.addr:#x} belongs to the kernel")
    if rec.freed:
        return _deny(ev, Reason.DOUBLE_FREE, f"{ev.addr:#x} freed at tick {rec.free_tick}")
    if rec.tracked:
        rec.freed, rec.free_tick = True, ev.tick
        if rec.cache is not None:
            rec.cache.slots[rec.addr] = SlotState.RETAINED
        return _allow(ev, "slot retained")
    verdict = _audition(ev, store, model) if phase == 0 else _allow(ev)
    rec.freed, rec.free_tick = True, ev.tick
    return verdict


def _heap_verdict(ev, rec: ObjectRecord, lo: int, hi: int, expected, probe: ProbeSpec,
                  store: MapStore) -> Verdict:
    spec = store.spec
    if rec.owner is Owner.KERNEL and rec.type_id not in spec.co_owned_types:
        return _deny(ev, Reason.POLICY_VIOLATION, f"kernel object at {rec.addr:#x}")
    if not rec.tracked:
        if rec.freed:
            return _deny(ev, Reason.TYPE_MISMATCH, f"untracked object at {rec.addr:#x} was freed")
    elif probe.check is CheckKind.SHORTCUT_CACHE and rec.cache is not None:
        want = store.caches.get(probe.cache_ref)
        if want is None or want.id != rec.cache.id:
            return _deny(ev, Reason.TYPE_MISMATCH, f"cache {rec.cache.id} is not the cache of type {probe.cache_ref}")
    elif expected and rec.type_id not in expected:
        return _deny(ev, Reason.TYPE_MISMATCH, f"type {rec.type_id} not in {sorted(expected)}")
    if lo < rec.addr or hi > rec.addr + rec.extent:
        return _deny(ev, Reason.BOUNDS_VIOLATION,
                     f"[{lo:#x}, {hi:#x}) leaves object [{rec.addr:#x}, +{rec.extent})")
    return _allow(ev)


def on_memory_access(ev: TraceEvent, plan: EnforcementPlan, store: MapStore, phase: int = 1) -> Verdict | None:
    """Check one Write (Reads are always allowed). ``None`` means no probe fired."""
    if ev.kind is EventKind.READ:
        return None
    probe = plan.probes.get(ev.site)
    check = next((c for c in probe.checks if c in MEMORY_CHECKS), None) if probe else None
    if check is None:
        return None
    if check is not probe.check:
        # the memory check was auxiliary; metadata lives on the primary only
        probe = ProbeSpec(probe.cls, check, expected_types=probe.expected_types)
    lo, hi = ev.addr, ev.addr + ev.size
    if check is CheckKind.CONSOLIDATED_RANGE:
        base = ev.addr - probe.anchor_off
        lo, hi = base + probe.min_off, base + probe.max_off + probe.width
        hi = max(hi, ev.addr + ev.size)

    own = store.current_stack()
    if own is not None and own.base <= lo and hi <= own.top:
        return _allow(ev)
    spec = store.spec
    region = spec.static_region(lo)
    other_stack = store.stack_at(lo, hi - lo)
    rec = store.find_object(lo, hi - lo) if other_stack is None else None

    if check is CheckKind.STACK_RANGE:
        if rec is None and other_stack is None and region is not None and region[2] not in WRITABLE_STATIC:
            return _deny(ev, Reason.POLICY_VIOLATION, f"{region[2].value} is not writable")
        return _deny(ev, Reason.BOUNDS_VIOLATION, f"[{lo:#x}, {hi:#x}) leaves the private stack")

    if other_stack is not None:
        if own is not None and other_stack is own:
            return _deny(ev, Reason.BOUNDS_VIOLATION, f"[{lo:#x}, {hi:#x}) leaves the private stack")
        return _deny(ev, Reason.POLICY_VIOLATION, f"stack of subject {other_stack.owner}")
    if rec is not None:
        return _heap_verdict(ev, rec, lo, hi, probe.expected_types, probe, store)
    if region is None:
        return _deny(ev, Reason.WILD_ADDRESS, f"{lo:#x} maps to no known region")
    rlo, rhi, cls = region
    if cls not in WRITABLE_STATIC:
        return _deny(ev, Reason.POLICY_VIOLATION, f"{cls.value} is not writable")
    if cls is RegionClass.COMPARTMENT_HEAP:
        return _deny(ev, Reason.WILD_ADDRESS, f"{lo:#x} is not an allocated object")
    if hi > rhi:
        return _deny(ev, Reason.BOUNDS_VIOLATION, f"[{lo:#x}, {hi:#x}) crosses the end of {cls.value}")
    return _allow(ev)


def check_interface(ev: TraceEvent, spec: CompartmentSpec) -> Verdict:
    callee = ev.callee or spec.external_calls.get(ev.site)
    contract = spec.interface_contracts.get(callee) if callee else None
    if ev.kind is EventKind.ARG_PASS:
        pred = contract.args.get(ev.index or 0) if contract else None
        reason = Reason.CONFUSED_DEPUTY
        what = f"argument {ev.index or 0} of {callee}"
    else:
        pred = contract.ret if contract else None
        reason = Reason.IAGO_VIOLATION
        what = f"return value of {callee}"
    if pred is None:
        msg = f"warn: no contract for {what}"
        log.warning("tick %d: %s", ev.tick, msg)
        return _allow(ev, msg)
    if pred.holds(ev.value):
        return _allow(ev)
    return _deny(ev, reason, f"{what} = {ev.value:#x} violates contract")


# --------------------------------------------------------------------------
# the phase machine


@dataclass(frozen=True)
class PhaseConfig:
    """``start_phase`` is -1, 0 or 1. With -1, enforcement begins at the first
    event whose tick reaches ``t0``. ``transition_tick`` forces Phase 1."""

    start_phase: int = 0
    t0: int | None = None
    transition_tick: int | None = None

    def __post_init__(self):
        if self.start_phase not in (-1, 0, 1):
            raise ValueError("phase must be -1, 0 or 1")


@dataclass
class ReplayResult:
    verdicts: list[Verdict]
    final_phase: int
    phase_zero_tick: int | None = None
    transition_tick: int | None = None
    auditions: int = 0
    audit_mismatches: int = 0
    stack_allocations: int = 0
    untracked_remaining: int = 0

    @property
    def denies(self) -> list[Verdict]:
        return [v for v in self.verdicts if v.decision is Decision.DENY]

    @property
    def audits(self) -> list[Verdict]:
        return [v for v in self.verdicts if v.decision is Decision.AUDIT]

    def flagged(self) -> list[tuple[str, str, int, int | None]]:
        """Sorted multiset of Deny/Audit outcomes, the unit of dual-replay comparison."""
        return sorted((v.decision.value, v.reason.value, v.tick, v.site)
                      for v in self.verdicts if v.decision is not Decision.ALLOW)

    def summary(self) -> dict:
        counts: dict[str, int] = {}
        for v in self.verdicts:
            if v.decision is not Decision.ALLOW:
                k = f"{v.decision.value}:{v.reason.value}"
                counts[k] = counts.get(k, 0) + 1
        return {
            "events_checked": len(self.verdicts),
            "deny": len(self.denies),
            "audit": len(self.audits),
            "by_reason": dict(sorted(counts.items())),
            "final_phase": self.final_phase,
            "phase_zero_tick": self.phase_zero_tick,
            "transition_tick": self.transition_tick,
            "auditions": self.auditions,
            "audit_mismatches": self.audit_mismatches,
            "stack_allocations": self.stack_allocations,
            "untracked_remaining": self.untracked_remaining,
        }


class Engine:
    """Single-owner replay state machine."""

    def __init__(self, plan: EnforcementPlan, cfg: ControlFlowGraph, spec: CompartmentSpec,
                 model: FlatTree | None = None, config: PhaseConfig = PhaseConfig(),
                 store: MapStore | None = None):
        self.plan = plan
        self.spec = spec
        self.model = model
        self.config = config
        self.store = store if store is not None else MapStore(cfg, spec)
        self.phase = config.start_phase
        self.result = ReplayResult([], self.phase)
        self._pending_pre_t0 = 0
        self._untracked = 0

    def _enter_phase_zero(self, tick):
        self.phase = 0
        self.result.phase_zero_tick = tick

    def _to_phase_one(self, tick):
        self.phase = 1
        self.result.transition_tick = tick
        log.info("phase 1 reached at tick %d", tick)

    def run(self, trace: Iterable[TraceEvent]) -> ReplayResult:
        trace = list(trace)
        spec = self.spec
        self._pending_pre_t0 = sum(1 for e in trace if e.kind is EventKind.ALLOC and e.pre_t0
                                   and spec.in_compartment(e.site))
        if self.phase == 0:
            self.result.phase_zero_tick = trace[0].tick if trace else None
        for ev in trace:
            self.step(ev)
        self.result.final_phase = self.phase
        self.result.stack_allocations = self.store.stack_allocations
        self.result.untracked_remaining = self._untracked
        return self.result

    def step(self, ev: TraceEvent) -> Verdict | None:
        cfg = self.config
        if self.phase == -1 and cfg.t0 is not None and ev.tick >= cfg.t0:
            self._enter_phase_zero(ev.tick)
        if self.phase == 0 and cfg.transition_tick is not None and ev.tick >= cfg.transition_tick:
            self._to_phase_one(ev.tick)

        if self.phase == -1:
            self._record_only(ev)
            return None
        verdict = self._dispatch(ev)
        if verdict is not None:
            self.result.verdicts.append(verdict)
        if (self.phase == 0 and self._untracked == 0 and self._pending_pre_t0 == 0):
            self._to_phase_one(ev.tick)
        return verdict

    def _record_only(self, ev: TraceEvent) -> None:
        store = self.store
        if ev.kind is EventKind.ALLOC:
            if ev.pre_t0 and self.spec.in_compartment(ev.site):
                self._pending_pre_t0 -= 1
            if store.record(ev.addr) is None and store.find_object(ev.addr, ev.size) is None:
                store.add_record(ObjectRecord(ev.addr, ev.size, None, _owner_of(ev, self.spec),
                                              ev.allocator or Allocator.SLAB, tracked=False))
                if _owner_of(ev, self.spec) is Owner.COMPARTMENT:
                    self._untracked += 1
        elif ev.kind is EventKind.FREE:
            rec = store.record(ev.addr)
            if rec is not None:
                if not rec.tracked and rec.owner is Owner.COMPARTMENT and not rec.freed:
                    self._untracked -= 1
                store.drop_record(ev.addr)

    def _dispatch(self, ev: TraceEvent) -> Verdict | None:
        store, spec, plan = self.store, self.spec, self.plan
        inside = spec.in_compartment(ev.site)
        kind = ev.kind
        if kind in (EventKind.ENTER, EventKind.EXIT):
            return on_subject_switch(ev, store)
        if kind is EventKind.ALLOC:
            untracked = ev.pre_t0
            verdict = on_alloc(ev, store, tracked=not untracked)
            if untracked and inside:
                self._pending_pre_t0 -= 1
                if verdict.decision is Decision.ALLOW:
                    self._untracked += 1
            return verdict if inside or verdict.decision is not Decision.ALLOW else None
        if kind is EventKind.FREE:
            rec = store.record(ev.addr)
            untracked_live = (rec is not None and not rec.tracked and not rec.freed
                              and rec.owner is Owner.COMPARTMENT)
            verdict = on_free(ev, store, self.model, self.phase)
            if untracked_live and (rec.freed or store.record(ev.addr) is None):
                self._untracked -= 1
                if inside and self.phase == 0:
                    self.result.auditions += 1
                    if verdict.decision is Decision.AUDIT:
                        self.result.audit_mismatches += 1
            return verdict if inside else None
        if not inside:
            return None
        probe = plan.probes.get(ev.site)
        if kind in (EventKind.INDIRECT_CALL, EventKind.INDIRECT_JUMP, EventKind.RETURN):
            if probe is not None and CheckKind.CFI in probe.checks:
                return on_indirect_transfer(ev, store)
            return None
        if kind in (EventKind.READ, EventKind.WRITE):
            if kind is EventKind.READ:
                if probe is not None and any(c in MEMORY_CHECKS for c in probe.checks):
                    return _allow(ev, "reads are unrestricted")
                return None
            return on_memory_access(ev, plan, store, self.phase)
        if kind is EventKind.ARG_PASS:
            if probe is not None and CheckKind.ARG in probe.checks:
                return check_interface(ev, spec)
            return None
        if kind is EventKind.RETURN_VALUE:
            if probe is not None and CheckKind.RET in probe.checks:
                return check_interface(ev, spec)
            return None
        return None


def run_phase_machine(trace: Iterable[TraceEvent], plan: EnforcementPlan, store: MapStore,
                      config: PhaseConfig = PhaseConfig(), model: FlatTree | None = None) -> ReplayResult:
    engine = Engine(plan, ControlFlowGraph({}), store.spec, model, config, store=store)
    return engine.run(trace)


def replay(trace, plan, cfg, spec, model=None, config: PhaseConfig = PhaseConfig()) -> ReplayResult:
    return Engine(plan, cfg, spec, model, config).run(trace)


def dump_verdicts(verdicts: Iterable[Verdict]) -> str:
    return "".join(json.dumps(v.to_dict(), sort_keys=True, separators=(",", ":")) + "\n" for v in verdicts)


def parse_verdicts(text: str) -> list[Verdict]:
    return [Verdict.from_dict(json.loads(line)) for line in text.splitlines() if line.strip()]
