"""Seeded synthetic workloads: one small compartment, benign rounds and attacks.

Every scenario shares the same compartment image (IR, CFG, spec). Traces are
built round by round; an attack kind rewrites or adds a single event in the
last round and records the verdict that event must produce. Expected
verdicts therefore come from the generator's own bookkeeping, never from
running the engine.

Randomness comes from :class:`XorShift64Star`, a fully specified generator,
so a seed yields the same bytes in any implementation.
"""

from __future__ import annotations

import enum
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .dtree.cart import TrainParams, train
from .dtree.features import content_to_words
from .dtree.flat import FlatTree, Granularity, compile_tree, dumps_model
from .trace_model import (Allocator, CompartmentSpec, Contract, ControlFlowGraph, EventKind, Instruction,
                          Operand, OperandKind, Predicate, RegionClass, TraceEvent, TypeInfo, dump_ir,
                          dump_json, dump_trace, to_unsigned)

log = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1


class XorShift64Star:
    """Marsaglia xorshift (12, 25, 27) followed by a multiply by 0x2545F4914F6CDD1D."""

    MULT = 0x2545F4914F6CDD1D

    def __init__(self, seed: int):
        # splitmix64 step so that small seeds still give well-mixed states
        z = (seed + 0x9E3779B97F4A7C15) & MASK64
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        self.state = (z ^ (z >> 31)) or 1

    def next_u64(self) -> int:
        x = self.state
        x ^= x >> 12
        x ^= (x << 25) & MASK64
        x ^= x >> 27
        self.state = x
        return (x * self.MULT) & MASK64

    def below(self, n: int) -> int:
        """Uniform integer in ``[0, n)`` via the high half of a 128-bit product."""
        if n <= 0:
            raise ValueError("n must be positive")
        return (self.next_u64() * n) >> 64

    def uniform(self) -> float:
        return (self.next_u64() >> 11) / float(1 << 53)

    def choice(self, seq):
        return seq[self.below(len(seq))]

    def shuffle(self, items: list) -> None:
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]


# --------------------------------------------------------------------------
# address layout

KTEXT = 0xFFFFFFFF81000000
KDATA = 0xFFFFFFFF82000000
BPF = 0xFFFFFFFFA0000000
CTEXT = 0xFFFFFFFFC0000000
CDATA = 0xFFFFFFFFC0100000
KSTACK = 0xFFFFC90000000000
HEAP = 0xFFFF888000000000

KMALLOC = KTEXT + 0x1000
KFREE = KTEXT + 0x1100
MEMCPY = KTEXT + 0x1200
KERNEL_RET = KTEXT + 0x2004
KERNEL_ALLOC_SITE = KTEXT + 0x3000
KERNEL_FREE_SITE = KTEXT + 0x3100
ROGUE_TARGET = KTEXT + 0x4000

UNTRACKED_BASE = HEAP + 0x40000000
KERNEL_OBJ_BASE = HEAP + 0x30000000

# compartment instruction sites
S_PUSH, S_W0, S_W8, S_W16 = CTEXT + 0x00, CTEXT + 0x04, CTEXT + 0x08, CTEXT + 0x0C
S_GWRITE, S_GREAD, S_FRAME, S_INDEXED = CTEXT + 0x10, CTEXT + 0x17, CTEXT + 0x1E, CTEXT + 0x22
S_ICALL, S_KMALLOC, S_ONE, S_TWO, S_NINE = CTEXT + 0x26, CTEXT + 0x28, CTEXT + 0x2D, CTEXT + 0x31, CTEXT + 0x36
S_MEMCPY, S_BACK, S_KFREE, S_CMP, S_POP, S_RET = (CTEXT + 0x3A, CTEXT + 0x3F, CTEXT + 0x42, CTEXT + 0x47,
                                                   CTEXT + 0x4B, CTEXT + 0x4C)
HELPER = CTEXT + 0x100
S_HPUSH, S_HPOP, S_HRET = HELPER, HELPER + 0x1, HELPER + 0x2

GLOBAL_SLOT = CDATA + 0x40

T_KERNEL, T_HDR, T_BUF, T_BUF2, T_SMALL, T_SHARED = 3, 5, 7, 8, 9, 11
TYPE_SIZES = {T_KERNEL: 48, T_HDR: 24, T_BUF: 60, T_BUF2: 40, T_SMALL: 16, T_SHARED: 32}
COMPARTMENT_TYPES = frozenset({T_HDR, T_BUF, T_SMALL})
MODEL_WORDS = 16


def _reg(name):
    return Operand(OperandKind.REGISTER, reg=name)


def _mem(base, disp=0, index=None, scale=None):
    return Operand(OperandKind.MEMREF, base=base, disp=disp, index=index, scale=scale, size=8)


def _code(addr):
    return Operand(OperandKind.CODE, value=addr)


def compartment_ir() -> list[Instruction]:
    gw_disp = GLOBAL_SLOT - (S_GWRITE + 7)
    gr_disp = GLOBAL_SLOT - (S_GREAD + 7)
    body = [
        (S_PUSH, "push", [_reg("rbp")]),
        (CTEXT + 0x01, "mov", [_reg("rsp"), _reg("rbp")]),
        (S_W0, "mov", [_reg("rsi"), _mem("rdi", 0)]),
        (S_W8, "mov", [_reg("rdx"), _mem("rdi", 8)]),
        (S_W16, "mov", [_reg("rcx"), _mem("rdi", 16)]),
        (S_GWRITE, "mov", [_reg("rax"), _mem("rip", gw_disp)]),
        (S_GREAD, "mov", [_mem("rip", gr_disp), _reg("rax")]),
        (S_FRAME, "mov", [_reg("rsi"), _mem("rbp", -8)]),
        (S_INDEXED, "mov", [_reg("rdi"), _mem("rsp", 0, "rax", 8)]),
        (S_ICALL, "call", [_reg("rax")]),
        (S_KMALLOC, "call", [_code(KMALLOC)]),
        (S_ONE, "mov", [_reg("rbx"), _mem("rax", 0x18)]),
        (S_TWO, "mov", [_reg("rbx"), _mem("r12", 8)]),
        (S_NINE, "mov", [_reg("rbx"), _mem("r13", 0)]),
        (S_MEMCPY, "call", [_code(MEMCPY)]),
        (S_BACK, "mov", [_reg("rax"), _reg("rbx")]),
        (S_KFREE, "call", [_code(KFREE)]),
        (S_CMP, "cmp", [_reg("rax"), _mem("rdi", 16)]),
        (S_POP, "pop", [_reg("rbp")]),
        (S_RET, "ret", []),
    ]
    helper = [
        (S_HPUSH, "push", [_reg("rbx")]),
        (S_HPOP, "pop", [_reg("rbx")]),
        (S_HRET, "ret", []),
    ]
    out = [Instruction(a, "cmp_entry", a - CTEXT, m, tuple(ops), True) for a, m, ops in body]
    out += [Instruction(a, "cmp_helper", a - HELPER, m, tuple(ops), True) for a, m, ops in helper]
    return out


def compartment_cfg() -> ControlFlowGraph:
    return ControlFlowGraph({S_ICALL: frozenset({HELPER}), S_HRET: frozenset({S_KMALLOC}),
                             S_RET: frozenset({KERNEL_RET})})


def compartment_spec() -> CompartmentSpec:
    names = {T_KERNEL: "sock", T_HDR: "cls_hdr", T_BUF: "cls_buf", T_BUF2: "cls_buf_alt",
             T_SMALL: "cls_key", T_SHARED: "skb_shared"}
    return CompartmentSpec(
        code_ranges=((CTEXT, CTEXT + 0x10000),),
        entry_functions=frozenset({"cmp_entry"}),
        external_calls={S_MEMCPY: "memcpy"},
        co_owned_types=frozenset({T_SHARED}),
        interface_contracts={
            "memcpy": Contract(args={0: Predicate("not_in", ((KDATA, KDATA + 0xFFFFFF),))}),
            "cmp_entry": Contract(ret=Predicate("in", ((-4095, 0),), signed=True)),
        },
        allocators={KMALLOC: Allocator.SLAB},
        free_functions=frozenset({KFREE}),
        access_types={S_W0: frozenset({T_HDR}), S_W8: frozenset({T_HDR}), S_W16: frozenset({T_HDR}),
                      S_ONE: frozenset({T_BUF}), S_TWO: frozenset({T_BUF, T_BUF2}),
                      S_NINE: frozenset({T_SMALL}), S_KFREE: COMPARTMENT_TYPES,
                      S_CMP: frozenset({T_HDR})},
        memory_map=(
            (KTEXT, KTEXT + 0x1000000, RegionClass.KERNEL_CODE),
            (KDATA, KDATA + 0x1000000, RegionClass.KERNEL_DATA),
            (BPF, BPF + 0x100000, RegionClass.BPF_PROGRAMS),
            (CDATA, CDATA + 0x10000, RegionClass.COMPARTMENT_DATA),
            (KSTACK, KSTACK + 0x100000, RegionClass.KERNEL_STACK),
            (HEAP, HEAP + 0x100000000, RegionClass.KERNEL_HEAP),
        ),
        compartment_types=COMPARTMENT_TYPES,
        types={t: TypeInfo(t, names[t], s) for t, s in TYPE_SIZES.items()},
    )


# --------------------------------------------------------------------------
# object content


def _type_constant(type_id: int, j: int) -> int:
    z = (type_id * 0x100 + j + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    return (z ^ (z >> 27)) & 0xFFFFFFFF


def type_content(type_id: int, size: int, rng: XorShift64Star) -> bytes:
    """Object bytes carrying the invariants of ``type_id``.

    Word 0 is a magic tag, word 1 a small counter in [1, 3], word 2 holds two
    flag bits and the rest are per-type constants.
    """
    n = (size + 7) // 8
    words = [(type_id + 1) << 40, 1 + rng.below(3), rng.below(2) | (rng.below(2) << 3)]
    words += [_type_constant(type_id, j) for j in range(3, max(n, 3))]
    raw = b"".join(w.to_bytes(8, "little") for w in words[:n])
    return raw[:size]


def scenario_model(seed: int = 0, rows_per_type: int = 24) -> FlatTree:
    """Small Type-granularity tree used for audition in the scenarios."""
    rng = XorShift64Star(seed ^ 0x5EED)
    X, y = [], []
    for t in sorted(TYPE_SIZES):
        for _ in range(rows_per_type):
            X.append(content_to_words(type_content(t, TYPE_SIZES[t], rng), MODEL_WORDS))
            y.append(t)
    tree = train(np.stack(X), np.array(y), TrainParams(max_depth=14))
    return compile_tree(tree, MODEL_WORDS, Granularity.TYPE)


# --------------------------------------------------------------------------
# scenarios


class ScenarioKind(str, enum.Enum):
    BENIGN = "Benign"
    UAF_WRITE = "UafWrite"
    HEAP_OVERFLOW = "HeapOverflow"
    WILD_ADDRESS = "WildAddress"
    STACK_OVERFLOW_RET = "StackOverflowRet"
    INVALID_FREE = "InvalidFree"
    CFI_HIJACK = "CfiHijack"
    CONFUSED_DEPUTY_ARG = "ConfusedDeputyArg"
    IAGO_RETURN = "IagoReturn"


ATTACK_KINDS = tuple(k for k in ScenarioKind if k is not ScenarioKind.BENIGN)

# (decision, reason) the injected event must produce
EXPECTED_OUTCOME = {
    ScenarioKind.UAF_WRITE: ("Deny", "TypeMismatch"),
    ScenarioKind.HEAP_OVERFLOW: ("Deny", "BoundsViolation"),
    ScenarioKind.WILD_ADDRESS: ("Deny", "WildAddress"),
    ScenarioKind.STACK_OVERFLOW_RET: ("Deny", "BoundsViolation"),
    ScenarioKind.INVALID_FREE: ("Deny", "InvalidFree"),
    ScenarioKind.CFI_HIJACK: ("Deny", "CfiViolation"),
    ScenarioKind.CONFUSED_DEPUTY_ARG: ("Deny", "ConfusedDeputy"),
    ScenarioKind.IAGO_RETURN: ("Deny", "IagoViolation"),
}


@dataclass(frozen=True)
class Scenario:
    name: str
    kind: ScenarioKind
    seed: int = 1
    rounds: int = 3
    untracked: int = 2
    kernel_objects: int = 2

    def __post_init__(self):
        if self.rounds < 1 or self.untracked < 0 or self.untracked > 4 * self.rounds:
            raise ValueError("need at least one round and at most 4 untracked objects per round")

    @classmethod
    def named(cls, kind, seed: int = 1, **kw) -> "Scenario":
        kind = ScenarioKind(kind)
        return cls(f"{kind.value.lower()}-{seed}", kind, seed, **kw)

    def params(self) -> dict:
        return {"rounds": self.rounds, "untracked": self.untracked, "kernel_objects": self.kernel_objects}


@dataclass(frozen=True)
class ExpectedVerdict:
    tick: int
    site: int
    decision: str
    reason: str

    def to_dict(self) -> dict:
        return {"tick": self.tick, "site": self.site, "decision": self.decision, "reason": self.reason}

    def as_tuple(self) -> tuple:
        return (self.decision, self.reason, self.tick, self.site)


@dataclass
class ScenarioBundle:
    scenario: Scenario
    ir: list[Instruction]
    cfg: ControlFlowGraph
    spec: CompartmentSpec
    trace: list[TraceEvent]
    expected: list[ExpectedVerdict]
    model: FlatTree
    phase: dict = field(default_factory=lambda: {"start_phase": 0, "t0": None, "transition_tick": None})
    last_untracked_free: int | None = None

    def expected_flagged(self) -> list[tuple]:
        return sorted(e.as_tuple() for e in self.expected)


class _Builder:
    def __init__(self, rng: XorShift64Star, spec: CompartmentSpec):
        self.rng = rng
        self.spec = spec
        self.events: list[TraceEvent] = []
        self.expected: list[ExpectedVerdict] = []
        self.tick = 0
        self.next_slot: dict[int, int] = {}
        self.retained: dict[int, list[int]] = {}

    def emit(self, kind, **kw) -> TraceEvent:
        self.tick += 1 + self.rng.below(3)
        ev = TraceEvent(tick=self.tick, kind=kind, **kw)
        self.events.append(ev)
        return ev

    def expect(self, ev: TraceEvent, outcome: tuple[str, str]) -> None:
        self.expected.append(ExpectedVerdict(ev.tick, ev.site, *outcome))

    def slot_for(self, type_id: int) -> int:
        """Pick an address in the private cache of ``type_id``: reuse or fresh."""
        pool = self.retained.setdefault(type_id, [])
        if pool and self.rng.below(2) == 0:
            return pool.pop(self.rng.below(len(pool)))
        i = self.next_slot.get(type_id, 0)
        self.next_slot[type_id] = i + 1
        slot = max(8, 1 << (TYPE_SIZES[type_id] - 1).bit_length())
        return HEAP + 0x1000000 * type_id + i * slot

    def alloc(self, type_id: int) -> int:
        addr = self.slot_for(type_id)
        self.emit(EventKind.ALLOC, site=S_KMALLOC, addr=addr, size=TYPE_SIZES[type_id], type_id=type_id,
                  allocator=Allocator.SLAB)
        return addr

    def free(self, type_id: int, addr: int) -> TraceEvent:
        self.retained.setdefault(type_id, []).append(addr)
        return self.emit(EventKind.FREE, site=S_KFREE, addr=addr)


def _round(b: _Builder, kind: ScenarioKind | None, untracked_here: list[tuple[int, int]],
           stack_top: int) -> None:
    rng = b.rng
    rsp = stack_top - 0x40 - 8 * rng.below(4)
    b.emit(EventKind.ENTER, site=S_PUSH, value=0)
    b.emit(EventKind.WRITE, site=S_PUSH, addr=rsp - 8, size=8)
    rsp -= 8
    rbp = rsp
    hdr = b.alloc(T_HDR)
    for site, off in ((S_W0, 0), (S_W8, 8), (S_W16, 16)):
        b.emit(EventKind.WRITE, site=site, addr=hdr + off, size=8)
    b.emit(EventKind.WRITE, site=S_GWRITE, addr=GLOBAL_SLOT, size=8)
    b.emit(EventKind.READ, site=S_GREAD, addr=GLOBAL_SLOT, size=8)
    b.emit(EventKind.WRITE, site=S_FRAME, addr=rbp - 8, size=8)
    if kind is ScenarioKind.STACK_OVERFLOW_RET:
        ev = b.emit(EventKind.WRITE, site=S_INDEXED, addr=stack_top + 8 * rng.below(4), size=8)
        b.expect(ev, EXPECTED_OUTCOME[kind])
    else:
        b.emit(EventKind.WRITE, site=S_INDEXED, addr=rsp + 8 * rng.below(4), size=8)
    if kind is ScenarioKind.CFI_HIJACK:
        ev = b.emit(EventKind.INDIRECT_CALL, site=S_ICALL, value=ROGUE_TARGET)
        b.expect(ev, EXPECTED_OUTCOME[kind])
    else:
        b.emit(EventKind.INDIRECT_CALL, site=S_ICALL, value=HELPER)
        b.emit(EventKind.WRITE, site=S_HPUSH, addr=rsp - 16, size=8)
        b.emit(EventKind.READ, site=S_HPOP, addr=rsp - 16, size=8)
        b.emit(EventKind.RETURN, site=S_HRET, value=S_KMALLOC)
    buf = b.alloc(T_BUF)
    b.emit(EventKind.WRITE, site=S_ONE, addr=buf + 0x18, size=8)
    b.emit(EventKind.WRITE, site=S_TWO, addr=buf + 8, size=8)
    if kind is ScenarioKind.HEAP_OVERFLOW:
        ev = b.emit(EventKind.WRITE, site=S_TWO, addr=buf + TYPE_SIZES[T_BUF], size=8)
        b.expect(ev, EXPECTED_OUTCOME[kind])
    if kind is ScenarioKind.WILD_ADDRESS:
        ev = b.emit(EventKind.WRITE, site=S_TWO, addr=0, size=8)
        b.expect(ev, EXPECTED_OUTCOME[kind])
    key = b.alloc(T_SMALL)
    b.emit(EventKind.WRITE, site=S_NINE, addr=key, size=8)
    dst = KDATA + 0x100 if kind is ScenarioKind.CONFUSED_DEPUTY_ARG else buf
    ev = b.emit(EventKind.ARG_PASS, site=S_MEMCPY, value=dst, index=0, callee="memcpy")
    if kind is ScenarioKind.CONFUSED_DEPUTY_ARG:
        b.expect(ev, EXPECTED_OUTCOME[kind])
    b.emit(EventKind.READ, site=S_CMP, addr=hdr + 16, size=8)
    if kind is ScenarioKind.INVALID_FREE:
        ev = b.emit(EventKind.FREE, site=S_KFREE, addr=buf + 8)
        b.expect(ev, EXPECTED_OUTCOME[kind])
    b.free(T_BUF, buf)
    if kind is ScenarioKind.UAF_WRITE:
        ev = b.emit(EventKind.WRITE, site=S_NINE, addr=buf, size=8)
        b.expect(ev, EXPECTED_OUTCOME[kind])
    b.free(T_SMALL, key)
    b.free(T_HDR, hdr)
    for addr, t in untracked_here:
        b.emit(EventKind.FREE, site=S_KFREE, addr=addr, payload=type_content(t, TYPE_SIZES[t], rng))
    b.emit(EventKind.READ, site=S_POP, addr=rsp, size=8)
    b.emit(EventKind.RETURN, site=S_RET, value=KERNEL_RET)
    if kind is ScenarioKind.IAGO_RETURN:
        ev = b.emit(EventKind.RETURN_VALUE, site=S_RET, value=42, callee="cmp_entry")
        b.expect(ev, EXPECTED_OUTCOME[kind])
    else:
        ret = rng.choice([0, 0, -22, -12])
        b.emit(EventKind.RETURN_VALUE, site=S_RET, value=to_unsigned(ret), callee="cmp_entry")
    b.emit(EventKind.EXIT, site=S_RET, value=0)


def generate(scenario: Scenario, model: FlatTree | None = None) -> ScenarioBundle:
    """Emit IR, CFG, spec, trace and expected verdicts for ``scenario``."""
    rng = XorShift64Star(scenario.seed)
    spec = compartment_spec()
    b = _Builder(rng, spec)
    stack_top = spec.stack_arena + spec.stack_size

    # objects that predate time 0
    untracked = []
    ctypes = sorted(COMPARTMENT_TYPES)
    for i in range(scenario.untracked):
        t = ctypes[rng.below(len(ctypes))]
        addr = UNTRACKED_BASE + i * 0x1000
        b.emit(EventKind.ALLOC, site=S_KMALLOC, addr=addr, size=TYPE_SIZES[t], type_id=t,
               allocator=Allocator.SLAB, pre_t0=True)
        untracked.append((addr, t))
    for i in range(scenario.kernel_objects):
        t = T_SHARED if i % 2 else T_KERNEL
        b.emit(EventKind.ALLOC, site=KERNEL_ALLOC_SITE, addr=KERNEL_OBJ_BASE + i * 0x1000,
               size=TYPE_SIZES[t], type_id=t, allocator=Allocator.SLAB)

    per_round: list[list] = [[] for _ in range(scenario.rounds)]
    for i, obj in enumerate(untracked):
        per_round[i % scenario.rounds].append(obj)
    last_free = None
    for r in range(scenario.rounds):
        kind = scenario.kind if r == scenario.rounds - 1 and scenario.kind is not ScenarioKind.BENIGN else None
        _round(b, kind, per_round[r], stack_top)
        if per_round[r]:
            last_free = max(e.tick for e in b.events
                            if e.kind is EventKind.FREE and e.addr in {a for a, _ in per_round[r]})
    model = model if model is not None else scenario_model(scenario.seed)
    return ScenarioBundle(scenario, compartment_ir(), compartment_cfg(), spec, b.events, b.expected, model,
                          last_untracked_free=last_free)


def suite(seed: int = 1, benign_seeds: int = 20) -> list[Scenario]:
    """Every attack kind once plus ``benign_seeds`` benign scenarios."""
    out = [Scenario.named(k, seed) for k in ATTACK_KINDS]
    out += [Scenario.named(ScenarioKind.BENIGN, seed + i, rounds=2 + i % 3, untracked=1 + i % 3)
            for i in range(benign_seeds)]
    return out


def bundle_files(bundle: ScenarioBundle) -> dict[str, str]:
    """File name -> content for every artifact of a scenario."""
    name = bundle.scenario.name
    files = {
        f"{name}.o2cir.jsonl": dump_ir(bundle.ir),
        f"{name}.o2ccfg.json": dump_json(bundle.cfg.to_dict()),
        f"{name}.o2cspec.json": dump_json(bundle.spec.to_dict()),
        f"{name}.o2ctrace.jsonl": dump_trace(bundle.trace),
        f"{name}.o2cmodel.json": dumps_model(bundle.model),
    }
    s = bundle.scenario
    manifest = {
        "name": s.name,
        "kind": s.kind.value,
        "seed": s.seed,
        "params": s.params(),
        "files": {k.split(".", 1)[1].split(".")[0][3:]: k for k in files},
        "phase": bundle.phase,
        "expected": [e.to_dict() for e in bundle.expected],
        "last_untracked_free": bundle.last_untracked_free,
    }
    files[f"{name}.o2cscenario.json"] = dump_json(manifest)
    return files


def write_bundle(bundle: ScenarioBundle, out_dir) -> dict[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    files = bundle_files(bundle)
    paths = {}
    for fname, text in files.items():
        path = os.path.join(out_dir, fname)
        tmp = path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
        paths[fname] = path
    return paths


def load_manifest(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


# --------------------------------------------------------------------------
# training world


def sibling(type_id: int, n_types: int) -> int:
    s = type_id + 1 if type_id % 2 == 1 else type_id - 1
    return s if 1 <= s <= n_types else type_id


def world_spec(n_types: int) -> CompartmentSpec:
    """Spec for the training world: the first half of the sibling pairs is compartment-owned."""
    n_pairs = (n_types + 1) // 2
    comp_pairs = (n_pairs + 1) // 2
    comp = frozenset(t for t in range(1, n_types + 1) if (t - 1) // 2 < comp_pairs)
    base = compartment_spec()
    types = {t: TypeInfo(t, f"type{t}", world_size(t)) for t in range(1, n_types + 1)}
    return CompartmentSpec(code_ranges=base.code_ranges, entry_functions=base.entry_functions,
                           allocators=base.allocators, free_functions=base.free_functions,
                           memory_map=base.memory_map, compartment_types=comp, types=types)


def world_size(type_id: int) -> int:
    # siblings share a size so that swapped content leaves no padding trace
    return 24 + 8 * (((type_id - 1) // 2) % 6)


def generate_training_world(seed: int, n_types: int = 20, rows_per_type: int = 500,
                            separability: float = 0.9) -> tuple[list[TraceEvent], CompartmentSpec]:
    """Profiling trace whose object contents carry per-type invariants.

    With probability ``1 - separability`` an object is filled with the
    content pattern of its sibling type. Siblings always share the
    compartment/kernel side, so the noise never crosses that boundary.
    """
    if not 0.0 <= separability <= 1.0:
        raise ValueError("separability must lie in [0, 1]")
    rng = XorShift64Star(seed)
    spec = world_spec(n_types)
    labels = [t for t in range(1, n_types + 1) for _ in range(rows_per_type)]
    rng.shuffle(labels)
    events = []
    tick = 0
    for i, t in enumerate(labels):
        inside = t in spec.compartment_types
        src = t if rng.uniform() < separability else sibling(t, n_types)
        addr = HEAP + 0x200 * i
        tick += 1
        events.append(TraceEvent(tick, EventKind.ALLOC, site=S_KMALLOC if inside else KERNEL_ALLOC_SITE,
                                 addr=addr, size=world_size(t), type_id=t, allocator=Allocator.SLAB))
        tick += 1
        payload = type_content(src, world_size(src), rng)
        events.append(TraceEvent(tick, EventKind.FREE, site=S_KFREE if inside else KERNEL_FREE_SITE,
                                 addr=addr, payload=payload))
    return events, spec


# --------------------------------------------------------------------------
# access-control micro fixture

POLICY_REGIONS = (RegionClass.KERNEL_CODE, RegionClass.KERNEL_DATA, RegionClass.KERNEL_HEAP,
                  RegionClass.KERNEL_STACK, RegionClass.BPF_PROGRAMS, RegionClass.COMPARTMENT_CODE,
                  RegionClass.COMPARTMENT_DATA, RegionClass.COMPARTMENT_HEAP, RegionClass.COMPARTMENT_STACK)
POLICY_ACCESSES = ("read", "write", "exec")


def policy_trace(region: RegionClass, access: str) -> tuple[list[TraceEvent], TraceEvent]:
    """Compartment code touching one object of ``region`` once; returns (trace, probe event)."""
    spec = compartment_spec()
    own = HEAP + 0x1000000 * T_BUF
    kobj = KERNEL_OBJ_BASE
    target = {
        RegionClass.KERNEL_CODE: ROGUE_TARGET,
        RegionClass.KERNEL_DATA: KDATA + 0x100,
        RegionClass.KERNEL_HEAP: kobj + 8,
        RegionClass.KERNEL_STACK: KSTACK + 0x800,
        RegionClass.BPF_PROGRAMS: BPF + 0x40,
        RegionClass.COMPARTMENT_CODE: HELPER,
        RegionClass.COMPARTMENT_DATA: GLOBAL_SLOT,
        RegionClass.COMPARTMENT_HEAP: own + 8,
        RegionClass.COMPARTMENT_STACK: spec.stack_arena + spec.stack_size - 0x80,
    }[region]
    events = [
        TraceEvent(1, EventKind.ALLOC, site=KERNEL_ALLOC_SITE, addr=kobj, size=TYPE_SIZES[T_KERNEL],
                   type_id=T_KERNEL, allocator=Allocator.SLAB),
        TraceEvent(2, EventKind.ENTER, site=S_PUSH, value=0),
        TraceEvent(3, EventKind.ALLOC, site=S_KMALLOC, addr=own, size=TYPE_SIZES[T_BUF], type_id=T_BUF,
                   allocator=Allocator.SLAB),
    ]
    if access == "read":
        probe = TraceEvent(4, EventKind.READ, site=S_CMP, addr=target, size=8)
    elif access == "write":
        probe = TraceEvent(4, EventKind.WRITE, site=S_TWO, addr=target, size=8)
    elif access == "exec":
        probe = TraceEvent(4, EventKind.INDIRECT_CALL, site=S_ICALL, value=target)
    else:
        raise ValueError(f"unknown access {access!r}")
    return events + [probe], probe
