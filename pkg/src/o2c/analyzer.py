"""Static code analyzer: instruction classification, enforcement plans, optimization passes.

The analyzer walks the compartment's instructions, sorts each into one
enforcement category, attaches a probe describing the runtime check, and then
prunes/rewrites the probes with four passes run in a fixed order:

1. ``skip_deterministic``: accesses whose address is fixed at analysis time
   (``rip``-relative and absolute globals, ``rbp``/``rsp`` plus a constant).
   Deterministic global *writes* are only dropped when the statically known
   target lies in compartment data; anything else keeps its probe.
2. ``consolidate``: runs of accesses through the same base register within a
   basic block collapse into one range check; return-address CFI probes are
   dropped because every stack write is already checked.
3. ``eschew_reads``: read probes are removed.
4. ``shortcut_heap``: heap type checks with a single candidate type become a
   direct cache comparison.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

from .errors import ConfigurationError
from .trace_model import (
    CompartmentSpec,
    ControlFlowGraph,
    Instruction,
    Operand,
    OperandKind,
    RegionClass,
)

log = logging.getLogger(__name__)


class Category(str, enum.Enum):
    INDIRECT_TRANSFER = "IndirectTransfer"
    MEMORY_ACCESS = "MemoryAccess"
    SUBJECT_SWITCH = "SubjectSwitch"
    ALLOCATION_CALL = "AllocationCall"
    FREE_CALL = "FreeCall"
    NONE = "None"


class Access(str, enum.Enum):
    READ = "Read"
    WRITE = "Write"


class CheckKind(str, enum.Enum):
    CFI = "CfiCheck"
    STACK_RANGE = "StackRangeCheck"
    HEAP_TYPE = "HeapTypeCheck"
    GLOBAL_ACCESS = "GlobalAccessCheck"
    STACK_SWITCH = "StackSwitch"
    HEAP_DIVERT = "HeapDivert"
    ARG = "ArgCheck"
    RET = "RetCheck"
    CONSOLIDATED_RANGE = "ConsolidatedRangeCheck"
    SHORTCUT_CACHE = "ShortcutCacheCheck"


MEMORY_CHECKS = frozenset({CheckKind.STACK_RANGE, CheckKind.HEAP_TYPE, CheckKind.GLOBAL_ACCESS,
                           CheckKind.CONSOLIDATED_RANGE, CheckKind.SHORTCUT_CACHE})

PASSES = ("skip_deterministic", "consolidate", "eschew_reads", "shortcut_heap")

STACK_REGS = frozenset({"rsp", "rbp", "esp", "ebp"})
IP_REGS = frozenset({"rip", "eip"})
RETURN_SLOT = "return-slot"

_PREFIXES = frozenset({"rep", "repe", "repz", "repne", "repnz", "lock"})
# two-operand ops whose memory destination is read-modify-written
_RMW = frozenset({"mov", "movabs", "add", "sub", "and", "or", "xor", "adc", "sbb", "inc", "dec",
                  "neg", "not", "shl", "shr", "sar", "sal", "rol", "ror", "imul", "cmov", "setcc",
                  "out", "in"})
_SWAP = frozenset({"xchg", "cmpxchg", "xadd"})
_READ_ONLY = frozenset({"cmp", "test", "bt"})
_STRING = frozenset({"stos", "movs"})
_NO_MEMORY = frozenset({"lea", "nop", "leave", "hlt", "int3", "ud2", "endbr64", "cpuid", "cltq",
                        "cqto", "cdq", "pause", "mfence", "lfence", "sfence"})
_BRANCHES = frozenset({"call", "jmp", "ret", "jcc"})
KNOWN_MNEMONICS = _RMW | _SWAP | _READ_ONLY | _STRING | _NO_MEMORY | _BRANCHES | {"push", "pop"}


def normalize_mnemonic(mnemonic: str) -> tuple[str, bool]:
    """Map a raw mnemonic to its base form; also report a ``rep`` prefix.

    ``movq`` -> ``mov``, ``rep stosq`` -> ``stos``, ``jne`` -> ``jcc``.
    """
    tokens = mnemonic.lower().split()
    rep = len(tokens) > 1 and tokens[0].startswith("rep")
    while len(tokens) > 1 and tokens[0] in _PREFIXES:
        tokens = tokens[1:]
    core = tokens[0] if tokens else ""
    if core in KNOWN_MNEMONICS:
        return core, rep
    if core.startswith("j") and core != "jmp" and not core.startswith("jmp"):
        return "jcc", rep
    if core.startswith("cmov"):
        return "cmov", rep
    if core.startswith("set"):
        return "setcc", rep
    if core in ("movsb", "movsw", "movsl", "movsq"):
        return "movs", rep
    if core.startswith(("movz", "movsx", "movsb", "movsw", "movsl")):
        # zero/sign-extending loads behave like mov with a register destination
        return "mov", rep
    if core[:-1] in KNOWN_MNEMONICS and core[-1] in "bwlq":
        return core[:-1], rep
    return core, rep


@dataclass(frozen=True)
class InstructionClass:
    category: Category
    access: Access | None = None
    target_loc: str | None = None
    deterministic_addr: bool = False
    mem: Operand | None = None
    callee: int | None = None
    warning: str | None = None

    def __post_init__(self):
        if self.category is Category.INDIRECT_TRANSFER and not self.target_loc:
            raise ValueError("indirect transfers must record where the target resides")
        if self.category is Category.MEMORY_ACCESS and self.access is None:
            raise ValueError("memory accesses must record their direction")

    def to_dict(self) -> dict:
        out = {"category": self.category.value, "deterministic_addr": self.deterministic_addr}
        if self.access is not None:
            out["access"] = self.access.value
        if self.target_loc is not None:
            out["target_loc"] = self.target_loc
        if self.mem is not None:
            out["mem"] = self.mem.to_dict()
        if self.callee is not None:
            out["callee"] = self.callee
        if self.warning is not None:
            out["warning"] = self.warning
        return out

    @classmethod
    def from_dict(cls, d: Mapping) -> "InstructionClass":
        return cls(
            category=Category(d["category"]),
            access=Access(d["access"]) if d.get("access") else None,
            target_loc=d.get("target_loc"),
            deterministic_addr=bool(d.get("deterministic_addr", False)),
            mem=Operand.from_dict(d["mem"]) if d.get("mem") else None,
            callee=d.get("callee"),
            warning=d.get("warning"),
        )


def is_deterministic(mem: Operand) -> bool:
    """True when the address is fixed once the function's frame exists."""
    if mem.index is not None:
        return False
    return mem.base is None or mem.base in IP_REGS or mem.base in STACK_REGS


def _memory_class(access: Access, mem: Operand) -> InstructionClass:
    return InstructionClass(Category.MEMORY_ACCESS, access=access, target_loc=mem.expression(),
                            deterministic_addr=is_deterministic(mem), mem=mem)


def classify_instruction(insn: Instruction, spec: CompartmentSpec | None = None) -> InstructionClass:
    """Return the single enforcement category of ``insn``.

    ``spec`` supplies allocator/free callees and call-out sites; without it
    every direct call classifies as ``None``. Unknown mnemonics also map to
    ``None`` and carry a warning instead of failing.
    """
    base, rep = normalize_mnemonic(insn.mnemonic)
    ops = insn.operands
    op0 = ops[0] if ops else None

    if base == "ret":
        return InstructionClass(Category.INDIRECT_TRANSFER, target_loc=RETURN_SLOT)
    if base in ("call", "jmp"):
        if op0 is None:
            return _unknown(insn, "branch without target operand")
        if op0.kind in (OperandKind.REGISTER, OperandKind.MEMREF):
            return InstructionClass(Category.INDIRECT_TRANSFER, target_loc=op0.expression(),
                                    mem=op0 if op0.kind is OperandKind.MEMREF else None)
        if base == "call" and spec is not None:
            callee = op0.value
            if callee in spec.allocators:
                return InstructionClass(Category.ALLOCATION_CALL, callee=callee)
            if callee in spec.free_functions:
                return InstructionClass(Category.FREE_CALL, callee=callee)
            if insn.addr in spec.external_calls:
                return InstructionClass(Category.SUBJECT_SWITCH, callee=callee)
        return InstructionClass(Category.NONE, callee=op0.value)
    if base == "jcc" or base in _NO_MEMORY:
        return InstructionClass(Category.NONE)

    mems = [op for op in ops if op.kind is OperandKind.MEMREF]
    if base == "push":
        return _memory_class(Access.WRITE, Operand(OperandKind.MEMREF, base="rsp", disp=-8, size=8))
    if base == "pop":
        if mems:
            return _memory_class(Access.WRITE, mems[-1])
        return _memory_class(Access.READ, Operand(OperandKind.MEMREF, base="rsp", disp=0, size=8))
    if base in _STRING:
        if mems and ops[-1].kind is OperandKind.MEMREF:
            return _memory_class(Access.WRITE, ops[-1])
        implicit = Operand(OperandKind.MEMREF, base="rdi", index="rcx" if rep else None,
                           scale=1 if rep else None, disp=0)
        return _memory_class(Access.WRITE, implicit)
    if base not in KNOWN_MNEMONICS:
        return _unknown(insn, f"unknown mnemonic {insn.mnemonic!r}")
    if not mems:
        return InstructionClass(Category.NONE)
    if base in _SWAP:
        return _memory_class(Access.WRITE, mems[0])
    if base not in _READ_ONLY and ops[-1].kind is OperandKind.MEMREF:
        return _memory_class(Access.WRITE, ops[-1])
    return _memory_class(Access.READ, mems[0])


def _unknown(insn: Instruction, why: str) -> InstructionClass:
    log.warning("%s at %#x: %s; classified as None", insn.symbol, insn.addr, why)
    return InstructionClass(Category.NONE, warning=why)


@dataclass(frozen=True)
class ProbeSpec:
    cls: InstructionClass
    check: CheckKind
    aux: tuple[CheckKind, ...] = ()
    expected_types: frozenset = frozenset()
    min_off: int | None = None
    max_off: int | None = None
    width: int | None = None
    anchor_off: int | None = None
    covers: tuple[int, ...] = ()
    cache_ref: int | None = None

    @property
    def checks(self) -> tuple[CheckKind, ...]:
        return (self.check,) + self.aux

    def without_primary(self) -> "ProbeSpec | None":
        """Drop the primary check; an auxiliary check is promoted if present."""
        if not self.aux:
            return None
        return ProbeSpec(self.cls, self.aux[0], self.aux[1:], self.expected_types)

    def to_dict(self) -> dict:
        check = {"kind": self.check.value}
        for name in ("min_off", "max_off", "width", "anchor_off", "cache_ref"):
            v = getattr(self, name)
            if v is not None:
                check[name] = v
        if self.covers:
            check["covers"] = list(self.covers)
        out = {"class": self.cls.to_dict(), "check": check}
        if self.aux:
            out["aux"] = [a.value for a in self.aux]
        if self.expected_types:
            out["expected_types"] = sorted(self.expected_types)
        return out

    @classmethod
    def from_dict(cls, d: Mapping) -> "ProbeSpec":
        c = d["check"]
        return cls(
            cls=InstructionClass.from_dict(d["class"]),
            check=CheckKind(c["kind"]),
            aux=tuple(CheckKind(a) for a in d.get("aux", [])),
            expected_types=frozenset(d.get("expected_types", [])),
            min_off=c.get("min_off"),
            max_off=c.get("max_off"),
            width=c.get("width"),
            anchor_off=c.get("anchor_off"),
            covers=tuple(c.get("covers", [])),
            cache_ref=c.get("cache_ref"),
        )


@dataclass(frozen=True)
class ReductionStats:
    total_candidates: int = 0
    after_optimization: int = 0
    per_pass_removed: Mapping[str, int] = field(default_factory=lambda: {p: 0 for p in PASSES})
    rewritten: Mapping[str, int] = field(default_factory=dict)

    def fraction(self, pass_name: str) -> float:
        if not self.total_candidates:
            return 0.0
        return self.per_pass_removed.get(pass_name, 0) / self.total_candidates

    @property
    def total_removed(self) -> int:
        return sum(self.per_pass_removed.values())

    @property
    def reduction(self) -> float:
        return self.total_removed / self.total_candidates if self.total_candidates else 0.0

    def to_dict(self) -> dict:
        return {
            "total_candidates": self.total_candidates,
            "after_optimization": self.after_optimization,
            "per_pass_removed": {p: {"count": self.per_pass_removed.get(p, 0),
                                     "fraction": round(self.fraction(p), 6)} for p in PASSES},
            "rewritten": dict(sorted(self.rewritten.items())),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ReductionStats":
        removed = {p: int(v["count"]) for p, v in d.get("per_pass_removed", {}).items()}
        return cls(int(d.get("total_candidates", 0)), int(d.get("after_optimization", 0)),
                   {p: removed.get(p, 0) for p in PASSES}, dict(d.get("rewritten", {})))


@dataclass(frozen=True)
class EnforcementPlan:
    probes: Mapping[int, ProbeSpec]
    stats: ReductionStats = field(default_factory=ReductionStats)
    optimized: bool = False

    def to_dict(self) -> dict:
        return {
            "optimized": self.optimized,
            "probes": {str(a): p.to_dict() for a, p in sorted(self.probes.items())},
            "stats": self.stats.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "EnforcementPlan":
        return cls({int(a): ProbeSpec.from_dict(p) for a, p in d["probes"].items()},
                   ReductionStats.from_dict(d.get("stats", {})), bool(d.get("optimized", False)))


def memory_check_for(klass: InstructionClass) -> CheckKind:
    mem = klass.mem
    if mem.base in STACK_REGS:
        return CheckKind.STACK_RANGE
    if (mem.base is None and mem.index is None) or mem.base in IP_REGS:
        return CheckKind.GLOBAL_ACCESS
    return CheckKind.HEAP_TYPE


_PRIMARY = {
    Category.INDIRECT_TRANSFER: CheckKind.CFI,
    Category.ALLOCATION_CALL: CheckKind.HEAP_DIVERT,
    Category.FREE_CALL: CheckKind.HEAP_DIVERT,
    Category.SUBJECT_SWITCH: CheckKind.STACK_SWITCH,
}


def build_plan(ir: Iterable[Instruction], cfg: ControlFlowGraph, spec: CompartmentSpec) -> EnforcementPlan:
    """Attach one probe to every in-compartment instruction that needs enforcement."""
    ir = sorted(ir, key=lambda i: i.addr)
    spec.check_entries(ir)
    next_addr = {a.addr: b.addr for a, b in zip(ir, ir[1:])}
    probes: dict[int, ProbeSpec] = {}
    missing = []

    def add_aux(addr, insn, kind):
        if addr in probes:
            p = probes[addr]
            if kind != p.check and kind not in p.aux:
                probes[addr] = replace(p, aux=p.aux + (kind,))
        else:
            probes[addr] = ProbeSpec(classify_instruction(insn, spec), kind)

    by_addr = {i.addr: i for i in ir}
    for insn in ir:
        if not spec.in_compartment(insn.addr):
            continue
        klass = classify_instruction(insn, spec)
        if klass.category is Category.NONE:
            continue
        if klass.category is Category.INDIRECT_TRANSFER and insn.addr not in cfg.legal_targets:
            missing.append(insn.addr)
        if klass.category is Category.MEMORY_ACCESS:
            check = memory_check_for(klass)
        else:
            check = _PRIMARY[klass.category]
        expected = frozenset(spec.access_types.get(insn.addr, ()))
        probes[insn.addr] = ProbeSpec(klass, check, expected_types=expected)
    if missing:
        raise ConfigurationError("indirect-transfer sites missing from the CFG", missing)

    firsts = {}
    for insn in ir:
        if spec.in_compartment(insn.addr) and insn.func in spec.entry_functions:
            firsts.setdefault(insn.func, insn)
    for insn in firsts.values():
        add_aux(insn.addr, insn, CheckKind.STACK_SWITCH)
    for site, callee in sorted(spec.external_calls.items()):
        if site not in by_addr or not spec.in_compartment(site):
            continue
        add_aux(site, by_addr[site], CheckKind.STACK_SWITCH)
        contract = spec.interface_contracts.get(callee)
        if contract is not None and contract.args:
            add_aux(site, by_addr[site], CheckKind.ARG)
        back = next_addr.get(site)
        if back is not None and spec.in_compartment(back):
            add_aux(back, by_addr[back], CheckKind.STACK_SWITCH)
    for insn in ir:
        if not spec.in_compartment(insn.addr) or insn.func not in spec.entry_functions:
            continue
        contract = spec.interface_contracts.get(insn.func)
        if contract is not None and contract.ret is not None and normalize_mnemonic(insn.mnemonic)[0] == "ret":
            add_aux(insn.addr, insn, CheckKind.RET)

    n = len(probes)
    stats = ReductionStats(n, n, {p: 0 for p in PASSES}, {})
    return EnforcementPlan(dict(sorted(probes.items())), stats, optimized=False)


def _static_target(probe: ProbeSpec, addr: int, next_addr: Mapping[int, int]) -> int | None:
    mem = probe.cls.mem
    if mem.base in IP_REGS:
        nxt = next_addr.get(addr)
        return None if nxt is None else (nxt + (mem.disp or 0)) % (1 << 64)
    return (mem.disp or 0) % (1 << 64)


def _writes_register(insn: Instruction, reg: str) -> bool:
    base, _ = normalize_mnemonic(insn.mnemonic)
    if base in _READ_ONLY or base == "push":
        return False
    ops = insn.operands
    if base in _SWAP:
        return any(o.kind is OperandKind.REGISTER and o.reg == reg for o in ops)
    if base in _STRING and reg in ("rdi", "rsi", "rcx"):
        return True
    return bool(ops) and ops[-1].kind is OperandKind.REGISTER and ops[-1].reg == reg


def _ends_block(insn: Instruction) -> bool:
    return normalize_mnemonic(insn.mnemonic)[0] in _BRANCHES


def _pass_skip_deterministic(probes, ir, spec, next_addr):
    out = {}
    for addr, p in probes.items():
        k = p.cls
        if (k.category is Category.MEMORY_ACCESS and k.deterministic_addr
                and p.check in (CheckKind.STACK_RANGE, CheckKind.GLOBAL_ACCESS)):
            safe = True
            if p.check is CheckKind.GLOBAL_ACCESS and k.access is Access.WRITE:
                target = _static_target(p, addr, next_addr)
                region = None if target is None else spec.static_region(target)
                safe = (region is not None and region[2] is RegionClass.COMPARTMENT_DATA
                        and target + k.mem.width <= region[1])
            if safe:
                p = p.without_primary()
                if p is None:
                    continue
        out[addr] = p
    return out


def _pass_consolidate(probes, ir, spec):
    out = dict(probes)
    for addr, p in probes.items():
        if p.check is CheckKind.CFI and p.cls.target_loc == RETURN_SLOT:
            q = p.without_primary()
            if q is None:
                del out[addr]
            else:
                out[addr] = q

    leaders = set()
    for insn in ir:
        base, _ = normalize_mnemonic(insn.mnemonic)
        if base in ("jmp", "jcc") and insn.operands and insn.operands[0].kind in (
                OperandKind.ADDRESS, OperandKind.CODE):
            leaders.add(insn.operands[0].value)

    groups = []
    open_groups: dict[tuple, list[int]] = {}

    def close(keys):
        for key in keys:
            members = open_groups.pop(key)
            if len(members) > 1:
                groups.append(members)

    prev_func = None
    for insn in ir:
        if insn.func != prev_func or insn.addr in leaders:
            close(list(open_groups))
        prev_func = insn.func
        p = out.get(insn.addr)
        if (p is not None and p.check is CheckKind.HEAP_TYPE and p.cls.mem is not None
                and p.cls.mem.index is None and p.cls.mem.base is not None):
            key = (p.cls.mem.base, p.cls.access)
            open_groups.setdefault(key, []).append(insn.addr)
        clobbered = [k for k in open_groups if _writes_register(insn, k[0])]
        close(clobbered)
        if _ends_block(insn):
            close(list(open_groups))
    close(list(open_groups))

    for members in groups:
        anchor = members[0]
        mems = [out[m].cls.mem for m in members]
        offs = [m.disp or 0 for m in mems]
        lo = min(offs)
        hi = max(offs)
        end = max(o + m.width for o, m in zip(offs, mems))
        types = frozenset().union(*(out[m].expected_types for m in members))
        first = out[anchor]
        out[anchor] = ProbeSpec(first.cls, CheckKind.CONSOLIDATED_RANGE, first.aux, types,
                                min_off=lo, max_off=hi, width=end - hi,
                                anchor_off=offs[0], covers=tuple(members))
        for m in members[1:]:
            q = out[m].without_primary()
            if q is None:
                del out[m]
            else:
                out[m] = q
    return out


def _pass_eschew_reads(probes):
    out = {}
    for addr, p in probes.items():
        if p.check in MEMORY_CHECKS and p.cls.access is Access.READ:
            p = p.without_primary()
            if p is None:
                continue
        out[addr] = p
    return out


def _pass_shortcut(probes):
    out = {}
    rewritten = 0
    for addr, p in probes.items():
        if p.check is CheckKind.HEAP_TYPE and len(p.expected_types) == 1:
            (only,) = p.expected_types
            p = replace(p, check=CheckKind.SHORTCUT_CACHE, cache_ref=only)
            rewritten += 1
        out[addr] = p
    return out, rewritten


def optimize_plan(plan: EnforcementPlan, ir: Iterable[Instruction], spec: CompartmentSpec) -> EnforcementPlan:
    """Run the four reduction passes in order; a pure function of its inputs."""
    if plan.optimized:
        raise ValueError("plan is already optimized")
    ir = sorted(ir, key=lambda i: i.addr)
    next_addr = {a.addr: b.addr for a, b in zip(ir, ir[1:])}
    removed = {}
    probes = dict(plan.probes)

    before = len(probes)
    probes = _pass_skip_deterministic(probes, ir, spec, next_addr)
    removed["skip_deterministic"] = before - len(probes)

    before = len(probes)
    probes = _pass_consolidate(probes, ir, spec)
    removed["consolidate"] = before - len(probes)

    before = len(probes)
    probes = _pass_eschew_reads(probes)
    removed["eschew_reads"] = before - len(probes)

    probes, rewritten = _pass_shortcut(probes)
    removed["shortcut_heap"] = 0

    stats = ReductionStats(plan.stats.total_candidates, len(probes), removed,
                           {"shortcut_heap": rewritten})
    return EnforcementPlan(dict(sorted(probes.items())), stats, optimized=True)


def reduction_report(plan: EnforcementPlan) -> ReductionStats:
    return plan.stats


def format_report(stats: ReductionStats) -> str:
    lines = [f"probe candidates: {stats.total_candidates}",
             f"after optimization: {stats.after_optimization}"]
    for p in PASSES:
        lines.append(f"  {p:<20} removed {stats.per_pass_removed.get(p, 0):>6}  ({stats.fraction(p):7.2%})")
    for p, n in sorted(stats.rewritten.items()):
        lines.append(f"  {p:<20} rewrote {n:>6}")
    lines.append(f"total reduction: {stats.reduction:.2%}")
    return "\n".join(lines)
