"""Portable data model: instruction IR, runtime traces, CFG and compartment spec.

Both the IR (``.o2cir.jsonl``) and traces (``.o2ctrace.jsonl``) are UTF-8 JSON
Lines. Addresses and values are unsigned 64-bit integers written in decimal;
object payloads are lowercase hex. Everything here is immutable after parsing.

Operand order follows AT&T syntax: sources first, destination last.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .errors import ParseError, SchemaError, StructuralError

U64 = 1 << 64
PAGE_SIZE = 4096


class OperandKind(str, enum.Enum):
    REGISTER = "Register"
    IMMEDIATE = "Immediate"
    MEMREF = "MemRef"
    ADDRESS = "Address"
    CODE = "Code"


class EventKind(str, enum.Enum):
    ALLOC = "Alloc"
    FREE = "Free"
    READ = "Read"
    WRITE = "Write"
    INDIRECT_CALL = "IndirectCall"
    INDIRECT_JUMP = "IndirectJump"
    RETURN = "Return"
    DIRECT_CALL = "DirectCall"
    ENTER = "EnterCompartment"
    EXIT = "ExitCompartment"
    ARG_PASS = "ArgPass"
    RETURN_VALUE = "ReturnValue"


class Allocator(str, enum.Enum):
    SLAB = "Slab"
    BUDDY = "Buddy"
    VMALLOC = "Vmalloc"


class RegionClass(str, enum.Enum):
    """Object classes of the access-control table."""

    KERNEL_CODE = "KernelCode"
    KERNEL_DATA = "KernelData"
    KERNEL_HEAP = "KernelHeap"
    KERNEL_STACK = "KernelStack"
    BPF_PROGRAMS = "BpfPrograms"
    COMPARTMENT_CODE = "CompartmentCode"
    COMPARTMENT_DATA = "CompartmentData"
    COMPARTMENT_HEAP = "CompartmentHeap"
    COMPARTMENT_STACK = "CompartmentStack"


# fields each event kind must carry besides tick/kind
REQUIRED_EVENT_FIELDS = {
    EventKind.ALLOC: ("site", "addr", "size", "allocator"),
    EventKind.FREE: ("addr",),
    EventKind.READ: ("site", "addr", "size"),
    EventKind.WRITE: ("site", "addr", "size"),
    EventKind.INDIRECT_CALL: ("site", "value"),
    EventKind.INDIRECT_JUMP: ("site", "value"),
    EventKind.RETURN: ("site", "value"),
    EventKind.DIRECT_CALL: ("site", "value"),
    EventKind.ENTER: ("site",),
    EventKind.EXIT: ("site",),
    EventKind.ARG_PASS: ("site", "value"),
    EventKind.RETURN_VALUE: ("site", "value"),
}


def _u64(value, what, line=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError(f"{what} must be an integer, got {value!r}", line)
    if not 0 <= value < U64:
        raise SchemaError(f"{what} out of unsigned 64-bit range: {value}", line)
    return value


def to_signed(value: int) -> int:
    """Reinterpret an unsigned 64-bit value as two's complement."""
    return value - U64 if value >= 1 << 63 else value


def to_unsigned(value: int) -> int:
    return value % U64


@dataclass(frozen=True)
class Operand:
    kind: OperandKind
    reg: str | None = None
    base: str | None = None
    index: str | None = None
    scale: int | None = None
    disp: int | None = None
    value: int | None = None
    size: int | None = None  # access width in bytes, MemRef only

    def __post_init__(self):
        if self.kind is OperandKind.MEMREF and self.base is None and self.disp is None:
            raise SchemaError("MemRef operand needs a base or a displacement")
        if self.kind in (OperandKind.ADDRESS, OperandKind.CODE) and self.value is None:
            raise SchemaError(f"{self.kind.value} operand needs a concrete target value")
        if self.kind is OperandKind.REGISTER and not self.reg:
            raise SchemaError("Register operand needs a register name")

    @property
    def width(self) -> int:
        return self.size or 8

    def expression(self) -> str:
        """Render the location as a compact expression, e.g. ``(rsp+rax*8+16)``."""
        if self.kind is OperandKind.REGISTER:
            return self.reg
        if self.kind is not OperandKind.MEMREF:
            return hex(self.value or 0)
        parts = []
        if self.base:
            parts.append(self.base)
        if self.index:
            parts.append(f"{self.index}*{self.scale or 1}")
        if self.disp or not parts:
            parts.append(hex(self.disp or 0) if (self.disp or 0) >= 0 else "-" + hex(-self.disp))
        return "(" + "+".join(parts).replace("+-", "-") + ")"

    def to_dict(self) -> dict:
        out = {"kind": self.kind.value}
        for name in ("reg", "base", "index", "scale", "disp", "value", "size"):
            v = getattr(self, name)
            if v is not None:
                out[name] = v
        return out

    @classmethod
    def from_dict(cls, d: Mapping, line=None) -> "Operand":
        if not isinstance(d, Mapping) or "kind" not in d:
            raise SchemaError("operand must be an object with a 'kind'", line)
        try:
            kind = OperandKind(d["kind"])
        except ValueError:
            raise SchemaError(f"unknown operand kind {d['kind']!r}", line) from None
        unknown = set(d) - {"kind", "reg", "base", "index", "scale", "disp", "value", "size"}
        if unknown:
            raise SchemaError(f"unknown operand fields {sorted(unknown)}", line)
        value = d.get("value")
        if value is not None and kind is not OperandKind.IMMEDIATE:
            _u64(value, "operand value", line)
        try:
            return cls(kind=kind, reg=d.get("reg"), base=d.get("base"), index=d.get("index"),
                       scale=d.get("scale"), disp=d.get("disp"), value=value, size=d.get("size"))
        except SchemaError as exc:
            raise SchemaError(str(exc), line) from None


@dataclass(frozen=True)
class Instruction:
    addr: int
    func: str
    offset: int
    mnemonic: str
    operands: tuple[Operand, ...] = ()
    is_compartment: bool = False

    @property
    def symbol(self) -> str:
        """``func+offset`` form used as a human-readable key."""
        return f"{self.func}+{self.offset:#x}"

    def to_dict(self) -> dict:
        return {
            "addr": self.addr,
            "func": self.func,
            "offset": self.offset,
            "mnemonic": self.mnemonic,
            "operands": [op.to_dict() for op in self.operands],
            "is_compartment": self.is_compartment,
        }

    @classmethod
    def from_dict(cls, d: Mapping, line=None) -> "Instruction":
        for name in ("addr", "func", "offset", "mnemonic"):
            if name not in d:
                raise SchemaError(f"instruction missing {name!r}", line)
        offset = d["offset"]
        if not isinstance(offset, int) or offset < 0:
            raise SchemaError("offset must be a non-negative integer", line)
        if not isinstance(d["mnemonic"], str) or not d["mnemonic"]:
            raise SchemaError("mnemonic must be a non-empty string", line)
        ops = d.get("operands", [])
        if not isinstance(ops, list) or len(ops) > 3:
            raise SchemaError("operands must be a list of at most 3 entries", line)
        return cls(
            addr=_u64(d["addr"], "addr", line),
            func=str(d["func"]),
            offset=offset,
            mnemonic=d["mnemonic"],
            operands=tuple(Operand.from_dict(o, line) for o in ops),
            is_compartment=bool(d.get("is_compartment", False)),
        )


@dataclass(frozen=True)
class TypeInfo:
    id: int
    name: str
    nominal_size: int

    def __post_init__(self):
        if not 1 <= self.nominal_size <= 2 * PAGE_SIZE:
            raise SchemaError(f"type {self.id}: nominal_size must lie in [1, 8192]")


@dataclass(frozen=True)
class TraceEvent:
    tick: int
    kind: EventKind
    site: int | None = None
    addr: int | None = None
    size: int | None = None
    type_id: int | None = None
    allocator: Allocator | None = None
    payload: bytes | None = None
    value: int | None = None
    pre_t0: bool = False
    callee: str | None = None
    index: int | None = None

    def to_dict(self) -> dict:
        out = {"tick": self.tick, "kind": self.kind.value}
        for name in ("site", "addr", "size", "type_id", "value", "callee", "index"):
            v = getattr(self, name)
            if v is not None:
                out[name] = v
        if self.allocator is not None:
            out["allocator"] = self.allocator.value
        if self.payload is not None:
            out["payload"] = self.payload.hex()
        if self.pre_t0:
            out["pre_t0"] = True
        return out

    @classmethod
    def from_dict(cls, d: Mapping, line=None) -> "TraceEvent":
        if "tick" not in d or "kind" not in d:
            raise SchemaError("event needs 'tick' and 'kind'", line)
        try:
            kind = EventKind(d["kind"])
        except ValueError:
            raise SchemaError(f"unknown event kind {d['kind']!r}", line) from None
        for name in REQUIRED_EVENT_FIELDS[kind]:
            if d.get(name) is None:
                raise SchemaError(f"{kind.value} event missing {name!r}", line)
        kw = {}
        for name in ("site", "addr", "value"):
            if d.get(name) is not None:
                kw[name] = _u64(d[name], name, line)
        if d.get("size") is not None:
            kw["size"] = _u64(d["size"], "size", line)
            if kind is EventKind.ALLOC and kw["size"] == 0:
                raise SchemaError("Alloc size must be > 0", line)
        if d.get("type_id") is not None:
            kw["type_id"] = int(d["type_id"])
        if d.get("allocator") is not None:
            try:
                kw["allocator"] = Allocator(d["allocator"])
            except ValueError:
                raise SchemaError(f"unknown allocator {d['allocator']!r}", line) from None
        if d.get("payload") is not None:
            try:
                kw["payload"] = bytes.fromhex(d["payload"])
            except (ValueError, TypeError):
                raise SchemaError("payload must be a hex string", line) from None
        if d.get("callee") is not None:
            kw["callee"] = str(d["callee"])
        if d.get("index") is not None:
            kw["index"] = int(d["index"])
        tick = d["tick"]
        if isinstance(tick, bool) or not isinstance(tick, int):
            raise SchemaError("tick must be an integer", line)
        return cls(tick=tick, kind=kind, pre_t0=bool(d.get("pre_t0", False)), **kw)


@dataclass(frozen=True)
class ControlFlowGraph:
    legal_targets: Mapping[int, frozenset]

    def to_dict(self) -> dict:
        return {"legal_targets": {str(k): sorted(v) for k, v in sorted(self.legal_targets.items())}}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ControlFlowGraph":
        targets = {}
        for k, v in d.get("legal_targets", {}).items():
            if not v:
                raise StructuralError(f"CFG site {k} has an empty target set")
            targets[int(k)] = frozenset(_u64(t, "target") for t in v)
        return cls(targets)


@dataclass(frozen=True)
class Predicate:
    """Range predicate over an argument or return value.

    ``mode`` is ``"in"`` (value must fall in one of the inclusive ranges) or
    ``"not_in"``. With ``signed`` the value is read as two's complement first.
    """

    mode: str
    ranges: tuple[tuple[int, int], ...]
    signed: bool = False

    def holds(self, value: int) -> bool:
        v = to_signed(value) if self.signed else value
        inside = any(lo <= v <= hi for lo, hi in self.ranges)
        return inside if self.mode == "in" else not inside

    def to_dict(self) -> dict:
        return {"mode": self.mode, "ranges": [list(r) for r in self.ranges], "signed": self.signed}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Predicate":
        if d.get("mode") not in ("in", "not_in"):
            raise SchemaError(f"predicate mode must be 'in' or 'not_in', got {d.get('mode')!r}")
        return cls(d["mode"], tuple((int(lo), int(hi)) for lo, hi in d["ranges"]),
                   bool(d.get("signed", False)))


@dataclass(frozen=True)
class Contract:
    args: Mapping[int, Predicate] = field(default_factory=dict)
    ret: Predicate | None = None

    def to_dict(self) -> dict:
        out = {"args": {str(k): p.to_dict() for k, p in sorted(self.args.items())}}
        if self.ret is not None:
            out["ret"] = self.ret.to_dict()
        return out

    @classmethod
    def from_dict(cls, d: Mapping) -> "Contract":
        args = {int(k): Predicate.from_dict(v) for k, v in d.get("args", {}).items()}
        ret = Predicate.from_dict(d["ret"]) if d.get("ret") else None
        return cls(args, ret)


@dataclass(frozen=True)
class CompartmentSpec:
    """What the administrator declares about the compartment.

    Besides the code ranges and interface this carries the static facts the
    analyzer consumes but does not compute: allocator/free callees, expected
    object types per access site, and the static memory layout.
    """

    code_ranges: tuple[tuple[int, int], ...] = ()
    entry_functions: frozenset = frozenset()
    external_calls: Mapping[int, str] = field(default_factory=dict)
    co_owned_types: frozenset = frozenset()
    interface_contracts: Mapping[str, Contract] = field(default_factory=dict)
    allocators: Mapping[int, Allocator] = field(default_factory=dict)
    free_functions: frozenset = frozenset()
    access_types: Mapping[int, frozenset] = field(default_factory=dict)
    memory_map: tuple[tuple[int, int, RegionClass], ...] = ()
    stack_arena: int = 0xFFFFC90100000000
    stack_size: int = 4 * PAGE_SIZE
    compartment_types: frozenset = frozenset()
    types: Mapping[int, TypeInfo] = field(default_factory=dict)

    def __post_init__(self):
        ranges = sorted(self.code_ranges)
        for (lo, hi), (lo2, _) in zip(ranges, ranges[1:]):
            if lo2 < hi:
                raise StructuralError(f"code ranges overlap at {lo2:#x}")
        for lo, hi in ranges:
            if lo >= hi:
                raise StructuralError(f"empty or inverted code range [{lo:#x}, {hi:#x})")

    def in_compartment(self, addr: int | None) -> bool:
        return addr is not None and any(lo <= addr < hi for lo, hi in self.code_ranges)

    def static_region(self, addr: int) -> tuple[int, int, RegionClass] | None:
        for lo, hi in self.code_ranges:
            if lo <= addr < hi:
                return lo, hi, RegionClass.COMPARTMENT_CODE
        for lo, hi, cls in self.memory_map:
            if lo <= addr < hi:
                return lo, hi, cls
        return None

    def labels_in_compartment(self, type_id: int) -> bool:
        # co-owned types are labeled as compartment types
        return type_id in self.compartment_types or type_id in self.co_owned_types

    def to_dict(self) -> dict:
        return {
            "code_ranges": [list(r) for r in self.code_ranges],
            "entry_functions": sorted(self.entry_functions),
            "external_calls": {str(k): v for k, v in sorted(self.external_calls.items())},
            "co_owned_types": sorted(self.co_owned_types),
            "interface_contracts": {k: c.to_dict() for k, c in sorted(self.interface_contracts.items())},
            "allocators": {str(k): v.value for k, v in sorted(self.allocators.items())},
            "free_functions": sorted(self.free_functions),
            "access_types": {str(k): sorted(v) for k, v in sorted(self.access_types.items())},
            "memory_map": [[lo, hi, cls.value] for lo, hi, cls in self.memory_map],
            "stack_arena": self.stack_arena,
            "stack_size": self.stack_size,
            "compartment_types": sorted(self.compartment_types),
            "types": [{"id": t.id, "name": t.name, "nominal_size": t.nominal_size}
                      for _, t in sorted(self.types.items())],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "CompartmentSpec":
        types = {}
        for t in d.get("types", []):
            info = TypeInfo(int(t["id"]), str(t["name"]), int(t["nominal_size"]))
            if info.id in types:
                raise StructuralError(f"duplicate type id {info.id}")
            types[info.id] = info
        spec = cls(
            code_ranges=tuple((int(lo), int(hi)) for lo, hi in d.get("code_ranges", [])),
            entry_functions=frozenset(d.get("entry_functions", [])),
            external_calls={int(k): str(v) for k, v in d.get("external_calls", {}).items()},
            co_owned_types=frozenset(int(t) for t in d.get("co_owned_types", [])),
            interface_contracts={k: Contract.from_dict(v)
                                 for k, v in d.get("interface_contracts", {}).items()},
            allocators={int(k): Allocator(v) for k, v in d.get("allocators", {}).items()},
            free_functions=frozenset(int(a) for a in d.get("free_functions", [])),
            access_types={int(k): frozenset(int(t) for t in v)
                          for k, v in d.get("access_types", {}).items()},
            memory_map=tuple((int(lo), int(hi), RegionClass(c)) for lo, hi, c in d.get("memory_map", [])),
            stack_arena=int(d.get("stack_arena", cls.stack_arena)),
            stack_size=int(d.get("stack_size", cls.stack_size)),
            compartment_types=frozenset(int(t) for t in d.get("compartment_types", [])),
            types=types,
        )
        return spec

    def check_entries(self, ir: Iterable[Instruction]) -> None:
        """Entry functions must live inside the compartment's code ranges."""
        inside = {i.func for i in ir if self.in_compartment(i.addr)}
        missing = sorted(set(self.entry_functions) - inside)
        if missing:
            raise StructuralError(f"entry functions outside the compartment: {missing}")


def _iter_json_lines(stream):
    if isinstance(stream, str):
        stream = stream.splitlines()
    for lineno, raw in enumerate(stream, start=1):
        raw = raw.strip()
        if not raw:
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON ({exc.msg})", lineno) from None
        if not isinstance(obj, dict):
            raise ParseError("each line must hold a JSON object", lineno)
        yield lineno, obj


def parse_ir(stream) -> list[Instruction]:
    """Parse instruction IR lines into instructions sorted by address."""
    seen = {}
    for lineno, obj in _iter_json_lines(stream):
        insn = Instruction.from_dict(obj, lineno)
        if insn.addr in seen:
            raise StructuralError(
                f"duplicate instruction address {insn.addr} (lines {seen[insn.addr][0]} and {lineno})")
        seen[insn.addr] = (lineno, insn)
    return [insn for _, insn in sorted((a, v[1]) for a, v in seen.items())]


def parse_trace(stream) -> list[TraceEvent]:
    events = []
    last = None
    for lineno, obj in _iter_json_lines(stream):
        ev = TraceEvent.from_dict(obj, lineno)
        if last is not None and ev.tick <= last:
            raise StructuralError(f"line {lineno}: tick {ev.tick} does not increase (previous {last})")
        last = ev.tick
        events.append(ev)
    return events


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def dump_ir(ir: Iterable[Instruction]) -> str:
    return "".join(_dumps(i.to_dict()) + "\n" for i in ir)


def dump_trace(trace: Iterable[TraceEvent]) -> str:
    return "".join(_dumps(e.to_dict()) + "\n" for e in trace)


def load_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def read_ir(path) -> list[Instruction]:
    with open(path, encoding="utf-8") as fh:
        return parse_ir(fh)


def read_trace(path) -> list[TraceEvent]:
    with open(path, encoding="utf-8") as fh:
        return parse_trace(fh)


def read_cfg(path) -> ControlFlowGraph:
    return ControlFlowGraph.from_dict(load_json(path))


def read_spec(path) -> CompartmentSpec:
    return CompartmentSpec.from_dict(load_json(path))
