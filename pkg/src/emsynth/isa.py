"""AVR instruction subset: catalog, assembly parser, execution-path flattening."""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

OP_CLASSES = ("arithmetic", "logic", "flag", "branch", "transfer", "io", "nop")

# operand kinds used in the catalog "operands" column
_REGISTER = re.compile(r"^r([0-9]|[12][0-9]|3[01])$")
_IMMEDIATE = re.compile(r"^(0x[0-9a-f]+|\$[0-9a-f]+|0b[01]+|-?[0-9]+)$")
_IDENT = re.compile(r"^[a-z_][a-z0-9_]*$")
_LABEL_LINE = re.compile(r"^([A-Za-z_.][A-Za-z0-9_.]*)\s*:\s*(.*)$")

TAKEN_SUFFIX = ".taken"


class CatalogError(ValueError):
    """Unknown mnemonic or malformed catalog row."""


class ParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class PathError(ValueError):
    pass


@dataclass(frozen=True)
class CatalogEntry:
    mnemonic: str
    cycles: int
    op_class: str
    operands: tuple[str, ...] = ()
    taken_cycles: int | None = None

    @property
    def conditional(self) -> bool:
        return self.taken_cycles is not None


class Catalog:
    """Mnemonic table loaded from a ``mnemonic,cycles,op_class[,operands,taken_cycles]`` CSV."""

    def __init__(self, entries: Iterable[CatalogEntry], name: str = "custom"):
        self.name = name
        self._entries: dict[str, CatalogEntry] = {}
        for e in entries:
            if e.op_class not in OP_CLASSES:
                raise CatalogError(f"{e.mnemonic}: unknown op_class {e.op_class!r}")
            if e.cycles < 1 or (e.taken_cycles is not None and e.taken_cycles < 1):
                raise CatalogError(f"{e.mnemonic}: cycles must be >= 1")
            self._entries[e.mnemonic] = e

    @classmethod
    def from_csv(cls, text: str, name: str = "custom") -> Catalog:
        rows = csv.DictReader(io.StringIO(text))
        missing = {"mnemonic", "cycles", "op_class"} - set(rows.fieldnames or ())
        if missing:
            raise CatalogError(f"catalog is missing columns: {sorted(missing)}")
        entries = []
        for row in rows:
            mn = row["mnemonic"].strip().lower()
            if not mn:
                continue
            try:
                cycles = int(row["cycles"])
                taken = (row.get("taken_cycles") or "").strip()
                entries.append(CatalogEntry(
                    mnemonic=mn,
                    cycles=cycles,
                    op_class=row["op_class"].strip(),
                    operands=tuple((row.get("operands") or "").split()),
                    taken_cycles=int(taken) if taken else None,
                ))
            except ValueError as exc:
                raise CatalogError(f"{mn}: {exc}") from None
        return cls(entries, name=name)

    @classmethod
    def load(cls, path: str | Path) -> Catalog:
        path = Path(path)
        return cls.from_csv(path.read_text(), name=path.stem)

    def __contains__(self, mnemonic: str) -> bool:
        return mnemonic in self._entries

    def __getitem__(self, mnemonic: str) -> CatalogEntry:
        try:
            return self._entries[mnemonic]
        except KeyError:
            raise CatalogError(f"unknown mnemonic {mnemonic!r}") from None

    def __iter__(self):
        return iter(self._entries.values())

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def mnemonics(self) -> list[str]:
        return list(self._entries)

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("mnemonic,cycles,op_class,operands,taken_cycles\n")
        for e in self._entries.values():
            taken = "" if e.taken_cycles is None else str(e.taken_cycles)
            out.write(f"{e.mnemonic},{e.cycles},{e.op_class},{' '.join(e.operands)},{taken}\n")
        return out.getvalue()

    def digest(self) -> str:
        return hashlib.sha256(self.to_csv().encode()).hexdigest()

    def instruction(self, mnemonic: str, operands: Sequence[str] = (), taken: bool = False) -> Instruction:
        entry = self[mnemonic]
        if taken and not entry.conditional:
            raise CatalogError(f"{mnemonic} is not a conditional branch")
        cycles = entry.taken_cycles if taken else entry.cycles
        return Instruction(mnemonic, tuple(operands), cycles, entry.op_class, taken)


def _load_packaged(name: str) -> Catalog:
    text = resources.files("emsynth.data").joinpath(f"{name}.csv").read_text()
    return Catalog.from_csv(text, name=name)


def default_catalog() -> Catalog:
    """Datasheet cycle counts for the supported subset."""
    return _load_packaged("avr_catalog")


def calibration_catalog() -> Catalog:
    """Tick table that reproduces the reference capture lengths (25 samples per tick)."""
    return _load_packaged("calibration_catalog")


@dataclass(frozen=True)
class Instruction:
    mnemonic: str
    operands: tuple[str, ...]
    cycles: int
    op_class: str
    taken: bool = False

    @property
    def signal_key(self) -> str:
        """Token identifying the emitted signal; taken branches emit differently."""
        return self.mnemonic + TAKEN_SUFFIX if self.taken else self.mnemonic

    def render(self) -> str:
        if not self.operands:
            return self.mnemonic
        return f"{self.mnemonic} {', '.join(self.operands)}"

    def __str__(self) -> str:
        return self.render()


@dataclass(frozen=True)
class Program:
    name: str
    setup: tuple[Instruction, ...]
    loop_body: tuple[Instruction, ...]
    labels: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.loop_body:
            raise ParseError(f"program {self.name!r} has an empty loop body")
        if sum(i.cycles for i in self.loop_body) <= 0:
            raise ParseError(f"program {self.name!r} has a zero-cycle loop body")
        for ins in self.loop_body:
            if ins.op_class == "branch" and ins.operands and ins.operands[0] not in self.labels:
                raise ParseError(f"unresolved label {ins.operands[0]!r}")

    def branch_sites(self, catalog: Catalog | None = None) -> list[int]:
        catalog = catalog or default_catalog()
        return [
            i for i, ins in enumerate(self.loop_body)
            if ins.mnemonic in catalog and catalog[ins.mnemonic].conditional
        ]


@dataclass(frozen=True)
class ExecutionPath:
    program: Program = field(repr=False, compare=True)
    instructions: tuple[Instruction, ...]
    path_id: int = 0

    def __len__(self) -> int:
        return len(self.instructions)

    @property
    def cycles(self) -> int:
        return sum(i.cycles for i in self.instructions)

    @property
    def mnemonics(self) -> list[str]:
        return [i.mnemonic for i in self.instructions]

    def digest(self) -> str:
        text = "\n".join(f"{i.signal_key}/{i.cycles}" for i in self.instructions)
        return hashlib.sha256(text.encode()).hexdigest()


def _check_operands(entry: CatalogEntry, operands: list[str], lineno: int) -> None:
    if len(operands) != len(entry.operands):
        raise ParseError(
            f"{entry.mnemonic} expects {len(entry.operands)} operand(s), got {len(operands)}", lineno
        )
    for kind, op in zip(entry.operands, operands):
        ok = True
        if kind == "r":
            ok = bool(_REGISTER.match(op))
        elif kind == "d":
            m = _REGISTER.match(op)
            ok = bool(m) and int(m.group(1)) >= 16
        elif kind == "k":
            ok = bool(_IMMEDIATE.match(op))
        elif kind == "b":
            ok = op.isdigit() and 0 <= int(op) <= 7
        elif kind == "p":
            ok = bool(_IDENT.match(op) or _IMMEDIATE.match(op))
        elif kind == "l":
            ok = bool(_IDENT.match(op))
        if not ok:
            raise ParseError(f"malformed operand {op!r} for {entry.mnemonic}", lineno)


def _parse_line(text: str, catalog: Catalog, lineno: int) -> Instruction:
    parts = text.split(None, 1)
    mnemonic = parts[0].lower()
    if mnemonic not in catalog:
        raise CatalogError(f"line {lineno}: unknown mnemonic {mnemonic!r}")
    operands = []
    if len(parts) > 1:
        operands = [op.strip().lower() for op in parts[1].split(",")]
        if any(not op for op in operands):
            raise ParseError(f"empty operand in {text!r}", lineno)
    _check_operands(catalog[mnemonic], operands, lineno)
    return catalog.instruction(mnemonic, operands)


def parse_instructions(source: str, catalog: Catalog | None = None) -> list[Instruction]:
    """Parse label-free instruction lines, e.g. an injection payload."""
    catalog = catalog or default_catalog()
    out = []
    for lineno, raw in enumerate(source.splitlines(), 1):
        text = raw.split(";", 1)[0].strip()
        if text:
            out.append(_parse_line(text, catalog, lineno))
    return out


def parse_program(source: str, name: str = "program", catalog: Catalog | None = None,
                  loop_label: str = "loop") -> Program:
    """Parse assembly source into a Program.

    Instructions before the ``loop:`` label form the setup section; the loop
    body starts at that label. Without a ``loop:`` label the whole source is
    the loop body.
    """
    catalog = catalog or default_catalog()
    lines: list[tuple[int, str | None, str | None]] = []
    for lineno, raw in enumerate(source.splitlines(), 1):
        text = raw.split(";", 1)[0].strip()
        while text:
            m = _LABEL_LINE.match(text)
            if m:
                lines.append((lineno, m.group(1).lower(), None))
                text = m.group(2).strip()
            else:
                lines.append((lineno, None, text))
                text = ""

    has_loop = any(label == loop_label for _, label, _ in lines)
    setup: list[Instruction] = []
    body: list[Instruction] = []
    body_lines: list[int] = []
    labels: dict[str, int] = {}
    in_loop = not has_loop
    for lineno, label, text in lines:
        if label is not None:
            if label == loop_label:
                in_loop = True
            if in_loop:
                if label in labels:
                    raise ParseError(f"duplicate label {label!r}", lineno)
                labels[label] = len(body)
            continue
        ins = _parse_line(text, catalog, lineno)
        if in_loop:
            body.append(ins)
            body_lines.append(lineno)
        else:
            setup.append(ins)

    if not body:
        raise ParseError(f"program {name!r} has an empty loop body")
    for ins, lineno in zip(body, body_lines):
        if ins.op_class == "branch" and ins.operands and ins.operands[0] not in labels:
            raise ParseError(f"unresolved label {ins.operands[0]!r}", lineno)
    return Program(name, tuple(setup), tuple(body), labels)


def render_program(program: Program) -> str:
    lines = []
    if program.setup:
        lines.append("setup:")
        lines.extend(f"    {ins.render()}" for ins in program.setup)
    by_index: dict[int, list[str]] = {}
    for label, idx in program.labels.items():
        by_index.setdefault(idx, []).append(label)
    for idx in range(len(program.loop_body) + 1):
        for label in by_index.get(idx, []):
            lines.append(f"{label}:")
        if idx < len(program.loop_body):
            lines.append(f"    {program.loop_body[idx].render()}")
    return "\n".join(lines) + "\n"


def load_program(path: str | Path, catalog: Catalog | None = None) -> Program:
    path = Path(path)
    return parse_program(path.read_text(), name=path.stem, catalog=catalog)


def _trace_iteration(program: Program, catalog: Catalog, resolutions: Mapping[int, bool],
                     max_steps: int) -> tuple[list[Instruction], int | None]:
    """Walk one loop iteration. Returns (instructions, unresolved site) where the
    site is the first conditional branch without a resolution, if any."""
    body = program.loop_body
    out: list[Instruction] = []
    pc = 0
    for _ in range(max_steps):
        ins = body[pc]
        entry = catalog[ins.mnemonic]
        target = program.labels[ins.operands[0]] if ins.op_class == "branch" and ins.operands else None
        if entry.conditional:
            if pc not in resolutions:
                return out, pc
            taken = resolutions[pc]
            out.append(catalog.instruction(ins.mnemonic, ins.operands, taken=taken))
            pc = target if taken else pc + 1
        elif target is not None:
            out.append(ins)
            pc = target
        else:
            out.append(ins)
            pc += 1
        if pc == 0 or pc >= len(body):
            return out, None
    raise PathError(f"program {program.name!r}: iteration does not terminate within {max_steps} steps")


def flatten_paths(program: Program, branch_resolutions: Mapping[int, bool] | None = None,
                  catalog: Catalog | None = None, max_paths: int = 64) -> list[ExecutionPath]:
    """Enumerate the execution paths of one loop iteration.

    ``branch_resolutions`` maps loop-body indices of conditional branches to
    taken (True) / not taken (False). Unresolved sites that are reached are
    enumerated both ways.
    """
    catalog = catalog or default_catalog()
    fixed = dict(branch_resolutions or {})
    sites = program.branch_sites(catalog)
    for site in fixed:
        if site not in sites:
            raise PathError(f"index {site} is not a conditional branch site")
    max_steps = 64 * len(program.loop_body)

    found: list[tuple[Instruction, ...]] = []
    stack = [fixed]
    while stack:
        res = stack.pop()
        ins, open_site = _trace_iteration(program, catalog, res, max_steps)
        if open_site is None:
            seq = tuple(ins)
            if seq not in found:
                found.append(seq)
            if len(found) > max_paths:
                unresolved = len([s for s in sites if s not in fixed])
                raise PathError(
                    f"program {program.name!r}: more than {max_paths} paths "
                    f"({unresolved} unresolved conditional branches)"
                )
            continue
        # push not-taken last so it is explored first
        stack.append({**res, open_site: True})
        stack.append({**res, open_site: False})
    return [ExecutionPath(program, seq, i) for i, seq in enumerate(found)]


def single_path(program: Program, catalog: Catalog | None = None, taken: bool = True) -> ExecutionPath:
    """The path with every conditional branch resolved the same way."""
    catalog = catalog or default_catalog()
    res = {site: taken for site in program.branch_sites(catalog)}
    return flatten_paths(program, res, catalog)[0]


def inject(path: ExecutionPath, position: int, payload: Sequence[Instruction]) -> ExecutionPath:
    if not 0 <= position <= len(path.instructions):
        raise PathError(f"injection position {position} outside [0, {len(path.instructions)}]")
    ins = path.instructions[:position] + tuple(payload) + path.instructions[position:]
    return replace(path, instructions=ins)


def delete(path: ExecutionPath, position: int, count: int) -> ExecutionPath:
    if not 0 <= position <= position + count <= len(path.instructions) or count < 0:
        raise PathError(f"cannot delete {count} instruction(s) at {position}")
    return replace(path, instructions=path.instructions[:position] + path.instructions[position + count:])


def position_after(path: ExecutionPath, rendered: str, occurrence: int = 0) -> int:
    """Index just past the ``occurrence``-th instruction rendering as ``rendered``."""
    target = " ".join(rendered.lower().replace(",", " , ").split())
    hits = [i for i, ins in enumerate(path.instructions)
            if " ".join(ins.render().replace(",", " , ").split()) == target]
    if len(hits) <= occurrence:
        raise PathError(f"{rendered!r} not found in path")
    return hits[occurrence] + 1


def all_pairs(mnemonics: Iterable[str]) -> list[tuple[str, str]]:
    ms = list(mnemonics)
    return list(itertools.product(ms, ms))
