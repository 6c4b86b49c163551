"""SSA/CFG intermediate representation: data model, parser, printer, validator, DOT export.

Operands are plain Python values: ``int`` for literals, ``"%name"`` strings for
SSA values and the string ``"undef"`` for the distinguished poison payload.
"""

from __future__ import annotations

import copy
import re
from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

Operand = Union[int, str]
UNDEF = "undef"

TERMINATORS = {"br", "condbr", "switch", "ret"}
BINOPS = {"add", "sub", "mul"}
CMP_CODES = {"lt", "gt", "le", "ge", "eq", "ne"}
CHANNEL_OPS = {"send_ld_addr", "send_st_addr", "consume_val", "produce_val"}
MEMORY_OPS = {"load", "store"}
REQUEST_OPS = {"load", "store", "send_ld_addr", "send_st_addr"}
# instructions that have a result value
VALUE_OPS = {"const", "add", "sub", "mul", "icmp", "select", "phi", "load", "opaque", "consume_val"}
ALL_OPS = VALUE_OPS | {"store", "send_ld_addr", "send_st_addr", "produce_val"} | TERMINATORS


class IRError(Exception):
    """Raised for malformed IR text or violated IR invariants."""

    def __init__(self, message: str, line: int = 0, col: int = 0):
        self.line = line
        self.col = col
        where = f"{line}:{col}: " if line else ""
        super().__init__(where + message)


@dataclass
class Instruction:
    op: str
    dest: Optional[str] = None
    args: list = field(default_factory=list)
    labels: list = field(default_factory=list)  # phi incoming blocks / branch targets
    array: Optional[str] = None
    cc: Optional[str] = None
    func: Optional[str] = None
    site: Optional[str] = None  # request-site tag for memory and channel ops

    @property
    def is_terminator(self) -> bool:
        return self.op in TERMINATORS

    def uses(self) -> list:
        return [a for a in self.args if is_value(a)]

    def replace_uses(self, mapping: dict) -> None:
        self.args = [mapping.get(a, a) if is_value(a) else a for a in self.args]

    @property
    def is_poison(self) -> bool:
        return self.op == "produce_val" and self.args[1] == 1

    def __str__(self) -> str:
        return format_instruction(self)


@dataclass
class BasicBlock:
    id: str
    instrs: list = field(default_factory=list)
    term: Instruction = field(default_factory=lambda: Instruction("ret"))

    def successors(self) -> list:
        return list(self.term.labels) if self.term.op != "ret" else []

    def phis(self) -> list:
        return [i for i in self.instrs if i.op == "phi"]

    def body(self) -> list:
        return [i for i in self.instrs if i.op != "phi"]

    def all_instrs(self) -> list:
        return self.instrs + [self.term]


@dataclass
class Function:
    name: str
    params: list = field(default_factory=list)  # "%N" names
    blocks: list = field(default_factory=list)

    @property
    def entry(self) -> str:
        return self.blocks[0].id

    def block(self, bid: str) -> BasicBlock:
        for b in self.blocks:
            if b.id == bid:
                return b
        raise KeyError(bid)

    def block_map(self) -> dict:
        return {b.id: b for b in self.blocks}

    def has_block(self, bid: str) -> bool:
        return any(b.id == bid for b in self.blocks)

    def successors(self) -> dict:
        return {b.id: b.successors() for b in self.blocks}

    def predecessors(self) -> dict:
        preds = {b.id: [] for b in self.blocks}
        for b in self.blocks:
            for s in b.successors():
                if b.id not in preds[s]:
                    preds[s].append(b.id)
        return preds

    def edges(self) -> list:
        return [(b.id, s) for b in self.blocks for s in dict.fromkeys(b.successors())]

    def instructions(self) -> Iterable:
        for b in self.blocks:
            yield from b.all_instrs()

    def definitions(self) -> dict:
        """Map SSA name -> (block id, instruction)."""
        defs = {p: (None, None) for p in self.params}
        for b in self.blocks:
            for ins in b.instrs:
                if ins.dest:
                    defs[ins.dest] = (b.id, ins)
        return defs

    def fresh_label(self, prefix: str = "") -> str:
        """Next unused numeric block label (Fig-style sequential numbering)."""
        nums = [int(b.id[len(prefix):]) for b in self.blocks
                if b.id.startswith(prefix) and b.id[len(prefix):].isdigit()]
        n = max(nums, default=0) + 1
        return f"{prefix}{n}"

    def fresh_value(self, stem: str) -> str:
        taken = set(self.definitions())
        n = 0
        while f"%{stem}{n}" in taken:
            n += 1
        return f"%{stem}{n}"

    def copy(self) -> "Function":
        return copy.deepcopy(self)


@dataclass
class ArrayDecl:
    name: str
    size: int


@dataclass
class Program:
    functions: list = field(default_factory=list)
    arrays: list = field(default_factory=list)

    def function(self, name: Optional[str] = None) -> Function:
        if name is None:
            return self.functions[0]
        for f in self.functions:
            if f.name == name:
                return f
        raise KeyError(name)

    def array_sizes(self) -> dict:
        return {a.name: a.size for a in self.arrays}


def is_value(op) -> bool:
    return isinstance(op, str) and op.startswith("%")


def label_key(label: str):
    """Natural ordering for block ids: numeric runs compare as integers."""
    return tuple((0, int(t), "") if t.isdigit() else (1, 0, t)
                 for t in re.findall(r"\d+|\D+", label))


# ---------------------------------------------------------------- printing

def format_operand(op) -> str:
    return str(op)


def format_instruction(ins: Instruction) -> str:
    a = [format_operand(x) for x in ins.args]
    op = ins.op
    if op == "const":
        s = f"const {a[0]}"
    elif op in BINOPS:
        s = f"{op} {a[0]}, {a[1]}"
    elif op == "icmp":
        s = f"icmp {ins.cc} {a[0]}, {a[1]}"
    elif op == "select":
        s = f"select {a[0]}, {a[1]}, {a[2]}"
    elif op == "phi":
        s = "phi " + ", ".join(f"[{v}, {l}]" for v, l in zip(a, ins.labels))
    elif op == "load":
        s = f"load @{ins.array}[{a[0]}]"
    elif op == "opaque":
        s = f"opaque {ins.func}(" + ", ".join(a) + ")"
    elif op == "consume_val":
        s = f"consume_val @{ins.array}"
    elif op == "store":
        s = f"store @{ins.array}[{a[0]}], {a[1]}"
    elif op in ("send_ld_addr", "send_st_addr"):
        s = f"{op} @{ins.array}[{a[0]}]"
    elif op == "produce_val":
        s = f"produce_val @{ins.array}, {a[0]}, {a[1]}"
    elif op == "br":
        s = f"br {ins.labels[0]}"
    elif op == "condbr":
        s = f"condbr {a[0]}, {ins.labels[0]}, {ins.labels[1]}"
    elif op == "switch":
        s = f"switch {a[0]}, " + ", ".join(ins.labels)
    elif op == "ret":
        s = "ret"
    else:
        raise IRError(f"unknown opcode {op!r}")
    if ins.dest:
        s = f"{ins.dest} = {s}"
    if ins.site is not None:
        s += f" !{ins.site}"
    return s


def print_function(f: Function) -> str:
    lines = [f"func @{f.name}(" + ", ".join(f.params) + ") {"]
    for b in f.blocks:
        lines.append(f"{b.id}:")
        for ins in b.instrs:
            lines.append(f"  {format_instruction(ins)}")
        lines.append(f"  {format_instruction(b.term)}")
    lines.append("}")
    return "\n".join(lines)


def print_program(p: Program) -> str:
    out = [f"array @{a.name}[{a.size}]" for a in p.arrays]
    if out:
        out.append("")
    out.append("\n\n".join(print_function(f) for f in p.functions))
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------- parsing

_TOKEN = re.compile(r"\s*(?:(%[A-Za-z0-9_.]+)|(@[A-Za-z0-9_.]+)|(![A-Za-z0-9_.]+)|(-?\d+)"
                    r"|([A-Za-z_][A-Za-z0-9_.]*)|([\[\](),=:{}]))")


def _tokenize(line: str, lineno: int) -> list:
    toks = []
    pos = 0
    line = line.rstrip()
    while pos < len(line):
        if line[pos:].strip() == "":
            break
        m = _TOKEN.match(line, pos)
        if not m:
            raise IRError(f"unexpected character {line[pos:].strip()[0]!r}", lineno, pos + 1)
        kind = m.lastindex
        text = m.group(kind)
        col = m.start(kind) + 1
        if kind == 4:
            toks.append(("int", int(text), col))
        elif kind == 5:
            toks.append(("word", text, col))
        else:
            toks.append(({1: "val", 2: "glob", 3: "site", 6: "punct"}[kind], text, col))
        pos = m.end()
    return toks


class _Cursor:
    def __init__(self, toks, lineno):
        self.toks = toks
        self.i = 0
        self.lineno = lineno

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else (None, None, 0)

    def error(self, msg):
        col = self.peek()[2] or (self.toks[-1][2] if self.toks else 1)
        raise IRError(msg, self.lineno, col)

    def next(self, kind=None, text=None):
        tok = self.peek()
        if tok[0] is None:
            self.error("unexpected end of line")
        if kind and tok[0] != kind or text is not None and tok[1] != text:
            self.error(f"expected {text or kind}, got {tok[1]!r}")
        self.i += 1
        return tok[1]

    def accept(self, text):
        if self.peek()[1] == text and self.peek()[0] == "punct":
            self.i += 1
            return True
        return False

    def operand(self):
        kind, text, _ = self.peek()
        if kind in ("val", "int"):
            self.i += 1
            return text
        if kind == "word" and text == UNDEF:
            self.i += 1
            return UNDEF
        self.error(f"expected operand, got {text!r}")

    def label(self):
        kind, text, _ = self.peek()
        if kind in ("word", "int"):
            self.i += 1
            return str(text)
        self.error(f"expected block label, got {text!r}")

    def done(self):
        return self.i >= len(self.toks)


def _parse_instruction(cur: _Cursor) -> Instruction:
    dest = None
    if cur.peek()[0] == "val":
        dest = cur.next("val")
        cur.next("punct", "=")
    kind, op, _ = cur.peek()
    if kind != "word" or op not in ALL_OPS:
        cur.error(f"unknown opcode {op!r}")
    cur.i += 1
    ins = Instruction(op, dest=dest)
    if op == "const":
        ins.args = [cur.next("int")]
    elif op in BINOPS:
        ins.args = [cur.operand()]
        cur.next("punct", ",")
        ins.args.append(cur.operand())
    elif op == "icmp":
        cc = cur.next("word")
        if cc not in CMP_CODES:
            cur.error(f"unknown comparison {cc!r}")
        ins.cc = cc
        ins.args = [cur.operand()]
        cur.next("punct", ",")
        ins.args.append(cur.operand())
    elif op == "select":
        ins.args = [cur.operand()]
        for _ in range(2):
            cur.next("punct", ",")
            ins.args.append(cur.operand())
    elif op == "phi":
        while True:
            cur.next("punct", "[")
            ins.args.append(cur.operand())
            cur.next("punct", ",")
            ins.labels.append(cur.label())
            cur.next("punct", "]")
            if not cur.accept(","):
                break
    elif op in ("load", "send_ld_addr", "send_st_addr", "store"):
        ins.array = cur.next("glob")[1:]
        cur.next("punct", "[")
        ins.args = [cur.operand()]
        cur.next("punct", "]")
        if op == "store":
            cur.next("punct", ",")
            ins.args.append(cur.operand())
    elif op == "opaque":
        ins.func = cur.next("word")
        cur.next("punct", "(")
        if not cur.accept(")"):
            while True:
                ins.args.append(cur.operand())
                if cur.accept(")"):
                    break
                cur.next("punct", ",")
    elif op == "consume_val":
        ins.array = cur.next("glob")[1:]
    elif op == "produce_val":
        ins.array = cur.next("glob")[1:]
        cur.next("punct", ",")
        ins.args = [cur.operand()]
        cur.next("punct", ",")
        ins.args.append(cur.next("int"))
    elif op == "br":
        ins.labels = [cur.label()]
    elif op in ("condbr", "switch"):
        ins.args = [cur.operand()]
        while cur.accept(","):
            ins.labels.append(cur.label())
    if cur.peek()[0] == "site":
        ins.site = cur.next("site")[1:]
    if not cur.done():
        cur.error(f"trailing tokens starting at {cur.peek()[1]!r}")
    needs_dest = op in VALUE_OPS
    if needs_dest and dest is None:
        cur.error(f"{op} requires a result value")
    if not needs_dest and dest is not None:
        cur.error(f"{op} produces no value")
    if op == "condbr" and len(ins.labels) != 2:
        cur.error("condbr takes exactly two targets")
    if op == "switch" and len(ins.labels) < 2:
        cur.error("switch takes at least two targets")
    return ins


def parse_program(text: str, check: bool = True) -> Program:
    """Parse IR text into a :class:`Program`; raises :class:`IRError` on bad input."""
    prog = Program()
    func = None
    block = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split(";", 1)[0]
        toks = _tokenize(line, lineno)
        if not toks:
            continue
        cur = _Cursor(toks, lineno)
        head = toks[0]
        if func is None:
            if head[1] == "array":
                cur.next()
                name = cur.next("glob")[1:]
                cur.next("punct", "[")
                size = cur.next("int")
                cur.next("punct", "]")
                if size <= 0:
                    raise IRError("array size must be positive", lineno, head[2])
                prog.arrays.append(ArrayDecl(name, size))
            elif head[1] == "func":
                cur.next()
                name = cur.next("glob")[1:]
                cur.next("punct", "(")
                params = []
                if not cur.accept(")"):
                    while True:
                        params.append(cur.next("val"))
                        if cur.accept(")"):
                            break
                        cur.next("punct", ",")
                func = Function(name, params)
                if cur.accept("{"):
                    pass
                if not cur.done():
                    # single-line function body: `func @f() { e: ret }`
                    rest = toks[cur.i:]
                    block = _parse_inline_body(func, rest, lineno)
                    if block == "closed":
                        prog.functions.append(func)
                        func, block = None, None
            else:
                raise IRError(f"expected 'array' or 'func', got {head[1]!r}", lineno, head[2])
            continue
        if head[0] == "punct" and head[1] == "}":
            if block is not None:
                raise IRError(f"block {block.id} has no terminator", lineno, head[2])
            prog.functions.append(func)
            func = None
            continue
        if len(toks) >= 2 and toks[1][1] == ":" and toks[1][0] == "punct" and head[0] in ("word", "int"):
            if block is not None:
                raise IRError(f"block {block.id} has no terminator", lineno, head[2])
            block = BasicBlock(str(head[1]))
            if any(b.id == block.id for b in func.blocks):
                raise IRError(f"duplicate block label {block.id}", lineno, head[2])
            func.blocks.append(block)
            rest = toks[2:]
            if rest:
                block = _feed(block, _Cursor(rest, lineno))
            continue
        if block is None:
            raise IRError("instruction outside of a block", lineno, head[2])
        block = _feed(block, cur)
    if func is not None:
        raise IRError(f"function @{func.name} is not closed", len(text.splitlines()), 1)
    if check:
        diags = validate(prog)
        if diags:
            raise IRError("; ".join(diags))
    return prog


def _feed(block, cur):
    ins = _parse_instruction(cur)
    if ins.is_terminator:
        block.term = ins
        return None
    block.instrs.append(ins)
    return block


def _parse_inline_body(func, toks, lineno):
    # Minimal support for one-line bodies made of `label: instr...` terminated by `}`.
    words = toks
    if words and words[-1][1] == "}":
        words = words[:-1]
        closed = True
    else:
        closed = False
    block = None
    i = 0
    while i < len(words):
        if i + 1 < len(words) and words[i + 1][1] == ":" and words[i][0] in ("word", "int"):
            block = BasicBlock(str(words[i][1]))
            func.blocks.append(block)
            i += 2
            continue
        j = i + 1
        while j < len(words) and not (j + 1 < len(words) and words[j + 1][1] == ":"):
            j += 1
        block = _feed(block, _Cursor(words[i:j], lineno))
        i = j
    return "closed" if closed else block


def parse_function(text: str) -> Function:
    return parse_program(text).functions[0]


# ---------------------------------------------------------------- validation

def _reverse_postorder(succ: dict, entry: str) -> list:
    seen, post = set(), []
    stack = [(entry, iter(succ[entry]))]
    seen.add(entry)
    while stack:
        node, it = stack[-1]
        for s in it:
            if s not in seen:
                seen.add(s)
                stack.append((s, iter(succ[s])))
                break
        else:
            post.append(node)
            stack.pop()
    return post[::-1]


def _dominators(f: Function) -> dict:
    succ = f.successors()
    preds = f.predecessors()
    order = _reverse_postorder(succ, f.entry)
    dom = {b: set(order) for b in order}
    dom[f.entry] = {f.entry}
    changed = True
    while changed:
        changed = False
        for b in order[1:]:
            ps = [dom[p] for p in preds[b] if p in dom]
            new = set.intersection(*ps) | {b} if ps else {b}
            if new != dom[b]:
                dom[b] = new
                changed = True
    return dom


def validate_function(f: Function, arrays: Optional[dict] = None) -> list:
    diags = []
    name = f"@{f.name}"
    if not f.blocks:
        return [f"{name}: function has no blocks"]
    labels = [b.id for b in f.blocks]
    if len(set(labels)) != len(labels):
        diags.append(f"{name}: duplicate block label")
    bmap = f.block_map()
    for b in f.blocks:
        for s in b.successors():
            if s not in bmap:
                diags.append(f"{name}: block {b.id} branches to unknown block {s}")
        if b.term.op in ("condbr", "switch") and len(set(b.term.labels)) != len(b.term.labels):
            diags.append(f"{name}: block {b.id} has duplicate branch targets")
        seen_body = False
        for ins in b.instrs:
            if ins.is_terminator:
                diags.append(f"{name}: terminator inside block {b.id}")
            if ins.op == "phi":
                if seen_body:
                    diags.append(f"{name}: phi not at block head in {b.id}")
            else:
                seen_body = True
            if arrays is not None and ins.array is not None and ins.array not in arrays:
                diags.append(f"{name}: unknown array @{ins.array}")
    if diags:
        return diags

    # SSA single definition
    defined = set(f.params)
    for ins in f.instructions():
        if ins.dest:
            if ins.dest in defined:
                diags.append(f"{name}: duplicate SSA definition {ins.dest}")
            defined.add(ins.dest)

    succ = f.successors()
    preds = f.predecessors()
    if preds[f.entry]:
        diags.append(f"{name}: entry block {f.entry} has predecessors")
    reachable = set(_reverse_postorder(succ, f.entry))
    for b in f.blocks:
        if b.id not in reachable:
            diags.append(f"{name}: unreachable block {b.id}")
    if diags:
        return diags

    dom = _dominators(f)
    # reducibility: every retreating DFS edge must target a dominator of its source
    back = []
    order = {b: i for i, b in enumerate(_reverse_postorder(succ, f.entry))}
    for u, v in f.edges():
        if order[v] <= order[u]:
            if v in dom[u]:
                back.append((u, v))
            else:
                diags.append(f"{name}: irreducible control flow (edge {u}->{v})")
    latches = {}
    for u, v in back:
        latches.setdefault(v, []).append(u)
    for h, ls in latches.items():
        if len(ls) > 1:
            diags.append(f"{name}: non-canonical loop at {h} (multiple backedges from {', '.join(ls)})")
    if diags:
        return diags

    # phi incoming sets and def-before-use
    defs = f.definitions()
    pos = {}
    for b in f.blocks:
        for k, ins in enumerate(b.all_instrs()):
            if ins.dest:
                pos[ins.dest] = (b.id, k)
    for b in f.blocks:
        for k, ins in enumerate(b.all_instrs()):
            if ins.op == "phi":
                if sorted(ins.labels) != sorted(preds[b.id]) or len(set(ins.labels)) != len(ins.labels):
                    diags.append(f"{name}: phi {ins.dest} in {b.id} incoming {ins.labels} != preds {preds[b.id]}")
                    continue
                for v, l in zip(ins.args, ins.labels):
                    if is_value(v) and v not in f.params:
                        if v not in defs:
                            diags.append(f"{name}: use of undefined value {v}")
                        elif pos[v][0] not in dom[l]:
                            diags.append(f"{name}: use-before-def of {v} in phi {ins.dest}")
                continue
            for v in ins.uses():
                if v in f.params:
                    continue
                if v not in defs:
                    diags.append(f"{name}: use of undefined value {v}")
                    continue
                db, dk = pos[v]
                if db == b.id:
                    if dk >= k:
                        diags.append(f"{name}: use-before-def of {v} in {b.id}")
                elif db not in dom[b.id]:
                    diags.append(f"{name}: use-before-def of {v} in {b.id} (definition does not dominate)")
    # channel op constraints
    produced = {i.array for i in f.instructions() if i.op == "produce_val"}
    stored = {i.array for i in f.instructions() if i.op == "store"}
    for a in sorted(produced & stored):
        diags.append(f"{name}: store and produce_val coexist for @{a}")
    return diags


def validate(p: Program) -> list:
    """Return diagnostics; empty iff every function is well-formed, SSA, reducible and canonical."""
    diags = []
    names = [f.name for f in p.functions]
    if len(set(names)) != len(names):
        diags.append("duplicate function name")
    anames = [a.name for a in p.arrays]
    if len(set(anames)) != len(anames):
        diags.append("duplicate array name")
    arrays = set(anames)
    for f in p.functions:
        diags.extend(validate_function(f, arrays))
    return diags


def check_function(f: Function, what: str = "") -> None:
    diags = validate_function(f)
    if diags:
        raise IRError((what + ": " if what else "") + "; ".join(diags))


# ---------------------------------------------------------------- isomorphism & DOT

def isomorphic(a: Function, b: Function) -> bool:
    """Structural equality up to SSA value renaming (block labels must match)."""
    if [x.id for x in a.blocks] != [x.id for x in b.blocks] or len(a.params) != len(b.params):
        return False
    ren = dict(zip(a.params, b.params))
    for ba, bb in zip(a.blocks, b.blocks):
        ia, ib = ba.all_instrs(), bb.all_instrs()
        if len(ia) != len(ib):
            return False
        for x, y in zip(ia, ib):
            if x.dest:
                ren[x.dest] = y.dest
    for ba, bb in zip(a.blocks, b.blocks):
        for x, y in zip(ba.all_instrs(), bb.all_instrs()):
            if (x.op, x.labels, x.array, x.cc, x.func, x.site) != (y.op, y.labels, y.array, y.cc, y.func, y.site):
                return False
            if [ren.get(v, v) for v in x.args] != y.args:
                return False
    return True


def _summary(ins: Instruction) -> str:
    s = format_instruction(ins)
    return s.replace('"', '\\"')


def to_dot(f: Function, spec_map=None, plan=None, max_lines: int = 8) -> str:
    """Render one function as a DOT digraph; optional SpecReqMap / PoisonPlan overlays."""
    lines = [f'digraph "{f.name}" {{', "  node [shape=box, fontname=monospace];"]
    hoisted = {}
    if spec_map is not None:
        for bb, reqs in spec_map.items():
            hoisted[bb] = [r.id for r in reqs]
    poisoned = {}
    if plan is not None:
        for act in plan.actions:
            poisoned.setdefault(act.edge, []).append(act.request)
    dom = _dominators(f)
    for b in f.blocks:
        body = [_summary(i) for i in b.all_instrs()]
        if len(body) > max_lines:
            body = body[: max_lines - 1] + ["..."]
        label = [b.id + ":"] + body
        if b.id in hoisted:
            label.append("spec: " + ",".join(hoisted[b.id]))
        text = "\\l".join(label) + "\\l"
        lines.append(f'  "{b.id}" [label="{text}"];')
    for u, v in f.edges():
        attrs = []
        if u in dom and v in dom[u]:
            attrs.append("style=dashed")
        if (u, v) in poisoned:
            attrs.append('label="poison(' + ",".join(poisoned[(u, v)]) + ')"')
        suffix = f" [{', '.join(attrs)}]" if attrs else ""
        lines.append(f'  "{u}" -> "{v}"{suffix};')
    lines.append("}")
    return "\n".join(lines) + "\n"
