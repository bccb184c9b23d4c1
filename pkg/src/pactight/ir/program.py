"""Program model for the mini-IR plus its text reader and printer.

Grammar (one form per line inside functions, ``;`` starts a comment)::

    (type NAME TYPE)
    (global NAME TYPE [INIT])
    (func NAME (%p ...) [:gadget]
      INSTR ...)
    (attack (goal FUNC ...) (at POINT [HIT] ACTION ...) ...)
    (instrumented LEVEL [:ovwrt] [:ret MODE])

See docs/ir.md for the instruction set.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional

from .sexpr import ParseError, SExpr, read_all, write
from .types import MiniType, TypeTable, format_type, parse_type

# operand signature per opcode: r=dest register, v=value, t=type, n=name,
# ?x optional, *v trailing values, +v one or more values
OPS: Dict[str, str] = {
    "alloca": "r t ?v",
    "malloc": "r t ?v",
    "free": "v t",
    "store": "v v t",
    "load": "r v t",
    "gep": "r v t v",
    "field": "r v t n",
    "bitcast": "r v t",
    "mov": "r v",
    "add": "r v v",
    "sub": "r v v",
    "mul": "r v v",
    "and": "r v v",
    "xor": "r v v",
    "lt": "r v v",
    "eq": "r v v",
    "cmpptr": "r v v",
    "label": "n",
    "br": "n",
    "brif": "v n",
    "call": "v *v",
    "icall": "v t *v",
    "setvptr": "v n",
    "vcall": "v n v *v",
    "ret": "?v",
    "out": "v",
    "point": "n",
    "pct_add_tag": "v t v",
    "pct_sign": "v t",
    "pct_auth": "v t ?v",
    "pct_rm_tag": "+v",
    "pct_save": "v",
    "pct_restore": "v",
}
CALL_OPS = ("call", "icall", "vcall")
PCT_OPS = ("pct_add_tag", "pct_sign", "pct_auth", "pct_rm_tag", "pct_save", "pct_restore")
TERMINATORS = ("br", "brif", "ret", "label")


@dataclass
class Instr:
    op: str
    args: list
    dst: Optional[str] = None
    line: int = 0

    def to_sexpr(self) -> list:
        return [self.op] + ([self.dst] if self.dst else []) + list(self.args)

    def __str__(self):
        return write(self.to_sexpr())

    def uses(self) -> List[str]:
        """Registers read by this instruction."""
        out = []

        def walk(x):
            if isinstance(x, str) and x.startswith("%"):
                out.append(x)
            elif isinstance(x, list) and x and x[0] in ("+", "-"):
                for y in x[1:]:
                    walk(y)

        sig = OPS[self.op].split()
        if sig[0] == "r":
            sig = sig[1:]
        for i, a in enumerate(self.args):
            kind = sig[min(i, len(sig) - 1)].lstrip("?*+")
            if kind == "v":
                walk(a)
        return out


@dataclass
class Function:
    name: str
    params: List[str]
    body: List[Instr]
    gadget: bool = False
    fid: int = 0

    def labels(self) -> Dict[str, int]:
        return {ins.args[0]: i for i, ins in enumerate(self.body) if ins.op == "label"}


@dataclass
class Global:
    name: str
    type: MiniType
    init: Optional[object] = None


@dataclass
class AttackScript:
    goals: List[str] = field(default_factory=list)
    steps: List[list] = field(default_factory=list)

    def to_sexpr(self) -> list:
        out = ["attack", ["goal"] + self.goals]
        return out + self.steps


@dataclass
class Program:
    types: TypeTable
    globals: List[Global]
    functions: Dict[str, Function]
    attack: Optional[AttackScript] = None
    instrumented: Optional[dict] = None
    name: str = ""

    def function(self, name: str) -> Function:
        return self.functions[name]

    def global_(self, name: str) -> Optional[Global]:
        for g in self.globals:
            if g.name == name:
                return g
        return None

    def copy(self) -> "Program":
        import copy
        return copy.deepcopy(self)


def _parse_instr(form: list) -> Instr:
    if not form or not isinstance(form[0], str) or form[0] not in OPS:
        raise ParseError(f"unknown instruction {write(form)}", getattr(form, "line", 0))
    op = form[0]
    args = list(form[1:])
    sig = OPS[op].split()
    dst = None
    if sig[0] == "r":
        if not args or not isinstance(args[0], str) or not args[0].startswith("%"):
            raise ParseError(f"{op} needs a destination register", getattr(form, "line", 0))
        dst = args.pop(0)
        sig = sig[1:]
    elif op in CALL_OPS and len(args) >= 2 and isinstance(args[0], str) and args[0].startswith("%") \
            and (op == "call" or (isinstance(args[1], str) and args[1].startswith("%"))):
        dst = args.pop(0)
    required = [s for s in sig if not s.startswith(("?", "*"))]
    if len(args) < len(required):
        raise ParseError(f"{op} expects {OPS[op]}", getattr(form, "line", 0))
    if not any(s.startswith(("*", "+")) for s in sig) and len(args) > len(sig):
        raise ParseError(f"{op} expects {OPS[op]}", getattr(form, "line", 0))
    for i, s in enumerate(sig):
        if s.lstrip("?") == "t" and i < len(args):
            args[i] = format_type(parse_type(args[i]))
    return Instr(op, args, dst, getattr(form, "line", 0))


def parse_program(text: str, name: str = "") -> Program:
    types: Dict[str, MiniType] = {}
    globals_: List[Global] = []
    functions: Dict[str, Function] = {}
    attack = None
    instrumented = None
    for form in read_all(text):
        line = getattr(form, "line", 0)
        if not isinstance(form, list) or not form:
            raise ParseError(f"unexpected top-level atom {form!r}", line)
        head = form[0]
        if head == "type" and len(form) == 3:
            types[form[1]] = parse_type(form[2])
        elif head == "global" and len(form) in (3, 4):
            globals_.append(Global(form[1], parse_type(form[2]), form[3] if len(form) == 4 else None))
        elif head == "func" and len(form) >= 3 and isinstance(form[2], list):
            fname = form[1]
            if fname in functions:
                raise ParseError(f"duplicate function {fname}", line)
            rest = list(form[3:])
            gadget = False
            while rest and rest[0] == ":gadget":
                gadget = True
                rest.pop(0)
            body = [_parse_instr(x) for x in rest]
            functions[fname] = Function(fname, list(form[2]), body, gadget)
        elif head == "attack":
            attack = AttackScript()
            for item in form[1:]:
                if isinstance(item, list) and item and item[0] == "goal":
                    attack.goals.extend(str(g).lstrip("@") for g in item[1:])
                elif isinstance(item, list) and item and item[0] == "at":
                    attack.steps.append(list(item))
                else:
                    raise ParseError(f"bad attack item {write(item)}", line)
        elif head == "instrumented" and len(form) >= 2:
            instrumented = {"level": form[1], "ovwrt": ":ovwrt" in form, "ret": "none"}
            if ":ret" in form:
                instrumented["ret"] = form[form.index(":ret") + 1]
        else:
            raise ParseError(f"unknown top-level form {write(form)[:60]}", line)
    prog = Program(TypeTable(types), globals_, functions, attack, instrumented, name)
    assign_function_ids(prog)
    validate(prog)
    return prog


def assign_function_ids(prog: Program):
    for i, f in enumerate(prog.functions.values(), start=1):
        f.fid = i


def validate(prog: Program):
    prog.types.check_finite()
    names = set(prog.functions)
    globals_ = {g.name for g in prog.globals}
    for f in prog.functions.values():
        labels = f.labels()
        for ins in f.body:
            if ins.op == "call" and str(ins.args[0]).lstrip("@") not in names:
                raise ParseError(f"{f.name}: call to unknown function {ins.args[0]}", ins.line)
            if ins.op in ("br", "brif") and ins.args[-1] not in labels:
                raise ParseError(f"{f.name}: unknown label {ins.args[-1]}", ins.line)
            for a in ins.args:
                if isinstance(a, str) and a.startswith("@"):
                    n = a[1:]
                    if n not in names and n not in globals_ and not n.startswith("vt."):
                        raise ParseError(f"{f.name}: unknown symbol {a}", ins.line)
    if "main" not in prog.functions:
        raise ParseError("program has no main function")


def format_program(prog: Program) -> str:
    lines = []
    if prog.instrumented:
        hdr = ["instrumented", prog.instrumented["level"]]
        if prog.instrumented.get("ovwrt"):
            hdr.append(":ovwrt")
        if prog.instrumented.get("ret", "none") != "none":
            hdr += [":ret", prog.instrumented["ret"]]
        lines.append(write(hdr))
    for name, t in prog.types.named.items():
        lines.append(write(["type", name, format_type(t)]))
    for g in prog.globals:
        form = ["global", g.name, format_type(g.type)]
        if g.init is not None:
            form.append(g.init)
        lines.append(write(form))
    for f in prog.functions.values():
        head = "(func " + f.name + " " + write(list(f.params)) + (" :gadget" if f.gadget else "")
        body = ["  " + str(ins) for ins in f.body]
        if body:
            body[-1] += ")"
            lines.append(head)
            lines.extend(body)
        else:
            lines.append(head + ")")
    if prog.attack:
        lines.append("(attack")
        lines.append("  " + write(["goal"] + prog.attack.goals))
        for step in prog.attack.steps:
            lines.append("  " + write(step))
        lines[-1] += ")"
    return "\n".join(lines) + "\n"
