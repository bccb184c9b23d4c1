"""Tiny s-expression reader/writer for the IR text format."""
from __future__ import annotations

import re
from typing import List, Union

Atom = Union[str, int]
SExpr = Union[Atom, List["SExpr"]]

_TOKEN = re.compile(r"\s*(?:(;[^\n]*)|(\()|(\))|([^\s();]+))")


class ParseError(ValueError):
    def __init__(self, msg: str, line: int = 0):
        super().__init__(f"line {line}: {msg}" if line else msg)
        self.line = line


def _atom(tok: str) -> Atom:
    try:
        return int(tok, 0)
    except ValueError:
        return tok


def read_all(text: str) -> List[SExpr]:
    """Parse every top-level form; each list records its source line."""
    stack: List[list] = [[]]
    line = 1
    last = 0
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            if text[pos:].strip() == "":
                break
            line += text.count("\n", last, pos)
            raise ParseError(f"unexpected character {text[pos]!r}", line)
        comment, lp, rp, tok = m.groups()
        start = m.start(2) if lp else m.start(3) if rp else m.start(4) if tok is not None else m.start(1)
        line += text.count("\n", last, start)
        last = start
        if lp:
            node = SList()
            node.line = line
            stack[-1].append(node)
            stack.append(node)
        elif rp:
            if len(stack) == 1:
                raise ParseError("unbalanced ')'", line)
            stack.pop()
        elif tok is not None:
            stack[-1].append(_atom(tok))
        pos = m.end()
    if len(stack) != 1:
        raise ParseError("unterminated '('", line)
    return stack[0]


class SList(list):
    line = 0


def write(expr: SExpr) -> str:
    if isinstance(expr, list):
        return "(" + " ".join(write(x) for x in expr) + ")"
    if isinstance(expr, bool):
        raise TypeError("booleans are not IR atoms")
    if isinstance(expr, int):
        return str(expr) if -4096 < expr < 4096 else hex(expr)
    return str(expr)
