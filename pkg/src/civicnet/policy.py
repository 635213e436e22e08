"""Declarative access-policy language: parse, evaluate, pretty-print.

Grammar (EBNF):

    policy    = "when" ident "if" expr "then" action { "and" action } ;
    expr      = or_expr ;
    or_expr   = and_expr { "or" and_expr } ;
    and_expr  = not_expr { "and" not_expr } ;
    not_expr  = [ "not" ] primary ;
    primary   = comparison | call | "(" expr ")" ;
    comparison= operand ( "==" | "!=" | "<" | "<=" | ">" | ">=" ) operand ;
    call      = ident "(" [ operand { "," operand } ] ")" ;
    operand   = literal | field_ref | call ;
    field_ref = "event" "." ident ;
    literal   = string | integer ;
    action    = ident "(" [ operand { "," operand } ] ")" ;

"and" binds tighter than "or"; "not" tightest. Evaluation is pure and total:
the grammar has no loops, so steps are bounded by AST size. Condition errors
(missing event fields, mixed-kind comparisons) surface as a deny action, not
an exception.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional, Union

BUILTIN_PREDICATES = ("attested_by", "consent_active", "now")
ACTION_NAMES = ("deny", "notify", "record", "release_document")

KEYWORDS = {"when", "if", "then", "and", "or", "not", "event"}

_TOKEN_RE = re.compile(
    r"""(?P<ws>\s+)
      | (?P<string>"(?:[^"\\]|\\.)*")
      | (?P<integer>\d+)
      | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
      | (?P<op>==|!=|<=|>=|<|>)
      | (?P<punct>[(),.])
    """,
    re.VERBOSE,
)


class PolicySyntaxError(Exception):
    def __init__(self, line: int, col: int, expected, got: str):
        self.line = line
        self.col = col
        self.expected = set(expected)
        self.got = got
        super().__init__(f"line {line}, col {col}: expected {sorted(self.expected)}, got {got!r}")


class UnknownFunction(Exception):
    def __init__(self, name: str, line: int, col: int):
        self.name = name
        super().__init__(f"line {line}, col {col}: unknown function {name!r}")


class MissingEventField(Exception):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"event has no field {name!r}")


class TypeMismatch(Exception):
    def __init__(self, operator: str, kinds: tuple[str, str]):
        self.operator = operator
        self.kinds = kinds
        super().__init__(f"cannot apply {operator!r} to {kinds[0]} and {kinds[1]}")


class TriggerMismatch(Exception):
    pass


class UnknownPolicy(Exception):
    pass


@dataclass(frozen=True)
class Token:
    kind: str  # "ident" | "string" | "integer" | "op" | "punct" | "eof"
    text: str
    line: int
    col: int


def tokenize(source: str) -> list[Token]:
    tokens = []
    line, col = 1, 1
    pos = 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if not m:
            raise PolicySyntaxError(line, col, {"token"}, source[pos])
        text = m.group(0)
        if m.lastgroup != "ws":
            tokens.append(Token(m.lastgroup, text, line, col))
        newlines = text.count("\n")
        if newlines:
            line += newlines
            col = len(text) - text.rfind("\n")
        else:
            col += len(text)
        pos = m.end()
    tokens.append(Token("eof", "", line, col))
    return tokens


# --- AST ---------------------------------------------------------------------


@dataclass(frozen=True)
class Literal:
    value: Union[str, int]


@dataclass(frozen=True)
class FieldRef:
    name: str


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple


@dataclass(frozen=True)
class Comparison:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class NotExpr:
    inner: object


@dataclass(frozen=True)
class AndExpr:
    parts: tuple


@dataclass(frozen=True)
class OrExpr:
    parts: tuple


@dataclass(frozen=True)
class ActionCall:
    name: str
    args: tuple


@dataclass(frozen=True)
class PolicyAst:
    trigger: str
    condition: object
    actions: tuple


@dataclass(frozen=True)
class Action:
    """A resolved action description; execution belongs to the node layer."""

    kind: str
    args: tuple


@dataclass(frozen=True)
class PolicyContract:
    """A ledger-registered policy; only these ever execute."""

    policy_id: str
    owner: str  # identity hex
    source: str
    ast: PolicyAst
    registered_entry_index: int


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.pos = 0

    @property
    def cur(self) -> Token:
        return self.tokens[self.pos]

    def _fail(self, expected):
        tok = self.cur
        raise PolicySyntaxError(tok.line, tok.col, expected, tok.text or "<end>")

    def take_keyword(self, word: str) -> None:
        if self.cur.kind == "ident" and self.cur.text == word:
            self.pos += 1
        else:
            self._fail({word})

    def take(self, kind: str, text: Optional[str] = None) -> Token:
        tok = self.cur
        if tok.kind != kind or (text is not None and tok.text != text):
            self._fail({text or kind})
        self.pos += 1
        return tok

    def at_keyword(self, word: str) -> bool:
        return self.cur.kind == "ident" and self.cur.text == word

    def parse_policy(self) -> PolicyAst:
        self.take_keyword("when")
        trigger = self.take("ident").text
        self.take_keyword("if")
        condition = self.parse_expr()
        self.take_keyword("then")
        actions = [self.parse_action()]
        while self.at_keyword("and"):
            self.pos += 1
            actions.append(self.parse_action())
        if self.cur.kind != "eof":
            self._fail({"and", "<end>"})
        return PolicyAst(trigger=trigger, condition=condition, actions=tuple(actions))

    def parse_expr(self):
        return self.parse_or()

    def parse_or(self):
        parts = [self.parse_and()]
        while self.at_keyword("or"):
            self.pos += 1
            parts.append(self.parse_and())
        return parts[0] if len(parts) == 1 else OrExpr(tuple(parts))

    def parse_and(self):
        # "and" inside the condition always extends the conjunction; the action
        # separator spelled "and" can only appear after "then"
        parts = [self.parse_not()]
        while self.at_keyword("and"):
            self.pos += 1
            parts.append(self.parse_not())
        return parts[0] if len(parts) == 1 else AndExpr(tuple(parts))

    def parse_not(self):
        if self.at_keyword("not"):
            self.pos += 1
            return NotExpr(self.parse_primary())
        return self.parse_primary()

    def parse_primary(self):
        if self.cur.kind == "punct" and self.cur.text == "(":
            self.pos += 1
            inner = self.parse_expr()
            self.take("punct", ")")
            return inner
        left = self.parse_operand()
        if self.cur.kind == "op":
            op = self.take("op").text
            right = self.parse_operand()
            return Comparison(op, left, right)
        if isinstance(left, Call):
            return left
        self._fail({"==", "!=", "<", "<=", ">", ">=", "("})

    def parse_operand(self):
        tok = self.cur
        if tok.kind == "string":
            self.pos += 1
            return Literal(_unquote(tok.text))
        if tok.kind == "integer":
            self.pos += 1
            return Literal(int(tok.text))
        if tok.kind == "ident" and tok.text == "event":
            self.pos += 1
            self.take("punct", ".")
            return FieldRef(self.take("ident").text)
        if tok.kind == "ident":
            return self.parse_call()
        self._fail({"literal", "event.<field>", "call"})

    def parse_call(self) -> Call:
        name_tok = self.take("ident")
        if name_tok.text in KEYWORDS:
            self._fail({"function name"})
        if name_tok.text not in BUILTIN_PREDICATES:
            raise UnknownFunction(name_tok.text, name_tok.line, name_tok.col)
        args = self._parse_arg_list()
        return Call(name_tok.text, args)

    def parse_action(self) -> ActionCall:
        name_tok = self.take("ident")
        if name_tok.text not in ACTION_NAMES:
            raise UnknownFunction(name_tok.text, name_tok.line, name_tok.col)
        args = self._parse_arg_list()
        return ActionCall(name_tok.text, args)

    def _parse_arg_list(self) -> tuple:
        self.take("punct", "(")
        args = []
        if not (self.cur.kind == "punct" and self.cur.text == ")"):
            args.append(self.parse_operand())
            while self.cur.kind == "punct" and self.cur.text == ",":
                self.pos += 1
                args.append(self.parse_operand())
        self.take("punct", ")")
        return tuple(args)


def _unquote(text: str) -> str:
    return text[1:-1].replace('\\"', '"').replace("\\\\", "\\")


def _quote(value: str) -> str:
    return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'


def parse_policy(source: str) -> PolicyAst:
    return _Parser(tokenize(source)).parse_policy()


# --- pretty printer ----------------------------------------------------------


def pretty(ast: PolicyAst) -> str:
    actions = " and ".join(_print_action(a) for a in ast.actions)
    return f"when {ast.trigger} if {_print_expr(ast.condition)} then {actions}"


def _print_expr(node, parent: str = "or") -> str:
    if isinstance(node, OrExpr):
        text = " or ".join(_print_expr(p, "or") for p in node.parts)
        return f"({text})" if parent in ("and", "not") else text
    if isinstance(node, AndExpr):
        text = " and ".join(_print_expr(p, "and") for p in node.parts)
        return f"({text})" if parent == "not" else text
    if isinstance(node, NotExpr):
        text = f"not {_print_expr(node.inner, 'not')}"
        return f"({text})" if parent == "not" else text
    if isinstance(node, Comparison):
        text = f"{_print_operand(node.left)} {node.op} {_print_operand(node.right)}"
        return f"({text})" if parent == "not" else text
    if isinstance(node, Call):
        return _print_operand(node)
    raise TypeError(f"unexpected node {node!r}")


def _print_operand(node) -> str:
    if isinstance(node, Literal):
        return _quote(node.value) if isinstance(node.value, str) else str(node.value)
    if isinstance(node, FieldRef):
        return f"event.{node.name}"
    if isinstance(node, Call):
        return f"{node.name}({', '.join(_print_operand(a) for a in node.args)})"
    raise TypeError(f"unexpected operand {node!r}")


def _print_action(action: ActionCall) -> str:
    return f"{action.name}({', '.join(_print_operand(a) for a in action.args)})"


# --- evaluation ----------------------------------------------------------------


@dataclass(frozen=True)
class Event:
    event_type: str
    fields: dict


_FIELD_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


def make_event(event_type: str, fields: dict) -> Event:
    for name in fields:
        if not _FIELD_NAME_RE.match(name):
            raise ValueError(f"invalid event field name {name!r}")
    return Event(event_type=event_type, fields=dict(fields))


def _kind(value) -> str:
    if isinstance(value, bool):
        return "flag"
    if isinstance(value, int):
        return "integer"
    return "string"


def _eval_operand(node, event: Event, view, now: int):
    if isinstance(node, Literal):
        return node.value
    if isinstance(node, FieldRef):
        if node.name not in event.fields:
            raise MissingEventField(node.name)
        return event.fields[node.name]
    if isinstance(node, Call):
        return _eval_call(node, event, view, now)
    raise TypeError(f"unexpected operand {node!r}")


def _eval_call(node: Call, event: Event, view, now: int):
    args = [_eval_operand(a, event, view, now) for a in node.args]
    if node.name == "now":
        if args:
            raise TypeMismatch("now", ("()", "arguments"))
        return now
    if node.name == "consent_active":
        if len(args) != 3:
            raise TypeMismatch("consent_active", ("3 arguments", f"{len(args)}"))
        return view.consent_active(str(args[0]), str(args[1]), str(args[2]), now)
    if node.name == "attested_by":
        if len(args) != 2:
            raise TypeMismatch("attested_by", ("2 arguments", f"{len(args)}"))
        return view.attested_by(str(args[0]), str(args[1]))
    raise UnknownFunction(node.name, 0, 0)


def _eval_bool(node, event: Event, view, now: int) -> bool:
    if isinstance(node, OrExpr):
        return any(_eval_bool(p, event, view, now) for p in node.parts)
    if isinstance(node, AndExpr):
        return all(_eval_bool(p, event, view, now) for p in node.parts)
    if isinstance(node, NotExpr):
        return not _eval_bool(node.inner, event, view, now)
    if isinstance(node, Comparison):
        left = _eval_operand(node.left, event, view, now)
        right = _eval_operand(node.right, event, view, now)
        lk, rk = _kind(left), _kind(right)
        if lk != rk or lk == "flag":
            raise TypeMismatch(node.op, (lk, rk))
        if node.op == "==":
            return left == right
        if node.op == "!=":
            return left != right
        if node.op == "<":
            return left < right
        if node.op == "<=":
            return left <= right
        if node.op == ">":
            return left > right
        return left >= right
    if isinstance(node, Call):
        value = _eval_call(node, event, view, now)
        if not isinstance(value, bool):
            raise TypeMismatch("condition", ("flag", _kind(value)))
        return value
    raise TypeError(f"unexpected condition node {node!r}")


def evaluate(ast: PolicyAst, event: Event, view, now: int) -> list[Action]:
    """Pure evaluation: trigger must match; condition errors become a deny."""
    if event.event_type != ast.trigger:
        raise TriggerMismatch(f"event {event.event_type!r} does not trigger {ast.trigger!r}")
    try:
        passed = _eval_bool(ast.condition, event, view, now)
    except (MissingEventField, TypeMismatch) as exc:
        return [Action("deny", (f"policy evaluation error: {exc}",))]
    if not passed:
        return [Action("deny", ("policy condition not met",))]
    actions = []
    for action in ast.actions:
        try:
            args = tuple(_eval_operand(a, event, view, now) for a in action.args)
        except (MissingEventField, TypeMismatch) as exc:
            return [Action("deny", (f"policy evaluation error: {exc}",))]
        actions.append(Action(action.name, args))
    return actions
