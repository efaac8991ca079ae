"""
Expression language for problem files

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := '-' factor | power
    power  := base ('^' factor)?
    base   := number | ident | ident '@' ident | func '(' expr ')' | '(' expr ')'

Unary minus binds looser than '^', so -2^2 is -4, and '^' is
right-associative. Evaluation is vectorized over numpy arrays.
"""
import logging
from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np
from lark import Lark, Token, Transformer
from lark.exceptions import UnexpectedCharacters, UnexpectedEOF, UnexpectedInput, UnexpectedToken, VisitError

from errors import EvalError, ParseError

logger = logging.getLogger(__name__)

grammar = r"""
?expr: term
     | expr "+" term      -> add
     | expr "-" term      -> sub

?term: factor
     | term "*" factor    -> mul
     | term "/" factor    -> div

?factor: "-" factor       -> neg
       | power

?power: base
      | base "^" factor   -> pow

?base: NUMBER             -> number
     | NAME "(" expr ")"  -> call
     | NAME "@" NAME      -> at
     | NAME               -> var
     | "(" expr ")"

NAME: /[A-Za-z_][A-Za-z0-9_]*/

%import common.NUMBER
%import common.WS
%ignore WS
"""

parser = Lark(grammar, start='expr', parser='lalr', propagate_positions=True)

FUNCTIONS = {
    'sin': np.sin,
    'cos': np.cos,
    'exp': np.exp,
    'abs': np.abs,
    'tanh': np.tanh,
}


@dataclass(frozen=True)
class Number:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class At:
    """Component name evaluated at a nonlocal point, e.g. u@t1"""
    name: str
    point: str

    @property
    def key(self) -> str:
        return f"{self.name}@{self.point}"


@dataclass(frozen=True)
class Unary:
    op: str
    operand: "Node"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Node"


Node = Union[Number, Var, At, Unary, Binary, Call]


class ASTBuilder(Transformer):
    def number(self, items):
        return Number(float(items[0]))

    def var(self, items):
        return Var(str(items[0]))

    def at(self, items):
        return At(str(items[0]), str(items[1]))

    def call(self, items):
        name: Token = items[0]
        if str(name) not in FUNCTIONS:
            raise ParseError(f"unknown function '{name}'", name.start_pos, set(FUNCTIONS))
        return Call(str(name), items[1])

    def neg(self, items):
        return Unary('-', items[0])

    def add(self, items):
        return Binary('+', items[0], items[1])

    def sub(self, items):
        return Binary('-', items[0], items[1])

    def mul(self, items):
        return Binary('*', items[0], items[1])

    def div(self, items):
        return Binary('/', items[0], items[1])

    def pow(self, items):
        return Binary('^', items[0], items[1])


def _error_offset(source: str, error: UnexpectedInput) -> int:
    if isinstance(error, UnexpectedEOF):
        char_pos = len(source)
    elif isinstance(error, UnexpectedToken):
        start = error.token.start_pos
        char_pos = len(source) if start is None or error.token.type == '$END' else start
    else:
        char_pos = error.pos_in_stream
    return len(source[:char_pos].encode('utf-8'))


def _expected(error: UnexpectedInput) -> set[str]:
    if isinstance(error, UnexpectedCharacters):
        return set(error.allowed or ())
    return set(getattr(error, 'expected', None) or ())


@dataclass(frozen=True)
class Expression:
    source: str
    ast: Node

    @property
    def variables(self) -> set[str]:
        found = set()

        def walk(node):
            if isinstance(node, Var):
                found.add(node.name)
            elif isinstance(node, At):
                found.add(node.key)
            elif isinstance(node, Unary):
                walk(node.operand)
            elif isinstance(node, Binary):
                walk(node.left)
                walk(node.right)
            elif isinstance(node, Call):
                walk(node.arg)

        walk(self.ast)
        return found

    @property
    def is_zero(self) -> bool:
        return isinstance(self.ast, Number) and self.ast.value == 0

    def evaluate(self, env: Mapping[str, object]):
        value = evaluate(self.ast, env)
        if not np.all(np.isfinite(value)):
            raise EvalError(f"'{self.source}' does not evaluate to a finite value")
        return value

    def unparse(self) -> str:
        return unparse(self.ast)


def parse_expression(source: str) -> Expression:
    """Parse source into an Expression; ParseError carries a byte offset"""
    try:
        tree = parser.parse(source)
        ast = ASTBuilder().transform(tree)
    except UnexpectedInput as e:
        raise ParseError(f"unexpected input in '{source}'", _error_offset(source, e), _expected(e)) from e
    except VisitError as e:
        if isinstance(e.orig_exc, ParseError):
            raise e.orig_exc from None
        raise
    return Expression(source, ast)


def evaluate(node: Node, env: Mapping[str, object]):
    if isinstance(node, Number):
        return node.value
    if isinstance(node, Var):
        if node.name not in env:
            raise EvalError(f"unknown variable '{node.name}'")
        return env[node.name]
    if isinstance(node, At):
        if node.key not in env:
            raise EvalError(f"unknown nonlocal value '{node.key}'")
        return env[node.key]
    if isinstance(node, Unary):
        return -np.asarray(evaluate(node.operand, env), dtype=float)
    if isinstance(node, Call):
        with np.errstate(over='ignore', invalid='ignore', divide='ignore'):
            return FUNCTIONS[node.func](np.asarray(evaluate(node.arg, env), dtype=float))

    left = np.asarray(evaluate(node.left, env), dtype=float)
    right = np.asarray(evaluate(node.right, env), dtype=float)
    if node.op == '+':
        return left + right
    if node.op == '-':
        return left - right
    if node.op == '*':
        return left * right
    if node.op == '/':
        if np.any(right == 0):
            raise EvalError("division by zero")
        return left / right
    with np.errstate(over='ignore', invalid='ignore', divide='ignore'):
        return np.power(left, right)


def unparse(node: Node) -> str:
    """Source text that parses back to the same tree"""
    if isinstance(node, Number):
        return repr(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, At):
        return node.key
    if isinstance(node, Call):
        return f"{node.func}({unparse(node.arg)})"
    if isinstance(node, Unary):
        return f"(-{unparse(node.operand)})"
    return f"({unparse(node.left)} {node.op} {unparse(node.right)})"
