"""
Petit langage d'expressions pour définir des cartes f: R^n -> R^n en texte.

Les composantes sont séparées par ';' et portent sur les variables x1..xn :

    "x1^2 - x2^2; 2*x1*x2"      # le carré complexe écrit dans R^2

Grammaire (précédence croissante) :

    components := expr (';' expr)*
    expr       := term (('+' | '-') term)*
    term       := unary (('*' | '/') unary)*
    unary      := '-' unary | power
    power      := atom ('^' exponent)?
    exponent   := ['-'] int ('^' exponent)?
    atom       := number | ident | func '(' expr ')' | '(' expr ')'

'^' lie plus fort que le moins unaire (-x1^2 = -(x1^2)) et n'accepte que des
exposants entiers littéraux ; une chaîne a^2^3 est repliée en a^8.
La différentiation est exacte (nombres duaux en mode direct).
"""

import logging
import math
import re
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Sequence, Tuple, Union

import numpy as np

from errors import (
    ArityError,
    ExprSyntaxError,
    NonFinite,
    NotDifferentiable,
    UnknownIdentifier,
)

logger = logging.getLogger(__name__)

# ============================================================================
# AST
# ============================================================================

UNARY_FUNCTIONS = frozenset(["sin", "cos", "exp", "ln", "sqrt", "abs"])
BINARY_OPERATORS = frozenset(["+", "-", "*", "/", "^"])


@dataclass(frozen=True)
class Constant:
    value: float


@dataclass(frozen=True)
class Variable:
    index: int


@dataclass(frozen=True)
class Unary:
    """op dans {neg, sin, cos, exp, ln, sqrt, abs}"""
    op: str
    operand: "Node"


@dataclass(frozen=True)
class Binary:
    """op dans {+, -, *, /, ^} ; pour '^' le membre droit est une Constant entière"""
    op: str
    left: "Node"
    right: "Node"


Node = Union[Constant, Variable, Unary, Binary]

# ============================================================================
# TOKENIZER
# ============================================================================

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>[-+*/^();])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # num | ident | op | eof
    text: str
    offset: int  # position en octets


def tokenize(src: str) -> List[Token]:
    """Découpe le texte en jetons ; les positions sont des offsets en octets"""
    tokens: List[Token] = []
    pos = 0
    byte_pos = 0
    while pos < len(src):
        match = _TOKEN_RE.match(src, pos)
        if match is None:
            raise ExprSyntaxError(f"unexpected character {src[pos]!r}", byte_pos)
        kind = match.lastgroup
        text = match.group()
        if kind != "ws":
            tokens.append(Token(kind, text, byte_pos))
        byte_pos += len(text.encode("utf-8"))
        pos = match.end()
    tokens.append(Token("eof", "", byte_pos))
    return tokens


# ============================================================================
# PARSER (precedence climbing)
# ============================================================================

class _Parser:
    """Parseur récursif à précédence ; une instance par texte source"""

    def __init__(self, tokens: List[Token], dim: int):
        self.tokens = tokens
        self.dim = dim
        self.index = 0

    @property
    def current(self) -> Token:
        return self.tokens[self.index]

    def advance(self) -> Token:
        token = self.tokens[self.index]
        if token.kind != "eof":
            self.index += 1
        return token

    def expect(self, text: str) -> Token:
        token = self.current
        if token.kind != "op" or token.text != text:
            found = "end of input" if token.kind == "eof" else repr(token.text)
            raise ExprSyntaxError(f"expected {text!r}, found {found}", token.offset)
        return self.advance()

    def components(self) -> List[Node]:
        nodes = [self.expr()]
        while self.current.kind == "op" and self.current.text == ";":
            self.advance()
            nodes.append(self.expr())
        if self.current.kind != "eof":
            raise ExprSyntaxError(f"unexpected {self.current.text!r}", self.current.offset)
        return nodes

    def expr(self) -> Node:
        left = self.term()
        while self.current.kind == "op" and self.current.text in ("+", "-"):
            op = self.advance().text
            left = Binary(op, left, self.term())
        return left

    def term(self) -> Node:
        left = self.unary()
        while self.current.kind == "op" and self.current.text in ("*", "/"):
            op = self.advance().text
            left = Binary(op, left, self.unary())
        return left

    def unary(self) -> Node:
        if self.current.kind == "op" and self.current.text == "-":
            self.advance()
            return Unary("neg", self.unary())
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.current.kind == "op" and self.current.text == "^":
            self.advance()
            return Binary("^", base, Constant(float(self.exponent())))
        return base

    def exponent(self) -> int:
        sign = 1
        if self.current.kind == "op" and self.current.text == "-":
            self.advance()
            sign = -1
        token = self.current
        if token.kind != "num" or not token.text.isdigit():
            raise ExprSyntaxError("exponent must be an integer literal", token.offset)
        self.advance()
        value = sign * int(token.text)
        if self.current.kind == "op" and self.current.text == "^":
            caret = self.advance()
            inner = self.exponent()
            if inner < 0:
                raise ExprSyntaxError("exponent must be an integer literal", caret.offset)
            value = value ** inner
        return value

    def atom(self) -> Node:
        token = self.current
        if token.kind == "num":
            self.advance()
            return Constant(float(token.text))
        if token.kind == "ident":
            self.advance()
            if token.text in UNARY_FUNCTIONS:
                self.expect("(")
                inner = self.expr()
                self.expect(")")
                return Unary(token.text, inner)
            return Variable(self._variable_index(token))
        if token.kind == "op" and token.text == "(":
            self.advance()
            inner = self.expr()
            self.expect(")")
            return inner
        if token.kind == "eof":
            raise ExprSyntaxError("unexpected end of input", token.offset)
        raise ExprSyntaxError(f"unexpected {token.text!r}", token.offset)

    def _variable_index(self, token: Token) -> int:
        match = re.fullmatch(r"x([1-9]\d*)", token.text)
        if match is None or int(match.group(1)) > self.dim:
            raise UnknownIdentifier(token.text, token.offset)
        return int(match.group(1)) - 1


@lru_cache(maxsize=256)
def parse(src: str, dim: int) -> Tuple[Node, ...]:
    """Parse les composantes séparées par ';' ; une AST par composante de sortie"""
    if dim < 1:
        raise ArityError(f"dimension must be positive, got {dim}")
    if not src.strip():
        raise ExprSyntaxError("empty expression", 0)
    nodes = _Parser(tokenize(src), dim).components()
    if len(nodes) != dim:
        raise ArityError(f"expected {dim} component(s), found {len(nodes)}")
    logger.debug("parsed %d component(s) from %r", dim, src)
    return tuple(nodes)


# ============================================================================
# IMPRESSION
# ============================================================================

def to_source(node: Node) -> str:
    """Texte entièrement parenthésé ; le re-parse redonne une AST égale"""
    if isinstance(node, Constant):
        return repr(float(node.value))
    if isinstance(node, Variable):
        return f"x{node.index + 1}"
    if isinstance(node, Unary):
        inner = to_source(node.operand)
        return f"(-{inner})" if node.op == "neg" else f"{node.op}({inner})"
    if node.op == "^":
        return f"({to_source(node.left)}^{int(node.right.value)})"
    return f"({to_source(node.left)} {node.op} {to_source(node.right)})"


def components_to_source(nodes: Sequence[Node]) -> str:
    return "; ".join(to_source(node) for node in nodes)


# ============================================================================
# NOMBRES DUAUX
# ============================================================================

class Dual:
    """Valeur + vecteur de dérivées partielles (mode direct)"""

    __slots__ = ("value", "grad")

    def __init__(self, value: float, grad):
        self.value = float(value)
        self.grad = np.asarray(grad, dtype=float)

    @classmethod
    def variable(cls, value: float, index: int, n: int) -> "Dual":
        grad = np.zeros(n)
        grad[index] = 1.0
        return cls(value, grad)

    def __repr__(self) -> str:
        return f"Dual({self.value!r}, {self.grad.tolist()!r})"

    def _lift(self, other) -> "Dual":
        if isinstance(other, Dual):
            return other
        return Dual(float(other), np.zeros_like(self.grad))

    def __add__(self, other):
        other = self._lift(other)
        return Dual(self.value + other.value, self.grad + other.grad)

    __radd__ = __add__

    def __sub__(self, other):
        other = self._lift(other)
        return Dual(self.value - other.value, self.grad - other.grad)

    def __rsub__(self, other):
        return self._lift(other) - self

    def __mul__(self, other):
        other = self._lift(other)
        return Dual(self.value * other.value, self.value * other.grad + other.value * self.grad)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._lift(other)
        if other.value == 0.0:
            raise NonFinite("division by zero")
        value = self.value / other.value
        return Dual(value, (self.grad - value * other.grad) / other.value)

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def __neg__(self):
        return Dual(-self.value, -self.grad)

    def __pow__(self, k):
        if isinstance(k, float) and k.is_integer():
            k = int(k)
        if not isinstance(k, (int, np.integer)):
            raise NotDifferentiable("dual powers take integer exponents only")
        if k == 0:
            return Dual(1.0, np.zeros_like(self.grad))
        if self.value == 0.0 and k < 0:
            raise NonFinite("negative power of zero")
        return Dual(self.value ** k, k * self.value ** (k - 1) * self.grad)

    def __abs__(self):
        if self.value == 0.0:
            raise NotDifferentiable("abs is not differentiable at 0")
        sign = 1.0 if self.value > 0 else -1.0
        return Dual(abs(self.value), sign * self.grad)

    # noms attendus par les ufuncs numpy sur tableaux d'objets
    def sin(self):
        return Dual(math.sin(self.value), math.cos(self.value) * self.grad)

    def cos(self):
        return Dual(math.cos(self.value), -math.sin(self.value) * self.grad)

    def exp(self):
        value = _checked(math.exp, self.value, "exp")
        return Dual(value, value * self.grad)

    def log(self):
        if self.value <= 0.0:
            raise NonFinite(f"ln of nonpositive value {self.value!r}")
        return Dual(math.log(self.value), self.grad / self.value)

    def sqrt(self):
        if self.value < 0.0:
            raise NonFinite(f"sqrt of negative value {self.value!r}")
        if self.value == 0.0:
            raise NonFinite("sqrt derivative at 0")
        root = math.sqrt(self.value)
        return Dual(root, self.grad / (2.0 * root))

    def is_finite(self) -> bool:
        return math.isfinite(self.value) and bool(np.all(np.isfinite(self.grad)))


Number = Union[float, Dual]


def _checked(fn, value: float, name: str) -> float:
    try:
        result = fn(value)
    except (OverflowError, ValueError):
        raise NonFinite(f"{name}({value!r})")
    if not math.isfinite(result):
        raise NonFinite(f"{name}({value!r})")
    return result


# ============================================================================
# ÉVALUATION
# ============================================================================

def _unary(op: str, value: Number) -> Number:
    if op == "neg":
        return -value
    if isinstance(value, Dual):
        if op == "ln":
            return value.log()
        if op == "abs":
            return abs(value)
        return getattr(value, op)()
    if op == "ln":
        if value <= 0.0:
            raise NonFinite(f"ln of nonpositive value {value!r}")
        return math.log(value)
    if op == "sqrt":
        if value < 0.0:
            raise NonFinite(f"sqrt of negative value {value!r}")
        return math.sqrt(value)
    if op == "abs":
        return abs(value)
    if op == "exp":
        return _checked(math.exp, value, "exp")
    return getattr(math, op)(value)


def _binary(op: str, left: Number, right: Number) -> Number:
    if op == "+":
        return left + right
    if op == "-":
        return left - right
    if op == "*":
        return left * right
    if op == "/":
        if not isinstance(right, Dual) and right == 0.0:
            raise NonFinite("division by zero")
        return left / right
    k = int(right)
    if not isinstance(left, Dual):
        if left == 0.0 and k < 0:
            raise NonFinite("negative power of zero")
        try:
            return float(left) ** k
        except OverflowError:
            raise NonFinite(f"overflow in power {k}")
    return left ** k


def _interpret(node: Node, env: Sequence[Number]) -> Number:
    if isinstance(node, Constant):
        return node.value
    if isinstance(node, Variable):
        return env[node.index]
    if isinstance(node, Unary):
        return _unary(node.op, _interpret(node.operand, env))
    if node.op == "^":
        return _binary("^", _interpret(node.left, env), node.right.value)
    return _binary(node.op, _interpret(node.left, env), _interpret(node.right, env))


def evaluate(node: Node, x: Sequence[float]) -> float:
    """Évalue une composante en x ; les pôles et domaines interdits lèvent NonFinite"""
    result = float(_interpret(node, [float(v) for v in x]))
    if not math.isfinite(result):
        raise NonFinite(f"evaluation of {to_source(node)}")
    return result


def evaluate_all(nodes: Sequence[Node], x: Sequence[float]) -> np.ndarray:
    return np.array([evaluate(node, x) for node in nodes])


def ad_jacobian(nodes: Sequence[Node], x: Sequence[float]) -> np.ndarray:
    """Jacobienne exacte (à l'arrondi près) en un seul balayage de duaux vectoriels"""
    n = len(x)
    env = [Dual.variable(float(v), i, n) for i, v in enumerate(x)]
    rows = []
    for node in nodes:
        result = _interpret(node, env)
        if isinstance(result, Dual):
            if not result.is_finite():
                raise NonFinite(f"derivative of {to_source(node)}")
            rows.append(result.grad)
        else:
            rows.append(np.zeros(n))
    return np.vstack(rows)
