"""Built-in straight-line program interpreter.

Evaluates the restricted program dialect generated programs are written in:
assignments, arithmetic, comparisons, boolean logic, conditional expressions,
``print(...)`` statements, and a small set of numeric builtins.  There are no
loops, no definitions, no attribute or index access, and no imports, which
keeps the primary test suite hermetic: nothing an evaluated program does can
touch the host process.

Programs report their result through the ``answer`` variable or by printing
it; the final printed line wins when both are present.
"""

from __future__ import annotations

import ast
import time

# Abort evaluation before a single arithmetic op can produce an integer so
# large that the op itself becomes unbounded work.
_MAX_INT_BITS = 4_000_000
_CLOCK_CHECK_EVERY = 256

_BUILTINS = {
    "abs": abs,
    "min": min,
    "max": max,
    "round": round,
    "int": int,
    "float": float,
    "sum": sum,
    "len": len,
}

_BINOPS = {
    ast.Add: lambda a, b: a + b,
    ast.Sub: lambda a, b: a - b,
    ast.Mult: lambda a, b: a * b,
    ast.Div: lambda a, b: a / b,
    ast.FloorDiv: lambda a, b: a // b,
    ast.Mod: lambda a, b: a % b,
    ast.Pow: None,  # guarded separately
}

_COMPARES = {
    ast.Eq: lambda a, b: a == b,
    ast.NotEq: lambda a, b: a != b,
    ast.Lt: lambda a, b: a < b,
    ast.LtE: lambda a, b: a <= b,
    ast.Gt: lambda a, b: a > b,
    ast.GtE: lambda a, b: a >= b,
}


class ForbiddenConstruct(Exception):
    """Program used a construct outside the straight-line dialect."""


class EvaluationError(Exception):
    """Program is syntactically fine but failed at evaluation time."""


class BudgetExceeded(Exception):
    """Wall-clock budget ran out mid-evaluation."""


class OutputOverflow(Exception):
    """Printed output exceeded the configured cap."""


def render_value(value: object) -> str:
    """Text form of a program value, as the answer channel reports it."""
    if isinstance(value, float):
        return repr(value)
    return str(value)


class _Evaluator:
    def __init__(self, deadline: float, output_cap: int) -> None:
        self.env: dict[str, object] = {}
        self.stdout: list[str] = []
        self.stdout_bytes = 0
        self.deadline = deadline
        self.output_cap = output_cap
        self._ticks = 0

    def _tick(self) -> None:
        self._ticks += 1
        if self._ticks % _CLOCK_CHECK_EVERY == 0 and time.monotonic() > self.deadline:
            raise BudgetExceeded("wall-clock budget exceeded")

    def run_statement(self, node: ast.stmt) -> None:
        if time.monotonic() > self.deadline:
            raise BudgetExceeded("wall-clock budget exceeded")
        if isinstance(node, ast.Assign):
            if len(node.targets) != 1 or not isinstance(node.targets[0], ast.Name):
                raise ForbiddenConstruct("only single-name assignment targets are allowed")
            self.env[node.targets[0].id] = self.eval(node.value)
            return
        if isinstance(node, ast.AugAssign):
            if not isinstance(node.target, ast.Name):
                raise ForbiddenConstruct("only single-name assignment targets are allowed")
            current = self._load(node.target.id)
            self.env[node.target.id] = self._binop(type(node.op), current, self.eval(node.value))
            return
        if isinstance(node, ast.Expr):
            call = node.value
            if isinstance(call, ast.Call) and isinstance(call.func, ast.Name) and call.func.id == "print":
                parts = [render_value(self.eval(arg)) for arg in call.args]
                self._emit(" ".join(parts))
                return
            raise ForbiddenConstruct("bare expressions other than print(...) are not allowed")
        raise ForbiddenConstruct(f"construct not allowed: {type(node).__name__}")

    def _emit(self, line: str) -> None:
        self.stdout_bytes += len(line.encode("utf-8")) + 1
        if self.stdout_bytes > self.output_cap:
            raise OutputOverflow(f"printed output exceeds {self.output_cap} bytes")
        self.stdout.append(line)

    def _load(self, name: str) -> object:
        if name not in self.env:
            raise EvaluationError(f"name {name!r} is not defined")
        return self.env[name]

    def _binop(self, op: type, left: object, right: object) -> object:
        if op is ast.Pow:
            return self._pow(left, right)
        fn = _BINOPS.get(op)
        if fn is None:
            raise ForbiddenConstruct(f"operator not allowed: {op.__name__}")
        try:
            result = fn(left, right)
        except ZeroDivisionError as exc:
            raise EvaluationError(str(exc)) from exc
        except TypeError as exc:
            raise EvaluationError(str(exc)) from exc
        self._guard_size(result)
        return result

    def _pow(self, base: object, exponent: object) -> object:
        if isinstance(base, int) and isinstance(exponent, int) and exponent > 0:
            if base not in (0, 1, -1) and base.bit_length() * exponent > _MAX_INT_BITS:
                raise EvaluationError("exponentiation result too large")
        try:
            result = base ** exponent  # type: ignore[operator]
        except (TypeError, ZeroDivisionError, OverflowError) as exc:
            raise EvaluationError(str(exc)) from exc
        self._guard_size(result)
        return result

    def _guard_size(self, value: object) -> None:
        if isinstance(value, int) and not isinstance(value, bool) and value.bit_length() > _MAX_INT_BITS:
            raise EvaluationError("integer value too large")

    def eval(self, node: ast.expr) -> object:
        self._tick()
        if isinstance(node, ast.Constant):
            if isinstance(node.value, (int, float, bool, str)) or node.value is None:
                return node.value
            raise ForbiddenConstruct(f"constant type not allowed: {type(node.value).__name__}")
        if isinstance(node, ast.Name):
            return self._load(node.id)
        if isinstance(node, ast.BinOp):
            return self._binop(type(node.op), self.eval(node.left), self.eval(node.right))
        if isinstance(node, ast.UnaryOp):
            operand = self.eval(node.operand)
            if isinstance(node.op, ast.USub):
                return -operand  # type: ignore[operator]
            if isinstance(node.op, ast.UAdd):
                return +operand  # type: ignore[operator]
            if isinstance(node.op, ast.Not):
                return not operand
            raise ForbiddenConstruct(f"operator not allowed: {type(node.op).__name__}")
        if isinstance(node, ast.BoolOp):
            if isinstance(node.op, ast.And):
                value: object = True
                for part in node.values:
                    value = self.eval(part)
                    if not value:
                        return value
                return value
            value = False
            for part in node.values:
                value = self.eval(part)
                if value:
                    return value
            return value
        if isinstance(node, ast.Compare):
            left = self.eval(node.left)
            for op, comparator in zip(node.ops, node.comparators):
                fn = _COMPARES.get(type(op))
                if fn is None:
                    raise ForbiddenConstruct(f"comparison not allowed: {type(op).__name__}")
                right = self.eval(comparator)
                try:
                    if not fn(left, right):
                        return False
                except TypeError as exc:
                    raise EvaluationError(str(exc)) from exc
                left = right
            return True
        if isinstance(node, ast.IfExp):
            return self.eval(node.body) if self.eval(node.test) else self.eval(node.orelse)
        if isinstance(node, (ast.List, ast.Tuple)):
            items = [self.eval(item) for item in node.elts]
            return items if isinstance(node, ast.List) else tuple(items)
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.keywords:
                raise ForbiddenConstruct("only positional calls to builtin functions are allowed")
            fn = _BUILTINS.get(node.func.id)
            if fn is None:
                raise ForbiddenConstruct(f"call not allowed: {node.func.id}")
            args = [self.eval(arg) for arg in node.args]
            try:
                result = fn(*args)
            except (TypeError, ValueError, ZeroDivisionError, OverflowError) as exc:
                raise EvaluationError(str(exc)) from exc
            self._guard_size(result)
            return result
        raise ForbiddenConstruct(f"construct not allowed: {type(node).__name__}")


def run_program(program: str, wall_timeout: float, output_cap: int) -> tuple[dict[str, object], list[str]]:
    """Evaluate a program; returns (final namespace, printed lines).

    Raises SyntaxError, ForbiddenConstruct, EvaluationError, BudgetExceeded,
    or OutputOverflow; the executor maps each onto a result status.
    """
    tree = ast.parse(program, mode="exec")
    evaluator = _Evaluator(deadline=time.monotonic() + wall_timeout, output_cap=output_cap)
    for statement in tree.body:
        evaluator.run_statement(statement)
    return evaluator.env, evaluator.stdout
