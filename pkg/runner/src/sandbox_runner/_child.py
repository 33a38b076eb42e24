"""Single-job sandbox child.

Reads one JSON job object from stdin, executes the embedded program under a
restricted namespace, and writes one JSON result object to stdout.  The parent
process launches this module's source with ``python -I -c`` so the child never
imports this package (or anything else outside the stdlib).

Job fields: program (str), mem_bytes (int), output_cap (int),
allowed_imports (list of top-level module names).

Result fields: status, answer, stderr.  status is one of ok, runtime_error,
forbidden_operation, output_overflow; the parent owns the timeout status.
"""

import builtins
import io
import json
import resource
import sys


class ForbiddenImport(ImportError):
    """Raised when a program imports a module outside the allowlist."""


class OutputOverflow(Exception):
    """Raised when a program prints more than the output cap."""


# Deliberately excludes open, input, eval, exec, compile, getattr/setattr,
# globals/locals/vars, __import__ (replaced by the guarded version), and
# anything else that reaches the filesystem or the interpreter internals.
SAFE_BUILTIN_NAMES = (
    "abs", "all", "any", "ascii", "bin", "bool", "bytearray", "bytes",
    "callable", "chr", "complex", "dict", "divmod", "enumerate", "filter",
    "float", "format", "frozenset", "hash", "hex", "id", "int", "isinstance",
    "issubclass", "iter", "len", "list", "map", "max", "min", "next",
    "object", "oct", "ord", "pow", "print", "range", "repr", "reversed",
    "round", "set", "slice", "sorted", "str", "sum", "tuple", "type", "zip",
    "ArithmeticError", "AssertionError", "AttributeError", "BaseException",
    "Exception", "FloatingPointError", "GeneratorExit", "ImportError",
    "IndexError", "KeyError", "LookupError", "MemoryError",
    "ModuleNotFoundError", "NameError", "NotImplementedError",
    "OverflowError", "RecursionError", "RuntimeError", "StopAsyncIteration",
    "StopIteration", "TypeError", "ValueError", "ZeroDivisionError",
)


class CappedWriter(io.StringIO):
    """StringIO that refuses to grow past a byte cap."""

    def __init__(self, cap: int) -> None:
        super().__init__()
        self.cap = cap
        self.written = 0

    def write(self, s: str) -> int:
        self.written += len(s)
        if self.written > self.cap:
            raise OutputOverflow(f"program output exceeded {self.cap} bytes")
        return super().write(s)


def make_import_guard(allowed_roots: frozenset[str]):
    real_import = builtins.__import__

    def guarded_import(name, globals=None, locals=None, fromlist=(), level=0):
        root = name.split(".")[0]
        if level != 0 or root not in allowed_roots:
            raise ForbiddenImport(f"import of {name!r} is not allowed")
        return real_import(name, globals, locals, fromlist, level)

    return guarded_import


def make_globals(allowed_roots: frozenset[str]) -> dict:
    table = {name: getattr(builtins, name) for name in SAFE_BUILTIN_NAMES}
    table["__import__"] = make_import_guard(allowed_roots)
    return {"__builtins__": table, "__name__": "__main__"}


def render_value(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def extract_answer(namespace: dict, printed: str) -> str | None:
    """Final nonempty printed line wins; else the `answer` variable; else None."""
    lines = [line for line in printed.splitlines() if line.strip()]
    if lines:
        return lines[-1].strip()
    if "answer" in namespace:
        return render_value(namespace["answer"])
    return None


def run_job(job: dict) -> dict:
    mem_bytes = int(job["mem_bytes"])
    output_cap = int(job["output_cap"])
    allowed_roots = frozenset(job["allowed_imports"])
    try:
        resource.setrlimit(resource.RLIMIT_AS, (mem_bytes, mem_bytes))
    except (ValueError, OSError):
        pass  # requested cap above the hard limit; keep the inherited one

    writer = CappedWriter(output_cap)
    namespace = make_globals(allowed_roots)
    real_stdout = sys.stdout
    try:
        sys.stdout = writer
        try:
            code = compile(job["program"], "<program>", "exec")
            exec(code, namespace)
        finally:
            sys.stdout = real_stdout
    except ForbiddenImport as exc:
        return {"status": "forbidden_operation", "answer": None, "stderr": str(exc)}
    except OutputOverflow as exc:
        return {"status": "output_overflow", "answer": None, "stderr": str(exc)}
    except BaseException as exc:  # SystemExit and MemoryError included
        detail = f"{type(exc).__name__}: {exc}".strip().rstrip(":")
        return {"status": "runtime_error", "answer": None, "stderr": detail}

    answer = extract_answer(namespace, writer.getvalue())
    if answer is None:
        return {
            "status": "runtime_error",
            "answer": None,
            "stderr": "program produced no answer",
        }
    return {"status": "ok", "answer": answer, "stderr": ""}


def main() -> None:
    job = json.loads(sys.stdin.read())
    result = run_job(job)
    sys.stdout.write(json.dumps(result, sort_keys=True) + "\n")
    sys.stdout.flush()


if __name__ == "__main__":
    main()
