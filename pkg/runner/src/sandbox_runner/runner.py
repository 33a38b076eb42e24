"""Line-oriented sandbox service.

Reads one JSON request object per line on stdin and writes exactly one JSON
response object per request on stdout.  Every request runs in a fresh child
interpreter (``python -I -c ...``) so no state, no module cache, and no
monkeypatching can leak between programs, and a crashed or killed child never
takes the service down with it.

Request fields: id, program (str), timeout_s (number > 0), mem_bytes (int > 0).
Response fields: id (echoed), status, answer, stderr, elapsed_s.

Statuses: ok, timeout, runtime_error, forbidden_operation, output_overflow.
A malformed request line gets a runtime_error response (id null when the line
was not even JSON) and the loop keeps serving.  EOF on stdin ends the service.
"""

import argparse
import json
import subprocess
import sys
import time
from importlib import resources

# Top-level modules a program may import.  Pure-computation stdlib only; the
# --allow flag extends this for optional solver libraries.
DEFAULT_ALLOWED_IMPORTS = frozenset(
    {"math", "fractions", "itertools", "functools", "collections"}
)

# Printed-output cap per program, matching the executing client's default.
OUTPUT_CAP_BYTES = 64 * 1024

STDERR_LIMIT = 2000

_child_source_cache: str | None = None


def _child_source() -> str:
    global _child_source_cache
    if _child_source_cache is None:
        _child_source_cache = (
            resources.files("sandbox_runner").joinpath("_child.py").read_text("utf-8")
        )
    return _child_source_cache


def _response(request_id, status: str, answer, stderr: str, elapsed_s: float) -> dict:
    return {
        "id": request_id,
        "status": status,
        "answer": answer,
        "stderr": stderr[:STDERR_LIMIT],
        "elapsed_s": round(elapsed_s, 6),
    }


def _validate(request: dict) -> str | None:
    """Return a diagnostic for the first invalid field, or None if well formed."""
    if "id" not in request:
        return "request field 'id' missing"
    if not isinstance(request.get("program"), str):
        return "request field 'program' missing or invalid"
    timeout_s = request.get("timeout_s")
    if not isinstance(timeout_s, (int, float)) or isinstance(timeout_s, bool) or timeout_s <= 0:
        return "request field 'timeout_s' missing or invalid"
    mem_bytes = request.get("mem_bytes")
    if not isinstance(mem_bytes, int) or isinstance(mem_bytes, bool) or mem_bytes <= 0:
        return "request field 'mem_bytes' missing or invalid"
    return None


def run_program(
    program: str,
    timeout_s: float,
    mem_bytes: int,
    allowed_imports: frozenset[str] = DEFAULT_ALLOWED_IMPORTS,
) -> tuple[str, str | None, str, float]:
    """Execute one program in a fresh child; return (status, answer, stderr, elapsed_s)."""
    job = json.dumps(
        {
            "program": program,
            "mem_bytes": mem_bytes,
            "output_cap": OUTPUT_CAP_BYTES,
            "allowed_imports": sorted(allowed_imports),
        }
    )
    started = time.monotonic()
    proc = subprocess.Popen(
        [sys.executable, "-I", "-c", _child_source()],
        stdin=subprocess.PIPE,
        stdout=subprocess.PIPE,
        stderr=subprocess.PIPE,
        text=True,
    )
    try:
        out, err = proc.communicate(job, timeout=timeout_s)
    except subprocess.TimeoutExpired:
        proc.kill()
        proc.communicate()
        elapsed = time.monotonic() - started
        return "timeout", None, f"wall timeout after {timeout_s}s", elapsed
    elapsed = time.monotonic() - started

    line = out.strip().splitlines()[-1] if out.strip() else ""
    try:
        result = json.loads(line)
        status = result["status"]
        answer = result["answer"]
        stderr = result["stderr"]
    except (json.JSONDecodeError, KeyError, TypeError):
        detail = err.strip() or f"child exited with code {proc.returncode}"
        return "runtime_error", None, f"sandbox child failed: {detail}", elapsed
    if status == "ok" and not isinstance(answer, str):
        return "runtime_error", None, "sandbox child reported ok without an answer", elapsed
    return status, answer, stderr, elapsed


def serve(stdin=None, stdout=None, allowed_imports: frozenset[str] = DEFAULT_ALLOWED_IMPORTS) -> None:
    """Serve requests line by line until EOF.  Whitespace-only lines are skipped."""
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    for line in stdin:
        if not line.strip():
            continue
        try:
            request = json.loads(line)
        except json.JSONDecodeError:
            payload = _response(None, "runtime_error", None, "request line is not valid JSON", 0.0)
            stdout.write(json.dumps(payload, sort_keys=True) + "\n")
            stdout.flush()
            continue
        if not isinstance(request, dict):
            payload = _response(None, "runtime_error", None, "request is not a JSON object", 0.0)
            stdout.write(json.dumps(payload, sort_keys=True) + "\n")
            stdout.flush()
            continue
        diagnostic = _validate(request)
        if diagnostic is not None:
            payload = _response(request.get("id"), "runtime_error", None, diagnostic, 0.0)
        else:
            status, answer, stderr, elapsed = run_program(
                request["program"],
                float(request["timeout_s"]),
                request["mem_bytes"],
                allowed_imports,
            )
            payload = _response(request["id"], status, answer, stderr, elapsed)
        stdout.write(json.dumps(payload, sort_keys=True) + "\n")
        stdout.flush()


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="sandbox-runner",
        description="serve sandboxed program execution over stdin/stdout JSON lines",
    )
    parser.add_argument(
        "--allow",
        action="append",
        default=[],
        metavar="MODULE",
        help="extra top-level module name programs may import (repeatable)",
    )
    args = parser.parse_args(argv)
    serve(allowed_imports=DEFAULT_ALLOWED_IMPORTS | frozenset(args.allow))
    return 0
