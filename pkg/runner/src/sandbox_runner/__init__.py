"""Process-isolating program runner speaking JSON lines over stdio."""

from sandbox_runner.runner import (
    DEFAULT_ALLOWED_IMPORTS,
    OUTPUT_CAP_BYTES,
    main,
    run_program,
    serve,
)

__all__ = [
    "DEFAULT_ALLOWED_IMPORTS",
    "OUTPUT_CAP_BYTES",
    "main",
    "run_program",
    "serve",
]
