"""Plain-text progress lines on standard error: ``STAGE <name> <pct> <elapsed>``."""
from __future__ import annotations

import sys
import time


class Progress:
    """Callable ``progress(name, pct)``; silent when ``quiet``.

    Progress output never feeds back into computation, so quiet and verbose
    runs produce the same artifacts.
    """

    def __init__(self, quiet: bool = False, stream=None):
        self.quiet = quiet
        self.stream = stream
        self.t0 = time.monotonic()

    def __call__(self, name: str, pct: float):
        if self.quiet:
            return
        stream = self.stream or sys.stderr
        elapsed = time.monotonic() - self.t0
        stream.write(f"STAGE {name} {pct:.1f} {elapsed:.2f}s\n")
        stream.flush()
