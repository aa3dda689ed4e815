"""Small helpers shared by every file writer."""
from __future__ import annotations

import os
import tempfile
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator

from .errors import SSGLError


def format_real(value: float) -> str:
    """Render a real with at least 9 significant digits.

    Values of magnitude >= 0.1 (and zero) use fixed notation with 9
    decimals, smaller ones switch to exponent notation so they never
    collapse to zero.
    """
    value = float(value)
    if value == 0.0 or abs(value) >= 0.1:
        return f"{value:.9f}"
    return f"{value:.9e}"


@contextmanager
def atomic_write(path: str | os.PathLike, mode: str = "w") -> Iterator:
    """Write to a temporary sibling file and rename it over `path` on success."""
    target = Path(path)
    directory = target.parent if str(target.parent) else Path(".")
    if not directory.is_dir():
        raise SSGLError(f"cannot write {target}: directory does not exist")
    fd, tmp = tempfile.mkstemp(prefix=f".{target.name}.", dir=directory)
    try:
        kwargs = {"newline": "\n", "encoding": "utf-8"} if "b" not in mode else {}
        with os.fdopen(fd, mode, **kwargs) as fh:
            yield fh
        os.replace(tmp, target)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise
