# -*- encoding: utf-8 -*-

import os
import tempfile
from contextlib import contextmanager
from pathlib import Path
from typing import Union


def is_power_of_two(n: int) -> bool:
    """Return True if `n` is a positive power of two (1 included)"""
    return n > 0 and (n & (n - 1)) == 0


@contextmanager
def atomic_write(path: Union[str, Path], mode: str = "wb"):
    """Open a temporary file next to `path` and rename it to `path` once the block completes

    If the block raises an exception, the temporary file is removed and `path` is left untouched."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode) as stream:
            yield stream
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
