"""Small file helpers shared by the readers/writers."""

from __future__ import annotations

import os


def atomic_write(path: str | os.PathLike, data: bytes) -> None:
    """Write ``data`` to a sibling temp file, then rename it over ``path``.

    Readers never see a half-written file.
    """
    path = os.fspath(path)
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    tmp = f"{path}.{os.getpid()}.tmp"
    try:
        with open(tmp, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)
