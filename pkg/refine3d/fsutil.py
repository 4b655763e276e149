"""
Atomic file output helpers - every command writes to a temporary sibling first
"""
import os
import shutil
import tempfile
from contextlib import ExitStack, contextmanager
from pathlib import Path
from typing import Iterator, Mapping, Union

PathLike = Union[str, os.PathLike]


@contextmanager
def atomic_path(path: PathLike) -> Iterator[Path]:
    """
    Yield a temporary path next to `path`; move it into place when the block exits cleanly.

    The temporary file is removed if the block raises.
    """
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, temp_name = tempfile.mkstemp(prefix=f".{target.name}.", suffix=".tmp", dir=target.parent)
    os.close(fd)
    temp_path = Path(temp_name)
    try:
        yield temp_path
        os.replace(temp_path, target)
    finally:
        if temp_path.exists():
            temp_path.unlink()


def write_bytes_atomic(path: PathLike, payload: bytes) -> None:
    with atomic_path(path) as temp_path:
        temp_path.write_bytes(payload)


def write_text_atomic(path: PathLike, text: str) -> None:
    write_bytes_atomic(path, text.encode("utf-8"))


def write_files_atomic(outputs: Mapping[PathLike, bytes]) -> None:
    """Stage every payload next to its target; none is moved into place unless all were written"""
    with ExitStack() as stack:
        for path, payload in outputs.items():
            stack.enter_context(atomic_path(path)).write_bytes(payload)


@contextmanager
def atomic_directory(path: PathLike) -> Iterator[Path]:
    """
    Build a directory in a temporary sibling and rename it over `path` on success.

    An existing `path` is replaced only after the new tree is complete.
    """
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    temp_dir = Path(tempfile.mkdtemp(prefix=f".{target.name}.", suffix=".tmp", dir=target.parent))
    try:
        yield temp_dir
        if target.exists():
            shutil.rmtree(target)
        os.replace(temp_dir, target)
    finally:
        if temp_dir.exists():
            shutil.rmtree(temp_dir)
