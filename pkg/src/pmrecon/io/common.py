"""Shared plumbing for the binary formats: parse errors and atomic writes."""

from __future__ import annotations

import os
import struct
import tempfile


class ParseError(ValueError):
    """Malformed or truncated file.

    Attributes
    ----------
    offset : int
        Byte offset where parsing failed.
    expected, actual : int or None
        Byte lengths, set for truncation errors.
    """

    def __init__(self, message, offset=0, expected=None, actual=None, path=None):
        where = f"{path}: " if path else ""
        if expected is not None:
            message = f"{message} (expected {expected} bytes, got {actual})"
        super().__init__(f"{where}{message} at byte {offset}")
        self.offset = offset
        self.expected = expected
        self.actual = actual
        self.path = path


class Reader:
    """Sequential little-endian reader over a bytes buffer."""

    def __init__(self, data: bytes, path=None):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise ParseError(f"truncated {what}", self.pos, n, len(self.data) - self.pos, self.path)
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size, what))

    def fail(self, message, offset=None):
        raise ParseError(message, self.pos if offset is None else offset, path=self.path)

    def finish(self):
        if self.pos != len(self.data):
            raise ParseError(f"{len(self.data) - self.pos} trailing bytes", self.pos, path=self.path)


def atomic_write(path, payload: bytes):
    """Write ``payload`` to a temporary file next to ``path``, then rename it over ``path``."""
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=folder)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_bytes(path) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()
