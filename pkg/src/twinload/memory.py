"""Flat backing store for line-granularity DRAM contents."""

from __future__ import annotations

import hashlib
from typing import Dict, Iterable, Optional

FAKE_BYTE = 0x5A


def fake_line(line_size: int = 64, byte: int = FAKE_BYTE) -> bytes:
    return bytes([byte]) * line_size


class BackingStore:
    """Lazily initialised memory image keyed by line address.

    Untouched lines read as a deterministic pseudo-random pattern derived
    from ``seed``; ``fake_lines`` lists lines that start out holding the
    fake pattern (collision inputs).
    """

    def __init__(self, seed: int = 0, line_size: int = 64, fake_lines: Optional[Iterable[int]] = None,
                 fake_byte: int = FAKE_BYTE):
        self.seed = seed
        self.line_size = line_size
        self._key = seed.to_bytes(8, "little", signed=True)
        self._lines: Dict[int, bytes] = {}
        fake = fake_line(line_size, fake_byte)
        for addr in fake_lines or ():
            self._lines[addr] = fake

    def initial(self, addr: int) -> bytes:
        h = hashlib.blake2b(addr.to_bytes(8, "little"), key=self._key, digest_size=64).digest()
        return (h * (self.line_size // 64 + 1))[: self.line_size]

    def read(self, addr: int) -> bytes:
        line = self._lines.get(addr)
        if line is None:
            line = self._lines[addr] = self.initial(addr)
        return line

    def write(self, addr: int, line: bytes) -> None:
        if len(line) != self.line_size:
            raise ValueError(f"line of {len(line)} bytes, expected {self.line_size}")
        self._lines[addr] = bytes(line)

    def write_word(self, addr: int, offset: int, data: bytes) -> bytes:
        line = bytearray(self.read(addr))
        line[offset: offset + len(data)] = data
        self._lines[addr] = bytes(line)
        return self._lines[addr]

    def touched(self):
        return self._lines.keys()

    def copy(self) -> "BackingStore":
        other = BackingStore.__new__(BackingStore)
        other.__dict__.update(self.__dict__)
        other._lines = dict(self._lines)
        return other
