"""PE import-table parsing and imphash.

Only the classic import directory (data directory 1) is read; delay-load
imports, bound imports and export-based ordinal resolution are ignored.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

from .errors import MalformedImportDirectory, NotPe, TruncatedHeader

_MAX_DESCRIPTORS = 4096
_MAX_THUNKS = 65536
_MAX_NAME = 4096
_STRIPPED_EXTS = ("dll", "sys", "ocx")


@dataclass(frozen=True)
class ImportEntry:
    dll_name: str
    name: str | None = None
    ordinal: int | None = None

    def __post_init__(self):
        if not self.dll_name:
            raise ValueError("dll_name must be nonempty")
        if (self.name is None) == (self.ordinal is None):
            raise ValueError("exactly one of name/ordinal must be set")


@dataclass(frozen=True)
class ImportTable:
    entries: tuple[ImportEntry, ...] = ()
    is_64bit: bool = False

    def __len__(self):
        return len(self.entries)


@dataclass(frozen=True)
class _Section:
    va: int
    vsize: int
    raw_ptr: int
    raw_size: int


class _Reader:
    def __init__(self, data: bytes):
        self.data = data

    def unpack(self, fmt, offset, exc=TruncatedHeader):
        size = struct.calcsize(fmt)
        if offset < 0 or offset + size > len(self.data):
            raise exc(f"read of {size} bytes at {offset:#x} exceeds {len(self.data)}-byte buffer")
        return struct.unpack_from(fmt, self.data, offset)

    def cstring(self, offset) -> str:
        if offset < 0 or offset >= len(self.data):
            raise MalformedImportDirectory(f"string offset {offset:#x} out of range")
        end = self.data.find(b"\0", offset, offset + _MAX_NAME)
        if end < 0:
            raise MalformedImportDirectory(f"unterminated string at {offset:#x}")
        return self.data[offset:end].decode("latin-1")


def _rva_to_offset(rva: int, sections, size_of_headers: int, buf_len: int) -> int:
    for s in sections:
        if s.va <= rva < s.va + max(s.vsize, s.raw_size):
            off = s.raw_ptr + (rva - s.va)
            if off >= buf_len:
                break
            return off
    if rva < size_of_headers and rva < buf_len:
        return rva
    raise MalformedImportDirectory(f"RVA {rva:#x} maps outside the file")


def parse_imports(pe_bytes: bytes) -> ImportTable:
    """Return the import table in descriptor order, then thunk order."""
    r = _Reader(bytes(pe_bytes))
    if len(r.data) < 2 or r.data[:2] != b"MZ":
        raise NotPe("missing MZ signature")
    (e_lfanew,) = r.unpack("<I", 0x3C)
    if r.unpack("<4s", e_lfanew)[0] != b"PE\0\0":
        raise NotPe("missing PE signature")

    coff = e_lfanew + 4
    _machine, n_sections, _, _, _, opt_size, _ = r.unpack("<HHIIIHH", coff)
    opt = coff + 20
    (magic,) = r.unpack("<H", opt)
    if magic == 0x10B:
        is_64 = False
        dd_count_off, dd_off = opt + 92, opt + 96
    elif magic == 0x20B:
        is_64 = True
        dd_count_off, dd_off = opt + 108, opt + 112
    else:
        raise NotPe(f"unknown optional header magic {magic:#x}")
    (size_of_headers,) = r.unpack("<I", opt + 60)
    (n_dirs,) = r.unpack("<I", dd_count_off)

    sec_off = opt + opt_size
    sections = []
    for i in range(n_sections):
        vsize, va, raw_size, raw_ptr = r.unpack("<IIII", sec_off + 40 * i + 8)
        sections.append(_Section(va, vsize, raw_ptr, raw_size))

    if n_dirs < 2:
        return ImportTable((), is_64)
    imp_rva, imp_size = r.unpack("<II", dd_off + 8)
    if imp_rva == 0:
        return ImportTable((), is_64)

    def to_off(rva):
        return _rva_to_offset(rva, sections, size_of_headers, len(r.data))

    thunk_fmt, ord_flag = ("<Q", 1 << 63) if is_64 else ("<I", 1 << 31)
    thunk_size = 8 if is_64 else 4

    entries = []
    desc = to_off(imp_rva)
    for _ in range(_MAX_DESCRIPTORS):
        oft, _ts, _fwd, name_rva, ft = r.unpack("<IIIII", desc, MalformedImportDirectory)
        if not (oft or name_rva or ft):
            break
        dll = r.cstring(to_off(name_rva))
        if not dll:
            raise MalformedImportDirectory(f"empty DLL name in descriptor at {desc:#x}")
        thunk = to_off(oft or ft)
        for _ in range(_MAX_THUNKS):
            (value,) = r.unpack(thunk_fmt, thunk, MalformedImportDirectory)
            if value == 0:
                break
            if value & ord_flag:
                entries.append(ImportEntry(dll, ordinal=value & 0xFFFF))
            else:
                hint_name = to_off(value & 0x7FFFFFFF)
                r.unpack("<H", hint_name, MalformedImportDirectory)
                entries.append(ImportEntry(dll, name=r.cstring(hint_name + 2)))
            thunk += thunk_size
        else:
            raise MalformedImportDirectory(f"thunk array for {dll} is not terminated")
        desc += 20
    else:
        raise MalformedImportDirectory("import descriptor array is not terminated")
    return ImportTable(tuple(entries), is_64)


def imphash_string(table: ImportTable) -> str:
    parts = []
    for e in table.entries:
        dll = e.dll_name.lower()
        stem, dot, ext = dll.rpartition(".")
        if dot and ext in _STRIPPED_EXTS:
            dll = stem
        func = f"ord{e.ordinal}" if e.name is None else e.name.lower()
        parts.append(f"{dll}.{func}")
    return ",".join(parts)


def imphash(table: ImportTable) -> str:
    """MD5 of the comma-joined ``dll.func`` list; ordinals render as ``ord<N>``."""
    return hashlib.md5(imphash_string(table).encode("latin-1")).hexdigest()


def imphash_file(path) -> str:
    return imphash(parse_imports(Path(path).read_bytes()))
