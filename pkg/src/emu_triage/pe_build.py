"""Minimal PE32/PE32+ image writer.

Produces headers plus a single ``.idata`` section holding an import
directory. The images are not runnable; they exist so import parsing and
imphash can be exercised without shipping real binaries.
"""

from __future__ import annotations

import struct

_FILE_ALIGN = 0x200
_SECT_ALIGN = 0x1000
_IDATA_RVA = 0x1000


def _align(n, a):
    return (n + a - 1) // a * a


def _build_idata(imports, is_64: bool, base_rva: int) -> bytes:
    """Lay out descriptors, ILTs, IATs, DLL names and hint/name entries."""
    thunk_size = 8 if is_64 else 4
    ord_flag = (1 << 63) if is_64 else (1 << 31)
    thunk_fmt = "<Q" if is_64 else "<I"

    desc_size = 20 * (len(imports) + 1)
    thunk_arrays = [thunk_size * (len(funcs) + 1) for _, funcs in imports]
    ilt_off = desc_size
    iat_off = ilt_off + sum(thunk_arrays)
    str_off = iat_off + sum(thunk_arrays)

    strings = bytearray()
    dll_name_rvas = []
    func_rvas = []
    for dll, funcs in imports:
        dll_name_rvas.append(base_rva + str_off + len(strings))
        strings += dll.encode("latin-1") + b"\0"
        if len(strings) % 2:
            strings += b"\0"
        rvas = []
        for f in funcs:
            if isinstance(f, int):
                rvas.append(None)
                continue
            rvas.append(base_rva + str_off + len(strings))
            strings += struct.pack("<H", 0) + f.encode("latin-1") + b"\0"
            if len(strings) % 2:
                strings += b"\0"
        func_rvas.append(rvas)

    out = bytearray(str_off + len(strings))
    out[str_off:] = strings
    ilt_cur, iat_cur = ilt_off, iat_off
    for i, (_dll, funcs) in enumerate(imports):
        struct.pack_into("<IIIII", out, 20 * i,
                         base_rva + ilt_cur, 0, 0, dll_name_rvas[i], base_rva + iat_cur)
        for f, rva in zip(funcs, func_rvas[i]):
            value = (ord_flag | f) if isinstance(f, int) else rva
            struct.pack_into(thunk_fmt, out, ilt_cur, value)
            struct.pack_into(thunk_fmt, out, iat_cur, value)
            ilt_cur += thunk_size
            iat_cur += thunk_size
        ilt_cur += thunk_size
        iat_cur += thunk_size
    return bytes(out)


def build_pe(imports=(), is_64: bool = False, stub: bytes = b"") -> bytes:
    """Build a PE image.

    ``imports`` is a sequence of ``(dll_name, [func_name_or_ordinal, ...])``.
    With no imports the image has no sections and an empty import directory
    entry. ``stub`` is copied into the DOS stub area (at most 64 bytes) and can
    be used to make otherwise identical images hash differently.
    """
    imports = [(dll, list(funcs)) for dll, funcs in imports]
    if len(stub) > 64:
        raise ValueError("stub is limited to 64 bytes")
    e_lfanew = 0x80
    opt_size = 240 if is_64 else 224
    n_sections = 1 if imports else 0
    headers_len = e_lfanew + 4 + 20 + opt_size + 40 * n_sections
    size_of_headers = _align(headers_len, _FILE_ALIGN)

    idata = _build_idata(imports, is_64, _IDATA_RVA) if imports else b""
    raw_size = _align(len(idata), _FILE_ALIGN) if idata else 0
    size_of_image = _align(_IDATA_RVA + max(len(idata), 1), _SECT_ALIGN) if idata else _SECT_ALIGN

    buf = bytearray(size_of_headers + raw_size)
    buf[0:2] = b"MZ"
    struct.pack_into("<I", buf, 0x3C, e_lfanew)
    buf[0x40:0x40 + len(stub)] = stub
    buf[e_lfanew:e_lfanew + 4] = b"PE\0\0"

    coff = e_lfanew + 4
    machine = 0x8664 if is_64 else 0x14C
    characteristics = 0x0022 if is_64 else 0x0102
    struct.pack_into("<HHIIIHH", buf, coff, machine, n_sections, 0, 0, 0, opt_size, characteristics)

    opt = coff + 20
    if is_64:
        struct.pack_into("<HBBIIIII", buf, opt, 0x20B, 14, 0, 0, raw_size, 0, 0, _IDATA_RVA)
        struct.pack_into("<QII", buf, opt + 24, 0x140000000, _SECT_ALIGN, _FILE_ALIGN)
        struct.pack_into("<HHHHHHIIIIHH", buf, opt + 40, 6, 0, 0, 0, 6, 0, 0,
                         size_of_image, size_of_headers, 0, 3, 0x8160)
        struct.pack_into("<QQQQII", buf, opt + 72, 0x100000, 0x1000, 0x100000, 0x1000, 0, 16)
        dd = opt + 112
    else:
        struct.pack_into("<HBBIIIIII", buf, opt, 0x10B, 14, 0, 0, raw_size, 0, 0, _IDATA_RVA, _IDATA_RVA)
        struct.pack_into("<III", buf, opt + 28, 0x400000, _SECT_ALIGN, _FILE_ALIGN)
        struct.pack_into("<HHHHHHIIIIHH", buf, opt + 40, 6, 0, 0, 0, 6, 0, 0,
                         size_of_image, size_of_headers, 0, 3, 0x8140)
        struct.pack_into("<IIIIII", buf, opt + 72, 0x100000, 0x1000, 0x100000, 0x1000, 0, 16)
        dd = opt + 96

    if imports:
        struct.pack_into("<II", buf, dd + 8, _IDATA_RVA, 20 * (len(imports) + 1))
        sec = opt + opt_size
        struct.pack_into("<8sIIIIIIHHI", buf, sec, b".idata", len(idata), _IDATA_RVA,
                         raw_size, size_of_headers, 0, 0, 0, 0, 0xC0000040)
        buf[size_of_headers:size_of_headers + len(idata)] = idata
    return bytes(buf)
