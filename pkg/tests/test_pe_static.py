import hashlib
import struct

import pytest
from hypothesis import given
from hypothesis import strategies as st

from emu_triage.errors import MalformedImportDirectory, NotPe, TruncatedHeader
from emu_triage.pe_build import build_pe
from emu_triage.pe_static import ImportEntry, ImportTable, imphash, imphash_file, imphash_string, parse_imports

KERNEL = ("KERNEL32.DLL", ["ExitProcess", "CreateFileA"])


def test_named_imports_in_order():
    table = parse_imports(build_pe([KERNEL]))
    assert [(e.dll_name, e.name) for e in table.entries] == [("KERNEL32.DLL", "ExitProcess"),
                                                             ("KERNEL32.DLL", "CreateFileA")]
    assert not table.is_64bit


def test_64bit_flag_and_entries():
    table = parse_imports(build_pe([KERNEL, ("ws2_32.dll", [1])], is_64=True))
    assert table.is_64bit
    assert table.entries[-1] == ImportEntry("ws2_32.dll", ordinal=1)


def test_empty_import_directory():
    assert parse_imports(build_pe()).entries == ()


def test_not_pe():
    with pytest.raises(NotPe):
        parse_imports(b"ELF\x7f" + bytes(200))


def test_missing_pe_signature():
    data = bytearray(build_pe([KERNEL]))
    data[0x80:0x84] = b"XX\0\0"
    with pytest.raises(NotPe):
        parse_imports(bytes(data))


@pytest.mark.parametrize("length", [2, 0x40, 0x84, 0x100])
def test_truncated_header(length):
    with pytest.raises(TruncatedHeader):
        parse_imports(build_pe([KERNEL])[:length])


def test_import_rva_outside_file():
    data = bytearray(build_pe([KERNEL]))
    # 32-bit import directory entry: optional header at 0x98, data directories at +96
    struct.pack_into("<I", data, 0x98 + 96 + 8, 0x7FFF0000)
    with pytest.raises(MalformedImportDirectory):
        parse_imports(bytes(data))


def test_truncated_section_body():
    data = build_pe([KERNEL])
    with pytest.raises(MalformedImportDirectory):
        parse_imports(data[:0x210])


def md5(s):
    return hashlib.md5(s.encode()).hexdigest()


def test_imphash_empty_table():
    assert imphash(ImportTable()) == "d41d8cd98f00b204e9800998ecf8427e"


def test_imphash_convention():
    table = ImportTable((ImportEntry("KERNEL32.DLL", "ExitProcess"), ImportEntry("Foo.SYS", ordinal=9),
                         ImportEntry("bar.ocx", "X"), ImportEntry("baz.exe", "Y"), ImportEntry("noext", "Z")))
    assert imphash_string(table) == "kernel32.exitprocess,foo.ord9,bar.x,baz.exe.y,noext.z"


def test_imphash_ordinal_literal():
    assert imphash(ImportTable((ImportEntry("WS2_32.DLL", ordinal=1),))) == md5("ws2_32.ord1")


def test_imphash_order_sensitive():
    a, b = ImportEntry("k.dll", "a"), ImportEntry("k.dll", "b")
    assert imphash(ImportTable((a, b))) != imphash(ImportTable((b, a)))


def test_imphash_file(tmp_path):
    p = tmp_path / "x.exe"
    p.write_bytes(build_pe([KERNEL]))
    assert imphash_file(p) == md5("kernel32.exitprocess,kernel32.createfilea")


funcs = st.one_of(st.integers(1, 0xFFFF), st.from_regex(r"[A-Za-z_][A-Za-z0-9_]{0,15}", fullmatch=True))
# pefile resolves ordinals of these by name; the rendering here is literal
_NAMED_ORDINAL_DLLS = {"ws2_32", "wsock32", "oleaut32"}
dlls = st.from_regex(r"[A-Za-z][A-Za-z0-9_]{0,7}\.(dll|DLL|sys|ocx|drv)", fullmatch=True).filter(
    lambda d: d.split(".")[0].lower() not in _NAMED_ORDINAL_DLLS)
import_lists = st.lists(st.tuples(dlls, st.lists(funcs, min_size=1, max_size=4)), max_size=4)


@given(import_lists, st.booleans())
def test_build_parse_round_trip(imports, is_64):
    table = parse_imports(build_pe(imports, is_64=is_64))
    expected = [(dll, f if isinstance(f, str) else None, f if isinstance(f, int) else None)
                for dll, fs in imports for f in fs]
    assert [(e.dll_name, e.name, e.ordinal) for e in table.entries] == expected


@given(st.binary(max_size=600))
def test_parser_never_crashes_on_garbage(data):
    try:
        parse_imports(b"MZ" + data)
    except (NotPe, TruncatedHeader, MalformedImportDirectory):
        pass


@given(import_lists, st.data())
def test_parser_total_on_truncations(imports, data):
    pe = build_pe(imports)
    cut = data.draw(st.integers(0, len(pe)))
    try:
        parse_imports(pe[:cut])
    except (NotPe, TruncatedHeader, MalformedImportDirectory):
        pass


@given(import_lists, st.booleans())
def test_agrees_with_pefile(imports, is_64):
    pefile = pytest.importorskip("pefile")
    pe = build_pe(imports, is_64=is_64)
    theirs = pefile.PE(data=pe).get_imphash()
    if not imports:
        assert theirs == ""
    else:
        assert imphash(parse_imports(pe)) == theirs
