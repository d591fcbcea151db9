# Walkthrough: how raw emulator calls become feature tokens, and how the
# import hash of a PE is computed.
#
#   python3 notebooks/01_tokens_and_imphash.py

# %%
from emu_triage.ingest import ApiCallRecord, EmulationReport
from emu_triage.pe_build import build_pe
from emu_triage.pe_static import imphash, imphash_string, parse_imports
from emu_triage.unify import canonical_name, featurize_report, unify_name

# %% A/W and Ex variants collapse onto one name. CRT aliases merge too.
for raw in ["CreateFileA", "CreateFileW", "LoadLibraryExW", "RegOpenKeyExA", "_stricmp", "GetDCEx"]:
    print(f"{raw:16} -> {canonical_name(raw)}")

# Decorated C++ and stdcall symbols keep only their root.
print(unify_name("?Init@@YAXXZ"), unify_name("_DllMain@12"))

# %% Counts of spellings that unify to the same token are added up.
report = EmulationReport("ab" * 32, (
    ApiCallRecord("CreateFileA", (), 2),
    ApiCallRecord("CreateFileW", (), 3),
    ApiCallRecord("LoadLibraryA", ("C:\\Windows\\System32\\WS2_32.dll",)),
    ApiCallRecord("GetProcAddress", ("0x7ff0", "VirtualAllocEx")),
))
for token, count in sorted(featurize_report(report).items(), key=lambda kv: kv[0].text):
    print(f"{count:3}  {token.kind:8} {token.text}")

# %% Import hash: lowercase dll without extension, dot, lowercase function,
# ordinals spelled ord<N>, comma separated, md5.
pe = build_pe([("KERNEL32.dll", ["ExitProcess", "CreateFileA"]), ("MyLib.OCX", [7, "Foo"])])
table = parse_imports(pe)
print(imphash_string(table))
print(imphash(table))
