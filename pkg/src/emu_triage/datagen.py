"""Deterministic synthetic corpora with planted family signatures.

Signature tokens are written in unified-token space:

* ``"CreateFile"``                     plain API
* ``"LoadLibrary->ws2_32.dll"``        module-loading API with its module
* ``"GetProcAddress->virtualalloc"``   resolved procedure
* ``"mangled::Init"``                  root of a decorated C++ symbol

and rendered back into raw emulator output (A/W/Ex variants, full module
paths, decorated names), so featurizing a generated corpus exercises the
whole unification chain.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import InvalidSpec
from .ingest import (
    BENIGN_FAMILY,
    MANIFEST_HEADER,
    ApiCallRecord,
    EmulationReport,
    serialize_report,
)
from .pe_build import build_pe
from .unify import ARG_SEP, MANGLED_PREFIX, canonical_name

REPORTS_DIR = "reports"
BINS_DIR = "bins"


@dataclass
class FamilySpec:
    name: str
    n_samples: int
    signature_tokens: list[str]
    signature_rate: float = 1.0
    shared_noise_tokens: int = 3
    confuse_with: str | None = None
    confuse_fraction: float = 0.8
    imports: list | None = None


@dataclass
class BenignSpec:
    n_samples: int
    token_pool: list[str]
    token_rate: float = 0.9


@dataclass
class SynthSpec:
    families: list[FamilySpec]
    benign: BenignSpec | None = None
    noise_pool: list[str] = field(default_factory=list)
    rng_seed: int = 0
    raw_variants: bool = True
    corrupt_binary_rate: float = 0.0

    @classmethod
    def from_dict(cls, d) -> "SynthSpec":
        try:
            fams = [FamilySpec(**f) for f in d["families"]]
            benign = BenignSpec(**d["benign"]) if d.get("benign") else None
            rest = {k: v for k, v in d.items() if k not in ("families", "benign")}
            return cls(fams, benign, **rest)
        except (KeyError, TypeError) as exc:
            raise InvalidSpec(f"bad spec document: {exc}") from exc


@dataclass(frozen=True)
class Sample:
    report: EmulationReport
    label: str
    family: str
    binary: bytes

    @property
    def sample_id(self) -> str:
        return self.report.sample_id


def _check_token(tok: str) -> None:
    if not tok or tok != tok.strip():
        raise InvalidSpec(f"bad token {tok!r}")
    if tok.startswith(MANGLED_PREFIX):
        if not tok[len(MANGLED_PREFIX):].isidentifier():
            raise InvalidSpec(f"mangled root must be an identifier: {tok!r}")
        return
    api = tok.split(ARG_SEP, 1)[0]
    if canonical_name(api) != api:
        raise InvalidSpec(f"{api!r} is not a unified name (it unifies to {canonical_name(api)!r})")
    if ARG_SEP in tok and api not in ("LoadLibrary", "GetModuleHandle", "GetProcAddress"):
        raise InvalidSpec(f"{api!r} takes no argument token")


def resolve_signatures(spec: SynthSpec) -> dict[str, list[str]]:
    """Validate ``spec`` and return each family's effective signature.

    A family with ``confuse_with`` takes the leading ``confuse_fraction`` share
    of its partner's signature (the partner must be declared earlier) and
    fills the rest from its own list.
    """
    names = [f.name for f in spec.families]
    if len(set(names)) != len(names):
        raise InvalidSpec("family names must be unique")
    if not spec.families:
        raise InvalidSpec("at least one family is required")
    if not 0.0 <= spec.corrupt_binary_rate <= 1.0:
        raise InvalidSpec("corrupt_binary_rate must be in [0, 1]")
    sigs = {}
    for f in spec.families:
        if f.name in ("", BENIGN_FAMILY):
            raise InvalidSpec(f"reserved family name {f.name!r}")
        if not 0.0 < f.signature_rate <= 1.0:
            raise InvalidSpec(f"{f.name}: signature_rate must be in (0, 1]")
        if f.n_samples < 1 or f.shared_noise_tokens < 0:
            raise InvalidSpec(f"{f.name}: n_samples must be positive, noise nonnegative")
        for tok in f.signature_tokens:
            _check_token(tok)
        own = list(dict.fromkeys(f.signature_tokens))
        if f.confuse_with is not None:
            if f.confuse_with not in sigs:
                raise InvalidSpec(f"{f.name}: confuse_with {f.confuse_with!r} must name an earlier family")
            if not 0.0 < f.confuse_fraction <= 1.0:
                raise InvalidSpec(f"{f.name}: confuse_fraction must be in (0, 1]")
            partner = sigs[f.confuse_with]
            n_shared = int(round(f.confuse_fraction * len(partner)))
            shared = partner[:n_shared]
            own = shared + [t for t in own if t not in shared][: len(partner) - n_shared]
        if not own:
            raise InvalidSpec(f"{f.name}: empty signature")
        sigs[f.name] = own
    for tok in spec.noise_pool:
        _check_token(tok)
    if spec.benign is not None:
        if spec.benign.n_samples < 1 or not spec.benign.token_pool:
            raise InvalidSpec("benign needs samples and a token pool")
        if not 0.0 < spec.benign.token_rate <= 1.0:
            raise InvalidSpec("benign token_rate must be in (0, 1]")
        for tok in spec.benign.token_pool:
            _check_token(tok)
    return sigs


def _raw_names(api: str) -> list[str]:
    """Raw spellings that unify back to ``api``."""
    cands = [api, api + "A", api + "W", api + "ExA", api + "ExW", api + "Ex"]
    return [c for c in cands if canonical_name(c) == api]


def _module_path(module: str, rng) -> str:
    style = int(rng.integers(3))
    if style == 0:
        return module
    if style == 1:
        return "C:\\Windows\\System32\\" + module.upper()
    return "C:\\Windows\\SysWOW64\\" + module


def _render(tok: str, count: int, rng, raw: bool) -> list[ApiCallRecord]:
    """Raw calls whose unified tokens include ``tok`` with total ``count``."""
    if tok.startswith(MANGLED_PREFIX):
        root = tok[len(MANGLED_PREFIX):]
        name = f"?{root}@@YAHH@Z" if not raw or rng.random() < 0.5 else f"_{root}@{4 * int(rng.integers(1, 4))}"
        return [ApiCallRecord(name, (), count)]
    api, _, arg = tok.partition(ARG_SEP)
    spellings = _raw_names(api) if raw else [api]
    n_calls = min(count, 1 + int(rng.integers(2))) if len(spellings) > 1 else 1
    splits = np.bincount(rng.integers(n_calls, size=count - n_calls), minlength=n_calls) + 1
    calls = []
    for part in splits:
        name = spellings[int(rng.integers(len(spellings)))]
        if not arg:
            args = ()
        elif api == "GetProcAddress":
            proc = arg
            if raw:
                # present the resolved name in its exported spelling
                proc = arg[0].upper() + arg[1:]
            args = ("0x%08x" % int(rng.integers(0x10000000, 0x7fffffff)), proc)
        else:
            args = (_module_path(arg, rng) if raw else arg,)
        calls.append(ApiCallRecord(name, args, int(part)))
    return calls


def _default_imports(group: str) -> list:
    h = hashlib.sha256(group.encode()).digest()
    funcs = ["ExitProcess", "GetLastError", "Sleep", "CreateFileA", "ReadFile", "WriteFile",
             "CloseHandle", "VirtualAlloc", "HeapAlloc", "GetTickCount"]
    picked = [f for i, f in enumerate(funcs) if h[i] & 1] or ["ExitProcess"]
    return [("KERNEL32.dll", picked), (f"{group.lower()}.dll", [int(h[10]) + 1, f"Init{h[11]:02x}"])]


def _sample(rng, tokens, rate, noise_pool, noise_mean, raw, sample_id_seed, imports, corrupt_rate,
            label, family) -> Sample:
    present = [t for t in tokens if rng.random() < rate]
    if not present:
        present = [tokens[int(rng.integers(len(tokens)))]]
    if noise_pool and noise_mean > 0:
        k = min(int(rng.poisson(noise_mean)), len(noise_pool))
        present += [noise_pool[i] for i in sorted(rng.choice(len(noise_pool), size=k, replace=False))]
    calls = []
    for tok in present:
        calls.extend(_render(tok, 1 + int(rng.poisson(2.0)), rng, raw))
    order = rng.permutation(len(calls))
    calls = tuple(calls[i] for i in order)

    pe = build_pe(imports, is_64=bool(rng.random() < 0.3), stub=hashlib.sha256(sample_id_seed).digest())
    if rng.random() < corrupt_rate:
        pe = pe[:0x50]  # truncated before the PE header
    sample_id = hashlib.sha256(pe).hexdigest()

    roll = rng.random()
    if roll < 0.05:
        exit_kind, duration = "timeout", 60.0
    elif roll < 0.10:
        exit_kind, duration = "crash", round(float(rng.uniform(0.1, 5.0)), 3)
    else:
        exit_kind, duration = "graceful", round(float(rng.uniform(1.0, 20.0)), 3)
    report = EmulationReport(sample_id, calls, exit_kind, duration)
    return Sample(report, label, family, pe)


def generate(spec: SynthSpec) -> list[Sample]:
    """All samples of ``spec``: benign first, then families in declaration order."""
    sigs = resolve_signatures(spec)
    samples = []
    groups = []
    if spec.benign is not None:
        groups.append((BENIGN_FAMILY, "benign", spec.benign.n_samples, list(spec.benign.token_pool),
                       spec.benign.token_rate, 3, None))
    for f in spec.families:
        imports = f.imports
        if imports is None:
            imports = _default_imports(f.confuse_with or f.name)
        groups.append((f.name, "malicious", f.n_samples, sigs[f.name], f.signature_rate,
                       f.shared_noise_tokens, imports))
    for g, (family, label, n, tokens, rate, noise, imports) in enumerate(groups):
        for i in range(n):
            rng = np.random.default_rng(np.random.SeedSequence([spec.rng_seed, g, i]))
            imp = imports
            if imp is None:
                imp = _default_imports(f"benign{int(rng.integers(8))}")
            key = f"{spec.rng_seed}:{family}:{i}".encode()
            samples.append(_sample(rng, tokens, rate, spec.noise_pool, noise, spec.raw_variants, key, imp,
                                   spec.corrupt_binary_rate, label, family))
    return samples


def write_corpus(samples, out_dir) -> Path:
    """Write ``manifest.csv``, ``reports/<id>.json`` and ``bins/<id>.exe``; returns the manifest path."""
    out = Path(out_dir)
    (out / REPORTS_DIR).mkdir(parents=True, exist_ok=True)
    (out / BINS_DIR).mkdir(parents=True, exist_ok=True)
    rows = []
    for s in samples:
        (out / REPORTS_DIR / f"{s.sample_id}.json").write_bytes(serialize_report(s.report) + b"\n")
        (out / BINS_DIR / f"{s.sample_id}.exe").write_bytes(s.binary)
        rows.append((s.sample_id, s.label, s.family, f"{s.sample_id}.json", f"{BINS_DIR}/{s.sample_id}.exe"))
    manifest = out / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        w.writerows(rows)
    return manifest


NOISE_POOL = [
    "GetTickCount", "GetCurrentProcessId", "GetCurrentThreadId", "GetLastError", "SetLastError",
    "GetSystemTimeAsFileTime", "QueryPerformanceCounter", "GetModuleFileName", "GetCommandLine",
    "GetStartupInfo", "HeapAlloc", "HeapFree", "GetProcessHeap", "EnterCriticalSection",
    "LeaveCriticalSection", "InitializeCriticalSection", "TlsAlloc", "TlsGetValue", "TlsSetValue",
    "GetStdHandle", "WriteConsole", "MultiByteToWideChar", "WideCharToMultiByte", "GetACP",
    "GetCPInfo", "LCMapString", "GetStringType", "IsProcessorFeaturePresent", "Sleep",
    "GetEnvironmentVariable", "strlen", "memcpy", "memset", "malloc", "free", "strcmp",
    "GetModuleHandle->kernel32.dll", "GetProcAddress->flsalloc", "GetProcAddress->flsgetvalue",
    "LoadLibrary->user32.dll",
]

_FAMILY_TOKENS = {
    "Alpha": ["CreateFile", "WriteFile", "CryptEncrypt", "CryptGenKey", "FindFirstFile", "FindNextFile",
              "MoveFile", "DeleteFile"],
    "Bravo": ["InternetOpen", "InternetConnect", "HttpOpenRequest", "HttpSendRequest",
              "LoadLibrary->wininet.dll", "GetProcAddress->internetreadfile", "InternetReadFile",
              "mangled::Beacon"],
    "Charlie": ["RegOpenKey", "RegSetValue", "RegCreateKey", "RegQueryValue", "CreateService",
                "OpenSCManager", "StartService", "RegCloseKey"],
    "Delta": ["VirtualAlloc", "WriteProcessMemory", "CreateRemoteThread", "OpenProcess",
              "GetProcAddress->ntunmapviewofsection", "ResumeThread", "SetThreadContext",
              "LoadLibrary->ntdll.dll"],
    "Echo": ["WSAStartup", "socket", "connect", "send", "recv", "gethostbyname",
             "LoadLibrary->ws2_32.dll", "closesocket"],
    "Foxtrot": ["SetWindowsHook", "GetAsyncKeyState", "GetForegroundWindow", "GetWindowText",
                "GetKeyboardState", "MapVirtualKey", "mangled::KeyLog", "UnhookWindowsHook"],
}

BENIGN_TOKENS = ["CreateWindow", "RegisterClass", "ShowWindow", "UpdateWindow", "GetMessage",
                 "DispatchMessage", "TranslateMessage", "DefWindowProc", "BeginPaint", "EndPaint",
                 "LoadIcon", "LoadCursor"]


def preset(name: str, seed: int = 0) -> SynthSpec:
    """Built-in specs: ``easy``, ``confusable`` and ``paper-mini``."""
    if name == "easy":
        fams = [FamilySpec("Synth.Generic", 200, _FAMILY_TOKENS["Alpha"] + _FAMILY_TOKENS["Delta"],
                           signature_rate=0.8)]
        return SynthSpec(fams, BenignSpec(200, BENIGN_TOKENS, 0.8), NOISE_POOL, seed)
    if name == "paper-mini":
        fams = [FamilySpec(n, 100, _FAMILY_TOKENS[n], signature_rate=0.75)
                for n in ("Alpha", "Bravo", "Charlie", "Delta", "Echo")]
        return SynthSpec(fams, BenignSpec(100, BENIGN_TOKENS, 0.8), NOISE_POOL, seed, corrupt_binary_rate=0.02)
    if name == "confusable":
        def twin(base, other):
            return FamilySpec(base + "2", 60, _FAMILY_TOKENS[other], signature_rate=0.5,
                              confuse_with=base, confuse_fraction=0.875)
        fams = [
            FamilySpec("Alpha", 60, _FAMILY_TOKENS["Alpha"], signature_rate=0.5),
            twin("Alpha", "Echo"),
            FamilySpec("Bravo", 60, _FAMILY_TOKENS["Bravo"], signature_rate=0.5),
            twin("Bravo", "Foxtrot"),
            FamilySpec("Charlie", 60, _FAMILY_TOKENS["Charlie"], signature_rate=0.6),
            FamilySpec("Delta", 60, _FAMILY_TOKENS["Delta"], signature_rate=0.6),
        ]
        return SynthSpec(fams, BenignSpec(60, BENIGN_TOKENS, 0.8), NOISE_POOL, seed)
    raise InvalidSpec(f"unknown preset {name!r}; choose from {PRESETS}")


PRESETS = ("easy", "confusable", "paper-mini")


def with_seed(spec: SynthSpec, seed: int) -> SynthSpec:
    return replace(spec, rng_seed=seed)
