"""Collapse raw Win32/CRT call names into canonical feature tokens.

The chain applied to every call name is: mangled-name detection, then the
ANSI/Unicode suffix merge, the ``Ex`` merge and the CRT alias merge. The
last three are repeated until the name stops changing so the chain is
idempotent (``LoadLibraryExW`` -> ``LoadLibraryEx`` -> ``LoadLibrary``).
"""

from __future__ import annotations

import csv
import io
import re
from collections import Counter
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

from .errors import ConfigError
from .ingest import ApiCallRecord, EmulationReport

KINDS = ("api", "api_arg", "mangled", "imphash")
MANGLED_PREFIX = "mangled::"
IMPHASH_PREFIX = "imphash::"
ARG_SEP = "->"

_MODULE_APIS = ("LoadLibrary", "GetModuleHandle")
_PROC_API = "GetProcAddress"
_NULL_ARGS = frozenset({"", "0", "0x0", "null", "none", "nullptr"})
_MAX_CHAIN_ROUNDS = 16

_STDCALL_RE = re.compile(r"_([^@]+)@(\d+)")
_FASTCALL_RE = re.compile(r"@([^@]+)@(\d+)")


@dataclass(frozen=True, order=True)
class FeatureToken:
    text: str
    kind: str = "api"

    def __post_init__(self):
        if not self.text:
            raise ValueError("token text must be nonempty")
        if self.kind not in KINDS:
            raise ValueError(f"unknown token kind {self.kind!r}")

    def __str__(self):
        return self.text


AliasTable = Mapping[str, str]


def _guard_char(c: str) -> bool:
    return c.islower() or c.isdigit()


def strip_ansi_unicode(name: str) -> str:
    if len(name) > 3 and name[-1] in "AW" and _guard_char(name[-2]):
        return name[:-1]
    return name


def strip_ex(name: str) -> str:
    if len(name) > 4 and name.endswith("Ex") and _guard_char(name[-3]):
        return name[:-2]
    return name


def flatten_aliases(pairs) -> AliasTable:
    """Resolve alias chains so every value is a non-alias canonical name."""
    raw = dict(pairs)
    flat = {}
    for alias in raw:
        seen = {alias}
        target = raw[alias]
        while target in raw:
            if target in seen:
                raise ValueError(f"alias cycle through {target!r}")
            seen.add(target)
            target = raw[target]
        if target != alias:
            flat[alias] = target
    return MappingProxyType(flat)


def load_aliases(path=None) -> AliasTable:
    """Read a two-column ``alias,canonical`` CSV; ``None`` loads the shipped table."""
    if path is None:
        text = resources.files("emu_triage.data").joinpath("crt_aliases.csv").read_text("utf-8")
    else:
        if not Path(path).is_file():
            raise ConfigError(f"alias table not found: {path}")
        text = Path(path).read_text("utf-8")
    rows = csv.DictReader(io.StringIO(text))
    if rows.fieldnames is None or not {"alias", "canonical"} <= set(rows.fieldnames):
        raise ConfigError(f"alias table {path or 'crt_aliases.csv'} needs an 'alias,canonical' header")
    return flatten_aliases((r["alias"].strip(), r["canonical"].strip()) for r in rows if r["alias"].strip())


_default_aliases = None


def default_aliases() -> AliasTable:
    global _default_aliases
    if _default_aliases is None:
        _default_aliases = load_aliases()
    return _default_aliases


def merge_crt(name: str, aliases: AliasTable) -> str:
    return aliases.get(name, name)


def mangle_signature(name: str) -> FeatureToken | None:
    """Root-identifier token for MSVC C++, stdcall and fastcall decorated names."""
    root = None
    if name.startswith("?"):
        root = name[1:].split("@", 1)[0]
    else:
        m = _STDCALL_RE.fullmatch(name) or _FASTCALL_RE.fullmatch(name)
        if m:
            root = m.group(1)
    if not root:
        return None
    return FeatureToken(MANGLED_PREFIX + root, "mangled")


def canonical_name(name: str, aliases: AliasTable | None = None) -> str:
    """Run the A/W, Ex and CRT merges to a fixed point (no mangle check)."""
    aliases = default_aliases() if aliases is None else aliases
    for _ in range(_MAX_CHAIN_ROUNDS):
        nxt = merge_crt(strip_ex(strip_ansi_unicode(name)), aliases)
        if nxt == name:
            break
        name = nxt
    return name


def unify_name(name: str, aliases: AliasTable | None = None) -> FeatureToken:
    mangled = mangle_signature(name)
    if mangled is not None:
        return mangled
    return FeatureToken(canonical_name(name, aliases), "api")


def _present(arg: str | None) -> bool:
    return arg is not None and arg.strip().lower() not in _NULL_ARGS


def _module_basename(path: str) -> str:
    return re.split(r"[\\/]", path.strip().strip('"'))[-1].lower()


def arg_tokens(call: ApiCallRecord, canonical_api: str,
               aliases: AliasTable | None = None) -> list[FeatureToken]:
    """Argument-bearing tokens for the module-loading and proc-resolution APIs.

    ``"0"``, ``"NULL"`` and similar null renderings count as an absent argument.
    """
    args = call.args
    if canonical_api in _MODULE_APIS:
        if not args or not _present(args[0]):
            return []
        base = _module_basename(args[0])
        return [FeatureToken(f"{canonical_api}{ARG_SEP}{base}", "api_arg")] if base else []
    if canonical_api == _PROC_API:
        if len(args) < 2 or not _present(args[1]):
            return []
        proc = args[1].strip()
        tok = unify_name(proc, aliases)
        text = tok.text[len(MANGLED_PREFIX):] if tok.kind == "mangled" else tok.text
        return [FeatureToken(f"{_PROC_API}{ARG_SEP}{text.lower()}", "api_arg")]
    return []


def unify_call(call: ApiCallRecord, aliases: AliasTable | None = None) -> list[tuple[FeatureToken, int]]:
    aliases = default_aliases() if aliases is None else aliases
    api = unify_name(call.api_name, aliases)
    out = [(api, call.count)]
    if api.kind == "api":
        out.extend((t, call.count) for t in arg_tokens(call, api.text, aliases))
    return out


def featurize_report(report: EmulationReport, aliases: AliasTable | None = None) -> dict[FeatureToken, int]:
    """Token -> summed count, in first-seen order."""
    aliases = default_aliases() if aliases is None else aliases
    counts: Counter = Counter()
    for call in report.calls:
        for tok, n in unify_call(call, aliases):
            counts[tok] += n
    return dict(counts)
