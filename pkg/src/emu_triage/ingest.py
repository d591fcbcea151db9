"""Emulation reports and the corpus manifest that labels them.

A report is one JSON document per sample::

    {"sample_id": "<sha256>", "exit_kind": "graceful"|"timeout"|"crash",
     "duration_s": 10.5,
     "calls": [{"api_name": "CreateFileA", "args": ["C:\\\\x.txt"], "count": 1}]}

``count`` and ``args`` are optional on input and default to 1 and ``[]``.
The manifest is a CSV with header ``sample_id,class,family,report_path,binary_path``.
"""

from __future__ import annotations

import csv
import io
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .errors import (
    DuplicateSampleId,
    EmptyCorpus,
    EmuTriageError,
    InvalidDigest,
    MalformedJson,
    ManifestMissing,
    ReportMissing,
    SchemaViolation,
)

DEFAULT_TIMEOUT_S = 60.0
EXIT_KINDS = ("graceful", "timeout", "crash")
CLASSES = ("benign", "malicious")
BENIGN_FAMILY = "Benign"
UNKNOWN_FAMILY = "Unknown"
MANIFEST_HEADER = ("sample_id", "class", "family", "report_path", "binary_path")

_DIGEST_RE = re.compile(r"[0-9a-f]{64}")


@dataclass(frozen=True)
class ApiCallRecord:
    api_name: str
    args: tuple[str, ...] = ()
    count: int = 1

    def __post_init__(self):
        if not self.api_name:
            raise SchemaViolation("api_name", "empty")
        if self.count < 1:
            raise SchemaViolation("count", f"must be >= 1, got {self.count}")


@dataclass(frozen=True)
class EmulationReport:
    sample_id: str
    calls: tuple[ApiCallRecord, ...]
    exit_kind: str = "graceful"
    duration_s: float = 0.0


@dataclass(frozen=True)
class ManifestEntry:
    sample_id: str
    label: str
    family: str
    report_path: str
    binary_path: str | None = None


@dataclass(frozen=True)
class CorpusEntry:
    report: EmulationReport
    label: str
    family: str
    binary_path: Path | None = None

    @property
    def sample_id(self) -> str:
        return self.report.sample_id


@dataclass(frozen=True)
class LoadFailure:
    sample_id: str
    error: str
    message: str


@dataclass
class Corpus:
    entries: list[CorpusEntry]
    failures: list[LoadFailure] = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]


def validate_digest(sample_id) -> str:
    if not isinstance(sample_id, str) or not _DIGEST_RE.fullmatch(sample_id):
        raise InvalidDigest(f"sample_id must be 64 lowercase hex chars, got {sample_id!r}")
    return sample_id


def _parse_call(obj, i) -> ApiCallRecord:
    where = f"calls[{i}]"
    if not isinstance(obj, dict):
        raise SchemaViolation(where, "expected an object")
    name = obj.get("api_name")
    if not isinstance(name, str) or not name:
        raise SchemaViolation(f"{where}.api_name", "expected a nonempty string")
    args = obj.get("args", [])
    if not isinstance(args, list) or not all(isinstance(a, str) for a in args):
        raise SchemaViolation(f"{where}.args", "expected a list of strings")
    count = obj.get("count", 1)
    if isinstance(count, bool) or not isinstance(count, int) or count < 1:
        raise SchemaViolation(f"{where}.count", "expected an integer >= 1")
    return ApiCallRecord(name, tuple(args), count)


def parse_report(raw_bytes: bytes, timeout_s: float = DEFAULT_TIMEOUT_S) -> EmulationReport:
    """Parse and validate one report. Call order is preserved."""
    try:
        doc = json.loads(raw_bytes.decode("utf-8") if isinstance(raw_bytes, bytes) else raw_bytes)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedJson(str(exc)) from exc
    if not isinstance(doc, dict):
        raise SchemaViolation("<root>", "expected an object")

    if "sample_id" not in doc:
        raise SchemaViolation("sample_id", "missing")
    sample_id = validate_digest(doc["sample_id"])

    exit_kind = doc.get("exit_kind")
    if exit_kind not in EXIT_KINDS:
        raise SchemaViolation("exit_kind", f"expected one of {EXIT_KINDS}, got {exit_kind!r}")

    duration = doc.get("duration_s")
    if isinstance(duration, bool) or not isinstance(duration, (int, float)) or duration < 0:
        raise SchemaViolation("duration_s", "expected a nonnegative number")
    if exit_kind == "timeout" and duration > timeout_s:
        raise SchemaViolation("duration_s", f"{duration} exceeds the {timeout_s}s timeout")

    calls = doc.get("calls")
    if not isinstance(calls, list):
        raise SchemaViolation("calls", "expected a list")

    return EmulationReport(
        sample_id=sample_id,
        calls=tuple(_parse_call(c, i) for i, c in enumerate(calls)),
        exit_kind=exit_kind,
        duration_s=float(duration),
    )


def report_to_dict(report: EmulationReport) -> dict:
    return {
        "sample_id": report.sample_id,
        "exit_kind": report.exit_kind,
        "duration_s": report.duration_s,
        "calls": [
            {"api_name": c.api_name, "args": list(c.args), "count": c.count} for c in report.calls
        ],
    }


def serialize_report(report: EmulationReport) -> bytes:
    return json.dumps(report_to_dict(report), ensure_ascii=False).encode("utf-8")


def read_manifest(manifest_path) -> list[ManifestEntry]:
    path = Path(manifest_path)
    if not path.is_file():
        raise ManifestMissing(str(path))
    text = path.read_text(encoding="utf-8")
    reader = csv.DictReader(io.StringIO(text))
    missing = set(MANIFEST_HEADER[:4]) - set(reader.fieldnames or ())
    if missing:
        raise SchemaViolation("manifest header", f"missing columns {sorted(missing)}")

    entries = []
    seen = set()
    for lineno, row in enumerate(reader, start=2):
        sample_id = validate_digest((row["sample_id"] or "").strip())
        if sample_id in seen:
            raise DuplicateSampleId(f"{sample_id} (line {lineno})")
        seen.add(sample_id)

        label = (row["class"] or "").strip().lower()
        if label not in CLASSES:
            raise SchemaViolation(f"class (line {lineno})", f"expected benign|malicious, got {label!r}")
        family = (row["family"] or "").strip()
        if label == "benign":
            if family not in ("", BENIGN_FAMILY):
                raise SchemaViolation(f"family (line {lineno})", "benign entries must have family 'Benign'")
            family = BENIGN_FAMILY
        elif not family:
            family = UNKNOWN_FAMILY

        binary = (row.get("binary_path") or "").strip() or None
        entries.append(ManifestEntry(sample_id, label, family, row["report_path"].strip(), binary))
    return entries


def load_corpus(manifest_path, report_root, strict: bool = False,
                timeout_s: float = DEFAULT_TIMEOUT_S) -> Corpus:
    """Load every manifest entry's report, in manifest order.

    In lenient mode a missing or invalid report is recorded in ``Corpus.failures``
    and the entry is skipped; in strict mode the first such error is raised.
    Manifest-level problems (missing file, duplicate ids) always raise.
    """
    manifest_path = Path(manifest_path)
    report_root = Path(report_root)
    entries = []
    failures = []
    for m in read_manifest(manifest_path):
        try:
            path = report_root / m.report_path
            if not path.is_file():
                raise ReportMissing(m.sample_id, str(path))
            report = parse_report(path.read_bytes(), timeout_s=timeout_s)
            if report.sample_id != m.sample_id:
                raise SchemaViolation("sample_id", f"report {path} holds {report.sample_id}")
        except EmuTriageError as exc:
            if strict:
                raise
            failures.append(LoadFailure(m.sample_id, exc.code, str(exc)))
            continue
        binary = manifest_path.parent / m.binary_path if m.binary_path else None
        entries.append(CorpusEntry(report, m.label, m.family, binary))
    return Corpus(entries, failures)


def corpus_stats(corpus) -> dict:
    entries = list(corpus)
    if not entries:
        raise EmptyCorpus("corpus has no entries")
    labels = Counter(e.label for e in entries)
    families = Counter(e.family for e in entries)
    return {
        "n_samples": len(entries),
        "n_benign": labels.get("benign", 0),
        "n_malicious": labels.get("malicious", 0),
        "families": dict(sorted(families.items(), key=lambda kv: (-kv[1], kv[0]))),
        "mean_duration_s": sum(e.report.duration_s for e in entries) / len(entries),
    }
