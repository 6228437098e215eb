"""Sysmon log ingestion.

Reads JSON-lines or CSV exports of Sysmon operating-system events, normalizes
heterogeneous field names through a fixed alias table, and extracts the
parent/child causal relations that later become graph edges.

Parsing is lossless-or-reported: every input record is either retained as a
:class:`SysmonEvent` or accounted for in a :class:`RejectReport` with a
reason. Malformed single records never abort a run; an unreadable stream does.
"""

from __future__ import annotations

import csv
import io
import json
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum, IntEnum
from typing import IO, Iterable, Iterator

from .errors import IngestError

SUPPORTED_EVENT_IDS = (1, 2, 5, 11, 12, 13)


class EventKind(IntEnum):
    PROCESS_CREATE = 1
    FILE_TIME_CHANGE = 2
    PROCESS_TERMINATE = 5
    FILE_CREATE = 11
    REGISTRY_OBJECT = 12
    REGISTRY_VALUE_SET = 13


class IntegrityLevel(IntEnum):
    """Windows process trust tier on an ordinal scale; UNKNOWN sorts lowest."""

    UNKNOWN = -1
    UNTRUSTED = 0
    LOW = 1
    MEDIUM = 2
    HIGH = 3
    SYSTEM = 4


_INTEGRITY_BY_NAME = {
    "untrusted": IntegrityLevel.UNTRUSTED,
    "low": IntegrityLevel.LOW,
    "medium": IntegrityLevel.MEDIUM,
    "high": IntegrityLevel.HIGH,
    "system": IntegrityLevel.SYSTEM,
}


def normalize_integrity(raw: str | None) -> IntegrityLevel:
    """Map a raw integrity string to the ordinal scale, case-insensitively.

    Anything outside the five named tiers (including raw SID forms such as
    "S-1-16-8192") maps to UNKNOWN. Total function: never raises.
    """
    if raw is None:
        return IntegrityLevel.UNKNOWN
    return _INTEGRITY_BY_NAME.get(raw.strip().lower(), IntegrityLevel.UNKNOWN)


# Alias table for the two log shapes we ingest: Sysmon/WEC PascalCase exports
# and snake_case research dumps. First matching alias wins; extend here (and
# in the README table) rather than special-casing call sites.
FIELD_ALIASES: dict[str, tuple[str, ...]] = {
    "event_id": ("EventID", "event_id", "EventId", "eventid", "event.code"),
    "utc_time": ("UtcTime", "utc_time", "UtcTime", "@timestamp", "timestamp"),
    "process_guid": ("ProcessGuid", "process_guid", "ProcessGUID"),
    "process_id": ("ProcessId", "process_id", "ProcessID", "pid"),
    "image": ("Image", "image", "image_path"),
    "parent_process_guid": ("ParentProcessGuid", "parent_process_guid"),
    "parent_process_id": ("ParentProcessId", "parent_process_id", "ParentProcessID", "ppid"),
    "parent_image": ("ParentImage", "parent_image", "parent_image_path"),
    "command_line": ("CommandLine", "command_line", "cmdline"),
    "integrity_level": ("IntegrityLevel", "integrity_level"),
    "user": ("User", "user", "UserName", "user_name"),
    "hostname": ("Computer", "ComputerName", "hostname", "host", "computer_name"),
    "target_object": ("TargetObject", "target_object", "TargetFilename", "target_filename"),
}


@dataclass(frozen=True)
class SysmonEvent:
    """One normalized log record."""

    event_id: int
    event_kind: EventKind
    utc_time: datetime
    process_id: int
    image: str = ""
    process_guid: str = ""
    parent_process_guid: str = ""
    parent_process_id: int | None = None
    parent_image: str = ""
    command_line: str = ""
    integrity_level: IntegrityLevel = IntegrityLevel.UNKNOWN
    user: str = ""
    hostname: str = ""
    target_object: str = ""


@dataclass(frozen=True)
class RejectReport:
    line_number: int
    reason: str


@dataclass(frozen=True)
class ParentChildRelation:
    """Directed causal link between two node identities.

    ``parent_key``/``child_key`` are full-fidelity identity strings (image or
    target paths as logged); the graph builder reduces them to node keys under
    its keying strategy. Endpoint process ids and integrity tiers travel in
    ``attributes`` so node attributes can be aggregated later.
    """

    parent_key: str
    child_key: str
    relation_kind: EventKind
    timestamp: datetime
    attributes: dict[str, str] = field(default_factory=dict)


@dataclass
class RelationSummary:
    """Counters for relations that could not be formed."""

    orphan_process_creates: int = 0
    missing_source_image: int = 0
    missing_target_object: int = 0

    @property
    def total_skipped(self) -> int:
        return (
            self.orphan_process_creates
            + self.missing_source_image
            + self.missing_target_object
        )


_TS_FRACTION = re.compile(r"\.(\d+)")


def parse_timestamp(raw: str) -> datetime:
    """Parse a Sysmon timestamp to a UTC instant (microsecond precision).

    Accepts "YYYY-MM-DD HH:MM:SS.fff", ISO-8601 with "T", a trailing "Z",
    or an explicit offset. Naive timestamps are interpreted as UTC, which is
    the Sysmon convention. Raises ValueError on anything unparseable.
    """
    text = raw.strip()
    if not text:
        raise ValueError("empty timestamp")
    if " " in text and "T" not in text:
        text = text.replace(" ", "T", 1)
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"

    # fromisoformat on 3.10 only takes 3- or 6-digit fractions; Windows
    # sources emit anything from 1 to 7 digits.
    def _pad(m: re.Match) -> str:
        digits = m.group(1)[:6]
        return "." + digits.ljust(6, "0")

    text = _TS_FRACTION.sub(_pad, text, count=1)
    parsed = datetime.fromisoformat(text)
    if parsed.tzinfo is None:
        return parsed.replace(tzinfo=timezone.utc)
    return parsed.astimezone(timezone.utc)


def format_timestamp(ts: datetime) -> str:
    """Canonical on-disk form: "YYYY-MM-DD HH:MM:SS.ffffff", UTC."""
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%d %H:%M:%S.%f")


def _lookup(record: dict, canonical: str) -> str | None:
    for alias in FIELD_ALIASES[canonical]:
        if alias in record and record[alias] is not None:
            value = record[alias]
            if not isinstance(value, str):
                value = str(value)
            return value
    return None


def _event_from_record(record: dict) -> SysmonEvent:
    """Build a SysmonEvent from one alias-resolved record; ValueError on reject."""
    raw_id = _lookup(record, "event_id")
    if raw_id is None or raw_id.strip() == "":
        raise ValueError("missing event id")
    try:
        event_id = int(raw_id)
    except ValueError:
        raise ValueError("bad event id") from None
    if event_id not in SUPPORTED_EVENT_IDS:
        raise ValueError("unsupported event id")

    raw_ts = _lookup(record, "utc_time")
    if raw_ts is None:
        raise ValueError("missing timestamp")
    try:
        ts = parse_timestamp(raw_ts)
    except ValueError:
        raise ValueError("bad timestamp") from None

    raw_pid = _lookup(record, "process_id")
    if raw_pid is None or raw_pid.strip() == "":
        raise ValueError("missing process id")
    try:
        pid = int(raw_pid)
    except ValueError:
        raise ValueError("bad process id") from None

    kind = EventKind(event_id)
    image = (_lookup(record, "image") or "").strip()
    if kind is EventKind.PROCESS_CREATE and not image:
        raise ValueError("missing image")

    raw_ppid = _lookup(record, "parent_process_id")
    ppid: int | None = None
    if raw_ppid is not None and raw_ppid.strip() != "":
        try:
            ppid = int(raw_ppid)
        except ValueError:
            raise ValueError("bad parent process id") from None

    return SysmonEvent(
        event_id=event_id,
        event_kind=kind,
        utc_time=ts,
        process_id=pid,
        image=image,
        process_guid=(_lookup(record, "process_guid") or "").strip(),
        parent_process_guid=(_lookup(record, "parent_process_guid") or "").strip(),
        parent_process_id=ppid,
        parent_image=(_lookup(record, "parent_image") or "").strip(),
        command_line=_lookup(record, "command_line") or "",
        integrity_level=normalize_integrity(_lookup(record, "integrity_level")),
        user=(_lookup(record, "user") or "").strip(),
        hostname=(_lookup(record, "hostname") or "").strip(),
        target_object=(_lookup(record, "target_object") or "").strip(),
    )


def _text_stream(source: IO) -> IO[str]:
    first = source.read(0)
    if isinstance(first, bytes):
        return io.TextIOWrapper(source, encoding="utf-8")
    return source


def parse_sysmon_records(
    source: IO, format: str = "jsonl"
) -> tuple[list[SysmonEvent], list[RejectReport]]:
    """Parse a JSON-lines or CSV stream into events plus per-record rejects.

    Input order is preserved. Blank lines are not records. ``format`` is
    "jsonl" (alias "json-lines") or "csv" (header row required).
    """
    fmt = format.lower().replace("_", "-")
    if fmt in ("jsonl", "json-lines", "json"):
        reader = _iter_jsonl(source)
    elif fmt == "csv":
        reader = _iter_csv(source)
    else:
        raise IngestError(f"unknown ingest format: {format!r}")

    events: list[SysmonEvent] = []
    rejects: list[RejectReport] = []
    for line_number, record, error in reader:
        if error is not None:
            rejects.append(RejectReport(line_number, error))
            continue
        try:
            events.append(_event_from_record(record))
        except ValueError as exc:
            rejects.append(RejectReport(line_number, str(exc)))
    return events, rejects


def _iter_jsonl(source: IO) -> Iterator[tuple[int, dict, str | None]]:
    try:
        stream = _text_stream(source)
        for line_number, line in enumerate(stream, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError:
                yield line_number, {}, "invalid json"
                continue
            if not isinstance(record, dict):
                yield line_number, {}, "record is not an object"
                continue
            yield line_number, record, None
    except UnicodeDecodeError as exc:
        raise IngestError(f"input is not valid UTF-8: {exc}") from exc
    except OSError as exc:
        raise IngestError(f"unreadable input stream: {exc}") from exc


def _iter_csv(source: IO) -> Iterator[tuple[int, dict, str | None]]:
    try:
        stream = _text_stream(source)
        reader = csv.DictReader(stream)
        if reader.fieldnames is None:
            raise IngestError("csv input has no header row")
        # line 1 is the header; data rows are numbered from 2 like a text editor
        for line_number, row in enumerate(reader, start=2):
            record = {k: v for k, v in row.items() if k is not None and v not in (None, "")}
            yield line_number, record, None
    except UnicodeDecodeError as exc:
        raise IngestError(f"input is not valid UTF-8: {exc}") from exc
    except csv.Error as exc:
        raise IngestError(f"malformed csv: {exc}") from exc
    except OSError as exc:
        raise IngestError(f"unreadable input stream: {exc}") from exc


def serialize_events(events: Iterable[SysmonEvent]) -> Iterator[str]:
    """Yield canonical JSON-lines; re-parsing them reproduces the events."""
    for ev in events:
        record: dict[str, object] = {
            "EventID": ev.event_id,
            "UtcTime": format_timestamp(ev.utc_time),
            "ProcessId": ev.process_id,
        }
        if ev.image:
            record["Image"] = ev.image
        if ev.process_guid:
            record["ProcessGuid"] = ev.process_guid
        if ev.parent_process_guid:
            record["ParentProcessGuid"] = ev.parent_process_guid
        if ev.parent_process_id is not None:
            record["ParentProcessId"] = ev.parent_process_id
        if ev.parent_image:
            record["ParentImage"] = ev.parent_image
        if ev.command_line:
            record["CommandLine"] = ev.command_line
        if ev.integrity_level is not IntegrityLevel.UNKNOWN:
            record["IntegrityLevel"] = ev.integrity_level.name.capitalize()
        if ev.user:
            record["User"] = ev.user
        if ev.hostname:
            record["Computer"] = ev.hostname
        if ev.target_object:
            record["TargetObject"] = ev.target_object
        yield json.dumps(record, sort_keys=True)


def write_reject_report(rejects: Iterable[RejectReport], stream: IO[str]) -> None:
    writer = csv.writer(stream)
    writer.writerow(["line_number", "reason"])
    for reject in rejects:
        writer.writerow([reject.line_number, reject.reason])


TERMINATED_SUFFIX = ":terminated"


def extract_relations(
    events: Iterable[SysmonEvent],
) -> tuple[list[ParentChildRelation], RelationSummary]:
    """Derive one causal relation per event.

    Process creation yields parent image -> image. File and registry events
    yield image -> target object. Process termination yields image -> a
    synthetic "<image>:terminated" entity so the termination shows up as a
    child event. Events lacking the needed endpoint are skipped and counted.
    """
    relations: list[ParentChildRelation] = []
    summary = RelationSummary()
    for ev in events:
        attrs: dict[str, str] = {}
        if ev.user:
            attrs["user"] = ev.user
        if ev.hostname:
            attrs["host"] = ev.hostname

        if ev.event_kind is EventKind.PROCESS_CREATE:
            if not ev.parent_image:
                summary.orphan_process_creates += 1
                continue
            if ev.command_line:
                attrs["command_line"] = ev.command_line
            if ev.parent_process_id is not None:
                attrs["parent_pid"] = str(ev.parent_process_id)
            attrs["child_pid"] = str(ev.process_id)
            attrs["child_integrity"] = ev.integrity_level.name
            relations.append(
                ParentChildRelation(
                    parent_key=ev.parent_image,
                    child_key=ev.image,
                    relation_kind=ev.event_kind,
                    timestamp=ev.utc_time,
                    attributes=attrs,
                )
            )
            continue

        if not ev.image:
            summary.missing_source_image += 1
            continue
        attrs["parent_pid"] = str(ev.process_id)
        attrs["parent_integrity"] = ev.integrity_level.name

        if ev.event_kind is EventKind.PROCESS_TERMINATE:
            child_key = ev.image + TERMINATED_SUFFIX
        else:
            if not ev.target_object:
                summary.missing_target_object += 1
                continue
            child_key = ev.target_object
            attrs["target_object"] = ev.target_object

        relations.append(
            ParentChildRelation(
                parent_key=ev.image,
                child_key=child_key,
                relation_kind=ev.event_kind,
                timestamp=ev.utc_time,
                attributes=attrs,
            )
        )
    return relations, summary
