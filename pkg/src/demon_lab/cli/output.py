"""CSV data files and the run manifest."""

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

CSV_SCHEMA_VERSION = 1


def format_value(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float) or hasattr(value, "dtype"):
        v = float(value)
        if math.isnan(v):
            return "nan"
        return format(v, ".17g")
    return str(value)


def write_csv(path, header, rows):
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"# schema {CSV_SCHEMA_VERSION}"])
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])
    return path


def read_csv(path):
    """Header and rows of a file written by ``write_csv`` (values as strings)."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        lines = [row for row in csv.reader(fh)]
    return lines[1], lines[2:]


def content_hash(text):
    """Git blob hash of ``text``."""
    data = text.encode("utf-8")
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    tolerance: float

    def __post_init__(self):
        self.passed = bool(self.passed)
        self.value = float(self.value)
        self.tolerance = float(self.tolerance)


@dataclass
class RunManifest:
    command: str
    config: str
    config_hash: str
    seed: int
    started: str = field(default_factory=now)
    finished: str = ""
    checks: list = field(default_factory=list)
    files: list = field(default_factory=list)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def check(self, name, passed, value, tolerance):
        self.checks.append(Check(name, passed, value, tolerance))

    def add_file(self, path):
        path = Path(path)
        if path.name in self.files:
            raise ValueError(f"{path.name} already belongs to this manifest")
        self.files.append(path.name)

    def write(self, out_dir):
        self.finished = now()
        body = asdict(self)
        body["passed"] = self.passed
        for c in body["checks"]:
            for key in ("value", "tolerance"):
                if not math.isfinite(c[key]):
                    c[key] = str(c[key])
        path = Path(out_dir) / "manifest.json"
        path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path
