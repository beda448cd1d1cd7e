"""CSV ingestion into owned relations."""

from __future__ import annotations

import csv
import re
from pathlib import Path

from .errors import IngestError
from .relational import Column, Relation

__all__ = ["ingest_csv", "load_catalog", "parse_value"]

_INT = re.compile(r"[+-]?\d+\Z")


def _column_type(values: list[str]) -> str:
    present = [v for v in values if v != ""]
    if all(_INT.match(v) for v in present):
        return "int" if present else "text"
    try:
        for v in present:
            float(v)
        return "float"
    except ValueError:
        return "text"


def parse_value(raw: str, type_: str):
    if raw == "":
        return None
    if type_ == "int":
        return int(raw)
    if type_ == "float":
        return float(raw)
    return raw


def ingest_csv(path, uid_col: str = "uid") -> Relation:
    """Read a headed CSV file; column types are inferred as int, then float, then text.

    Empty cells become NULL. The ``uid_col`` column marks row ownership and
    may not be empty.
    """
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                raise IngestError(f"{path}: empty file, a header row is required")
            rows = []
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != len(header):
                    raise IngestError(f"{path}:{lineno}: expected {len(header)} fields, found {len(row)}")
                rows.append(row)
    except OSError as exc:
        raise IngestError(f"{path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise IngestError(f"{path}: not valid UTF-8") from exc
    names = [h.strip() for h in header]
    matches = [i for i, n in enumerate(names) if n.casefold() == uid_col.casefold()]
    if not matches:
        raise IngestError(f"{path}: uid column {uid_col!r} not found in header {names}")
    uid = matches[0]
    types = [_column_type([r[i] for r in rows]) for i in range(len(names))]
    typed = []
    for lineno, r in enumerate(rows, start=2):
        if r[uid] == "":
            raise IngestError(f"{path}:{lineno}: empty uid")
        typed.append(tuple(parse_value(v, t) for v, t in zip(r, types)))
    return Relation(tuple(Column(n, t) for n, t in zip(names, types)), tuple(typed), uid)


def load_catalog(directory, uid_col: str = "uid") -> dict[str, Relation]:
    """Every ``*.csv`` file in ``directory``, keyed by file stem."""
    directory = Path(directory)
    if not directory.is_dir():
        raise IngestError(f"{directory}: not a directory")
    files = sorted(directory.glob("*.csv"))
    if not files:
        raise IngestError(f"{directory}: no .csv files found")
    return {f.stem: ingest_csv(f, uid_col) for f in files}
