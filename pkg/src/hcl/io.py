"""File formats: dataset CSV + schema sidecar, graph/result JSON, report tables.

Every writer goes through a temporary file in the target directory followed by
a rename, so readers never observe half-written output.
"""

from __future__ import annotations

import csv
import io as _io
import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from hcl.sem import KINDS, MixedDataset, VariableSchema, WeightedDag


class DataError(ValueError):
    """Input files that are missing, malformed, or inconsistent with each other."""


def atomic_write(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_json(path, payload) -> Path:
    return atomic_write(path, json.dumps(payload, indent=2, sort_keys=False) + "\n")


def read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise DataError(f"file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from exc


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_table(path, rows: list[dict], columns: Optional[list[str]] = None) -> Path:
    """Write dict rows as CSV; ``columns`` defaults to the first row's keys."""
    columns = columns or (list(rows[0]) if rows else [])
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow(["" if row.get(c) is None else _fmt(row.get(c)) for c in columns])
    return atomic_write(path, buf.getvalue())


def write_dataset(data: MixedDataset, csv_path, schema_path, labels_column: Optional[str] = "label") -> None:
    """Write values (shortest round-trip float repr) and the schema sidecar."""
    names = list(data.schema.names)
    include_labels = labels_column is not None and data.labels is not None
    if include_labels and labels_column in names:
        raise DataError(f"labels column {labels_column!r} clashes with a variable name")
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(names + ([labels_column] if include_labels else []))
    binary = data.schema.binary_mask
    for i, row in enumerate(data.values):
        cells = [str(int(v)) if binary[j] else repr(float(v)) for j, v in enumerate(row)]
        if include_labels:
            cells.append(str(data.labels[i]))
        writer.writerow(cells)
    atomic_write(csv_path, buf.getvalue())
    write_json(schema_path, data.schema.to_dict(labels_column if include_labels else None))


def read_schema(path) -> tuple[VariableSchema, Optional[str]]:
    payload = read_json(path)
    try:
        variables = payload["variables"]
        for v in variables:
            if v["kind"] not in KINDS:
                raise DataError(f"{path}: variable {v['name']!r} has unknown kind {v['kind']!r}")
        return VariableSchema.from_dict(payload), payload.get("labels_column")
    except (KeyError, TypeError) as exc:
        raise DataError(f"{path}: malformed schema ({exc})") from exc


def _parse_label(text: str):
    try:
        return int(text)
    except ValueError:
        return text


def read_dataset(csv_path, schema_path=None) -> MixedDataset:
    """Load a dataset CSV; without a schema every column is continuous and unlabeled."""
    try:
        with open(csv_path, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    except FileNotFoundError as exc:
        raise DataError(f"file not found: {csv_path}") from exc
    if not rows:
        raise DataError(f"{csv_path}: empty file (a header row is required)")
    header, body = rows[0], [r for r in rows[1:] if r]
    if not body:
        raise DataError(f"{csv_path}: no data rows")
    if schema_path is None:
        schema, labels_column = VariableSchema(["continuous"] * len(header), list(header)), None
    else:
        schema, labels_column = read_schema(schema_path)
    columns = {name: k for k, name in enumerate(header)}
    missing = [n for n in schema.names if n not in columns]
    if missing:
        raise DataError(f"{csv_path}: column {missing[0]!r} from the schema is missing")
    if labels_column is not None and labels_column not in columns:
        raise DataError(f"{csv_path}: labels column {labels_column!r} is missing")
    values = np.empty((len(body), len(schema)))
    for i, r in enumerate(body):
        if len(r) != len(header):
            raise DataError(f"{csv_path}: row {i + 2} has {len(r)} fields, expected {len(header)}")
        for j, name in enumerate(schema.names):
            try:
                values[i, j] = float(r[columns[name]])
            except ValueError as exc:
                raise DataError(f"{csv_path}: column {name!r}, row {i + 2}: not a number ({r[columns[name]]!r})") from exc
    labels = None
    if labels_column is not None:
        labels = np.array([_parse_label(r[columns[labels_column]]) for r in body])
    try:
        return MixedDataset(values, schema, labels)
    except ValueError as exc:
        raise DataError(f"{csv_path}: {exc}") from exc


def write_graphs(path, graphs: Iterable[WeightedDag]) -> Path:
    return write_json(path, [g.to_dict() for g in graphs])


def read_graphs(path) -> list[WeightedDag]:
    payload = read_json(path)
    if isinstance(payload, dict):
        payload = payload.get("graphs", [payload])
    try:
        return [WeightedDag.from_dict(g) for g in payload]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: malformed graph ({exc})") from exc


def write_labels(path, labels) -> Path:
    return write_table(path, [{"label": v} for v in np.asarray(labels).tolist()], ["label"])


def read_labels(path) -> np.ndarray:
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            rows = [r for r in csv.reader(fh) if r]
    except FileNotFoundError as exc:
        raise DataError(f"file not found: {path}") from exc
    if len(rows) < 2:
        raise DataError(f"{path}: expected a header and at least one label")
    return np.array([_parse_label(r[0]) for r in rows[1:]])
