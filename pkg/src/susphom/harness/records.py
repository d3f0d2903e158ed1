"""Result records and their on-disk form.

``result.json`` and the CSV tables are pure functions of the resolved
configuration; wall-clock and host details go to ``meta.json`` only.
"""

import csv
import io
import json
import math
import os
import platform
import time
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError

TOOL_VERSION = "0.1.0"


def _plain(value):
    """JSON-ready copy: numpy scalars and arrays become Python values, non-finite floats strings."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else repr(value)
    return value


@dataclass
class ResultRecord:
    """Outcome of one experiment run.

    Attributes
    ----------
    kind : str
    config : dict
        Resolved configuration document.
    digest : str
        SHA-256 of the resolved configuration.
    seed : int
    tables : dict
        ``name -> list of row dicts``; each becomes ``<name>.csv``.
    summary : dict
        Aggregated values, fits and checks.
    kernels : list of dict
        Metadata of every kernel used.
    wall_clock : float
        Seconds; written to ``meta.json`` only.
    """

    kind: str
    config: dict
    digest: str
    seed: int
    tables: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    kernels: list = field(default_factory=list)
    wall_clock: float = 0.0
    version: str = TOOL_VERSION

    def table(self, name, rows):
        self.tables[name] = [dict(r) for r in rows]

    def to_dict(self):
        return _plain(
            {
                "kind": self.kind,
                "version": self.version,
                "config_digest": self.digest,
                "seed": self.seed,
                "config": self.config,
                "summary": self.summary,
                "kernels": self.kernels,
                "tables": sorted(self.tables),
            }
        )


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    if v is None:
        return ""
    return str(v)


def table_csv(record, name):
    """CSV text of one table, with lineage columns ``config_digest`` and ``seed``."""
    rows = record.tables[name]
    if not rows:
        raise ConfigError(f"table {name!r} is empty")
    columns = list(rows[0])
    for r in rows[1:]:
        columns.extend(c for c in r if c not in columns)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns + ["config_digest", "seed"])
    for r in rows:
        writer.writerow([_cell(r.get(c)) for c in columns] + [record.digest, record.seed])
    return buf.getvalue()


def write_record(record, out_dir, threads=1):
    """Write ``result.json``, one CSV per table and ``meta.json``; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    path = os.path.join(out_dir, "result.json")
    with open(path, "w") as fh:
        json.dump(record.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    paths.append(path)
    for name in sorted(record.tables):
        if not record.tables[name]:
            continue
        path = os.path.join(out_dir, f"{name}.csv")
        with open(path, "w") as fh:
            fh.write(table_csv(record, name))
        paths.append(path)
    meta = {
        "wall_clock_seconds": record.wall_clock,
        "finished_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "threads": threads,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "tool_version": record.version,
    }
    path = os.path.join(out_dir, "meta.json")
    with open(path, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    paths.append(path)
    return paths


def _parse(text):
    if text == "":
        return None
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def read_record(out_dir):
    """Load a written record back (tables from the CSVs)."""
    path = os.path.join(out_dir, "result.json")
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError:
        raise ConfigError(f"no result.json in {out_dir!r}") from None
    tables = {}
    for name in doc.get("tables", []):
        with open(os.path.join(out_dir, f"{name}.csv")) as fh:
            rows = list(csv.DictReader(fh))
        tables[name] = [
            {k: _parse(v) for k, v in r.items() if k not in ("config_digest", "seed")} for r in rows
        ]
    return ResultRecord(
        kind=doc["kind"],
        config=doc["config"],
        digest=doc["config_digest"],
        seed=doc["seed"],
        tables=tables,
        summary=doc.get("summary", {}),
        kernels=doc.get("kernels", []),
        version=doc.get("version", TOOL_VERSION),
    )
