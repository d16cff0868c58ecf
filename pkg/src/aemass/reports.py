"""Machine-readable report files: JSON with a config digest, CSV mirrors.

Reports embed the digest of the physics-relevant configuration (execution
details like worker counts and output paths are excluded) so reruns are
byte-identical whenever the numbers are.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

from . import __version__

_EXECUTION_KEYS = {"out", "workers"}


def config_digest(config: dict) -> str:
    physics = {k: v for k, v in sorted(config.items()) if k not in _EXECUTION_KEYS}
    blob = json.dumps(physics, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def write_json_report(path: Path, payload: dict, config: dict) -> None:
    payload = dict(payload)
    payload["config_digest"] = config_digest(config)
    payload["version"] = __version__
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def write_mass_csv(path: Path, reports: list) -> None:
    """One row per scale, mirroring the JSON payloads."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "metric_id", "cutoff", "scale", "value",
                         "quad_error", "limit", "limit_stderr", "q"])
        for rep in reports:
            d = rep.as_dict()
            for s, v, e in zip(d["scales"], d["values"], d["quad_errors"]):
                writer.writerow([d["method"], d["metric_id"], d["cutoff"] or "",
                                 repr(s), repr(v), repr(e),
                                 repr(d["limit"]), repr(d["limit_stderr"]), repr(d["q"])])


def write_table_csv(path: Path, header: list[str], rows: list) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
