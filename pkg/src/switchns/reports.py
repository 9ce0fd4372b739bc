"""Report emission: machine JSON/CSV with full-precision floats, aligned text.

Machine formats print floating point with 17 significant digits so re-parsing
reproduces every value bit-exactly.  Field ordering is stable, and the only
non-deterministic output field is the manifest's wall clock.
"""

from __future__ import annotations

import csv
import datetime
import io
import os
from dataclasses import dataclass

__all__ = ["write_json", "write_csv", "write_text", "RunManifest", "fmt"]


def fmt(x) -> str:
    """17-significant-digit decimal form; round-trips IEEE doubles exactly."""
    return format(float(x), ".17g")


def _render_json(obj, out: list, indent: int) -> None:
    pad = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{\n")
        items = list(obj.items())
        for i, (k, v) in enumerate(items):
            out.append(f'{pad}  "{k}": ')
            _render_json(v, out, indent + 1)
            out.append(",\n" if i < len(items) - 1 else "\n")
        out.append(pad + "}")
    elif isinstance(obj, (list, tuple)):
        if not obj:
            out.append("[]")
            return
        out.append("[\n")
        for i, v in enumerate(obj):
            out.append(pad + "  ")
            _render_json(v, out, indent + 1)
            out.append(",\n" if i < len(obj) - 1 else "\n")
        out.append(pad + "]")
    elif isinstance(obj, bool):
        out.append("true" if obj else "false")
    elif isinstance(obj, (int,)) and not isinstance(obj, bool):
        out.append(str(obj))
    elif isinstance(obj, float):
        if obj != obj or obj in (float("inf"), float("-inf")):
            out.append("null")
        else:
            out.append(fmt(obj))
    elif obj is None:
        out.append("null")
    else:
        import json as _json

        out.append(_json.dumps(str(obj)))


def render_json(obj) -> str:
    out: list = []
    _render_json(obj, out, 0)
    out.append("\n")
    return "".join(out)


def write_json(path: str, obj) -> str:
    with open(path, "w") as fh:
        fh.write(render_json(obj))
    return path


def write_csv(path: str, header: list, rows) -> str:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [fmt(v) if isinstance(v, float) else v for v in row]
            )
    return path


def write_text(path: str, lines) -> str:
    with open(path, "w") as fh:
        for line in lines:
            fh.write(line + "\n")
    return path


def table_lines(header: list, rows) -> list:
    """Aligned fixed-width text table."""
    def cell(v):
        return f"{v:.6g}" if isinstance(v, float) else str(v)

    str_rows = [[cell(v) for v in row] for row in rows]
    widths = [
        max(len(h), *(len(r[i]) for r in str_rows)) if str_rows else len(h)
        for i, h in enumerate(header)
    ]
    out = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    out.append("  ".join("-" * w for w in widths))
    for r in str_rows:
        out.append("  ".join(c.ljust(w) for c, w in zip(r, widths)))
    return out


@dataclass
class RunManifest:
    """Provenance record for one CLI invocation."""

    config_hash: str
    master_seed: int
    subcommand: str
    artifact_version: str
    outputs: list
    wall_clock_utc: str = ""

    def write(self, out_dir: str) -> str:
        if not self.wall_clock_utc:
            self.wall_clock_utc = datetime.datetime.now(
                datetime.timezone.utc
            ).isoformat()
        path = os.path.join(out_dir, "manifest.json")
        payload = {
            "config_hash": self.config_hash,
            "master_seed": self.master_seed,
            "subcommand": self.subcommand,
            "artifact_version": self.artifact_version,
            "outputs": sorted(self.outputs),
            "wall_clock_utc": self.wall_clock_utc,
        }
        return write_json(path, payload)
