"""Result-file writers shared by the library and the CLI.

Every file starts with a provenance line ``# anytime-paths <version> key=value ...``
so reruns can be diffed byte for byte.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from . import __version__


def _fmt(value: Any) -> str:
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return " ".join(_fmt(v) for v in value)
    return str(value)


def meta_line(meta: Mapping[str, Any]) -> str:
    parts = [f"# anytime-paths {__version__}"]
    parts += [f"{k}={_fmt(v).replace(' ', ',')}" for k, v in meta.items()]
    return " ".join(parts)


def write_csv(path: str | Path, columns: Sequence[str], rows: Iterable[Sequence[Any]], meta: Mapping[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(meta_line(meta) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    return path


def read_csv(path: str | Path) -> tuple[dict[str, str], list[dict[str, str]]]:
    """Return ``(meta, rows)``; the provenance line is optional."""
    with open(path, encoding="utf-8", newline="") as fh:
        lines = fh.read().splitlines()
    meta = {}
    if lines and lines[0].startswith("#"):
        meta = dict(tok.split("=", 1) for tok in lines[0].split()[3:] if "=" in tok)
        lines = lines[1:]
    return meta, list(csv.DictReader(lines))


def write_json(path: str | Path, payload: Mapping[str, Any], meta: Mapping[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"meta": {"tool": "anytime-paths", "version": __version__, **meta}, **payload}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=False)
        fh.write("\n")
    return path
