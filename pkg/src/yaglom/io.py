"""Serialisation: model documents, run metadata, CSV, JSON and SVG outputs.

All writers are deterministic: equal inputs give byte-identical files.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Sequence

import jsonschema
import numpy as np

from . import __version__

SEED_ENV = "YAGLOM_SEED"


class DocumentError(ValueError):
    pass


def load_schema() -> dict:
    text = resources.files("yaglom").joinpath("schemas/model-v1.schema.json").read_text()
    return json.loads(text)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def model_hash(doc: dict) -> str:
    return hashlib.sha256(canonical_json(doc).encode()).hexdigest()


def read_document(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError as e:
        raise DocumentError(f"no such file: {path}") from e
    except json.JSONDecodeError as e:
        raise DocumentError(f"{path}: invalid JSON at line {e.lineno} column {e.colno}: {e.msg}") from e
    validate_document(doc)
    return doc


def validate_document(doc) -> None:
    v = jsonschema.Draft202012Validator(load_schema())
    errs = sorted(v.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errs:
        lines = [f"/{'/'.join(map(str, e.absolute_path))}: {e.message}" for e in errs[:10]]
        raise DocumentError("schema violations:\n  " + "\n  ".join(lines))


@dataclass(frozen=True)
class RunMetadata:
    model_hash: str
    seed: Optional[int] = None
    seed_source: str = "none"
    workers: int = 1
    generator: Optional[str] = None
    wall_time: Optional[float] = None
    tolerances: dict = field(default_factory=dict)
    version: str = __version__

    def as_dict(self) -> dict:
        return asdict(self)


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, complex):
        return {"re": _plain(obj.real), "im": _plain(obj.imag)}
    return obj


def write_json(path, payload: dict, meta: RunMetadata) -> Path:
    path = Path(path)
    body = dict(payload)
    body["metadata"] = meta.as_dict()
    path.write_text(json.dumps(_plain(body), sort_keys=True, indent=2) + "\n", newline="\n")
    return path


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    v = float(v)
    if math.isnan(v):
        return "nan"
    return format(v, ".17g")


def write_csv(path, columns: Sequence[str], rows: Iterable[Sequence], meta: RunMetadata) -> Path:
    path = Path(path)
    lines = [f"# {k}={canonical_json(_plain(v))}" for k, v in sorted(meta.as_dict().items())]
    lines.append(",".join(columns))
    for r in rows:
        lines.append(",".join(fmt(v) for v in r))
    path.write_text("\n".join(lines) + "\n", newline="\n")
    return path


def read_csv(path):
    """Inverse of :func:`write_csv` (metadata dict, header, float rows)."""
    meta, header, rows = {}, None, []
    for line in Path(path).read_text().splitlines():
        if line.startswith("# "):
            k, _, v = line[2:].partition("=")
            meta[k] = json.loads(v)
        elif header is None:
            header = line.split(",")
        elif line:
            rows.append([float(c) if c not in ("", "true", "false") else c for c in line.split(",")])
    return meta, header, rows


# -- SVG ---------------------------------------------------------------------


class SvgPlot:
    """Minimal deterministic scatter/line plot."""

    W, H, PAD = 480, 320, 48

    def __init__(self, xlim, ylim, title: str = "", xlabel: str = "", ylabel: str = ""):
        x0, x1 = xlim
        y0, y1 = ylim
        if x1 <= x0:
            x1 = x0 + 1.0
        if y1 <= y0:
            y1 = y0 + 1.0
        self.xlim, self.ylim = (x0, x1), (y0, y1)
        self.parts = []
        self.title, self.xlabel, self.ylabel = title, xlabel, ylabel

    def _px(self, x, y):
        (x0, x1), (y0, y1) = self.xlim, self.ylim
        px = self.PAD + (x - x0) / (x1 - x0) * (self.W - 2 * self.PAD)
        py = self.H - self.PAD - (y - y0) / (y1 - y0) * (self.H - 2 * self.PAD)
        return px, py

    def points(self, xs, ys, color="#1f5fa8", r=3):
        for x, y in zip(xs, ys):
            px, py = self._px(x, y)
            self.parts.append(f'<circle cx="{px:.3f}" cy="{py:.3f}" r="{r}" fill="{color}"/>')

    def line(self, xs, ys, color="#444444", dash=False):
        pts = " ".join("{:.3f},{:.3f}".format(*self._px(x, y)) for x, y in zip(xs, ys))
        extra = ' stroke-dasharray="4,3"' if dash else ""
        self.parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}"{extra}/>')

    def rect(self, x0, x1, y0, y1, color="#999999"):
        self.line([x0, x1, x1, x0, x0], [y0, y0, y1, y1, y0], color, dash=True)

    def render(self, meta: RunMetadata) -> str:
        (x0, x1), (y0, y1) = self.xlim, self.ylim
        ax = [
            f'<rect x="{self.PAD}" y="{self.PAD}" width="{self.W - 2 * self.PAD}" '
            f'height="{self.H - 2 * self.PAD}" fill="none" stroke="#000000"/>',
            f'<text x="{self.W / 2}" y="{self.PAD / 2}" text-anchor="middle" font-size="13">{self.title}</text>',
            f'<text x="{self.W / 2}" y="{self.H - 10}" text-anchor="middle" font-size="11">{self.xlabel}</text>',
            f'<text x="12" y="{self.H / 2}" font-size="11" transform="rotate(-90 12 {self.H / 2})">{self.ylabel}</text>',
            f'<text x="{self.PAD}" y="{self.H - self.PAD + 14}" font-size="10">{x0:.4g}</text>',
            f'<text x="{self.W - self.PAD}" y="{self.H - self.PAD + 14}" font-size="10" text-anchor="end">{x1:.4g}</text>',
            f'<text x="{self.PAD - 4}" y="{self.H - self.PAD}" font-size="10" text-anchor="end">{y0:.4g}</text>',
            f'<text x="{self.PAD - 4}" y="{self.PAD + 10}" font-size="10" text-anchor="end">{y1:.4g}</text>',
        ]
        md = canonical_json(_plain(meta.as_dict())).replace("--", "- -")
        body = "\n".join(ax + self.parts)
        return (
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.W}" height="{self.H}" '
            f'viewBox="0 0 {self.W} {self.H}">\n<!-- {md} -->\n{body}\n</svg>\n'
        )

    def write(self, path, meta: RunMetadata) -> Path:
        path = Path(path)
        path.write_text(self.render(meta), newline="\n")
        return path
