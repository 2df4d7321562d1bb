"""Sequence analysis of per-vertex feature maps and mesh deformation."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidInput
from .shapes import QuadMesh


@dataclass(frozen=True, eq=False)
class FeatureSeries:
    frames: tuple
    frame_rate: float | None = None

    def __post_init__(self):
        frames = tuple(np.array(f, dtype=float).ravel() for f in self.frames)
        if not frames:
            raise InvalidInput("a series needs at least one frame")
        n = len(frames[0])
        if n < 2 or any(len(f) != n for f in frames):
            raise InvalidInput("all frames must hold the same number (>= 2) of values")
        for f in frames:
            f.setflags(write=False)
        if self.frame_rate is not None and not self.frame_rate > 0:
            raise InvalidInput("frame rate must be positive")
        object.__setattr__(self, "frames", frames)

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def n_vertices(self) -> int:
        return len(self.frames[0])

    def as_array(self) -> np.ndarray:
        return np.stack(self.frames)


def pearson_series(series: FeatureSeries) -> np.ndarray:
    """Correlation of every frame with frame 0; NaN where a frame is constant."""
    ref = series.frames[0] - series.frames[0].mean()
    ref_norm = np.sqrt(ref @ ref)
    if ref_norm == 0:
        raise InvalidInput("frame 0 has zero variance")
    out = np.empty(len(series))
    out[0] = 1.0
    for t, frame in enumerate(series.frames[1:], start=1):
        cur = frame - frame.mean()
        norm = np.sqrt(cur @ cur)
        out[t] = np.nan if norm == 0 else np.clip((ref @ cur) / (ref_norm * norm), -1.0, 1.0)
    return out


def edge_strain(ref: QuadMesh, deformed: QuadMesh):
    """Green-Lagrange strain of every unique edge; returns ``(edges, strain)``."""
    if ref.n_vertices != deformed.n_vertices or not np.array_equal(ref.faces, deformed.faces):
        raise InvalidInput("meshes must share connectivity and vertex count")
    edges = ref.edges()
    e0 = ref.vertices[edges[:, 1]] - ref.vertices[edges[:, 0]]
    e1 = deformed.vertices[edges[:, 1]] - deformed.vertices[edges[:, 0]]
    l0 = np.einsum("ij,ij->i", e0, e0)
    if np.any(l0 == 0):
        raise InvalidInput("reference mesh has a zero-length edge")
    l1 = np.einsum("ij,ij->i", e1, e1)
    return edges, (l1 - l0) / (2.0 * l0)


def elongation(ref: QuadMesh, deformed: QuadMesh) -> np.ndarray:
    """Per-vertex mean strain of the incident edges (negative = compression)."""
    edges, eps = edge_strain(ref, deformed)
    total = np.zeros(ref.n_vertices)
    count = np.zeros(ref.n_vertices)
    np.add.at(total, edges.ravel(), np.repeat(eps, 2))
    np.add.at(count, edges.ravel(), 1.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(count > 0, total / np.maximum(count, 1.0), 0.0)


def feature_difference(series: FeatureSeries, t: int) -> np.ndarray:
    if not 0 <= t < len(series):
        raise InvalidInput(f"frame index {t} out of range (series has {len(series)} frames)")
    return series.frames[t] - series.frames[0]


@dataclass
class Curve:
    raw: np.ndarray
    normalized: np.ndarray
    ring: list
    normalization: str = "min-max over the series"


def point_neighborhood_curve(series: FeatureSeries, mesh: QuadMesh, vertex_index: int) -> Curve:
    """Mean feature over a vertex and its quad one-ring, per frame."""
    if mesh.n_vertices != series.n_vertices:
        raise InvalidInput("mesh and series vertex counts differ")
    if not 0 <= vertex_index < mesh.n_vertices:
        raise InvalidInput("vertex index out of range")
    ring = mesh.one_ring(vertex_index)
    if not ring:
        raise InvalidInput(f"vertex {vertex_index} is isolated")
    sel = np.array([vertex_index, *ring])
    raw = series.as_array()[:, sel].mean(axis=1)
    span = raw.max() - raw.min()
    norm = np.zeros_like(raw) if span == 0 else (raw - raw.min()) / span
    return Curve(raw, norm, ring)


# ------------------------------------------------------------------ output


def write_columns(path, header, *columns) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([v if isinstance(v, (int, np.integer)) else repr(float(v)) for v in row])


def svg_polyline(values, path, width: int = 480, height: int = 240, title: str = "") -> None:
    """Minimal line plot of a 1-D series (NaNs break the line)."""
    y = np.asarray(values, dtype=float)
    finite = y[np.isfinite(y)]
    lo, hi = (finite.min(), finite.max()) if finite.size else (0.0, 1.0)
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    pad = 20
    xs = pad + (width - 2 * pad) * np.arange(len(y)) / max(len(y) - 1, 1)
    ys = height - pad - (height - 2 * pad) * (y - lo) / (hi - lo)
    segments, cur = [], []
    for xv, yv in zip(xs, ys):
        if np.isfinite(yv):
            cur.append(f"{xv:.2f},{yv:.2f}")
        elif cur:
            segments.append(cur)
            cur = []
    if cur:
        segments.append(cur)
    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>']
    if title:
        lines.append(f'<text x="{pad}" y="14" font-size="12">{title}</text>')
    lines.append(f'<text x="2" y="{pad}" font-size="10">{hi:.4g}</text>')
    lines.append(f'<text x="2" y="{height - pad}" font-size="10">{lo:.4g}</text>')
    for seg in segments:
        lines.append(f'<polyline fill="none" stroke="black" points="{" ".join(seg)}"/>')
    lines.append("</svg>")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
