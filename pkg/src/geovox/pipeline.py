"""End-to-end geodesic feature computation from points or meshes."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import eulerian
from .grids import BinaryMask, voxelize
from .shapes import PointSet, QuadMesh, sample_surface


@dataclass
class FeatureConfig:
    spacing: float = 1.0
    closing: int = 2
    erosion_iters: int = 1
    radius_scale: float = 0.8
    axis_length: str = "extent"
    subvoxel: bool = True
    laplace_tol: float = 0.5
    max_iters: int = 5000
    length_tol: float = 1e-6
    max_sweeps: int = 400
    # mesh inputs are densified to this fraction of the voxel size first
    surface_step: float = 0.5

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class FeatureResult:
    mask: BinaryMask
    cfg: eulerian.BoundaryConfig
    fields: eulerian.GeodesicFields
    surface: eulerian.SurfaceSample | None

    def report(self) -> dict:
        rep = eulerian.report_dict(self.cfg, self.fields)
        if self.surface is not None:
            rep["projected_vertices"] = len(self.surface.projected)
            rep["out_of_domain"] = list(self.surface.out_of_domain)
        return rep


def shape_mask(shape, config: FeatureConfig) -> BinaryMask:
    """Solid mask for a mesh (densified first), a point set or a mask."""
    if isinstance(shape, BinaryMask):
        mask = shape
    else:
        if isinstance(shape, QuadMesh):
            shape = sample_surface(shape, config.surface_step * config.spacing)
        mask = voxelize(shape, config.spacing, padding=2, closing=config.closing)
    return eulerian.pad_for_sphere(mask, config.radius_scale, axis_length=config.axis_length)


def geodesic_feature(shape, config: FeatureConfig | None = None, evaluate_at=None) -> FeatureResult:
    """Run the whole chain and optionally sample the feature at ``evaluate_at``.

    ``evaluate_at`` defaults to the mesh vertices or the input points.
    """
    config = config or FeatureConfig()
    mask = shape_mask(shape, config)
    cfg = eulerian.setup_boundaries(mask, config.erosion_iters, config.radius_scale,
                                    config.axis_length, config.subvoxel)
    fields = eulerian.compute_fields(cfg, config.laplace_tol, config.max_iters,
                                     config.length_tol, config.max_sweeps)
    if evaluate_at is None:
        if isinstance(shape, QuadMesh):
            evaluate_at = shape.vertices
        elif isinstance(shape, PointSet):
            evaluate_at = shape.points
    surface = None
    if evaluate_at is not None:
        surface = eulerian.surface_feature(np.asarray(getattr(evaluate_at, "points", evaluate_at)),
                                           fields, cfg)
    return FeatureResult(mask, cfg, fields, surface)
