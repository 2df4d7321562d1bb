"""Feature maps on the synthetic test shapes (sphere, torus, gap sphere, bump sphere).

Each shape is written as an OBJ with a per-vertex CSV sidecar that can be
colour-mapped in any mesh viewer.
"""
import argparse
from pathlib import Path

from geovox import shapes as S
from geovox.pipeline import geodesic_feature

SHAPES = {
    "sphere": lambda: S.gen_ellipsoid(10, 10, 10),
    "torus": lambda: S.gen_torus(12, 5, 48, 24),
    "sphere_gap": lambda: S.gen_sphere_gap(12, 50, 4),
    "bump_sphere": lambda: S.gen_bump_sphere(20, 3, 3),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("-o", "--output", type=Path, default=Path("out/shapes"))
    args = ap.parse_args()
    args.output.mkdir(parents=True, exist_ok=True)
    for name, make in SHAPES.items():
        mesh = make()
        v = geodesic_feature(mesh).surface.values
        S.write_mesh_with_scalar(mesh, v, args.output / f"{name}.obj")
        print(f"{name:12s} min {v.min():.3f}  mean {v.mean():.3f}  max {v.max():.3f}")


if __name__ == "__main__":
    main()
