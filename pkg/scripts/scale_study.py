"""Scale invariance of the geodesic feature on bump spheres of growing radius."""
import argparse
from pathlib import Path

import numpy as np

from geovox import shapes as S
from geovox.pipeline import FeatureConfig, geodesic_feature
from geovox.temporal import write_columns


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("-o", "--output", type=Path, default=Path("out/scale"))
    ap.add_argument("--radii", type=float, nargs="+", default=[10, 15, 20])
    ap.add_argument("--freqs", type=int, nargs="+", default=[2, 3])
    ap.add_argument("--spacing", type=float, default=0.5)
    args = ap.parse_args()
    args.output.mkdir(parents=True, exist_ok=True)

    cfg = FeatureConfig(spacing=args.spacing)
    rows = []
    for f in args.freqs:
        vals = {r: geodesic_feature(S.gen_bump_sphere(r, 0.15 * r, f), cfg).surface.values for r in args.radii}
        ref = vals[args.radii[0]]
        for r in args.radii[1:]:
            corr = np.corrcoef(ref, vals[r])[0, 1]
            mrd = np.mean(np.abs(ref - vals[r]) / (0.5 * (ref + vals[r])))
            rows.append((f, args.radii[0], r, corr, mrd))
            print(f"freq {f}: r={args.radii[0]:g} vs r={r:g}  corr {corr:.4f}  mean rel diff {mrd:.4f}")
    write_columns(args.output / "scale.csv", ["freq", "r_ref", "r", "corr", "mean_rel_diff"], *zip(*rows))


if __name__ == "__main__":
    main()
