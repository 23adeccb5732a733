"""Build the per-pixel lookup used to undistort and resize camera frames.

Each output pixel stores where to sample the original image. With no lens
distortion and no resize the table is the identity; barrel distortion pulls
the border samples inward.
"""

import numpy as np

from gravprior.ingest import Intrinsics, build_remap_table

plain = Intrinsics(1500.0, 1500.0, 960.0, 720.0, 1920, 1440)
table = build_remap_table(plain, (1920, 1440))
u, v = np.meshgrid(np.arange(1920), np.arange(1440))
print("identity case exact:", np.array_equal(table.map_u, u) and np.array_equal(table.map_v, v))

small = build_remap_table(plain, (224, 168))
print(f"224x168 output samples source x from {small.map_u.min():.1f} to {small.map_u.max():.1f}")

barrel = Intrinsics(1500.0, 1500.0, 960.0, 720.0, 1920, 1440, (-0.15, 0.02, 0.0, 0.0, 0.0))
t = build_remap_table(barrel, (1920, 1440))
print("\nbarrel lens, source pixel for selected output pixels:")
for uu, vv in ((0, 0), (960, 0), (960, 720), (1919, 1439)):
    print(f"  ({uu:4d}, {vv:4d}) <- ({t.map_u[vv, uu]:8.2f}, {t.map_v[vv, uu]:8.2f})")
