"""
Inverse-distance weighting on monitor sites
===========================================

Interpolate a smooth surface from scattered sites onto a regular grid and
check a few properties of the estimator along the way.
"""
import numpy as np

from airstack.interpolate import GridSpec, grid_points, haversine, idw_interpolate

rng = np.random.default_rng(0)

# 60 monitors scattered over a 2 x 2 degree box
sites = rng.uniform([-72, 41], [-70, 43], (60, 2))
truth = lambda p: np.sin(3 * p[:, 0]) + np.cos(3 * p[:, 1])
values = truth(sites)

# a 10 km grid over the same box
spec = GridSpec(origin_lon=-72.0, origin_lat=41.0, n_x=16, n_y=22, cell_size=10.0)
grid = grid_points(spec)
print(f"{len(grid)} grid cells, first {grid[0].site_id} at ({grid[0].lon:.3f}, {grid[0].lat:.3f})")

xy = np.array([[g.lon, g.lat] for g in grid])
for k, power in [(1, 2.0), (5, 2.0), (5, 1.0), (15, 3.0)]:
    est = idw_interpolate(sites, values, xy, k=k, power=power)
    err = np.sqrt(np.mean((est - truth(xy)) ** 2))
    print(f"k={k:2d} power={power:.0f}  grid RMSE {err:.3f}")

# estimates never leave the range of the sample values
est = idw_interpolate(sites, values, xy, k=5)
print("inside sample range:", values.min() <= est.min() and est.max() <= values.max())

# at a monitor the estimate is the monitor's own value
print("exact at site 7:", idw_interpolate(sites, values, sites[7:8], k=5)[0] == values[7])

# distances are great-circle kilometres
d = haversine(-71.0, 42.0, -70.0, 42.0)
print(f"one degree of longitude at 42N: {d:.2f} km")
