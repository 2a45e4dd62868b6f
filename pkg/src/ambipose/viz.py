"""Figure emitters: planar position heatmaps and Mollweide orientation maps.

Output is dependency-free and byte-deterministic: binary PPM (P6) images
with an embedded monotone colormap, plus a CSV sidecar of raw bin counts.
Orientations are reduced to the 2-sphere by tracking the image of the
camera viewing axis (marginalizing rotations about it) and projected with
the equal-area Mollweide map.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import PoseSampleSet

VIEW_AXIS = np.array([0.0, 0.0, 1.0])  # reference axis whose image is mapped

CELL_PIXELS = 8  # square pixels per histogram cell in emitted images

_NEWTON_TOL = 1e-10
_NEWTON_MAX_ITER = 50

# Piecewise-linear monotone colormap (dark violet -> yellow-white).
_ANCHOR_POS = np.array([0, 42, 95, 148, 200, 230, 255])
_ANCHOR_RGB = np.array(
    [
        [5, 2, 25],
        [49, 17, 104],
        [128, 31, 109],
        [203, 71, 80],
        [245, 136, 36],
        [250, 205, 62],
        [252, 255, 220],
    ]
)
COLORMAP = np.stack(
    [np.interp(np.arange(256), _ANCHOR_POS, _ANCHOR_RGB[:, c]) for c in range(3)],
    axis=1,
).astype(np.uint8)


class MollweideConvergenceError(RuntimeError):
    """Newton solve for the Mollweide auxiliary angle failed to converge."""


@dataclass(frozen=True)
class Histogram2D:
    """Counts over an (nx, ny) grid; out-of-range samples go to the clamp tally.

    counts[ix, iy] covers the cell [x0 + ix*dx, x0 + (ix+1)*dx) and likewise
    in y, with the upper boundary closed on the last cell.  The cell counts
    plus the clamp tally always sum to the number of input samples.
    """

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    counts: np.ndarray  # (nx, ny) int64
    clamped: int = 0

    @property
    def nx(self):
        return self.counts.shape[0]

    @property
    def ny(self):
        return self.counts.shape[1]


@dataclass(frozen=True)
class OrientationMapPoint:
    """A rotation reduced to sphere coordinates and its planar projection."""

    longitude: float  # [-pi, pi]
    latitude: float  # [-pi/2, pi/2]
    u: float
    v: float


def _bin_xy(x, y, bounds, nx, ny):
    x0, x1, y0, y1 = bounds
    if nx < 1 or ny < 1 or not (x1 > x0 and y1 > y0):
        raise ValueError("need nx, ny >= 1 and nonempty bounds")
    inside = (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)
    ix = np.minimum((nx * (x[inside] - x0) / (x1 - x0)).astype(np.int64), nx - 1)
    iy = np.minimum((ny * (y[inside] - y0) / (y1 - y0)).astype(np.int64), ny - 1)
    counts = np.zeros((nx, ny), dtype=np.int64)
    np.add.at(counts, (ix, iy), 1)
    return counts, int(np.count_nonzero(~inside))


def position_heatmap(samples: PoseSampleSet, bounds, nx, ny) -> Histogram2D:
    """Bin sample (x, y) positions, marginalizing height.

    bounds is (x_min, x_max, y_min, y_max).
    """
    t = samples.translations
    counts, clamped = _bin_xy(t[:, 0], t[:, 1], bounds, nx, ny)
    return Histogram2D(bounds[0], bounds[1], bounds[2], bounds[3], counts, clamped)


def orientation_to_sphere(R):
    """(longitude, latitude) of the viewing-axis image under R.

    All rotations that differ only by a turn about the viewing axis map to
    the same point, which is exactly the marginalization the orientation
    heatmap wants.  Accepts (..., 3, 3).
    """
    R = np.asarray(R, dtype=np.float64)
    v = R[..., :, 2]  # R @ VIEW_AXIS
    latitude = np.arcsin(np.clip(v[..., 2], -1.0, 1.0))
    longitude = np.arctan2(v[..., 1], v[..., 0])
    return longitude, latitude


def mollweide_project(longitude, latitude):
    """Equal-area Mollweide projection of sphere coordinates.

    Solves 2*theta + sin(2*theta) = pi * sin(latitude) by Newton iteration
    (start theta = latitude, tolerance 1e-10, at most 50 steps; the poles
    use the closed form theta = +-pi/2).  Returns (u, v) with
    u in [-2*sqrt(2), 2*sqrt(2)] and v in [-sqrt(2), sqrt(2)].
    """
    lon = np.asarray(longitude, dtype=np.float64)
    lat = np.asarray(latitude, dtype=np.float64)
    scalar = lon.ndim == 0 and lat.ndim == 0
    lon, lat = np.broadcast_arrays(np.atleast_1d(lon), np.atleast_1d(lat))
    shape = lat.shape
    lon, lat = lon.reshape(-1), lat.reshape(-1)

    theta = np.array(lat, dtype=np.float64)
    target = np.pi * np.sin(lat)
    at_pole = np.abs(lat) >= np.pi / 2 - 1e-12
    theta[at_pole] = np.sign(lat[at_pole]) * (np.pi / 2)

    active = ~at_pole
    for _ in range(_NEWTON_MAX_ITER):
        if not np.any(active):
            break
        th = theta[active]
        f = 2.0 * th + np.sin(2.0 * th) - target[active]
        fp = 2.0 + 2.0 * np.cos(2.0 * th)
        step = f / np.maximum(fp, 1e-300)
        th = np.clip(th - step, -np.pi / 2, np.pi / 2)
        theta[active] = th
        done = np.abs(2.0 * th + np.sin(2.0 * th) - target[active]) <= _NEWTON_TOL
        idx = np.flatnonzero(active)
        active[idx[done]] = False

    residual = np.abs(2.0 * theta + np.sin(2.0 * theta) - target)
    residual[at_pole] = 0.0
    if np.any(residual > 1e-9):
        raise MollweideConvergenceError(
            f"max residual {residual.max():.3e} after {_NEWTON_MAX_ITER} iterations"
        )

    u = (2.0 * np.sqrt(2.0) / np.pi) * lon * np.cos(theta)
    v = np.sqrt(2.0) * np.sin(theta)
    if scalar:
        return float(u[0]), float(v[0])
    return u.reshape(shape), v.reshape(shape)


def map_orientation(R) -> OrientationMapPoint:
    """Single-rotation convenience: sphere coordinates plus projection."""
    lon, lat = orientation_to_sphere(R)
    u, v = mollweide_project(lon, lat)
    return OrientationMapPoint(float(lon), float(lat), u, v)


def orientation_heatmap(samples: PoseSampleSet, nx, ny) -> Histogram2D:
    """2D histogram of projected sample orientations over the Mollweide ellipse box."""
    lon, lat = orientation_to_sphere(samples.rotations)
    u, v = mollweide_project(lon, lat)
    s2 = np.sqrt(2.0)
    counts, clamped = _bin_xy(u, v, (-2 * s2, 2 * s2, -s2, s2), nx, ny)
    return Histogram2D(-2 * s2, 2 * s2, -s2, s2, counts, clamped)


def render_ppm(hist: Histogram2D) -> bytes:
    """P6 pixmap bytes: counts normalized to the max, colormapped, upscaled.

    Row 0 of the image is the highest-y row of the histogram (y axis points
    up); an all-zero histogram renders as the uniform background color.
    """
    peak = hist.counts.max()
    if peak > 0:
        levels = np.rint(hist.counts * (255.0 / peak)).astype(np.uint8)
    else:
        levels = np.zeros_like(hist.counts, dtype=np.uint8)
    rgb = COLORMAP[levels]  # (nx, ny, 3)
    img = np.transpose(rgb, (1, 0, 2))[::-1]  # (ny, nx, 3), y flipped for display
    img = np.repeat(np.repeat(img, CELL_PIXELS, axis=0), CELL_PIXELS, axis=1)
    header = f"P6\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    return header + img.tobytes()


def counts_csv(hist: Histogram2D) -> str:
    lines = ["ix,iy,count"]
    for ix in range(hist.nx):
        for iy in range(hist.ny):
            lines.append(f"{ix},{iy},{hist.counts[ix, iy]}")
    return "\n".join(lines) + "\n"


def emit_heatmap_image(hist: Histogram2D, path):
    """Write the PPM image plus its CSV sidecar (same stem, .csv suffix)."""
    path = Path(path)
    path.write_bytes(render_ppm(hist))
    sidecar = path.with_suffix(".csv")
    sidecar.write_text(counts_csv(hist), encoding="utf-8")
    return path, sidecar
