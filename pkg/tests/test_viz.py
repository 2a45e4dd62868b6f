"""Heatmap emitters: binning, sphere reduction, Mollweide, PPM output."""

import numpy as np
import pytest

from ambipose.geometry import PoseSampleSet, rot_x, rot_z
from ambipose.viz import (
    CELL_PIXELS,
    COLORMAP,
    Histogram2D,
    MollweideConvergenceError,
    counts_csv,
    emit_heatmap_image,
    map_orientation,
    mollweide_project,
    orientation_heatmap,
    orientation_to_sphere,
    position_heatmap,
    render_ppm,
)

BOUNDS = (-1.0, 1.0, -1.0, 1.0)


def set_at(points):
    t = np.zeros((len(points), 3))
    t[:, :2] = points
    return PoseSampleSet(t, np.tile(np.eye(3), (len(points), 1, 1)))


class TestPositionHeatmap:
    def test_central_samples_fill_one_cell(self):
        s = set_at([[0.0, 0.0]] * 9)
        hist = position_heatmap(s, BOUNDS, 3, 3)
        assert hist.counts[1, 1] == 9
        assert hist.counts.sum() == 9
        assert hist.clamped == 0

    def test_empty_cells_are_zero(self):
        s = set_at([[-0.9, -0.9]])
        hist = position_heatmap(s, BOUNDS, 4, 4)
        assert hist.counts[0, 0] == 1
        assert hist.counts.sum() == 1

    def test_uniform_fill_within_multinomial_bounds(self):
        rng = np.random.default_rng(0)
        n = 4000
        s = set_at(rng.uniform(-1, 1, size=(n, 2)))
        hist = position_heatmap(s, BOUNDS, 2, 2)
        expect = n / 4
        sigma = np.sqrt(n * 0.25 * 0.75)
        assert np.all(np.abs(hist.counts - expect) <= 4 * sigma)

    def test_out_of_bounds_tallied_not_binned(self):
        s = set_at([[0.0, 0.0], [5.0, 0.0], [-5.0, 2.0]])
        hist = position_heatmap(s, BOUNDS, 3, 3)
        assert hist.clamped == 2
        assert hist.counts.sum() + hist.clamped == 3

    def test_total_counts_plus_clamped_equals_samples(self):
        rng = np.random.default_rng(1)
        s = set_at(rng.normal(scale=1.2, size=(500, 2)))
        hist = position_heatmap(s, BOUNDS, 5, 7)
        assert hist.counts.sum() + hist.clamped == 500

    def test_upper_boundary_lands_in_last_cell(self):
        s = set_at([[1.0, 1.0]])
        hist = position_heatmap(s, BOUNDS, 3, 3)
        assert hist.counts[2, 2] == 1 and hist.clamped == 0

    def test_bad_bins_rejected(self):
        with pytest.raises(ValueError):
            position_heatmap(set_at([[0, 0]]), BOUNDS, 0, 3)


class TestOrientationToSphere:
    def test_identity_maps_to_north_pole(self):
        lon, lat = orientation_to_sphere(np.eye(3))
        assert lat == pytest.approx(np.pi / 2)
        assert lon == pytest.approx(0.0)

    def test_quarter_turn_about_x(self):
        # (0,0,1) -> (0,-1,0): longitude -pi/2, latitude 0.
        lon, lat = orientation_to_sphere(rot_x(np.pi / 2))
        assert lon == pytest.approx(-np.pi / 2)
        assert lat == pytest.approx(0.0, abs=1e-12)

    def test_fiber_invariance(self):
        rng = np.random.default_rng(2)
        from ambipose.geometry import rotation_from_6d

        for _ in range(50):
            R = rotation_from_6d(rng.normal(size=6))
            lon0, lat0 = orientation_to_sphere(R)
            psi = rng.uniform(0, 2 * np.pi)
            lon1, lat1 = orientation_to_sphere(R @ rot_z(psi))
            assert abs(lat1 - lat0) <= 1e-9
            # Longitude may wrap at +-pi; compare on the circle.
            assert abs(np.angle(np.exp(1j * (lon1 - lon0)))) <= 1e-9


class TestMollweide:
    def test_projection_center(self):
        assert mollweide_project(0.0, 0.0) == (0.0, 0.0)

    def test_north_pole_closed_form(self):
        u, v = mollweide_project(0.0, np.pi / 2)
        assert u == pytest.approx(0.0)
        assert v == pytest.approx(np.sqrt(2.0))

    def test_equator_edge(self):
        u, v = mollweide_project(np.pi, 0.0)
        assert u == pytest.approx(2.0 * np.sqrt(2.0))
        assert v == pytest.approx(0.0, abs=1e-12)

    def test_residual_on_full_grid(self):
        lats = np.deg2rad(np.arange(-90, 91))
        lons = np.deg2rad(np.arange(-180, 181))
        glat, glon = np.meshgrid(lats, lons, indexing="ij")
        u, v = mollweide_project(glon, glat)
        theta = np.arcsin(np.clip(v / np.sqrt(2.0), -1.0, 1.0))
        residual = np.abs(2 * theta + np.sin(2 * theta) - np.pi * np.sin(glat))
        assert residual.max() <= 1e-9

    def test_points_stay_inside_ellipse(self):
        rng = np.random.default_rng(3)
        lon = rng.uniform(-np.pi, np.pi, 2000)
        lat = rng.uniform(-np.pi / 2, np.pi / 2, 2000)
        u, v = mollweide_project(lon, lat)
        assert np.all(u**2 / 8.0 + v**2 / 2.0 <= 1.0 + 1e-12)

    def test_equal_area_property(self):
        # The projection preserves areas up to the global factor of 1: the
        # hemisphere lat >= 0 maps to exactly half the ellipse area.
        lat_band = np.pi / 6  # sin(30 deg) = 0.5 -> half the hemisphere area
        _, v = mollweide_project(0.0, lat_band)
        theta = np.arcsin(v / np.sqrt(2.0))
        band_area_fraction = (2 * theta + np.sin(2 * theta)) / np.pi
        assert band_area_fraction == pytest.approx(0.5, abs=1e-9)

    def test_map_orientation_combines_both(self):
        p = map_orientation(rot_x(np.pi / 2))
        assert p.latitude == pytest.approx(0.0, abs=1e-12)
        assert p.u**2 / 8 + p.v**2 / 2 <= 1.0 + 1e-12


class TestImageOutput:
    def _small_hist(self):
        counts = np.array([[0, 4], [2, 4]], dtype=np.int64)
        return Histogram2D(-1.0, 1.0, -1.0, 1.0, counts)

    def test_ppm_bytes_assembled_from_colormap(self):
        hist = self._small_hist()
        data = render_ppm(hist)
        width = height = 2 * CELL_PIXELS
        header = f"P6\n{width} {height}\n255\n".encode()
        assert data.startswith(header)
        # Expected layout: image rows top-down are iy = 1 then iy = 0;
        # levels are counts scaled so the peak maps to 255.
        levels = np.array([[0, 255], [128, 255]], dtype=int)  # [ix, iy]; rint(127.5)=128
        img = np.zeros((2, 2, 3), dtype=np.uint8)
        for ix in range(2):
            for iy in range(2):
                img[1 - iy, ix] = COLORMAP[levels[ix, iy]]
        img = np.repeat(np.repeat(img, CELL_PIXELS, axis=0), CELL_PIXELS, axis=1)
        assert data[len(header):] == img.tobytes()

    def test_round_half_to_even_at_midpoint(self):
        # 2/4 of peak -> 127.5 -> banker's rounding to 128 via np.rint.
        counts = np.array([[2, 4]], dtype=np.int64)
        hist = Histogram2D(-1, 1, -1, 1, counts)
        data = render_ppm(hist)
        level = int(np.rint(2 * 255.0 / 4))
        assert level == 128  # banker's rounding at the midpoint
        # top image row is iy=1 (level 255), bottom row is iy=0 (level 128)
        start = len(f"P6\n{1*CELL_PIXELS} {2*CELL_PIXELS}\n255\n".encode())
        assert tuple(data[start : start + 3]) == tuple(COLORMAP[255])
        assert tuple(data[-3:]) == tuple(COLORMAP[level])

    def test_zero_histogram_is_uniform_background(self):
        hist = Histogram2D(-1, 1, -1, 1, np.zeros((3, 3), dtype=np.int64))
        data = render_ppm(hist)
        body = data.split(b"\n", 3)[3]
        bg = bytes(COLORMAP[0])
        assert body == bg * (len(body) // 3)

    def test_emit_writes_image_and_sidecar(self, tmp_path):
        hist = self._small_hist()
        ppm, csv = emit_heatmap_image(hist, tmp_path / "out.ppm")
        assert ppm.exists() and csv.name == "out.csv"
        text = csv.read_text()
        lines = text.strip().splitlines()
        assert lines[0] == "ix,iy,count"
        assert len(lines) == 1 + 4
        assert "1,1,4" in lines

    def test_byte_deterministic(self, tmp_path):
        hist = self._small_hist()
        emit_heatmap_image(hist, tmp_path / "a.ppm")
        emit_heatmap_image(hist, tmp_path / "b.ppm")
        assert (tmp_path / "a.ppm").read_bytes() == (tmp_path / "b.ppm").read_bytes()
        assert (tmp_path / "a.csv").read_text() == (tmp_path / "b.csv").read_text()

    def test_colormap_is_monotone(self):
        lum = COLORMAP.astype(int).sum(axis=1)
        assert np.all(np.diff(lum) >= 0)
        assert COLORMAP.shape == (256, 3)


class TestOrientationHeatmap:
    def test_counts_cover_all_samples(self):
        rng = np.random.default_rng(4)
        from ambipose.geometry import rotation_from_6d

        R = rotation_from_6d(rng.normal(size=(300, 6)))
        s = PoseSampleSet(np.zeros((300, 3)), R)
        hist = orientation_heatmap(s, 20, 10)
        assert hist.counts.sum() + hist.clamped == 300
        assert hist.clamped == 0  # projections always land inside the box
