import math

import numpy as np
import pytest

from panoloom.erp import ErpFrame, yaw_rotate
from panoloom.errors import DomainError, ParseError
from panoloom.oracle import (
    Box,
    Plane,
    ProceduralScene,
    Sphere,
    load_scene,
    random_scene,
    render_erp,
    render_sequence,
    save_scene,
    to_uint8,
)
from panoloom.trajectory import CameraPath, standard_trajectory

from conftest import lifted


def sphere_scene(offset=0.0):
    """Solid spheres around the origin; ``offset`` spins them about +y toward increasing longitude."""
    specs = [((0.0, 1.0, 5.0), 1.0, (0.9, 0.1, 0.1)), ((4.0, 0.5, -1.0), 0.8, (0.1, 0.8, 0.2)),
             ((-3.0, 2.0, -3.0), 1.2, (0.2, 0.3, 0.9)), ((-2.0, -1.0, 3.0), 0.6, (0.9, 0.9, 0.1))]
    c, s = math.cos(offset), math.sin(offset)
    prims = [Sphere((x * c + z * s, y, z * c - x * s), r, col) for (x, y, z), r, col in specs]
    return ProceduralScene(prims)


def angular_width(frame: ErpFrame, row: int) -> float:
    """Angle spanned by sphere pixels (no green, unlike the sky) along one ERP row."""
    px = frame.pixels[row]
    hit = px[:, 1] < 0.2
    return hit.sum() * 2 * math.pi / frame.width


class TestRenderErp:
    def test_empty_scene_seam_continuous(self):
        img = to_uint8(render_erp(ProceduralScene(), (0, 0, 0), 128, 64))
        assert np.max(np.abs(img[:, 0].astype(int) - img[:, -1].astype(int))) <= 1

    def test_empty_scene_depends_on_latitude_only(self):
        img = render_erp(ProceduralScene(), (0, 0, 0), 64, 32).pixels
        assert np.ptp(img, axis=1).max() == 0.0
        assert img[0, 0, 0] < img[15, 0, 0]  # less red toward the zenith

    def test_dims_checked(self):
        with pytest.raises(DomainError):
            render_erp(ProceduralScene(), (0, 0, 0), 100, 60)

    def test_output_float_unit_range(self):
        f = render_erp(random_scene(1), (0, 1.4, 0), 64, 32)
        assert f.pixels.dtype == np.float32
        assert f.pixels.min() >= 0.0 and f.pixels.max() <= 1.0

    def test_angular_size_grows_when_approaching(self):
        scene = ProceduralScene([Sphere((0.0, 0.0, 10.0), 1.0, (1.0, 0.0, 0.0))])
        widths = []
        for z in (0.0, 2.0, 4.0, 6.0):
            w = angular_width(render_erp(scene, (0, 0, z), 1440, 720), 360)
            closed = 2 * math.asin(1.0 / (10.0 - z))
            assert w == pytest.approx(closed, abs=3 * 2 * math.pi / 1440)
            widths.append(w)
        assert all(a < b for a, b in zip(widths, widths[1:]))

    def test_box_and_plane_hit(self):
        scene = ProceduralScene([Box((-1, -1, 4), (1, 1, 6), (0.0, 0.0, 1.0)), Plane(-2.0, (0.0, 1.0, 0.0), checker=0.0)])
        img = render_erp(scene, (0, 0, 0), 64, 32).pixels
        front = img[16, 32]
        below = img[31, 5]
        assert front[2] > 0.3 and front[0] == 0.0
        assert below[1] > 0.3 and below[0] == 0.0

    def test_scene_yaw_matches_cyclic_shift(self):
        delta = 0.9
        base = render_erp(sphere_scene(), (0, 0, 0), 480, 240)
        spun = render_erp(sphere_scene(delta), (0, 0, 0), 480, 240)
        diff = np.abs(to_uint8(yaw_rotate(base, delta)).astype(int) - to_uint8(spun).astype(int))
        assert diff.mean() < 2.0

    @pytest.mark.parametrize("delta", [0.4, 2.0])
    def test_yaw_argument_matches_cyclic_shift(self, delta):
        scene = random_scene(2)
        a = to_uint8(render_erp(scene, (0.3, 1.4, -0.2), 240, 120, yaw=delta)).astype(int)
        b = to_uint8(yaw_rotate(render_erp(scene, (0.3, 1.4, -0.2), 240, 120), delta)).astype(int)
        assert np.abs(a - b).mean() < 2.0

    def test_supersampling_averages(self):
        scene = random_scene(0)
        one = render_erp(scene, (0, 1.4, 0), 64, 32, supersample=1).pixels
        four = render_erp(scene, (0, 1.4, 0), 64, 32, supersample=2).pixels
        assert one.shape == four.shape
        assert np.abs(one - four).mean() < 0.1
        with pytest.raises(DomainError):
            render_erp(scene, (0, 1.4, 0), 64, 32, supersample=0)


class TestRenderSequence:
    def test_loop_closes_bit_exactly(self):
        frames = render_sequence(random_scene(0), lifted("loop", 21, 0.2), 64, 32)
        assert len(frames) == 21
        assert frames[0] == frames[-1]

    def test_subsampling_consistency(self):
        scene = random_scene(4)
        fine = render_sequence(scene, lifted("forward", 9, 0.1), 64, 32)
        coarse = render_sequence(scene, lifted("forward", 5, 0.2), 64, 32)
        assert all(a == b for a, b in zip(fine[::2], coarse))

    def test_constant_path(self):
        path = CameraPath(np.tile([0.5, 1.4, 0.5], (4, 1)))
        frames = render_sequence(random_scene(5), path, 64, 32)
        assert all(f == frames[0] for f in frames)

    def test_thread_count_independent(self):
        scene, path = random_scene(6), lifted("s_curve", 6, 0.3)
        serial = render_sequence(scene, path, 64, 32, threads=1)
        parallel = render_sequence(scene, path, 64, 32, threads=3)
        assert all(a == b for a, b in zip(serial, parallel))

    def test_repeatable(self):
        path = lifted("right", 3, 0.1)
        a = render_sequence(random_scene(7), path, 64, 32)
        b = render_sequence(random_scene(7), path, 64, 32)
        assert all(x == y for x, y in zip(a, b))


class TestScenes:
    def test_random_scene_deterministic(self):
        assert random_scene(3).to_dict() == random_scene(3).to_dict()
        assert random_scene(3).to_dict() != random_scene(4).to_dict()

    @pytest.mark.parametrize("seed", range(5))
    def test_objects_keep_clear_of_origin(self, seed):
        for p in random_scene(seed).primitives:
            if isinstance(p, Sphere):
                assert math.hypot(p.center[0], p.center[2]) - p.radius > 3.0
            elif isinstance(p, Box) and p.hi[1] < 3.0 + 1e-9 and p.lo[1] == 0.0:
                # nearest horizontal point of the box footprint
                nx = min(max(0.0, p.lo[0]), p.hi[0])
                nz = min(max(0.0, p.lo[2]), p.hi[2])
                assert math.hypot(nx, nz) > 3.0

    def test_json_round_trip(self, tmp_path):
        scene = random_scene(8)
        save_scene(tmp_path / "s.json", scene)
        back = load_scene(tmp_path / "s.json")
        assert back.to_dict() == scene.to_dict()
        a = render_erp(scene, (0, 1.4, 0), 32, 16)
        assert render_erp(back, (0, 1.4, 0), 32, 16) == a

    def test_parse_errors(self, tmp_path):
        (tmp_path / "bad.json").write_text("{not json")
        with pytest.raises(ParseError):
            load_scene(tmp_path / "bad.json")
        with pytest.raises(ParseError, match="unknown type"):
            ProceduralScene.from_dict({"primitives": [{"type": "torus"}]})
        with pytest.raises(ParseError):
            ProceduralScene.from_dict({"primitives": [{"type": "sphere", "colour": [1, 1, 1]}]})


class TestToUint8:
    def test_quantization(self):
        f = ErpFrame(np.array([[[0.0], [1.0]]], dtype=np.float32))
        assert to_uint8(f).ravel().tolist() == [0, 255]

    def test_uint8_passthrough(self):
        px = np.zeros((2, 4, 3), np.uint8)
        assert to_uint8(ErpFrame(px)) is px
