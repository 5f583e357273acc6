import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial.distance import pdist
from scipy.spatial.transform import Rotation
from scipy.stats import chisquare

from panoloom.curation import (
    ClipManifest,
    PoseRecord,
    alignment_rotation,
    curate,
    emit_manifest,
    filter_scale,
    gravity_align,
    poses_to_path,
    read_clip_manifest,
    read_poses,
    rotation_between,
    slice_clips,
    write_poses,
    write_rejections,
)
from panoloom.errors import AlignmentError, DomainError, ParseError, ValidationError
from panoloom.trajectory import CameraPath, decompose, read_manifest, standard_trajectory


S_CURVE_120 = standard_trajectory("s_curve", 120, 0.05)


def yup_poses(rng, n=30, max_tilt=0.3):
    """Poses with random yaw and small pitch/roll around a y-up world."""
    poses = []
    for k in range(n):
        yaw = rng.uniform(-math.pi, math.pi)
        tilt = rng.uniform(-max_tilt, max_tilt, 2)
        rot = Rotation.from_euler("yxz", [yaw, tilt[0], tilt[1]]).as_matrix()
        poses.append(PoseRecord(k, rng.normal(size=3) * 3, rot))
    # cancel the mean tilt so the mean up axis is exactly +y
    ups = np.array([p.up for p in poses])
    fix = rotation_between(ups.mean(axis=0), [0, 1, 0])
    return [PoseRecord(p.frame, fix @ p.position, fix @ p.rotation) for p in poses]


def transform(poses, rot, shift=np.zeros(3)):
    return [PoseRecord(p.frame, rot @ p.position + shift, rot @ p.rotation) for p in poses]


def path_poses(path: CameraPath):
    return [PoseRecord(path.frame_offset + k, x, np.eye(3)) for k, x in enumerate(path.positions)]


def scaled_path(step, frames=40):
    return standard_trajectory("forward", frames, step)


class TestPoseRecord:
    def test_rejects_non_orthonormal(self):
        with pytest.raises(ValidationError):
            PoseRecord(0, (0, 0, 0), np.eye(3) * 1.01)

    def test_rejects_reflection(self):
        with pytest.raises(ValidationError):
            PoseRecord(0, (0, 0, 0), np.diag([1.0, 1.0, -1.0]))

    def test_accepts_tiny_error(self):
        PoseRecord(0, (0, 0, 0), np.eye(3) + 1e-8)


class TestPoseFiles:
    def test_text_round_trip(self, tmp_path, rng):
        poses = yup_poses(rng, 5)
        write_poses(tmp_path / "p.txt", poses)
        back = read_poses(tmp_path / "p.txt")
        for a, b in zip(poses, back):
            assert a.frame == b.frame
            assert np.array_equal(a.position, b.position) and np.array_equal(a.rotation, b.rotation)

    def test_text_comments(self, tmp_path):
        row = "3 1 2 3 1 0 0 0 1 0 0 0 1"
        (tmp_path / "p.txt").write_text(f"# header\n\n{row}  # trailing\n")
        (pose,) = read_poses(tmp_path / "p.txt")
        assert pose.frame == 3 and pose.position.tolist() == [1, 2, 3]

    def test_text_field_count_offset(self, tmp_path):
        good = "0 0 0 0 1 0 0 0 1 0 0 0 1\n"
        (tmp_path / "p.txt").write_text(good + "1 0 0\n")
        with pytest.raises(ParseError) as info:
            read_poses(tmp_path / "p.txt")
        assert info.value.offset == len(good)

    def test_json(self, tmp_path):
        data = [{"frame": 0, "position": [0, 1, 2], "rotation": np.eye(3).tolist()}]
        (tmp_path / "p.json").write_text(json.dumps(data))
        assert read_poses(tmp_path / "p.json")[0].position.tolist() == [0, 1, 2]
        (tmp_path / "bad.json").write_text('[{"frame": 0}]')
        with pytest.raises(ParseError):
            read_poses(tmp_path / "bad.json")


class TestGravityAlign:
    def test_already_upright_is_identity(self, rng):
        poses = yup_poses(rng)
        assert np.linalg.norm(alignment_rotation(poses) - np.eye(3)) < 1e-9

    def test_rolled_90_about_z(self, rng):
        poses = yup_poses(rng)
        rolled = transform(poses, Rotation.from_euler("z", 90, degrees=True).as_matrix())
        aligned = gravity_align(rolled)
        up = np.mean([p.up for p in aligned], axis=0)
        assert np.linalg.norm(up / np.linalg.norm(up) - [0, 1, 0]) < 1e-6
        assert np.max(np.abs(pdist([p.position for p in aligned]) - pdist([p.position for p in poses]))) < 1e-9

    @given(st.integers(0, 10_000))
    def test_recovers_up_from_random_rigid_transform(self, seed):
        rng = np.random.default_rng(seed)
        poses = yup_poses(rng, 12)
        rot = Rotation.random(random_state=seed).as_matrix()
        moved = transform(poses, rot, rng.normal(size=3) * 10)
        aligned = gravity_align(moved)
        up = np.mean([p.up for p in aligned], axis=0)
        assert np.linalg.norm(up / np.linalg.norm(up) - [0, 1, 0]) < 1e-6
        before = pdist([p.position for p in moved])
        after = pdist([p.position for p in aligned])
        assert np.max(np.abs(before - after)) < 1e-9

    def test_upside_down(self, rng):
        flipped = transform(yup_poses(rng), np.diag([1.0, -1.0, -1.0]))
        g = alignment_rotation(flipped)
        up = np.mean([p.up for p in flipped], axis=0)
        assert np.allclose(g @ (up / np.linalg.norm(up)), [0, 1, 0], atol=1e-9)
        assert np.allclose(g.T @ g, np.eye(3)) and np.linalg.det(g) == pytest.approx(1.0)

    def test_degenerate_needs_hint(self):
        a = PoseRecord(0, (0, 0, 0), np.eye(3))
        b = PoseRecord(1, (0, 0, 1), np.diag([1.0, -1.0, -1.0]))
        with pytest.raises(AlignmentError):
            gravity_align([a, b])
        aligned = gravity_align([a, b], up_hint=(0, 0, 1))
        assert np.allclose(aligned[1].position, [0, 1, 0])

    def test_needs_two_poses(self):
        with pytest.raises(DomainError):
            gravity_align([PoseRecord(0, (0, 0, 0), np.eye(3))])

    @given(st.lists(st.floats(-1, 1), min_size=3, max_size=3), st.lists(st.floats(-1, 1), min_size=3, max_size=3))
    def test_rotation_between_property(self, a, b):
        a, b = np.array(a), np.array(b)
        if np.linalg.norm(a) < 1e-3 or np.linalg.norm(b) < 1e-3:
            return
        r = rotation_between(a, b)
        assert np.allclose(r @ (a / np.linalg.norm(a)), b / np.linalg.norm(b), atol=1e-9)
        assert np.allclose(r.T @ r, np.eye(3), atol=1e-9)
        assert np.linalg.det(r) == pytest.approx(1.0)


class TestFilterScale:
    def test_identical_steps_all_kept(self):
        res = filter_scale([scaled_path(0.1) for _ in range(5)])
        assert res.kept == list(range(5)) and res.rejected == []

    def test_outlier_rejected(self):
        clips = [scaled_path(0.1) for _ in range(6)] + [scaled_path(1.0)]
        res = filter_scale(clips)
        assert [i for i, _ in res.rejected] == [6]
        assert res.median == pytest.approx(0.1)

    def test_two_clip_band_edges(self):
        res = filter_scale([scaled_path(1.0), scaled_path(3.0)], (0.5, 2.0))
        assert res.median == pytest.approx(2.0)
        assert res.kept == [0, 1]

    @pytest.mark.parametrize("seed", range(10))
    def test_idempotent(self, seed):
        rng = np.random.default_rng(seed)
        clips = [scaled_path(s) for s in np.exp(rng.normal(0, 0.8, 15))]
        first = filter_scale(clips)
        kept = [clips[i] for i in first.kept]
        second = filter_scale(kept)
        assert second.kept == list(range(len(kept))) and second.rejected == []

    def test_errors(self):
        with pytest.raises(DomainError):
            filter_scale([])
        with pytest.raises(DomainError):
            filter_scale([scaled_path(1.0)], (2.0, 0.5))


class TestSliceClips:
    def test_exact_length_single_window(self):
        path = scaled_path(0.1, 81)
        for policy in ("uniform", "random"):
            (w,) = slice_clips(path, 81, policy)
            assert w == path

    def test_uniform_stride(self):
        windows = slice_clips(scaled_path(0.1, 161), 81, "uniform", stride=80)
        assert [w.frame_offset for w in windows] == [0, 80]
        assert all(len(w) == 81 for w in windows)

    def test_offsets_are_absolute(self):
        path = CameraPath(scaled_path(0.1, 100).positions, frame_offset=1000)
        windows = slice_clips(path, 30, "uniform")
        assert [w.frame_offset for w in windows] == [1000, 1030, 1060]
        assert np.array_equal(windows[1].positions, path.positions[30:60])

    def test_random_uniform_starts(self):
        path = scaled_path(0.1, 200)
        starts = [slice_clips(path, 81, "random", seed=s, count=1)[0].frame_offset for s in range(10_000)]
        assert min(starts) >= 0 and max(starts) <= 119
        counts = np.bincount(starts, minlength=120)
        assert chisquare(counts).pvalue > 0.001

    def test_random_without_replacement_and_deterministic(self):
        path = scaled_path(0.1, 200)
        a = slice_clips(path, 81, "random", seed=3, count=50)
        b = slice_clips(path, 81, "random", seed=3, count=50)
        starts = [w.frame_offset for w in a]
        assert starts == sorted(set(starts)) and len(starts) == 50
        assert starts == [w.frame_offset for w in b]

    def test_errors(self):
        with pytest.raises(DomainError):
            slice_clips(scaled_path(0.1, 50), 81)
        with pytest.raises(DomainError):
            slice_clips(scaled_path(0.1, 100), 81, "shuffle")


def make_clip(k, rng):
    path = CameraPath(standard_trajectory("loop", 21, 0.1).positions + rng.normal(size=3), frame_offset=k * 21)
    return ClipManifest(f"clip_{k:04d}", path, decompose(path, 0.1))


class TestManifest:
    def test_empty_file(self, tmp_path):
        emit_manifest([], tmp_path / "m.jsonl")
        assert (tmp_path / "m.jsonl").read_text() == ""
        assert read_clip_manifest(tmp_path / "m.jsonl") == []

    def test_one_line_readable_as_trajectory(self, tmp_path, rng):
        clip = make_clip(3, rng)
        emit_manifest([clip], tmp_path / "m.jsonl")
        lines = (tmp_path / "m.jsonl").read_text().splitlines()
        assert len(lines) == 1
        record = json.loads(lines[0])
        assert record["frame_start"] == 63 and record["frame_end"] == 83
        assert record["flags"] == {"gravity_aligned": True, "uniform": True, "scale_ok": True}
        assert CameraPath.from_records(record["trajectory"]) == clip.path
        # the embedded trajectory is the standard trajectory manifest schema
        (tmp_path / "t.jsonl").write_text("\n".join(json.dumps(r) for r in record["trajectory"]))
        assert read_manifest(tmp_path / "t.jsonl") == clip.path

    def test_round_trip_1000(self, tmp_path, rng):
        clips = [make_clip(k, rng) for k in range(1000)]
        emit_manifest(clips, tmp_path / "m.jsonl")
        back = read_clip_manifest(tmp_path / "m.jsonl")
        assert len(back) == 1000
        for a, b in zip(clips, back):
            assert a.clip_id == b.clip_id and a.path == b.path and a.flags == b.flags
            assert np.array_equal(a.flow_scale.flow, b.flow_scale.flow)
            assert a.flow_scale.scale == b.flow_scale.scale
        emit_manifest(back, tmp_path / "again.jsonl")
        assert (tmp_path / "again.jsonl").read_bytes() == (tmp_path / "m.jsonl").read_bytes()

    def test_refuses_false_flags(self, tmp_path, rng):
        good, bad = make_clip(0, rng), make_clip(1, rng)
        bad.flags["uniform"] = False
        with pytest.raises(ValidationError, match="clip_0001: uniform"):
            emit_manifest([good, bad], tmp_path / "m.jsonl")
        assert not (tmp_path / "m.jsonl").exists()

    def test_parse_error(self, tmp_path):
        (tmp_path / "m.jsonl").write_text('{"clip_id": "x"}\n')
        with pytest.raises(ParseError):
            read_clip_manifest(tmp_path / "m.jsonl")


class TestCurate:
    def corpus(self, rng):
        sources = {}
        path = S_CURVE_120
        for k in range(4):
            rot = Rotation.random(random_state=k).as_matrix()
            poses = path_poses(path)
            sources[f"clip{k}"] = transform(poses, rot)
        sources["fast"] = transform(path_poses(standard_trajectory("forward", 120, 0.5)), np.eye(3))
        jerky = standard_trajectory("forward", 120, 0.05).positions.copy()
        jerky[60:, 2] += np.arange(60) * 0.02
        sources["jerky"] = path_poses(CameraPath(jerky))
        return sources

    def test_pipeline(self, tmp_path, rng):
        result = curate(self.corpus(rng), f=40, stride=40)
        reasons = {(cid.split("_")[0], why) for cid, why, _ in result.rejections}
        assert ("fast", "scale") in reasons
        assert any(cid.startswith("jerky") and why == "non_uniform" for cid, why, _ in result.rejections)
        assert result.reference_step == pytest.approx(0.05, rel=1e-6)
        ids = [m.clip_id for m in result.manifests]
        assert "clip0_000000" in ids and "clip0_000080" in ids
        assert "jerky_000040" not in ids and "jerky_000080" in ids
        for m in result.manifests:
            assert len(m.path) == 40
            if m.clip_id.startswith("clip"):
                assert m.flow_scale.scale == pytest.approx(1.0, rel=1e-6)
        emit_manifest(result.manifests, tmp_path / "m.jsonl")
        write_rejections(tmp_path / "r.csv", result.rejections)
        rows = (tmp_path / "r.csv").read_text().splitlines()
        assert rows[0] == "clip_id,reason,value" and len(rows) == 1 + len(result.rejections)

    def test_aligned_clip_is_level(self, rng):
        result = curate(self.corpus(rng), f=119)
        for m in result.manifests:
            # the s-curve lies in a horizontal plane after alignment
            assert np.ptp(m.path.positions[:, 1]) < 1e-9

    def test_misaligned_rejected(self):
        a = PoseRecord(0, (0, 0, 0), np.eye(3))
        b = PoseRecord(1, (0, 0, 1), np.diag([1.0, -1.0, -1.0]))
        result = curate({"bad": [a, b], "ok": path_poses(scaled_path(0.1, 10))}, f=5)
        assert result.rejections[0][0] == "bad" and result.rejections[0][1].startswith("alignment")

    def test_poses_to_path_needs_consecutive_frames(self):
        with pytest.raises(ValidationError):
            poses_to_path([PoseRecord(0, (0, 0, 0), np.eye(3)), PoseRecord(2, (0, 0, 1), np.eye(3))])
