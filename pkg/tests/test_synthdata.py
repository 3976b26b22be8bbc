import numpy as np
import pytest

from sceneforge.errors import BadConfig, HashMismatch
from sceneforge.geometry import project_box_corners
from sceneforge.renderer import rasterize
from sceneforge.synthdata import (
    PLANE_ID,
    GeneratorConfig,
    dataset_manifest,
    generate_corpus,
    generate_video,
    load_corpus,
    load_video,
    save_video,
)


class TestDeterminism:
    def test_same_seed_byte_identical(self, small_config):
        a = generate_video(small_config, seed=5)
        b = generate_video(small_config, seed=5)
        assert np.array_equal(a.frames_u8, b.frames_u8)
        assert np.array_equal(a.masks, b.masks)
        assert np.array_equal(a.depths, b.depths)
        for ca, cb in zip(a.cameras, b.cameras):
            assert np.array_equal(ca.world_to_camera, cb.world_to_camera)

    def test_different_seeds_differ(self, small_config):
        a = generate_video(small_config, seed=5)
        b = generate_video(small_config, seed=6)
        assert not np.array_equal(a.frames_u8, b.frames_u8)


class TestGroundTruth:
    def test_zero_objects(self):
        v = generate_video(GeneratorConfig(frames=6, n_objects=(0, 0)), seed=1)
        assert all(len(b) == 0 for b in v.boxes)
        assert (v.masks == 0).all()

    def test_self_render_reproduces_frames_bit_exactly(self, video):
        from sceneforge.imageio import img_to_u8

        for i in (0, video.n_frames // 2, video.n_frames - 1):
            out = rasterize(video.scene_at(i))
            assert np.array_equal(img_to_u8(out.rgb), video.frames_u8[i])
            obj = np.where((out.index > 0) & (out.index != PLANE_ID), out.index, 0)
            assert np.array_equal(obj, video.masks[i])
            assert np.array_equal(out.depth.astype(np.float32), video.depths[i])

    def test_mask_iou_vs_rerender_is_exact(self, video):
        out = rasterize(video.scene_at(0))
        for b in video.boxes[0]:
            gt = video.masks[0] == b.instance_id
            rr = out.index == b.instance_id
            assert (gt == rr).all()

    def test_motion_and_camera_variation(self, video):
        from sceneforge.geometry import project_points

        cam0 = video.cameras[0]
        disp = []
        for b0, bN in zip(video.boxes[0], video.boxes[-1]):
            uv0, _ = project_points(b0.center[None], cam0)
            uvN, _ = project_points(bN.center[None], cam0)
            disp.append(np.linalg.norm(uvN - uv0))
        assert max(disp) >= 5.0
        assert not np.allclose(cam0.world_to_camera, video.cameras[-1].world_to_camera, atol=1e-3)

    def test_boxes_contain_masks(self, video):
        # every mask pixel lies inside the projected 3D box (2 px tolerance)
        for i in (0, video.n_frames - 1):
            for b in video.boxes[i]:
                m = video.masks[i] == b.instance_id
                if not m.any():
                    continue
                ys, xs = np.nonzero(m)
                corners, behind = project_box_corners(b, video.cameras[i])
                pts = corners[~behind]
                assert xs.min() + 0.5 >= pts[:, 0].min() - 2.0
                assert xs.max() + 0.5 <= pts[:, 0].max() + 2.0
                assert ys.min() + 0.5 >= pts[:, 1].min() - 2.0
                assert ys.max() + 0.5 <= pts[:, 1].max() + 2.0

    def test_bad_config_rejected(self):
        with pytest.raises(BadConfig):
            generate_video(GeneratorConfig(resolution=63), seed=0)
        with pytest.raises(BadConfig):
            generate_video(GeneratorConfig(frames=1), seed=0)


class TestPersistence:
    def test_video_round_trip(self, video, tmp_path):
        save_video(video, tmp_path)
        back = load_video(tmp_path / video.name)
        assert np.array_equal(back.frames_u8, video.frames_u8)
        assert np.array_equal(back.masks, video.masks)
        assert np.array_equal(back.depths, video.depths)
        assert back.seed == video.seed
        for ca, cb in zip(back.cameras, video.cameras):
            assert np.array_equal(ca.world_to_camera, cb.world_to_camera)
        for fa, fb in zip(back.boxes, video.boxes):
            for a, b in zip(fa, fb):
                assert np.array_equal(a.center, b.center)
                assert a.class_label == b.class_label

    def test_empty_manifest_valid(self, tmp_path):
        path = dataset_manifest(tmp_path, [])
        assert path.exists()
        assert load_corpus(tmp_path) == []

    def test_corpus_round_trip_and_hash_validation(self, small_config, tmp_path):
        root = generate_corpus(small_config, tmp_path / "corpus", n_videos=2, seed=40)
        videos = load_corpus(root)
        assert len(videos) == 2
        # corrupt one frame: loader must name the offending file
        victim = root / "video_001" / "frames" / "000.png"
        victim.write_bytes(victim.read_bytes()[:-1] + b"\x00")
        with pytest.raises(HashMismatch) as err:
            load_corpus(root)
        assert "video_001/frames/000.png" in str(err.value)

    def test_loaded_video_has_no_ground_truth_scene(self, video, tmp_path):
        save_video(video, tmp_path)
        back = load_video(tmp_path / video.name)
        with pytest.raises(BadConfig):
            back.scene_at(0)
