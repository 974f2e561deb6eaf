import json

import numpy as np
import pytest

from pmce.body import face_normals
from pmce.data import (ChecksumError, DatasetError, TruncatedFileError, VersionMismatchError,
                       generate_dataset, make_batch, read_dataset, windows, write_dataset)
from pmce.pose_stream import normalize_2d


def _files(path):
    return {p.name: p.read_bytes() for p in sorted(path.iterdir())}


def test_dataset_bytes_reproducible(cfg, tmp_path):
    a = write_dataset(tmp_path / "a", generate_dataset(cfg.synth_config(), 3, 2), cfg.synth_config(), 3)
    b = write_dataset(tmp_path / "b", generate_dataset(cfg.synth_config(), 3, 2), cfg.synth_config(), 3)
    assert _files(a) == _files(b)


def test_other_seed_changes_the_data(cfg):
    a = generate_dataset(cfg.synth_config(), 0, 1)[0]
    b = generate_dataset(cfg.synth_config(), 1, 1)[0]
    assert not np.array_equal(a.joints, b.joints)


def test_round_trip(cfg, clips, tmp_path):
    path = write_dataset(tmp_path / "d", clips, cfg.synth_config(), cfg.seed)
    back, synth = read_dataset(path)
    assert synth == cfg.synth_config()
    for c, r in zip(clips, back):
        for name in ("joints", "mesh", "pose_2d", "features"):
            np.testing.assert_array_equal(getattr(c, name), getattr(r, name))
        np.testing.assert_array_equal(c.camera.rotation, r.camera.rotation)
        assert (c.seed, c.scale, c.girth) == (r.seed, r.scale, r.girth)


def test_regressor_recovers_joints(body, clips):
    for c in clips:
        np.testing.assert_allclose(np.einsum("jv,tvc->tjc", body.regressor, c.mesh), c.joints, atol=1e-9)


def test_projection_exact_without_noise(cfg):
    clip = generate_dataset(cfg.replace(noise_std=0.0).synth_config(), 0, 1)[0]
    np.testing.assert_allclose(clip.camera.project(clip.joints), clip.pose_2d, atol=1e-9)


def test_meshes_are_not_degenerate(body, clips):
    for c in clips:
        for frame in c.mesh:
            _, degenerate = face_normals(frame, body.faces)
            assert not degenerate.any()


def test_features_bounded_and_shape_dependent(cfg, clips):
    for c in clips:
        assert np.all(np.abs(c.features) < 1.0)
    girths = {round(c.girth, 6) for c in clips}
    assert len(girths) == len(clips)


def test_windows(cfg, clips):
    T = cfg.num_frames
    c = clips[0]
    b = windows(c, T)
    n = c.num_frames - T + 1
    assert b.pose_2d.shape == (n, T, c.joints.shape[1], 2)
    mid = T // 2
    np.testing.assert_array_equal(b.pose_gt[1], c.joints[1 + mid] - c.joints[1 + mid, :1])
    np.testing.assert_array_equal(
        b.pose_2d[0], normalize_2d(c.pose_2d[:T], c.camera.width, c.camera.height))
    assert not windows(c, T, zero_features=True).features.any()


def test_make_batch_skips_short_clips(cfg, clips):
    short = generate_dataset(cfg.replace(clip_frames=cfg.num_frames - 1).synth_config(), 5, 1)
    b = make_batch(clips + short, cfg.num_frames)
    assert len(b) == sum(c.num_frames - cfg.num_frames + 1 for c in clips)


@pytest.fixture
def stored(cfg, clips, tmp_path):
    return write_dataset(tmp_path / "d", clips[:1], cfg.synth_config(), cfg.seed)


def test_truncated_clip(stored):
    f = stored / "clip_00000.bin"
    f.write_bytes(f.read_bytes()[:-100])
    with pytest.raises(TruncatedFileError):
        read_dataset(stored)


def test_flipped_byte(stored):
    f = stored / "clip_00000.bin"
    raw = bytearray(f.read_bytes())
    raw[200] ^= 0xFF
    f.write_bytes(bytes(raw))
    with pytest.raises(ChecksumError):
        read_dataset(stored)


def test_manifest_version(stored):
    m = stored / "manifest.json"
    d = json.loads(m.read_text())
    d["format_version"] = 99
    m.write_text(json.dumps(d))
    with pytest.raises(VersionMismatchError):
        read_dataset(stored)


def test_missing_manifest(tmp_path):
    with pytest.raises(DatasetError):
        read_dataset(tmp_path)
