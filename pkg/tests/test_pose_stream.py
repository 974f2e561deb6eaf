import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from pmce import autodiff as ad
from pmce.nn import randomize_
from pmce.pose_stream import PoseStream, denormalize_2d, normalize_2d, temporal_layer


@pytest.mark.parametrize("w,h", [(256, 256), (640, 480), (300, 500)])
def test_corners_map_exactly(w, h):
    corners = np.array([[0.0, 0.0], [w, h]])
    out = normalize_2d(corners, w, h)
    assert out[0].tolist() == [-1.0, -h / w]
    assert out[1].tolist() == [1.0, h / w]


@given(
    pts=hnp.arrays(np.float64, (5, 2), elements=st.floats(-1e3, 1e3)),
    w=st.floats(16, 4096),
    h=st.floats(16, 4096),
)
def test_round_trip(pts, w, h):
    back = denormalize_2d(normalize_2d(pts, w, h), w, h)
    assert np.abs(back - pts).max() < 1e-9


def test_aspect_is_preserved():
    # a square in pixels stays a square
    sq = np.array([[10.0, 10.0], [30.0, 10.0], [10.0, 30.0]])
    out = normalize_2d(sq, 640, 480)
    assert out[1, 0] - out[0, 0] == pytest.approx(out[2, 1] - out[0, 1])


def test_bad_image_size():
    with pytest.raises(ValueError):
        normalize_2d(np.zeros((1, 2)), 0, 10)


def _stream(rng, T=4, J=3, D=5):
    return PoseStream(T, J, D, 8, 1, 2, rng, mlp_ratio=2)


def test_output_shape_and_untrained_output(rng):
    s = _stream(rng)
    pose = s(ad.tensor(rng.normal(size=(2, 4, 3, 2))), ad.tensor(rng.normal(size=(2, 4, 5))))
    assert pose.shape == (2, 3, 3)
    np.testing.assert_array_equal(pose.data, 0.0)  # zero-initialized head and fusion bias


def test_shape_mismatch(rng):
    s = _stream(rng)
    with pytest.raises(ValueError):
        s(ad.tensor(np.zeros((2, 5, 3, 2))), ad.tensor(np.zeros((2, 5, 5))))


def test_features_reach_the_pose(rng):
    s = randomize_(_stream(rng), rng)
    x = ad.tensor(rng.normal(size=(4, 3, 2)))
    f = rng.normal(size=(4, 5))
    a = s(x, ad.tensor(f)).data
    f[2] += 0.1
    assert np.abs(s(x, ad.tensor(f)).data - a).max() > 1e-6


def test_batch_is_independent(rng):
    s = randomize_(_stream(rng), rng)
    x, f = rng.normal(size=(3, 4, 3, 2)), rng.normal(size=(3, 4, 5))
    batched = s(ad.tensor(x), ad.tensor(f)).data
    single = s(ad.tensor(x[1]), ad.tensor(f[1])).data
    np.testing.assert_allclose(batched[1], single, atol=1e-13)


def test_temporal_layer_mixes_frames_only_within_a_joint(rng):
    s = randomize_(_stream(rng), rng)
    layer = s.temporal_layers[0]
    x = rng.normal(size=(4, 3, 8))
    base = temporal_layer(ad.tensor(x), layer).data
    x2 = x.copy()
    x2[0, 1] += rng.normal(size=8)  # a constant shift would vanish under LN
    moved = temporal_layer(ad.tensor(x2), layer).data
    changed = np.abs(moved - base).max(axis=-1) > 1e-12
    assert changed[:, 1].all() and not changed[:, [0, 2]].any()


def test_fusion_starts_as_frame_average(rng):
    s = _stream(rng)
    np.testing.assert_allclose(s.fuse_weight.data, 0.25)
