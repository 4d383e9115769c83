import numpy as np
import pytest

from spadblur.ecc import AlignmentError, ecc_align, ecc_value
from spadblur.scenes import orange
from spadblur.simulate import warp_image
from spadblur.transforms import EuclideanTransform, identity_trajectory, interpolate_trajectory

SHAPE = (64, 64)


def test_about_center_fixes_the_centre():
    a = EuclideanTransform.about_center(0.3, 0, 0, SHAPE)
    np.testing.assert_allclose(a.apply([[31.5, 31.5]]), [[31.5, 31.5]], atol=1e-12)


def test_matrix_round_trip_and_inverse():
    a = EuclideanTransform(0.2, 1.5, -2.0, 10.0, 5.0)
    b = EuclideanTransform.from_matrix(a.matrix, 10.0, 5.0)
    np.testing.assert_allclose(b.params(), a.params(), atol=1e-12)
    np.testing.assert_allclose((a @ a.inverse()).matrix, np.eye(3), atol=1e-12)


def test_composition_order():
    a = EuclideanTransform(0.0, 1.0, 0.0)
    r = EuclideanTransform(np.pi / 2, 0.0, 0.0)
    p = np.array([[1.0, 0.0]])
    np.testing.assert_allclose((a @ r).apply(p), a.apply(r.apply(p)))


def test_recentering_preserves_the_map():
    a = EuclideanTransform(0.4, 2.0, 1.0, 3.0, 4.0)
    np.testing.assert_allclose(a.recentered(-7.0, 11.0).matrix, a.matrix, atol=1e-12)


def test_scaled_grid():
    a = EuclideanTransform.about_center(0.1, 1.0, -0.5, (10, 10))
    b = a.scaled(2)
    # a point expressed on the 2x grid maps to the 2x-grid image of its mapped point
    p = np.array([[3.0, 7.0]])
    q = (p + 0.5) * 2 - 0.5
    np.testing.assert_allclose(b.apply(q), (a.apply(p) + 0.5) * 2 - 0.5, atol=1e-12)


def test_interpolate_endpoints():
    a = EuclideanTransform(0.3, 2.0, -1.0)
    np.testing.assert_allclose(a.interpolate(0.0).matrix, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(a.interpolate(1.0).matrix, a.matrix)


def test_interpolated_trajectory_hits_keyframes():
    step = EuclideanTransform.about_center(0.02, 1.0, 0.0, SHAPE)
    traj = interpolate_trajectory([step, step], [0, 10, 20], frame_times=[0, 5, 10, 20])
    np.testing.assert_allclose(traj.to_reference[0], np.eye(3), atol=1e-12)
    np.testing.assert_allclose(np.linalg.inv(traj.to_reference[2]), step.matrix, atol=1e-12)
    np.testing.assert_allclose(np.linalg.inv(traj.to_reference[3]), (step @ step).matrix, atol=1e-12)
    assert traj.transform(1).params()[0] == pytest.approx(0.01)
    with pytest.raises(ValueError):
        interpolate_trajectory([step], [0, 0])
    with pytest.raises(ValueError):
        interpolate_trajectory([step], [0, 1, 2])


def test_identity_trajectory():
    t = identity_trajectory(5, SHAPE)
    assert t.n_frames == 5
    np.testing.assert_allclose(t.params(), 0.0)


def test_warp_image_convention():
    img = np.zeros(SHAPE)
    img[10, 20] = 1.0
    out = warp_image(img, EuclideanTransform(0.0, 3.0, -2.0))
    assert out[8, 23] == pytest.approx(1.0)


@pytest.fixture(scope="module")
def texture():
    return orange(64)


@pytest.mark.parametrize("tx,ty,deg", [(2.0, -1.0, 0.0), (0.0, 0.0, 4.0), (-3.0, 1.5, -3.0)])
def test_ecc_recovers_known_warp(texture, tx, ty, deg):
    a = EuclideanTransform.about_center(np.deg2rad(deg), tx, ty, SHAPE)
    dst = warp_image(texture, a, cval=float(texture.min()))
    res = ecc_align(texture, dst)
    assert res.converged
    assert res.ecc > 0.95
    np.testing.assert_allclose(res.transform.params(), a.params(), atol=0.05)
    assert ecc_value(texture, dst, res.transform) >= ecc_value(texture, dst, EuclideanTransform.identity(SHAPE))


def test_ecc_is_invariant_to_intensity_scaling(texture):
    a = EuclideanTransform.about_center(0.0, 1.0, 1.0, SHAPE)
    dst = warp_image(texture, a, cval=float(texture.min()))
    r1 = ecc_align(texture, dst).transform
    r2 = ecc_align(texture, 5.0 * dst + 2.0).transform
    np.testing.assert_allclose(r1.params(), r2.params(), atol=1e-6)


def test_ecc_rejects_flat_images():
    with pytest.raises(AlignmentError):
        ecc_align(np.ones(SHAPE), np.ones(SHAPE))
