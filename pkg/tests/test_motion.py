import numpy as np
import pytest

from mcmt_tracker.config import MotionConfig
from mcmt_tracker.core import DetBox, Rect
from mcmt_tracker.errors import UsageError
from mcmt_tracker.motion import KalmanBoxFilter, kalman_correct, squared_mahalanobis

def make_box(x, y, w=30.0, h=60.0, score=0.9, frame=0):
    return DetBox(frame=frame, rect=Rect(x, y, w, h), score=score, feature=np.array([1.0, 0.0]))

def test_initiate_and_predict():
    kf = KalmanBoxFilter()
    state = kf.initiate(make_box(100, 200))

    np.testing.assert_allclose(state.position, [115, 230, 0.5, 60])
    np.testing.assert_allclose(state.velocity, 0)
    assert state.age == 0 and state.hits == 1

    predicted = kf.predict(state)
    assert predicted.age == 1
    np.testing.assert_allclose(predicted.position, state.position)
    assert np.all(np.diag(predicted.covariance) > np.diag(state.covariance))

def test_update_counts_hits():
    kf = KalmanBoxFilter()
    state = kf.predict(kf.initiate(make_box(100, 200)))
    state = kf.update(state, make_box(102, 200))

    assert state.age == 0
    assert state.hits == 2

def test_confident_detection_pins_the_state():
    kf = KalmanBoxFilter()
    state = kf.predict(kf.initiate(make_box(100, 200)))
    measurement = make_box(107, 203, score=1.0)

    state = kf.update(state, measurement)

    np.testing.assert_allclose(state.position, measurement.rect.to_xyah(), rtol=1e-9, atol=1e-9)

def test_low_score_moves_state_less():
    kf = KalmanBoxFilter()
    prior = kf.predict(kf.initiate(make_box(100, 200)))

    confident = kf.update(prior, make_box(110, 200, score=0.95))
    doubtful = kf.update(prior, make_box(110, 200, score=0.2))

    assert abs(confident.mean[0] - 125) < abs(doubtful.mean[0] - 125)

def test_covariance_stays_positive_definite():
    rng = np.random.default_rng(11)
    kf = KalmanBoxFilter()
    state = kf.initiate(make_box(300, 300))

    for _ in range(10000):
        state = kf.predict(state)
        cx, cy, _, h = state.position
        box = make_box(
            cx - 15 + rng.normal(0, 3),
            cy - 30 + rng.normal(0, 3),
            score=float(rng.uniform(0.0, 0.95)),
        )
        state = kf.update(state, box)

        assert np.allclose(state.covariance, state.covariance.T)
        assert np.linalg.eigvalsh(state.covariance).min() > 0

def test_constant_velocity_converges():
    kf = KalmanBoxFilter()
    state = kf.initiate(make_box(0, 100))

    for frame in range(1, 300):
        state = kf.predict(state)
        state = kf.update(state, make_box(3.0 * frame, 100, frame=frame))

    expected = make_box(3.0 * 299, 100).rect.to_xyah()
    np.testing.assert_allclose(state.position, expected, atol=1e-6)
    assert state.velocity[0] == pytest.approx(3.0, abs=1e-6)

def test_kalman_correct_scalar():
    mean, covariance = kalman_correct([0.0], [[1.0]], [[1.0]], [[1.0]], [2.0])

    assert mean[0] == pytest.approx(1.0)
    assert covariance[0, 0] == pytest.approx(0.5)

def test_squared_mahalanobis_matches_inverse():
    rng = np.random.default_rng(5)
    root = rng.standard_normal((4, 4))
    covariance = root @ root.T + 4 * np.eye(4)
    innovations = rng.standard_normal((6, 4))

    smoothed = covariance + 0.2 * np.diag(np.diag(covariance))
    expected = np.einsum("ij,jk,ik->i", innovations, np.linalg.inv(smoothed), innovations)

    np.testing.assert_allclose(squared_mahalanobis(innovations, covariance, 0.2), expected, rtol=1e-10)

def test_smoothing_shrinks_distances():
    kf_plain = KalmanBoxFilter(MotionConfig(smoothing=0.0))
    kf_smooth = KalmanBoxFilter(MotionConfig(smoothing=0.2))
    state = kf_plain.predict(kf_plain.initiate(make_box(100, 200)))
    box = make_box(120, 210)

    assert kf_smooth.mahalanobis(state, box) < kf_plain.mahalanobis(state, box)

def test_gate():
    kf = KalmanBoxFilter()
    state = kf.predict(kf.initiate(make_box(100, 200)))

    assert kf.gate(state, make_box(101, 200))
    assert not kf.gate(state, make_box(400, 200))

    with pytest.raises(UsageError):
        kf.gate(state, make_box(101, 200), threshold=-1)

    assert kf.gating_distances(state, []).size == 0

def test_freeze_zeroes_velocity():
    kf = KalmanBoxFilter()
    state = kf.initiate(make_box(0, 100))
    for frame in range(1, 10):
        state = kf.update(kf.predict(state), make_box(5.0 * frame, 100, frame=frame))

    frozen = kf.freeze(state, make_box(20, 100))

    np.testing.assert_allclose(frozen.position, make_box(20, 100).rect.to_xyah())
    np.testing.assert_allclose(frozen.velocity, 0)
    np.testing.assert_allclose(frozen.covariance, state.covariance)

def test_gating_matrix_rows_match_single_state():
    kf = KalmanBoxFilter()
    states = [
        kf.predict(kf.initiate(make_box(100, 200))),
        kf.predict(kf.predict(kf.initiate(make_box(300, 220, h=80)))),
    ]
    boxes = [make_box(102, 201), make_box(305, 230, h=78), make_box(900, 500)]

    matrix = kf.gating_matrix(states, boxes)

    assert matrix.shape == (2, 3)
    for row, state in enumerate(states):
        expected = [kf.mahalanobis(state, box) for box in boxes]
        np.testing.assert_allclose(matrix[row], expected, rtol=1e-9)

    assert kf.gating_matrix(states, []).shape == (2, 0)
    assert kf.gating_matrix([], boxes).shape == (0, 3)

@pytest.mark.parametrize("offset", [(50.0, 0.0), (-40.0, 120.0), (300.0, 250.0)])
def test_mahalanobis_ignores_translation(offset):
    kf = KalmanBoxFilter()
    dx, dy = offset

    state = kf.predict(kf.initiate(make_box(100, 200)))
    shifted_state = kf.predict(kf.initiate(make_box(100 + dx, 200 + dy)))

    distance = kf.mahalanobis(state, make_box(110, 195))
    shifted = kf.mahalanobis(shifted_state, make_box(110 + dx, 195 + dy))

    assert shifted == pytest.approx(distance, rel=1e-9)
