import math

import numpy as np
import pytest

from hisp.lingauss import (GaussianState, MotionModel, NumericalError, SensorModel,
                           association_probability, innovation_stats, kf_predict, kf_update,
                           mahalanobis, moment_match)

MOTION = MotionModel.constant_velocity(1.0, 5.0)
SENSOR = SensorModel.box_sensor(6.0)


def asym(P):
    return np.abs(P - P.T).max() / max(np.abs(P).max(), 1e-300)


def test_identity_model_leaves_state_unchanged():
    model = MotionModel(np.eye(6), np.zeros((6, 6)))
    s = GaussianState(np.arange(6.0), np.diag(np.arange(1.0, 7.0)))
    out = kf_predict(s, model)
    assert np.array_equal(out.mean, s.mean)
    assert np.array_equal(out.cov, s.cov)


def test_default_prediction_advances_position_by_velocity():
    s = GaussianState(np.array([10.0, 20.0, 1.0, -2.0, 30.0, 60.0]), np.eye(6))
    out = kf_predict(s, MOTION)
    assert out.mean[:2] == pytest.approx([11.0, 18.0])
    assert out.mean[2:] == pytest.approx(s.mean[2:])


def test_prediction_against_dense_matrix_oracle():
    s = GaussianState(np.array([10.0, 20.0, 1.0, -2.0, 30.0, 60.0]), np.eye(6))
    # F and Q written out entry by entry for dt = 1, sigma_v = 5
    F = np.eye(6)
    F[0, 2] = F[1, 3] = 1.0
    q = 25.0
    Q = np.zeros((6, 6))
    for p, v in ((0, 2), (1, 3)):
        Q[p, p] = q / 4
        Q[p, v] = Q[v, p] = q / 2
        Q[v, v] = q
    Q[4, 4] = Q[5, 5] = q
    mean = [sum(F[i, k] * s.mean[k] for k in range(6)) for i in range(6)]
    cov = [[sum(F[i, a] * F[j, b] * s.cov[a, b] for a in range(6) for b in range(6)) + Q[i, j]
            for j in range(6)] for i in range(6)]
    out = kf_predict(s, MOTION)
    assert np.allclose(out.mean, mean, atol=1e-12)
    assert np.allclose(out.cov, cov, atol=1e-12)


def test_zero_innovation_keeps_mean():
    s = GaussianState(np.array([100.0, 50.0, 3.0, 1.0, 40.0, 90.0]), 10.0 * np.eye(6))
    post, _ = kf_update(s, SENSOR.H @ s.mean, SENSOR)
    assert post.mean[[0, 1, 4, 5]] == pytest.approx(s.mean[[0, 1, 4, 5]], abs=1e-12)


def test_uninformative_measurement_keeps_prior():
    s = GaussianState(np.array([100.0, 50.0, 3.0, 1.0, 40.0, 90.0]), 10.0 * np.eye(6))
    loose = SensorModel(SENSOR.H, SENSOR.R * 1e6)
    post, _ = kf_update(s, s.mean[[0, 1, 4, 5]] + 50.0, loose)
    assert np.allclose(post.mean, s.mean, rtol=1e-3)
    assert np.allclose(post.cov, s.cov, rtol=1e-3)


def test_scalar_kalman_closed_form():
    # one position coordinate decoupled from everything else
    p0, r, x0, z = 4.0, 9.0, 2.0, 5.0
    model = SensorModel(np.array([[1.0]]), np.array([[r]]))
    post, S = kf_update(GaussianState([x0], [[p0]]), [z], model)
    k = p0 / (p0 + r)
    assert S[0, 0] == pytest.approx(p0 + r)
    assert post.mean[0] == pytest.approx(x0 + k * (z - x0))
    assert post.cov[0, 0] == pytest.approx((1 - k) * p0)


def test_exact_noiseless_measurements_recover_truth():
    sensor = SensorModel(SENSOR.H, 1e-10 * np.eye(4))
    motion = MotionModel(MOTION.F, 1e-8 * np.eye(6))
    x = np.array([10.0, 10.0, 2.0, -1.0, 30.0, 80.0])
    s = GaussianState(x + np.array([5.0, -5.0, 0.0, 0.0, 3.0, -3.0]), 100.0 * np.eye(6))
    for _ in range(5):
        x = MOTION.F @ x
        s, _ = kf_update(kf_predict(s, motion), SENSOR.H @ x, sensor)
    assert np.allclose(s.mean, x, atol=1e-4)


def test_covariances_stay_symmetric():
    rng = np.random.default_rng(3)
    A = rng.normal(size=(6, 6))
    s = GaussianState(rng.normal(size=6), A @ A.T + np.eye(6))
    for _ in range(20):
        s = kf_predict(s, MOTION)
        assert asym(s.cov) < 1e-9
        s, _ = kf_update(s, SENSOR.H @ s.mean + rng.normal(size=4), SENSOR)
        assert asym(s.cov) < 1e-9


def test_singular_innovation_raises():
    s = GaussianState(np.zeros(6), np.zeros((6, 6)))
    sensor = SensorModel(SENSOR.H, np.zeros((4, 4)))
    with pytest.raises(NumericalError):
        kf_update(s, np.zeros(4), sensor, hypothesis_id=7)


def test_perfect_match_probability_is_one():
    s = GaussianState(np.array([5.0, 6.0, 0.0, 0.0, 7.0, 8.0]), np.zeros((6, 6)))
    assert association_probability(s, SENSOR.H @ s.mean, SENSOR) == 1.0


def test_probability_hand_value():
    # 2-D position sensor with unit noise
    H = np.array([[1.0, 0, 0, 0, 0, 0], [0, 1.0, 0, 0, 0, 0]])
    sensor = SensorModel(H, np.eye(2))
    s = GaussianState(np.zeros(6), np.eye(6))  # S = 2 I, |R|/|S| = 1/4
    z = np.array([2.0, 0.0])  # nu^T S^-1 nu = 4 / 2 = 2
    assert association_probability(s, z, sensor) == pytest.approx(0.5 * math.exp(-1.0), abs=1e-12)
    assert 0.5 * math.exp(-1.0) == pytest.approx(0.18394, abs=1e-5)


def test_probability_bounded_and_monotone_along_ray():
    s = GaussianState(np.array([100.0, 100.0, 0.0, 0.0, 50.0, 100.0]), 30.0 * np.eye(6))
    nu = np.array([1.0, -2.0, 0.5, 0.3])
    _, log_ratio = innovation_stats(s, SENSOR.H @ s.mean, SENSOR)
    bound = math.exp(0.5 * log_ratio)
    values = [association_probability(s, SENSOR.H @ s.mean + a * nu, SENSOR) for a in np.linspace(0, 20, 41)]
    assert values[0] == pytest.approx(bound)
    assert all(v <= bound + 1e-15 for v in values)
    assert all(b < a for a, b in zip(values, values[1:]))


def test_mahalanobis_cases():
    a = GaussianState(np.zeros(6), np.eye(6))
    b = GaussianState(np.array([3.0, 0, 0, 0, 0, 0]), np.eye(6))
    assert mahalanobis(a, a) == 0.0
    assert mahalanobis(a, b) == pytest.approx(3.0)
    c = GaussianState(np.arange(6.0), 2.0 * np.eye(6) + 0.1)
    assert mahalanobis(a, c) == mahalanobis(c, a)


def test_moment_match_keeps_spread():
    a = GaussianState(np.zeros(6), np.eye(6))
    b = GaussianState(np.full(6, 2.0), np.eye(6))
    m = moment_match([1.0, 1.0], [a, b])
    assert m.mean == pytest.approx(np.ones(6))
    assert np.allclose(m.cov, np.eye(6) + np.ones((6, 6)))


def test_model_validation():
    with pytest.raises(ValueError):
        MotionModel.constant_velocity(survival_prob=0.0)
    with pytest.raises(ValueError):
        SensorModel.box_sensor(detection_prob=1.0)
    sensor = SensorModel.box_sensor(detection_prob=0.995)
    with pytest.raises(ValueError):
        sensor.check_against(MOTION)
    assert SensorModel.box_sensor(clutter_mean=0.0).clutter_density == 0.0
