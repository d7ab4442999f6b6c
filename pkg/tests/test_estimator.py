import numpy as np
import pytest
from sklearn.base import clone

from boostsphere.estimator import SphereRegistration, check_sphere_points
from boostsphere.losses import LossWeights
from boostsphere.mesh import icosphere


def unit(rng, n):
    p = rng.normal(size=(n, 3))
    return p / np.linalg.norm(p, axis=1, keepdims=True)


def test_params_and_clone():
    est = SphereRegistration(rings=6, weights="task=3,bm=1", max_iters=10)
    params = est.get_params()
    assert params["rings"] == 6 and params["weights"] == "task=3,bm=1"
    other = clone(est)
    assert other.get_params() == params and other is not est
    est.set_params(step_size=5e-3)
    assert est.step_size == 5e-3
    assert est._weights() == LossWeights(task=3, bm=1)
    assert SphereRegistration(weights={"bc": 0.5})._weights().bc == 0.5


def test_input_validation():
    with pytest.raises(ValueError, match="3 columns"):
        check_sphere_points(np.zeros((4, 2)))
    with pytest.raises(ValueError, match=r"X\[1\] is not on the unit sphere"):
        check_sphere_points([[1, 0, 0], [2, 0, 0]])
    est = SphereRegistration(rings=4, max_iters=1)
    with pytest.raises(ValueError, match="same number"):
        est.fit(unit(np.random.default_rng(0), 4), unit(np.random.default_rng(1), 3))


def test_transform_before_fit():
    from sklearn.exceptions import NotFittedError
    with pytest.raises(NotFittedError):
        SphereRegistration().transform([[1.0, 0, 0]])


def test_fit_identity_landmarks_gives_identity_transform():
    rng = np.random.default_rng(2)
    p = unit(rng, 10)
    est = SphereRegistration(rings=6, max_iters=100).fit(p)
    assert est.n_folds_ == 0 and est.loss_ < 1e-6
    q = unit(rng, 50)
    assert np.abs(est.transform(q) - q).max() < 1e-9
    mesh, mu = est.deform_mesh(icosphere(2))
    assert np.abs(mesh.vertices - icosphere(2).vertices).max() < 1e-9
    assert mu.max() < 1e-6


def test_fit_moves_landmarks_towards_targets():
    rng = np.random.default_rng(3)
    p = unit(rng, 6)
    q = p + 0.08 * rng.normal(size=p.shape)
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    est = SphereRegistration(rings=8, max_iters=300).fit(p, q)
    before = np.mean(np.sum((p - q) ** 2, axis=1))
    after = np.mean(np.sum((est.transform(p) - q) ** 2, axis=1))
    assert after < 0.5 * before
    assert est.n_folds_ == 0
    out = est.transform(unit(rng, 20))
    assert np.allclose(np.linalg.norm(out, axis=1), 1)
