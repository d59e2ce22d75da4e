import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from boundaryshape.detection import Hypothesis
from boundaryshape.estimator import BoundaryShapeModel


@pytest.fixture(scope="module")
def fitted(disc_split):
    train, _ = disc_split
    est = BoundaryShapeModel(iterations=5)
    return est.fit([s.image for s in train], [s.mask for s in train])


def test_get_set_params_roundtrip():
    est = BoundaryShapeModel(t=0.8, lambda2=0.3)
    params = est.get_params()
    assert params["t"] == 0.8
    assert params["lambda2"] == 0.3
    est2 = BoundaryShapeModel().set_params(**params)
    assert est2.get_params() == params


def test_clone_unfits():
    est = BoundaryShapeModel()
    c = clone(est)
    assert not hasattr(c, "model_")
    assert c.get_params() == est.get_params()


def test_unfitted_predict_raises():
    with pytest.raises(NotFittedError):
        BoundaryShapeModel().predict([np.zeros((32, 32, 3), np.uint8)])
    with pytest.raises(NotFittedError):
        BoundaryShapeModel().transform([np.zeros((32, 32, 3), np.uint8)])


def test_fit_validates_inputs():
    est = BoundaryShapeModel()
    with pytest.raises(ValueError):
        est.fit([], [])
    img = np.zeros((48, 48, 3), np.uint8)
    with pytest.raises(ValueError):
        est.fit([img], None)
    with pytest.raises(ValueError):
        est.fit([img], [])


def test_fit_sets_model_attributes(fitted):
    assert hasattr(fitted, "model_")
    assert fitted.n_codewords_ == len(fitted.model_.codewords)
    assert fitted.n_codewords_ > 0


def test_predict_shapes(fitted, disc_split):
    _, test = disc_split
    out = fitted.predict([s.image for s in test])
    assert len(out) == len(test)
    for hyps in out:
        assert all(isinstance(h, Hypothesis) for h in hyps)


def test_transform_masks(fitted, disc_split):
    _, test = disc_split
    masks = fitted.transform([s.image for s in test])
    for m, s in zip(masks, test):
        assert m.shape == s.image.shape[:2]
        assert m.dtype == np.uint8


def test_score_high_on_synthetic(fitted, disc_split):
    _, test = disc_split
    sc = fitted.score([s.image for s in test], [s.mask for s in test])
    assert sc >= 0.75
