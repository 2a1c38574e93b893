"""sklearn-style wrappers: estimator contract and classification behavior."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from rdfewshot.estimators import FewShotClassifier, RangeDopplerTransformer
from rdfewshot.exceptions import ConfigError
from rdfewshot.model import FewShotNetwork, ModelConfig
from rdfewshot.radar import ChirpConfig
from rdfewshot.synth import line_of_sight_target, synth_frame


@pytest.fixture(scope="module")
def frame_stack(chirp):
    frames = [synth_frame(line_of_sight_target(r, v), chirp, rng_seed=i, snr_db=25.0).samples
              for i, (r, v) in enumerate([(1.8, 0.0), (2.7, 1.0), (4.2, -0.8)])]
    return np.stack(frames)


class TestRangeDopplerTransformer:
    def test_map_output_shape_and_range(self, frame_stack):
        maps = RangeDopplerTransformer().fit_transform(frame_stack)
        assert maps.shape == (3, 256, 256)
        assert maps.min() >= 0.0 and maps.max() <= 1.0

    def test_network_output(self, frame_stack):
        out = RangeDopplerTransformer(output="network").transform(frame_stack)
        assert out.shape == (3, 3, 84, 84)
        assert np.array_equal(out[:, 0], out[:, 1])

    def test_peaks_at_predicted_bins(self, frame_stack, chirp):
        maps = RangeDopplerTransformer(config=chirp).transform(frame_stack)
        r_bin, d_bin = np.unravel_index(maps[1].argmax(), maps[1].shape)
        assert abs(r_bin - chirp.range_bin(2.7)) <= 1
        assert abs(d_bin - chirp.doppler_bin(1.0)) <= 1

    def test_single_frame_accepted(self, frame_stack):
        maps = RangeDopplerTransformer().transform(frame_stack[0])
        assert maps.shape == (1, 256, 256)

    def test_bad_output_mode(self, frame_stack):
        with pytest.raises(ConfigError):
            RangeDopplerTransformer(output="jpeg").transform(frame_stack)

    def test_sklearn_clone_and_params(self):
        t = RangeDopplerTransformer(output="network", window="hann")
        params = t.get_params()
        assert params["window"] == "hann"
        c = clone(t)
        assert c.get_params() == params


def images_for(labels, rng, hw=24):
    out = np.zeros((len(labels), 3, hw, hw), dtype=np.float32)
    centers = {0: (6, 6), 1: (6, 18), 2: (18, 6), 3: (18, 18)}
    yy, xx = np.mgrid[0:hw, 0:hw]
    for i, lab in enumerate(labels):
        cy, cx = centers[int(lab) % 4]
        img = rng.normal(0, 0.04, (hw, hw))
        img += np.exp(-(((yy - cy) ** 2 + (xx - cx) ** 2) / 9.0))
        out[i] = np.clip(img, 0, 1)[None]
    return out


class TestFewShotClassifier:
    def test_fit_predict_blobs(self, rng):
        sup_y = np.repeat([0, 1, 2], 3)
        clf = FewShotClassifier(seed=0).fit(images_for(sup_y, rng), sup_y)
        qry_y = np.array([2, 0, 1, 1])
        pred = clf.predict(images_for(qry_y, rng))
        assert np.array_equal(pred, qry_y)

    def test_string_labels_round_trip(self, rng):
        sup_y = np.repeat(["walk", "sit"], 3)
        clf = FewShotClassifier(seed=0, knn_k=2).fit(
            images_for(np.repeat([0, 1], 3), rng), sup_y)
        assert set(clf.classes_) == {"walk", "sit"}
        pred = clf.predict(images_for([1, 0], rng))
        assert set(pred) <= {"walk", "sit"}

    def test_decision_function_shape(self, rng):
        sup_y = np.repeat([0, 1], 4)
        clf = FewShotClassifier(seed=1).fit(images_for(sup_y, rng), sup_y)
        scores = clf.decision_function(images_for([0, 1, 0], rng))
        assert scores.shape == (3, 2)

    def test_not_fitted(self, rng):
        with pytest.raises(NotFittedError):
            FewShotClassifier().predict(images_for([0], rng))

    def test_k_exceeding_pool_rejected(self, rng):
        sup_y = np.array([0, 1])
        # 1 support image -> pool m descriptors; absurd k must be rejected
        clf = FewShotClassifier(knn_k=10_000)
        with pytest.raises(ConfigError):
            clf.fit(images_for(sup_y, rng), sup_y)

    def test_prototype_metric(self, rng):
        sup_y = np.repeat([0, 1, 2], 3)
        clf = FewShotClassifier(metric="prototype", seed=0).fit(
            images_for(sup_y, rng), sup_y)
        pred = clf.predict(images_for([1, 2], rng))
        assert np.array_equal(pred, [1, 2])

    def test_injected_network_config_wins(self, rng):
        net = FewShotNetwork(ModelConfig(metric="prototype"), seed=3)
        sup_y = np.repeat([0, 1], 3)
        clf = FewShotClassifier(network=net).fit(images_for(sup_y, rng), sup_y)
        scores = clf.decision_function(images_for([0], rng))
        assert (scores <= 0).all()  # prototype scores are negative distances

    def test_sklearn_clone(self):
        clf = FewShotClassifier(knn_k=5, metric="prototype", seed=9)
        c = clone(clf)
        assert c.get_params()["knn_k"] == 5
        assert c.get_params()["metric"] == "prototype"

    def test_min_two_classes(self, rng):
        with pytest.raises(ConfigError):
            FewShotClassifier().fit(images_for([0, 0], rng), np.array([0, 0]))
