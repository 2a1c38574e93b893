"""scikit-learn style wrappers around the pipeline.

``RangeDopplerTransformer`` turns stacks of raw dechirped frames into
normalized maps or network-ready tensors.  ``FewShotClassifier`` is the
episode-level lazy classifier: ``fit`` ingests the support set (embedding it
once), ``predict``/``decision_function`` score queries with the
local-descriptor cosine metric or the prototype baseline.  Both compose with
sklearn pipelines and honor ``get_params``/``set_params``/``clone``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.exceptions import NotFittedError

from .exceptions import ConfigError
from .model import FewShotNetwork, ModelConfig, class_score
from .nn.tensor import no_grad
from .radar import ChirpConfig, RawFrame, frame_to_rdmap, resize_bilinear
from .validation import check_frame_stack, check_image_batch, check_labels


class RangeDopplerTransformer(TransformerMixin, BaseEstimator):
    """Stateless transform: raw frames -> normalized range-Doppler maps.

    Parameters
    ----------
    config : ChirpConfig or None
        Radar geometry; defaults to the package's standard chirp.
    output : str
        "map" for (n, range_bins, doppler_bins) float maps, "network" for
        (n, channels, target_h, target_w) tensors ready for the embedder.
    window : str
        "rect" (default) or "hann" applied before both FFTs.
    """

    def __init__(self, config=None, output: str = "map", window: str = "rect",
                 target_hw=(84, 84), channels: int = 3):
        self.config = config
        self.output = output
        self.window = window
        self.target_hw = target_hw
        self.channels = channels

    def fit(self, X, y=None):
        if self.output not in ("map", "network"):
            raise ConfigError(f"output must be 'map' or 'network', got {self.output!r}")
        return self

    def transform(self, X):
        self.fit(X)
        config = self.config or ChirpConfig()
        frames = check_frame_stack(X)
        maps = []
        for i in range(frames.shape[0]):
            rdmap = frame_to_rdmap(RawFrame(frames[i], config), window=self.window)
            maps.append(rdmap.values)
        maps = np.stack(maps)
        if self.output == "map":
            return maps
        h, w = self.target_hw
        out = np.empty((maps.shape[0], self.channels, h, w), dtype=np.float32)
        for i in range(maps.shape[0]):
            resized = resize_bilinear(maps[i], h, w).astype(np.float32)
            out[i] = resized[None, :, :]
        return out


class FewShotClassifier(ClassifierMixin, BaseEstimator):
    """Episode-level few-shot classifier over embedded local descriptors.

    ``fit(X, y)`` embeds the support images and pools their descriptors per
    class; ``predict(X)`` scores queries by summed top-k cosine similarity
    (or nearest prototype).  A trained ``network`` can be injected; otherwise
    a freshly initialized one is built from the constructor arguments, which
    is useful for random-embedding baselines and tests.
    """

    def __init__(self, network: FewShotNetwork | None = None, metric: str = "knn",
                 knn_k: int = 3, se_enabled: bool = True, seed: int = 0,
                 batch_size: int = 64):
        self.network = network
        self.metric = metric
        self.knn_k = knn_k
        self.se_enabled = se_enabled
        self.seed = seed
        self.batch_size = batch_size

    def _build_network(self) -> FewShotNetwork:
        if self.network is not None:
            return self.network
        config = ModelConfig(metric=self.metric, knn_k=self.knn_k,
                             se_enabled=self.se_enabled)
        return FewShotNetwork(config, seed=self.seed, batch_size=self.batch_size)

    def _descriptors(self, X: np.ndarray):
        # public API is channels-first; the network runs channels-last
        nhwc = np.ascontiguousarray(X.transpose(0, 2, 3, 1))
        with no_grad():
            features = self.network_.represent(nhwc, train=False)
        b, h, w, d = features.data.shape
        return features.data.reshape(b, h * w, d), (h * w, d)

    def fit(self, X, y):
        X = check_image_batch(X)
        y = check_labels(y, X.shape[0])
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        if self.classes_.size < 2:
            raise ConfigError("need at least 2 classes in the support set")
        self.network_ = self._build_network()
        desc, (m, d) = self._descriptors(X)
        self.descriptor_grid_ = (m, d)
        self.pools_ = [desc[y_idx == c].reshape(-1, d)
                       for c in range(self.classes_.size)]
        k = self.network_.config.knn_k if self.network is not None else self.knn_k
        for c, pool in enumerate(self.pools_):
            if k > pool.shape[0]:
                raise ConfigError(
                    f"k={k} exceeds pool size {pool.shape[0]} of class {self.classes_[c]!r}")
        self.effective_k_ = k
        self.prototypes_ = np.stack([
            desc[y_idx == c].mean(axis=(0, 1)) for c in range(self.classes_.size)])
        return self

    def _check_fitted(self):
        if not hasattr(self, "pools_"):
            raise NotFittedError("FewShotClassifier is not fitted; call fit first")

    def decision_function(self, X):
        self._check_fitted()
        X = check_image_batch(X)
        desc, (m, d) = self._descriptors(X)
        metric = self.network_.config.metric if self.network is not None else self.metric
        scores = np.empty((X.shape[0], self.classes_.size), dtype=np.float64)
        if metric == "prototype":
            gap = desc.mean(axis=1)
            for c in range(self.classes_.size):
                delta = gap - self.prototypes_[c][None, :]
                scores[:, c] = -np.sum(delta * delta, axis=1)
        else:
            for i in range(X.shape[0]):
                for c, pool in enumerate(self.pools_):
                    scores[i, c] = class_score(desc[i], pool, self.effective_k_)
        return scores

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[np.argmax(scores, axis=1)]
