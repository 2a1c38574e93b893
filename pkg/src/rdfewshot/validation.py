"""Input validation helpers for the estimator-facing API."""

from __future__ import annotations

import numpy as np

from .exceptions import ConfigError


def check_frame_stack(X) -> np.ndarray:
    """Coerce to a complex (n, chirps, samples) stack; accepts a single frame."""
    X = np.asarray(X)
    if X.ndim == 2:
        X = X[None, :, :]
    if X.ndim != 3:
        raise ConfigError(f"expected (n, chirps, samples) raw frames, got shape {X.shape}")
    if not np.iscomplexobj(X):
        X = X.astype(np.complex128)
    return X


def check_image_batch(X, channels: int | None = None) -> np.ndarray:
    """Coerce to float32 (n, c, h, w); accepts a single (c, h, w) image."""
    X = np.asarray(X, dtype=np.float32)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4:
        raise ConfigError(f"expected (n, channels, h, w) images, got shape {X.shape}")
    if channels is not None and X.shape[1] != channels:
        raise ConfigError(f"expected {channels} channels, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise ConfigError("image batch contains non-finite values")
    return X


def check_labels(y, n_samples: int) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != n_samples:
        raise ConfigError(f"labels must be 1-D with {n_samples} entries, got shape {y.shape}")
    return y


def check_rng(seed_or_rng) -> np.random.Generator:
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)
