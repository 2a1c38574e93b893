"""FMCW range-Doppler processing.

A raw frame of dechirped samples (`chirps_per_frame` x `samples_per_chirp`,
complex) is turned into a normalized range-Doppler map by an FFT along fast
time (range), an FFT along slow time (Doppler, shifted so zero velocity sits
in the center column), a magnitude, and a min-max normalization.  The
resulting map is a float matrix indexed ``[range_bin, doppler_bin]`` with
values in [0, 1].

All functions here are pure; batch processing may run them concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from .exceptions import ConfigError, DegenerateInputError

SPEED_OF_LIGHT = 299792458.0

_WINDOWS = ("rect", "hann")


def _window(kind: str, n: int) -> Optional[np.ndarray]:
    if kind == "rect":
        return None
    if kind == "hann":
        return np.hanning(n)
    raise ConfigError(f"unknown window {kind!r}, expected one of {_WINDOWS}")


@dataclass(frozen=True)
class ChirpConfig:
    """Linear-FM chirp and frame geometry.

    The default values describe a 2 GHz sweep starting at 78 GHz with a
    102.4 us chirp sampled at 2.5 MHz, i.e. 256 samples per chirp and 256
    chirps per frame.

    ``slope`` is derived as ``bandwidth / chirp_duration`` when not given
    explicitly; an explicit value must agree with that ratio to within 1e-9
    relative.
    """

    bandwidth: float = 2.0e9
    carrier_start: float = 78.0e9
    chirp_duration: float = 102.4e-6
    sample_rate: float = 2.5e6
    samples_per_chirp: int = 256
    chirps_per_frame: int = 256
    slope: float = field(default=0.0)

    def __post_init__(self):
        if self.slope == 0.0:
            object.__setattr__(self, "slope", self.bandwidth / self.chirp_duration)
        for name in ("bandwidth", "carrier_start", "chirp_duration", "sample_rate",
                     "samples_per_chirp", "chirps_per_frame", "slope"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"ChirpConfig.{name} must be strictly positive")
        implied = self.bandwidth / self.chirp_duration
        if abs(self.slope - implied) > 1e-9 * implied:
            raise ConfigError(
                f"slope {self.slope:g} inconsistent with bandwidth/chirp_duration {implied:g}")
        implied_samples = self.sample_rate * self.chirp_duration
        if abs(self.samples_per_chirp - implied_samples) > 1.0:
            raise ConfigError(
                f"samples_per_chirp {self.samples_per_chirp} inconsistent with "
                f"sample_rate*chirp_duration {implied_samples:.2f}")

    @property
    def carrier_center(self) -> float:
        """Mid-sweep carrier; the effective frequency for Doppler shifts."""
        return self.carrier_start + 0.5 * self.bandwidth

    @property
    def frame_duration(self) -> float:
        return self.chirps_per_frame * self.chirp_duration

    def beat_frequency(self, range_m: float) -> float:
        """Dechirped beat frequency 2*slope*R/c for a scatterer at range R."""
        return 2.0 * self.slope * range_m / SPEED_OF_LIGHT

    def doppler_frequency(self, closing_velocity: float) -> float:
        """Doppler shift 2*v*fc/c; positive for an approaching scatterer."""
        return 2.0 * closing_velocity * self.carrier_center / SPEED_OF_LIGHT

    def range_bin(self, range_m: float) -> int:
        """Fast-time FFT bin hit by a scatterer at range R."""
        return int(round(self.beat_frequency(range_m) * self.samples_per_chirp
                         / self.sample_rate))

    def doppler_bin(self, closing_velocity: float) -> int:
        """Doppler bin (offset applied to the center bin) for closing velocity v."""
        offset = int(round(self.doppler_frequency(closing_velocity)
                           * self.chirps_per_frame * self.chirp_duration))
        return self.chirps_per_frame // 2 + offset

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class MapMeta:
    """Provenance attached to one range-Doppler map."""

    class_label: str = ""
    aspect_deg: float = 0.0
    subject_id: int = 0
    distance_m: float = 0.0
    frame_index: int = 0

    def to_dict(self) -> dict:
        return {"class": self.class_label, "aspect_deg": self.aspect_deg,
                "subject_id": self.subject_id, "distance_m": self.distance_m,
                "frame_index": self.frame_index}

    @classmethod
    def from_dict(cls, d: dict) -> "MapMeta":
        return cls(class_label=d.get("class", ""),
                   aspect_deg=float(d.get("aspect_deg", 0.0)),
                   subject_id=int(d.get("subject_id", 0)),
                   distance_m=float(d.get("distance_m", 0.0)),
                   frame_index=int(d.get("frame_index", 0)))


@dataclass
class RawFrame:
    """One frame of dechirped samples, shape [chirps_per_frame, samples_per_chirp]."""

    samples: np.ndarray
    config: ChirpConfig

    def __post_init__(self):
        expected = (self.config.chirps_per_frame, self.config.samples_per_chirp)
        if self.samples.shape != expected:
            raise ConfigError(
                f"frame shape {self.samples.shape} does not match config {expected}")
        if not np.iscomplexobj(self.samples):
            self.samples = self.samples.astype(np.complex128)


@dataclass
class RangeDopplerMap:
    """Normalized magnitude matrix indexed [range_bin, doppler_bin], plus metadata."""

    values: np.ndarray
    meta: MapMeta

    @property
    def peak_bins(self) -> tuple:
        """(range_bin, doppler_bin) of the strongest cell."""
        idx = int(np.argmax(self.values))
        return np.unravel_index(idx, self.values.shape)


def range_fft(frame: RawFrame, window: str = "rect") -> np.ndarray:
    """FFT each chirp along its fast-time axis.

    Output has the same shape and orientation as the input frame:
    rows are chirps, columns are range bins.
    """
    samples = frame.samples
    w = _window(window, samples.shape[1])
    if w is not None:
        samples = samples * w[None, :]
    return np.fft.fft(samples, axis=1)


def doppler_fft(range_profile: np.ndarray, window: str = "rect") -> np.ndarray:
    """FFT along the slow-time (chirp) axis, shifted so zero Doppler is centered.

    Rows become Doppler bins (center row = zero velocity), columns stay
    range bins.
    """
    rp = np.asarray(range_profile)
    if rp.ndim != 2:
        raise ConfigError(f"range profile must be 2-D, got shape {rp.shape}")
    w = _window(window, rp.shape[0])
    if w is not None:
        rp = rp * w[:, None]
    return np.fft.fftshift(np.fft.fft(rp, axis=0), axes=0)


def normalize(x: np.ndarray) -> np.ndarray:
    """Map a magnitude matrix onto [0, 1] via (X - min(X)) / max(X).

    The divisor is max(X), not max - min, so the largest output value is
    (max - min) / max.  A constant positive matrix maps to all zeros.

    Raises DegenerateInputError when max(X) <= 0 (all-zero or non-positive
    input carries no signal to normalize).
    """
    x = np.asarray(x, dtype=np.float64)
    mx = float(x.max())
    if mx <= 0.0:
        raise DegenerateInputError(
            f"cannot normalize matrix with max {mx:g}; need a positive maximum")
    return (x - float(x.min())) / mx


def frame_to_rdmap(frame: RawFrame, meta: MapMeta | None = None,
                   window: str = "rect") -> RangeDopplerMap:
    """Full pipeline: range FFT, Doppler FFT, magnitude, normalization.

    The returned map is transposed relative to the raw frame so that axis 0
    indexes range bins and axis 1 indexes Doppler bins (zero velocity in the
    center column).
    """
    spectrum = doppler_fft(range_fft(frame, window=window), window=window)
    magnitude = np.abs(spectrum).T
    values = normalize(magnitude).astype(np.float32)
    return RangeDopplerMap(values=values, meta=meta or MapMeta())


def _axis_coords(n_out: int, n_in: int) -> tuple:
    """Align-corners sample positions: output i maps to i*(n_in-1)/(n_out-1)."""
    if n_out == 1:
        pos = np.zeros(1)
    else:
        pos = np.linspace(0.0, n_in - 1.0, n_out)
    lo = np.floor(pos).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    return lo, hi, frac


def resize_bilinear(values: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Align-corners bilinear resize of a 2-D matrix.

    Identity when target equals the input size; output values are convex
    combinations of inputs, so any input range is preserved.
    """
    if target_h <= 0 or target_w <= 0:
        raise ConfigError("resize target dimensions must be positive")
    v = np.asarray(values, dtype=np.float64)
    if v.shape == (target_h, target_w):
        return v.copy()
    y0, y1, wy = _axis_coords(target_h, v.shape[0])
    x0, x1, wx = _axis_coords(target_w, v.shape[1])
    top = v[y0][:, x0] * (1.0 - wx)[None, :] + v[y0][:, x1] * wx[None, :]
    bot = v[y1][:, x0] * (1.0 - wx)[None, :] + v[y1][:, x1] * wx[None, :]
    return top * (1.0 - wy)[:, None] + bot * wy[:, None]


def resize_for_network(rdmap: RangeDopplerMap | np.ndarray, target_h: int = 84,
                       target_w: int = 84, channels: int = 3) -> np.ndarray:
    """Resize a normalized map and replicate it across channels.

    Returns a float32 array of shape (channels, target_h, target_w) with
    values still inside [0, 1].
    """
    values = rdmap.values if isinstance(rdmap, RangeDopplerMap) else rdmap
    if channels <= 0:
        raise ConfigError("channels must be positive")
    resized = resize_bilinear(values, target_h, target_w).astype(np.float32)
    return np.broadcast_to(resized, (channels, target_h, target_w)).copy()
