"""Synthetic radar echoes from articulated point-scatterer motion models.

Each motion class is a small set of scatterers (torso, head, limbs) with
parametric trajectories in a body-fixed frame: x points toward the radar at
aspect 0, y to the subject's left, z up, origin on the ground under the body
center.  The radar sits at a configurable horizontal distance and height, so
changing the viewing aspect simply moves the radar; radial ranges and
closing velocities follow from exact 3-D geometry.  Motions that oscillate
along the 0-degree line of sight therefore lose most of their Doppler
signature when viewed from 90 degrees, which is the domain gap the
downstream classifier has to survive.

The dechirped signal of one chirp is ``amp * exp(j*(2*pi*(2*mu*R/c)*t +
phi))`` where ``R`` is the scatterer range at the chirp start and the
slow-time phase ``phi = -4*pi*f_center*R/c`` tracks the carrier phase of the
round trip.  For a constant closing velocity v this phase advances by
exactly ``2*pi*f_d*T_chirp`` per chirp with ``f_d = 2*v*f_center/c``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .exceptions import ConfigError
from .radar import (SPEED_OF_LIGHT, ChirpConfig, MapMeta, RawFrame,
                    frame_to_rdmap)
from . import rdm_io

RADAR_HEIGHT_M = 1.2
DEFAULT_FRAME_PERIOD_S = 0.1
REFERENCE_DISTANCE_M = 1.2


def radar_position(aspect_deg: float, distance_m: float,
                   height_m: float = RADAR_HEIGHT_M) -> np.ndarray:
    theta = math.radians(aspect_deg)
    return np.array([distance_m * math.cos(theta),
                     distance_m * math.sin(theta), height_m])


@dataclass(frozen=True)
class Oscillation:
    """One sinusoidal displacement component along a fixed body-frame axis."""

    axis: tuple
    amplitude_m: float
    freq_hz: float
    phase_rad: float = 0.0


@dataclass(frozen=True)
class Trajectory:
    """Parametric body-frame position: base + drift*t + sinusoids, optionally
    spun about the vertical axis (for torso rotation)."""

    base: tuple
    drift: tuple = (0.0, 0.0, 0.0)
    oscillations: tuple = ()
    spin_hz: float = 0.0
    spin_phase: float = 0.0

    def position(self, t: np.ndarray) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        base = np.asarray(self.base, dtype=np.float64)
        if self.spin_hz != 0.0:
            ang = 2.0 * math.pi * self.spin_hz * t + self.spin_phase
            ca, sa = np.cos(ang), np.sin(ang)
            pos = np.empty((t.size, 3))
            pos[:, 0] = ca * base[0] - sa * base[1]
            pos[:, 1] = sa * base[0] + ca * base[1]
            pos[:, 2] = base[2]
        else:
            pos = np.broadcast_to(base, (t.size, 3)).copy()
        pos += np.outer(t, np.asarray(self.drift, dtype=np.float64))
        for osc in self.oscillations:
            s = osc.amplitude_m * np.sin(2.0 * math.pi * osc.freq_hz * t + osc.phase_rad)
            pos += np.outer(s, np.asarray(osc.axis, dtype=np.float64))
        return pos

    def velocity(self, t: np.ndarray) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        vel = np.broadcast_to(np.asarray(self.drift, dtype=np.float64),
                              (t.size, 3)).copy()
        if self.spin_hz != 0.0:
            base = np.asarray(self.base, dtype=np.float64)
            w = 2.0 * math.pi * self.spin_hz
            ang = w * t + self.spin_phase
            ca, sa = np.cos(ang), np.sin(ang)
            vel[:, 0] += w * (-sa * base[0] - ca * base[1])
            vel[:, 1] += w * (ca * base[0] - sa * base[1])
        for osc in self.oscillations:
            dv = (osc.amplitude_m * 2.0 * math.pi * osc.freq_hz
                  * np.cos(2.0 * math.pi * osc.freq_hz * t + osc.phase_rad))
            vel += np.outer(dv, np.asarray(osc.axis, dtype=np.float64))
        return vel


@dataclass(frozen=True)
class Scatterer:
    trajectory: Trajectory
    amplitude: float

    def __post_init__(self):
        if self.amplitude < 0:
            raise ConfigError("scatterer amplitude must be non-negative")


@dataclass(frozen=True)
class ScattererState:
    """Instantaneous radial state of one scatterer as the radar sees it."""

    range_m: float
    closing_velocity: float
    amplitude: float

    def __post_init__(self):
        if self.range_m <= 0:
            raise ConfigError("scatterer range must be positive")
        if self.amplitude < 0:
            raise ConfigError("scatterer amplitude must be non-negative")

    def doppler_frequency(self, config: ChirpConfig) -> float:
        return config.doppler_frequency(self.closing_velocity)


@dataclass(frozen=True)
class MotionModel:
    """A labeled articulated target under a particular viewing geometry."""

    class_label: str
    scatterers: tuple
    aspect_deg: float = 0.0
    subject_scale: float = 1.0
    base_distance: float = REFERENCE_DISTANCE_M
    origin_offset: tuple = (0.0, 0.0, 0.0)
    valid_interval: tuple | None = None

    def __post_init__(self):
        if not 0.0 <= self.aspect_deg < 360.0:
            raise ConfigError("aspect_deg must lie in [0, 360)")
        if self.base_distance <= 0:
            raise ConfigError("base_distance must be positive")

    def radar(self) -> np.ndarray:
        return radar_position(self.aspect_deg, self.base_distance)

    def check_interval(self, t0: float, t1: float) -> None:
        if self.valid_interval is not None:
            lo, hi = self.valid_interval
            if t0 < lo or t1 > hi:
                raise ConfigError(
                    f"trajectories of {self.class_label!r} are only defined on "
                    f"[{lo:g}, {hi:g}], requested [{t0:g}, {t1:g}]")

    def states(self, t: float) -> list:
        """Instantaneous ScattererState list at time t (exact geometry)."""
        radar = self.radar()
        offset = np.asarray(self.origin_offset)
        out = []
        for sc in self.scatterers:
            pos = sc.trajectory.position(np.array([t]))[0] + offset
            vel = sc.trajectory.velocity(np.array([t]))[0]
            delta = radar - pos
            rng = float(np.linalg.norm(delta))
            closing = float(np.dot(vel, delta) / rng)
            out.append(ScattererState(range_m=rng, closing_velocity=closing,
                                      amplitude=sc.amplitude))
        return out

    def total_amplitude(self) -> float:
        return sum(sc.amplitude for sc in self.scatterers)


def line_of_sight_target(range_m: float, closing_velocity: float,
                         amplitude: float = 1.0, aspect_deg: float = 0.0,
                         base_distance: float = REFERENCE_DISTANCE_M,
                         label: str = "point") -> MotionModel:
    """Single scatterer placed on the radar line of sight with an exactly
    linear range history R(t) = range_m - closing_velocity * t.

    Used by analytic tests: the range-Doppler peak is predictable in closed
    form from the chirp configuration.
    """
    radar = radar_position(aspect_deg, base_distance)
    toward_body = np.array([0.0, 0.0, radar[2]]) - radar
    u = toward_body / np.linalg.norm(toward_body)
    base = radar + u * range_m
    drift = -u * closing_velocity
    traj = Trajectory(base=tuple(base), drift=tuple(drift))
    return MotionModel(class_label=label, scatterers=(Scatterer(traj, amplitude),),
                       aspect_deg=aspect_deg, base_distance=base_distance)


# ---------------------------------------------------------------------------
# Motion class roster
# ---------------------------------------------------------------------------

def _u(phase_rng) -> float:
    return float(phase_rng.uniform(0.0, 2.0 * math.pi)) if phase_rng is not None else 0.0


def _torso_parts(rng, sway: float = 0.012) -> list:
    ph = _u(rng)
    sway_osc = (Oscillation((1, 0, 0), sway, 0.35, ph),)
    return [
        Scatterer(Trajectory((0.0, 0.0, 1.00), oscillations=sway_osc), 0.8),
        Scatterer(Trajectory((0.0, 0.0, 1.62), oscillations=sway_osc), 0.35),
        Scatterer(Trajectory((0.0, 0.22, 1.45), oscillations=sway_osc), 0.25),
        Scatterer(Trajectory((0.0, -0.22, 1.45), oscillations=sway_osc), 0.25),
    ]


def _arm_chain(side, oscillations_for, amplitudes=(0.18, 0.28, 0.42, 0.55, 0.7)):
    """Five scatterers from shoulder to raised hand tip; motion amplitude
    grows along the chain, so every frame paints a line from the (nearly
    static) shoulder out to the fast hand."""
    parts = []
    n = len(amplitudes)
    for i, amp in enumerate(amplitudes):
        frac = (i + 1) / n
        base = (0.08 + 0.20 * frac, side * (0.24 + 0.10 * frac), 1.42 - 0.28 * frac)
        parts.append(Scatterer(Trajectory(base, oscillations=oscillations_for(frac)),
                               amp))
    return parts


def _hanging_arm(side, extra_osc=()):
    """A resting arm at the subject's side; gives every posture its own
    stable range/height structure."""
    parts = []
    for frac, amp in ((0.35, 0.15), (0.7, 0.22), (1.0, 0.3)):
        base = (0.02 + 0.03 * frac, side * (0.26 + 0.08 * frac), 1.38 - 0.52 * frac)
        oscs = tuple(extra_osc(frac)) if callable(extra_osc) else tuple(extra_osc)
        parts.append(Scatterer(Trajectory(base, oscillations=oscs), amp))
    return parts


def _standing(rng):
    return _torso_parts(rng) + _hanging_arm(-1.0) + _hanging_arm(1.0)


def _squatting(rng):
    # whole body bobs; slight forward lean couples the vertical motion into
    # the 0-degree line of sight as real squats do
    ph = _u(rng)
    def bob(scale):
        return (Oscillation((0, 0, 1), 0.30 * scale, 0.6, ph),
                Oscillation((1, 0, 0), 0.12 * scale, 0.6, ph + 0.3))
    parts = []
    body = _torso_parts(rng, sway=0.008) + _hanging_arm(-1.0) + _hanging_arm(1.0)
    scales = (1.0, 1.0, 0.9, 0.9) + (0.85,) * 6
    for sc, scale in zip(body, scales):
        parts.append(replace(sc, trajectory=replace(
            sc.trajectory, oscillations=sc.trajectory.oscillations + bob(scale))))
    return parts


def _arm_wave(rng, side: float):
    ph = _u(rng)
    freq = 1.1 if side < 0 else 1.25
    def osc(frac):
        return (Oscillation((1, 0, 0), 0.32 * frac, freq, ph - 0.35 * (1 - frac)),)
    return _torso_parts(rng) + _arm_chain(side, osc) + _hanging_arm(-side)


def _arm_vswing(rng, side: float):
    ph = _u(rng)
    freq, reach = (0.8, 0.34) if side < 0 else (0.95, 0.28)
    def osc(frac):
        return (Oscillation((0, 0, -1), reach * frac, freq, ph - 0.3 * (1 - frac)),)
    return _torso_parts(rng) + _arm_chain(side, osc) + _hanging_arm(-side)


def _circle(radius, freq, phase):
    # circle in the x-z plane: two quadrature oscillations
    return (Oscillation((1, 0, 0), radius, freq, phase),
            Oscillation((0, 0, 1), radius, freq, phase + 0.5 * math.pi))


def _arm_circle(rng, side: float):
    ph = _u(rng)
    freq, radius = (0.9, 0.25) if side < 0 else (1.05, 0.21)
    def osc(frac):
        return _circle(radius * frac, freq, ph - 0.3 * (1 - frac))
    return _torso_parts(rng) + _arm_chain(side, osc) + _hanging_arm(-side)


def _both_arms_circle(rng):
    ph = _u(rng)
    parts = _torso_parts(rng)
    for side, phase0 in ((-1.0, ph), (1.0, ph + math.pi)):
        def osc(frac, _p=phase0):
            return _circle(0.22 * frac, 1.0, _p - 0.3 * (1 - frac))
        parts += _arm_chain(side, osc)
    return parts


def _rotating(rng):
    ph = _u(rng)
    parts = [
        Scatterer(Trajectory((0.0, 0.0, 1.00)), 0.8),
        Scatterer(Trajectory((0.0, 0.0, 1.62)), 0.35),
    ]
    for radius, z, amp in ((0.22, 1.45, 0.45), (0.22, 1.45, 0.45),
                           (0.30, 1.05, 0.55), (0.30, 1.05, 0.55),
                           (0.16, 1.25, 0.3), (0.16, 1.25, 0.3)):
        side = 1.0 if len(parts) % 2 else -1.0
        parts.append(Scatterer(Trajectory((0.0, side * radius, z),
                                          spin_hz=0.55, spin_phase=ph), amp))
    return parts


MOTION_BUILDERS = {
    "standing": _standing,
    "squatting": _squatting,
    "wave_right_arm": lambda rng: _arm_wave(rng, side=-1.0),
    "vswing_right_arm": lambda rng: _arm_vswing(rng, side=-1.0),
    "circle_both_arms": _both_arms_circle,
    "circle_right_arm": lambda rng: _arm_circle(rng, side=-1.0),
    "rotating_torso": _rotating,
    "circle_left_arm": lambda rng: _arm_circle(rng, side=1.0),
    "vswing_left_arm": lambda rng: _arm_vswing(rng, side=1.0),
}

DEFAULT_CLASSES = list(MOTION_BUILDERS)


def _scale_scatterer(sc: Scatterer, scale: float) -> Scatterer:
    traj = sc.trajectory
    base = (traj.base[0] * scale, traj.base[1] * scale, traj.base[2] * scale)
    oscs = tuple(replace(o, amplitude_m=o.amplitude_m * scale)
                 for o in traj.oscillations)
    return Scatterer(replace(traj, base=base, oscillations=oscs),
                     sc.amplitude * scale)


def build_motion_model(class_name: str, aspect_deg: float = 0.0,
                       subject_scale: float = 1.0,
                       base_distance: float = REFERENCE_DISTANCE_M,
                       rng: np.random.Generator | None = None) -> MotionModel:
    """Instantiate a roster motion with randomized motion phases.

    Passing the same seeded rng reproduces the same phases; passing None
    yields the canonical zero-phase model.
    """
    if class_name not in MOTION_BUILDERS:
        raise ConfigError(
            f"unknown motion class {class_name!r}; available: {', '.join(MOTION_BUILDERS)}")
    parts = MOTION_BUILDERS[class_name](rng)
    if subject_scale != 1.0:
        parts = [_scale_scatterer(sc, subject_scale) for sc in parts]
    return MotionModel(class_label=class_name, scatterers=tuple(parts),
                       aspect_deg=aspect_deg, subject_scale=subject_scale,
                       base_distance=base_distance)


# ---------------------------------------------------------------------------
# Frame and dataset synthesis
# ---------------------------------------------------------------------------

def synth_frame(model: MotionModel, config: ChirpConfig, t0: float = 0.0,
                rng_seed=0, snr_db: float | None = None,
                reference_distance: float = REFERENCE_DISTANCE_M) -> RawFrame:
    """Render one dechirped frame of the model.

    Scatterer amplitudes are attenuated by (reference_distance /
    base_distance)^2 while the additive noise floor is tied to the
    unattenuated signal power, so moving the subject away degrades the
    effective SNR like a real link budget would.  Deterministic for a given
    seed; ``snr_db=None`` disables noise.
    """
    model.check_interval(t0, t0 + config.frame_duration)
    n_chirps = config.chirps_per_frame
    n_samples = config.samples_per_chirp
    t_fast = np.arange(n_samples) / config.sample_rate
    t_chirp = t0 + np.arange(n_chirps) * config.chirp_duration
    radar = model.radar()
    offset = np.asarray(model.origin_offset, dtype=np.float64)
    attenuation = (reference_distance / model.base_distance) ** 2

    signal = np.zeros((n_chirps, n_samples), dtype=np.complex128)
    for sc in model.scatterers:
        if sc.amplitude == 0.0:
            continue
        pos = sc.trajectory.position(t_chirp) + offset
        rng_m = np.linalg.norm(radar - pos, axis=1)
        beat = 2.0 * config.slope * rng_m / SPEED_OF_LIGHT
        slow_phase = -4.0 * math.pi * config.carrier_center * rng_m / SPEED_OF_LIGHT
        phase = 2.0 * math.pi * np.outer(beat, t_fast) + slow_phase[:, None]
        signal += (sc.amplitude * attenuation) * np.exp(1j * phase)

    if snr_db is not None:
        measured_power = float(np.mean(np.abs(signal) ** 2))
        unattenuated = measured_power / (attenuation ** 2) if attenuation > 0 else 0.0
        noise_power = unattenuated * 10.0 ** (-snr_db / 10.0)
        if noise_power > 0.0:
            rng = np.random.default_rng(rng_seed)
            scale = math.sqrt(noise_power / 2.0)
            noise = rng.normal(0.0, scale, signal.shape) \
                + 1j * rng.normal(0.0, scale, signal.shape)
            signal = signal + noise
    return RawFrame(samples=signal, config=config)


@dataclass(frozen=True)
class SynthSpec:
    """What to generate: class roster, viewing aspects, scenario grid, counts."""

    classes: tuple = tuple(DEFAULT_CLASSES)
    aspects: tuple = (0.0, 90.0)
    frames_per_class_per_aspect: int = 100
    snr_db: float | None = 20.0
    subject_scales: tuple = (1.0,)
    distances: tuple = (REFERENCE_DISTANCE_M,)
    seed: int = 42
    frame_period: float = DEFAULT_FRAME_PERIOD_S
    facing_jitter_deg: float = 4.0
    origin_jitter_m: float = 0.02
    window: str = "rect"

    def __post_init__(self):
        if not self.classes or not self.aspects:
            raise ConfigError("synth spec needs at least one class and one aspect")
        for name in self.classes:
            if name not in MOTION_BUILDERS:
                raise ConfigError(
                    f"unknown motion class {name!r}; available: {', '.join(MOTION_BUILDERS)}")
        if self.frames_per_class_per_aspect <= 0:
            raise ConfigError("frames_per_class_per_aspect must be positive")

    def total_frames(self) -> int:
        return (len(self.classes) * len(self.aspects) * len(self.subject_scales)
                * len(self.distances) * self.frames_per_class_per_aspect)


def _session_rng(seed: int, *key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed,) + tuple(key)))


def synth_dataset(spec: SynthSpec, config: ChirpConfig, out_dir,
                  emit_raw: bool = False) -> dict:
    """Generate the full dataset directory and manifest.

    Frames are organized per (class, aspect); multiple subjects and
    distances are interleaved within a class/aspect directory with distinct
    frame indices and recorded in each sidecar.  Bit-identical for a given
    spec and chirp config.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    counts: dict = {name: {} for name in spec.classes}
    for ci, class_name in enumerate(spec.classes):
        for ai, aspect in enumerate(spec.aspects):
            n_written = 0
            for si, scale in enumerate(spec.subject_scales):
                for di, dist in enumerate(spec.distances):
                    session = _session_rng(spec.seed, ci, ai, si, di)
                    jitter = float(session.uniform(-spec.facing_jitter_deg,
                                                   spec.facing_jitter_deg))
                    model = build_motion_model(
                        class_name, aspect_deg=(aspect + jitter) % 360.0,
                        subject_scale=scale, base_distance=dist, rng=session)
                    for f in range(spec.frames_per_class_per_aspect):
                        frame_rng = _session_rng(spec.seed, ci, ai, si, di, f)
                        origin = frame_rng.normal(0.0, spec.origin_jitter_m, 2)
                        frame_model = replace(model, origin_offset=(origin[0], origin[1], 0.0))
                        frame_index = (si * len(spec.distances) + di) \
                            * spec.frames_per_class_per_aspect + f
                        meta = MapMeta(class_label=class_name, aspect_deg=float(aspect),
                                       subject_id=si, distance_m=float(dist),
                                       frame_index=frame_index)
                        noise_seed = int(frame_rng.integers(0, 2 ** 63 - 1))
                        frame = synth_frame(frame_model, config,
                                            t0=f * spec.frame_period,
                                            rng_seed=noise_seed, snr_db=spec.snr_db)
                        rel = rdm_io.frame_rel_path(meta, ".npy" if emit_raw else ".rdm")
                        if emit_raw:
                            rdm_io.write_raw_frame(out_dir / rel, frame, meta)
                        else:
                            rdm_io.write_rdm(out_dir / rel,
                                             frame_to_rdmap(frame, meta, window=spec.window))
                        n_written += 1
            counts[class_name][f"{aspect:g}"] = n_written
    manifest = {
        "kind": "raw" if emit_raw else "rdm",
        "classes": list(spec.classes),
        "aspects": [float(a) for a in spec.aspects],
        "counts": counts,
        "subjects": list(range(len(spec.subject_scales))),
        "subject_scales": list(spec.subject_scales),
        "distances": [float(d) for d in spec.distances],
        "frames_per_class_per_aspect": spec.frames_per_class_per_aspect,
        "snr_db": spec.snr_db,
        "seed": spec.seed,
        "frame_period": spec.frame_period,
        "chirp_config": config.to_dict(),
    }
    rdm_io.write_manifest(out_dir, manifest)
    return manifest


def preprocess_raw(raw_root, out_root, window: str = "rect") -> dict:
    """Convert a raw-echo dataset into range-Doppler maps (same layout)."""
    raw_root, out_root = Path(raw_root), Path(out_root)
    manifest = rdm_io.read_manifest(raw_root)
    if manifest.get("kind") != "raw":
        raise ConfigError(f"{raw_root}: manifest kind is {manifest.get('kind')!r}, expected 'raw'")
    files = list(rdm_io.iter_dataset_files(raw_root, suffix=".npy"))
    if not files:
        raise ConfigError(f"{raw_root}: no raw .npy frames found")
    for path in files:
        frame, meta = rdm_io.read_raw_frame(path)
        rdmap = frame_to_rdmap(frame, meta, window=window)
        rdm_io.write_rdm(out_root / rdm_io.frame_rel_path(meta), rdmap)
    manifest = dict(manifest)
    manifest["kind"] = "rdm"
    rdm_io.write_manifest(out_root, manifest)
    return manifest
