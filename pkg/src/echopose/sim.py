"""Acoustic forward model: room, body and B-format rendering.

Stands in for real recordings: a loudspeaker repeats the swept-sine period
while a 21-joint body moves in a shoebox room. Per pose frame the renderer
sums a direct path (attenuated when body capsules cross the speaker-mic
segment), one point-scatter path per joint, and six first-order image-source
wall reflections, each a gain-scaled fractional delay of the repeating
excitation encoded into B-format as W += g*s, (X,Y,Z) += g*s*arrival_dir.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.io import wavfile

from .errors import DataFormatError
from .motion import N_JOINTS, edge_indices
from .signal import TspSignal, circular_delay

SPEED_OF_SOUND = 343.0


@dataclass(frozen=True)
class Scene:
    """Room geometry, transducer layout and rendering gains."""

    room_dims: tuple[float, float, float] = (7.0, 9.0, 3.0)
    speaker_pos: tuple[float, float, float] = (2.0, 4.5, 1.2)
    mic_pos: tuple[float, float, float] = (5.0, 4.5, 1.2)
    wall_reflectance: float = 0.3
    scatter_gain: float = 0.5
    occlusion_radius: float = 0.15
    occlusion_strength: float = 2.0
    noise_snr_db: float = 20.0
    speed_of_sound: float = SPEED_OF_SOUND
    # diffuse decay tail: each rendered frame is re-emitted at these offsets
    # and gains, smearing energy over the following frames the way classroom
    # reverberation does (cheap stand-in for the multi-bounce field)
    tail_delays_s: tuple[float, ...] = (0.034, 0.071, 0.113, 0.158)
    tail_gains: tuple[float, ...] = (0.45, 0.3, 0.19, 0.11)

    def __post_init__(self):
        for name, pos in (("speaker_pos", self.speaker_pos), ("mic_pos", self.mic_pos)):
            for axis in range(3):
                if not 0.0 < pos[axis] < self.room_dims[axis]:
                    raise ValueError(f"{name} must be strictly inside the room")
        if not 0.0 <= self.wall_reflectance <= 1.0:
            raise ValueError("wall_reflectance must be in [0, 1]")
        if self.scatter_gain < 0:
            raise ValueError("scatter_gain must be non-negative")
        if len(self.tail_delays_s) != len(self.tail_gains):
            raise ValueError("tail delays and gains must pair up")

    @property
    def line_midpoint_xy(self) -> tuple[float, float]:
        return (
            0.5 * (self.speaker_pos[0] + self.mic_pos[0]),
            0.5 * (self.speaker_pos[1] + self.mic_pos[1]),
        )


@dataclass(frozen=True)
class ScatterPath:
    """One propagation path as seen at the microphone."""

    delay: float  # seconds
    gain: float
    arrival_dir: np.ndarray  # unit vector, mic -> apparent source

    def __post_init__(self):
        if abs(np.linalg.norm(self.arrival_dir) - 1.0) > 1e-9:
            raise ValueError("arrival_dir must be unit length")


def validate_pose(pose: np.ndarray, room_dims: tuple[float, float, float]) -> None:
    if pose.shape != (N_JOINTS, 3):
        raise ValueError(f"pose must be ({N_JOINTS}, 3)")
    for axis in range(3):
        if np.any(pose[:, axis] < 0) or np.any(pose[:, axis] > room_dims[axis]):
            raise ValueError("joint outside room bounds")


def _segment_distance(p0, p1, q0, q1) -> float:
    """Minimum distance between segments p0-p1 and q0-q1."""
    u = p1 - p0
    v = q1 - q0
    w = p0 - q0
    a, b, c = u @ u, u @ v, v @ v
    d, e = u @ w, v @ w
    denom = a * c - b * b
    if denom > 1e-12:
        s = np.clip((b * e - c * d) / denom, 0.0, 1.0)
    else:
        s = 0.0
    t = (b * s + e) / c if c > 1e-12 else 0.0
    t = np.clip(t, 0.0, 1.0)
    # re-clamp s against the clamped t
    s = np.clip((b * t - d) / a, 0.0, 1.0) if a > 1e-12 else 0.0
    return float(np.linalg.norm((p0 + s * u) - (q0 + t * v)))


def occlusion_gain(scene: Scene, pose: np.ndarray | None) -> float:
    """exp(-strength * number of body capsules crossing the speaker-mic segment)."""
    if pose is None or len(pose) == 0:
        return 1.0
    validate_pose(pose, scene.room_dims)
    s = np.asarray(scene.speaker_pos)
    m = np.asarray(scene.mic_pos)
    hits = 0
    for i, j in edge_indices():
        if _segment_distance(s, m, pose[i], pose[j]) <= scene.occlusion_radius:
            hits += 1
    return float(np.exp(-scene.occlusion_strength * hits))


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError("zero-length direction")
    return v / n


def enumerate_paths(scene: Scene, pose: np.ndarray | None) -> list[ScatterPath]:
    """Direct path, one scatter path per joint, six first-order wall images."""
    s = np.asarray(scene.speaker_pos, dtype=np.float64)
    m = np.asarray(scene.mic_pos, dtype=np.float64)
    c = scene.speed_of_sound
    paths = []

    d_direct = float(np.linalg.norm(s - m))
    paths.append(ScatterPath(d_direct / c, occlusion_gain(scene, pose) / d_direct, _unit(s - m)))

    if pose is not None and len(pose) > 0 and scene.scatter_gain > 0:
        validate_pose(pose, scene.room_dims)
        for joint in pose:
            d_sj = float(np.linalg.norm(joint - s))
            d_jm = float(np.linalg.norm(m - joint))
            paths.append(
                ScatterPath((d_sj + d_jm) / c, scene.scatter_gain / (d_sj * d_jm), _unit(joint - m))
            )

    if scene.wall_reflectance > 0:
        for axis in range(3):
            for wall in (0.0, scene.room_dims[axis]):
                image = s.copy()
                image[axis] = 2.0 * wall - image[axis]
                d_img = float(np.linalg.norm(image - m))
                paths.append(ScatterPath(d_img / c, scene.wall_reflectance / d_img, _unit(image - m)))
    return paths


def render_bformat(
    scene: Scene,
    tsp: TspSignal,
    poses: np.ndarray | None,
    n_frames: int | None = None,
    noise_seed: int = 0,
) -> np.ndarray:
    """Render (4, frames * period_len) float32 B-format audio (W, X, Y, Z).

    Poses are sampled at the excitation frame rate, one per period. Pass
    poses=None with `n_frames` for an empty room. The excitation emitted
    while pose t holds arrives `delay` seconds later and is re-emitted along
    the scene's diffuse decay tail, so a pose's acoustic signature smears
    across the following frames: recorded frames blend the current pose's
    response with the reverberant remains of earlier ones, which is what the
    model's reference window is for. Rendering starts with enough pre-roll
    of pose 0 that frame 0 is already in steady state. White noise is added
    at `scene.noise_snr_db` below the rendered signal (unit full scale when
    the render is silent).
    """
    if poses is None:
        if n_frames is None:
            raise ValueError("empty-room render needs n_frames")
        frame_count = n_frames
    else:
        poses = np.asarray(poses, dtype=np.float64)
        if poses.ndim != 3 or poses.shape[1:] != (N_JOINTS, 3):
            raise ValueError(f"poses must be (frames, {N_JOINTS}, 3)")
        frame_count = len(poses)
        if n_frames is not None and n_frames != frame_count:
            raise ValueError("pose count does not match requested duration")
    if frame_count <= 0:
        raise ValueError("nothing to render")

    period = tsp.samples.astype(np.float64)
    length = tsp.period_len
    sr = tsp.sample_rate
    total = frame_count * length
    # no path (direct, joint detour or first-order image) exceeds 3 room
    # diagonals; pre-roll and tail slack cover paths plus the decay taps
    diag = float(np.linalg.norm(scene.room_dims))
    reach = 3.0 * diag / scene.speed_of_sound + max(scene.tail_delays_s, default=0.0)
    slack = int(np.ceil(reach * sr / length)) + 1
    out = np.zeros((4, total + 2 * slack * length), dtype=np.float64)
    tail_taps = [(int(round(d * sr)), g) for d, g in zip(scene.tail_delays_s, scene.tail_gains)]

    for t in range(-slack, frame_count):
        pose = None if poses is None else poses[max(t, 0)]
        emit_start = (t + slack) * length
        paths = enumerate_paths(scene, pose)
        reach_here = max(int(np.floor(p.delay * sr)) for p in paths) + length
        buf = np.zeros((4, reach_here))
        for path in paths:
            delay = path.delay * sr
            whole = int(np.floor(delay))
            seg = path.gain * circular_delay(period, delay - whole)
            buf[0, whole : whole + length] += seg
            buf[1, whole : whole + length] += seg * path.arrival_dir[0]
            buf[2, whole : whole + length] += seg * path.arrival_dir[1]
            buf[3, whole : whole + length] += seg * path.arrival_dir[2]
        out[:, emit_start : emit_start + reach_here] += buf
        for offset, gain in tail_taps:
            out[:, emit_start + offset : emit_start + offset + reach_here] += gain * buf
    out = out[:, slack * length : slack * length + total]

    if np.isfinite(scene.noise_snr_db):
        # noise is SNR-relative to the rendered signal; a silent render falls
        # back to unit full scale so the configured level still applies
        rms = float(np.sqrt(np.mean(out**2))) or 1.0
        sigma = rms * 10.0 ** (-scene.noise_snr_db / 20.0)
        rng = np.random.default_rng(noise_seed)
        out += rng.normal(0.0, sigma, size=out.shape)
    return out.astype(np.float32)


# ---------------------------------------------------------------------------
# session I/O: 4-channel float WAV + pose CSV
# ---------------------------------------------------------------------------


def write_session_wav(path, audio: np.ndarray, sample_rate: int) -> None:
    """32-bit float WAV, channel order W, X, Y, Z."""
    if audio.shape[0] != 4:
        raise ValueError("expected (4, samples)")
    wavfile.write(path, sample_rate, audio.T.astype(np.float32))


def read_session_wav(path) -> tuple[int, np.ndarray]:
    sr, data = wavfile.read(path)
    if data.ndim != 2 or data.shape[1] != 4:
        raise DataFormatError(f"{path}: expected 4-channel WAV")
    return sr, data.T.astype(np.float32)


def write_pose_csv(path, poses: np.ndarray, subject_id: int, distance_cm: float) -> None:
    """One row per frame: frame_idx, subject_id, distance_cm, j0x ... j20z."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for i, pose in enumerate(poses):
            writer.writerow(
                [i, subject_id, f"{distance_cm:.3f}"] + [f"{v:.6f}" for v in pose.reshape(-1)]
            )


def read_pose_csv(path) -> tuple[np.ndarray, int, float]:
    """Returns (poses (frames, 21, 3), subject_id, distance_cm)."""
    rows = []
    subject_id, distance_cm = 0, 0.0
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            subject_id = int(row[1])
            distance_cm = float(row[2])
            rows.append([float(v) for v in row[3:]])
    if not rows:
        raise DataFormatError(f"empty pose CSV: {path}")
    poses = np.asarray(rows).reshape(len(rows), N_JOINTS, 3)
    return poses, subject_id, distance_cm
