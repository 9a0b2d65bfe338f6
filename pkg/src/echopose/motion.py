"""Synthetic 21-joint body motions.

Keyframe tables for the desk-scale pose vocabulary (walking in place,
squatting, bowing, standing, T-pose) plus a sequencer that strings motions
together, interpolates them with shape-preserving cubics, scales limbs per
subject and drops the body at its standing mark. Local frame: +x facing the
microphone line, +y lateral, +z up, ground at z = 0.
"""

from __future__ import annotations

import numpy as np
from scipy.interpolate import PchipInterpolator

JOINT_NAMES = (
    "head", "neck",
    "l_shoulder", "r_shoulder",
    "l_arm", "r_arm",
    "l_forearm", "r_forearm",
    "l_hand", "r_hand",
    "waist",
    "l_thigh", "r_thigh",
    "l_shin", "r_shin",
    "l_foot", "r_foot",
    "l_toe", "r_toe",
    "hip", "spine",
)

N_JOINTS = len(JOINT_NAMES)
HEAD, NECK = 0, 1

# Bone segments; also the capsules the occlusion model tests.
SKELETON_EDGES = (
    ("head", "neck"),
    ("neck", "l_shoulder"), ("neck", "r_shoulder"),
    ("l_shoulder", "l_arm"), ("r_shoulder", "r_arm"),
    ("l_arm", "l_forearm"), ("r_arm", "r_forearm"),
    ("l_forearm", "l_hand"), ("r_forearm", "r_hand"),
    ("neck", "spine"), ("spine", "waist"), ("waist", "hip"),
    ("hip", "l_thigh"), ("hip", "r_thigh"),
    ("l_thigh", "l_shin"), ("r_thigh", "r_shin"),
    ("l_shin", "l_foot"), ("r_shin", "r_foot"),
    ("l_foot", "l_toe"), ("r_foot", "r_toe"),
)

_IDX = {name: i for i, name in enumerate(JOINT_NAMES)}


def _pose(**overrides) -> np.ndarray:
    """Base standing pose with named-joint overrides, as a (21, 3) array."""
    base = {
        "head": (0.00, 0.00, 1.66), "neck": (0.00, 0.00, 1.50),
        "l_shoulder": (0.00, 0.19, 1.43), "r_shoulder": (0.00, -0.19, 1.43),
        "l_arm": (0.00, 0.23, 1.16), "r_arm": (0.00, -0.23, 1.16),
        "l_forearm": (0.00, 0.24, 0.90), "r_forearm": (0.00, -0.24, 0.90),
        "l_hand": (0.00, 0.245, 0.80), "r_hand": (0.00, -0.245, 0.80),
        "waist": (0.00, 0.00, 1.10),
        "l_thigh": (0.00, 0.10, 0.55), "r_thigh": (0.00, -0.10, 0.55),
        "l_shin": (0.00, 0.10, 0.09), "r_shin": (0.00, -0.10, 0.09),
        "l_foot": (0.06, 0.10, 0.03), "r_foot": (0.06, -0.10, 0.03),
        "l_toe": (0.15, 0.10, 0.02), "r_toe": (0.15, -0.10, 0.02),
        "hip": (0.00, 0.00, 0.98), "spine": (0.00, 0.00, 1.28),
    }
    base.update(overrides)
    return np.array([base[name] for name in JOINT_NAMES], dtype=np.float64)


def _bowed(angle_deg: float) -> np.ndarray:
    """Upper body pitched forward about the hip by `angle_deg`."""
    pose = _pose()
    pivot = pose[_IDX["hip"]]
    theta = np.radians(angle_deg)
    upper = ("head", "neck", "l_shoulder", "r_shoulder", "l_arm", "r_arm",
             "l_forearm", "r_forearm", "l_hand", "r_hand", "waist", "spine")
    for name in upper:
        i = _IDX[name]
        dx, dz = pose[i, 0] - pivot[0], pose[i, 2] - pivot[2]
        pose[i, 0] = pivot[0] + dx * np.cos(theta) + dz * np.sin(theta)
        pose[i, 2] = pivot[2] - dx * np.sin(theta) + dz * np.cos(theta)
    return pose


def _walk_step(side: float) -> np.ndarray:
    """Mid-stride keyframe; side=+1 lifts the left leg, -1 the right."""
    l, r = (side, -side)
    kw = {}
    for s, tag in ((l, "l"), (r, "r")):
        y = 0.10 if tag == "l" else -0.10
        if s > 0:  # leg lifted and forward
            kw[f"{tag}_thigh"] = (0.16, y, 0.62)
            kw[f"{tag}_shin"] = (0.10, y, 0.28)
            kw[f"{tag}_foot"] = (0.14, y, 0.20)
            kw[f"{tag}_toe"] = (0.22, y, 0.17)
        # opposite arm swings forward
        ya = 0.23 if tag == "l" else -0.23
        swing = -0.22 * s
        kw[f"{tag}_arm"] = (0.4 * swing, ya, 1.15)
        kw[f"{tag}_forearm"] = (0.8 * swing, ya + 0.01 * np.sign(ya), 0.92)
        kw[f"{tag}_hand"] = (swing, ya + 0.015 * np.sign(ya), 0.85)
    return _pose(**kw)


def _squat() -> np.ndarray:
    return _pose(
        head=(0.10, 0.00, 1.27), neck=(0.08, 0.00, 1.12),
        l_shoulder=(0.08, 0.19, 1.06), r_shoulder=(0.08, -0.19, 1.06),
        l_arm=(0.18, 0.24, 0.92), r_arm=(0.18, -0.24, 0.92),
        l_forearm=(0.32, 0.25, 0.91), r_forearm=(0.32, -0.25, 0.91),
        l_hand=(0.38, 0.25, 0.90), r_hand=(0.38, -0.25, 0.90),
        waist=(0.00, 0.00, 0.78), spine=(0.05, 0.00, 0.95),
        hip=(-0.05, 0.00, 0.62),
        l_thigh=(0.20, 0.11, 0.42), r_thigh=(0.20, -0.11, 0.42),
    )


def _t_pose() -> np.ndarray:
    return _pose(
        l_arm=(0.00, 0.49, 1.43), r_arm=(0.00, -0.49, 1.43),
        l_forearm=(0.00, 0.72, 1.43), r_forearm=(0.00, -0.72, 1.43),
        l_hand=(0.00, 0.82, 1.43), r_hand=(0.00, -0.82, 1.43),
    )


# Motion = list of (keyframe, seconds to hold before the next one).
MOTIONS: dict[str, list[tuple[np.ndarray, float]]] = {
    "standing": [(_pose(), 1.2)],
    "t_pose": [(_t_pose(), 1.2)],
    "walking": [
        (_walk_step(+1.0), 0.45),
        (_pose(), 0.45),
        (_walk_step(-1.0), 0.45),
        (_pose(), 0.45),
    ],
    "squatting": [(_pose(), 0.8), (_squat(), 0.8), (_pose(), 0.8)],
    "bowing": [(_pose(), 0.8), (_bowed(50.0), 0.8), (_pose(), 0.8)],
}


def keyframes(motion: str) -> list[tuple[np.ndarray, float]]:
    if motion not in MOTIONS:
        raise ValueError(f"unknown motion {motion!r}; choose from {sorted(MOTIONS)}")
    return MOTIONS[motion]


def subject_scale(subject_id: int) -> float:
    """Per-subject limb-length factor in [0.9, 1.1], deterministic in the id."""
    rng = np.random.default_rng(1000 + int(subject_id))
    return float(rng.uniform(0.9, 1.1))


def pose_sequencer(
    script: list[str],
    fps: float,
    stand_distance_cm: float,
    duration: float,
    seed: int = 0,
    scale: float = 1.0,
    center_xy: tuple[float, float] = (3.5, 4.5),
    room_dims: tuple[float, float, float] | None = None,
) -> np.ndarray:
    """Sample a smooth 21-joint trajectory -> (frames, 21, 3) in room meters.

    The named motions cycle in script order; keyframes are PCHIP-interpolated
    (no overshoot, so keyframe speeds bound frame speeds), a small seeded sway
    is added, limbs are scaled about the ground plane, and the body is placed
    at `center_xy` shifted by `stand_distance_cm` along +y, perpendicular to
    the speaker-microphone line.
    """
    if fps <= 0:
        raise ValueError("fps must be positive")
    if duration <= 0:
        raise ValueError("duration must be positive")
    n_frames = int(round(duration * fps))
    times = np.arange(n_frames) / fps

    key_t, key_p = [], []
    t = 0.0
    while t <= duration + 2.0:  # build past the end so interpolation never extrapolates
        for name in script:
            for pose, hold in keyframes(name):
                key_t.append(t)
                key_p.append(pose)
                t += hold
    key_t = np.asarray(key_t)
    key_p = np.stack(key_p)  # (K, 21, 3)

    if len(key_t) < 2:
        frames = np.repeat(key_p, n_frames, axis=0)
    else:
        interp = PchipInterpolator(key_t, key_p.reshape(len(key_t), -1), axis=0)
        frames = interp(times).reshape(n_frames, N_JOINTS, 3)

    # slow whole-body sway, centimeter scale
    rng = np.random.default_rng(seed)
    sway_t = np.arange(0.0, duration + 2.0, 0.8)
    sway = rng.normal(0.0, 0.01, size=(len(sway_t), 2))
    if len(sway_t) >= 2:
        sxy = PchipInterpolator(sway_t, sway, axis=0)(times)
        frames[:, :, 0] += sxy[:, 0:1]
        frames[:, :, 1] += sxy[:, 1:2]

    frames *= scale
    frames[:, :, 0] += center_xy[0]
    frames[:, :, 1] += center_xy[1] + stand_distance_cm / 100.0

    if room_dims is not None:
        margin = 0.05
        for axis in range(3):
            np.clip(frames[:, :, axis], margin, room_dims[axis] - margin, out=frames[:, :, axis])
    return frames


def edge_indices() -> list[tuple[int, int]]:
    return [(_IDX[a], _IDX[b]) for a, b in SKELETON_EDGES]
