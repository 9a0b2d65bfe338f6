"""Frame records, phase-shift augmentation, windowing, splits and file formats.

Dataset file (little-endian):
    magic  b"APOSEDS1"
    header u32 sample_rate, u32 period_len, u32 bands, u32 n_joints(=21),
           u64 n_frames
    frame  bands*7 float32 features, 63 float32 pose, float32 distance_cm,
           u16 subject_id, u16 reserved(0)

Checkpoint file (little-endian):
    magic  b"APCHKPT1"
    u32 tensor count
    tensor u16 name length, name bytes (utf-8), u8 ndim, u32 dims...,
           float32 data
    u64    FNV-1a hash of every preceding byte
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataFormatError
from .features import MelBank, FeatureFrame, period_features
from .model import SoftPositionLabel, WindowSpec, soft_label

N_JOINTS = 21

DATASET_MAGIC = b"APOSEDS1"
CHECKPOINT_MAGIC = b"APCHKPT1"


@dataclass(frozen=True)
class FrameRecord:
    """One excitation period: its acoustic feature and the pose it labels."""

    feature: FeatureFrame
    pose: np.ndarray  # (21, 3) meters
    distance_cm: float
    subject_id: int

    def __post_init__(self):
        if self.pose.shape != (N_JOINTS, 3):
            raise ValueError("pose must be (21, 3)")
        if self.distance_cm < 0:
            raise ValueError("distance_cm must be non-negative")


@dataclass(frozen=True)
class TrainSample:
    """Model input window, its n target poses and the window's soft position label."""

    window: np.ndarray  # (n+k, b, 7)
    targets: np.ndarray  # (n, 21, 3)
    label: SoftPositionLabel


def ingest(
    audio: np.ndarray,
    poses: np.ndarray,
    distance_cm: float,
    subject_id: int,
    bank: MelBank,
    period_len: int,
    n_fft: int,
    hop: int,
) -> list[FrameRecord]:
    """Split 4-channel audio into periods and pair each with its pose row.

    Audio length must match the pose count to within one trailing period;
    the incomplete tail is dropped.
    """
    audio = np.asarray(audio)
    if audio.ndim != 2 or audio.shape[0] != 4:
        raise DataFormatError("expected (4, samples) B-format audio")
    if audio.shape[1] < period_len:
        raise DataFormatError("audio shorter than one period")
    poses = np.asarray(poses, dtype=np.float64)
    n_periods = audio.shape[1] // period_len
    if abs(n_periods - len(poses)) > 1:
        raise DataFormatError(f"{n_periods} audio periods vs {len(poses)} pose rows")
    n = min(n_periods, len(poses))
    records = []
    for t in range(n):
        seg = audio[:, t * period_len : (t + 1) * period_len]
        records.append(_record(period_features(seg, bank, n_fft, hop), poses[t], distance_cm, subject_id))
    return records


def _record(frame: FeatureFrame, pose: np.ndarray, distance_cm: float, subject_id: int) -> FrameRecord:
    # records carry float32, the storage precision of the dataset format
    feature = FeatureFrame(frame.logmel.astype(np.float32), frame.intensity.astype(np.float32))
    return FrameRecord(feature, pose.astype(np.float32), float(distance_cm), int(subject_id))


def augment_phase_segments(
    audio: np.ndarray,
    poses: np.ndarray,
    alphas: tuple[float, ...],
    distance_cm: float,
    subject_id: int,
    bank: MelBank,
    period_len: int,
    n_fft: int,
    hop: int,
) -> list[list[FrameRecord]]:
    """Original records plus one phase-shifted copy per alpha, one segment each.

    Each alpha in (0, 1) re-frames the audio starting round(alpha * period)
    samples later; the shifted frame straddles two pose rows, so its target
    is their (1 - alpha, alpha) interpolation. Each shift loses the final
    straddled frame. Segments are internally consecutive in source time and
    must be windowed separately.
    """
    segments = [ingest(audio, poses, distance_cm, subject_id, bank, period_len, n_fft, hop)]
    poses = np.asarray(poses, dtype=np.float64)
    for alpha in alphas:
        if not 0.0 < alpha < 1.0:
            raise ValueError("alpha must be a fraction of a period in (0, 1)")
        offset = int(round(alpha * period_len))
        shifted = audio[:, offset:]
        n = min(shifted.shape[1] // period_len, len(poses) - 1)
        segment = []
        for t in range(n):
            seg = shifted[:, t * period_len : (t + 1) * period_len]
            target = (1.0 - alpha) * poses[t] + alpha * poses[t + 1]
            segment.append(_record(period_features(seg, bank, n_fft, hop), target, distance_cm, subject_id))
        segments.append(segment)
    return segments


def augment_phase(audio, poses, alphas, distance_cm, subject_id, bank, period_len, n_fft, hop) -> list[FrameRecord]:
    """Flat view of augment_phase_segments: original + shifted copies."""
    return [
        r
        for seg in augment_phase_segments(audio, poses, alphas, distance_cm, subject_id, bank, period_len, n_fft, hop)
        for r in seg
    ]


def window(records: list[FrameRecord], spec: WindowSpec) -> list[TrainSample]:
    """Cut consecutive records into training samples, stride n.

    Windows cover [start-k, start+n) for start = k, k+n, ...; every target
    frame index >= k is covered exactly once. All records must share one
    recording's distance.
    """
    if len(records) < spec.length:
        raise ValueError(f"need at least n+k={spec.length} records")
    distances = {r.distance_cm for r in records}
    if len(distances) != 1:
        raise ValueError("windowing expects records from a single recording")
    feats = np.stack([r.feature.as_matrix() for r in records]).astype(np.float32)
    poses = np.stack([r.pose for r in records]).astype(np.float32)
    label = soft_label(records[0].distance_cm)
    samples = []
    count = (len(records) - spec.k) // spec.n
    for i in range(count):
        start = spec.k + i * spec.n
        samples.append(
            TrainSample(
                window=feats[start - spec.k : start + spec.n],
                targets=poses[start : start + spec.n],
                label=label,
            )
        )
    return samples


def split_loso(records: list[FrameRecord], held_out: int) -> tuple[list[FrameRecord], list[FrameRecord]]:
    """Partition records into (train, test) by held-out subject id."""
    subjects = {r.subject_id for r in records}
    if held_out not in subjects:
        raise ValueError(f"unknown subject {held_out}; present: {sorted(subjects)}")
    train = [r for r in records if r.subject_id != held_out]
    test = [r for r in records if r.subject_id == held_out]
    return train, test


def collate(samples: list[TrainSample]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack samples into (windows, targets, labels) batch arrays."""
    windows = np.stack([s.window for s in samples])
    targets = np.stack([s.targets for s in samples])
    labels = np.stack([s.label.probs for s in samples]).astype(np.float32)
    return windows, targets, labels


# ---------------------------------------------------------------------------
# dataset file
# ---------------------------------------------------------------------------


def serialize_dataset(records: list[FrameRecord], path, sample_rate: int, period_len: int) -> None:
    if not records:
        raise ValueError("refusing to write an empty dataset")
    bands = records[0].feature.b
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<IIIIQ", sample_rate, period_len, bands, N_JOINTS, len(records)))
        for r in records:
            if r.feature.b != bands:
                raise ValueError("mixed band counts in one dataset")
            fh.write(r.feature.as_matrix().astype("<f4").tobytes())
            fh.write(r.pose.astype("<f4").tobytes())
            fh.write(struct.pack("<fHH", r.distance_cm, r.subject_id, 0))


def deserialize_dataset(path) -> tuple[list[FrameRecord], int, int]:
    """Returns (records, sample_rate, period_len)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != DATASET_MAGIC:
        raise DataFormatError(f"bad dataset magic in {path}")
    sample_rate, period_len, bands, n_joints, n_frames = struct.unpack_from("<IIIIQ", blob, 8)
    if n_joints != N_JOINTS:
        raise DataFormatError(f"unsupported joint count {n_joints}")
    offset = 8 + 24
    frame_bytes = bands * 7 * 4 + 63 * 4 + 4 + 2 + 2
    if len(blob) != offset + n_frames * frame_bytes:
        raise DataFormatError("dataset size does not match header")
    records = []
    for _ in range(n_frames):
        mat = np.frombuffer(blob, dtype="<f4", count=bands * 7, offset=offset).reshape(bands, 7)
        offset += bands * 7 * 4
        pose = np.frombuffer(blob, dtype="<f4", count=63, offset=offset).reshape(N_JOINTS, 3)
        offset += 63 * 4
        distance, subject, _reserved = struct.unpack_from("<fHH", blob, offset)
        offset += 8
        feature = FeatureFrame(mat[:, :4].astype(np.float64), mat[:, 4:].astype(np.float64))
        records.append(FrameRecord(feature, pose.astype(np.float64), float(distance), int(subject)))
    return records, sample_rate, period_len


# ---------------------------------------------------------------------------
# checkpoint file
# ---------------------------------------------------------------------------

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def serialize_checkpoint(tensors: dict[str, np.ndarray], path) -> None:
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f4")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(struct.pack("<Q", fnv1a64(body)))


def deserialize_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != CHECKPOINT_MAGIC:
        raise DataFormatError(f"bad checkpoint magic in {path}")
    if len(blob) < 20:
        raise DataFormatError("checkpoint truncated")
    body, (stored,) = blob[:-8], struct.unpack("<Q", blob[-8:])
    if fnv1a64(body) != stored:
        raise DataFormatError("checkpoint hash mismatch")
    (count,) = struct.unpack_from("<I", body, 8)
    offset = 12
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", body, offset)
        offset += 2
        name = body[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<B", body, offset)
        offset += 1
        dims = struct.unpack_from(f"<{ndim}I", body, offset)
        offset += 4 * ndim
        size = int(np.prod(dims)) if ndim else 1
        arr = np.frombuffer(body, dtype="<f4", count=size, offset=offset).reshape(dims)
        offset += size * 4
        tensors[name] = arr.copy()
    return tensors
