"""Pose estimation metrics: RMSE, MAE and PCKh@0.5 with per-distance splits.

RMSE and MAE pool over every coordinate of every joint in every frame. PCKh
normalizes each joint error by half the frame's head-neck distance; boundary
errors count as correct.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .motion import HEAD, NECK

DISTANCE_ANCHORS_CM = (0.0, 25.0, 50.0, 75.0, 100.0)


@dataclass
class EvalReport:
    rmse: float
    mae: float
    pckh05: float
    frame_count: int
    per_distance: dict[float, tuple[float, float, float]] = field(default_factory=dict)
    degenerate_frames: int = 0

    def lines(self) -> list[str]:
        out = [
            f"frames {self.frame_count}  rmse {self.rmse:.4f} m  mae {self.mae:.4f} m  pckh@0.5 {self.pckh05:.4f}"
        ]
        for anchor in sorted(self.per_distance):
            r, m, p = self.per_distance[anchor]
            out.append(f"  {anchor:5.0f} cm: rmse {r:.4f}  mae {m:.4f}  pckh {p:.4f}")
        if self.degenerate_frames:
            out.append(f"  warning: {self.degenerate_frames} frames skipped by PCKh (zero head-neck distance)")
        return out

    def csv_rows(self) -> list[str]:
        rows = ["group,rmse,mae,pckh05,frames"]
        rows.append(f"all,{self.rmse:.6f},{self.mae:.6f},{self.pckh05:.6f},{self.frame_count}")
        for anchor in sorted(self.per_distance):
            r, m, p = self.per_distance[anchor]
            rows.append(f"{anchor:.0f},{r:.6f},{m:.6f},{p:.6f},")
        return rows


def _check_shapes(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 3 or pred.shape[2] != 3:
        raise ValueError("expected matching (frames, joints, 3) arrays")
    return pred, gt


def rmse(pred: np.ndarray, gt: np.ndarray) -> float:
    pred, gt = _check_shapes(pred, gt)
    return float(np.sqrt(np.mean((pred - gt) ** 2)))


def mae(pred: np.ndarray, gt: np.ndarray) -> float:
    pred, gt = _check_shapes(pred, gt)
    return float(np.mean(np.abs(pred - gt)))


def pckh(pred: np.ndarray, gt: np.ndarray, ratio: float = 0.5) -> tuple[float, int]:
    """Fraction of joints with error <= ratio * head-neck distance.

    Frames whose head-neck distance is zero are skipped; their count is
    returned alongside the ratio. Raises if every frame is degenerate.
    """
    pred, gt = _check_shapes(pred, gt)
    h = np.linalg.norm(gt[:, HEAD] - gt[:, NECK], axis=1)
    valid = h > 0
    skipped = int(np.sum(~valid))
    if not np.any(valid):
        raise ValueError("all frames have zero head-neck distance")
    err = np.linalg.norm(pred[valid] - gt[valid], axis=2)
    correct = err <= ratio * h[valid, None]
    return float(np.mean(correct)), skipped


def per_position_report(pred: np.ndarray, gt: np.ndarray, distances_cm: np.ndarray) -> EvalReport:
    """Pooled metrics plus one (rmse, mae, pckh) triple per distance anchor."""
    pred, gt = _check_shapes(pred, gt)
    distances_cm = np.asarray(distances_cm, dtype=np.float64)
    if len(distances_cm) != len(pred):
        raise ValueError("need one distance per frame")
    pooled_pck, skipped = pckh(pred, gt)
    report = EvalReport(
        rmse=rmse(pred, gt),
        mae=mae(pred, gt),
        pckh05=pooled_pck,
        frame_count=len(pred),
        degenerate_frames=skipped,
    )
    anchors = np.asarray(DISTANCE_ANCHORS_CM)
    nearest = anchors[np.argmin(np.abs(distances_cm[:, None] - anchors[None, :]), axis=1)]
    for anchor in anchors:
        sel = nearest == anchor
        if not np.any(sel):
            continue
        group_pck, _ = pckh(pred[sel], gt[sel])
        report.per_distance[float(anchor)] = (rmse(pred[sel], gt[sel]), mae(pred[sel], gt[sel]), group_pck)
    return report
