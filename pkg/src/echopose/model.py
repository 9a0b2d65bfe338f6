"""Windowed convolutional pose regressor with a position adversary.

The estimator consumes n+k feature frames (k reference frames of context
before the n frames being estimated), runs a 2D conv stack over the
time x mel plane, collapses the mel axis, and regresses the last n poses
through a strided temporal projection and a 1D conv stack. Its time-pooled
intermediate feature feeds a single-dense-layer discriminator over the five
standing-distance anchors; training alternates a discriminator update with
an estimator update whose objective adds the discriminator's output spread,
pushing features toward position invariance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import NumericsError

DISTANCE_ANCHORS_CM = (0.0, 25.0, 50.0, 75.0, 100.0)
N_JOINTS = 21
POSE_DIM = N_JOINTS * 3


@dataclass(frozen=True)
class WindowSpec:
    """n poses estimated per window, after k frames of acoustic context."""

    n: int = 8
    k: int = 16

    def __post_init__(self):
        if self.n < 1 or self.k < 0:
            raise ValueError("need n >= 1 and k >= 0")

    @property
    def length(self) -> int:
        return self.n + self.k


@dataclass(frozen=True)
class LossWeights:
    w_alpha: float = 1.0
    w_beta: float = 10.0
    w_gamma: float = 1.0

    def __post_init__(self):
        if min(self.w_alpha, self.w_beta, self.w_gamma) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass(frozen=True)
class SoftPositionLabel:
    """Probability vector over the five standing-distance anchors."""

    probs: np.ndarray

    def __post_init__(self):
        p = self.probs
        if p.shape != (5,) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-6:
            raise ValueError("probs must be a 5-way distribution")
        if np.count_nonzero(p) > 2:
            raise ValueError("at most two adjacent anchors may be active")
        nz = np.nonzero(p)[0]
        if len(nz) == 2 and nz[1] - nz[0] != 1:
            raise ValueError("active anchors must be adjacent")


def soft_label(distance_cm: float) -> SoftPositionLabel:
    """Linear interpolation between the two anchors bracketing the distance."""
    if distance_cm < 0:
        raise ValueError("distance must be non-negative")
    anchors = np.asarray(DISTANCE_ANCHORS_CM)
    d = float(np.clip(distance_cm, anchors[0], anchors[-1]))
    probs = np.zeros(5)
    hi = int(np.searchsorted(anchors, d))
    if anchors[hi] == d:
        probs[hi] = 1.0
    else:
        lo = hi - 1
        w = (d - anchors[lo]) / (anchors[hi] - anchors[lo])
        probs[lo] = 1.0 - w
        probs[hi] = w
    return SoftPositionLabel(probs)


# ---------------------------------------------------------------------------
# networks
# ---------------------------------------------------------------------------

FEATURE_DIM = 64  # intermediate feature width after the 2D stack
_CONV2D_CHANNELS = (7, 32, 32, 64, 64)
_TEMPORAL_CHANNELS = (FEATURE_DIM, 128, 128, POSE_DIM)


def _he(rng, shape, fan_in, dtype):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class PoseEstimator:
    """2D conv stack over (time, mel) -> mel collapse -> 1D temporal stack.

    Output poses are offsets from `origin` (a fixed room-frame anchor baked
    into the head bias), so an untrained model predicts the anchor pose.
    """

    def __init__(
        self,
        window: WindowSpec = WindowSpec(),
        bands: int = 64,
        seed: int = 0,
        dtype=np.float32,
        origin: tuple[float, float, float] = (3.5, 4.5, 0.95),
    ):
        if bands % 4 != 0:
            raise ValueError("bands must be divisible by 4 (two 2x mel poolings)")
        self.window = window
        self.bands = bands
        self.origin = tuple(float(v) for v in origin)
        self.params: dict[str, Tensor] = {}
        rng = np.random.default_rng(seed)
        for i in range(4):
            cin, cout = _CONV2D_CHANNELS[i], _CONV2D_CHANNELS[i + 1]
            self._add(rng, f"conv2d_{i}.w", (cout, cin, 3, 3), cin * 9, dtype)
            self._add_zeros(f"conv2d_{i}.b", (cout,), dtype)
        # temporal projection n+k -> n: a valid conv with kernel k+1, so each
        # output step sees exactly its target frame plus the k reference
        # frames before it (output i aligns with target frame k+i)
        proj_k = window.k + 1
        self._add(rng, "time_proj.w", (FEATURE_DIM, FEATURE_DIM, proj_k), FEATURE_DIM * proj_k, dtype)
        self._add_zeros("time_proj.b", (FEATURE_DIM,), dtype)
        for i in range(3):
            cin, cout = _TEMPORAL_CHANNELS[i], _TEMPORAL_CHANNELS[i + 1]
            name = f"conv1d_{i}"
            if i == 2:
                # output head: small weights, bias at the room-frame anchor
                w = (rng.standard_normal((cout, cin, 5)) * 0.01).astype(dtype)
                self.params[f"{name}.w"] = Tensor(w, requires_grad=True)
                b = np.tile(np.asarray(self.origin, dtype=dtype), N_JOINTS)
                self.params[f"{name}.b"] = Tensor(b, requires_grad=True)
            else:
                self._add(rng, f"{name}.w", (cout, cin, 5), cin * 5, dtype)
                self._add_zeros(f"{name}.b", (cout,), dtype)

    def _add(self, rng, name, shape, fan_in, dtype):
        self.params[name] = Tensor(_he(rng, shape, fan_in, dtype), requires_grad=True)

    def _add_zeros(self, name, shape, dtype):
        self.params[name] = Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)

    def detached_params(self) -> dict[str, Tensor]:
        return {name: p.detach() for name, p in self.params.items()}

    def forward_pose(
        self, windows: np.ndarray, params: dict[str, Tensor] | None = None
    ) -> tuple[Tensor, Tensor]:
        """Windows (B, n+k, b, 7) -> (poses (B, n, 21, 3), intermediate (B, 64)).

        The n outputs correspond to the last n frames of each window.
        """
        p = self.params if params is None else params
        spec = self.window
        windows = np.asarray(windows)
        if windows.ndim != 4 or windows.shape[1] != spec.length or windows.shape[2] != self.bands or windows.shape[3] != 7:
            raise ValueError(f"expected (B, {spec.length}, {self.bands}, 7) windows, got {windows.shape}")
        dtype = p["conv2d_0.w"].data.dtype
        x = Tensor(np.ascontiguousarray(windows.transpose(0, 3, 1, 2), dtype=dtype))

        h = ad.leaky_relu(ad.conv2d(x, p["conv2d_0.w"], p["conv2d_0.b"], padding=1))
        h = ad.leaky_relu(ad.conv2d(h, p["conv2d_1.w"], p["conv2d_1.b"], padding=1))
        h = ad.avgpool_last(h, 2)
        h = ad.leaky_relu(ad.conv2d(h, p["conv2d_2.w"], p["conv2d_2.b"], padding=1))
        h = ad.leaky_relu(ad.conv2d(h, p["conv2d_3.w"], p["conv2d_3.b"], padding=1))
        h = ad.avgpool_last(h, 2)

        g = ad.mean(h, axis=3)  # collapse mel -> (B, 64, n+k)
        intermediate = ad.mean(g, axis=2)  # (B, 64)

        t = ad.leaky_relu(ad.conv1d(g, p["time_proj.w"], p["time_proj.b"]))
        t = ad.leaky_relu(ad.conv1d(t, p["conv1d_0.w"], p["conv1d_0.b"], padding=2))
        t = ad.leaky_relu(ad.conv1d(t, p["conv1d_1.w"], p["conv1d_1.b"], padding=2))
        t = ad.conv1d(t, p["conv1d_2.w"], p["conv1d_2.b"], padding=2)  # (B, 63, n)

        poses = ad.reshape(ad.transpose(t, (0, 2, 1)), (-1, spec.n, N_JOINTS, 3))
        return poses, intermediate


class PositionDiscriminator:
    """Single dense layer from the intermediate feature to 5 anchor probabilities."""

    def __init__(self, feature_dim: int = FEATURE_DIM, seed: int = 1, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.params = {
            "disc.w": Tensor(_he(rng, (feature_dim, 5), feature_dim, dtype), requires_grad=True),
            "disc.b": Tensor(np.zeros(5, dtype=dtype), requires_grad=True),
        }

    def detached_params(self) -> dict[str, Tensor]:
        return {name: p.detach() for name, p in self.params.items()}

    def forward(self, features: Tensor, params: dict[str, Tensor] | None = None) -> Tensor:
        p = self.params if params is None else params
        return ad.softmax(ad.linear(features, p["disc.w"], p["disc.b"]), axis=-1)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _frame_norm_mean(diff: Tensor) -> Tensor:
    """Mean over frames of the Euclidean norm of each flattened frame difference."""
    flat = ad.reshape(diff, (-1, POSE_DIM)) if diff.data.shape[-1] != POSE_DIM else diff
    sq = ad.sum_axis(ad.square(flat), axis=-1)
    return ad.mean(ad.sqrt(sq))


def pose_loss(pred, gt) -> Tensor:
    """Mean over frames of the 63-dim Euclidean distance to ground truth."""
    pred = _as_tensor(pred)
    gt = _as_tensor(gt)
    if pred.data.shape != gt.data.shape:
        raise ValueError("pose_loss: shape mismatch")
    diff = ad.sub(ad.reshape(pred, (-1, POSE_DIM)), ad.reshape(gt, (-1, POSE_DIM)))
    return _frame_norm_mean(diff)


def smooth_loss(pred, gt) -> Tensor:
    """Mean norm of the frame-to-frame velocity error along each sequence.

    Accepts (T, 21, 3) or batched (B, T, 21, 3); velocities are taken within
    each sequence, never across batch entries.
    """
    pred = _as_tensor(pred)
    gt = _as_tensor(gt)
    if pred.data.shape != gt.data.shape:
        raise ValueError("smooth_loss: shape mismatch")
    if pred.data.ndim == 3:
        pred = ad.reshape(pred, (1, -1, N_JOINTS, 3))
        gt = ad.reshape(gt, (1, -1, N_JOINTS, 3))
    t = pred.data.shape[1]
    if t < 2:
        raise ValueError("smooth_loss needs at least two frames")
    pv = ad.sub(ad.narrow(pred, 1, 1, t - 1), ad.narrow(pred, 1, 0, t - 1))
    gv = ad.sub(ad.narrow(gt, 1, 1, t - 1), ad.narrow(gt, 1, 0, t - 1))
    return _frame_norm_mean(ad.sub(pv, gv))


def std_loss(disc_probs) -> Tensor:
    """Mean population standard deviation of the discriminator's output rows."""
    probs = _as_tensor(disc_probs)
    sums = probs.data.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > 1e-4):
        raise ValueError("discriminator rows must be probability vectors")
    return ad.mean(ad.std_reduce(probs, axis=-1))


def total_loss(pose_l, smooth_l, std_l, w: LossWeights) -> Tensor:
    terms = ad.add(ad.scale(_as_tensor(pose_l), w.w_alpha), ad.scale(_as_tensor(smooth_l), w.w_beta))
    return ad.add(terms, ad.scale(_as_tensor(std_l), w.w_gamma))


def discriminator_ce(disc_probs, target) -> Tensor:
    """Cross-entropy of predicted anchor probabilities against a soft label."""
    probs = _as_tensor(disc_probs)
    if isinstance(target, SoftPositionLabel):
        target = target.probs
    t = np.asarray(target, dtype=probs.data.dtype)
    if t.shape != probs.data.shape:
        t = np.broadcast_to(t, probs.data.shape).copy()
    weighted = ad.mul(ad.log_clamped(probs, 1e-12), Tensor(t))
    return ad.scale(ad.mean(ad.sum_axis(weighted, axis=-1)), -1.0)


# ---------------------------------------------------------------------------
# adversarial training step
# ---------------------------------------------------------------------------


@dataclass
class StepReport:
    step: int
    l_pose: float
    l_smooth: float
    l_std: float
    l_disc_ce: float
    total: float

    def csv_line(self) -> str:
        return f"{self.step},{self.l_pose:.6f},{self.l_smooth:.6f},{self.l_std:.6f},{self.l_disc_ce:.6f},{self.total:.6f}"


def train_step(
    windows: np.ndarray,
    targets: np.ndarray,
    labels: np.ndarray,
    estimator: PoseEstimator,
    discriminator: PositionDiscriminator,
    est_state: ad.AdamState,
    disc_state: ad.AdamState,
    weights: LossWeights = LossWeights(),
    clip_norm: float = 5.0,
    step: int = 0,
) -> StepReport:
    """One alternating adversarial update.

    Phase A trains the discriminator on detached estimator features; phase B
    trains the estimator against the combined objective with the
    discriminator frozen. Estimator parameters do not change during phase A,
    so a single estimator forward serves both phases: its detached
    intermediate feature drives the discriminator update, the live graph the
    estimator update. Raises NumericsError on a non-finite loss before
    applying the offending update.
    """
    targets = np.asarray(targets, dtype=np.float32).reshape(len(windows), estimator.window.n, N_JOINTS, 3)
    labels = np.asarray(labels, dtype=np.float32)

    ad.zero_grads(estimator.params)
    pred, feat = estimator.forward_pose(windows)

    # phase A: discriminator only, estimator features detached
    ad.zero_grads(discriminator.params)
    ce = discriminator_ce(discriminator.forward(feat.detach()), labels)
    ce_val = float(ce.data)
    if not np.isfinite(ce_val):
        raise NumericsError(f"step {step}: non-finite discriminator loss")
    ce.backward()
    ad.clip_grad_norm(discriminator.params, clip_norm)
    ad.adam_step(discriminator.params, disc_state)

    # phase B: estimator only, freshly updated discriminator frozen
    probs = discriminator.forward(feat, params=discriminator.detached_params())
    l_pose = pose_loss(pred, targets)
    l_smooth = smooth_loss(pred, targets)
    l_std = std_loss(probs)
    loss = total_loss(l_pose, l_smooth, l_std, weights)
    values = (float(l_pose.data), float(l_smooth.data), float(l_std.data), float(loss.data))
    if not all(np.isfinite(v) for v in values):
        raise NumericsError(f"step {step}: non-finite estimator loss {values}")
    loss.backward()
    ad.clip_grad_norm(estimator.params, clip_norm)
    ad.adam_step(estimator.params, est_state)

    return StepReport(step, values[0], values[1], values[2], ce_val, values[3])


def predict(estimator: PoseEstimator, windows: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Pose predictions for a stack of windows -> (N, n, 21, 3) float64."""
    chunks = []
    for i in range(0, len(windows), batch_size):
        pred, _ = estimator.forward_pose(windows[i : i + batch_size])
        chunks.append(pred.data.astype(np.float64))
    return np.concatenate(chunks, axis=0)
