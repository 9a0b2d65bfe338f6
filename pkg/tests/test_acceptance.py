"""Acceptance gate: one test per criterion, one printed pass/fail line each.

Run with `pytest tests/test_acceptance.py -v -s`. The corpus-backed criteria
(5-9) render audio and train models, so this module dominates the suite's
runtime; fixtures are session-scoped and shared.
"""

import dataclasses
import time

import numpy as np
import pytest

from echopose import autodiff as ad
from echopose import dataset as ds
from echopose import features as ft
from echopose import metrics as mt
from echopose import model as md
from echopose.autodiff import Tensor
from echopose.cli import (
    bank_from_config,
    evaluate_model,
    make_estimator,
    scene_from_config,
    train_model,
    windows_from_segments,
)
from echopose.config import RunConfig
from echopose.errors import DataFormatError
from echopose.metrics import rmse
from echopose.model import WindowSpec
from echopose.motion import N_JOINTS, pose_sequencer, subject_scale
from echopose.sim import render_bformat
from echopose.signal import generate_tsp

HELD_OUT = 5


def report(criterion: str, ok: bool, detail: str) -> None:
    print(f"\nACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"{criterion}: {detail}"


# ---------------------------------------------------------------------------
# shared corpus and training runs
# ---------------------------------------------------------------------------


def render_session_segments(cfg: RunConfig, subject: int, dist: float):
    """One session's raw records plus per-shift augmented segments."""
    scene = scene_from_config(cfg)
    bank = bank_from_config(cfg)
    tsp = generate_tsp(cfg.sample_rate, cfg.period_len, cfg.f_lo, cfg.f_hi)
    seed_base = cfg.seed * 100_000 + subject * 1_000 + int(dist)
    poses = pose_sequencer(
        list(cfg.script), cfg.fps, dist, cfg.duration, seed=seed_base,
        scale=subject_scale(subject), center_xy=scene.line_midpoint_xy, room_dims=scene.room_dims,
    )
    audio = render_bformat(scene, tsp, poses, noise_seed=seed_base + 7)
    segments = ds.augment_phase_segments(audio, poses, tuple(cfg.alphas), dist, subject, bank,
                                         cfg.period_len, cfg.n_fft, cfg.hop)
    return dict(raw=[segments[0]], aug=segments, raw_flat=segments[0],
                aug_flat=[r for seg in segments for r in seg])


@pytest.fixture(scope="session")
def corpus():
    """Defaults corpus: 5 subjects x 5 distances x 60 s, with augmentation."""
    cfg = RunConfig()
    sessions = {}
    t0 = time.time()
    for subject in range(1, cfg.subjects + 1):
        for dist in cfg.distances:
            sessions[(subject, dist)] = render_session_segments(cfg, subject, dist)
    print(f"\n[corpus] rendered+ingested 25 sessions in {time.time() - t0:.0f}s")
    return cfg, sessions


def build_samples(cfg_variant: RunConfig, sessions, use_aug: bool = True):
    spec = WindowSpec(cfg_variant.n, cfg_variant.k)
    train, test = [], []
    for (subject, _dist), segs in sessions.items():
        if subject == HELD_OUT:
            test.extend(windows_from_segments(segs["raw"], spec))
        else:
            train.extend(windows_from_segments(segs["aug"] if use_aug else segs["raw"], spec))
    return train, test


def loso_run(cfg_variant: RunConfig, sessions, use_aug: bool = True):
    train, test = build_samples(cfg_variant, sessions, use_aug)
    t0 = time.time()
    estimator, _, _ = train_model(cfg_variant, train)
    elapsed = time.time() - t0
    rep = evaluate_model(estimator, test)
    return dict(rmse=rep.rmse, report=rep, train=train, test=test, seconds=elapsed)


@pytest.fixture(scope="session")
def full_run(corpus):
    cfg, sessions = corpus
    run = loso_run(cfg, sessions)
    print(f"[full method] rmse={run['rmse']:.4f} in {run['seconds']:.0f}s ({len(run['train'])} windows)")
    return run


# ---------------------------------------------------------------------------
# criteria
# ---------------------------------------------------------------------------


def test_criterion_01_gradient_suite():
    t0 = time.time()
    rng = np.random.default_rng(0)

    def p64(shape):
        return Tensor(rng.normal(size=shape), requires_grad=True)

    worst_kernel = 0.0
    # conv / linear kernels: < 1e-4
    params = {"w": p64((4, 3, 3, 3)), "b": p64((4,)), "x": p64((2, 3, 8, 8))}
    worst_kernel = max(worst_kernel, ad.grad_check(
        lambda p: ad.mean(ad.square(ad.conv2d(p["x"], p["w"], p["b"], padding=1))), params))
    params = {"w": p64((4, 3, 5)), "b": p64((4,)), "x": p64((2, 3, 10))}
    worst_kernel = max(worst_kernel, ad.grad_check(
        lambda p: ad.mean(ad.square(ad.conv1d(p["x"], p["w"], p["b"], padding=2))), params))
    params = {"w": p64((6, 4)), "b": p64((4,)), "x": p64((5, 6))}
    worst_kernel = max(worst_kernel, ad.grad_check(
        lambda p: ad.mean(ad.square(ad.linear(p["x"], p["w"], p["b"]))), params))

    # remaining kernels: < 1e-3
    worst_other = 0.0
    params = {"x": p64((4, 6))}
    worst_other = max(worst_other, ad.grad_check(
        lambda p: ad.mean(ad.mul(ad.softmax(ad.leaky_relu(p["x"])), ad.relu(p["x"]))), params))
    params = {"x": Tensor(rng.normal(size=(4, 5)) + np.arange(5), requires_grad=True)}
    worst_other = max(worst_other, ad.grad_check(lambda p: ad.mean(ad.std_reduce(p["x"])), params))
    params = {"x": p64((2, 3, 4, 8))}
    worst_other = max(worst_other, ad.grad_check(
        lambda p: ad.mean(ad.sqrt(ad.square(ad.avgpool_last(ad.transpose(p["x"], (0, 1, 3, 2)), 2)))), params))

    # full combined objective on a tiny configuration
    spec = WindowSpec(2, 2)
    est = md.PoseEstimator(spec, bands=8, seed=0, origin=(0, 0, 0))
    params = {name: Tensor(p.data.astype(np.float64), requires_grad=True)
              for name, p in {**est.params, **md.PositionDiscriminator(seed=1).params}.items()}
    x = rng.normal(size=(2, spec.length, 8, 7))
    gt = rng.normal(size=(2, spec.n, 21, 3))

    def full_loss(p):
        pred, feat = est.forward_pose(x, params=p)
        probs = ad.softmax(ad.linear(feat, p["disc.w"], p["disc.b"]))
        return md.total_loss(md.pose_loss(pred, Tensor(gt)), md.smooth_loss(pred, Tensor(gt)),
                             md.std_loss(probs), md.LossWeights())

    worst_full = ad.grad_check(full_loss, params, limit=50, seed=1)
    elapsed = time.time() - t0
    ok = worst_kernel < 1e-4 and worst_other < 1e-3 and worst_full < 1e-3 and elapsed < 120
    report("criterion 1 (gradient suite)", ok,
           f"kernels {worst_kernel:.2e} < 1e-4, others {worst_other:.2e} < 1e-3, "
           f"full loss {worst_full:.2e} < 1e-3, {elapsed:.0f}s < 120s")


def test_criterion_02_feature_oracle():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(20):
        x = rng.normal(size=1024)
        spec = ft.stft(x, 256, 128)
        i = rng.integers(spec.shape[0])
        frame = x[i * 128 : i * 128 + 256] * ft.hann(256)
        k = np.arange(129)
        ref = np.exp(-2j * np.pi * np.outer(k, np.arange(256)) / 256) @ frame
        rel = np.abs(np.abs(spec[i]) - np.abs(ref)) / np.maximum(np.abs(ref), 1e-12)
        worst = max(worst, float(rel.max()))

    bank = ft.mel_bank()
    t = np.arange(600) / 16000
    mismatches = []
    for j, fc in enumerate(bank.centers_hz):
        power = np.mean(np.abs(ft.stft(np.sin(2 * np.pi * fc * t), bank.n_fft, 256)) ** 2, axis=0)
        if int(np.argmax(bank.weights @ power)) != j:
            mismatches.append(j)
    ok = worst < 1e-6 and not mismatches
    report("criterion 2 (feature oracle)", ok,
           f"max STFT rel err {worst:.2e} < 1e-6; argmax mismatches {mismatches} of 64 band centers")


def test_criterion_03_intensity_direction():
    t0 = time.time()
    bank = ft.mel_bank()
    rng = np.random.default_rng(2)
    s = rng.normal(size=600)
    worst = 0.0
    for azimuth in range(0, 360, 30):
        az = np.radians(azimuth)
        audio = np.stack([s, s * np.cos(az), s * np.sin(az), np.zeros(600)])
        spec = ft.stft_bformat(audio)
        rows = ft.intensity_frame(spec, bank)
        energetic = ft.logmel_frame(spec, bank)[:, 0] > np.log(ft.EPS_FLOOR) + 10
        recovered = np.degrees(np.arctan2(rows[energetic, 1], rows[energetic, 0]))
        err = np.abs((recovered - azimuth + 180) % 360 - 180)
        worst = max(worst, float(err.max()))
    elapsed = time.time() - t0
    ok = worst < 5.0 and elapsed < 60
    report("criterion 3 (intensity direction)", ok,
           f"max azimuth error {worst:.2f} deg < 5 deg over 0..330 step 30, {elapsed:.1f}s < 60s")


def test_criterion_04_loss_identities():
    checks = []
    checks.append(abs(float(md.std_loss(np.full((3, 5), 0.2)).data)) <= 1e-6)
    checks.append(abs(float(md.std_loss(np.tile(np.eye(5)[1], (4, 1))).data) - 0.4) <= 1e-6)
    x = np.random.default_rng(3).normal(size=(5, 21, 3))
    checks.append(float(md.pose_loss(x, x).data) == 0.0)
    checks.append(float(md.smooth_loss(x + np.array([0.1, 0.2, -0.3]), x).data) < 1e-7)
    w = md.LossWeights()  # the stated defaults: w_alpha = w_gamma = 1, w_beta = 10
    total = float(md.total_loss(Tensor(np.float64(0.5)), Tensor(np.float64(0.25)),
                                Tensor(np.float64(0.125)), w).data)
    checks.append(abs(total - (1 * 0.5 + 10 * 0.25 + 1 * 0.125)) < 1e-12)
    report("criterion 4 (loss identities)", all(checks),
           f"std uniform/one-hot, pose/smooth zero cases, weighted total: {checks}")


def test_criterion_05_pca_position_analogue():
    t0 = time.time()
    cfg = RunConfig(duration=20.0)
    scene = scene_from_config(cfg)
    bank = bank_from_config(cfg)
    tsp = generate_tsp(cfg.sample_rate, cfg.period_len, cfg.f_lo, cfg.f_hi)
    n_frames = int(round(cfg.duration * cfg.fps))

    frames, labels = [], []
    audio = render_bformat(scene, tsp, None, n_frames=n_frames, noise_seed=1)
    for t in range(n_frames):
        frames.append(ft.period_features(audio[:, t * 600 : (t + 1) * 600], bank))
        labels.append("empty")
    for dist in (0.0, 100.0):
        poses = pose_sequencer(list(cfg.script), cfg.fps, dist, cfg.duration, seed=2,
                               scale=subject_scale(1), center_xy=scene.line_midpoint_xy,
                               room_dims=scene.room_dims)
        audio = render_bformat(scene, tsp, poses, noise_seed=3 + int(dist))
        for t in range(n_frames):
            frames.append(ft.period_features(audio[:, t * 600 : (t + 1) * 600], bank))
            labels.append(f"{dist:.0f}")

    points, _ = ft.pca_project(frames, dims=2)
    labels = np.asarray(labels)
    centroid = {name: points[labels == name].mean(axis=0) for name in ("empty", "0", "100")}
    d_far = float(np.linalg.norm(centroid["empty"] - centroid["100"]))
    d_near = float(np.linalg.norm(centroid["empty"] - centroid["0"]))
    elapsed = time.time() - t0
    ok = d_far < d_near and elapsed < 300
    report("criterion 5 (position PCA analogue)", ok,
           f"d(empty,100cm)={d_far:.2f} < d(empty,0cm)={d_near:.2f}, {elapsed:.0f}s < 300s")


def test_criterion_06_end_to_end_learning(corpus, full_run):
    cfg, _sessions = corpus
    gt = np.concatenate([s.targets for s in full_run["test"]]).reshape(-1, N_JOINTS, 3)
    train_mean = np.mean(np.concatenate([s.targets for s in full_run["train"]]).reshape(-1, N_JOINTS, 3), axis=0)
    mean_rmse = rmse(np.tile(train_mean, (len(gt), 1, 1)), gt)
    untrained_rmse = evaluate_model(make_estimator(cfg), full_run["test"]).rmse
    trained = full_run["rmse"]
    ok = (
        trained <= 0.75 * mean_rmse
        and trained <= 0.75 * untrained_rmse
        and full_run["seconds"] < 1800
    )
    report("criterion 6 (end-to-end learning)", ok,
           f"held-out rmse {trained:.4f} <= 0.75*mean-pose {0.75 * mean_rmse:.4f} "
           f"and <= 0.75*untrained {0.75 * untrained_rmse:.4f}; train {full_run['seconds']:.0f}s < 1800s")


def test_criterion_07_ablation_direction(corpus, full_run):
    cfg, sessions = corpus
    full = full_run["rmse"]
    k0 = loso_run(dataclasses.replace(cfg, k=0), sessions)["rmse"]
    wo_adv = loso_run(dataclasses.replace(cfg, w_gamma=0.0), sessions)["rmse"]
    wo_aug = loso_run(cfg, sessions, use_aug=False)["rmse"]
    prior_gap = (k0 - full) / k0
    ok = (
        full <= k0 and prior_gap >= 0.05
        and wo_adv >= 0.98 * full
        and wo_aug >= 0.98 * full
    )
    report("criterion 7 (ablation direction)", ok,
           f"full {full:.4f} vs w/o-prior {k0:.4f} (gap {prior_gap * 100:.1f}% >= 5%), "
           f"w/o-adv {wo_adv:.4f} >= {0.98 * full:.4f}, w/o-aug {wo_aug:.4f} >= {0.98 * full:.4f}")


def test_criterion_08_augmentation_audit(corpus):
    cfg, sessions = corpus
    bank = bank_from_config(cfg)

    # one session's arithmetic: 3x frames minus one trailing frame per shift
    segs = sessions[(1, 0.0)]
    base = len(segs["raw_flat"])
    total = len(segs["aug_flat"])
    arithmetic_ok = total == 3 * base - 2 and total >= 3 * base - 2 * len(cfg.alphas)

    # empty alpha set reproduces plain ingestion bit for bit
    rng = np.random.default_rng(4)
    audio = rng.normal(size=(4, 6 * cfg.period_len)).astype(np.float32)
    poses = rng.normal(size=(6, 21, 3))
    plain = ds.ingest(audio, poses, 25.0, 1, bank, cfg.period_len, cfg.n_fft, cfg.hop)
    noaug = ds.augment_phase(audio, poses, (), 25.0, 1, bank, cfg.period_len, cfg.n_fft, cfg.hop)
    identity_ok = len(plain) == len(noaug) and all(
        np.array_equal(a.feature.as_matrix(), b.feature.as_matrix()) and np.array_equal(a.pose, b.pose)
        for a, b in zip(plain, noaug)
    )

    # no augmented frame reaches any test split
    spec = WindowSpec(cfg.n, cfg.k)
    _train, test = build_samples(cfg, sessions)
    test_frames = sum(len(s.targets) for s in test)
    raw_heldout = {}
    for (subject, dist), segs in sessions.items():
        if subject == HELD_OUT:
            raw_heldout[dist] = np.stack([r.feature.as_matrix() for r in segs["raw_flat"]])
    leak_free = True
    for sample in test:
        dist = float(mt.DISTANCE_ANCHORS_CM[int(np.argmax(sample.label.probs))])
        stack = raw_heldout[dist]
        # every window row must appear verbatim in the raw (unaugmented) stream
        first = sample.window[0]
        matches = np.where((stack == first[None]).all(axis=(1, 2)))[0]
        if len(matches) == 0:
            leak_free = False
            break
    expected_test = sum(
        (len(segs["raw_flat"]) - cfg.k) // cfg.n * cfg.n
        for (subject, _d), segs in sessions.items() if subject == HELD_OUT
    )
    count_ok = test_frames == expected_test
    ok = arithmetic_ok and identity_ok and leak_free and count_ok
    report("criterion 8 (augmentation audit)", ok,
           f"3x-2 arithmetic {arithmetic_ok} ({base}->{total}), empty-alpha identity {identity_ok}, "
           f"test split augmentation-free {leak_free}, test frame count {test_frames}=={expected_test}")


def test_criterion_09_determinism_and_formats(corpus, tmp_path):
    cfg, sessions = corpus
    train, _ = build_samples(cfg, sessions)
    subset = train[:240]

    def ten_step_checkpoint(path):
        est, disc, _rows = train_model(cfg, subset, steps_limit=10)
        tensors = {name: p.data for name, p in est.params.items()}
        tensors.update({name: p.data for name, p in disc.params.items()})
        ds.serialize_checkpoint(tensors, path)

    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    ten_step_checkpoint(a)
    ten_step_checkpoint(b)
    identical = a.read_bytes() == b.read_bytes()

    # dataset + checkpoint round trips, corrupted magic rejection
    records = sessions[(1, 0.0)]["raw_flat"][:50]
    dsp = tmp_path / "x.ds"
    ds.serialize_dataset(records, dsp, cfg.sample_rate, cfg.period_len)
    back, _, _ = ds.deserialize_dataset(dsp)
    roundtrip = all(
        np.array_equal(r.feature.as_matrix(), s.feature.as_matrix()) and np.array_equal(r.pose, s.pose)
        for r, s in zip(records, back)
    )
    ckpt_back = ds.deserialize_checkpoint(a)
    ckpt_roundtrip = all(np.array_equal(v, ckpt_back[k]) for k, v in ckpt_back.items())

    rejected = 0
    for path in (dsp, a):
        blob = bytearray(path.read_bytes())
        blob[0] ^= 0xFF
        path.write_bytes(blob)
        try:
            (ds.deserialize_dataset if path == dsp else ds.deserialize_checkpoint)(path)
        except DataFormatError:
            rejected += 1
    ok = identical and roundtrip and ckpt_roundtrip and rejected == 2
    report("criterion 9 (determinism & formats)", ok,
           f"10-step checkpoints byte-identical {identical}, round trips {roundtrip}/{ckpt_roundtrip}, "
           f"corrupted magic rejected {rejected}/2")


def test_criterion_10_metric_properties():
    rng = np.random.default_rng(5)
    dominance = all(
        mt.rmse(p, g) >= mt.mae(p, g)
        for p, g in (
            (rng.normal(size=(f, 21, 3)), rng.normal(size=(f, 21, 3)))
            for f in rng.integers(1, 12, size=100)
        )
    )
    gt = np.zeros((6, 21, 3))
    gt[:, mt.HEAD, 2] = 0.3
    pred = gt + rng.normal(scale=0.08, size=gt.shape)
    values = [mt.pckh(pred, gt, r)[0] for r in (0.1, 0.25, 0.5, 1.0, 2.0)]
    monotone = all(a <= b + 1e-12 for a, b in zip(values, values[1:]))
    tie_gt = np.zeros((1, 21, 3))
    tie_gt[0, mt.HEAD] = (0.0, 0.0, 0.2)
    tie_pred = tie_gt.copy()
    tie_pred[0, 7, 0] += 0.1  # exactly at the 0.5 * h threshold
    tie = mt.pckh(tie_pred, tie_gt)[0] == 1.0
    ok = dominance and monotone and tie
    report("criterion 10 (metric properties)", ok,
           f"rmse>=mae on 100 pairs {dominance}, pckh monotone {monotone} {values}, boundary tie {tie}")
