"""Operator surface: synth, ingest, augment, train, eval, plot.

Every tunable lives in RunConfig; flags mirror its field names and override
an optional `key = value` config file. Exit codes: 0 success, 2 usage error,
3 data-format error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import metrics, plots
from .autodiff import adam_init
from .config import RunConfig, load_config
from .features import FeatureFrame, mel_bank, pca_project, period_features
from .model import (
    LossWeights,
    NumericsError,
    PoseEstimator,
    PositionDiscriminator,
    WindowSpec,
    predict,
    train_step,
)
from .motion import N_JOINTS, pose_sequencer, subject_scale
from .sim import (
    Scene,
    read_pose_csv,
    read_session_wav,
    render_bformat,
    write_pose_csv,
    write_session_wav,
)
from .signal import generate_tsp

EMPTY_SUBJECT = 0


def scene_from_config(cfg: RunConfig) -> Scene:
    return Scene(
        room_dims=tuple(cfg.room),
        speaker_pos=tuple(cfg.speaker),
        mic_pos=tuple(cfg.mic),
        wall_reflectance=cfg.wall_reflectance,
        scatter_gain=cfg.scatter_gain,
        occlusion_radius=cfg.occlusion_radius,
        occlusion_strength=cfg.occlusion_strength,
        noise_snr_db=cfg.noise_snr_db,
    )


def bank_from_config(cfg: RunConfig):
    return mel_bank(cfg.bands, cfg.n_fft, cfg.sample_rate, cfg.mel_lo, cfg.mel_hi)


def make_estimator(cfg: RunConfig) -> PoseEstimator:
    scene = scene_from_config(cfg)
    mid = scene.line_midpoint_xy
    return PoseEstimator(
        WindowSpec(cfg.n, cfg.k), bands=cfg.bands, seed=cfg.seed, origin=(mid[0], mid[1], 0.95)
    )


def session_name(subject: int, distance_cm: float) -> str:
    if subject == EMPTY_SUBJECT:
        return "session_empty"
    return f"session_s{subject:02d}_d{int(round(distance_cm)):03d}"


def render_session(cfg: RunConfig, subject: int, distance_cm: float, out_dir: Path) -> int:
    """Render one session's WAV + CSV; returns its frame count."""
    tsp = generate_tsp(cfg.sample_rate, cfg.period_len, cfg.f_lo, cfg.f_hi)
    scene = scene_from_config(cfg)
    n_frames = int(round(cfg.duration * cfg.fps))
    seed_base = cfg.seed * 100_000 + subject * 1_000 + int(round(distance_cm))
    if subject == EMPTY_SUBJECT:
        poses = None
        audio = render_bformat(scene, tsp, None, n_frames=n_frames, noise_seed=seed_base + 7)
        csv_poses = np.zeros((n_frames, N_JOINTS, 3))
    else:
        poses = pose_sequencer(
            list(cfg.script),
            cfg.fps,
            distance_cm,
            cfg.duration,
            seed=seed_base,
            scale=subject_scale(subject),
            center_xy=scene.line_midpoint_xy,
            room_dims=scene.room_dims,
        )
        audio = render_bformat(scene, tsp, poses, noise_seed=seed_base + 7)
        csv_poses = poses
    stem = out_dir / session_name(subject, distance_cm)
    write_session_wav(stem.with_suffix(".wav"), audio, cfg.sample_rate)
    write_pose_csv(stem.with_suffix(".csv"), csv_poses, subject, distance_cm)
    return len(csv_poses)


def find_sessions(data_dir: Path) -> list[tuple[Path, Path]]:
    pairs = []
    for wav in sorted(data_dir.glob("session_*.wav")):
        csv = wav.with_suffix(".csv")
        if not csv.exists():
            raise ds.DataFormatError(f"missing pose CSV for {wav}")
        pairs.append((wav, csv))
    if not pairs:
        raise ds.DataFormatError(f"no session_*.wav files under {data_dir}")
    return pairs


def load_session_segments(
    cfg: RunConfig, wav_path: Path, csv_path: Path, augment: bool
) -> tuple[int, float, list[list[ds.FrameRecord]]]:
    """Ingest one session; with augmentation, each phase shift is its own segment."""
    sr, audio = read_session_wav(wav_path)
    if sr != cfg.sample_rate:
        raise ds.DataFormatError(f"{wav_path}: sample rate {sr} != configured {cfg.sample_rate}")
    poses, subject, distance = read_pose_csv(csv_path)
    bank = bank_from_config(cfg)
    alphas = tuple(cfg.alphas) if augment else ()
    segments = ds.augment_phase_segments(
        audio, poses, alphas, distance, subject, bank, cfg.period_len, cfg.n_fft, cfg.hop
    )
    return subject, distance, segments


def windows_from_segments(segments: list[list[ds.FrameRecord]], spec: WindowSpec) -> list[ds.TrainSample]:
    samples = []
    for seg in segments:
        if len(seg) >= spec.length:
            samples.extend(ds.window(seg, spec))
    return samples


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_synth(cfg: RunConfig, out_dir: Path) -> int:
    if cfg.duration <= 0:
        raise ValueError("duration must be positive")
    out_dir.mkdir(parents=True, exist_ok=True)
    bank = bank_from_config(cfg)
    records = []
    manifest = []
    for subject in range(1, cfg.subjects + 1):
        for distance in cfg.distances:
            frames = render_session(cfg, subject, distance, out_dir)
            stem = out_dir / session_name(subject, distance)
            sr, audio = read_session_wav(stem.with_suffix(".wav"))
            poses, subj, dist = read_pose_csv(stem.with_suffix(".csv"))
            records.extend(ds.ingest(audio, poses, dist, subj, bank, cfg.period_len, cfg.n_fft, cfg.hop))
            manifest.append(f"{stem.name}: subject {subject}, {distance:.0f} cm, {frames} frames")
    render_session(cfg, EMPTY_SUBJECT, 0.0, out_dir)
    manifest.append("session_empty: empty room (PCA reference)")
    ds.serialize_dataset(records, out_dir / "corpus.ds", cfg.sample_rate, cfg.period_len)
    manifest.append(f"corpus.ds: {len(records)} frames")
    print("\n".join(manifest))
    return 0


def cmd_ingest(cfg: RunConfig, wav: Path, csv: Path, out: Path) -> int:
    _, _, segments = load_session_segments(cfg, wav, csv, augment=False)
    ds.serialize_dataset(segments[0], out, cfg.sample_rate, cfg.period_len)
    print(f"{out}: {len(segments[0])} frames")
    return 0


def cmd_augment(cfg: RunConfig, wav: Path, csv: Path, out: Path) -> int:
    _, _, segments = load_session_segments(cfg, wav, csv, augment=True)
    flat = [r for seg in segments for r in seg]
    ds.serialize_dataset(flat, out, cfg.sample_rate, cfg.period_len)
    print(f"{out}: {len(flat)} frames ({len(segments)} segments)")
    return 0


def save_checkpoint(path: Path, estimator: PoseEstimator, discriminator: PositionDiscriminator, cfg: RunConfig):
    tensors = {name: p.data for name, p in estimator.params.items()}
    tensors.update({name: p.data for name, p in discriminator.params.items()})
    tensors["meta.spec"] = np.array(
        [cfg.n, cfg.k, cfg.bands, *estimator.origin], dtype=np.float32
    )
    ds.serialize_checkpoint(tensors, path)


def load_checkpoint_model(path: Path) -> tuple[PoseEstimator, PositionDiscriminator]:
    tensors = ds.deserialize_checkpoint(path)
    if "meta.spec" not in tensors:
        raise ds.DataFormatError("checkpoint missing meta.spec")
    n, k, bands, ox, oy, oz = tensors["meta.spec"]
    est = PoseEstimator(WindowSpec(int(n), int(k)), bands=int(bands), origin=(ox, oy, oz))
    disc = PositionDiscriminator()
    for name, p in est.params.items():
        p.data = tensors[name].astype(np.float32).copy()
    for name, p in disc.params.items():
        p.data = tensors[name].astype(np.float32).copy()
    return est, disc


def train_model(
    cfg: RunConfig,
    train_samples: list[ds.TrainSample],
    out_dir: Path | None = None,
    steps_limit: int | None = None,
) -> tuple[PoseEstimator, PositionDiscriminator, list[str]]:
    """Shared training loop; returns model, discriminator, loss CSV lines."""
    estimator = make_estimator(cfg)
    discriminator = PositionDiscriminator(seed=cfg.seed + 1)
    est_state = adam_init(estimator.params, cfg.lr)
    disc_state = adam_init(discriminator.params, cfg.disc_lr)
    weights = LossWeights(cfg.w_alpha, cfg.w_beta, cfg.w_gamma)
    rng = np.random.default_rng(cfg.seed + 2)
    rows = ["step,l_pose,l_smooth,l_std,l_disc_ce,total"]
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train_samples))
        for lo in range(0, len(order), cfg.batch_size):
            batch = [train_samples[i] for i in order[lo : lo + cfg.batch_size]]
            windows, targets, labels = ds.collate(batch)
            report = train_step(
                windows, targets, labels, estimator, discriminator,
                est_state, disc_state, weights, cfg.clip_norm, step,
            )
            rows.append(report.csv_line())
            step += 1
            if steps_limit is not None and step >= steps_limit:
                break
        if out_dir is not None:
            save_checkpoint(out_dir / f"checkpoint_epoch{epoch:02d}.ckpt", estimator, discriminator, cfg)
        if steps_limit is not None and step >= steps_limit:
            break
    return estimator, discriminator, rows


def evaluate_model(
    estimator: PoseEstimator, test_samples: list[ds.TrainSample]
) -> metrics.EvalReport:
    if not test_samples:
        raise ValueError("no evaluation windows")
    windows = np.stack([s.window for s in test_samples])
    gt = np.concatenate([s.targets for s in test_samples]).reshape(-1, N_JOINTS, 3)
    pred = predict(estimator, windows).reshape(-1, N_JOINTS, 3)
    anchors = np.asarray(metrics.DISTANCE_ANCHORS_CM)
    dist = np.concatenate(
        [np.full(len(s.targets), anchors[np.argmax(s.label.probs)]) for s in test_samples]
    )
    return metrics.per_position_report(pred, gt, dist)


def cmd_train(cfg: RunConfig, data_dir: Path, held_out: int, out_dir: Path) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    spec = WindowSpec(cfg.n, cfg.k)
    train_samples: list[ds.TrainSample] = []
    test_samples: list[ds.TrainSample] = []
    seen_subjects = set()
    for wav, csv in find_sessions(data_dir):
        if wav.stem == "session_empty":
            continue
        _, subject, _ = read_pose_csv(csv)
        seen_subjects.add(subject)
        _, _, segments = load_session_segments(cfg, wav, csv, augment=subject != held_out)
        if subject == held_out:
            test_samples.extend(windows_from_segments(segments, spec))
        else:
            train_samples.extend(windows_from_segments(segments, spec))
    if held_out not in seen_subjects:
        raise ValueError(f"held-out subject {held_out} not present in {data_dir}")
    if not train_samples:
        raise ValueError("no training samples")
    print(f"train windows: {len(train_samples)}, held-out windows: {len(test_samples)}")

    estimator, discriminator, rows = train_model(cfg, train_samples, out_dir)
    save_checkpoint(out_dir / "checkpoint_final.ckpt", estimator, discriminator, cfg)
    (out_dir / "loss.csv").write_text("\n".join(rows) + "\n")

    report = evaluate_model(estimator, test_samples)
    (out_dir / "eval_heldout.txt").write_text("\n".join(report.lines()) + "\n")
    (out_dir / "eval_heldout.csv").write_text("\n".join(report.csv_rows()) + "\n")
    print("\n".join(report.lines()))
    return 0


def _session_runs(records: list[ds.FrameRecord]) -> list[list[ds.FrameRecord]]:
    """Split a record stream into maximal constant (subject, distance) runs."""
    runs: list[list[ds.FrameRecord]] = []
    key = None
    for r in records:
        rkey = (r.subject_id, r.distance_cm)
        if rkey != key:
            runs.append([])
            key = rkey
        runs[-1].append(r)
    return runs


def cmd_eval(cfg: RunConfig, checkpoint: Path, data: Path, held_out: int, out_dir: Path) -> int:
    if not checkpoint.exists():
        raise ValueError(f"missing checkpoint {checkpoint}")
    out_dir.mkdir(parents=True, exist_ok=True)
    estimator, _ = load_checkpoint_model(checkpoint)
    records, _, _ = ds.deserialize_dataset(data)
    held = [r for r in records if r.subject_id == held_out]
    if not held:
        raise ValueError(f"no records for subject {held_out} in {data}")
    samples = []
    for run in _session_runs(held):
        if len(run) >= estimator.window.length:
            samples.extend(ds.window(run, estimator.window))
    report = evaluate_model(estimator, samples)
    (out_dir / "eval.txt").write_text("\n".join(report.lines()) + "\n")
    (out_dir / "eval.csv").write_text("\n".join(report.csv_rows()) + "\n")
    print("\n".join(report.lines()))
    return 0


def pca_points(cfg: RunConfig, data_dir: Path, stride: int = 4) -> tuple[np.ndarray, list[str]]:
    """Feature frames from every session (subsampled), PCA-projected to 2-D."""
    bank = bank_from_config(cfg)
    frames: list[FeatureFrame] = []
    classes: list[str] = []
    for wav, csv in find_sessions(data_dir):
        sr, audio = read_session_wav(wav)
        _, subject, distance = read_pose_csv(csv)
        label = "empty" if subject == EMPTY_SUBJECT else f"{distance:.0f}cm"
        n_periods = audio.shape[1] // cfg.period_len
        for t in range(0, n_periods, stride):
            seg = audio[:, t * cfg.period_len : (t + 1) * cfg.period_len]
            frames.append(period_features(seg, bank, cfg.n_fft, cfg.hop))
            classes.append(label)
    points, _ = pca_project(frames, dims=2)
    return points, classes


def cmd_plot(cfg: RunConfig, kind: str, args, out: Path) -> int:
    if kind == "pca":
        points, classes = pca_points(cfg, Path(args.data))
        plots.plot_scatter(points, classes, out, title="acoustic features by standing distance")
    elif kind == "skeleton":
        records, _, _ = ds.deserialize_dataset(Path(args.data))
        run = _session_runs(records)[0]
        gt = np.stack([r.pose for r in run])
        if args.checkpoint:
            estimator, _ = load_checkpoint_model(Path(args.checkpoint))
            samples = ds.window(run, estimator.window)
            pred = predict(estimator, np.stack([s.window for s in samples])).reshape(-1, N_JOINTS, 3)
            gt = gt[estimator.window.k : estimator.window.k + len(pred)]
        else:
            pred = gt
        plots.plot_skeletons(gt, pred, out, max_frames=args.frames)
    elif kind == "loss":
        rows = []
        lines = Path(args.data).read_text().strip().splitlines()
        header = lines[0].split(",")
        for line in lines[1:]:
            rows.append({k: float(v) for k, v in zip(header, line.split(","))})
        plots.plot_loss_curves(rows, out)
    else:
        raise ValueError(f"unknown plot kind {kind!r}")
    print(f"wrote {out}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="key = value config file")
    parser.add_argument("--print-config", action="store_true", help="dump resolved configuration and exit")
    for f in fields(RunConfig):
        parser.add_argument(f"--{f.name.replace('_', '-')}", dest=f"cfg_{f.name}", default=None, metavar="V")


def _resolve_config(args) -> RunConfig:
    overrides = {
        name[len("cfg_") :]: value
        for name, value in vars(args).items()
        if name.startswith("cfg_") and value is not None
    }
    return load_config(args.config, overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="echopose", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render the synthetic corpus")
    p.add_argument("--out", type=Path, required=True)
    _add_config_flags(p)

    p = sub.add_parser("ingest", help="turn one session WAV+CSV into a dataset file")
    p.add_argument("--wav", type=Path, required=True)
    p.add_argument("--csv", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    _add_config_flags(p)

    p = sub.add_parser("augment", help="ingest with phase-shift augmentation")
    p.add_argument("--wav", type=Path, required=True)
    p.add_argument("--csv", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    _add_config_flags(p)

    p = sub.add_parser("train", help="LOSO training over a session directory")
    p.add_argument("--data", type=Path, required=True, help="directory with session_*.wav/.csv")
    p.add_argument("--held-out", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    _add_config_flags(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset file")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--held-out", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    _add_config_flags(p)

    p = sub.add_parser("plot", help="emit SVG diagnostics")
    p.add_argument("kind", choices=("pca", "skeleton", "loss"))
    p.add_argument("--data", required=True, help="sessions dir (pca), dataset file (skeleton) or loss CSV")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--out", type=Path, required=True)
    _add_config_flags(p)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _resolve_config(args)
        if args.print_config:
            print(cfg.to_text(), end="")
            return 0
        if args.command == "synth":
            return cmd_synth(cfg, args.out)
        if args.command == "ingest":
            return cmd_ingest(cfg, args.wav, args.csv, args.out)
        if args.command == "augment":
            return cmd_augment(cfg, args.wav, args.csv, args.out)
        if args.command == "train":
            return cmd_train(cfg, args.data, args.held_out, args.out)
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint, args.data, args.held_out, args.out)
        if args.command == "plot":
            return cmd_plot(cfg, args.kind, args, args.out)
        raise ValueError(f"unknown command {args.command}")
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ds.DataFormatError as exc:
        print(f"data format error: {exc}", file=sys.stderr)
        return 3
    except NumericsError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
