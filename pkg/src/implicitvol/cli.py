"""Command-line entry point: ``ivol simulate | reconstruct | evaluate | render | replay``.

Every command writes an ``ExperimentManifest`` (JSON) next to its outputs.
``ivol replay --manifest m.json`` re-runs the recorded command; since all
randomness is seeded, the outputs come out byte-for-byte the same.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import baseline, data, evaluate, metrics, siren, train
from ._io import atomic_write_text

log = logging.getLogger("implicitvol")

MANIFEST_SUFFIX = ".manifest.json"


@dataclass
class ExperimentManifest:
    command: str
    argv: list[str]
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    train_config: dict | None = None
    noise: dict | None = None
    planes: list[str] | None = None
    slices_per_plane: int | None = None
    seeds: dict[str, int] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ExperimentManifest":
        return cls(**json.loads(text))

    def write(self, path) -> None:
        atomic_write_text(path, self.to_json())


class CommandError(Exception):
    """Reported on stderr with exit status 1."""


# ---------------------------------------------------------------------------
# argument types


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _nonneg_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _nonneg_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not np.isfinite(v) or v < 0:
        raise argparse.ArgumentTypeError(f"must be a finite number >= 0, got {text}")
    return v


def _pose(text: str) -> np.ndarray:
    parts = text.split(",")
    if len(parts) != 6:
        raise argparse.ArgumentTypeError(
            f"pose must be six comma-separated numbers θx,θy,θz,tx,ty,tz, got {text!r}"
        )
    try:
        vec = np.array([float(p) for p in parts])
    except ValueError:
        raise argparse.ArgumentTypeError(f"pose has a non-numeric entry: {text!r}") from None
    if not np.all(np.isfinite(vec)):
        raise argparse.ArgumentTypeError(f"pose entries must be finite: {text!r}")
    return vec


def _planes(text: str) -> list[str]:
    names = [p.strip() for p in text.split(",") if p.strip()]
    bad = [p for p in names if p not in evaluate.PLANES]
    if not names or bad:
        raise argparse.ArgumentTypeError(f"planes must be drawn from {','.join(evaluate.PLANES)}, got {text!r}")
    return names


# ---------------------------------------------------------------------------
# helpers


def _require(path, what: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise CommandError(f"{what} not found: {path}")
    return path


def _is_checkpoint(path: Path) -> bool:
    with open(path, "rb") as fh:
        return fh.read(len(siren.MAGIC)) == siren.MAGIC


def _load_reconstruction(path: Path, side: int):
    """(volume, network or None, poses or None) for a checkpoint or volume file."""
    if _is_checkpoint(path):
        try:
            net, poses = siren.load_checkpoint(path)
        except siren.CheckpointError as exc:
            raise CommandError(str(exc)) from None
        return train.export_volume(net, side), net, poses
    try:
        return data.read_volume(path), None, None
    except (data.VolumeFormatError, OSError) as exc:
        raise CommandError(str(exc)) from None


def _joint_flag(checkpoint: Path) -> bool | None:
    side = checkpoint.with_name(checkpoint.name + MANIFEST_SUFFIX)
    try:
        cfg = json.loads(side.read_text(encoding="utf-8")).get("train_config") or {}
    except (OSError, ValueError):
        return None
    return cfg.get("joint_optimize")


def _read_acq(path) -> data.AcquisitionSet:
    path = _require(path, "acquisition directory")
    if not (path / "poses.csv").exists():
        raise CommandError(f"{path} has no poses.csv")
    return data.read_acquisition(path)


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args, argv) -> str:
    out = Path(args.out)
    if args.volume is not None:
        try:
            volume = data.read_volume(_require(args.volume, "volume"))
        except data.VolumeFormatError as exc:
            raise CommandError(str(exc)) from None
    else:
        volume = data.generate_phantom(args.side, args.phantom_seed).volume
    acq = data.acquire(volume, args.n, args.sigma_angle, args.sigma_trans, seed=args.seed,
                       size=args.size, tilt_jitter=args.tilt_jitter,
                       spacing_jitter=args.spacing_jitter, axis=args.axis, mode=args.noise_mode)
    data.write_acquisition(out, acq)
    truth = out / "volume.hdr"
    data.write_volume(truth, volume)
    ExperimentManifest(
        "simulate", argv,
        inputs={"volume": str(args.volume)} if args.volume else {},
        outputs={"acquisition": str(out), "volume": str(truth)},
        noise=acq.noise,
        seeds={"sweep": args.seed, "noise": acq.noise["seed"]}
        | ({"phantom": args.phantom_seed} if args.volume is None else {}),
    ).write(out / "simulate.manifest.json")
    angle, dist = metrics.pose_errors(acq.noisy_poses, acq.true_poses, volume.side)
    return (f"simulated {len(acq)} slices of {acq.images.shape[1]}x{acq.images.shape[2]} from a "
            f"{volume.side}^3 volume; initial pose error {angle.mean():.4f} rad, {dist.mean():.3f} px")


def cmd_reconstruct(args, argv) -> str:
    acq = _read_acq(args.acq)
    out = Path(args.out)
    side = args.side or int(acq.noise.get("volume_side", 64))
    manifest = ExperimentManifest("reconstruct", argv, inputs={"acquisition": str(args.acq)})
    if args.method == "baseline":
        cloud = baseline.scatter(acq.images, acq.noisy_poses)
        vol = baseline.idw_reconstruct(cloud, side, k=args.k)
        data.write_volume(out, vol)
        manifest.outputs = {"volume": str(out)}
        summary = f"baseline IDW volume {side}^3 from {len(cloud)} pixels (k={args.k})"
    else:
        cfg = train.TrainConfig(
            epochs=args.epochs, network_lr=args.network_lr, pose_lr=args.pose_lr,
            lr_decay=args.lr_decay, decay_every=args.decay_every,
            slices_per_step=args.slices_per_step, joint_optimize=args.joint,
            n_freqs=args.n_freqs, seed=args.seed, hidden=args.hidden, n_hidden=args.n_hidden,
            omega0=args.omega0, pose_warmup=args.pose_warmup,
        )
        try:
            state = train.train(acq.images, acq.noisy_poses, cfg)
        except train.TrainingDiverged as exc:
            raise CommandError(str(exc)) from None
        siren.save_checkpoint(out, state.net, state.poses)
        loss_path = out.with_name(out.name + ".loss.csv")
        train.write_loss_log(loss_path, state)
        manifest.outputs = {"checkpoint": str(out), "loss_log": str(loss_path)}
        manifest.train_config = cfg.to_dict()
        manifest.seeds = {"train": args.seed}
        angle, dist = metrics.pose_errors(state.poses, acq.true_poses, side)
        final = state.loss_history[-1] if state.loss_history else float("nan")
        summary = (f"implicit ({'joint' if args.joint else 'no-joint'}) {cfg.epochs} epochs; "
                   f"final loss {final:.4f}; pose error {angle.mean():.4f} rad, {dist.mean():.3f} px")
    manifest.write(out.with_name(out.name + MANIFEST_SUFFIX))
    return summary


def cmd_evaluate(args, argv) -> str:
    try:
        truth = data.read_volume(_require(args.truth, "ground-truth volume"))
    except data.VolumeFormatError as exc:
        raise CommandError(str(exc)) from None
    recon_path = _require(args.recon, "reconstruction")
    recon, net, poses = _load_reconstruction(recon_path, truth.side)
    if recon.side != truth.side:
        raise CommandError(f"reconstruction side {recon.side} differs from truth side {truth.side}")
    acq = _read_acq(args.acq) if args.acq else None

    ev = evaluate.compare_volumes(recon, truth, args.planes, count=args.count, align=not args.no_align)
    if net is not None:
        approach = args.approach or "implicit"
        joint = _joint_flag(recon_path)
        if joint is None:
            # no training manifest: infer from whether the poses moved
            joint = acq is not None and poses is not None and not np.array_equal(poses, acq.noisy_poses)
        est = poses
    else:
        approach = args.approach or "baseline"
        joint = None
        est = acq.noisy_poses if acq is not None else None
    n = len(acq) if acq is not None else (len(poses) if poses is not None else 0)
    rows = evaluate.table_rows(ev, approach, n, joint, est,
                               acq.true_poses if acq is not None else None, truth.side)
    out = Path(args.out)
    metrics.write_metrics_csv(out, rows)
    ExperimentManifest(
        "evaluate", argv,
        inputs={"recon": str(args.recon), "truth": str(args.truth)}
        | ({"acquisition": str(args.acq)} if args.acq else {}),
        outputs={"metrics": str(out)},
        planes=list(args.planes), slices_per_plane=args.count,
    ).write(out.with_name(out.name + MANIFEST_SUFFIX))
    cells = ", ".join(f"{p} ssim {ev.mean_ssim(p):.4f}" for p in args.planes)
    return f"evaluated {approach}: {cells}"


def cmd_render(args, argv) -> str:
    recon_path = _require(args.recon, "reconstruction")
    h, w = args.size
    if _is_checkpoint(recon_path):
        try:
            net, _ = siren.load_checkpoint(recon_path)
        except siren.CheckpointError as exc:
            raise CommandError(str(exc)) from None
        img = train.render_slice(net, args.pose, h, w)
    else:
        try:
            vol = data.read_volume(recon_path)
        except data.VolumeFormatError as exc:
            raise CommandError(str(exc)) from None
        img = data.slice_image(vol, args.pose, h, w)
    out = Path(args.out)
    data.write_pgm(out, img)
    ExperimentManifest("render", argv, inputs={"recon": str(args.recon)},
                       outputs={"image": str(out)}).write(out.with_name(out.name + MANIFEST_SUFFIX))
    return f"rendered {h}x{w} slice, mean intensity {img.mean():.4f}"


def cmd_replay(args, argv) -> str:
    path = _require(args.manifest, "manifest")
    try:
        manifest = ExperimentManifest.from_json(path.read_text(encoding="utf-8"))
    except (ValueError, TypeError) as exc:
        raise CommandError(f"{path}: not a manifest ({exc})") from None
    if manifest.command == "replay":
        raise CommandError("refusing to replay a replay manifest")
    code = main(manifest.argv)
    if code != 0:
        raise CommandError(f"replayed command exited with status {code}")
    return f"replayed {manifest.command}"


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ivol", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="phantom or volume -> posed slice acquisition")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--volume", help="ground-truth volume header file")
    src.add_argument("--phantom-seed", type=_nonneg_int, help="generate a phantom with this seed")
    s.add_argument("--side", type=_positive_int, default=64, help="phantom side in voxels (default 64)")
    s.add_argument("--n", type=_positive_int, required=True, help="number of slices")
    s.add_argument("--sigma-angle", type=_nonneg_float, default=0.24,
                   help="target mean angle error of the noisy poses, radians (default 0.24)")
    s.add_argument("--sigma-trans", type=_nonneg_float, default=8.0,
                   help="target mean distance error of the noisy poses, pixels (default 8)")
    s.add_argument("--size", type=_positive_int, default=None, help="slice side in pixels (default: volume side)")
    s.add_argument("--seed", type=_nonneg_int, default=0, help="sweep seed; the noise seed derives from it")
    s.add_argument("--tilt-jitter", type=_nonneg_float, default=0.05)
    s.add_argument("--spacing-jitter", type=_nonneg_float, default=0.5)
    s.add_argument("--axis", choices=("x", "y", "z"), default="x", help="primary sweep axis")
    s.add_argument("--noise-mode", choices=("independent", "random_walk"), default="independent")
    s.add_argument("--out", required=True, help="output acquisition directory")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("reconstruct", help="fit an implicit volume or run the IDW baseline")
    r.add_argument("--acq", required=True, help="acquisition directory")
    r.add_argument("--method", choices=("implicit", "baseline"), required=True)
    j = r.add_mutually_exclusive_group()
    j.add_argument("--joint", dest="joint", action="store_true", default=True,
                   help="refine slice poses jointly with the network (default)")
    j.add_argument("--no-joint", dest="joint", action="store_false")
    r.add_argument("--epochs", type=_nonneg_int, default=10000)
    r.add_argument("--out", required=True, help="checkpoint (implicit) or volume header (baseline)")
    r.add_argument("--side", type=_positive_int, default=None,
                   help="baseline volume side (default: the simulated volume side)")
    r.add_argument("--k", type=_positive_int, default=20, help="IDW neighbours")
    r.add_argument("--network-lr", type=float, default=1e-3)
    r.add_argument("--pose-lr", type=float, default=1e-3)
    r.add_argument("--lr-decay", type=float, default=0.97)
    r.add_argument("--decay-every", type=_positive_int, default=100)
    r.add_argument("--slices-per-step", type=_positive_int, default=4)
    r.add_argument("--n-freqs", type=_nonneg_int, default=10, help="encoding depth L; 0 feeds raw xyz")
    r.add_argument("--hidden", type=_positive_int, default=128)
    r.add_argument("--n-hidden", type=_positive_int, default=4)
    r.add_argument("--omega0", type=float, default=siren.OMEGA0)
    r.add_argument("--pose-warmup", type=_nonneg_int, default=0)
    r.add_argument("--seed", type=_nonneg_int, default=0)
    r.set_defaults(func=cmd_reconstruct)

    e = sub.add_parser("evaluate", help="novel-plane NCC/SSIM and pose errors as CSV")
    e.add_argument("--recon", required=True, help="checkpoint or volume header")
    e.add_argument("--truth", required=True, help="ground-truth volume header")
    e.add_argument("--acq", default=None, help="acquisition directory (for pose errors)")
    e.add_argument("--planes", type=_planes, default=list(evaluate.PLANES))
    e.add_argument("--count", type=_positive_int, default=20, help="novel slices per plane")
    e.add_argument("--no-align", action="store_true", help="skip rigid alignment to the truth")
    e.add_argument("--approach", default=None, help="label for the approach column")
    e.add_argument("--out", required=True, help="metrics CSV")
    e.set_defaults(func=cmd_evaluate)

    d = sub.add_parser("render", help="one cross-section as a binary graymap")
    d.add_argument("--recon", required=True, help="checkpoint or volume header")
    d.add_argument("--pose", type=_pose, required=True, help="θx,θy,θz,tx,ty,tz (radians, normalized units)")
    d.add_argument("--size", type=_positive_int, nargs=2, metavar=("H", "W"), required=True)
    d.add_argument("--out", required=True, help="output .pgm")
    d.set_defaults(func=cmd_render)

    m = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    m.add_argument("--manifest", required=True)
    m.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse usage errors
        return int(exc.code or 0)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    t0 = time.perf_counter()
    try:
        summary = args.func(args, argv)
    except CommandError as exc:
        print(f"ivol {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"ivol {args.command}: error: {exc}", file=sys.stderr)
        return 1
    print(f"wall-clock {time.perf_counter() - t0:.2f} s")
    print(summary)
    return 0


if __name__ == "__main__":
    sys.exit(main())
